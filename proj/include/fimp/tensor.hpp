#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fimp/errors.hpp"
#include "fimp/rng.hpp"

namespace fimp {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad; // empty until a gradient reaches this node
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
    }
};

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

} // namespace detail

/// Dense row-major float64 tensor. A Tensor is a cheap handle onto a shared
/// node; ops create fresh nodes, so values are never aliased by surprise.
/// Gradients live on the node and are filled in by GradTape::backward.
class Tensor {
public:
    Tensor() : node_(std::make_shared<detail::TensorNode>()) {}

    Tensor(Shape shape, std::vector<double> data) : Tensor() {
        if (shape_numel(shape) != data.size())
            throw ShapeError("tensor: shape " + shape_str(shape) + " does not match buffer of " +
                             std::to_string(data.size()) + " values");
        for (std::size_t d : shape)
            if (d == 0) throw ShapeError("tensor: zero dimension in shape " + shape_str(shape));
        node_->shape = std::move(shape);
        node_->data = std::move(data);
    }

    static Tensor zeros(Shape shape) {
        std::size_t n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0));
    }

    static Tensor full(Shape shape, double value) {
        std::size_t n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, value));
    }

    static Tensor scalar(double value) { return Tensor({1}, {value}); }

    static Tensor randn(Shape shape, RngStream& rng, double stddev = 1.0) {
        std::size_t n = shape_numel(shape);
        std::vector<double> buf(n);
        for (double& x : buf) x = stddev * rng.next_normal();
        return Tensor(std::move(shape), std::move(buf));
    }

    static Tensor uniform(Shape shape, RngStream& rng, double lo = 0.0, double hi = 1.0) {
        std::size_t n = shape_numel(shape);
        std::vector<double> buf(n);
        for (double& x : buf) x = lo + (hi - lo) * rng.next_double();
        return Tensor(std::move(shape), std::move(buf));
    }

    const Shape& shape() const { return node_->shape; }
    std::size_t ndim() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t numel() const { return node_->data.size(); }

    std::vector<double>& data() { return node_->data; }
    const std::vector<double>& data() const { return node_->data; }
    double& at(std::size_t i) { return node_->data[i]; }
    double at(std::size_t i) const { return node_->data[i]; }

    double item() const {
        if (numel() != 1)
            throw ShapeError("item(): tensor " + shape_str(shape()) + " is not a scalar");
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        node_->requires_grad = v;
        return *this;
    }

    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<double>& grad() const {
        if (node_->grad.empty())
            throw InconsistentStateError("grad(): no gradient recorded for this tensor");
        return node_->grad;
    }
    void zero_grad() { node_->grad.clear(); }

    /// Value copy severed from the autodiff graph.
    Tensor detach() const {
        Tensor t(node_->shape, node_->data);
        return t;
    }

    /// Deep copy preserving requires_grad (gradients are not copied).
    Tensor clone() const {
        Tensor t(node_->shape, node_->data);
        t.node_->requires_grad = node_->requires_grad;
        return t;
    }

    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    bool all_finite() const {
        for (double v : node_->data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::shared_ptr<detail::TensorNode> node() const { return node_; }

private:
    std::shared_ptr<detail::TensorNode> node_;
};

/// Records the forward pass and replays it in reverse. Entries are appended
/// in execution order, which is a topological order of the DAG, so a single
/// reverse sweep visits every node exactly once. One tape per training step;
/// tapes are never shared across threads.
class GradTape {
public:
    GradTape() = default;

    /// Tape that performs no recording; outputs are plain constants.
    static GradTape inference() {
        GradTape t;
        t.recording_ = false;
        return t;
    }

    bool recording() const { return recording_; }
    std::size_t size() const { return entries_.size(); }
    void clear() { entries_.clear(); }

    // ---- binary ops ------------------------------------------------------

    Tensor matmul(const Tensor& a, const Tensor& b) {
        if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
            throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
        const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
        Tensor out = Tensor::zeros({m, n});
        {
            detail::ECMap A(a.data().data(), m, k), B(b.data().data(), k, n);
            detail::EMap C(out.data().data(), m, n);
            C.noalias() = A * B;
        }
        record(out, {a, b}, [a, b, out, m, k, n]() {
            detail::ECMap G(out.grad().data(), m, n);
            if (a.requires_grad()) {
                a.node()->ensure_grad();
                detail::ECMap B(b.data().data(), k, n);
                detail::EMap dA(a.node()->grad.data(), m, k);
                dA.noalias() += G * B.transpose();
            }
            if (b.requires_grad()) {
                b.node()->ensure_grad();
                detail::ECMap A(a.data().data(), m, k);
                detail::EMap dB(b.node()->grad.data(), k, n);
                dB.noalias() += A.transpose() * G;
            }
        });
        return out;
    }

    Tensor add(const Tensor& a, const Tensor& b) {
        check_same_shape("add", a, b);
        Tensor out = Tensor::zeros(a.shape());
        for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = a.at(i) + b.at(i);
        record(out, {a, b}, [a, b, out]() {
            const auto& g = out.grad();
            accumulate(a, [&](std::size_t i) { return g[i]; });
            accumulate(b, [&](std::size_t i) { return g[i]; });
        });
        return out;
    }

    Tensor mul(const Tensor& a, const Tensor& b) {
        check_same_shape("mul", a, b);
        Tensor out = Tensor::zeros(a.shape());
        for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = a.at(i) * b.at(i);
        record(out, {a, b}, [a, b, out]() {
            const auto& g = out.grad();
            accumulate(a, [&](std::size_t i) { return g[i] * b.at(i); });
            accumulate(b, [&](std::size_t i) { return g[i] * a.at(i); });
        });
        return out;
    }

    /// x[m x n] + broadcast bias[n].
    Tensor add_bias(const Tensor& x, const Tensor& bias) {
        if (x.ndim() != 2 || bias.ndim() != 1 || bias.dim(0) != x.dim(1))
            throw ShapeError("add_bias: incompatible shapes " + shape_str(x.shape()) + " and " +
                             shape_str(bias.shape()));
        const std::size_t m = x.dim(0), n = x.dim(1);
        Tensor out = Tensor::zeros(x.shape());
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) out.at(r * n + c) = x.at(r * n + c) + bias.at(c);
        record(out, {x, bias}, [x, bias, out, m, n]() {
            const auto& g = out.grad();
            accumulate(x, [&](std::size_t i) { return g[i]; });
            if (bias.requires_grad()) {
                bias.node()->ensure_grad();
                auto& db = bias.node()->grad;
                for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t c = 0; c < n; ++c) db[c] += g[r * n + c];
            }
        });
        return out;
    }

    // ---- elementwise nonlinearities ---------------------------------------

    Tensor relu(const Tensor& x) {
        Tensor out = Tensor::zeros(x.shape());
        for (std::size_t i = 0; i < x.numel(); ++i) out.at(i) = x.at(i) > 0.0 ? x.at(i) : 0.0;
        record(out, {x}, [x, out]() {
            const auto& g = out.grad();
            accumulate(x, [&](std::size_t i) { return x.at(i) > 0.0 ? g[i] : 0.0; });
        });
        return out;
    }

    /// Exact (erf-based) GELU.
    Tensor gelu(const Tensor& x) {
        Tensor out = Tensor::zeros(x.shape());
        for (std::size_t i = 0; i < x.numel(); ++i) {
            double v = x.at(i);
            out.at(i) = 0.5 * v * (1.0 + std::erf(v * std::numbers::inv_sqrt2));
        }
        record(out, {x}, [x, out]() {
            const auto& g = out.grad();
            accumulate(x, [&](std::size_t i) {
                double v = x.at(i);
                double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::inv_sqrt2));
                double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
                return g[i] * (cdf + v * pdf);
            });
        });
        return out;
    }

    // ---- row-wise ops ------------------------------------------------------

    /// Layer normalization over the last axis with learned affine parameters.
    Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                      double eps = 1e-5) {
        const std::size_t n = x.dim(x.ndim() - 1);
        if (gamma.ndim() != 1 || beta.ndim() != 1 || gamma.dim(0) != n || beta.dim(0) != n)
            throw ShapeError("layer_norm: affine shapes " + shape_str(gamma.shape()) + "/" +
                             shape_str(beta.shape()) + " do not match feature width of " +
                             shape_str(x.shape()));
        const std::size_t rows = x.numel() / n;
        Tensor out = Tensor::zeros(x.shape());
        auto xhat = std::make_shared<std::vector<double>>(x.numel());
        auto inv_sd = std::make_shared<std::vector<double>>(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* row = x.data().data() + r * n;
            double mean = 0.0;
            for (std::size_t c = 0; c < n; ++c) mean += row[c];
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (std::size_t c = 0; c < n; ++c) var += (row[c] - mean) * (row[c] - mean);
            var /= static_cast<double>(n);
            double is = 1.0 / std::sqrt(var + eps);
            (*inv_sd)[r] = is;
            for (std::size_t c = 0; c < n; ++c) {
                double xh = (row[c] - mean) * is;
                (*xhat)[r * n + c] = xh;
                out.at(r * n + c) = gamma.at(c) * xh + beta.at(c);
            }
        }
        record(out, {x, gamma, beta}, [x, gamma, beta, out, xhat, inv_sd, rows, n]() {
            const auto& g = out.grad();
            if (gamma.requires_grad()) {
                gamma.node()->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < n; ++c)
                        gamma.node()->grad[c] += g[r * n + c] * (*xhat)[r * n + c];
            }
            if (beta.requires_grad()) {
                beta.node()->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < n; ++c) beta.node()->grad[c] += g[r * n + c];
            }
            if (x.requires_grad()) {
                x.node()->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r) {
                    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                    for (std::size_t c = 0; c < n; ++c) {
                        double dxh = g[r * n + c] * gamma.at(c);
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * (*xhat)[r * n + c];
                    }
                    const double inv_n = 1.0 / static_cast<double>(n);
                    for (std::size_t c = 0; c < n; ++c) {
                        double dxh = g[r * n + c] * gamma.at(c);
                        x.node()->grad[r * n + c] +=
                            (*inv_sd)[r] * (dxh - inv_n * sum_dxhat -
                                            (*xhat)[r * n + c] * inv_n * sum_dxhat_xhat);
                    }
                }
            }
        });
        return out;
    }

    /// Softmax over the last axis (max-shifted for stability).
    Tensor softmax(const Tensor& x) {
        const std::size_t n = x.dim(x.ndim() - 1);
        const std::size_t rows = x.numel() / n;
        Tensor out = Tensor::zeros(x.shape());
        for (std::size_t r = 0; r < rows; ++r) {
            const double* row = x.data().data() + r * n;
            double mx = row[0];
            for (std::size_t c = 1; c < n; ++c) mx = std::max(mx, row[c]);
            double z = 0.0;
            for (std::size_t c = 0; c < n; ++c) z += std::exp(row[c] - mx);
            for (std::size_t c = 0; c < n; ++c) out.at(r * n + c) = std::exp(row[c] - mx) / z;
        }
        record(out, {x}, [x, out, rows, n]() {
            const auto& g = out.grad();
            if (!x.requires_grad()) return;
            x.node()->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                double dot = 0.0;
                for (std::size_t c = 0; c < n; ++c) dot += g[r * n + c] * out.at(r * n + c);
                for (std::size_t c = 0; c < n; ++c)
                    x.node()->grad[r * n + c] += out.at(r * n + c) * (g[r * n + c] - dot);
            }
        });
        return out;
    }

    /// L2-normalizes a vector, or each row of a matrix. Rejects rows whose
    /// norm falls below 1e-12: a zero bottleneck feature is an upstream bug,
    /// not something to clamp over.
    Tensor l2_normalize(const Tensor& x) {
        static constexpr double kEpsNorm = 1e-12;
        const std::size_t n = x.dim(x.ndim() - 1);
        const std::size_t rows = x.numel() / n;
        Tensor out = Tensor::zeros(x.shape());
        auto inv_norm = std::make_shared<std::vector<double>>(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* row = x.data().data() + r * n;
            double sq = 0.0;
            for (std::size_t c = 0; c < n; ++c) sq += row[c] * row[c];
            double norm = std::sqrt(sq);
            if (!(norm > kEpsNorm))
                throw ValueError("l2_normalize: degenerate input, row " + std::to_string(r) +
                                 " has norm " + std::to_string(norm));
            (*inv_norm)[r] = 1.0 / norm;
            for (std::size_t c = 0; c < n; ++c) out.at(r * n + c) = row[c] / norm;
        }
        record(out, {x}, [x, out, inv_norm, rows, n]() {
            const auto& g = out.grad();
            if (!x.requires_grad()) return;
            x.node()->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                double dot = 0.0;
                for (std::size_t c = 0; c < n; ++c) dot += g[r * n + c] * out.at(r * n + c);
                for (std::size_t c = 0; c < n; ++c)
                    x.node()->grad[r * n + c] +=
                        (*inv_norm)[r] * (g[r * n + c] - out.at(r * n + c) * dot);
            }
        });
        return out;
    }

    // ---- shape ops ---------------------------------------------------------

    /// Concatenation along the last axis.
    Tensor concat(const Tensor& a, const Tensor& b) {
        if (a.ndim() != b.ndim() || a.ndim() < 1 || a.ndim() > 2 ||
            (a.ndim() == 2 && a.dim(0) != b.dim(0)))
            throw ShapeError("concat: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
        const std::size_t rows = a.ndim() == 2 ? a.dim(0) : 1;
        const std::size_t na = a.dim(a.ndim() - 1), nb = b.dim(b.ndim() - 1);
        Shape out_shape = a.shape();
        out_shape.back() = na + nb;
        Tensor out = Tensor::zeros(out_shape);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < na; ++c) out.at(r * (na + nb) + c) = a.at(r * na + c);
            for (std::size_t c = 0; c < nb; ++c) out.at(r * (na + nb) + na + c) = b.at(r * nb + c);
        }
        record(out, {a, b}, [a, b, out, rows, na, nb]() {
            const auto& g = out.grad();
            if (a.requires_grad()) {
                a.node()->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < na; ++c)
                        a.node()->grad[r * na + c] += g[r * (na + nb) + c];
            }
            if (b.requires_grad()) {
                b.node()->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < nb; ++c)
                        b.node()->grad[r * nb + c] += g[r * (na + nb) + na + c];
            }
        });
        return out;
    }

    /// Half-open slice [begin, end) along `axis` of a 1-D or 2-D tensor.
    Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
        if (axis >= x.ndim() || begin >= end || end > x.dim(axis))
            throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                             ") on axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
        Shape out_shape = x.shape();
        out_shape[axis] = end - begin;
        Tensor out = Tensor::zeros(out_shape);
        const std::size_t cols = x.ndim() == 2 ? x.dim(1) : 1;
        const std::size_t out_cols = out_shape.size() == 2 ? out_shape[1] : 1;
        auto src_index = [&](std::size_t i) {
            if (x.ndim() == 1) return begin + i;
            std::size_t r = i / out_cols, c = i % out_cols;
            return axis == 0 ? (begin + r) * cols + c : r * cols + begin + c;
        };
        for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = x.at(src_index(i));
        record(out, {x}, [x, out, src_index]() {
            const auto& g = out.grad();
            if (!x.requires_grad()) return;
            x.node()->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) x.node()->grad[src_index(i)] += g[i];
        });
        return out;
    }

    Tensor transpose(const Tensor& x) {
        if (x.ndim() != 2)
            throw ShapeError("transpose: expected 2-D tensor, got " + shape_str(x.shape()));
        const std::size_t m = x.dim(0), n = x.dim(1);
        Tensor out = Tensor::zeros({n, m});
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) out.at(c * m + r) = x.at(r * n + c);
        record(out, {x}, [x, out, m, n]() {
            const auto& g = out.grad();
            if (!x.requires_grad()) return;
            x.node()->ensure_grad();
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t c = 0; c < n; ++c) x.node()->grad[r * n + c] += g[c * m + r];
        });
        return out;
    }

    // ---- reductions / losses ------------------------------------------------

    Tensor sum(const Tensor& x) {
        double acc = 0.0;
        for (double v : x.data()) acc += v;
        Tensor out = Tensor::scalar(acc);
        record(out, {x}, [x, out]() {
            double g = out.grad()[0];
            accumulate(x, [&](std::size_t) { return g; });
        });
        return out;
    }

    /// Numerically stable mean binary cross-entropy on logits.
    /// Targets must be exactly 0 or 1; reduction is the mean over all B*L
    /// entries.
    Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
        check_same_shape("bce_with_logits", logits, targets);
        for (double t : targets.data())
            if (t != 0.0 && t != 1.0)
                throw ValueError("bce_with_logits: targets must be exactly 0 or 1");
        const std::size_t n = logits.numel();
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double x = logits.at(i), t = targets.at(i);
            acc += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
        }
        Tensor out = Tensor::scalar(acc / static_cast<double>(n));
        record(out, {logits, targets}, [logits, targets, out, n]() {
            double g = out.grad()[0] / static_cast<double>(n);
            accumulate(logits, [&](std::size_t i) {
                double x = logits.at(i);
                double sig = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                      : std::exp(x) / (1.0 + std::exp(x));
                return g * (sig - targets.at(i));
            });
        });
        return out;
    }

    /// Mean over samples of the squared L2 distance between rows:
    /// (1/B) * sum_i ||pred_i - target_i||^2.
    Tensor mse(const Tensor& pred, const Tensor& target) {
        check_same_shape("mse", pred, target);
        if (pred.ndim() != 2)
            throw ShapeError("mse: expected 2-D batch, got " + shape_str(pred.shape()));
        const std::size_t batch = pred.dim(0);
        double acc = 0.0;
        for (std::size_t i = 0; i < pred.numel(); ++i) {
            double d = pred.at(i) - target.at(i);
            acc += d * d;
        }
        Tensor out = Tensor::scalar(acc / static_cast<double>(batch));
        record(out, {pred, target}, [pred, target, out, batch]() {
            double g = 2.0 * out.grad()[0] / static_cast<double>(batch);
            accumulate(pred, [&](std::size_t i) { return g * (pred.at(i) - target.at(i)); });
            accumulate(target, [&](std::size_t i) { return -g * (pred.at(i) - target.at(i)); });
        });
        return out;
    }

    // ---- backward -----------------------------------------------------------

    /// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse, visiting
    /// each recorded node once. Populates gradients for exactly the
    /// requires_grad tensors reachable from the loss.
    void backward(const Tensor& loss) {
        if (loss.numel() != 1)
            throw ShapeError("backward: loss " + shape_str(loss.shape()) + " is not a scalar");
        if (!loss.requires_grad())
            throw InconsistentStateError(
                "backward: loss does not depend on any requires_grad tensor");
        loss.node()->ensure_grad();
        loss.node()->grad[0] += 1.0;
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
            if (it->out->grad.empty()) continue; // no gradient reached this node
            it->backward();
        }
    }

private:
    struct Entry {
        std::shared_ptr<detail::TensorNode> out;
        std::function<void()> backward;
    };

    static void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
        if (a.shape() != b.shape())
            throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }

    template <typename F>
    static void accumulate(const Tensor& t, F&& per_index) {
        if (!t.requires_grad()) return;
        t.node()->ensure_grad();
        auto& g = t.node()->grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += per_index(i);
    }

    void record(Tensor& out, std::initializer_list<Tensor> inputs,
                std::function<void()> backward) {
        bool any = false;
        for (const Tensor& t : inputs) any = any || t.requires_grad();
        if (!recording_ || !any) return;
        out.set_requires_grad(true);
        entries_.push_back({out.node(), std::move(backward)});
    }

    std::vector<Entry> entries_;
    bool recording_ = true;
};

} // namespace fimp
