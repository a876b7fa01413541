#pragma once

#include <cmath>
#include <string>

#include "fimp/rng.hpp"
#include "fimp/state.hpp"
#include "fimp/tensor.hpp"

namespace fimp {

/// Derives the per-parameter init stream. Keying by parameter name makes
/// initialization independent of construction order.
inline RngStream init_stream(std::uint64_t seed, const std::string& param_name) {
    return RngStream::derive(seed, "init." + param_name);
}

/// Affine map y = x W + b with W stored as [in x out].
class Linear {
public:
    Linear() = default;

    /// `residual_scale` shrinks the init of projections that feed residual
    /// sums (keeps deep stacks near-identity at the start of training).
    Linear(std::string name, std::size_t in, std::size_t out, std::uint64_t seed,
           double residual_scale = 1.0)
        : name_(std::move(name)), in_(in), out_(out) {
        RngStream rng = init_stream(seed, name_ + ".weight");
        const double stddev =
            residual_scale * std::sqrt(2.0 / static_cast<double>(in + out));
        weight_ = Tensor::randn({in, out}, rng, stddev);
        weight_.set_requires_grad(true);
        bias_ = Tensor::zeros({out});
        bias_.set_requires_grad(true);
    }

    Tensor forward(GradTape& tape, const Tensor& x) const {
        return tape.add_bias(tape.matmul(x, weight_), bias_);
    }

    void collect(ModelState& state) const {
        state.add(name_ + ".weight", weight_);
        state.add(name_ + ".bias", bias_);
    }

    const Tensor& weight() const { return weight_; }
    const Tensor& bias() const { return bias_; }
    std::size_t in_dim() const { return in_; }
    std::size_t out_dim() const { return out_; }
    const std::string& name() const { return name_; }

private:
    std::string name_;
    std::size_t in_ = 0, out_ = 0;
    Tensor weight_, bias_;
};

/// Layer normalization with learned scale and shift.
class LayerNorm {
public:
    LayerNorm() = default;

    LayerNorm(std::string name, std::size_t dim) : name_(std::move(name)) {
        gamma_ = Tensor::full({dim}, 1.0);
        gamma_.set_requires_grad(true);
        beta_ = Tensor::zeros({dim});
        beta_.set_requires_grad(true);
    }

    Tensor forward(GradTape& tape, const Tensor& x) const {
        return tape.layer_norm(x, gamma_, beta_);
    }

    void collect(ModelState& state) const {
        state.add(name_ + ".gamma", gamma_);
        state.add(name_ + ".beta", beta_);
    }

private:
    std::string name_;
    Tensor gamma_, beta_;
};

} // namespace fimp
