#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "fimp/errors.hpp"
#include "fimp/state.hpp"

namespace fimp {

/// Bias-corrected Adam over a ModelState of live parameter tensors.
/// Gradients are read from the tensors themselves (populated by a prior
/// backward pass); every bound parameter must carry one, otherwise the
/// caller handed us a parameter that was never in the graph.
class Adam {
public:
    struct Options {
        double lr = 1e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    explicit Adam(ModelState params, Options opts = {})
        : params_(std::move(params)), opts_(opts) {
        slots_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            std::size_t n = params_.entries()[i].tensor.numel();
            slots_[i].m.assign(n, 0.0);
            slots_[i].v.assign(n, 0.0);
        }
    }

    void step() {
        ++step_count_;
        const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_count_));
        const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_count_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& entry = const_cast<ModelState::Entry&>(params_.entries()[i]);
            if (!entry.tensor.has_grad())
                throw InconsistentStateError("adam: missing gradient for parameter '" +
                                             entry.name + "'");
            const auto& g = entry.tensor.grad();
            auto& p = entry.tensor.data();
            auto& slot = slots_[i];
            for (std::size_t k = 0; k < p.size(); ++k) {
                slot.m[k] = opts_.beta1 * slot.m[k] + (1.0 - opts_.beta1) * g[k];
                slot.v[k] = opts_.beta2 * slot.v[k] + (1.0 - opts_.beta2) * g[k] * g[k];
                const double m_hat = slot.m[k] / bc1;
                const double v_hat = slot.v[k] / bc2;
                p[k] -= opts_.lr * m_hat / (std::sqrt(v_hat) + opts_.eps);
            }
        }
    }

    void zero_grad() { params_.zero_grad(); }

    std::uint64_t step_count() const { return step_count_; }
    const Options& options() const { return opts_; }

private:
    struct Slot {
        std::vector<double> m;
        std::vector<double> v;
    };

    ModelState params_;
    Options opts_;
    std::vector<Slot> slots_;
    std::uint64_t step_count_ = 0;
};

} // namespace fimp
