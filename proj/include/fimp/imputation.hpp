#pragma once

#include <string>

#include "fimp/errors.hpp"
#include "fimp/models.hpp"
#include "fimp/rng.hpp"
#include "fimp/tensor.hpp"

namespace fimp {

enum class StrategyKind { ZeroFill, UniformFill, FeatureImputation };
enum class Modality { Image, Text };

inline StrategyKind parse_strategy(const std::string& s) {
    if (s == "zero") return StrategyKind::ZeroFill;
    if (s == "uniform") return StrategyKind::UniformFill;
    if (s == "fin") return StrategyKind::FeatureImputation;
    throw ConfigError("imputation: unknown strategy '" + s + "' (expected zero|uniform|fin)");
}

inline std::string strategy_name(StrategyKind k) {
    switch (k) {
        case StrategyKind::ZeroFill: return "zero";
        case StrategyKind::UniformFill: return "uniform";
        case StrategyKind::FeatureImputation: return "fin";
    }
    return "?";
}

/// Uniform interface over the three missing-modality fills. The kind is
/// fixed for the lifetime of a run; FeatureImputation holds references to
/// the round's dispatched imputers.
class ImputationStrategy {
public:
    static ImputationStrategy zero_fill() { return ImputationStrategy(StrategyKind::ZeroFill); }
    static ImputationStrategy uniform_fill() {
        return ImputationStrategy(StrategyKind::UniformFill);
    }
    static ImputationStrategy feature_imputation(const FeatureImputer& imputer_text,
                                                 const FeatureImputer& imputer_image) {
        ImputationStrategy s(StrategyKind::FeatureImputation);
        s.imputer_text_ = &imputer_text;
        s.imputer_image_ = &imputer_image;
        return s;
    }

    StrategyKind kind() const { return kind_; }

    /// Produces the feature block standing in for `missing`, given the
    /// available modality's bottleneck features. Never mutates the input.
    /// FeatureImputation runs the imputer purely for inference: the result
    /// enters the caller's graph as a constant, so no gradient can flow into
    /// the imputer or back into the available encoder through this branch.
    Tensor fill_missing(const Tensor& available, Modality missing, RngStream& rng) const {
        if (available.ndim() != 2 || available.dim(0) == 0)
            throw ShapeError("fill_missing: expected non-empty [BxD] features, got " +
                             shape_str(available.shape()));
        const std::size_t batch = available.dim(0), dim = available.dim(1);
        switch (kind_) {
            case StrategyKind::ZeroFill:
                return Tensor::zeros({batch, dim});
            case StrategyKind::UniformFill:
                return Tensor::uniform({batch, dim}, rng, 0.0, 1.0);
            case StrategyKind::FeatureImputation: {
                const FeatureImputer* imputer =
                    missing == Modality::Text ? imputer_text_ : imputer_image_;
                if (imputer == nullptr)
                    throw ConfigError("fill_missing: feature imputation requested but no "
                                      "imputation network is configured");
                GradTape inference = GradTape::inference();
                return imputer->forward(inference, available);
            }
        }
        throw ConfigError("fill_missing: corrupt strategy");
    }

private:
    explicit ImputationStrategy(StrategyKind kind) : kind_(kind) {}

    StrategyKind kind_;
    const FeatureImputer* imputer_text_ = nullptr;
    const FeatureImputer* imputer_image_ = nullptr;
};

} // namespace fimp
