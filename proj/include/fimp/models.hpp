#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fimp/errors.hpp"
#include "fimp/nn.hpp"
#include "fimp/state.hpp"
#include "fimp/tensor.hpp"

namespace fimp {

/// Modality-specific encoder shape: MLP over precomputed feature vectors,
/// gelu between layers, bottleneck output L2-normalized per row.
struct EncoderConfig {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_dims = {128};
    std::size_t output_dim = 256;

    void validate() const {
        if (input_dim == 0 || output_dim == 0)
            throw ConfigError("encoder: dimensions must be positive");
        for (std::size_t h : hidden_dims)
            if (h == 0) throw ConfigError("encoder: hidden dims must be positive");
    }
};

/// Feature imputation network shape: a stack of pre-norm residual block
/// pairs over a single bottleneck vector. Defaults follow the reference
/// architecture (6 layers, 4 heads, 1024-wide feed-forward, 256-d features).
struct ImputerConfig {
    std::size_t depth = 6;
    std::size_t heads = 4;
    std::size_t ffn_dim = 1024;
    std::size_t feature_dim = 256;

    void validate() const {
        if (depth == 0 || heads == 0 || ffn_dim == 0 || feature_dim == 0)
            throw ConfigError("imputer: dimensions must be positive");
        if (feature_dim % heads != 0)
            throw ConfigError("imputer: feature_dim " + std::to_string(feature_dim) +
                              " not divisible by heads " + std::to_string(heads));
    }
};

/// Closed-form scalar parameter count of an imputer:
/// per layer, four d x d projections with biases (4d^2 + 4d), the
/// feed-forward pair (2*d*ffn + d + ffn), and two layer norms (2 * 2d).
inline std::size_t imputer_parameter_formula(const ImputerConfig& cfg) {
    const std::size_t d = cfg.feature_dim, f = cfg.ffn_dim;
    return cfg.depth * (4 * d * d + 4 * d + 2 * d * f + d + f + 2 * (2 * d));
}

/// MLP encoder producing unit-norm bottleneck rows.
class MlpEncoder {
public:
    MlpEncoder() = default;

    MlpEncoder(std::string name, EncoderConfig cfg, std::uint64_t seed)
        : name_(std::move(name)), cfg_(std::move(cfg)) {
        cfg_.validate();
        std::size_t prev = cfg_.input_dim;
        std::size_t idx = 0;
        for (std::size_t h : cfg_.hidden_dims) {
            layers_.emplace_back(name_ + ".fc" + std::to_string(idx++), prev, h, seed);
            prev = h;
        }
        layers_.emplace_back(name_ + ".fc" + std::to_string(idx), prev, cfg_.output_dim, seed);
    }

    /// x: [B x input_dim] -> unit-norm [B x output_dim].
    Tensor forward(GradTape& tape, const Tensor& x) const {
        if (x.ndim() != 2 || x.dim(1) != cfg_.input_dim)
            throw ShapeError(name_ + ": expected [Bx" + std::to_string(cfg_.input_dim) +
                             "], got " + shape_str(x.shape()));
        Tensor h = x;
        for (std::size_t i = 0; i + 1 < layers_.size(); ++i)
            h = tape.gelu(layers_[i].forward(tape, h));
        h = layers_.back().forward(tape, h);
        return tape.l2_normalize(h);
    }

    ModelState parameters() const {
        ModelState s;
        for (const auto& l : layers_) l.collect(s);
        return s;
    }

    const EncoderConfig& config() const { return cfg_; }

private:
    std::string name_;
    EncoderConfig cfg_;
    std::vector<Linear> layers_;
};

/// Feature imputation network: maps one modality's bottleneck feature to an
/// approximation of the other's.
///
/// Each layer is a pre-norm residual pair. Self-attention over a single
/// token reduces to x + W_o(W_v(LN(x))): the attention weight over one key
/// is identically 1, so the query/key projections cannot influence the
/// output. They are still allocated (the full multi-head layout is kept for
/// parameter accounting and aggregation) but are excluded from the trainable
/// set. Output rows are L2-normalized so imputed features live on the same
/// unit sphere as real bottleneck features.
class FeatureImputer {
public:
    FeatureImputer() = default;

    FeatureImputer(std::string name, ImputerConfig cfg, std::uint64_t seed)
        : name_(std::move(name)), cfg_(cfg) {
        cfg_.validate();
        const std::size_t d = cfg_.feature_dim;
        const double res_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg_.depth));
        for (std::size_t i = 0; i < cfg_.depth; ++i) {
            std::string p = name_ + ".layers." + std::to_string(i);
            Layer layer;
            layer.ln1 = LayerNorm(p + ".ln1", d);
            layer.ln2 = LayerNorm(p + ".ln2", d);
            layer.q = Linear(p + ".attn_q", d, d, seed);
            layer.k = Linear(p + ".attn_k", d, d, seed);
            layer.v = Linear(p + ".attn_v", d, d, seed);
            layer.o = Linear(p + ".attn_o", d, d, seed, res_scale);
            layer.ff1 = Linear(p + ".ffn_1", d, cfg_.ffn_dim, seed);
            layer.ff2 = Linear(p + ".ffn_2", cfg_.ffn_dim, d, seed, res_scale);
            layers_.push_back(std::move(layer));
        }
    }

    /// z: unit-norm [B x feature_dim] -> unit-norm [B x feature_dim].
    Tensor forward(GradTape& tape, const Tensor& z) const {
        if (z.ndim() != 2 || z.dim(1) != cfg_.feature_dim)
            throw ShapeError(name_ + ": expected [Bx" + std::to_string(cfg_.feature_dim) +
                             "], got " + shape_str(z.shape()));
        Tensor x = z;
        for (const auto& layer : layers_) {
            Tensor attn = layer.o.forward(tape, layer.v.forward(tape, layer.ln1.forward(tape, x)));
            x = tape.add(x, attn);
            Tensor ffn = layer.ff2.forward(
                tape, tape.gelu(layer.ff1.forward(tape, layer.ln2.forward(tape, x))));
            x = tape.add(x, ffn);
        }
        return tape.l2_normalize(x);
    }

    /// Full parameter set, including the inert query/key projections.
    ModelState parameters() const {
        ModelState s;
        for (const auto& layer : layers_) {
            layer.ln1.collect(s);
            layer.q.collect(s);
            layer.k.collect(s);
            layer.v.collect(s);
            layer.o.collect(s);
            layer.ln2.collect(s);
            layer.ff1.collect(s);
            layer.ff2.collect(s);
        }
        return s;
    }

    /// Parameters that actually participate in the forward pass.
    ModelState trainable_parameters() const {
        ModelState s;
        for (const auto& layer : layers_) {
            layer.ln1.collect(s);
            layer.v.collect(s);
            layer.o.collect(s);
            layer.ln2.collect(s);
            layer.ff1.collect(s);
            layer.ff2.collect(s);
        }
        return s;
    }

    const ImputerConfig& config() const { return cfg_; }

private:
    struct Layer {
        LayerNorm ln1, ln2;
        Linear q, k, v, o, ff1, ff2;
    };

    std::string name_;
    ImputerConfig cfg_;
    std::vector<Layer> layers_;
};

/// Shape of the complete global model.
struct GlobalModelConfig {
    std::size_t image_input_dim = 0;
    std::size_t text_input_dim = 0;
    std::vector<std::size_t> encoder_hidden_dims = {128};
    std::size_t bottleneck_dim = 256;
    std::size_t label_count = 0;
    std::size_t imputer_depth = 6;
    std::size_t imputer_heads = 4;
    std::size_t imputer_ffn_dim = 1024;

    EncoderConfig image_encoder() const {
        return {image_input_dim, encoder_hidden_dims, bottleneck_dim};
    }
    EncoderConfig text_encoder() const {
        return {text_input_dim, encoder_hidden_dims, bottleneck_dim};
    }
    ImputerConfig imputer() const {
        return {imputer_depth, imputer_heads, imputer_ffn_dim, bottleneck_dim};
    }

    void validate() const {
        if (label_count == 0) throw ConfigError("model: label_count must be positive");
        image_encoder().validate();
        text_encoder().validate();
        imputer().validate();
    }
};

/// The complete model: two modality encoders, concatenation fusion with a
/// linear classifier, and the two imputation networks. Imputer_text maps
/// image features to text features; imputer_image maps the reverse.
/// Fusion order is a wire-level constant: image block first, text block
/// second.
class GlobalModel {
public:
    GlobalModel() = default;

    GlobalModel(GlobalModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
        cfg_.validate();
        image_encoder_ = MlpEncoder("image_encoder", cfg_.image_encoder(), seed);
        text_encoder_ = MlpEncoder("text_encoder", cfg_.text_encoder(), seed);
        classifier_ =
            Linear("classifier", 2 * cfg_.bottleneck_dim, cfg_.label_count, seed);
        imputer_text_ = FeatureImputer("imputer_text", cfg_.imputer(), seed);
        imputer_image_ = FeatureImputer("imputer_image", cfg_.imputer(), seed);
    }

    Tensor encode_image(GradTape& tape, const Tensor& x) const {
        return image_encoder_.forward(tape, x);
    }
    Tensor encode_text(GradTape& tape, const Tensor& x) const {
        return text_encoder_.forward(tape, x);
    }

    /// logits = classifier(z_image ++ z_text).
    Tensor fuse_and_classify(GradTape& tape, const Tensor& z_image, const Tensor& z_text) const {
        if (z_image.ndim() != 2 || z_text.ndim() != 2 || z_image.dim(0) != z_text.dim(0) ||
            z_image.dim(1) != cfg_.bottleneck_dim || z_text.dim(1) != cfg_.bottleneck_dim)
            throw ShapeError("fuse_and_classify: incompatible feature blocks " +
                             shape_str(z_image.shape()) + " and " + shape_str(z_text.shape()));
        return classifier_.forward(tape, tape.concat(z_image, z_text));
    }

    /// Encoders + classifier; the unit of main-model aggregation.
    ModelState main_parameters() const {
        ModelState s;
        s.append(image_encoder_.parameters());
        s.append(text_encoder_.parameters());
        classifier_.collect(s);
        return s;
    }

    ModelState imputer_text_parameters() const { return imputer_text_.parameters(); }
    ModelState imputer_image_parameters() const { return imputer_image_.parameters(); }

    /// Everything, in a fixed order (main, imputer_text, imputer_image).
    ModelState all_parameters() const {
        ModelState s = main_parameters();
        s.append(imputer_text_.parameters());
        s.append(imputer_image_.parameters());
        return s;
    }

    GlobalModel deep_copy() const {
        GlobalModel copy(cfg_, 0);
        copy.all_parameters().load_values(all_parameters());
        return copy;
    }

    /// Rebuilds a model from a serialized all_parameters() state. The
    /// architecture is inferred from parameter names and shapes; head count
    /// is not on the wire and does not affect the forward pass, so the
    /// reconstructed imputer uses heads = 1.
    static GlobalModel from_state(const ModelState& state) {
        GlobalModelConfig cfg;
        const Tensor* enc0 = state.find("image_encoder.fc0.weight");
        const Tensor* tenc0 = state.find("text_encoder.fc0.weight");
        const Tensor* cls = state.find("classifier.weight");
        const Tensor* ffn = state.find("imputer_text.layers.0.ffn_1.weight");
        if (!enc0 || !tenc0 || !cls || !ffn)
            throw IoError("model state: missing required parameters");
        cfg.image_input_dim = enc0->dim(0);
        cfg.text_input_dim = tenc0->dim(0);
        cfg.bottleneck_dim = cls->dim(0) / 2;
        cfg.label_count = cls->dim(1);
        cfg.encoder_hidden_dims.clear();
        for (std::size_t i = 0;; ++i) {
            const Tensor* w = state.find("image_encoder.fc" + std::to_string(i) + ".weight");
            const Tensor* next =
                state.find("image_encoder.fc" + std::to_string(i + 1) + ".weight");
            if (!w) break;
            if (next) cfg.encoder_hidden_dims.push_back(w->dim(1));
        }
        cfg.imputer_ffn_dim = ffn->dim(1);
        cfg.imputer_heads = 1;
        cfg.imputer_depth = 0;
        while (state.find("imputer_text.layers." + std::to_string(cfg.imputer_depth) +
                          ".ffn_1.weight") != nullptr)
            ++cfg.imputer_depth;
        GlobalModel model(cfg, 0);
        model.all_parameters().load_values(state);
        return model;
    }

    const GlobalModelConfig& config() const { return cfg_; }
    const MlpEncoder& image_encoder() const { return image_encoder_; }
    const MlpEncoder& text_encoder() const { return text_encoder_; }
    const Linear& classifier() const { return classifier_; }
    const FeatureImputer& imputer_text() const { return imputer_text_; }
    const FeatureImputer& imputer_image() const { return imputer_image_; }

private:
    GlobalModelConfig cfg_;
    MlpEncoder image_encoder_, text_encoder_;
    Linear classifier_;
    FeatureImputer imputer_text_, imputer_image_;
};

inline std::size_t count_parameters(const ModelState& state) {
    return state.parameter_count();
}

} // namespace fimp
