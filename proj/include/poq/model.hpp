#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "poq/attention.hpp"

namespace poq {

enum class QueryMode { Primal, AdditiveShared, AdditivePerLayer };

inline const char* query_mode_name(QueryMode m) {
    switch (m) {
        case QueryMode::Primal: return "primal";
        case QueryMode::AdditiveShared: return "additive-shared";
        case QueryMode::AdditivePerLayer: return "additive-per-layer";
    }
    return "?";
}

inline QueryMode parse_query_mode(const std::string& s) {
    if (s == "primal") return QueryMode::Primal;
    if (s == "additive-shared") return QueryMode::AdditiveShared;
    if (s == "additive-per-layer") return QueryMode::AdditivePerLayer;
    throw ConfigError("unknown query mode '" + s +
                      "' (expected primal | additive-shared | additive-per-layer)");
}

struct ModelConfig {
    int num_encoder_layers = 1;
    int num_decoder_layers = 2;
    int model_dim = 64;  // D
    int num_queries = 8; // O
    int num_classes = 12;
    int num_heads = 1;
    QueryMode query_mode = QueryMode::Primal;
    bool residual_cross_enabled = true;
    int image_size = 32;
    int patch_size = 8;
    int channels = 64; // backbone output channels C
    int image_channels = 3;

    int ffn_hidden() const { return 4 * model_dim; }
    int grid() const { return image_size / patch_size; }
    int tokens() const { return grid() * grid(); }
    int patch_dim() const { return patch_size * patch_size * image_channels; }
    int head_out() const { return num_classes + 1; } // classes + empty token

    void validate() const {
        if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
            throw ConfigError("image size " + std::to_string(image_size) +
                              " must be a positive multiple of patch size " +
                              std::to_string(patch_size));
        if (num_encoder_layers < 0 || num_decoder_layers < 1)
            throw ConfigError("need at least one decoder layer");
        if (model_dim < 2 || num_queries < 1 || num_classes < 1 || channels < 2)
            throw ConfigError("model dimensions must be positive (dim/channels >= 2)");
        if (num_heads < 1 || model_dim % num_heads != 0)
            throw ConfigError("model dim " + std::to_string(model_dim) +
                              " must divide into " + std::to_string(num_heads) + " heads");
    }
};

/// Spatial feature grid produced by the patch backbone; `tokens` holds the
/// H·W rows of dimension C in row-major scan order.
template <typename T>
struct FeatureMap {
    int h = 0, w = 0, c = 0;
    TensorPtr<T> tokens;
};

/// Full classifier: patch-embedding backbone, initial linear layer to D,
/// encoder stack, decoder stack driven by one of three object-query modes,
/// and a linear head emitting one row of class-plus-empty logits per query.
template <typename T>
class Model {
public:
    ModelConfig config;

    Model(const ModelConfig& cfg, std::uint64_t seed) : config(cfg) {
        cfg.validate();
        Rng rng(mix_seed(seed, 1));
        patch_w = Tensor<T>::create({(std::size_t)cfg.patch_dim(), (std::size_t)cfg.channels}, true);
        patch_b = Tensor<T>::create({(std::size_t)cfg.channels}, true);
        xavier_uniform(*patch_w, rng);
        input_w = Tensor<T>::create({(std::size_t)cfg.channels, (std::size_t)cfg.model_dim}, true);
        input_b = Tensor<T>::create({(std::size_t)cfg.model_dim}, true);
        xavier_uniform(*input_w, rng);
        encoder.resize(cfg.num_encoder_layers);
        for (auto& l : encoder) l.init(cfg.model_dim, cfg.ffn_hidden(), rng);
        decoder.resize(cfg.num_decoder_layers);
        for (auto& l : decoder) l.init(cfg.model_dim, cfg.ffn_hidden(), rng);
        head_w = Tensor<T>::create({(std::size_t)cfg.model_dim, (std::size_t)cfg.head_out()}, true);
        head_b = Tensor<T>::create({(std::size_t)cfg.head_out()}, true);
        xavier_uniform(*head_w, rng);

        // query parameters draw from their own stream so that arms differing
        // only in query mode share every other initial weight
        Rng qrng(mix_seed(seed, 2));
        Shape qshape{(std::size_t)cfg.num_queries, (std::size_t)cfg.model_dim};
        switch (cfg.query_mode) {
            case QueryMode::Primal:
                primal_queries = Tensor<T>::create(qshape, true);
                xavier_uniform(*primal_queries, qrng);
                break;
            case QueryMode::AdditiveShared:
                shared_query_bias = Tensor<T>::create(qshape, true);
                xavier_uniform(*shared_query_bias, qrng);
                break;
            case QueryMode::AdditivePerLayer:
                layer_query_bias.resize(cfg.num_decoder_layers);
                for (auto& q : layer_query_bias) {
                    q = Tensor<T>::create(qshape, true);
                    xavier_uniform(*q, qrng);
                }
                break;
        }
    }

    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;

    /// Cuts the image into non-overlapping patches, flattens each, and
    /// projects to C channels. The image is a raw h×w×ch row-major buffer.
    FeatureMap<T> backbone_forward(const std::vector<T>& image) const {
        const auto& cfg = config;
        std::size_t h = cfg.image_size, w = cfg.image_size, ch = cfg.image_channels;
        if (image.size() != h * w * ch)
            throw ShapeError("backbone: image has " + std::to_string(image.size()) +
                             " values, expected " + std::to_string(h * w * ch));
        std::size_t p = cfg.patch_size, g = cfg.grid(), pd = cfg.patch_dim();
        auto patches = Tensor<T>::create({g * g, pd});
        for (std::size_t pi = 0; pi < g; ++pi)
            for (std::size_t pj = 0; pj < g; ++pj) {
                T* row = patches->value.data() + (pi * g + pj) * pd;
                std::size_t k = 0;
                for (std::size_t y = 0; y < p; ++y)
                    for (std::size_t x = 0; x < p; ++x)
                        for (std::size_t c = 0; c < ch; ++c)
                            row[k++] = image[((pi * p + y) * w + pj * p + x) * ch + c];
            }
        FeatureMap<T> fm;
        fm.h = fm.w = static_cast<int>(g);
        fm.c = cfg.channels;
        fm.tokens = add_rowvec(matmul(patches, patch_w), patch_b);
        return fm;
    }

    TensorPtr<T> encode(const FeatureMap<T>& fm) const {
        auto x = add_rowvec(matmul(fm.tokens, input_w), input_b);
        for (const auto& layer : encoder) x = encoder_layer_forward(x, layer, config.num_heads);
        return x;
    }

    TensorPtr<T> decode(const TensorPtr<T>& memory) const {
        Shape qshape{(std::size_t)config.num_queries, (std::size_t)config.model_dim};
        TensorPtr<T> tgt;
        if (config.query_mode == QueryMode::Primal)
            tgt = primal_queries;
        else
            tgt = Tensor<T>::create(qshape); // zeros; queries enter as biases
        for (std::size_t i = 0; i < decoder.size(); ++i) {
            TensorPtr<T> bias = nullptr;
            if (config.query_mode == QueryMode::AdditiveShared)
                bias = shared_query_bias;
            else if (config.query_mode == QueryMode::AdditivePerLayer)
                bias = layer_query_bias[i];
            tgt = decoder_layer_forward(tgt, memory, decoder[i], config.num_heads,
                                        config.residual_cross_enabled, bias);
        }
        return tgt;
    }

    // image -> O×(c+1) logits
    TensorPtr<T> forward(const std::vector<T>& image) const {
        auto memory = encode(backbone_forward(image));
        return add_rowvec(matmul(decode(memory), head_w), head_b);
    }

    std::vector<Param<T>> backbone_parameters() const {
        return {{"backbone.patch.weight", patch_w}, {"backbone.patch.bias", patch_b}};
    }

    std::vector<Param<T>> transformer_parameters() const {
        std::vector<Param<T>> out;
        out.push_back({"input_proj.weight", input_w});
        out.push_back({"input_proj.bias", input_b});
        for (std::size_t i = 0; i < encoder.size(); ++i)
            encoder[i].collect("encoder." + std::to_string(i), out);
        for (std::size_t i = 0; i < decoder.size(); ++i)
            decoder[i].collect("decoder." + std::to_string(i), out);
        out.push_back({"head.weight", head_w});
        out.push_back({"head.bias", head_b});
        if (primal_queries) out.push_back({"queries.primal", primal_queries});
        if (shared_query_bias) out.push_back({"queries.shared", shared_query_bias});
        for (std::size_t i = 0; i < layer_query_bias.size(); ++i)
            out.push_back({"queries.layer" + std::to_string(i), layer_query_bias[i]});
        return out;
    }

    std::vector<Param<T>> parameters() const {
        auto out = backbone_parameters();
        auto rest = transformer_parameters();
        out.insert(out.end(), rest.begin(), rest.end());
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : parameters()) n += p.tensor->size();
        return n;
    }

    std::vector<std::vector<T>> snapshot_state() const {
        std::vector<std::vector<T>> state;
        for (const auto& p : parameters()) state.push_back(p.tensor->value);
        return state;
    }

    void restore_state(const std::vector<std::vector<T>>& state) {
        auto params = parameters();
        if (state.size() != params.size())
            throw DataError("restore_state: parameter count mismatch");
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (state[i].size() != params[i].tensor->value.size())
                throw DataError("restore_state: size mismatch for " + params[i].name);
            params[i].tensor->value = state[i];
        }
    }

    TensorPtr<T> patch_w, patch_b;
    TensorPtr<T> input_w, input_b;
    std::vector<EncoderLayer<T>> encoder;
    std::vector<DecoderLayer<T>> decoder;
    TensorPtr<T> head_w, head_b;
    TensorPtr<T> primal_queries;
    TensorPtr<T> shared_query_bias;
    std::vector<TensorPtr<T>> layer_query_bias;
};

} // namespace poq
