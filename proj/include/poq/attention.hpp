#pragma once

#include <optional>
#include <type_traits>

#include "poq/optim.hpp"
#include "poq/tensor.hpp"

namespace poq {

/// Projection weights of one attention block. Single-head by default; when
/// `heads` > 1 the D columns are split into equal head slices.
template <typename T>
struct AttentionParams {
    TensorPtr<T> w_q, w_k, w_v, w_o;

    void init(std::size_t d_in, std::size_t d, Rng& rng) {
        w_q = Tensor<T>::create({d_in, d}, true);
        w_k = Tensor<T>::create({d_in, d}, true);
        w_v = Tensor<T>::create({d_in, d}, true);
        w_o = Tensor<T>::create({d, d}, true);
        xavier_uniform(*w_q, rng);
        xavier_uniform(*w_k, rng);
        xavier_uniform(*w_v, rng);
        xavier_uniform(*w_o, rng);
    }

    void collect(const std::string& prefix, std::vector<Param<T>>& out) const {
        out.push_back({prefix + ".w_q", w_q});
        out.push_back({prefix + ".w_k", w_k});
        out.push_back({prefix + ".w_v", w_v});
        out.push_back({prefix + ".w_o", w_o});
    }
};

template <typename T>
struct FeedForward {
    TensorPtr<T> w1, b1, w2, b2;

    void init(std::size_t d, std::size_t hidden, Rng& rng) {
        w1 = Tensor<T>::create({d, hidden}, true);
        b1 = Tensor<T>::create({hidden}, true);
        w2 = Tensor<T>::create({hidden, d}, true);
        b2 = Tensor<T>::create({d}, true);
        xavier_uniform(*w1, rng);
        xavier_uniform(*w2, rng);
    }

    TensorPtr<T> forward(const TensorPtr<T>& x) const {
        auto h = relu(add_rowvec(matmul(x, w1), b1));
        return add_rowvec(matmul(h, w2), b2);
    }

    void collect(const std::string& prefix, std::vector<Param<T>>& out) const {
        out.push_back({prefix + ".w1", w1});
        out.push_back({prefix + ".b1", b1});
        out.push_back({prefix + ".w2", w2});
        out.push_back({prefix + ".b2", b2});
    }
};

template <typename T>
struct LayerNormParams {
    TensorPtr<T> gain, bias;

    void init(std::size_t d) {
        gain = Tensor<T>::create({d}, true);
        bias = Tensor<T>::create({d}, true);
        std::fill(gain->value.begin(), gain->value.end(), T(1));
    }

    TensorPtr<T> forward(const TensorPtr<T>& x) const { return layer_norm(x, gain, bias); }

    void collect(const std::string& prefix, std::vector<Param<T>>& out) const {
        out.push_back({prefix + ".gain", gain});
        out.push_back({prefix + ".bias", bias});
    }
};

/// Scaled dot-product attention with output projection:
///   softmax((Q + q_bias)(K + k_bias)ᵀ / √d_head) · V, then W_O.
/// The optional biases carry additive object queries; they are added to the
/// projected query/key tensors. Logits are scaled by 1/√D for the default
/// single head and by 1/√(D/heads) otherwise.
template <typename T>
TensorPtr<T> attend(const TensorPtr<T>& q_in, const TensorPtr<T>& kv_in,
                    const AttentionParams<T>& params, std::size_t heads = 1,
                    const std::type_identity_t<TensorPtr<T>>& q_bias = nullptr,
                    const std::type_identity_t<TensorPtr<T>>& k_bias = nullptr) {
    detail::require_matrix(q_in, "attend");
    detail::require_matrix(kv_in, "attend");
    std::size_t d = params.w_q->shape[1];
    if (heads == 0 || d % heads != 0)
        throw ShapeError("attend: model dimension " + std::to_string(d) +
                         " not divisible into " + std::to_string(heads) + " heads");

    auto q = matmul(q_in, params.w_q);
    auto k = matmul(kv_in, params.w_k);
    auto v = matmul(kv_in, params.w_v);
    if (q_bias) q = add(q, q_bias);
    if (k_bias) k = add(k, k_bias);

    std::size_t dh = d / heads;
    T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

    auto head_output = [&](const TensorPtr<T>& qh, const TensorPtr<T>& kh, const TensorPtr<T>& vh) {
        auto logits = scale(matmul_nt(qh, kh), inv_sqrt);
        auto weights = softmax_rows(logits);
        return matmul(weights, vh);
    };

    TensorPtr<T> mixed;
    if (heads == 1) {
        mixed = head_output(q, k, v);
    } else {
        std::vector<TensorPtr<T>> parts;
        parts.reserve(heads);
        for (std::size_t h = 0; h < heads; ++h) {
            std::size_t c0 = h * dh, c1 = c0 + dh;
            parts.push_back(head_output(slice_cols(q, c0, c1), slice_cols(k, c0, c1),
                                        slice_cols(v, c0, c1)));
        }
        mixed = concat_cols(parts);
    }
    return matmul(mixed, params.w_o);
}

template <typename T>
struct EncoderLayer {
    AttentionParams<T> self_attn;
    FeedForward<T> ffn;
    LayerNormParams<T> norm1, norm2;

    void init(std::size_t d, std::size_t ffn_hidden, Rng& rng) {
        self_attn.init(d, d, rng);
        ffn.init(d, ffn_hidden, rng);
        norm1.init(d);
        norm2.init(d);
    }

    void collect(const std::string& prefix, std::vector<Param<T>>& out) const {
        self_attn.collect(prefix + ".self_attn", out);
        ffn.collect(prefix + ".ffn", out);
        norm1.collect(prefix + ".norm1", out);
        norm2.collect(prefix + ".norm2", out);
    }
};

template <typename T>
struct DecoderLayer {
    AttentionParams<T> self_attn, cross_attn;
    FeedForward<T> ffn;
    LayerNormParams<T> norm1, norm2, norm3;

    void init(std::size_t d, std::size_t ffn_hidden, Rng& rng) {
        self_attn.init(d, d, rng);
        cross_attn.init(d, d, rng);
        ffn.init(d, ffn_hidden, rng);
        norm1.init(d);
        norm2.init(d);
        norm3.init(d);
    }

    void collect(const std::string& prefix, std::vector<Param<T>>& out) const {
        self_attn.collect(prefix + ".self_attn", out);
        cross_attn.collect(prefix + ".cross_attn", out);
        ffn.collect(prefix + ".ffn", out);
        norm1.collect(prefix + ".norm1", out);
        norm2.collect(prefix + ".norm2", out);
        norm3.collect(prefix + ".norm3", out);
    }
};

// Post-norm residual ordering: x + Sublayer(x), then norm.
template <typename T>
TensorPtr<T> encoder_layer_forward(const TensorPtr<T>& x, const EncoderLayer<T>& layer,
                                   std::size_t heads = 1) {
    auto a = layer.norm1.forward(add(x, attend(x, x, layer.self_attn, heads)));
    return layer.norm2.forward(add(a, layer.ffn.forward(a)));
}

/// Decoder sublayer stack: self-attention over the target rows (additive
/// query bias applied to both query and key), cross-attention whose keys and
/// values come from the encoder memory (bias applied to the query only), and
/// the feed-forward block. The residual around cross-attention can be cut
/// for the ablation arm.
template <typename T>
TensorPtr<T> decoder_layer_forward(const TensorPtr<T>& tgt, const TensorPtr<T>& memory,
                                   const DecoderLayer<T>& layer, std::size_t heads = 1,
                                   bool residual_cross_enabled = true,
                                   const std::type_identity_t<TensorPtr<T>>& q_bias = nullptr) {
    auto a = layer.norm1.forward(add(tgt, attend(tgt, tgt, layer.self_attn, heads, q_bias, q_bias)));
    auto cross = attend(a, memory, layer.cross_attn, heads, q_bias);
    auto b = layer.norm2.forward(residual_cross_enabled ? add(a, cross) : cross);
    return layer.norm3.forward(add(b, layer.ffn.forward(b)));
}

} // namespace poq
