#ifndef REFEDIT_LAYERS_HPP
#define REFEDIT_LAYERS_HPP

// Shared transformer building blocks: layer norm, gelu FFN, and a pre-norm
// encoder block with optional cross-attention and optional reference-wrapped
// self-attention. The instruction encoder, the Q-Former, and the denoiser all
// stack these.

#include <string>
#include <vector>

#include "refedit/attention.hpp"
#include "refedit/rng.hpp"
#include "refedit/tensor.hpp"

namespace refedit {

template <typename T>
struct LayerNorm {
    Tensor<T> gain, bias;

    static LayerNorm init(ParamMap<T>& params, const std::string& prefix, size_t dim) {
        LayerNorm ln;
        ln.gain = Tensor<T>::full({dim}, T(1));
        ln.bias = Tensor<T>::zeros({dim});
        params[prefix + ".gain"] = ln.gain;
        params[prefix + ".bias"] = ln.bias;
        return ln;
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm_rows(x, gain, bias); }
};

template <typename T>
struct FFN {
    Tensor<T> w1, b1, w2, b2;

    static FFN init(ParamMap<T>& params, const std::string& prefix, size_t dim, size_t hidden,
                    Rng& rng) {
        FFN f;
        f.w1 = Tensor<T>::randn({dim, hidden}, rng, T(1) / std::sqrt(T(dim)));
        f.b1 = Tensor<T>::zeros({hidden});
        f.w2 = Tensor<T>::randn({hidden, dim}, rng, T(1) / std::sqrt(T(hidden)));
        f.b2 = Tensor<T>::zeros({dim});
        params[prefix + ".w1"] = f.w1;
        params[prefix + ".b1"] = f.b1;
        params[prefix + ".w2"] = f.w2;
        params[prefix + ".b2"] = f.b2;
        return f;
    }

    Tensor<T> operator()(const Tensor<T>& x) const {
        return linear(gelu(linear(x, w1, b1)), w2, b2);
    }
};

// pre-norm residual block: self-attention (reference-wrapped when a reference
// is supplied and the branch exists), optional cross-attention, FFN
template <typename T>
struct EncoderBlock {
    AttentionParams<T> self_attn;
    AttentionParams<T> cross_attn;  // heads==0 when the block has no cross path
    LayerNorm<T> ln_self, ln_cross, ln_ffn;
    FFN<T> ffn;

    bool has_cross() const { return cross_attn.heads != 0; }

    static EncoderBlock init(ParamMap<T>& params, const std::string& prefix, size_t heads,
                             size_t dim, size_t ffn_hidden, bool with_cross, Rng& rng) {
        EncoderBlock b;
        b.self_attn = AttentionParams<T>::init(params, prefix + ".self", heads, dim, rng);
        b.ln_self = LayerNorm<T>::init(params, prefix + ".ln_self", dim);
        if (with_cross) {
            b.cross_attn = AttentionParams<T>::init(params, prefix + ".cross", heads, dim, rng);
            b.ln_cross = LayerNorm<T>::init(params, prefix + ".ln_cross", dim);
        }
        b.ffn = FFN<T>::init(params, prefix + ".ffn", dim, ffn_hidden, rng);
        b.ln_ffn = LayerNorm<T>::init(params, prefix + ".ln_ffn", dim);
        return b;
    }

    // ctx: cross-attention context or null/empty to skip conditioning;
    // ref + lambda: reference K/V for the refer-wrapped self-attention.
    // mode selects the wiring; rasa has no branch scale so lambda only gates
    // drra
    Tensor<T> forward(const Tensor<T>& x, const Tensor<T>* ctx = nullptr,
                      const ReferenceKV<T>* ref = nullptr, T lambda = T(0),
                      ReferMode mode = ReferMode::drra) const {
        Tensor<T> h;
        const bool live_ref = ref != nullptr && ref->k.defined() && ref->k.shape()[0] > 0 &&
                              (mode == ReferMode::rasa || lambda != T(0));
        if (live_ref && mode == ReferMode::rasa) {
            h = add(x, rasa(ln_self(x), *ref, self_attn));
        } else if (live_ref) {
            h = add(x, drra(ln_self(x), *ref, lambda, self_attn));
        } else {
            h = add(x, self_attention(ln_self(x), self_attn));
        }
        if (ctx != nullptr && ctx->defined() && ctx->shape()[0] > 0) {
            if (!has_cross()) {
                throw std::invalid_argument("encoder block has no cross-attention path");
            }
            h = add(h, cross_attention(ln_cross(h), *ctx, cross_attn));
        }
        return add(h, ffn(ln_ffn(h)));
    }
};

}  // namespace refedit

#endif  // REFEDIT_LAYERS_HPP
