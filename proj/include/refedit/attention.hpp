#ifndef REFEDIT_ATTENTION_HPP
#define REFEDIT_ATTENTION_HPP

// Multi-head self-attention plus the two reference-injection variants:
//  - rasa: reference keys/values concatenated into the self-attention softmax
//  - drra: untouched self-attention plus a lambda-scaled refer branch with its
//    own K/V input projections and a zero-initialized output projection, so a
//    freshly inserted branch is an exact no-op
// Reference K/V arrive already in attention space (they are recorded from the
// extractor's self-attention), so rasa consumes them raw while drra first maps
// them through its trainable projections.

#include <cmath>
#include <string>

#include "refedit/rng.hpp"
#include "refedit/tensor.hpp"

namespace refedit {

template <typename T>
struct ReferenceKV {
    Tensor<T> k;  // [ref_len x d]
    Tensor<T> v;  // [ref_len x d]
    size_t block_index = 0;

    size_t len() const { return k.defined() ? k.shape()[0] : 0; }
};

// which reference-injection wiring a forward pass uses; rasa reads the raw
// reference K/V through the backbone weights and needs no refer branch
enum class ReferMode { drra, rasa };

template <typename T>
struct AttentionParams {
    size_t heads = 0;
    size_t dim = 0;

    // q/k/v projections carry no bias (a key bias is invisible to softmax);
    // only the output projections are biased
    Tensor<T> wq, wk, wv, wo, bo;
    // refer branch; undefined until add_refer_branch
    Tensor<T> wkr, wvr, wor, bor;

    bool has_refer() const { return wkr.defined(); }

    static AttentionParams init(ParamMap<T>& params, const std::string& prefix, size_t heads,
                                size_t dim, Rng& rng) {
        if (dim % heads != 0) {
            throw std::invalid_argument("attention: dim " + std::to_string(dim) +
                                        " not divisible by " + std::to_string(heads) + " heads");
        }
        AttentionParams p;
        p.heads = heads;
        p.dim = dim;
        const T sd = T(1) / std::sqrt(T(dim));
        auto w = [&](const char* name) {
            Tensor<T> t = Tensor<T>::randn({dim, dim}, rng, sd);
            params[prefix + "." + name] = t;
            return t;
        };
        p.wq = w("wq");
        p.wk = w("wk");
        p.wv = w("wv");
        p.wo = w("wo");
        p.bo = Tensor<T>::zeros({dim});
        params[prefix + ".bo"] = p.bo;
        return p;
    }

    // K/V input projections start random; the output projection starts at
    // zero so the branch contributes nothing until trained
    void add_refer_branch(ParamMap<T>& params, const std::string& prefix, Rng& rng) {
        const T sd = T(1) / std::sqrt(T(dim));
        wkr = Tensor<T>::randn({dim, dim}, rng, sd);
        wvr = Tensor<T>::randn({dim, dim}, rng, sd);
        wor = Tensor<T>::zeros({dim, dim});
        bor = Tensor<T>::zeros({dim});
        params[prefix + ".wkr"] = wkr;
        params[prefix + ".wvr"] = wvr;
        params[prefix + ".wor"] = wor;
        params[prefix + ".bor"] = bor;
    }
};

namespace detail {

// split-head scaled dot-product attention over pre-projected q/k/v
template <typename T>
Tensor<T> multi_head(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, size_t heads) {
    const size_t d = q.cols();
    const size_t dh = d / heads;
    const T inv_sqrt = T(1) / std::sqrt(T(dh));
    Tensor<T> out;
    for (size_t h = 0; h < heads; ++h) {
        Tensor<T> qh = slice_cols(q, h * dh, dh);
        Tensor<T> kh = slice_cols(k, h * dh, dh);
        Tensor<T> vh = slice_cols(v, h * dh, dh);
        Tensor<T> probs = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
        Tensor<T> oh = matmul(probs, vh);
        out = h == 0 ? oh : concat_cols(out, oh);
    }
    return out;
}

template <typename T>
void check_input(const char* op, const Tensor<T>& x, const AttentionParams<T>& p) {
    if (x.ndim() != 2 || x.cols() != p.dim) {
        throw std::invalid_argument(std::string(op) + ": input " + shape_str(x.shape()) +
                                    " does not match attention dim " + std::to_string(p.dim));
    }
}

template <typename T>
void check_ref(const char* op, const ReferenceKV<T>& ref, const AttentionParams<T>& p) {
    if (!ref.k.defined() && !ref.v.defined()) {
        return;  // absent reference behaves as ref_len 0
    }
    if (!ref.k.defined() || !ref.v.defined() || ref.k.shape() != ref.v.shape() ||
        (ref.len() > 0 && ref.k.cols() != p.dim)) {
        throw std::invalid_argument(std::string(op) + ": reference K/V inconsistent with dim " +
                                    std::to_string(p.dim));
    }
}

}  // namespace detail

template <typename T>
Tensor<T> self_attention(const Tensor<T>& x, const AttentionParams<T>& p) {
    detail::check_input("self_attention", x, p);
    Tensor<T> q = matmul(x, p.wq);
    Tensor<T> k = matmul(x, p.wk);
    Tensor<T> v = matmul(x, p.wv);
    return linear(detail::multi_head(q, k, v, p.heads), p.wo, p.bo);
}

// reference keys/values join the self keys/values under one softmax
template <typename T>
Tensor<T> rasa(const Tensor<T>& x, const ReferenceKV<T>& ref, const AttentionParams<T>& p) {
    detail::check_input("rasa", x, p);
    detail::check_ref("rasa", ref, p);
    Tensor<T> q = matmul(x, p.wq);
    Tensor<T> k = matmul(x, p.wk);
    Tensor<T> v = matmul(x, p.wv);
    if (ref.len() > 0) {
        k = concat_rows(k, ref.k);
        v = concat_rows(v, ref.v);
    }
    return linear(detail::multi_head(q, k, v, p.heads), p.wo, p.bo);
}

// queries from x, keys/values from ctx; an empty ctx is the caller's signal
// to skip conditioning (handled upstream), but flows through as zero rows
template <typename T>
Tensor<T> cross_attention(const Tensor<T>& x, const Tensor<T>& ctx, const AttentionParams<T>& p) {
    detail::check_input("cross_attention", x, p);
    if (ctx.ndim() != 2 || ctx.cols() != p.dim) {
        throw std::invalid_argument("cross_attention: context " + shape_str(ctx.shape()) +
                                    " does not match attention dim " + std::to_string(p.dim));
    }
    Tensor<T> q = matmul(x, p.wq);
    Tensor<T> k = matmul(ctx, p.wk);
    Tensor<T> v = matmul(ctx, p.wv);
    return linear(detail::multi_head(q, k, v, p.heads), p.wo, p.bo);
}

// self-attention plus lambda times a separately parameterized refer branch;
// lambda 0 or an empty reference short-circuits to plain self-attention
template <typename T>
Tensor<T> drra(const Tensor<T>& x, const ReferenceKV<T>& ref, T lambda,
               const AttentionParams<T>& p) {
    detail::check_input("drra", x, p);
    detail::check_ref("drra", ref, p);
    if (!std::isfinite(lambda)) {
        throw std::invalid_argument("drra: lambda must be finite");
    }
    Tensor<T> self_out = self_attention(x, p);
    if (lambda == T(0) || ref.len() == 0) {
        return self_out;
    }
    if (!p.has_refer()) {
        throw std::invalid_argument("drra: refer branch parameters missing");
    }
    Tensor<T> q = matmul(x, p.wq);
    Tensor<T> k = matmul(x, p.wk);
    Tensor<T> v = matmul(x, p.wv);
    Tensor<T> kcat = concat_rows(k, matmul(ref.k, p.wkr));
    Tensor<T> vcat = concat_rows(v, matmul(ref.v, p.wvr));
    Tensor<T> refer_out = linear(detail::multi_head(q, kcat, vcat, p.heads), p.wor, p.bor);
    return add(self_out, scale(refer_out, lambda));
}

}  // namespace refedit

#endif  // REFEDIT_ATTENTION_HPP
