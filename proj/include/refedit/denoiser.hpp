#ifndef REFEDIT_DENOISER_HPP
#define REFEDIT_DENOISER_HPP

// Noise-prediction network: the noisy latent and the original-image latent
// are stacked into 8 channels, cut into 4x4 patch tokens, and run through
// pre-norm blocks of [reference-wrappable self-attention, cross-attention to
// the instruction embedding, FFN] with a sinusoidal timestep embedding added
// to every token. A frozen snapshot of the same architecture (the detail
// extractor) supplies per-block reference K/V recorded from its
// self-attention inputs.

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "refedit/image.hpp"
#include "refedit/layers.hpp"
#include "refedit/rng.hpp"
#include "refedit/tensor.hpp"

namespace refedit {

inline constexpr size_t kLatentChannels = 4;

// rgb in [-1,1] plus an all-zero fourth channel; shape {4, size*size}
template <typename T>
Tensor<T> encode_latent(const Image& img, size_t size = 32) {
    if (img.width != size || img.height != size) {
        throw std::invalid_argument("encode_latent: expected " + std::to_string(size) + "x" +
                                    std::to_string(size) + ", got " + std::to_string(img.width) +
                                    "x" + std::to_string(img.height));
    }
    const size_t n = size * size;
    Tensor<T> lat({kLatentChannels, n});
    for (size_t i = 0; i < n; ++i) {
        for (size_t c = 0; c < 3; ++c) {
            lat.data()[c * n + i] = T(img.rgb[i * 3 + c]) / T(127.5) - T(1);
        }
    }
    return lat;
}

template <typename T>
Image decode_latent(const Tensor<T>& lat, size_t size = 32) {
    const size_t n = size * size;
    if (lat.shape() != std::vector<size_t>{kLatentChannels, n}) {
        throw std::invalid_argument("decode_latent: latent " + shape_str(lat.shape()) +
                                    " does not decode to " + std::to_string(size) + "x" +
                                    std::to_string(size));
    }
    Image img(size, size);
    for (size_t i = 0; i < n; ++i) {
        for (size_t c = 0; c < 3; ++c) {
            T v = lat.data()[c * n + i];
            v = std::min(T(1), std::max(T(-1), v));
            img.rgb[i * 3 + c] = static_cast<uint8_t>(std::lround((v + T(1)) * T(127.5)));
        }
    }
    return img;
}

template <typename T>
struct ReferenceFeatures {
    std::vector<ReferenceKV<T>> blocks;
};

template <typename T>
struct Denoiser {
    size_t dim = 128;
    size_t heads = 4;
    size_t depth = 4;
    size_t patch = 4;
    size_t latent_size = 32;
    size_t t_max = 200;

    Tensor<T> in_w, in_b;    // 8*patch^2 -> dim
    Tensor<T> time_w1, time_b1, time_w2, time_b2;
    std::vector<EncoderBlock<T>> blocks;
    LayerNorm<T> ln_out;
    Tensor<T> out_w, out_b;  // dim -> 4*patch^2, zero-initialized

    std::shared_ptr<std::vector<size_t>> patch_index, unpatch_index;

    size_t tokens_per_side() const { return latent_size / patch; }
    size_t token_count() const { return tokens_per_side() * tokens_per_side(); }

    static Denoiser init(ParamMap<T>& params, const std::string& prefix, Rng& rng,
                         size_t dim = 128, size_t heads = 4, size_t depth = 4,
                         size_t latent_size = 32, size_t patch = 4, size_t t_max = 200) {
        if (patch == 0 || latent_size % patch != 0) {
            throw std::invalid_argument("denoiser: latent size " + std::to_string(latent_size) +
                                        " not divisible by patch " + std::to_string(patch));
        }
        if (dim < 4 || dim % 2 != 0) {
            throw std::invalid_argument("denoiser: dim must be even and at least 4");
        }
        Denoiser d;
        d.dim = dim;
        d.heads = heads;
        d.depth = depth;
        d.patch = patch;
        d.latent_size = latent_size;
        d.t_max = t_max;
        const size_t in_dim = 2 * kLatentChannels * patch * patch;
        const size_t out_dim = kLatentChannels * patch * patch;
        auto reg = [&](const std::string& name, Tensor<T> t) {
            params[prefix + "." + name] = t;
            return t;
        };
        d.in_w = reg("in_w", Tensor<T>::randn({in_dim, dim}, rng, T(1) / std::sqrt(T(in_dim))));
        d.in_b = reg("in_b", Tensor<T>::zeros({dim}));
        d.time_w1 = reg("time_w1", Tensor<T>::randn({dim, dim}, rng, T(1) / std::sqrt(T(dim))));
        d.time_b1 = reg("time_b1", Tensor<T>::zeros({dim}));
        d.time_w2 = reg("time_w2", Tensor<T>::randn({dim, dim}, rng, T(1) / std::sqrt(T(dim))));
        d.time_b2 = reg("time_b2", Tensor<T>::zeros({dim}));
        for (size_t b = 0; b < depth; ++b) {
            d.blocks.push_back(EncoderBlock<T>::init(params, prefix + ".block" + std::to_string(b),
                                                     heads, dim, 2 * dim, true, rng));
        }
        d.ln_out = LayerNorm<T>::init(params, prefix + ".ln_out", dim);
        // zero-initialized head: the fresh model predicts zero noise
        d.out_w = reg("out_w", Tensor<T>::zeros({dim, out_dim}));
        d.out_b = reg("out_b", Tensor<T>::zeros({out_dim}));
        d.build_indices();
        return d;
    }

    // registers the per-block refer branches under their own namespace so the
    // freeze logic can address them apart from the backbone
    void add_refer_branches(ParamMap<T>& params, Rng& rng) {
        for (size_t b = 0; b < depth; ++b) {
            blocks[b].self_attn.add_refer_branch(params, "drra.block" + std::to_string(b), rng);
        }
    }

    bool has_refer_branches() const { return depth > 0 && blocks[0].self_attn.has_refer(); }

    void build_indices() {
        const size_t side = tokens_per_side();
        const size_t n = latent_size * latent_size;
        const size_t in_dim = 2 * kLatentChannels * patch * patch;
        const size_t out_dim = kLatentChannels * patch * patch;
        patch_index = std::make_shared<std::vector<size_t>>(token_count() * in_dim);
        for (size_t py = 0; py < side; ++py) {
            for (size_t px = 0; px < side; ++px) {
                for (size_t c = 0; c < 2 * kLatentChannels; ++c) {
                    for (size_t dy = 0; dy < patch; ++dy) {
                        for (size_t dx = 0; dx < patch; ++dx) {
                            const size_t tok = py * side + px;
                            const size_t feat = c * patch * patch + dy * patch + dx;
                            const size_t y = py * patch + dy, x = px * patch + dx;
                            (*patch_index)[tok * in_dim + feat] = c * n + y * latent_size + x;
                        }
                    }
                }
            }
        }
        unpatch_index = std::make_shared<std::vector<size_t>>(kLatentChannels * n);
        for (size_t c = 0; c < kLatentChannels; ++c) {
            for (size_t y = 0; y < latent_size; ++y) {
                for (size_t x = 0; x < latent_size; ++x) {
                    const size_t tok = (y / patch) * side + (x / patch);
                    const size_t feat = c * patch * patch + (y % patch) * patch + (x % patch);
                    (*unpatch_index)[c * n + y * latent_size + x] = tok * out_dim + feat;
                }
            }
        }
    }

    Tensor<T> timestep_embedding(size_t t) const {
        const size_t half = dim / 2;
        Tensor<T> emb({1, dim});
        for (size_t i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * double(i) / double(half - 1));
            emb.data()[i] = T(std::sin(double(t) * freq));
            emb.data()[half + i] = T(std::cos(double(t) * freq));
        }
        return reshape(linear(gelu(linear(emb, time_w1, time_b1)), time_w2, time_b2), {dim});
    }

    // c_m may have zero rows (unconditional); f_ref null (or lambda 0 in drra
    // mode) runs the reference-free path
    Tensor<T> predict_noise(const Tensor<T>& x_t, const Tensor<T>& x_o, const Tensor<T>& c_m,
                            const ReferenceFeatures<T>* f_ref, size_t t, T lambda,
                            ReferMode mode = ReferMode::drra) const {
        const size_t n = latent_size * latent_size;
        const std::vector<size_t> latent_shape{kLatentChannels, n};
        if (x_t.shape() != latent_shape || x_o.shape() != latent_shape) {
            throw std::invalid_argument("predict_noise: latents " + shape_str(x_t.shape()) + "/" +
                                        shape_str(x_o.shape()) + " expected " +
                                        shape_str(latent_shape));
        }
        if (t >= t_max) {
            throw std::invalid_argument("predict_noise: timestep " + std::to_string(t) +
                                        " outside schedule of " + std::to_string(t_max));
        }
        if (f_ref != nullptr && f_ref->blocks.size() != depth) {
            throw std::invalid_argument("predict_noise: reference features carry " +
                                        std::to_string(f_ref->blocks.size()) + " blocks, need " +
                                        std::to_string(depth));
        }
        Tensor<T> x8 = concat_rows(x_t, x_o);
        const size_t in_dim = 2 * kLatentChannels * patch * patch;
        Tensor<T> tokens = gather_flat(x8, patch_index, {token_count(), in_dim});
        Tensor<T> h = add_rowvec(linear(tokens, in_w, in_b), timestep_embedding(t));
        for (size_t b = 0; b < depth; ++b) {
            const ReferenceKV<T>* ref = f_ref ? &f_ref->blocks[b] : nullptr;
            h = blocks[b].forward(h, &c_m, ref, lambda, mode);
        }
        Tensor<T> out_tokens = linear(ln_out(h), out_w, out_b);
        return gather_flat(out_tokens, unpatch_index, {kLatentChannels, n});
    }

    // runs this (frozen) network on the clean reference latent at t=0 with an
    // empty instruction and records each block's self-attention K/V inputs
    ReferenceFeatures<T> extract_reference_features(const Image& ref_image) const {
        Tensor<T> lat = encode_latent<T>(ref_image, latent_size);
        Tensor<T> zeros({kLatentChannels, latent_size * latent_size});
        Tensor<T> x8 = concat_rows(lat, zeros);
        const size_t in_dim = 2 * kLatentChannels * patch * patch;
        Tensor<T> tokens = gather_flat(x8, patch_index, {token_count(), in_dim});
        Tensor<T> h = add_rowvec(linear(tokens, in_w, in_b), timestep_embedding(0));
        Tensor<T> empty_cm({0, dim});
        ReferenceFeatures<T> f;
        for (size_t b = 0; b < depth; ++b) {
            Tensor<T> normed = blocks[b].ln_self(h);
            ReferenceKV<T> kv;
            kv.k = matmul(normed, blocks[b].self_attn.wk).detach();
            kv.v = matmul(normed, blocks[b].self_attn.wv).detach();
            kv.block_index = b;
            f.blocks.push_back(kv);
            h = blocks[b].forward(h, &empty_cm);
        }
        return f;
    }
};

// deep-copies the backbone (everything under `denoiser.`) into `extractor.`
// entries and returns a Denoiser bound to the copies; refer branches are not
// part of the backbone namespace and are therefore never mirrored
template <typename T>
Denoiser<T> snapshot_to_extractor(ParamMap<T>& params, const Denoiser<T>& denoiser) {
    Rng throwaway(0);
    Denoiser<T> ex = Denoiser<T>::init(params, "extractor", throwaway, denoiser.dim,
                                       denoiser.heads, denoiser.depth, denoiser.latent_size,
                                       denoiser.patch, denoiser.t_max);
    for (auto& [name, p] : params) {
        if (name.rfind("extractor.", 0) != 0) {
            continue;
        }
        const std::string source = "denoiser." + name.substr(std::string("extractor.").size());
        const Tensor<T>& src = params.at(source);
        if (src.shape() != p.shape()) {
            throw std::invalid_argument("snapshot: shape mismatch on " + name);
        }
        p.values() = src.values();
        p.set_requires_grad(false);
    }
    return ex;
}

}  // namespace refedit

#endif  // REFEDIT_DENOISER_HPP
