#ifndef REFEDIT_EMBEDDER_HPP
#define REFEDIT_EMBEDDER_HPP

// Deterministic image embedder used by the dataset filters and the similarity
// metrics: box-downsample to 8x8 RGB, then project the 192 values through a
// fixed-seed Gaussian matrix to 32 dims. Cosine similarity on the projected
// vectors is monotone under pixel-space similarity, which is all the filters
// and the SIM metrics need.

#include <cmath>
#include <vector>

#include "refedit/image.hpp"
#include "refedit/rng.hpp"

namespace refedit {

class RandomProjectionEmbedder {
  public:
    static constexpr size_t kGrid = 8;
    static constexpr size_t kInDim = kGrid * kGrid * 3;
    static constexpr size_t kOutDim = 32;

    explicit RandomProjectionEmbedder(uint64_t seed = 0x52504a45ull) {
        Rng rng(seed);
        proj_.resize(kOutDim * kInDim);
        for (double& v : proj_) {
            v = rng.normal() / std::sqrt(double(kInDim));
        }
    }

    // mask, when given, zeroes out-of-mask pixels before downsampling so the
    // embedding describes only the masked region
    std::vector<double> embed(const Image& img, const Mask* mask = nullptr) const {
        if (img.width < kGrid || img.height < kGrid) {
            throw std::invalid_argument("embed: image smaller than the downsample grid");
        }
        std::vector<double> cells(kInDim, 0.0);
        std::vector<double> counts(kGrid * kGrid, 0.0);
        for (size_t y = 0; y < img.height; ++y) {
            const size_t gy = y * kGrid / img.height;
            for (size_t x = 0; x < img.width; ++x) {
                const size_t gx = x * kGrid / img.width;
                const bool on = mask == nullptr || mask->at(x, y);
                const uint8_t* p = img.px(x, y);
                const size_t cell = gy * kGrid + gx;
                counts[cell] += 1.0;
                if (on) {
                    for (size_t c = 0; c < 3; ++c) {
                        cells[cell * 3 + c] += double(p[c]) / 255.0;
                    }
                }
            }
        }
        for (size_t cell = 0; cell < kGrid * kGrid; ++cell) {
            for (size_t c = 0; c < 3; ++c) {
                cells[cell * 3 + c] /= counts[cell];
            }
        }
        std::vector<double> out(kOutDim, 0.0);
        for (size_t i = 0; i < kOutDim; ++i) {
            double s = 0.0;
            for (size_t j = 0; j < kInDim; ++j) {
                s += proj_[i * kInDim + j] * cells[j];
            }
            out[i] = s;
        }
        return out;
    }

  private:
    std::vector<double> proj_;
};

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("cosine: dimension mismatch");
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na < 1e-24 || nb < 1e-24) {
        return 0.0;
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace refedit

#endif  // REFEDIT_EMBEDDER_HPP
