#ifndef REFEDIT_TRAINER_HPP
#define REFEDIT_TRAINER_HPP

// Three-phase training orchestration. Phase `instruction` trains the denoiser
// backbone and the instruction encoder from scratch; phase `refer` freezes a
// snapshot of the backbone as the detail extractor, installs the refer
// branches, and trains only those; phase `quality` unfreezes everything but
// the extractor and fine-tunes on the highest-scoring subset. Freezing is
// requires_grad: frozen parameters never receive gradients, and the optimizer
// skips parameters whose gradient buffer was never populated.

#include <filesystem>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "refedit/checkpoint.hpp"
#include "refedit/denoiser.hpp"
#include "refedit/diffusion.hpp"
#include "refedit/forge.hpp"
#include "refedit/instruction.hpp"
#include "refedit/optim.hpp"
#include "refedit/rng.hpp"

namespace refedit {

struct TrainConfig {
    std::string phase = "instruction";  // instruction | refer | quality
    size_t steps = 2000;
    size_t batch = 16;
    double lr = 1e-4;
    double p_text = 0.05, p_image = 0.05, p_both = 0.05;
    double quality_fraction = 0.038;
    double lambda = 1.0;  // refer strength while training
    uint64_t seed = 0;
    std::string wt_mode = "unit";
    size_t checkpoint_every = 0;  // 0: final write only

    void validate() const {
        if (phase != "instruction" && phase != "refer" && phase != "quality") {
            throw std::invalid_argument("unknown phase '" + phase + "'");
        }
        const double probs[] = {p_text, p_image, p_both};
        double sum = 0;
        for (double p : probs) {
            if (p < 0.0 || p > 1.0) {
                throw std::invalid_argument("dropout probabilities must lie in [0,1]");
            }
            sum += p;
        }
        if (sum > 1.0) {
            throw std::invalid_argument("dropout probabilities sum above 1");
        }
        if (batch == 0) {
            throw std::invalid_argument("batch size must be positive");
        }
        if (quality_fraction <= 0.0 || quality_fraction > 1.0) {
            throw std::invalid_argument("quality fraction must lie in (0,1]");
        }
        parse_wt_mode(wt_mode);
    }
};

// per-phase trainable set, keyed by parameter name prefix; the extractor is
// never trainable in any phase
struct FreezeMask {
    std::vector<std::string> prefixes;

    static FreezeMask for_phase(const std::string& phase) {
        if (phase == "instruction") {
            return {{"denoiser.", "instruction."}};
        }
        if (phase == "refer") {
            return {{"drra."}};
        }
        if (phase == "quality") {
            return {{"denoiser.", "instruction.", "drra."}};
        }
        throw std::invalid_argument("unknown phase '" + phase + "'");
    }

    bool trainable(const std::string& name) const {
        if (name.rfind("extractor.", 0) == 0) {
            return false;
        }
        for (const std::string& p : prefixes) {
            if (name.rfind(p, 0) == 0) {
                return true;
            }
        }
        return false;
    }
};

template <typename T>
void apply_freeze(ParamMap<T>& params, const FreezeMask& mask) {
    for (auto& [name, p] : params) {
        p.set_requires_grad(mask.trainable(name));
    }
}

// ---------------------------------------------------------------------------
// model assembly

struct ModelDims {
    size_t dim = 128;
    size_t heads = 4;
    size_t text_depth = 2;
    size_t denoiser_depth = 4;
    size_t image_size = 32;
    size_t patch = 4;
    size_t t_max = 200;
};

template <typename T>
struct Model {
    Vocabulary vocab;
    ModelDims dims;
    ParamMap<T> params;
    InstructionEncoder<T> instruction;
    Denoiser<T> denoiser;
    Denoiser<T> extractor;  // valid when has_extractor
    bool has_extractor = false;

    static Model fresh(Vocabulary vocab, uint64_t seed, const ModelDims& dims = {}) {
        Model m;
        m.vocab = std::move(vocab);
        m.dims = dims;
        Rng rng(seed);
        m.instruction = InstructionEncoder<T>::init(m.params, m.vocab.size(), rng, dims.dim,
                                                    dims.heads, dims.text_depth);
        m.denoiser = Denoiser<T>::init(m.params, "denoiser", rng, dims.dim, dims.heads,
                                       dims.denoiser_depth, dims.image_size, dims.patch,
                                       dims.t_max);
        return m;
    }

    // phase-1 -> phase-2 boundary: freeze the backbone snapshot as the detail
    // extractor and install zero-initialized refer branches
    void enter_refer_stage(uint64_t seed) {
        if (!has_extractor) {
            extractor = snapshot_to_extractor(params, denoiser);
            has_extractor = true;
        }
        if (!denoiser.has_refer_branches()) {
            Rng rng(seed);
            denoiser.add_refer_branches(params, rng);
        }
    }

    static Model from_checkpoint(const std::string& path, Vocabulary vocab,
                                 const ModelDims& dims = {}) {
        ParamMap<T> loaded = load_checkpoint<T>(path);
        Model m = fresh(std::move(vocab), 0, dims);
        if (loaded.count("extractor.in_w")) {
            m.extractor = snapshot_to_extractor(m.params, m.denoiser);
            m.has_extractor = true;
        }
        if (loaded.count("drra.block0.wkr")) {
            Rng rng(0);
            m.denoiser.add_refer_branches(m.params, rng);
        }
        for (auto& [name, p] : m.params) {
            auto it = loaded.find(name);
            if (it == loaded.end()) {
                throw std::runtime_error(path + ": missing parameter " + name);
            }
            if (it->second.shape() != p.shape()) {
                throw std::runtime_error(path + ": shape mismatch on " + name + ", file has " +
                                         shape_str(it->second.shape()) + ", model wants " +
                                         shape_str(p.shape()));
            }
            p.values() = it->second.values();
        }
        for (const auto& [name, t] : loaded) {
            if (!m.params.count(name)) {
                throw std::runtime_error(path + ": unexpected parameter " + name);
            }
        }
        return m;
    }

    void save(const std::string& path) const { save_checkpoint(params, path); }
};

// ---------------------------------------------------------------------------
// dataset

template <typename T>
struct TrainExample {
    Tensor<T> x0;  // edited latent (the target)
    Tensor<T> xo;  // original latent (the condition)
    TokenSequence tokens;
    TokenSequence ref_text;
    bool has_reference = false;
    Image reference;
};

template <typename T>
std::vector<TrainExample<T>> load_examples(const std::vector<ManifestItem>& items,
                                           const std::filesystem::path& dir,
                                           const Vocabulary& vocab, size_t image_size = 32) {
    std::vector<TrainExample<T>> out;
    out.reserve(items.size());
    for (const ManifestItem& it : items) {
        TrainExample<T> ex;
        ex.x0 = encode_latent<T>(read_ppm((dir / it.edited_path).string()), image_size);
        ex.xo = encode_latent<T>(read_ppm((dir / it.original_path).string()), image_size);
        ex.tokens = tokenize(it.instruction, vocab);
        ex.ref_text = tokenize(it.reference_text, vocab);
        if (!it.reference_path.empty()) {
            ex.reference = read_ppm((dir / it.reference_path).string());
            ex.has_reference = true;
        }
        if (!ex.tokens.placeholders.empty() && !ex.has_reference) {
            throw std::runtime_error("item " + std::to_string(it.id) +
                                     ": instruction has a placeholder but no reference");
        }
        out.push_back(std::move(ex));
    }
    return out;
}

template <typename T>
std::vector<TrainExample<T>> load_examples(const std::string& manifest_path,
                                           const Vocabulary& vocab, size_t image_size = 32) {
    std::filesystem::path dir = std::filesystem::path(manifest_path).parent_path();
    if (dir.empty()) {
        dir = ".";
    }
    return load_examples<T>(load_manifest(manifest_path), dir, vocab, image_size);
}

// ---------------------------------------------------------------------------
// condition dropout

// one uniform draw partitions each item into {drop both, drop text, drop
// image, keep}, so the marginal drop rates are p_both + p_text and
// p_both + p_image
template <typename T>
void condition_dropout(std::vector<TrainItem<T>>& batch, double p_text, double p_image,
                       double p_both, Rng& rng) {
    for (TrainItem<T>& item : batch) {
        const double u = rng.uniform();
        const bool both = u < p_both;
        const bool text = both || (u >= p_both && u < p_both + p_text);
        const bool image = both || (u >= p_both + p_text && u < p_both + p_text + p_image);
        if (text) {
            const size_t cols = item.c_m.defined() && item.c_m.ndim() == 2 ? item.c_m.shape()[1] : 0;
            item.c_m = Tensor<T>({0, cols});
        }
        if (image) {
            item.xo = Tensor<T>::zeros(item.xo.shape());
        }
    }
}

// ---------------------------------------------------------------------------
// quality subset

// keep the top round(fraction * n) items by s_er + s_txt - s_pp (high edit
// fidelity, low pre/post redundancy); ties and output order resolve by id
inline std::vector<ManifestItem> select_quality_subset(std::vector<ManifestItem> items,
                                                       double fraction) {
    if (items.empty()) {
        throw std::invalid_argument("select_quality_subset: empty manifest");
    }
    if (fraction <= 0.0 || fraction > 1.0) {
        throw std::invalid_argument("select_quality_subset: fraction must lie in (0,1]");
    }
    const size_t n = items.size();
    size_t keep = static_cast<size_t>(std::llround(fraction * double(n)));
    keep = std::min(std::max<size_t>(keep, 1), n);
    auto score = [](const ManifestItem& m) { return m.s_er + m.s_txt - m.s_pp; };
    std::sort(items.begin(), items.end(), [&](const ManifestItem& a, const ManifestItem& b) {
        const double sa = score(a), sb = score(b);
        if (sa != sb) {
            return sa > sb;
        }
        return a.id < b.id;
    });
    items.resize(keep);
    std::sort(items.begin(), items.end(),
              [](const ManifestItem& a, const ManifestItem& b) { return a.id < b.id; });
    return items;
}

// ---------------------------------------------------------------------------
// the phase loop

template <typename T>
struct PhaseResult {
    std::vector<double> losses;
};

template <typename T>
PhaseResult<T> train_phase(Model<T>& model, const std::vector<TrainExample<T>>& examples,
                           const TrainConfig& cfg, std::ostream* loss_log = nullptr,
                           const std::string& ckpt_out = "") {
    cfg.validate();
    if (examples.empty()) {
        throw std::invalid_argument("train_phase: no training examples");
    }
    if (cfg.phase == "refer") {
        model.enter_refer_stage(cfg.seed + 0x5eed);
    }
    if (cfg.phase == "quality" &&
        (!model.has_extractor || !model.denoiser.has_refer_branches())) {
        throw std::runtime_error("quality phase requires a refer-phase checkpoint");
    }
    apply_freeze(model.params, FreezeMask::for_phase(cfg.phase));

    const bool use_refs = cfg.phase != "instruction" && model.has_extractor;
    Schedule<T> schedule = Schedule<T>::linear(model.denoiser.t_max);
    const WtMode wt = parse_wt_mode(cfg.wt_mode);
    AdamW<T> opt({T(cfg.lr)});
    Rng rng(cfg.seed);

    // reference features depend only on the frozen extractor and the image;
    // compute once per example
    std::vector<std::shared_ptr<ReferenceFeatures<T>>> feat(examples.size());
    auto features_for = [&](size_t idx) -> const ReferenceFeatures<T>* {
        if (!use_refs || !examples[idx].has_reference) {
            return nullptr;
        }
        if (!feat[idx]) {
            feat[idx] = std::make_shared<ReferenceFeatures<T>>(
                model.extractor.extract_reference_features(examples[idx].reference));
        }
        return feat[idx].get();
    };

    auto model_fn = [&](const Tensor<T>& x_t, const Tensor<T>& x_o, const Tensor<T>& c_m,
                        const ReferenceFeatures<T>* f_ref, size_t t, T lambda) {
        return model.denoiser.predict_noise(x_t, x_o, c_m, f_ref, t, lambda);
    };

    PhaseResult<T> result;
    for (size_t step = 0; step < cfg.steps; ++step) {
        std::vector<TrainItem<T>> batch;
        batch.reserve(cfg.batch);
        for (size_t b = 0; b < cfg.batch; ++b) {
            const size_t idx = size_t(rng.below(examples.size()));
            const TrainExample<T>& ex = examples[idx];
            TrainItem<T> item;
            item.x0 = ex.x0;
            item.xo = ex.xo;
            item.lambda = T(cfg.lambda);
            item.f_ref = features_for(idx);
            if (ex.tokens.placeholders.empty()) {
                item.c_m = model.instruction.encode_instruction(ex.tokens, nullptr);
            } else {
                Tensor<T> pseudo = model.instruction.encode_reference(ex.reference, ex.ref_text);
                item.c_m = model.instruction.encode_instruction(ex.tokens, &pseudo);
            }
            batch.push_back(std::move(item));
        }
        condition_dropout(batch, cfg.p_text, cfg.p_image, cfg.p_both, rng);

        AdamW<T>::zero_grad(model.params);
        Tensor<T> loss = training_loss(batch, model_fn, schedule, wt, rng);
        const double loss_v = double(loss.item());
        if (!std::isfinite(loss_v)) {
            throw std::runtime_error("training diverged: non-finite loss at step " +
                                     std::to_string(step));
        }
        backward(loss);
        opt.step(model.params);

        result.losses.push_back(loss_v);
        if (loss_log != nullptr) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%zu\t%s\t%.6f", step, cfg.phase.c_str(), loss_v);
            (*loss_log) << buf << "\n";
        }
        if (!ckpt_out.empty() && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
            model.save(ckpt_out);
        }
    }
    if (!ckpt_out.empty()) {
        model.save(ckpt_out);
    }
    return result;
}

}  // namespace refedit

#endif  // REFEDIT_TRAINER_HPP
