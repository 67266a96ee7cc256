// refedit: forge a synthetic editing dataset, train the three phases, run
// reference-driven edits, and evaluate results. Every command is
// deterministic under --seed. Exit codes: 0 success, 1 usage, 2 I/O,
// 3 contract violation.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "refedit/config.hpp"
#include "refedit/diffusion.hpp"
#include "refedit/forge.hpp"
#include "refedit/gradsuite.hpp"
#include "refedit/metrics.hpp"
#include "refedit/trainer.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kIo = 2;
constexpr int kContract = 3;

int usage_error(const std::string& msg) {
    std::cerr << "refedit: " << msg << "\n";
    return kUsage;
}

// the library throws std::runtime_error for file problems with recognizable
// prefixes; everything else it throws is a violated contract
int classify(const std::exception& e) {
    if (dynamic_cast<const std::filesystem::filesystem_error*>(&e) != nullptr) {
        return kIo;
    }
    const std::string msg = e.what();
    for (const char* io : {"cannot read", "cannot write", "short write", "truncated"}) {
        if (msg.find(io) != std::string::npos) {
            return kIo;
        }
    }
    return kContract;
}

struct Flag {
    CLI::Option* opt = nullptr;
    std::string value;

    bool given() const { return opt != nullptr && opt->count() > 0; }
};

// precedence: flag > config value > fallback; config paths resolve relative
// to the config file, flag paths relative to the cwd
std::string resolve_path(const Flag& flag, const refedit::RunConfig& cfg,
                         const std::string& section, const std::string& key) {
    if (flag.given()) {
        return flag.value;
    }
    return cfg.get_path(section, key);
}

std::string resolve_str(const Flag& flag, const refedit::RunConfig& cfg,
                        const std::string& section, const std::string& key,
                        const std::string& fallback) {
    if (flag.given()) {
        return flag.value;
    }
    return cfg.get(section, key, fallback);
}

double resolve_double(const Flag& flag, const refedit::RunConfig& cfg, const std::string& section,
                      const std::string& key, double fallback) {
    if (flag.given()) {
        return std::stod(flag.value);
    }
    return cfg.get_double(section, key, fallback);
}

uint64_t resolve_u64(const Flag& flag, const refedit::RunConfig& cfg, const std::string& section,
                     const std::string& key, uint64_t fallback) {
    if (flag.given()) {
        return std::stoull(flag.value);
    }
    return cfg.get_u64(section, key, fallback);
}

refedit::RunConfig load_config(const Flag& config_flag) {
    if (!config_flag.given()) {
        return {};
    }
    return refedit::RunConfig::load(config_flag.value);
}

refedit::Vocabulary vocab_for_manifest(const std::string& manifest_path) {
    const auto vocab_path = std::filesystem::path(manifest_path).parent_path() / "vocab.txt";
    if (std::filesystem::exists(vocab_path)) {
        return refedit::Vocabulary::load(vocab_path.string());
    }
    return refedit::Vocabulary::builtin();
}

// ---------------------------------------------------------------------------

int cmd_forge(const Flag& config_flag, const Flag& out_flag, const Flag& count_flag,
              const Flag& seed_flag) {
    const refedit::RunConfig cfg = load_config(config_flag);
    const std::string out = resolve_path(out_flag, cfg, "forge", "out");
    if (out.empty()) {
        return usage_error("forge needs --out (or [forge] out in the config)");
    }
    refedit::ForgeConfig fc;
    fc.count = size_t(resolve_u64(count_flag, cfg, "forge", "count", fc.count));
    fc.seed = resolve_u64(seed_flag, cfg, "forge", "seed", fc.seed);
    Flag none;
    fc.filters.pp_drop_percentile =
        resolve_double(none, cfg, "forge", "pp_drop_percentile", fc.filters.pp_drop_percentile);
    fc.filters.er_drop_percentile =
        resolve_double(none, cfg, "forge", "er_drop_percentile", fc.filters.er_drop_percentile);
    fc.filters.txt_floor = resolve_double(none, cfg, "forge", "txt_floor", fc.filters.txt_floor);
    fc.augment.flip_prob = resolve_double(none, cfg, "forge", "flip_prob", fc.augment.flip_prob);
    fc.augment.max_rotate_deg =
        resolve_double(none, cfg, "forge", "max_rotate_deg", fc.augment.max_rotate_deg);
    fc.augment.max_scale_dev =
        resolve_double(none, cfg, "forge", "max_scale_dev", fc.augment.max_scale_dev);
    fc.augment.max_translate =
        resolve_double(none, cfg, "forge", "max_translate", fc.augment.max_translate);

    const refedit::ForgeStats stats = refedit::forge_dataset(out, fc);
    std::printf("forged %zu candidates, retained %zu (%.1f%%) in %s\n", stats.generated,
                stats.retained, 100.0 * stats.retention(), out.c_str());
    for (const auto& [task, n] : stats.task_counts) {
        std::printf("  %-8s %zu\n", task.c_str(), n);
    }
    return kOk;
}

int cmd_train(const Flag& config_flag, const Flag& phase_flag, const Flag& manifest_flag,
              const Flag& ckpt_in_flag, const Flag& ckpt_out_flag, const Flag& steps_flag,
              const Flag& batch_flag, const Flag& lr_flag, const Flag& seed_flag,
              const Flag& loss_log_flag) {
    const refedit::RunConfig cfg = load_config(config_flag);
    const std::string manifest = resolve_path(manifest_flag, cfg, "train", "manifest");
    const std::string ckpt_in = resolve_path(ckpt_in_flag, cfg, "train", "ckpt_in");
    const std::string ckpt_out = resolve_path(ckpt_out_flag, cfg, "train", "ckpt_out");
    if (manifest.empty()) {
        return usage_error("train needs --manifest");
    }
    if (ckpt_out.empty()) {
        return usage_error("train needs --ckpt-out");
    }

    refedit::TrainConfig tc;
    tc.phase = resolve_str(phase_flag, cfg, "train", "phase", tc.phase);
    tc.steps = size_t(resolve_u64(steps_flag, cfg, "train", "steps", tc.steps));
    tc.batch = size_t(resolve_u64(batch_flag, cfg, "train", "batch", tc.batch));
    tc.lr = resolve_double(lr_flag, cfg, "train", "lr", tc.lr);
    tc.seed = resolve_u64(seed_flag, cfg, "train", "seed", tc.seed);
    Flag none;
    tc.p_text = resolve_double(none, cfg, "train", "p_text", tc.p_text);
    tc.p_image = resolve_double(none, cfg, "train", "p_image", tc.p_image);
    tc.p_both = resolve_double(none, cfg, "train", "p_both", tc.p_both);
    tc.quality_fraction =
        resolve_double(none, cfg, "train", "quality_fraction", tc.quality_fraction);
    tc.lambda = resolve_double(none, cfg, "train", "lambda", tc.lambda);
    tc.wt_mode = cfg.get("train", "wt_mode", tc.wt_mode);
    tc.checkpoint_every =
        size_t(resolve_u64(none, cfg, "train", "checkpoint_every", tc.checkpoint_every));
    tc.validate();

    if ((tc.phase == "refer" || tc.phase == "quality") && ckpt_in.empty()) {
        std::cerr << "refedit: phase '" << tc.phase
                  << "' continues an earlier checkpoint; pass --ckpt-in (phase order: "
                     "instruction, refer, quality)\n";
        return kContract;
    }

    const refedit::Vocabulary vocab = vocab_for_manifest(manifest);
    refedit::Model<float> model =
        ckpt_in.empty() ? refedit::Model<float>::fresh(vocab, tc.seed)
                        : refedit::Model<float>::from_checkpoint(ckpt_in, vocab);

    std::vector<refedit::ManifestItem> items = refedit::load_manifest(manifest);
    if (tc.phase == "quality") {
        items = refedit::select_quality_subset(items, tc.quality_fraction);
    }
    std::filesystem::path dir = std::filesystem::path(manifest).parent_path();
    if (dir.empty()) {
        dir = ".";
    }
    const auto examples = refedit::load_examples<float>(items, dir, vocab);

    std::string loss_log_path = resolve_path(loss_log_flag, cfg, "train", "loss_log");
    if (loss_log_path.empty()) {
        loss_log_path = ckpt_out + ".loss.tsv";
    }
    std::ofstream loss_log(loss_log_path, std::ios::binary);
    if (!loss_log) {
        std::cerr << "refedit: cannot write loss log " << loss_log_path << "\n";
        return kIo;
    }

    std::printf("phase %s: %zu steps, batch %zu, %zu examples\n", tc.phase.c_str(), tc.steps,
                tc.batch, examples.size());
    const auto result = refedit::train_phase(model, examples, tc, &loss_log, ckpt_out);
    if (!result.losses.empty()) {
        std::printf("loss %.6f -> %.6f\n", result.losses.front(), result.losses.back());
    }
    std::printf("wrote %s and %s\n", ckpt_out.c_str(), loss_log_path.c_str());
    return kOk;
}

int cmd_edit(const Flag& config_flag, const Flag& ckpt_flag, const Flag& image_flag,
             const Flag& instruction_flag, const Flag& reference_flag,
             const Flag& reference_text_flag, const Flag& lambda_flag, const Flag& steps_flag,
             const Flag& text_scale_flag, const Flag& image_scale_flag, const Flag& seed_flag,
             const Flag& out_flag) {
    const refedit::RunConfig cfg = load_config(config_flag);
    const std::string ckpt = resolve_path(ckpt_flag, cfg, "edit", "ckpt");
    const std::string image_path = resolve_path(image_flag, cfg, "edit", "image");
    const std::string instruction =
        resolve_str(instruction_flag, cfg, "edit", "instruction", "");
    const std::string reference_path = resolve_path(reference_flag, cfg, "edit", "reference");
    const std::string out = resolve_path(out_flag, cfg, "edit", "out");
    if (ckpt.empty() || image_path.empty() || instruction.empty() || out.empty()) {
        return usage_error("edit needs --ckpt, --image, --instruction, and --out");
    }

    const refedit::Vocabulary vocab = refedit::Vocabulary::builtin();
    const refedit::TokenSequence tokens = refedit::tokenize(instruction, vocab);
    // the S*/reference contract is checked before any model work
    if (!tokens.placeholders.empty() && reference_path.empty()) {
        return usage_error("instruction contains S* but no --reference was given");
    }
    if (tokens.placeholders.empty() && !reference_path.empty()) {
        return usage_error("--reference was given but the instruction has no S*");
    }

    refedit::EditConfig<float> ec;
    ec.lambda = float(resolve_double(lambda_flag, cfg, "edit", "lambda", ec.lambda));
    ec.steps = size_t(resolve_u64(steps_flag, cfg, "edit", "steps", ec.steps));
    ec.text_scale = float(resolve_double(text_scale_flag, cfg, "edit", "text_scale", ec.text_scale));
    ec.image_scale =
        float(resolve_double(image_scale_flag, cfg, "edit", "image_scale", ec.image_scale));
    ec.seed = resolve_u64(seed_flag, cfg, "edit", "seed", ec.seed);

    refedit::Model<float> model = refedit::Model<float>::from_checkpoint(ckpt, vocab);
    const refedit::Image original = refedit::read_ppm(image_path);
    const refedit::Tensor<float> x_o = refedit::encode_latent<float>(original);

    refedit::Tensor<float> c_m;
    refedit::ReferenceFeatures<float> features;
    const refedit::ReferenceFeatures<float>* f_ref = nullptr;
    if (!reference_path.empty()) {
        const refedit::Image reference = refedit::read_ppm(reference_path);
        const std::string ref_text =
            resolve_str(reference_text_flag, cfg, "edit", "reference_text", "");
        refedit::Tensor<float> pseudo =
            model.instruction.encode_reference(reference, refedit::tokenize(ref_text, vocab));
        c_m = model.instruction.encode_instruction(tokens, &pseudo);
        if (model.has_extractor) {
            features = model.extractor.extract_reference_features(reference);
            f_ref = &features;
        }
    } else {
        c_m = model.instruction.encode_instruction(tokens, nullptr);
    }

    const refedit::Schedule<float> schedule = refedit::Schedule<float>::linear(model.denoiser.t_max);
    refedit::Rng rng(ec.seed);
    auto model_fn = [&](const refedit::Tensor<float>& x_t, const refedit::Tensor<float>& xo,
                        const refedit::Tensor<float>& cm,
                        const refedit::ReferenceFeatures<float>* fr, size_t t, float lambda) {
        return model.denoiser.predict_noise(x_t, xo, cm, fr, t, lambda);
    };
    const refedit::Tensor<float> x0 =
        refedit::ddim_sample(x_o, c_m, f_ref, ec, model_fn, schedule, rng);
    refedit::write_ppm(refedit::decode_latent(x0), out);
    std::printf("wrote %s\n", out.c_str());
    return kOk;
}

int cmd_eval(const Flag& config_flag, const Flag& manifest_flag, const Flag& results_flag,
             const Flag& out_flag) {
    const refedit::RunConfig cfg = load_config(config_flag);
    const std::string manifest = resolve_path(manifest_flag, cfg, "eval", "manifest");
    const std::string results = resolve_path(results_flag, cfg, "eval", "results");
    const std::string out = resolve_path(out_flag, cfg, "eval", "out");
    if (manifest.empty() || results.empty() || out.empty()) {
        return usage_error("eval needs --manifest, --results, and --out");
    }
    const refedit::EvalReport report = refedit::evaluate_manifest(manifest, results);
    std::filesystem::create_directories(out);
    refedit::write_report(report, out + "/report.txt", out + "/records.jsonl");
    std::cout << refedit::render_report(report);
    std::printf("wrote %s/report.txt and %s/records.jsonl\n", out.c_str(), out.c_str());
    return kOk;
}

int cmd_gradcheck(bool self_test) {
    const auto entries = refedit::run_grad_suite(1e-4, self_test);
    bool all_ok = true;
    std::printf("%-22s %8s %12s  %s\n", "block", "checked", "max rel err", "verdict");
    for (const auto& e : entries) {
        const char* verdict = e.pass ? (e.expect_fail ? "CAUGHT (expected fail)" : "PASS")
                                     : (e.expect_fail ? "MISSED" : "FAIL");
        std::printf("%-22s %8zu %12.3e  %s\n", e.name.c_str(), e.checked, e.rel_err, verdict);
        all_ok = all_ok && e.pass;
    }
    return all_ok ? kOk : kContract;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"reference-driven image editing: dataset forge, trainer, editor, evaluator"};
    app.require_subcommand(1);

    auto add = [](CLI::App* sub, Flag& f, const std::string& name, const std::string& desc) {
        f.opt = sub->add_option(name, f.value, desc);
    };

    CLI::App* forge = app.add_subcommand("forge", "generate a synthetic editing dataset");
    Flag f_config, f_out, f_count, f_seed;
    add(forge, f_config, "--config", "run configuration file");
    add(forge, f_out, "--out", "output dataset directory");
    add(forge, f_count, "--count", "candidate triplets to generate (default 100)");
    add(forge, f_seed, "--seed", "master seed (default 0)");

    CLI::App* train = app.add_subcommand("train", "train one phase");
    Flag t_config, t_phase, t_manifest, t_ckpt_in, t_ckpt_out, t_steps, t_batch, t_lr, t_seed,
        t_loss_log;
    add(train, t_config, "--config", "run configuration file");
    add(train, t_phase, "--phase", "instruction | refer | quality (default instruction)");
    add(train, t_manifest, "--manifest", "dataset manifest");
    add(train, t_ckpt_in, "--ckpt-in", "checkpoint to continue from");
    add(train, t_ckpt_out, "--ckpt-out", "checkpoint to write");
    add(train, t_steps, "--steps", "optimizer steps (default 2000)");
    add(train, t_batch, "--batch", "batch size (default 16)");
    add(train, t_lr, "--lr", "learning rate (default 1e-4)");
    add(train, t_seed, "--seed", "training seed (default 0)");
    add(train, t_loss_log, "--loss-log", "loss log path (default <ckpt-out>.loss.tsv)");

    CLI::App* edit = app.add_subcommand("edit", "apply an instruction to an image");
    Flag e_config, e_ckpt, e_image, e_instruction, e_reference, e_reference_text, e_lambda,
        e_steps, e_text_scale, e_image_scale, e_seed, e_out;
    add(edit, e_config, "--config", "run configuration file");
    add(edit, e_ckpt, "--ckpt", "model checkpoint");
    add(edit, e_image, "--image", "input image (32x32 ppm)");
    add(edit, e_instruction, "--instruction", "edit instruction; S* marks the reference subject");
    add(edit, e_reference, "--reference", "reference image, required iff the instruction has S*");
    add(edit, e_reference_text, "--reference-text", "words describing the reference subject");
    add(edit, e_lambda, "--lambda", "reference strength (default 1)");
    add(edit, e_steps, "--steps", "sampler steps (default 50)");
    add(edit, e_text_scale, "--text-scale", "instruction guidance (default 5)");
    add(edit, e_image_scale, "--image-scale", "image guidance (default 1.5)");
    add(edit, e_seed, "--seed", "sampling seed (default 0)");
    add(edit, e_out, "--out", "output image path");

    CLI::App* eval = app.add_subcommand("eval", "score results against a manifest");
    Flag v_config, v_manifest, v_results, v_out;
    add(eval, v_config, "--config", "run configuration file");
    add(eval, v_manifest, "--manifest", "dataset manifest");
    add(eval, v_results, "--results", "directory of produced edits, <id>.ppm each");
    add(eval, v_out, "--out", "report output directory");

    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "finite-difference check of every differentiable block");
    bool self_test = false;
    gradcheck->add_flag("--self-test", self_test,
                        "also run a deliberately wrong gradient and require it to be caught");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (forge->parsed()) {
            return cmd_forge(f_config, f_out, f_count, f_seed);
        }
        if (train->parsed()) {
            return cmd_train(t_config, t_phase, t_manifest, t_ckpt_in, t_ckpt_out, t_steps,
                             t_batch, t_lr, t_seed, t_loss_log);
        }
        if (edit->parsed()) {
            return cmd_edit(e_config, e_ckpt, e_image, e_instruction, e_reference,
                            e_reference_text, e_lambda, e_steps, e_text_scale, e_image_scale,
                            e_seed, e_out);
        }
        if (eval->parsed()) {
            return cmd_eval(v_config, v_manifest, v_results, v_out);
        }
        if (gradcheck->parsed()) {
            return cmd_gradcheck(self_test);
        }
    } catch (const std::exception& e) {
        std::cerr << "refedit: " << e.what() << "\n";
        return classify(e);
    }
    return kUsage;
}
