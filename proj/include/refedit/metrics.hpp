#ifndef REFEDIT_METRICS_HPP
#define REFEDIT_METRICS_HPP

// Evaluation over a results directory: pixel distances and embedding
// similarities between produced edits and the ground-truth edited images,
// plus reference similarity on the masked foreground and background PSNR for
// removal items. All pixel metrics normalize to [0,1]; similarities report as
// cosine x 100. Items are aggregated per task and overall with arithmetic
// means, and the report is byte-stable under manifest reordering.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "refedit/embedder.hpp"
#include "refedit/forge.hpp"
#include "refedit/image.hpp"

namespace refedit {

namespace detail {

inline void check_same_size(const Image& a, const Image& b, const char* op) {
    if (a.width != b.width || a.height != b.height) {
        throw std::invalid_argument(std::string(op) + ": image sizes differ, " +
                                    std::to_string(a.width) + "x" + std::to_string(a.height) +
                                    " vs " + std::to_string(b.width) + "x" +
                                    std::to_string(b.height));
    }
}

}  // namespace detail

inline double l1(const Image& a, const Image& b) {
    detail::check_same_size(a, b, "l1");
    double sum = 0;
    for (size_t i = 0; i < a.rgb.size(); ++i) {
        sum += std::abs(double(a.rgb[i]) - double(b.rgb[i])) / 255.0;
    }
    return sum / double(a.rgb.size());
}

inline double l2(const Image& a, const Image& b) {
    detail::check_same_size(a, b, "l2");
    double sum = 0;
    for (size_t i = 0; i < a.rgb.size(); ++i) {
        const double d = (double(a.rgb[i]) - double(b.rgb[i])) / 255.0;
        sum += d * d;
    }
    return sum / double(a.rgb.size());
}

// 10*log10(1/MSE); the MSE floor of 1e-10 caps identical images at 100 dB
inline double psnr(const Image& a, const Image& b) {
    const double mse = std::max(l2(a, b), 1e-10);
    return 10.0 * std::log10(1.0 / mse);
}

// PSNR restricted to pixels the mask excludes; measures background damage
inline double psnr_outside_mask(const Image& a, const Image& b, const Mask& mask) {
    detail::check_same_size(a, b, "psnr_outside_mask");
    if (mask.width != a.width || mask.height != a.height) {
        throw std::invalid_argument("psnr_outside_mask: mask size differs from images");
    }
    double sum = 0;
    size_t n = 0;
    for (size_t y = 0; y < a.height; ++y) {
        for (size_t x = 0; x < a.width; ++x) {
            if (mask.at(x, y)) {
                continue;
            }
            const uint8_t* pa = a.px(x, y);
            const uint8_t* pb = b.px(x, y);
            for (int c = 0; c < 3; ++c) {
                const double d = (double(pa[c]) - double(pb[c])) / 255.0;
                sum += d * d;
            }
            n += 3;
        }
    }
    if (n == 0) {
        throw std::invalid_argument("psnr_outside_mask: mask covers the whole frame");
    }
    const double mse = std::max(sum / double(n), 1e-10);
    return 10.0 * std::log10(1.0 / mse);
}

// cosine of the port's embeddings, clamped to [-1,1]; a zero-norm embedding
// has no direction to compare, so it is an error here (unlike the forge
// filter, which folds it to "no similarity")
template <typename Embedder>
double embed_similarity(const Image& a, const Image& b, const Embedder& embedder) {
    const std::vector<double> ea = embedder.embed(a);
    const std::vector<double> eb = embedder.embed(b);
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < ea.size(); ++i) {
        dot += ea[i] * eb[i];
        na += ea[i] * ea[i];
        nb += eb[i] * eb[i];
    }
    if (na <= 1e-24 || nb <= 1e-24) {
        throw std::invalid_argument("embed_similarity: zero-norm embedding");
    }
    // equal or negated embeddings are exactly parallel; return the exact
    // cosine rather than the +/-ulp the sqrt round-trip would produce
    bool equal = true, negated = true;
    for (size_t i = 0; i < ea.size(); ++i) {
        equal = equal && ea[i] == eb[i];
        negated = negated && ea[i] == -eb[i];
    }
    if (equal) {
        return 1.0;
    }
    if (negated) {
        return -1.0;
    }
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// manifest evaluation

struct ItemEval {
    int id = 0;
    std::string task_type;
    std::string error;  // non-empty: item excluded, fields below unset
    double l1 = 0, l2 = 0, psnr_db = 0, sim_i = 0;
    double sim_r = 0;     // valid iff has_sim_r
    double bg_psnr = 0;   // valid iff is_remove
    bool has_sim_r = false;
    bool is_remove = false;

    bool excluded() const { return !error.empty(); }
};

struct TaskAggregate {
    std::string task;
    size_t count = 0;         // evaluated items
    size_t with_sim_r = 0;    // items contributing to sim_r
    size_t with_bg = 0;       // items contributing to bg_psnr
    double l1 = 0, l2 = 0, psnr_db = 0, sim_i = 0, sim_r = 0, bg_psnr = 0;
};

struct EvalReport {
    std::vector<ItemEval> items;        // sorted by id, excluded items included
    std::vector<TaskAggregate> tasks;   // per task, sorted by name
    TaskAggregate overall;              // task "all"
    size_t excluded_count = 0;
};

// perceptual ports that have no desk-scale implementation; the report names
// them so their absence is explicit rather than silently skipped
inline const std::vector<std::string>& unavailable_ports() {
    static const std::vector<std::string> ports = {"CLIP-T", "CLIP-IQA", "LPIPS"};
    return ports;
}

namespace detail {

inline TaskAggregate aggregate(const std::string& task, const std::vector<ItemEval>& items) {
    TaskAggregate agg;
    agg.task = task;
    for (const ItemEval& it : items) {
        if (it.excluded() || (task != "all" && it.task_type != task)) {
            continue;
        }
        agg.count += 1;
        agg.l1 += it.l1;
        agg.l2 += it.l2;
        agg.psnr_db += it.psnr_db;
        agg.sim_i += it.sim_i;
        if (it.has_sim_r) {
            agg.with_sim_r += 1;
            agg.sim_r += it.sim_r;
        }
        if (it.is_remove) {
            agg.with_bg += 1;
            agg.bg_psnr += it.bg_psnr;
        }
    }
    if (agg.count > 0) {
        agg.l1 /= double(agg.count);
        agg.l2 /= double(agg.count);
        agg.psnr_db /= double(agg.count);
        agg.sim_i /= double(agg.count);
    }
    if (agg.with_sim_r > 0) {
        agg.sim_r /= double(agg.with_sim_r);
    }
    if (agg.with_bg > 0) {
        agg.bg_psnr /= double(agg.with_bg);
    }
    return agg;
}

}  // namespace detail

template <typename Embedder = RandomProjectionEmbedder>
EvalReport evaluate_manifest(const std::string& manifest_path, const std::string& results_dir,
                             const Embedder& embedder = Embedder()) {
    std::vector<ManifestItem> manifest = load_manifest(manifest_path);
    if (manifest.empty()) {
        throw std::invalid_argument("evaluate_manifest: empty manifest " + manifest_path);
    }
    std::sort(manifest.begin(), manifest.end(),
              [](const ManifestItem& a, const ManifestItem& b) { return a.id < b.id; });
    std::filesystem::path dir = std::filesystem::path(manifest_path).parent_path();
    if (dir.empty()) {
        dir = ".";
    }

    EvalReport report;
    for (const ManifestItem& m : manifest) {
        ItemEval ev;
        ev.id = m.id;
        ev.task_type = m.task_type;
        const std::string result_path =
            (std::filesystem::path(results_dir) / (item_prefix(m.id) + ".ppm")).string();
        try {
            const Image result = read_ppm(result_path);
            const Image truth = read_ppm((dir / m.edited_path).string());
            const Mask mask = read_pgm((dir / m.mask_path).string());
            ev.l1 = l1(result, truth);
            ev.l2 = l2(result, truth);
            ev.psnr_db = psnr(result, truth);
            ev.sim_i = 100.0 * embed_similarity(result, truth, embedder);
            if (!m.reference_path.empty()) {
                const Image reference = read_ppm((dir / m.reference_path).string());
                const std::vector<double> fg = embedder.embed(result, &mask);
                const std::vector<double> ref = embedder.embed(reference);
                ev.sim_r = 100.0 * cosine(fg, ref);
                ev.has_sim_r = true;
            }
            if (m.task_type == "remove") {
                ev.bg_psnr = psnr_outside_mask(result, truth, mask);
                ev.is_remove = true;
            }
        } catch (const std::exception& e) {
            ev = ItemEval{};
            ev.id = m.id;
            ev.task_type = m.task_type;
            ev.error = e.what();
            report.excluded_count += 1;
        }
        report.items.push_back(std::move(ev));
    }

    std::vector<std::string> task_names;
    for (const ItemEval& it : report.items) {
        if (std::find(task_names.begin(), task_names.end(), it.task_type) == task_names.end()) {
            task_names.push_back(it.task_type);
        }
    }
    std::sort(task_names.begin(), task_names.end());
    for (const std::string& t : task_names) {
        report.tasks.push_back(detail::aggregate(t, report.items));
    }
    report.overall = detail::aggregate("all", report.items);
    return report;
}

// ---------------------------------------------------------------------------
// report serialization

namespace detail {

inline std::string fmt_cell(double v, bool present) {
    char buf[32];
    if (present) {
        std::snprintf(buf, sizeof(buf), "%10.4f", v);
    } else {
        std::snprintf(buf, sizeof(buf), "%10s", "-");
    }
    return buf;
}

inline void write_task_row(std::ostream& out, const TaskAggregate& a) {
    char head[48];
    std::snprintf(head, sizeof(head), "%-8s %6zu", a.task.c_str(), a.count);
    out << head << fmt_cell(a.l1, a.count > 0) << fmt_cell(a.l2, a.count > 0)
        << fmt_cell(a.psnr_db, a.count > 0) << fmt_cell(a.sim_i, a.count > 0)
        << fmt_cell(a.sim_r, a.with_sim_r > 0) << fmt_cell(a.bg_psnr, a.with_bg > 0) << "\n";
}

}  // namespace detail

inline std::string render_report(const EvalReport& report) {
    std::ostringstream out;
    out << "edit evaluation\n";
    out << "L1/L2/PSNR/SIM-I compare each result to the ground-truth edit; SIM-R compares the\n";
    out << "masked result foreground to the reference image; BG-PSNR covers pixels outside the\n";
    out << "mask on removal items.\n";
    out << "unavailable ports:";
    for (const std::string& p : unavailable_ports()) {
        out << " " << p;
    }
    out << " (each needs a pretrained perceptual model)\n\n";
    char head[120];
    std::snprintf(head, sizeof(head), "%-8s %6s%10s%10s%10s%10s%10s%10s", "task", "items", "L1",
                  "L2", "PSNR", "SIM-I", "SIM-R", "BG-PSNR");
    out << head << "\n";
    for (const TaskAggregate& a : report.tasks) {
        detail::write_task_row(out, a);
    }
    detail::write_task_row(out, report.overall);
    out << "\nexcluded: " << report.excluded_count << "\n";
    for (const ItemEval& it : report.items) {
        if (it.excluded()) {
            out << "  " << item_prefix(it.id) << ": " << it.error << "\n";
        }
    }
    return out.str();
}

// one record per manifest id, evaluated or excluded
inline void write_report(const EvalReport& report, const std::string& table_path,
                         const std::string& records_path) {
    std::ofstream table(table_path, std::ios::binary);
    if (!table) {
        throw std::runtime_error("cannot write report " + table_path);
    }
    table << render_report(report);

    std::ofstream records(records_path, std::ios::binary);
    if (!records) {
        throw std::runtime_error("cannot write report records " + records_path);
    }
    for (const ItemEval& it : report.items) {
        nlohmann::json j{{"id", it.id}, {"task_type", it.task_type}};
        if (it.excluded()) {
            j["error"] = it.error;
        } else {
            j["l1"] = it.l1;
            j["l2"] = it.l2;
            j["psnr"] = it.psnr_db;
            j["sim_i"] = it.sim_i;
            if (it.has_sim_r) {
                j["sim_r"] = it.sim_r;
            }
            if (it.is_remove) {
                j["bg_psnr"] = it.bg_psnr;
            }
        }
        records << j.dump() << "\n";
    }
}

}  // namespace refedit

#endif  // REFEDIT_METRICS_HPP
