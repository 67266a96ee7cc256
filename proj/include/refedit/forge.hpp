#ifndef REFEDIT_FORGE_HPP
#define REFEDIT_FORGE_HPP

// Procedural training-data forge. Scenes are 32x32 renders of 1-3 textured
// shapes on a muted gradient background, built so that every edit has an
// exact ground truth: replacing, adding, or removing an object is just
// re-rendering the same scene with a modified object list. Each scene yields
// two replace triplets (mutual reverses), one add, and one remove; references
// are background-repainted single-object views, augmented by flip/affine.
// A three-score filter (pre/post similarity, edited-vs-reference similarity,
// description agreement) trims the worst items before the manifest is
// written.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "refedit/embedder.hpp"
#include "refedit/image.hpp"
#include "refedit/instruction.hpp"
#include "refedit/rng.hpp"

namespace refedit {

inline constexpr size_t kSceneSize = 32;

inline const std::array<const char*, 10> kCategories = {
    "circle", "square", "triangle", "star", "diamond",
    "cross",  "ring",   "heart",    "moon", "arrow"};
inline const std::array<const char*, 8> kHues = {"red",  "orange", "yellow", "green",
                                                 "cyan", "blue",   "purple", "magenta"};
inline const std::array<const char*, 4> kTextures = {"solid", "striped", "dotted", "checkered"};

struct Identity {
    std::string category;
    std::string hue;
    std::string texture;
    double phase = 0.0;

    bool operator==(const Identity&) const = default;
};

struct ObjectSpec {
    Identity identity;
    double cx = 0, cy = 0, r = 0;
};

struct BgParams {
    std::array<int, 3> c0{}, c1{};
    double angle = 0.0;
    uint64_t noise_seed = 0;
};

struct SceneSpec {
    BgParams bg;
    std::vector<ObjectSpec> objects;
};

// ---------------------------------------------------------------------------
// rendering

namespace detail {

inline uint64_t hash_u64(uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace detail

inline std::array<uint8_t, 3> hue_rgb(const std::string& hue) {
    if (hue == "red") return {210, 45, 45};
    if (hue == "orange") return {230, 140, 40};
    if (hue == "yellow") return {230, 220, 50};
    if (hue == "green") return {60, 190, 70};
    if (hue == "cyan") return {50, 200, 210};
    if (hue == "blue") return {50, 90, 220};
    if (hue == "purple") return {140, 60, 200};
    if (hue == "magenta") return {220, 60, 180};
    throw std::invalid_argument("unknown hue " + hue);
}

// objects are saturated against a muted background (every hue, light or dark
// texture cell, keeps at least one channel outside the background's range),
// so edits always change pixels and diff-based checks are exact
inline std::array<uint8_t, 3> object_color(const ObjectSpec& o, size_t x, size_t y) {
    std::array<uint8_t, 3> c = hue_rgb(o.identity.hue);
    const int off = static_cast<int>(o.identity.phase * 4.0);
    const std::string& tex = o.identity.texture;
    bool dark = false;
    if (tex == "striped") {
        dark = ((static_cast<int>(x) + off) / 2) % 2 == 0;
    } else if (tex == "dotted") {
        dark = (static_cast<int>(x) + off) % 3 == 0 && (static_cast<int>(y) + off) % 3 == 0;
    } else if (tex == "checkered") {
        dark = ((static_cast<int>(x) + off) / 2 + (static_cast<int>(y) + off) / 2) % 2 == 0;
    } else if (tex != "solid") {
        throw std::invalid_argument("unknown texture " + tex);
    }
    if (dark) {
        for (uint8_t& v : c) {
            v = static_cast<uint8_t>(v * 11 / 20);
        }
    }
    return c;
}

inline bool object_member(const ObjectSpec& o, size_t x, size_t y) {
    const double dx = double(x) + 0.5 - o.cx;
    const double dy = double(y) + 0.5 - o.cy;
    const double r = o.r;
    const double d2 = dx * dx + dy * dy;
    const std::string& c = o.identity.category;
    if (c == "circle") {
        return d2 <= r * r;
    }
    if (c == "square") {
        return std::max(std::abs(dx), std::abs(dy)) <= r * 0.85;
    }
    if (c == "triangle") {  // apex up
        if (dy < -r || dy > r * 0.8) {
            return false;
        }
        return std::abs(dx) <= (dy + r) / (r * 1.8) * r * 0.95;
    }
    if (c == "star") {
        const double theta = std::atan2(dy, dx);
        const double rad =
            0.45 * r + 0.275 * r * (1.0 + std::cos(5.0 * theta + o.identity.phase * 6.283));
        return d2 <= rad * rad;
    }
    if (c == "diamond") {
        return std::abs(dx) + std::abs(dy) <= r;
    }
    if (c == "cross") {
        return (std::abs(dx) <= 0.35 * r && std::abs(dy) <= r) ||
               (std::abs(dy) <= 0.35 * r && std::abs(dx) <= r);
    }
    if (c == "ring") {
        return d2 <= r * r && d2 >= 0.55 * r * 0.55 * r;
    }
    if (c == "heart") {
        const double s = r * 0.85;
        const double ux = dx / s, uy = -dy / s + 0.25;
        const double f = ux * ux + uy * uy - 1.0;
        return f * f * f - ux * ux * uy * uy * uy <= 0.0;
    }
    if (c == "moon") {
        if (d2 > r * r) {
            return false;
        }
        const double ox = dx - 0.45 * r, oy = dy;
        return ox * ox + oy * oy > 0.49 * r * r;
    }
    if (c == "arrow") {  // pointing right
        if (dx >= 0.1 * r) {
            return dx <= r && std::abs(dy) <= (r - dx) / (0.9 * r) * 0.8 * r;
        }
        return dx >= -r && std::abs(dy) <= 0.32 * r;
    }
    throw std::invalid_argument("unknown category " + c);
}

inline std::array<uint8_t, 3> bg_color(const BgParams& bg, size_t x, size_t y) {
    const double dirx = std::cos(bg.angle), diry = std::sin(bg.angle);
    const double span = (std::abs(dirx) + std::abs(diry)) * double(kSceneSize - 1);
    const double proj = dirx * double(x) + diry * double(y) -
                        std::min(0.0, dirx) * double(kSceneSize - 1) -
                        std::min(0.0, diry) * double(kSceneSize - 1);
    const double t = span > 0 ? proj / span : 0.0;
    std::array<uint8_t, 3> out;
    for (size_t c = 0; c < 3; ++c) {
        const double base = double(bg.c0[c]) + t * double(bg.c1[c] - bg.c0[c]);
        const uint64_t h =
            detail::hash_u64(bg.noise_seed ^ (uint64_t(y) << 40) ^ (uint64_t(x) << 8) ^ c);
        const int noise = static_cast<int>(h % 11) - 5;
        out[c] = static_cast<uint8_t>(std::min(255.0, std::max(0.0, base + noise)));
    }
    return out;
}

struct RenderedScene {
    Image image;
    std::vector<Mask> masks;  // one per object, exactly the member pixels
};

inline RenderedScene render_scene(const SceneSpec& spec) {
    RenderedScene r;
    r.image = Image(kSceneSize, kSceneSize);
    r.masks.assign(spec.objects.size(), Mask(kSceneSize, kSceneSize));
    for (size_t y = 0; y < kSceneSize; ++y) {
        for (size_t x = 0; x < kSceneSize; ++x) {
            std::array<uint8_t, 3> col = bg_color(spec.bg, x, y);
            for (size_t j = 0; j < spec.objects.size(); ++j) {
                if (object_member(spec.objects[j], x, y)) {
                    col = object_color(spec.objects[j], x, y);
                    r.masks[j].set(x, y, true);
                }
            }
            uint8_t* p = r.image.px(x, y);
            p[0] = col[0];
            p[1] = col[1];
            p[2] = col[2];
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// scene generation

inline BgParams gen_background(Rng& rng) {
    BgParams bg;
    for (size_t c = 0; c < 3; ++c) {
        bg.c0[c] = 100 + static_cast<int>(rng.below(61));
        bg.c1[c] = 100 + static_cast<int>(rng.below(61));
    }
    bg.angle = rng.uniform(0.0, 6.283185307);
    bg.noise_seed = rng.next_u64();
    return bg;
}

inline Identity random_identity(Rng& rng) {
    Identity id;
    id.category = kCategories[rng.below(kCategories.size())];
    id.hue = kHues[rng.below(kHues.size())];
    id.texture = kTextures[rng.below(kTextures.size())];
    id.phase = rng.uniform();
    return id;
}

inline size_t object_area(const ObjectSpec& o) {
    size_t n = 0;
    for (size_t y = 0; y < kSceneSize; ++y) {
        for (size_t x = 0; x < kSceneSize; ++x) {
            n += object_member(o, x, y);
        }
    }
    return n;
}

inline SceneSpec gen_scene(uint64_t seed) {
    Rng rng(seed);
    SceneSpec spec;
    spec.bg = gen_background(rng);
    const size_t want = 1 + rng.below(3);
    for (size_t i = 0; i < want; ++i) {
        for (int attempt = 0; attempt < 40; ++attempt) {
            ObjectSpec o;
            o.r = rng.uniform(4.0, 8.0);
            o.cx = rng.uniform(o.r + 1.0, double(kSceneSize) - o.r - 1.0);
            o.cy = rng.uniform(o.r + 1.0, double(kSceneSize) - o.r - 1.0);
            o.identity = random_identity(rng);
            bool clear = true;
            for (const ObjectSpec& other : spec.objects) {
                const double d = std::hypot(o.cx - other.cx, o.cy - other.cy);
                if (d < o.r + other.r + 2.0) {
                    clear = false;
                    break;
                }
            }
            if (clear && object_area(o) >= 16) {
                spec.objects.push_back(o);
                break;
            }
        }
    }
    if (spec.objects.empty()) {  // unreachable in practice; keep the invariant anyway
        ObjectSpec o;
        o.identity = {"circle", "red", "solid", 0.0};
        o.cx = o.cy = kSceneSize / 2.0;
        o.r = 6.0;
        spec.objects.push_back(o);
    }
    return spec;
}

inline SceneSpec with_identity(SceneSpec spec, size_t j, Identity id) {
    spec.objects.at(j).identity = std::move(id);
    return spec;
}

inline SceneSpec only_object(const SceneSpec& spec, size_t j) {
    SceneSpec out;
    out.bg = spec.bg;
    out.objects.push_back(spec.objects.at(j));
    return out;
}

inline SceneSpec without_object(SceneSpec spec, size_t j) {
    spec.objects.erase(spec.objects.begin() + static_cast<long>(j));
    return spec;
}

// ---------------------------------------------------------------------------
// reference augmentation

struct AugmentConfig {
    double flip_prob = 0.5;
    double max_rotate_deg = 15.0;
    double max_scale_dev = 0.1;    // scale in [0.9, 1.1]
    double max_translate = 0.1;    // fraction of each dimension
};

struct AugmentedRef {
    Image image;
    Mask mask;
};

// optional horizontal flip, then one joint affine resample (nearest
// neighbor) of image and mask; if the transform empties the mask, retry up
// to three times at halved magnitude, then fall back to the flipped input
inline AugmentedRef augment_reference(const Image& img, const Mask& mask, Rng& rng,
                                      const AugmentConfig& cfg = {}) {
    const size_t w = img.width, h = img.height;
    AugmentedRef base{img, mask};
    if (rng.uniform() < cfg.flip_prob) {
        for (size_t y = 0; y < h; ++y) {
            for (size_t x = 0; x < w; ++x) {
                const uint8_t* s = img.px(w - 1 - x, y);
                uint8_t* d = base.image.px(x, y);
                d[0] = s[0];
                d[1] = s[1];
                d[2] = s[2];
                base.mask.set(x, y, mask.at(w - 1 - x, y));
            }
        }
    }
    const double cx = double(w) / 2.0, cy = double(h) / 2.0;
    for (int attempt = 0; attempt < 4; ++attempt) {
        const double m = attempt == 3 ? 0.0 : 1.0 / double(1 << attempt);
        const double th = rng.uniform(-1.0, 1.0) * cfg.max_rotate_deg * m * 0.01745329252;
        const double sc = 1.0 + rng.uniform(-1.0, 1.0) * cfg.max_scale_dev * m;
        const double tx = rng.uniform(-1.0, 1.0) * cfg.max_translate * m * double(w);
        const double ty = rng.uniform(-1.0, 1.0) * cfg.max_translate * m * double(h);
        if (th == 0.0 && sc == 1.0 && tx == 0.0 && ty == 0.0) {
            return base;
        }
        const double ct = std::cos(th), st = std::sin(th);
        AugmentedRef out{Image(w, h), Mask(w, h)};
        for (size_t y = 0; y < h; ++y) {
            for (size_t x = 0; x < w; ++x) {
                const double px = double(x) + 0.5 - cx - tx;
                const double py = double(y) + 0.5 - cy - ty;
                const double sx = (ct * px + st * py) / sc + cx;
                const double sy = (-st * px + ct * py) / sc + cy;
                const long ix = std::lround(std::floor(sx));
                const long iy = std::lround(std::floor(sy));
                const bool inside = ix >= 0 && iy >= 0 && ix < long(w) && iy < long(h);
                const size_t cxp = size_t(std::min(long(w) - 1, std::max(0l, ix)));
                const size_t cyp = size_t(std::min(long(h) - 1, std::max(0l, iy)));
                const uint8_t* s = base.image.px(cxp, cyp);
                uint8_t* d = out.image.px(x, y);
                d[0] = s[0];
                d[1] = s[1];
                d[2] = s[2];
                out.mask.set(x, y, inside && base.mask.at(size_t(ix), size_t(iy)));
            }
        }
        if (out.mask.area() > 0) {
            return out;
        }
    }
    return base;
}

// ---------------------------------------------------------------------------
// descriptions and instructions

inline std::string describe_object(const Identity& id, bool detailed = true) {
    if (detailed) {
        return id.hue + " " + id.texture + " " + id.category;
    }
    return id.category;
}

inline std::string region_word(const Mask& m) {
    double sx = 0, sy = 0;
    size_t n = 0;
    for (size_t y = 0; y < m.height; ++y) {
        for (size_t x = 0; x < m.width; ++x) {
            if (m.at(x, y)) {
                sx += double(x);
                sy += double(y);
                ++n;
            }
        }
    }
    if (n == 0) {
        return "center";
    }
    const double fx = sx / double(n), fy = sy / double(n);
    const double w = double(m.width), h = double(m.height);
    if (fx >= w / 3 && fx <= 2 * w / 3 && fy >= h / 3 && fy <= 2 * h / 3) {
        return "center";
    }
    const double ox = fx - w / 2, oy = fy - h / 2;
    if (std::abs(ox) >= std::abs(oy)) {
        return ox < 0 ? "left" : "right";
    }
    return oy < 0 ? "top" : "bottom";
}

struct ImageTriplet {
    int id = -1;
    std::string task_type;  // replace | add | remove
    Image original, edited, reference;
    bool has_reference = false;
    Mask mask;
    std::string instruction, reference_text;
    Identity identity;  // the object present in the edited image's edit region
    double s_pp = 0, s_er = 0, s_txt = 0;
};

inline std::string build_instruction(const ImageTriplet& t, const std::string& desc) {
    if (t.task_type == "replace") {
        return "replace the " + desc + " with S*";
    }
    if (t.task_type == "add") {
        return "add S* to the " + region_word(t.mask);
    }
    if (t.task_type == "remove") {
        return "remove the " + desc;
    }
    throw std::invalid_argument("unknown task type " + t.task_type);
}

// ---------------------------------------------------------------------------
// triplet construction

// background-repainted view of object j: same object, fresh background
inline RenderedScene reference_view(const SceneSpec& spec, size_t j, Rng& rng) {
    SceneSpec solo = only_object(spec, j);
    solo.bg = gen_background(rng);
    return render_scene(solo);
}

// two mutual-reverse replace triplets: repaint object j's region with a new
// identity (edited scene), and pair each direction with a background-repainted
// view of the object that appears on its edited side
inline std::vector<ImageTriplet> build_replace_triplets(const SceneSpec& spec, Rng& rng,
                                                        const AugmentConfig& aug = {}) {
    if (spec.objects.empty()) {
        return {};
    }
    const size_t j = rng.below(spec.objects.size());
    const Identity old_id = spec.objects[j].identity;
    Identity new_id = random_identity(rng);
    while (describe_object(new_id) == describe_object(old_id)) {
        new_id = random_identity(rng);
    }
    const SceneSpec spec_g = with_identity(spec, j, new_id);
    RenderedScene rs = render_scene(spec);
    RenderedScene rg = render_scene(spec_g);
    const Mask region = mask_union(rs.masks[j], rg.masks[j]);

    RenderedScene old_view = reference_view(spec, j, rng);
    AugmentedRef old_ref = augment_reference(old_view.image, old_view.masks[0], rng, aug);
    RenderedScene new_view = reference_view(spec_g, j, rng);
    AugmentedRef new_ref = augment_reference(new_view.image, new_view.masks[0], rng, aug);

    ImageTriplet a;  // edited side carries the original object
    a.task_type = "replace";
    a.original = rg.image;
    a.edited = rs.image;
    a.reference = old_ref.image;
    a.has_reference = true;
    a.mask = region;
    a.identity = old_id;
    a.reference_text = describe_object(old_id);
    a.instruction = build_instruction(a, describe_object(new_id));

    ImageTriplet b;  // the reverse edit installs the new object
    b.task_type = "replace";
    b.original = rs.image;
    b.edited = rg.image;
    b.reference = new_ref.image;
    b.has_reference = true;
    b.mask = region;
    b.identity = new_id;
    b.reference_text = describe_object(new_id);
    b.instruction = build_instruction(b, describe_object(old_id));
    return {a, b};
}

// removal re-renders without the object (exact background fill); addition is
// its reverse and carries a reference view of the object
inline std::vector<ImageTriplet> build_add_remove_triplets(const SceneSpec& spec, Rng& rng,
                                                           const AugmentConfig& aug = {}) {
    if (spec.objects.empty()) {
        return {};
    }
    const size_t j = rng.below(spec.objects.size());
    const Identity id = spec.objects[j].identity;
    RenderedScene rs = render_scene(spec);
    RenderedScene removed = render_scene(without_object(spec, j));
    RenderedScene view = reference_view(spec, j, rng);
    AugmentedRef ref = augment_reference(view.image, view.masks[0], rng, aug);

    ImageTriplet add;
    add.task_type = "add";
    add.original = removed.image;
    add.edited = rs.image;
    add.reference = ref.image;
    add.has_reference = true;
    add.mask = rs.masks[j];
    add.identity = id;
    add.reference_text = describe_object(id);
    add.instruction = build_instruction(add, describe_object(id));

    ImageTriplet rem;
    rem.task_type = "remove";
    rem.original = rs.image;
    rem.edited = removed.image;
    rem.has_reference = false;
    rem.mask = rs.masks[j];
    rem.identity = id;
    rem.instruction = build_instruction(rem, describe_object(id));
    return {add, rem};
}

// ---------------------------------------------------------------------------
// filtering

struct FilterConfig {
    double pp_drop_percentile = 95.0;  // drop items with s_pp strictly above this percentile
    double er_drop_percentile = 5.0;   // drop referenced items with s_er strictly below
    double txt_floor = 0.5;            // drop items whose description agreement is below
};

inline double percentile(std::vector<double> v, double p) {
    if (v.empty()) {
        throw std::invalid_argument("percentile of empty set");
    }
    std::sort(v.begin(), v.end());
    const double clamped = std::min(100.0, std::max(0.0, p));
    size_t rank = static_cast<size_t>(std::ceil(clamped / 100.0 * double(v.size())));
    rank = std::min(std::max<size_t>(rank, 1), v.size());
    return v[rank - 1];
}

// fraction of the identity's words (hue, texture, category) present in the
// item's descriptive text; ground-truth construction makes this 1 unless the
// text was corrupted
inline double identity_word_match(const ImageTriplet& t) {
    const std::string& text = t.task_type == "remove" ? t.instruction : t.reference_text;
    std::vector<std::string> words;
    std::string cur;
    for (char c : text + " ") {
        if (c == ' ') {
            if (!cur.empty()) {
                words.push_back(cur);
            }
            cur.clear();
        } else {
            cur += c;
        }
    }
    const std::array<std::string, 3> want = {t.identity.hue, t.identity.texture,
                                             t.identity.category};
    size_t hit = 0;
    for (const std::string& w : want) {
        hit += std::count(words.begin(), words.end(), w) > 0;
    }
    return double(hit) / double(want.size());
}

inline std::vector<ImageTriplet> apply_filters(std::vector<ImageTriplet> items,
                                               const RandomProjectionEmbedder& emb,
                                               const FilterConfig& cfg = {}) {
    if (items.empty()) {
        return items;
    }
    std::vector<double> pps, ers;
    for (ImageTriplet& t : items) {
        t.s_pp = cosine(emb.embed(t.original), emb.embed(t.edited));
        t.s_er = t.has_reference ? cosine(emb.embed(t.edited, &t.mask), emb.embed(t.reference))
                                 : 1.0;
        t.s_txt = identity_word_match(t);
        pps.push_back(t.s_pp);
        if (t.has_reference) {
            ers.push_back(t.s_er);
        }
    }
    const double pp_cut = percentile(pps, cfg.pp_drop_percentile);
    const double er_cut = ers.empty() ? 0.0 : percentile(ers, cfg.er_drop_percentile);
    std::vector<ImageTriplet> keep;
    for (ImageTriplet& t : items) {
        if (t.s_pp > pp_cut) {
            continue;
        }
        if (t.has_reference && t.s_er < er_cut) {
            continue;
        }
        if (t.s_txt < cfg.txt_floor) {
            continue;
        }
        keep.push_back(std::move(t));
    }
    return keep;
}

// ---------------------------------------------------------------------------
// manifest

struct ManifestItem {
    int id = 0;
    std::string task_type;
    std::string original_path, edited_path, reference_path, mask_path;  // reference may be empty
    std::string instruction, reference_text;
    Identity identity;
    double s_pp = 0, s_er = 0, s_txt = 0;
};

inline void write_manifest(const std::vector<ManifestItem>& items, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write manifest " + path);
    }
    for (const ManifestItem& m : items) {
        nlohmann::json j{{"id", m.id},
                         {"task_type", m.task_type},
                         {"original_path", m.original_path},
                         {"edited_path", m.edited_path},
                         {"mask_path", m.mask_path},
                         {"instruction", m.instruction},
                         {"reference_text", m.reference_text},
                         {"identity",
                          {{"category", m.identity.category},
                           {"hue", m.identity.hue},
                           {"texture", m.identity.texture},
                           {"phase", m.identity.phase}}},
                         {"scores", {{"s_pp", m.s_pp}, {"s_er", m.s_er}, {"s_txt", m.s_txt}}}};
        if (!m.reference_path.empty()) {
            j["reference_path"] = m.reference_path;
        }
        out << j.dump() << "\n";
    }
}

inline std::vector<ManifestItem> load_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot read manifest " + path);
    }
    std::vector<ManifestItem> items;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        try {
            const nlohmann::json j = nlohmann::json::parse(line);
            ManifestItem m;
            m.id = j.at("id").get<int>();
            m.task_type = j.at("task_type").get<std::string>();
            m.original_path = j.at("original_path").get<std::string>();
            m.edited_path = j.at("edited_path").get<std::string>();
            m.mask_path = j.at("mask_path").get<std::string>();
            m.instruction = j.at("instruction").get<std::string>();
            m.reference_text = j.at("reference_text").get<std::string>();
            const nlohmann::json& id = j.at("identity");
            m.identity.category = id.at("category").get<std::string>();
            m.identity.hue = id.at("hue").get<std::string>();
            m.identity.texture = id.at("texture").get<std::string>();
            m.identity.phase = id.at("phase").get<double>();
            const nlohmann::json& sc = j.at("scores");
            m.s_pp = sc.at("s_pp").get<double>();
            m.s_er = sc.at("s_er").get<double>();
            m.s_txt = sc.at("s_txt").get<double>();
            if (j.contains("reference_path")) {
                m.reference_path = j.at("reference_path").get<std::string>();
            }
            if (m.task_type != "replace" && m.task_type != "add" && m.task_type != "remove") {
                throw std::runtime_error("unknown task_type '" + m.task_type + "'");
            }
            if (m.task_type == "remove" && !m.reference_path.empty()) {
                throw std::runtime_error("remove item carries a reference");
            }
            if (m.task_type != "remove" && m.reference_path.empty()) {
                throw std::runtime_error(m.task_type + " item lacks a reference");
            }
            items.push_back(std::move(m));
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const std::runtime_error& e) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return items;
}

// ---------------------------------------------------------------------------
// dataset assembly

struct ForgeConfig {
    size_t count = 100;  // generated candidates; filtering trims ~10%
    uint64_t seed = 0;
    FilterConfig filters;
    AugmentConfig augment;
};

struct ForgeStats {
    size_t generated = 0;
    size_t retained = 0;
    std::map<std::string, size_t> task_counts;

    double retention() const {
        return generated == 0 ? 0.0 : double(retained) / double(generated);
    }
};

inline std::string item_prefix(int id) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%06d", id);
    return buf;
}

// generates cfg.count candidate items (4 per scene, per-scene forked seeds),
// filters them, and writes images + manifest + vocabulary + stats
inline ForgeStats forge_dataset(const std::string& out_dir, const ForgeConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    std::vector<ImageTriplet> items;
    for (size_t scene_i = 0; items.size() < cfg.count; ++scene_i) {
        const uint64_t scene_seed = Rng(cfg.seed).fork(scene_i).seed();
        const SceneSpec spec = gen_scene(scene_seed);
        Rng trng = Rng(scene_seed).fork(1);
        std::vector<ImageTriplet> batch = build_replace_triplets(spec, trng, cfg.augment);
        std::vector<ImageTriplet> ar = build_add_remove_triplets(spec, trng, cfg.augment);
        batch.insert(batch.end(), ar.begin(), ar.end());
        for (ImageTriplet& t : batch) {
            if (items.size() >= cfg.count) {
                break;
            }
            t.id = static_cast<int>(items.size());
            items.push_back(std::move(t));
        }
    }

    RandomProjectionEmbedder emb;
    std::vector<ImageTriplet> kept = apply_filters(std::move(items), emb, cfg.filters);

    ForgeStats stats;
    stats.generated = cfg.count;
    stats.retained = kept.size();
    std::vector<ManifestItem> manifest;
    for (const ImageTriplet& t : kept) {
        stats.task_counts[t.task_type] += 1;
        const std::string prefix = item_prefix(t.id);
        ManifestItem m;
        m.id = t.id;
        m.task_type = t.task_type;
        m.original_path = prefix + "_orig.ppm";
        m.edited_path = prefix + "_edit.ppm";
        m.mask_path = prefix + "_mask.pgm";
        m.instruction = t.instruction;
        m.reference_text = t.reference_text;
        m.identity = t.identity;
        m.s_pp = t.s_pp;
        m.s_er = t.s_er;
        m.s_txt = t.s_txt;
        write_ppm(t.original, out_dir + "/" + m.original_path);
        write_ppm(t.edited, out_dir + "/" + m.edited_path);
        write_pgm(t.mask, out_dir + "/" + m.mask_path);
        if (t.has_reference) {
            m.reference_path = prefix + "_ref.ppm";
            write_ppm(t.reference, out_dir + "/" + m.reference_path);
        }
        manifest.push_back(std::move(m));
    }
    write_manifest(manifest, out_dir + "/manifest.jsonl");
    Vocabulary::builtin().save(out_dir + "/vocab.txt");

    std::ofstream st(out_dir + "/stats.txt");
    st << "generated\t" << stats.generated << "\n";
    st << "retained\t" << stats.retained << "\n";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", stats.retention());
    st << "retention\t" << buf << "\n";
    for (const auto& [task, n] : stats.task_counts) {
        st << "task " << task << "\t" << n << "\n";
    }
    return stats;
}

}  // namespace refedit

#endif  // REFEDIT_FORGE_HPP
