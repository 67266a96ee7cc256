#ifndef REFEDIT_INSTRUCTION_HPP
#define REFEDIT_INSTRUCTION_HPP

// Multi-modal instruction encoding: a template-vocabulary tokenizer, a small
// trainable text encoder, a patch-token image tower, and a query encoder that
// turns a reference image + reference text into 16 pseudo-word vectors. An
// instruction's single "S*" placeholder expands to those 16 rows before the
// text encoder runs, so downstream cross-attention sees one fused sequence.

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "refedit/image.hpp"
#include "refedit/layers.hpp"
#include "refedit/rng.hpp"
#include "refedit/tensor.hpp"

namespace refedit {

struct Vocabulary {
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kPlaceholder = 2;

    std::vector<std::string> tokens;
    std::map<std::string, int> index;

    static Vocabulary builtin() {
        Vocabulary v;
        for (const char* w :
             {"<pad>", "<unk>", "S*",
              // templates
              "replace", "the", "with", "add", "to", "remove",
              // regions
              "center", "top", "bottom", "left", "right",
              // hues
              "red", "orange", "yellow", "green", "cyan", "blue", "purple", "magenta",
              // textures
              "solid", "striped", "dotted", "checkered",
              // categories
              "circle", "square", "triangle", "star", "diamond", "cross", "ring", "heart", "moon",
              "arrow"}) {
            v.push(w);
        }
        return v;
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream in(path);
        if (!in) {
            throw std::runtime_error("cannot read vocabulary " + path);
        }
        Vocabulary v;
        std::string line;
        while (std::getline(in, line)) {
            v.push(line);
        }
        if (v.tokens.size() < 3 || v.tokens[0] != "<pad>" || v.tokens[1] != "<unk>" ||
            v.tokens[2] != "S*") {
            throw std::runtime_error(path + ": reserved ids 0/1/2 must be <pad>/<unk>/S*");
        }
        return v;
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) {
            throw std::runtime_error("cannot write vocabulary " + path);
        }
        for (const std::string& t : tokens) {
            out << t << "\n";
        }
    }

    size_t size() const { return tokens.size(); }

    int id(const std::string& word) const {
        auto it = index.find(word);
        return it == index.end() ? kUnk : it->second;
    }

private:
    void push(const std::string& w) {
        index.emplace(w, static_cast<int>(tokens.size()));
        tokens.push_back(w);
    }
};

struct TokenSequence {
    std::vector<int> ids;
    std::vector<size_t> placeholders;  // positions holding the S* id

    size_t size() const { return ids.size(); }
};

inline TokenSequence tokenize(const std::string& text, const Vocabulary& vocab) {
    TokenSequence seq;
    std::istringstream in(text);
    std::string word;
    while (in >> word) {
        int id = vocab.id(word);
        if (id == Vocabulary::kPlaceholder) {
            seq.placeholders.push_back(seq.ids.size());
        }
        seq.ids.push_back(id);
    }
    return seq;
}

inline std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab) {
    std::string out;
    for (size_t i = 0; i < seq.ids.size(); ++i) {
        if (i) out += ' ';
        out += vocab.tokens.at(static_cast<size_t>(seq.ids[i]));
    }
    return out;
}

template <typename T>
struct InstructionEncoder {
    size_t dim = 128;
    size_t heads = 4;
    size_t queries = 16;   // pseudo-word count N
    size_t max_len = 64;   // text positions after placeholder expansion
    size_t image_size = 32;
    size_t patch = 4;

    Tensor<T> token_table;  // [vocab x d], shared by text encoder and reference text
    Tensor<T> text_pos;     // [max_len x d]
    std::vector<EncoderBlock<T>> text_blocks;

    Tensor<T> patch_w, patch_b;  // [3*patch^2 x d], [d]
    Tensor<T> tower_pos;         // [tokens x d]
    std::vector<EncoderBlock<T>> tower_blocks;

    Tensor<T> query_table;  // [queries x d]
    std::vector<EncoderBlock<T>> qformer_blocks;
    Tensor<T> out_w, out_b;  // pseudo-word projection

    size_t tower_tokens() const { return (image_size / patch) * (image_size / patch); }

    static InstructionEncoder init(ParamMap<T>& params, size_t vocab_size, Rng& rng,
                                   size_t dim = 128, size_t heads = 4, size_t depth = 2) {
        InstructionEncoder e;
        e.dim = dim;
        e.heads = heads;
        const T sd = T(1) / std::sqrt(T(dim));
        const size_t hidden = 2 * dim;
        auto reg = [&](const char* name, Tensor<T> t) {
            params[std::string("instruction.") + name] = t;
            return t;
        };
        e.token_table = reg("token_table", Tensor<T>::randn({vocab_size, dim}, rng, sd));
        e.text_pos = reg("text_pos", Tensor<T>::randn({e.max_len, dim}, rng, sd));
        for (size_t b = 0; b < depth; ++b) {
            e.text_blocks.push_back(EncoderBlock<T>::init(
                params, "instruction.text" + std::to_string(b), heads, dim, hidden, false, rng));
        }
        const size_t in_dim = 3 * e.patch * e.patch;
        e.patch_w = reg("patch_w", Tensor<T>::randn({in_dim, dim}, rng, T(1) / std::sqrt(T(in_dim))));
        e.patch_b = reg("patch_b", Tensor<T>::zeros({dim}));
        e.tower_pos = reg("tower_pos", Tensor<T>::randn({e.tower_tokens(), dim}, rng, sd));
        for (size_t b = 0; b < depth; ++b) {
            e.tower_blocks.push_back(EncoderBlock<T>::init(
                params, "instruction.tower" + std::to_string(b), heads, dim, hidden, false, rng));
        }
        e.query_table = reg("queries", Tensor<T>::randn({e.queries, dim}, rng, sd));
        for (size_t b = 0; b < depth; ++b) {
            e.qformer_blocks.push_back(EncoderBlock<T>::init(
                params, "instruction.qformer" + std::to_string(b), heads, dim, hidden, true, rng));
        }
        e.out_w = reg("out_w", Tensor<T>::randn({dim, dim}, rng, sd));
        e.out_b = reg("out_b", Tensor<T>::zeros({dim}));
        return e;
    }

    // image -> patch tokens in [-1,1] -> embedded + positioned -> tower blocks
    Tensor<T> image_features(const Image& img) const {
        if (img.width != image_size || img.height != image_size) {
            throw std::invalid_argument("image_features: expected " + std::to_string(image_size) +
                                        "x" + std::to_string(image_size) + ", got " +
                                        std::to_string(img.width) + "x" +
                                        std::to_string(img.height));
        }
        const size_t side = image_size / patch;
        const size_t in_dim = 3 * patch * patch;
        Tensor<T> tokens({side * side, in_dim});
        for (size_t py = 0; py < side; ++py) {
            for (size_t px = 0; px < side; ++px) {
                T* row = tokens.data() + (py * side + px) * in_dim;
                size_t w = 0;
                for (size_t dy = 0; dy < patch; ++dy) {
                    for (size_t dx = 0; dx < patch; ++dx) {
                        const uint8_t* p = img.px(px * patch + dx, py * patch + dy);
                        for (int c = 0; c < 3; ++c) {
                            row[w++] = T(p[c]) / T(127.5) - T(1);
                        }
                    }
                }
            }
        }
        Tensor<T> h = add(linear(tokens, patch_w, patch_b), tower_pos);
        for (const auto& block : tower_blocks) {
            h = block.forward(h);
        }
        return h;
    }

    // reference image + reference text -> N pseudo-word vectors
    Tensor<T> encode_reference(const Image& ref_image, const TokenSequence& ref_text) const {
        Tensor<T> i_ref = image_features(ref_image);
        Tensor<T> joint = embedding_rows(token_table, ref_text.ids);
        joint = concat_rows(query_table, joint);
        for (const auto& block : qformer_blocks) {
            joint = block.forward(joint, &i_ref);
        }
        return linear(slice_rows(joint, 0, queries), out_w, out_b);
    }

    // token sequence (placeholder expanded to the rows of `pseudo`) -> c_m
    Tensor<T> encode_instruction(const TokenSequence& seq, const Tensor<T>* pseudo) const {
        if (seq.placeholders.size() > 1) {
            throw std::invalid_argument("encode_instruction: at most one placeholder supported");
        }
        const bool has_slot = !seq.placeholders.empty();
        if (has_slot && (pseudo == nullptr || !pseudo->defined())) {
            throw std::invalid_argument(
                "encode_instruction: placeholder present but no pseudo-words given");
        }
        if (!has_slot && pseudo != nullptr && pseudo->defined()) {
            throw std::invalid_argument(
                "encode_instruction: pseudo-words given but instruction has no placeholder");
        }
        Tensor<T> rows;
        if (!has_slot) {
            rows = embedding_rows(token_table, seq.ids);
        } else {
            const size_t at = seq.placeholders[0];
            if (pseudo->shape() != std::vector<size_t>{queries, dim}) {
                throw std::invalid_argument("encode_instruction: pseudo-words " +
                                            shape_str(pseudo->shape()) + " expected {" +
                                            std::to_string(queries) + "," + std::to_string(dim) +
                                            "}");
            }
            std::vector<int> pre(seq.ids.begin(), seq.ids.begin() + at);
            std::vector<int> post(seq.ids.begin() + at + 1, seq.ids.end());
            rows = *pseudo;
            if (!pre.empty()) {
                rows = concat_rows(embedding_rows(token_table, pre), rows);
            }
            if (!post.empty()) {
                rows = concat_rows(rows, embedding_rows(token_table, post));
            }
        }
        const size_t len = rows.shape()[0];
        if (len > max_len) {
            throw std::invalid_argument("encode_instruction: sequence length " +
                                        std::to_string(len) + " exceeds " +
                                        std::to_string(max_len));
        }
        Tensor<T> h = len == 0 ? rows : add(rows, slice_rows(text_pos, 0, len));
        for (const auto& block : text_blocks) {
            h = block.forward(h);
        }
        return h;
    }
};

}  // namespace refedit

#endif  // REFEDIT_INSTRUCTION_HPP
