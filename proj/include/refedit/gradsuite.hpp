#ifndef REFEDIT_GRADSUITE_HPP
#define REFEDIT_GRADSUITE_HPP

// Finite-difference verification over every differentiable block, run in the
// double instantiation where the central-difference quotient is trustworthy.
// Each entry builds a small randomized instance, takes a quadratic scalar of
// the block output, and compares backward()'s gradients against numeric
// slopes. The optional negative control routes through an op with a
// deliberately wrong backward rule and must be reported as a failure — it
// proves the harness can actually catch one.

#include <string>
#include <vector>

#include "refedit/attention.hpp"
#include "refedit/denoiser.hpp"
#include "refedit/gradcheck.hpp"
#include "refedit/instruction.hpp"

namespace refedit {

struct GradSuiteEntry {
    std::string name;
    double rel_err = 0;
    size_t checked = 0;
    bool pass = false;
    bool expect_fail = false;  // negative control: pass means "was caught"
};

namespace detail {

// squares the input but backprops 3x instead of 2x; exists only so the
// negative control has a genuinely wrong gradient to catch
template <typename T>
Tensor<T> misgraded_square(const Tensor<T>& a) {
    Tensor<T> out(a.shape());
    for (size_t i = 0; i < a.numel(); ++i) {
        out.data()[i] = a.data()[i] * a.data()[i];
    }
    attach<T>(out, {a.node}, [an = a.node](TensorNode<T>& o) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) {
                an->grad[i] += o.grad[i] * T(3) * an->value[i];
            }
        }
    });
    return out;
}

template <typename T>
Tensor<T> quadratic(const Tensor<T>& x) {
    return sum_all(mul(x, x));
}

}  // namespace detail

inline std::vector<GradSuiteEntry> run_grad_suite(double tol = 1e-4,
                                                  bool with_negative_control = false) {
    using D = double;
    std::vector<GradSuiteEntry> entries;

    auto run = [&](const std::string& name, ParamMap<D>& params, auto&& loss_fn,
                   size_t max_per_param) {
        Rng probe_rng(0xc0ffee ^ params.size());
        GradReport<D> report =
            finite_diff_check(loss_fn, params, D(1e-5), max_per_param, &probe_rng);
        GradSuiteEntry e;
        e.name = name;
        e.rel_err = report.max_rel_err;
        e.checked = report.checked;
        e.pass = report.max_rel_err < tol;
        entries.push_back(e);
    };

    {
        Rng rng(11);
        ParamMap<D> params;
        params["a"] = Tensor<D>::randn({3, 4}, rng);
        params["b"] = Tensor<D>::randn({4, 2}, rng);
        run(
            "matmul", params,
            [&] { return detail::quadratic(matmul(params.at("a"), params.at("b"))); }, 64);
    }
    {
        Rng rng(12);
        ParamMap<D> params;
        params["x"] = Tensor<D>::randn({2, 5}, rng);
        run(
            "softmax", params,
            [&] { return sum_all(mul(softmax_rows(params.at("x")), params.at("x"))); }, 64);
    }
    {
        Rng rng(13);
        ParamMap<D> params;
        AttentionParams<D> attn = AttentionParams<D>::init(params, "attn", 2, 8, rng);
        params["input.x"] = Tensor<D>::randn({5, 8}, rng);
        run(
            "self_attention", params,
            [&] { return detail::quadratic(self_attention(params.at("input.x"), attn)); }, 48);
    }
    {
        Rng rng(14);
        ParamMap<D> params;
        AttentionParams<D> attn = AttentionParams<D>::init(params, "attn", 2, 8, rng);
        params["input.x"] = Tensor<D>::randn({5, 8}, rng);
        params["input.kr"] = Tensor<D>::randn({3, 8}, rng);
        params["input.vr"] = Tensor<D>::randn({3, 8}, rng);
        run(
            "rasa", params,
            [&] {
                ReferenceKV<D> ref{params.at("input.kr"), params.at("input.vr"), 0};
                return detail::quadratic(rasa(params.at("input.x"), ref, attn));
            },
            48);
    }
    {
        Rng rng(15);
        ParamMap<D> params;
        AttentionParams<D> attn = AttentionParams<D>::init(params, "attn", 2, 8, rng);
        attn.add_refer_branch(params, "attn.refer", rng);
        // the refer output projection initializes at zero; give it signal so
        // its upstream gradients are nonzero under the probe
        for (D& v : params.at("attn.refer.wor").values()) {
            v = rng.normal() * 0.35;
        }
        for (D& v : params.at("attn.refer.bor").values()) {
            v = rng.normal() * 0.1;
        }
        params["input.x"] = Tensor<D>::randn({5, 8}, rng);
        params["input.kr"] = Tensor<D>::randn({3, 8}, rng);
        params["input.vr"] = Tensor<D>::randn({3, 8}, rng);
        run(
            "drra", params,
            [&] {
                ReferenceKV<D> ref{params.at("input.kr"), params.at("input.vr"), 0};
                return detail::quadratic(drra(params.at("input.x"), ref, D(0.7), attn));
            },
            48);
    }
    {
        Rng rng(16);
        ParamMap<D> params;
        Denoiser<D> den = Denoiser<D>::init(params, "denoiser", rng, 8, 2, 1, 4, 2, 50);
        den.add_refer_branches(params, rng);
        // the output projections initialize at zero, which would make this
        // loss identically zero and the check vacuous; give them signal
        for (const char* zeroed : {"denoiser.out_w", "denoiser.out_b", "drra.block0.wor",
                                   "drra.block0.bor"}) {
            for (D& v : params.at(zeroed).values()) {
                v = rng.normal() * 0.3;
            }
        }
        params["input.x_t"] = Tensor<D>::randn({4, 16}, rng);
        params["input.x_o"] = Tensor<D>::randn({4, 16}, rng);
        params["input.c_m"] = Tensor<D>::randn({3, 8}, rng);
        params["input.fk"] = Tensor<D>::randn({3, 8}, rng);
        params["input.fv"] = Tensor<D>::randn({3, 8}, rng);
        run(
            "denoiser_block", params,
            [&] {
                ReferenceFeatures<D> fr;
                fr.blocks.push_back(
                    ReferenceKV<D>{params.at("input.fk"), params.at("input.fv"), 0});
                return detail::quadratic(den.predict_noise(params.at("input.x_t"),
                                                           params.at("input.x_o"),
                                                           params.at("input.c_m"), &fr, 7,
                                                           D(0.9)));
            },
            24);
    }
    {
        Rng rng(17);
        const Vocabulary vocab = Vocabulary::builtin();
        ParamMap<D> params;
        InstructionEncoder<D> enc =
            InstructionEncoder<D>::init(params, vocab.size(), rng, 8, 2, 1);
        Image ref_img(32, 32);
        for (uint8_t& v : ref_img.rgb) {
            v = uint8_t(rng.below(256));
        }
        const TokenSequence ref_text = tokenize("red striped circle", vocab);
        const TokenSequence seq = tokenize("replace the red circle with S*", vocab);
        run(
            "qformer_instruction", params,
            [&] {
                Tensor<D> pseudo = enc.encode_reference(ref_img, ref_text);
                return detail::quadratic(enc.encode_instruction(seq, &pseudo));
            },
            16);
    }

    if (with_negative_control) {
        Rng rng(18);
        ParamMap<D> params;
        params["x"] = Tensor<D>::randn({3, 3}, rng);
        Rng probe_rng(0xbad);
        GradReport<D> report = finite_diff_check(
            [&] { return sum_all(detail::misgraded_square(params.at("x"))); }, params, D(1e-5),
            16, &probe_rng);
        GradSuiteEntry e;
        e.name = "negative_control";
        e.rel_err = report.max_rel_err;
        e.checked = report.checked;
        e.expect_fail = true;
        e.pass = report.max_rel_err >= tol;  // pass means the wrong grad was caught
        entries.push_back(e);
    }
    return entries;
}

}  // namespace refedit

#endif  // REFEDIT_GRADSUITE_HPP
