#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cfr/checkpoint.hpp"
#include "cfr/losses.hpp"
#include "cfr/metrics.hpp"
#include "cfr/model.hpp"
#include "cfr/optim.hpp"

namespace cfr {

struct Sample {
    std::string utt_id;
    FeatureMatrix feats;
    std::vector<std::int64_t> target;  // character ids, no sos/eos
    std::string text;
};

inline Tensor feature_tensor(const FeatureMatrix& f) {
    return Tensor::from_data({f.frames, f.dims}, f.data);
}

struct LossBreakdown {
    double total = 0.0;
    double ctc = 0.0;    // merged CTC-side loss
    double aed = 0.0;
    double kl = 0.0;
    double merge = 0.0;  // mean of branch CTC losses
    std::int64_t skipped = 0;
};

struct TrainConfig {
    LossWeights weights;
    bool rdrop = true;
    bool convex_merge = true;  // convex merge form; false selects the additive form
    ScheduleConfig schedule;
    std::int64_t batch_bins = 4000;
    std::int64_t accum_steps = 1;
    std::int64_t epochs = 1;
    std::uint64_t shuffle_seed = 1;

    void validate() const {
        weights.validate();
        schedule.validate();
        if (convex_merge && weights.alpha > 1.0)
            throw ConfigError("train: convex merge requires alpha <= 1");
        if (batch_bins < 1 || accum_steps < 1 || epochs < 0)
            throw ConfigError("train: batch_bins/accum_steps/epochs out of range");
    }
};

inline bool ctc_feasible(const Sample& s) {
    return subsample_out_len(s.feats.frames) >= ctc_min_frames(s.target) &&
           s.feats.frames >= min_subsample_frames();
}

namespace train_detail {

struct BranchOut {
    Tensor ctc_logits;
    Tensor branch_loss;  // weighted per-branch scalar for backward
    double ctc_value = 0.0;
    double aed_value = 0.0;
};

inline BranchOut run_branch(ConformerRModel& model, const Sample& s, const LossWeights& w,
                            double ctc_coeff, double aed_coeff, Mode mode) {
    BranchOut out;
    auto [enc, t_out] = model.encode(feature_tensor(s.feats), mode);
    out.ctc_logits = model.ctc_logits(enc);
    Tensor c = ctc_loss(out.ctc_logits, s.target, model.vocab().blank_id());
    std::vector<std::int64_t> tokens_in = {model.vocab().sos_eos_id()};
    tokens_in.insert(tokens_in.end(), s.target.begin(), s.target.end());
    std::vector<std::int64_t> tokens_out = s.target;
    tokens_out.push_back(model.vocab().sos_eos_id());
    Tensor a = aed_ce_loss(model.decode_logits(tokens_in, enc, mode), tokens_out, w.smoothing);
    out.ctc_value = c.item();
    out.aed_value = a.item();
    out.branch_loss = add(scale(c, ctc_coeff), scale(a, aed_coeff));
    return out;
}

}  // namespace train_detail

// Forward/backward over one micro-batch. Gradients for each sample are the
// per-branch passes backpropagated separately and then averaged (convex
// merge) or summed (additive), plus the KL term's own contribution; the sum
// over samples, scaled by 1/batch size, is accumulated into grad_accum.
// With dropout 0 the two branches are bit-identical, so the averaged branch
// gradient and the zero KL gradient reproduce the single-branch step
// exactly.
inline LossBreakdown run_micro_batch(ConformerRModel& model, const std::vector<Sample>& batch,
                                     const TrainConfig& cfg, std::vector<double>* grad_accum,
                                     Mode mode = Mode::Train) {
    const LossWeights& w = cfg.weights;
    LossBreakdown bd;
    std::vector<const Sample*> valid;
    for (const auto& s : batch) {
        if (!ctc_feasible(s)) {
            ++bd.skipped;
            std::fprintf(stderr, "warning: skipping %s: target of %zu needs more frames than %lld\n",
                         s.utt_id.c_str(), s.target.size(),
                         static_cast<long long>(subsample_out_len(s.feats.frames)));
            continue;
        }
        valid.push_back(&s);
    }
    if (valid.empty()) return bd;
    double sample_w = 1.0 / static_cast<double>(valid.size());
    // per-branch loss coefficients; the branch-combine step below supplies
    // the 1/2 for the convex (mean-of-branches) form on the CTC side
    double ctc_coeff = cfg.convex_merge ? (1.0 - w.beta) * (1.0 - w.alpha) : (1.0 - w.beta);
    double aed_coeff = cfg.rdrop && !cfg.convex_merge ? w.beta / 2.0 : w.beta;
    auto& reg = model.params();

    for (const Sample* sp : valid) {
        const Sample& s = *sp;
        if (!cfg.rdrop) {
            auto b = train_detail::run_branch(model, s, w, ctc_coeff, w.beta, mode);
            if (grad_accum) {
                backward(b.branch_loss, sample_w);
                auto g = reg.snapshot_grads();
                for (std::size_t i = 0; i < g.size(); ++i) (*grad_accum)[i] += g[i];
                reg.zero_grad();
            }
            double merge = b.ctc_value;
            double lc = cfg.convex_merge ? (1.0 - w.alpha) * merge : merge;
            bd.merge += merge;
            bd.ctc += lc;
            bd.aed += b.aed_value;
            bd.total += (1.0 - w.beta) * lc + w.beta * b.aed_value;
            continue;
        }
        auto b1 = train_detail::run_branch(model, s, w, ctc_coeff, aed_coeff, mode);
        auto b2 = train_detail::run_branch(model, s, w, ctc_coeff, aed_coeff, mode);
        Tensor kl = kl_bidirectional(b1.ctc_logits, b2.ctc_logits);
        if (grad_accum) {
            backward(b1.branch_loss, sample_w);
            auto g1 = reg.snapshot_grads();
            reg.zero_grad();
            backward(b2.branch_loss, sample_w);
            auto g2 = reg.snapshot_grads();
            reg.zero_grad();
            backward(kl, sample_w * (1.0 - w.beta) * w.alpha);
            auto gk = reg.snapshot_grads();
            reg.zero_grad();
            if (cfg.convex_merge)
                for (std::size_t i = 0; i < g1.size(); ++i)
                    (*grad_accum)[i] += (g1[i] + g2[i]) / 2.0 + gk[i];
            else
                for (std::size_t i = 0; i < g1.size(); ++i)
                    (*grad_accum)[i] += g1[i] + g2[i] + gk[i];
        }
        double merge = (b1.ctc_value + b2.ctc_value) / 2.0;
        double kl_v = kl.item();
        double lc = cfg.convex_merge ? (1.0 - w.alpha) * merge + w.alpha * kl_v
                                     : b1.ctc_value + b2.ctc_value + w.alpha * kl_v;
        double la = (b1.aed_value + b2.aed_value) / 2.0;
        bd.merge += merge;
        bd.kl += kl_v;
        bd.ctc += lc;
        bd.aed += la;
        bd.total += (1.0 - w.beta) * lc + w.beta * la;
    }
    double inv = 1.0 / static_cast<double>(valid.size());
    bd.total *= inv;
    bd.ctc *= inv;
    bd.aed *= inv;
    bd.kl *= inv;
    bd.merge *= inv;
    return bd;
}

struct TrainResult {
    std::int64_t steps_done = 0;
    std::int64_t samples_skipped = 0;
    LossBreakdown last;
    std::vector<std::string> checkpoint_paths;
};

// Epoch-driven training with gradient accumulation, per-step CSV metrics,
// and one checkpoint per epoch. Model state is rounded through f32 after
// each checkpoint write so a resumed run continues bit-identically.
inline TrainResult train_loop(ConformerRModel& model, OptState& opt,
                              const std::vector<Sample>& corpus, const TrainConfig& cfg,
                              const std::string& out_dir, TrainProgress progress = {},
                              std::int64_t max_steps = -1) {
    cfg.validate();
    if (corpus.empty()) throw ValueError("train_loop: empty corpus");
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    std::string metrics_path = out_dir + "/metrics.csv";
    bool fresh = progress.epoch == 0 && progress.step == 0;
    std::ofstream metrics(metrics_path, fresh ? std::ios::trunc : std::ios::app);
    if (fresh) metrics << "step,lr,loss,loss_ctc,loss_aed,loss_kl,loss_merge\n";

    std::vector<std::pair<std::string, std::int64_t>> manifest;
    for (const auto& s : corpus) manifest.emplace_back(s.utt_id, s.feats.frames);
    auto sample_by_id = [&corpus](const std::string& id) -> const Sample& {
        for (const auto& s : corpus)
            if (s.utt_id == id) return s;
        throw ValueError("train_loop: unknown utterance " + id);
    };

    TrainResult result;
    if (fresh) result.checkpoint_paths.push_back(out_dir + "/epoch0.ckpt");
    if (fresh) {
        save_checkpoint(out_dir + "/epoch0.ckpt", model, opt, progress);
        model.quantize_to_f32();
    }
    std::vector<double> grad_accum(static_cast<std::size_t>(model.params().total_numel()), 0.0);
    char line[512];
    bool stop = false;
    for (std::int64_t epoch = progress.epoch; epoch < cfg.epochs && !stop; ++epoch) {
        auto plan = plan_batches(manifest, cfg.batch_bins, cfg.shuffle_seed ^ static_cast<std::uint64_t>(epoch));
        std::size_t b = 0;
        while (b < plan.batches.size() && !stop) {
            std::fill(grad_accum.begin(), grad_accum.end(), 0.0);
            LossBreakdown acc;
            std::int64_t micros = 0;
            for (std::int64_t a = 0; a < cfg.accum_steps && b < plan.batches.size(); ++a, ++b) {
                std::vector<Sample> batch;
                for (const auto& id : plan.batches[b]) batch.push_back(sample_by_id(id));
                auto bd = run_micro_batch(model, batch, cfg, &grad_accum);
                result.samples_skipped += bd.skipped;
                acc.total += bd.total;
                acc.ctc += bd.ctc;
                acc.aed += bd.aed;
                acc.kl += bd.kl;
                acc.merge += bd.merge;
                ++micros;
            }
            double inv_accum = 1.0 / static_cast<double>(cfg.accum_steps);
            for (auto& g : grad_accum) g *= inv_accum;
            progress.step += 1;
            double lr = lr_at(progress.step, cfg.schedule);
            adam_step(model.params(), grad_accum, opt, lr);
            double im = 1.0 / static_cast<double>(micros);
            acc.total *= im;
            acc.ctc *= im;
            acc.aed *= im;
            acc.kl *= im;
            acc.merge *= im;
            std::snprintf(line, sizeof line, "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                          static_cast<long long>(progress.step), lr, acc.total, acc.ctc, acc.aed,
                          acc.kl, acc.merge);
            metrics << line;
            result.last = acc;
            ++result.steps_done;
            if (max_steps > 0 && progress.step >= max_steps) stop = true;
        }
        progress.epoch = epoch + 1;
        std::string ck = out_dir + "/epoch" + std::to_string(progress.epoch) + ".ckpt";
        save_checkpoint(ck, model, opt, progress);
        result.checkpoint_paths.push_back(ck);
        // keep in-memory state equal to what a resume would load
        model.quantize_to_f32();
        for (auto& v : opt.m) v = static_cast<double>(static_cast<float>(v));
        for (auto& v : opt.v) v = static_cast<double>(static_cast<float>(v));
    }
    return result;
}

struct EvalResult {
    CorpusScore ctc_score;
    CorpusScore aed_score;
    std::vector<std::pair<std::string, std::string>> ctc_hyps;  // utt_id, text
    std::vector<std::pair<std::string, std::string>> aed_hyps;
};

// Greedy CTC and greedy autoregressive decoding over an eval set, scored
// with pooled CER on both paths.
inline EvalResult evaluate(ConformerRModel& model, const std::vector<Sample>& eval_set,
                           std::int64_t max_decode_len = 64) {
    EvalResult out;
    std::vector<std::pair<std::string, EditCounts>> ctc_pairs, aed_pairs;
    for (const auto& s : eval_set) {
        auto [enc, t_out] = model.encode(feature_tensor(s.feats), Mode::Eval);
        auto ref_chars = Vocabulary::split_utf8(s.text);
        auto ctc_ids = ctc_greedy_decode(model.ctc_logits(enc), model.vocab().blank_id());
        std::string ctc_text = model.vocab().decode(ctc_ids);
        ctc_pairs.emplace_back(s.utt_id,
                               levenshtein_counts(ref_chars, Vocabulary::split_utf8(ctc_text)));
        out.ctc_hyps.emplace_back(s.utt_id, ctc_text);
        auto aed_ids = model.greedy_decode_aed(enc, max_decode_len);
        std::string aed_text = model.vocab().decode(aed_ids);
        aed_pairs.emplace_back(s.utt_id,
                               levenshtein_counts(ref_chars, Vocabulary::split_utf8(aed_text)));
        out.aed_hyps.emplace_back(s.utt_id, aed_text);
    }
    out.ctc_score = corpus_cer(ctc_pairs);
    out.aed_score = corpus_cer(aed_pairs);
    return out;
}

}  // namespace cfr
