#pragma once

#include <cstdint>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "cfr/error.hpp"
#include "cfr/tensor.hpp"

namespace cfr {

// Best-path CTC decoding: per-frame argmax (ties to the lowest id), collapse
// adjacent repeats, then delete blanks.
inline std::vector<std::int64_t> ctc_greedy_decode(const Tensor& logits, std::int64_t blank_id) {
    if (logits.ndim() != 2) throw ShapeError("ctc_greedy_decode: logits must be [T x V]");
    std::int64_t T = logits.dim(0), V = logits.dim(1);
    std::vector<std::int64_t> out;
    std::int64_t prev = -1;
    for (std::int64_t t = 0; t < T; ++t) {
        std::int64_t best = 0;
        double best_v = logits.at(t, 0);
        for (std::int64_t k = 1; k < V; ++k)
            if (logits.at(t, k) > best_v) {
                best_v = logits.at(t, k);
                best = k;
            }
        if (best != prev && best != blank_id) out.push_back(best);
        prev = best;
    }
    return out;
}

struct EditCounts {
    std::int64_t S = 0, D = 0, I = 0, H = 0;
    std::int64_t N() const { return S + D + H; }
    std::int64_t distance() const { return S + D + I; }

    EditCounts& operator+=(const EditCounts& o) {
        S += o.S;
        D += o.D;
        I += o.I;
        H += o.H;
        return *this;
    }
};

// Unit-cost Levenshtein alignment counts. Among minimal alignments the
// traceback prefers substitution, then insertion, then deletion, so the
// split into S/D/I is deterministic.
template <typename Seq>
inline EditCounts levenshtein_counts(const Seq& ref, const Seq& hyp) {
    std::size_t n = ref.size(), m = hyp.size();
    std::vector<std::int64_t> d((n + 1) * (m + 1));
    auto at = [&](std::size_t i, std::size_t j) -> std::int64_t& { return d[i * (m + 1) + j]; };
    for (std::size_t i = 0; i <= n; ++i) at(i, 0) = static_cast<std::int64_t>(i);
    for (std::size_t j = 0; j <= m; ++j) at(0, j) = static_cast<std::int64_t>(j);
    for (std::size_t i = 1; i <= n; ++i)
        for (std::size_t j = 1; j <= m; ++j) {
            std::int64_t sub = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
            std::int64_t ins = at(i, j - 1) + 1;
            std::int64_t del = at(i - 1, j) + 1;
            at(i, j) = std::min(sub, std::min(ins, del));
        }
    EditCounts c;
    std::size_t i = n, j = m;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0 &&
            at(i, j) == at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
            if (ref[i - 1] == hyp[j - 1])
                ++c.H;
            else
                ++c.S;
            --i;
            --j;
        } else if (j > 0 && at(i, j) == at(i, j - 1) + 1) {
            ++c.I;
            --j;
        } else {
            ++c.D;
            --i;
        }
    }
    return c;
}

// (S + D + I) / N; unclamped, so plentiful insertions push it past 1.
inline double cer(const EditCounts& c, const std::string& utt_id = "") {
    if (c.N() == 0)
        throw ValueError("cer: empty reference" + (utt_id.empty() ? "" : " for utterance " + utt_id));
    return static_cast<double>(c.distance()) / static_cast<double>(c.N());
}

// 1 - CER, which equals (H - I) / N since N = S + D + H; unclamped, may be
// negative. Computed as 1 - cer so cer + cer_acc sums to exactly 1.
inline double cer_acc(const EditCounts& c, const std::string& utt_id = "") {
    if (c.N() == 0)
        throw ValueError("cer_acc: empty reference" + (utt_id.empty() ? "" : " for utterance " + utt_id));
    return 1.0 - cer(c, utt_id);
}

struct UttScore {
    std::string utt_id;
    EditCounts counts;
};

struct CorpusScore {
    std::vector<UttScore> rows;
    EditCounts total;
    double pooled_cer = 0.0;
    double pooled_cer_acc = 0.0;
};

// Pooled corpus CER: edit counts summed across utterances before dividing
// (not the mean of per-utterance CERs).
inline CorpusScore corpus_cer(const std::vector<std::pair<std::string, EditCounts>>& pairs) {
    CorpusScore out;
    for (const auto& [id, c] : pairs) {
        out.rows.push_back({id, c});
        out.total += c;
    }
    if (out.total.N() == 0) throw ValueError("corpus_cer: all references empty");
    out.pooled_cer = cer(out.total);
    out.pooled_cer_acc = cer_acc(out.total);
    return out;
}

// CSV report: utt_id,N,S,D,I,H,cer,cer_acc with a final TOTAL row.
inline void write_score_csv(std::ostream& os, const CorpusScore& score) {
    os << "utt_id,N,S,D,I,H,cer,cer_acc\n";
    auto row = [&os](const std::string& id, const EditCounts& c) {
        os << id << ',' << c.N() << ',' << c.S << ',' << c.D << ',' << c.I << ',' << c.H << ',';
        if (c.N() == 0)
            os << "nan,nan\n";
        else {
            std::ostringstream v;
            v << std::setprecision(17) << cer(c) << ',' << cer_acc(c);
            os << v.str() << '\n';
        }
    };
    for (const auto& r : score.rows) row(r.utt_id, r.counts);
    row("TOTAL", score.total);
}

}  // namespace cfr
