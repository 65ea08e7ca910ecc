#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cfr/attention.hpp"
#include "cfr/encoder.hpp"
#include "cfr/params.hpp"

namespace cfr {

// Character vocabulary: blank = 0, real characters 1..V-2, shared
// sos/eos = V-1. Characters are UTF-8 strings so multi-byte alphabets work.
class Vocabulary {
public:
    Vocabulary() = default;

    explicit Vocabulary(const std::vector<std::string>& chars) {
        if (chars.size() < 1) throw ConfigError("vocabulary needs at least one character");
        id_to_char_.push_back("<blank>");
        for (const auto& c : chars) {
            if (char_to_id_.count(c)) throw ConfigError("duplicate vocabulary character: " + c);
            char_to_id_[c] = static_cast<std::int64_t>(id_to_char_.size());
            id_to_char_.push_back(c);
        }
        id_to_char_.push_back("<sos/eos>");
    }

    std::int64_t size() const { return static_cast<std::int64_t>(id_to_char_.size()); }
    std::int64_t blank_id() const { return 0; }
    std::int64_t sos_eos_id() const { return size() - 1; }

    std::int64_t id_of(const std::string& c) const {
        auto it = char_to_id_.find(c);
        if (it == char_to_id_.end()) throw VocabError("character not in vocabulary: '" + c + "'");
        return it->second;
    }

    bool contains(const std::string& c) const { return char_to_id_.count(c) > 0; }

    const std::string& char_of(std::int64_t id) const {
        if (id < 0 || id >= size()) throw VocabError("id out of range: " + std::to_string(id));
        return id_to_char_[static_cast<std::size_t>(id)];
    }

    // Splits UTF-8 text into characters and maps each; throws on unknowns.
    std::vector<std::int64_t> encode(const std::string& text) const {
        std::vector<std::int64_t> out;
        for (const auto& c : split_utf8(text)) out.push_back(id_of(c));
        return out;
    }

    std::string decode(const std::vector<std::int64_t>& ids) const {
        std::string out;
        for (auto id : ids)
            if (id != blank_id() && id != sos_eos_id()) out += char_of(id);
        return out;
    }

    static std::vector<std::string> split_utf8(const std::string& text) {
        std::vector<std::string> out;
        std::size_t i = 0;
        while (i < text.size()) {
            unsigned char b = static_cast<unsigned char>(text[i]);
            std::size_t len = b < 0x80 ? 1 : (b >> 5) == 0x6 ? 2 : (b >> 4) == 0xE ? 3 : 4;
            out.push_back(text.substr(i, len));
            i += len;
        }
        return out;
    }

private:
    std::map<std::string, std::int64_t> char_to_id_;
    std::vector<std::string> id_to_char_;
};

struct DecoderConfig {
    std::int64_t n_layers = 2;  // 4 at full scale
    std::int64_t d_model = 64;
    std::int64_t n_heads = 4;
    std::int64_t ff_expansion = 4;
    double dropout_p = 0.1;

    void validate() const {
        if (n_layers < 1 || d_model < 1 || n_heads < 1 || ff_expansion < 1)
            throw ConfigError("decoder: all size fields must be positive");
        if (d_model % n_heads != 0) throw ConfigError("decoder: d_model must be divisible by n_heads");
        if (dropout_p < 0.0 || dropout_p >= 1.0) throw ConfigError("decoder: dropout_p must be in [0,1)");
    }
};

struct DecoderLayerParams {
    Tensor self_ln_g, self_ln_b;
    MhaParams self_attn;
    Tensor cross_ln_g, cross_ln_b;
    MhaParams cross_attn;
    Tensor ffn_ln_g, ffn_ln_b;
    Tensor ff_w1, ff_b1, ff_w2, ff_b2;
};

struct DecoderParams {
    Tensor embed;  // [V x d_model]
    std::vector<DecoderLayerParams> layers;
    Tensor final_ln_g, final_ln_b;
    Tensor out_w, out_b;  // [d_model x V]
};

inline MhaParams make_mha_params(ParamRegistry& reg, const std::string& prefix, std::int64_t d,
                                 std::int64_t n_heads, RngState& rng) {
    MhaParams p;
    p.n_heads = n_heads;
    p.w_q = reg.xavier(prefix + ".w_q", {d, d}, rng);
    p.b_q = reg.zeros(prefix + ".b_q", {d});
    p.w_k = reg.xavier(prefix + ".w_k", {d, d}, rng);
    p.b_k = reg.zeros(prefix + ".b_k", {d});
    p.w_v = reg.xavier(prefix + ".w_v", {d, d}, rng);
    p.b_v = reg.zeros(prefix + ".b_v", {d});
    p.w_o = reg.xavier(prefix + ".w_o", {d, d}, rng);
    p.b_o = reg.zeros(prefix + ".b_o", {d});
    return p;
}

inline DecoderParams make_decoder_params(ParamRegistry& reg, const DecoderConfig& cfg,
                                         std::int64_t vocab_size, RngState& rng) {
    cfg.validate();
    DecoderParams p;
    std::int64_t d = cfg.d_model;
    p.embed = reg.xavier("dec.embed", {vocab_size, d}, rng);
    for (std::int64_t l = 0; l < cfg.n_layers; ++l) {
        std::string pre = "dec.layer" + std::to_string(l);
        DecoderLayerParams lp;
        lp.self_ln_g = reg.ones(pre + ".self.ln.g", {d});
        lp.self_ln_b = reg.zeros(pre + ".self.ln.b", {d});
        lp.self_attn = make_mha_params(reg, pre + ".self", d, cfg.n_heads, rng);
        lp.cross_ln_g = reg.ones(pre + ".cross.ln.g", {d});
        lp.cross_ln_b = reg.zeros(pre + ".cross.ln.b", {d});
        lp.cross_attn = make_mha_params(reg, pre + ".cross", d, cfg.n_heads, rng);
        lp.ffn_ln_g = reg.ones(pre + ".ffn.ln.g", {d});
        lp.ffn_ln_b = reg.zeros(pre + ".ffn.ln.b", {d});
        lp.ff_w1 = reg.xavier(pre + ".ffn.w1", {d, d * cfg.ff_expansion}, rng);
        lp.ff_b1 = reg.zeros(pre + ".ffn.b1", {d * cfg.ff_expansion});
        lp.ff_w2 = reg.xavier(pre + ".ffn.w2", {d * cfg.ff_expansion, d}, rng);
        lp.ff_b2 = reg.zeros(pre + ".ffn.b2", {d});
        p.layers.push_back(std::move(lp));
    }
    p.final_ln_g = reg.ones("dec.ln.g", {d});
    p.final_ln_b = reg.zeros("dec.ln.b", {d});
    p.out_w = reg.xavier("dec.out.w", {d, vocab_size}, rng);
    p.out_b = reg.zeros("dec.out.b", {vocab_size});
    return p;
}

// Teacher-forced decoder pass. tokens start with sos; returns [L x V] logits.
// Pre-norm layers: causal self-attention, cross-attention over the encoder
// output, feed-forward, each with a residual; final layer norm then the
// output projection.
inline Tensor decoder_forward(const std::vector<std::int64_t>& tokens, const Tensor& enc,
                              const DecoderParams& p, const DecoderConfig& cfg, Mode mode,
                              RngState& rng) {
    std::int64_t V = p.embed.dim(0);
    for (std::size_t i = 0; i < tokens.size(); ++i)
        if (tokens[i] < 0 || tokens[i] >= V)
            throw VocabError("token id " + std::to_string(tokens[i]) + " out of range at position " +
                             std::to_string(i));
    std::int64_t L = static_cast<std::int64_t>(tokens.size());
    Tensor h = add(embedding(p.embed, tokens), abs_pos_table(L, cfg.d_model));
    h = dropout(h, cfg.dropout_p, rng, mode);
    Tensor mask = causal_mask(L);
    for (const auto& layer : p.layers) {
        Tensor s_in = layer_norm(h, layer.self_ln_g, layer.self_ln_b);
        h = add(h, dropout(multi_head_attention(s_in, s_in, layer.self_attn, &mask), cfg.dropout_p,
                           rng, mode));
        Tensor c_in = layer_norm(h, layer.cross_ln_g, layer.cross_ln_b);
        h = add(h, dropout(multi_head_attention(c_in, enc, layer.cross_attn), cfg.dropout_p, rng, mode));
        Tensor f_in = layer_norm(h, layer.ffn_ln_g, layer.ffn_ln_b);
        Tensor f = relu(add_row(matmul(f_in, layer.ff_w1), layer.ff_b1));
        f = add_row(matmul(dropout(f, cfg.dropout_p, rng, mode), layer.ff_w2), layer.ff_b2);
        h = add(h, dropout(f, cfg.dropout_p, rng, mode));
    }
    h = layer_norm(h, p.final_ln_g, p.final_ln_b);
    return add_row(matmul(h, p.out_w), p.out_b);
}

// Greedy autoregressive decode: argmax of the last logit row each step
// (ties break to the lowest id), stopping at sos/eos or max_len.
inline std::vector<std::int64_t> greedy_ar_decode(const Tensor& enc, const DecoderParams& p,
                                                  const DecoderConfig& cfg, std::int64_t sos_eos_id,
                                                  std::int64_t max_len) {
    if (max_len < 1) throw ValueError("greedy_ar_decode: max_len must be >= 1");
    RngState rng;  // eval mode, unused
    std::vector<std::int64_t> tokens = {sos_eos_id};
    std::vector<std::int64_t> out;
    for (std::int64_t step = 0; step < max_len; ++step) {
        Tensor logits = decoder_forward(tokens, enc, p, cfg, Mode::Eval, rng);
        std::int64_t L = logits.dim(0), V = logits.dim(1);
        std::int64_t best = 0;
        double best_v = logits.at(L - 1, 0);
        for (std::int64_t k = 1; k < V; ++k)
            if (logits.at(L - 1, k) > best_v) {
                best_v = logits.at(L - 1, k);
                best = k;
            }
        if (best == sos_eos_id) break;
        out.push_back(best);
        tokens.push_back(best);
    }
    return out;
}

}  // namespace cfr
