#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cfr/decoder.hpp"
#include "cfr/encoder.hpp"
#include "cfr/frontend.hpp"
#include "cfr/losses.hpp"
#include "cfr/params.hpp"

namespace cfr {

struct ModelConfig {
    ConformerConfig encoder;
    DecoderConfig decoder;
    std::vector<std::string> vocab_chars;

    void validate() const {
        encoder.validate();
        decoder.validate();
        if (encoder.d_model != decoder.d_model)
            throw ConfigError("encoder and decoder d_model must match");
        if (vocab_chars.size() < 1) throw ConfigError("vocabulary must not be empty");
    }

    // Canonical description used for the checkpoint compatibility hash.
    std::string canonical() const {
        std::ostringstream os;
        os << "enc:" << encoder.n_blocks << ',' << encoder.d_model << ',' << encoder.n_heads << ','
           << encoder.ff_expansion << ',' << encoder.depthwise_kernel << ',' << encoder.dropout_p
           << ',' << encoder.subsample_channels << ',' << encoder.n_mels << ";dec:" << decoder.n_layers
           << ',' << decoder.d_model << ',' << decoder.n_heads << ',' << decoder.ff_expansion << ','
           << decoder.dropout_p << ";vocab:";
        for (const auto& c : vocab_chars) os << c << '|';
        return os.str();
    }
};

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

// The full Conformer-R model: subsampling encoder stack, CTC head, and
// Transformer decoder, with every trainable tensor in one registry and the
// batch-norm running stats tracked as named state buffers.
class ConformerRModel {
public:
    ConformerRModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), vocab_(cfg_.vocab_chars) {
        cfg_.validate();
        RngState init_rng{seed, 0};
        enc_ = make_encoder_params(reg_, cfg_.encoder, init_rng);
        ctc_w_ = reg_.xavier("ctc.w", {cfg_.encoder.d_model, vocab_.size()}, init_rng);
        ctc_b_ = reg_.zeros("ctc.b", {vocab_.size()});
        dec_ = make_decoder_params(reg_, cfg_.decoder, vocab_.size(), init_rng);
        for (std::size_t b = 0; b < enc_.blocks.size(); ++b) {
            auto& st = enc_.blocks[b].conv.bn_stats;
            state_.emplace_back("enc.block" + std::to_string(b) + ".conv.bn.mean", &st->running_mean);
            state_.emplace_back("enc.block" + std::to_string(b) + ".conv.bn.var", &st->running_var);
        }
        dropout_rng_.seed = seed ^ 0x9e3779b97f4a7c15ULL;
    }

    const ModelConfig& config() const { return cfg_; }
    const Vocabulary& vocab() const { return vocab_; }
    ParamRegistry& params() { return reg_; }
    RngState& dropout_rng() { return dropout_rng_; }
    std::uint64_t config_hash() const { return fnv1a(cfg_.canonical()); }

    std::pair<Tensor, std::int64_t> encode(const Tensor& feats, Mode mode) {
        return encoder_forward(feats, enc_, cfg_.encoder, mode, dropout_rng_);
    }

    Tensor ctc_logits(const Tensor& enc_out) { return add_row(matmul(enc_out, ctc_w_), ctc_b_); }

    Tensor decode_logits(const std::vector<std::int64_t>& tokens_with_sos, const Tensor& enc_out,
                         Mode mode) {
        return decoder_forward(tokens_with_sos, enc_out, dec_, cfg_.decoder, mode, dropout_rng_);
    }

    std::vector<std::int64_t> greedy_decode_aed(const Tensor& enc_out, std::int64_t max_len) {
        return greedy_ar_decode(enc_out, dec_, cfg_.decoder, vocab_.sos_eos_id(), max_len);
    }

    const EncoderParams& encoder_params() const { return enc_; }
    const DecoderParams& decoder_params() const { return dec_; }

    // ---- checkpoint buffers ----

    std::vector<std::pair<std::string, std::vector<double>*>>& state_buffers() { return state_; }

    // Rounds parameters and state through f32, the checkpoint precision, so
    // in-memory state after an epoch equals the state a resumed run loads.
    void quantize_to_f32() {
        for (auto& [name, t] : reg_.items())
            for (auto& v : t.data()) v = static_cast<double>(static_cast<float>(v));
        for (auto& [name, buf] : state_)
            for (auto& v : *buf) v = static_cast<double>(static_cast<float>(v));
    }

private:
    ModelConfig cfg_;
    Vocabulary vocab_;
    ParamRegistry reg_;
    EncoderParams enc_;
    Tensor ctc_w_, ctc_b_;
    DecoderParams dec_;
    RngState dropout_rng_;
    std::vector<std::pair<std::string, std::vector<double>*>> state_;
};

}  // namespace cfr
