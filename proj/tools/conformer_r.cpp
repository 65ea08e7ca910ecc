// conformer_r: featurize | synth | train | eval | score
//
// Exit codes: 0 success, 1 validation error, 2 runtime/data error.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"

#include "cfr/config.hpp"
#include "cfr/synth.hpp"
#include "cfr/train.hpp"

namespace fs = std::filesystem;
using namespace cfr;

namespace {

int worker_threads() {
    const char* env = std::getenv("CONFORMER_R_THREADS");
    if (!env) return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    int n = std::atoi(env);
    if (n < 1) throw ConfigError("CONFORMER_R_THREADS must be a positive integer");
    return n;
}

int cmd_featurize(const std::string& config_path, const std::string& manifest_path,
                  const std::string& out_dir) {
    RunConfig cfg = load_run_config(config_path);
    auto rows = load_manifest(manifest_path);
    if (rows.empty()) throw ValueError("no utterances in manifest " + manifest_path);
    for (const auto& r : rows)
        if (r.audio.empty())
            throw FormatError("manifest row " + r.utt_id + " has no audio path");
    fs::create_directories(fs::path(out_dir) / "feats");

    std::vector<ManifestRow> out_rows = rows;
    std::vector<std::string> errors(rows.size());
    std::atomic<std::size_t> next{0};
    auto work = [&]() {
        for (std::size_t i = next.fetch_add(1); i < rows.size(); i = next.fetch_add(1)) {
            try {
                auto [samples, rate] = load_pcm_wav(rows[i].audio);
                if (rate != cfg.frontend.sample_rate_hz)
                    throw FormatError(rows[i].audio + ": sample rate " + std::to_string(rate) +
                                      " does not match configured " +
                                      std::to_string(cfg.frontend.sample_rate_hz));
                auto feats = utterance_cmvn(compute_fbank(samples, cfg.frontend, rows[i].utt_id));
                std::string path =
                    (fs::path(out_dir) / "feats" / (rows[i].utt_id + ".fbk")).string();
                write_fbk(path, feats);
                out_rows[i].audio.clear();
                out_rows[i].feats = path;
                out_rows[i].frames = feats.frames;
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    int nt = std::min<int>(worker_threads(), static_cast<int>(rows.size()));
    std::vector<std::thread> pool;
    for (int t = 1; t < nt; ++t) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();

    std::vector<ManifestRow> ok;
    int failed = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (errors[i].empty()) {
            ok.push_back(out_rows[i]);
        } else {
            std::cerr << "featurize: " << rows[i].utt_id << ": " << errors[i] << '\n';
            ++failed;
        }
    }
    write_manifest((fs::path(out_dir) / "feats_manifest.jsonl").string(), ok);
    if (failed > 0) {
        std::cerr << "featurize: " << failed << " of " << rows.size() << " utterances failed\n";
        return 2;
    }
    return 0;
}

int cmd_synth(const std::string& config_path, const std::string& out_dir, std::int64_t n_utts,
              std::int64_t min_len, std::int64_t max_len, double noise, std::uint64_t seed,
              bool seed_given) {
    RunConfig cfg = load_run_config(config_path);
    SynthConfig sc;
    sc.vocab_chars = cfg.model.vocab_chars;
    sc.n_utterances = n_utts;
    sc.min_len = min_len;
    sc.max_len = max_len;
    sc.noise_level = noise;
    sc.sample_rate_hz = cfg.frontend.sample_rate_hz;
    sc.seed = seed_given ? seed : cfg.seed;
    synth_corpus(sc, out_dir);
    return 0;
}

std::vector<Sample> load_samples(const std::vector<ManifestRow>& rows, const Vocabulary& vocab) {
    auto unknown = unknown_char_counts(rows, vocab);
    if (!unknown.empty()) {
        std::ostringstream msg;
        msg << "transcripts contain characters outside the vocabulary:";
        for (const auto& [c, n] : unknown) msg << " '" << c << "' x" << n;
        throw VocabError(msg.str());
    }
    std::vector<Sample> samples;
    for (const auto& r : rows) {
        if (r.feats.empty())
            throw FormatError("manifest row " + r.utt_id + " has no feature path; run featurize");
        Sample s;
        s.utt_id = r.utt_id;
        s.feats = read_fbk(r.feats);
        s.target = vocab.encode(r.text);
        s.text = r.text;
        samples.push_back(std::move(s));
    }
    return samples;
}

int cmd_train(const std::string& config_path, const std::string& manifest_path,
              const std::string& out_dir, const std::string& resume, bool force,
              std::uint64_t seed, bool seed_given) {
    RunConfig cfg = load_run_config(config_path);
    if (seed_given) {
        cfg.seed = seed;
        cfg.train.shuffle_seed = seed;
    }
    auto rows = load_manifest(manifest_path);
    if (rows.empty()) throw ValueError("no utterances in manifest " + manifest_path);

    ConformerRModel model(cfg.model, cfg.seed);
    auto samples = load_samples(rows, model.vocab());
    OptState opt(model.params().total_numel());
    TrainProgress progress;
    if (!resume.empty()) progress = load_checkpoint(resume, model, opt, force);

    fs::create_directories(out_dir);
    {
        std::ofstream snap((fs::path(out_dir) / "config_snapshot.json").string());
        snap << run_config_to_json(cfg).dump(2) << '\n';
    }
    auto result = train_loop(model, opt, samples, cfg.train, out_dir, progress, cfg.max_steps);
    std::cout << "trained " << result.steps_done << " steps, skipped " << result.samples_skipped
              << " samples, final loss " << result.last.total << '\n';
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint,
             const std::string& manifest_path, const std::string& out_dir, bool force) {
    RunConfig cfg = load_run_config(config_path);
    auto rows = load_manifest(manifest_path);
    if (rows.empty()) throw ValueError("no utterances in manifest " + manifest_path);

    ConformerRModel model(cfg.model, cfg.seed);
    OptState opt(model.params().total_numel());
    load_checkpoint(checkpoint, model, opt, force);
    auto samples = load_samples(rows, model.vocab());
    auto result = evaluate(model, samples);

    fs::create_directories(out_dir);
    auto dump_hyps = [&](const std::string& name,
                         const std::vector<std::pair<std::string, std::string>>& hyps) {
        std::ofstream out((fs::path(out_dir) / name).string());
        for (const auto& [id, text] : hyps) out << id << '\t' << text << '\n';
    };
    dump_hyps("hyp_ctc.txt", result.ctc_hyps);
    dump_hyps("hyp_aed.txt", result.aed_hyps);
    {
        std::ofstream csv((fs::path(out_dir) / "cer_ctc.csv").string());
        write_score_csv(csv, result.ctc_score);
    }
    {
        std::ofstream csv((fs::path(out_dir) / "cer_aed.csv").string());
        write_score_csv(csv, result.aed_score);
    }
    std::cout << "ctc cer " << result.ctc_score.pooled_cer << ", aed cer "
              << result.aed_score.pooled_cer << '\n';
    return 0;
}

std::vector<std::pair<std::string, std::string>> load_trn(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open transcript file: " + path);
    std::vector<std::pair<std::string, std::string>> out;
    std::set<std::string> seen;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto tab = line.find('\t');
        std::string id = tab == std::string::npos ? line : line.substr(0, tab);
        std::string text = tab == std::string::npos ? "" : line.substr(tab + 1);
        if (!seen.insert(id).second) throw FormatError(path + ": duplicate utt_id " + id);
        out.emplace_back(id, text);
    }
    return out;
}

int cmd_score(const std::string& ref_path, const std::string& hyp_path,
              const std::string& out_path) {
    auto refs = load_trn(ref_path);
    auto hyps = load_trn(hyp_path);
    std::map<std::string, std::string> hyp_map(hyps.begin(), hyps.end());
    std::set<std::string> ref_ids;
    for (const auto& [id, text] : refs) ref_ids.insert(id);

    std::vector<std::string> extra;
    for (const auto& [id, text] : hyps)
        if (!ref_ids.count(id)) extra.push_back(id);

    std::vector<std::pair<std::string, EditCounts>> pairs;
    for (const auto& [id, text] : refs) {
        auto it = hyp_map.find(id);
        std::string hyp = it == hyp_map.end() ? "" : it->second;
        pairs.emplace_back(id, levenshtein_counts(Vocabulary::split_utf8(text),
                                                  Vocabulary::split_utf8(hyp)));
    }
    auto score = corpus_cer(pairs);
    if (out_path.empty()) {
        write_score_csv(std::cout, score);
    } else {
        std::ofstream out(out_path);
        if (!out) throw FormatError("cannot write report: " + out_path);
        write_score_csv(out, score);
    }
    if (!extra.empty()) {
        std::cerr << "score: hypothesis ids missing from reference:";
        for (const auto& id : extra) std::cerr << ' ' << id;
        std::cerr << '\n';
        return 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"conformer_r: end-to-end speech recognition kit"};
    app.require_subcommand(1);

    std::string config_path, manifest_path, out_dir = "out", resume, ref_path, hyp_path,
                checkpoint, out_path;
    std::uint64_t seed = 0;
    bool force = false;
    std::int64_t n_utts = 20, min_len = 2, max_len = 8;
    double noise = 0.0;

    auto* featurize = app.add_subcommand("featurize", "compute log-mel features for a manifest");
    featurize->add_option("--config", config_path)->required();
    featurize->add_option("--manifest", manifest_path)->required();
    featurize->add_option("--out", out_dir);

    auto* synth = app.add_subcommand("synth", "generate a deterministic tone corpus");
    synth->add_option("--config", config_path)->required();
    synth->add_option("--out", out_dir);
    synth->add_option("--n-utts", n_utts);
    synth->add_option("--min-len", min_len);
    synth->add_option("--max-len", max_len);
    synth->add_option("--noise", noise);
    auto* synth_seed = synth->add_option("--seed", seed);

    auto* train = app.add_subcommand("train", "train a model from a feature manifest");
    train->add_option("--config", config_path)->required();
    train->add_option("--manifest", manifest_path)->required();
    train->add_option("--out", out_dir);
    train->add_option("--resume", resume);
    train->add_flag("--force", force);
    auto* train_seed = train->add_option("--seed", seed);

    auto* eval_cmd = app.add_subcommand("eval", "decode and score a feature manifest");
    eval_cmd->add_option("--config", config_path)->required();
    eval_cmd->add_option("--checkpoint", checkpoint)->required();
    eval_cmd->add_option("--manifest", manifest_path)->required();
    eval_cmd->add_option("--out", out_dir);
    eval_cmd->add_flag("--force", force);

    auto* score = app.add_subcommand("score", "CER report from reference and hypothesis files");
    score->add_option("--ref", ref_path)->required();
    score->add_option("--hyp", hyp_path)->required();
    score->add_option("--out", out_path);

    try {
        app.parse(argc, argv);
        if (featurize->parsed()) return cmd_featurize(config_path, manifest_path, out_dir);
        if (synth->parsed())
            return cmd_synth(config_path, out_dir, n_utts, min_len, max_len, noise, seed,
                             synth_seed->count() > 0);
        if (train->parsed())
            return cmd_train(config_path, manifest_path, out_dir, resume, force, seed,
                             train_seed->count() > 0);
        if (eval_cmd->parsed())
            return cmd_eval(config_path, checkpoint, manifest_path, out_dir, force);
        if (score->parsed()) return cmd_score(ref_path, hyp_path, out_path);
        return 1;
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const VocabError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
