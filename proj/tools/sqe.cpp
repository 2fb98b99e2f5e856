// sqe: train a tiny autoregressive LM with a softmax head, attach a
// sigmoid unembedding head for quality estimation, and evaluate both
// against gold scores.

#include "sqe/checkpoint.hpp"
#include "sqe/corpus.hpp"
#include "sqe/decode.hpp"
#include "sqe/dump.hpp"
#include "sqe/head.hpp"
#include "sqe/model.hpp"
#include "sqe/neg_sampling.hpp"
#include "sqe/qe.hpp"
#include "sqe/report.hpp"
#include "sqe/synth.hpp"
#include "sqe/train_lm.hpp"
#include "sqe/vocab.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace {

using nlohmann::json;

struct Common {
    uint64_t seed = 1;
    std::string out_dir = ".";
    int jobs = 1;
};

void add_common(CLI::App * cmd, Common & c) {
    cmd->add_option("--seed", c.seed, "RNG seed (u64)")->capture_default_str();
    cmd->add_option("--out_dir", c.out_dir, "output directory")->capture_default_str();
    cmd->add_option("--jobs", c.jobs, "worker threads for evaluation")->capture_default_str();
    cmd->set_config("--config", "", "key=value config file; flags win");
    cmd->allow_config_extras(false);
}

void ensure_out_dir(const std::string & dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw sqe::data_error("cannot create output directory: " + dir);
    }
}

json input_hashes(const std::vector<std::pair<std::string, std::string>> & files) {
    json j = json::object();
    for (const auto & [name, path] : files) {
        j[name] = {{"path", path}, {"fnv1a64", sqe::hex64(sqe::file_hash(path))}};
    }
    return j;
}

// Every run leaves its resolved configuration and input fingerprints next
// to its outputs.
void write_manifest(const std::string & out_dir, const std::string & command, const json & config,
                    const json & inputs, const std::vector<std::string> & outputs) {
    json j;
    j["command"] = command;
    j["config"] = config;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    std::ofstream out(out_dir + "/" + command + "-run.json", std::ios::binary);
    if (!out) {
        throw sqe::data_error("cannot write run manifest in " + out_dir);
    }
    out << j.dump(2) << '\n';
}

struct LmFlags {
    int d_model = 32;
    int n_layers = 1;
    int n_heads = 2;
    int d_ff = 64;
    int max_seq_len = 0;  // 0 = longest packed example + headroom
    double learning_rate = 1e-2;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip = 1.0;
    int batch_size = 8;
    int epochs = 200;
    bool tie_unembedding = false;
    bool use_out_bias = true;
};

void add_lm_flags(CLI::App * cmd, LmFlags & f) {
    cmd->add_option("--lm.d_model", f.d_model)->capture_default_str();
    cmd->add_option("--lm.n_layers", f.n_layers)->capture_default_str();
    cmd->add_option("--lm.n_heads", f.n_heads)->capture_default_str();
    cmd->add_option("--lm.d_ff", f.d_ff)->capture_default_str();
    cmd->add_option("--lm.max_seq_len", f.max_seq_len, "0 = fit the corpus")->capture_default_str();
    cmd->add_option("--lm.learning_rate", f.learning_rate)->capture_default_str();
    cmd->add_option("--lm.adam_beta1", f.adam_beta1)->capture_default_str();
    cmd->add_option("--lm.adam_beta2", f.adam_beta2)->capture_default_str();
    cmd->add_option("--lm.adam_eps", f.adam_eps)->capture_default_str();
    cmd->add_option("--lm.grad_clip", f.grad_clip)->capture_default_str();
    cmd->add_option("--lm.batch_size", f.batch_size)->capture_default_str();
    cmd->add_option("--lm.epochs", f.epochs)->capture_default_str();
    cmd->add_flag("--lm.tie_unembedding", f.tie_unembedding)->capture_default_str();
    cmd->add_option("--lm.use_out_bias", f.use_out_bias)->capture_default_str();
}

struct NsFlags {
    std::string strategy = "tokenfreq";  // random | tokenfreq | softmax | softmax_tokenfreq
    double temperature = 1.0;
    std::vector<double> mixture_weights = {0.5, 0.5};
    bool avoid_dominant = false;
    int n_negatives = 10;
};

void add_ns_flags(CLI::App * cmd, NsFlags & f) {
    cmd->add_option("--ns.strategy", f.strategy, "random|tokenfreq|softmax|softmax_tokenfreq")
        ->capture_default_str();
    cmd->add_option("--ns.temperature", f.temperature)->capture_default_str();
    cmd->add_option("--ns.mixture_weights", f.mixture_weights, "weights for softmax_tokenfreq")
        ->expected(2)
        ->capture_default_str();
    cmd->add_option("--ns.avoid_dominant", f.avoid_dominant)->capture_default_str();
    cmd->add_option("--ns.n_negatives", f.n_negatives)->capture_default_str();
}

sqe::SamplerSpec make_sampler(const NsFlags & f) {
    sqe::SamplerSpec spec;
    spec.avoid_dominant = f.avoid_dominant;
    spec.n_negatives = f.n_negatives;
    if (f.strategy == "softmax_tokenfreq") {
        spec.strategy = sqe::NsStrategy::Mixture;
        sqe::SamplerSpec sm;
        sm.strategy = sqe::NsStrategy::SoftmaxDist;
        sm.temperature = f.temperature;
        sqe::SamplerSpec tf;
        tf.strategy = sqe::NsStrategy::TokenFreq;
        spec.components = {sm, tf};
        spec.weights = f.mixture_weights;
        for (auto & c : spec.components) {
            c.avoid_dominant = false;
            c.n_negatives = 1;
        }
    } else {
        spec.strategy = sqe::ns_strategy_from_string(f.strategy);
        spec.temperature = f.temperature;
    }
    spec.validate();
    return spec;
}

void add_dominant_flags(CLI::App * cmd, sqe::DominantConfig & d) {
    cmd->add_option("--dominant.rel", d.rel, "relative drop threshold")->capture_default_str();
    cmd->add_option("--dominant.abs", d.abs, "absolute drop threshold")->capture_default_str();
    cmd->add_option("--dominant.scan_cap", d.scan_cap, "entries scanned for a drop")->capture_default_str();
}

std::vector<sqe::ScoreMethod> parse_methods(const std::vector<std::string> & names, bool have_head) {
    std::vector<sqe::ScoreMethod> out;
    auto push = [&out](sqe::ScoreMethod m) {
        if (std::find(out.begin(), out.end(), m) == out.end()) {
            out.push_back(m);
        }
    };
    for (const std::string & n : names) {
        if (n == "all") {
            push(sqe::ScoreMethod::SoftmaxProb);
            push(sqe::ScoreMethod::BoostedProb);
            if (have_head) {
                push(sqe::ScoreMethod::SigmoidHead);
            }
        } else if (n == "softmax") {
            push(sqe::ScoreMethod::SoftmaxProb);
        } else if (n == "boosted") {
            push(sqe::ScoreMethod::BoostedProb);
        } else if (n == "sigmoid") {
            push(sqe::ScoreMethod::SigmoidHead);
        } else if (n == "mc") {
            push(sqe::ScoreMethod::MCEntropy);
        } else {
            throw sqe::invalid_input("unknown method '" + n + "' (softmax|boosted|sigmoid|mc|all)");
        }
    }
    if (std::find(out.begin(), out.end(), sqe::ScoreMethod::SigmoidHead) != out.end()) {
        sqe::require(have_head, "method 'sigmoid' needs --head");
    }
    return out;
}

json lm_config_json(const sqe::LmConfig & cfg) {
    json j;
    sqe::to_json(j, cfg);
    return j;
}

// ---------------------------------------------------------------------------
// Subcommand bodies. Each returns the files it wrote.

int run_build_vocab(const Common & common, const std::string & corpus_path, const std::string & mode_str,
                    long min_count, const std::string & out_path) {
    ensure_out_dir(common.out_dir);
    const sqe::TokenMode mode = sqe::token_mode_from_string(mode_str);
    const std::vector<std::string> lines = sqe::read_lines(corpus_path);
    const sqe::Vocab vocab = sqe::Vocab::build(lines, mode, min_count);
    vocab.save(out_path);
    std::cout << "vocab: " << vocab.size() << " tokens (" << sqe::kNumReserved << " reserved) -> " << out_path
              << "\n";
    write_manifest(common.out_dir, "build-vocab",
                   {{"mode", mode_str}, {"min_count", min_count}, {"seed", common.seed}},
                   input_hashes({{"corpus", corpus_path}}), {out_path});
    return 0;
}

struct SynthFlags {
    int n_inputs = 24;
    int k = 2;
    std::vector<double> weights;
    int copies = 0;
    int template_length = 4;
    int ambiguous_position = 1;
    std::string mode = "whitespace";
    int template_pool = 20;
    int input_fillers = 0;
    int filler_pool = 0;
    int noise_per_input = 0;
    int noise_slots = 1;
    int distractor_lines = 0;
    int distractor_tokens = 3;
    std::vector<double> rates = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
    int candidates_per_rate = 1;
};

int run_gen_synth(const Common & common, const SynthFlags & f) {
    ensure_out_dir(common.out_dir);
    sqe::AmbiguitySpec spec;
    spec.n_inputs = f.n_inputs;
    spec.k_synonyms = f.k;
    spec.synonym_weights = f.weights.empty() ? std::vector<double>(f.k, 1.0 / f.k) : f.weights;
    spec.copies_per_input = f.copies;
    spec.template_length = f.template_length;
    spec.ambiguous_position = f.ambiguous_position;
    spec.vocab_mode = sqe::token_mode_from_string(f.mode);
    spec.template_pool = f.template_pool;
    spec.input_fillers = f.input_fillers;
    spec.filler_pool = f.filler_pool;

    sqe::RngStream rng(common.seed, 0);
    sqe::SynthCorpus corpus = sqe::gen_ambiguous_corpus(spec, rng);
    if (f.noise_per_input > 0) {
        sqe::RngStream nrng(common.seed, 77);
        sqe::augment_with_noise_lines(corpus, f.noise_per_input, nrng, f.noise_slots);
    }
    if (f.distractor_lines > 0) {
        sqe::RngStream drng(common.seed, 78);
        sqe::augment_with_distractor_lines(corpus, f.distractor_lines, f.distractor_tokens, drng);
    }
    sqe::GradedCandidateSpec cand_spec;
    cand_spec.error_rates = f.rates;
    cand_spec.candidates_per_rate = f.candidates_per_rate;
    sqe::RngStream cand_rng = rng.child(1);
    const std::vector<sqe::CandidateRecord> candidates = sqe::gen_graded_candidates(corpus, cand_spec, cand_rng);

    const std::string corpus_path = common.out_dir + "/corpus.tsv";
    const std::string vocab_path = common.out_dir + "/vocab.tsv";
    const std::string cand_path = common.out_dir + "/candidates.tsv";
    const std::string truth_path = common.out_dir + "/truth.json";
    sqe::save_parallel(corpus_path, corpus.lines);
    corpus.vocab.save(vocab_path);
    sqe::save_candidates(cand_path, candidates);

    json truth;
    truth["spec"] = {{"n_inputs", spec.n_inputs},
                     {"k_synonyms", spec.k_synonyms},
                     {"synonym_weights", spec.synonym_weights},
                     {"copies_per_input", corpus.copies_per_input},
                     {"template_length", spec.template_length},
                     {"ambiguous_position", spec.ambiguous_position},
                     {"vocab_mode", to_string(spec.vocab_mode)},
                     {"template_pool", spec.template_pool},
                     {"input_fillers", spec.input_fillers},
                     {"filler_pool", spec.filler_pool},
                     {"noise_per_input", f.noise_per_input},
                     {"noise_slots", f.noise_slots},
                     {"distractor_lines", f.distractor_lines},
                     {"distractor_tokens", f.distractor_tokens},
                     {"error_rates", cand_spec.error_rates},
                     {"candidates_per_rate", cand_spec.candidates_per_rate},
                     {"seed", common.seed}};
    truth["inputs"] = sqe::synth_truth_json(corpus);
    std::ofstream tf(truth_path, std::ios::binary);
    tf << truth.dump(2) << '\n';
    tf.close();

    std::cout << "gen-synth: " << corpus.lines.size() << " corpus lines, " << candidates.size()
              << " candidates, |V|=" << corpus.vocab.size() << " -> " << common.out_dir << "\n";
    write_manifest(common.out_dir, "gen-synth", truth["spec"], json::object(),
                   {corpus_path, vocab_path, cand_path, truth_path});
    return 0;
}

int run_train_lm(const Common & common, const LmFlags & f, const std::string & corpus_path,
                 const std::string & vocab_path, const std::string & mode_str, const std::string & out_path) {
    ensure_out_dir(common.out_dir);
    const sqe::TokenMode mode = sqe::token_mode_from_string(mode_str);
    const sqe::Vocab vocab = sqe::Vocab::load(vocab_path, mode);
    const std::vector<sqe::ParallelExample> corpus = sqe::load_parallel(corpus_path, vocab);

    sqe::LmConfig cfg;
    cfg.d_model = f.d_model;
    cfg.n_layers = f.n_layers;
    cfg.n_heads = f.n_heads;
    cfg.d_ff = f.d_ff;
    cfg.vocab_size = vocab.size();
    cfg.learning_rate = f.learning_rate;
    cfg.adam_beta1 = f.adam_beta1;
    cfg.adam_beta2 = f.adam_beta2;
    cfg.adam_eps = f.adam_eps;
    cfg.grad_clip = f.grad_clip;
    cfg.batch_size = f.batch_size;
    cfg.epochs = f.epochs;
    cfg.tie_unembedding = f.tie_unembedding;
    cfg.use_out_bias = f.use_out_bias;
    cfg.token_mode = mode_str;
    if (f.max_seq_len > 0) {
        cfg.max_seq_len = f.max_seq_len;
    } else {
        size_t longest = 0;
        for (const auto & ex : corpus) {
            longest = std::max(longest, ex.input_ids.size() + ex.output_ids.size() + 2);
        }
        cfg.max_seq_len = static_cast<int>(longest) + 16;
    }
    cfg.validate();

    sqe::RngStream rng(common.seed, 0);
    sqe::TrainLog log;
    const int print_every = std::max(1, cfg.epochs / 10);
    const sqe::LmParams<float> params =
        sqe::train_lm<float>(corpus, cfg, rng, &log, [&](int epoch, double loss) {
            if ((epoch + 1) % print_every == 0 || epoch + 1 == cfg.epochs) {
                std::cout << "epoch " << epoch + 1 << "/" << cfg.epochs << " loss " << loss << "\n";
            }
        });

    const json inputs = input_hashes({{"corpus", corpus_path}, {"vocab", vocab_path}});
    json prov;
    prov["seed"] = common.seed;
    prov["inputs"] = inputs;
    prov["final_loss"] = log.final_loss;
    sqe::save_lm(out_path, params, prov);
    std::cout << "final loss " << log.final_loss << " -> " << out_path << "\n";
    write_manifest(common.out_dir, "train-lm",
                   {{"lm", lm_config_json(cfg)}, {"seed", common.seed}}, inputs, {out_path});
    return 0;
}

int run_dump_activations(const Common & common, const std::string & ckpt, const std::string & corpus_path,
                         const std::string & vocab_path, int top_k, const std::string & out_path) {
    ensure_out_dir(common.out_dir);
    const sqe::LmParams<float> lm = sqe::load_lm<float>(ckpt);
    const sqe::Vocab vocab = sqe::Vocab::load(vocab_path, sqe::token_mode_from_string(lm.config.token_mode));
    sqe::require(vocab.size() == lm.config.vocab_size, "dump-activations: vocab size differs from checkpoint");
    const std::vector<sqe::ParallelExample> corpus = sqe::load_parallel(corpus_path, vocab);
    sqe::write_activation_dump(out_path, lm, corpus, top_k);
    std::cout << "dump: " << corpus.size() << " samples, top_k=" << (top_k <= 0 ? lm.config.vocab_size : top_k)
              << " -> " << out_path << "\n";
    write_manifest(common.out_dir, "dump-activations", {{"top_k", top_k}, {"seed", common.seed}},
                   input_hashes({{"checkpoint", ckpt}, {"corpus", corpus_path}, {"vocab", vocab_path}}),
                   {out_path});
    return 0;
}

struct HeadFlags {
    double learning_rate = 0.05;
    int epochs = 30;
    std::string optimizer = "adam";
    double clamp_eps = 1e-7;
};

void add_head_flags(CLI::App * cmd, HeadFlags & f) {
    cmd->add_option("--head.learning_rate", f.learning_rate)->capture_default_str();
    cmd->add_option("--head.epochs", f.epochs)->capture_default_str();
    cmd->add_option("--head.optimizer", f.optimizer, "adam|sgd")->capture_default_str();
    cmd->add_option("--head.clamp_eps", f.clamp_eps)->capture_default_str();
}

int run_train_head(const Common & common, const std::string & ckpt, const std::string & corpus_path,
                   const std::string & dump_path, const std::string & vocab_path, const NsFlags & ns,
                   const HeadFlags & hf, const sqe::DominantConfig & dom, const std::string & out_path) {
    ensure_out_dir(common.out_dir);
    sqe::require(corpus_path.empty() != dump_path.empty(),
                 "train-head: exactly one of --corpus or --dump is required");
    const sqe::LmParams<float> lm = sqe::load_lm<float>(ckpt);
    const sqe::Vocab vocab = sqe::Vocab::load(vocab_path, sqe::token_mode_from_string(lm.config.token_mode));
    sqe::require(vocab.size() == lm.config.vocab_size, "train-head: vocab size differs from checkpoint");
    const sqe::FrequencyTable freq = sqe::unigram_distribution(vocab);

    sqe::HeadTrainConfig cfg;
    cfg.sampler = make_sampler(ns);
    cfg.learning_rate = hf.learning_rate;
    cfg.epochs = hf.epochs;
    cfg.optimizer = hf.optimizer;
    cfg.clamp_eps = hf.clamp_eps;
    cfg.dominant = dom;
    cfg.source = dump_path.empty() ? "live" : "dump";
    cfg.validate();

    sqe::RngStream rng(common.seed, 0);
    sqe::HeadTrainStats stats;
    sqe::HeadParams<float> head;
    std::vector<std::pair<std::string, std::string>> hashed = {{"checkpoint", ckpt}, {"vocab", vocab_path}};
    if (dump_path.empty()) {
        const std::vector<sqe::ParallelExample> corpus = sqe::load_parallel(corpus_path, vocab);
        head = sqe::train_head(lm, corpus, freq, cfg, rng, &stats);
        hashed.emplace_back("corpus", corpus_path);
    } else {
        const sqe::ActivationDump dump = sqe::read_activation_dump(dump_path);
        head = sqe::train_head_from_dump(lm, dump, freq, cfg, rng, &stats);
        hashed.emplace_back("dump", dump_path);
    }

    const json inputs = input_hashes(hashed);
    json prov;
    prov["seed"] = common.seed;
    prov["inputs"] = inputs;
    if (!stats.epoch_loss.empty()) {
        prov["final_loss"] = stats.epoch_loss.back();
    }
    sqe::save_head(out_path, head, cfg, prov);
    std::cout << "train-head [" << cfg.sampler.label() << "]: " << cfg.epochs << " epochs over "
              << stats.steps_per_epoch << " steps";
    if (!stats.epoch_loss.empty()) {
        std::cout << ", final loss " << stats.epoch_loss.back();
    }
    std::cout << " -> " << out_path << "\n";
    json cfg_json;
    sqe::to_json(cfg_json, cfg);
    write_manifest(common.out_dir, "train-head", {{"head", cfg_json}, {"seed", common.seed}}, inputs,
                   {out_path});
    return 0;
}

int run_generate(const Common & common, const std::string & ckpt, const std::string & vocab_path,
                 const std::string & input_text, const std::string & inputs_path, const std::string & mode_str,
                 int topk, int max_len, const std::string & out_path) {
    ensure_out_dir(common.out_dir);
    const sqe::LmParams<float> lm = sqe::load_lm<float>(ckpt);
    const sqe::Vocab vocab = sqe::Vocab::load(vocab_path, sqe::token_mode_from_string(lm.config.token_mode));
    const sqe::GenMode mode = sqe::gen_mode_from_string(mode_str);

    std::vector<std::string> inputs;
    if (!input_text.empty()) {
        inputs.push_back(input_text);
    }
    if (!inputs_path.empty()) {
        for (const std::string & line : sqe::read_lines(inputs_path)) {
            inputs.push_back(line.substr(0, line.find('\t')));
        }
    }
    sqe::require(!inputs.empty(), "generate: provide --input or --inputs");

    sqe::RngStream base(common.seed, 0);
    std::ofstream out;
    if (!out_path.empty()) {
        out.open(out_path, std::ios::binary);
        if (!out) {
            throw sqe::data_error("cannot open output file: " + out_path);
        }
    }
    for (size_t i = 0; i < inputs.size(); ++i) {
        sqe::RngStream rng = base.child(i);
        const sqe::Generation<float> gen = sqe::generate(lm, vocab.encode(inputs[i]), mode, max_len, rng, topk);
        const std::string text = vocab.decode(gen.output_ids);
        if (out.is_open()) {
            out << inputs[i] << '\t' << text << '\n';
        } else {
            std::cout << inputs[i] << '\t' << text << '\n';
        }
    }
    if (out.is_open()) {
        std::cout << "generated " << inputs.size() << " outputs -> " << out_path << "\n";
        json inputs_json = json::object();
        if (!inputs_path.empty()) {
            inputs_json = input_hashes({{"checkpoint", ckpt}, {"vocab", vocab_path}, {"inputs", inputs_path}});
        } else {
            inputs_json = input_hashes({{"checkpoint", ckpt}, {"vocab", vocab_path}});
        }
        write_manifest(common.out_dir, "generate",
                       {{"mode", mode_str}, {"topk", topk}, {"max_len", max_len}, {"seed", common.seed}},
                       inputs_json, {out_path});
    }
    return 0;
}

int run_score(const Common & common, const std::string & ckpt, const std::string & vocab_path,
              const std::string & head_path, const std::string & input_text, const std::string & candidate_text,
              const std::vector<std::string> & method_names, const std::string & agg_str,
              const sqe::DominantConfig & dom, const std::string & out_path) {
    const sqe::LmParams<float> lm = sqe::load_lm<float>(ckpt);
    const sqe::Vocab vocab = sqe::Vocab::load(vocab_path, sqe::token_mode_from_string(lm.config.token_mode));
    sqe::HeadParams<float> head;
    const bool have_head = !head_path.empty();
    if (have_head) {
        head = sqe::load_head<float>(head_path);
    }
    const std::vector<sqe::ScoreMethod> methods = parse_methods(method_names, have_head);
    sqe::ScoreOptions opt;
    opt.aggregation = sqe::aggregation_from_string(agg_str);
    opt.dominant = dom;

    const auto scores = sqe::score_candidate(lm, have_head ? &head : nullptr, vocab.encode(input_text),
                                             vocab.encode(candidate_text), methods, opt);
    json j;
    j["input"] = input_text;
    j["candidate"] = candidate_text;
    j["aggregation"] = agg_str;
    for (const auto & [m, s] : scores) {
        j["scores"][sqe::to_string(m)] = {{"sequence", s.sequence}, {"per_token", s.per_token}};
    }
    const std::string text = j.dump(2);
    std::cout << text << "\n";
    if (!out_path.empty()) {
        ensure_out_dir(common.out_dir);
        std::ofstream out(out_path, std::ios::binary);
        if (!out) {
            throw sqe::data_error("cannot open output file: " + out_path);
        }
        out << text << '\n';
    }
    return 0;
}

struct EvalFlags {
    std::string candidates;
    std::vector<std::string> methods = {"all"};
    std::string aggregation = "arith_mean";
    std::string word_pool = "min";
    bool word_level = false;
    int mc_samples = 10;
    int mc_max_len = 64;
    std::string scatter;
    std::string out = "report.json";
    std::string label;
};

void add_eval_flags(CLI::App * cmd, EvalFlags & f) {
    cmd->add_option("--candidates", f.candidates, "candidates TSV")->required();
    cmd->add_option("--method", f.methods, "softmax|boosted|sigmoid|mc|all (repeatable)")
        ->capture_default_str();
    cmd->add_option("--qe.aggregation", f.aggregation, "arith_mean|geo_mean")->capture_default_str();
    cmd->add_option("--qe.word_pool", f.word_pool, "min|mean")->capture_default_str();
    cmd->add_option("--qe.mc_samples", f.mc_samples)->capture_default_str();
    cmd->add_option("--qe.mc_max_len", f.mc_max_len)->capture_default_str();
    cmd->add_option("--scatter", f.scatter, "write gold,predicted,method CSV here");
    cmd->add_option("--out", f.out, "report JSON path")->capture_default_str();
    cmd->add_option("--label", f.label, "row label used by `report`");
}

json eval_metadata(const EvalFlags & f, const Common & common, const json & inputs) {
    json j;
    j["label"] = f.label;
    j["seed"] = common.seed;
    j["jobs"] = common.jobs;
    j["methods"] = f.methods;
    j["mc_samples"] = f.mc_samples;
    j["mc_max_len"] = f.mc_max_len;
    j["inputs"] = inputs;
    return j;
}

int run_eval_others(const Common & common, const std::string & ckpt, const std::string & vocab_path,
                    const std::string & head_path, const EvalFlags & f, const sqe::DominantConfig & dom) {
    ensure_out_dir(common.out_dir);
    const sqe::LmParams<float> lm = sqe::load_lm<float>(ckpt);
    const sqe::Vocab vocab = sqe::Vocab::load(vocab_path, sqe::token_mode_from_string(lm.config.token_mode));
    sqe::HeadParams<float> head;
    const bool have_head = !head_path.empty();
    if (have_head) {
        head = sqe::load_head<float>(head_path);
    }
    const std::vector<sqe::ScoreMethod> methods = parse_methods(f.methods, have_head);
    const std::vector<sqe::CandidateRecord> records = sqe::load_candidates(f.candidates);

    sqe::ScoreOptions opt;
    opt.aggregation = sqe::aggregation_from_string(f.aggregation);
    opt.dominant = dom;
    opt.mc_samples = f.mc_samples;
    opt.mc_max_len = f.mc_max_len;

    sqe::EvalReport report;
    if (f.word_level) {
        const sqe::WordPool pool = f.word_pool == "mean" ? sqe::WordPool::Mean : sqe::WordPool::Min;
        report = sqe::eval_others_word_level(lm, have_head ? &head : nullptr, records, vocab, methods, opt, pool,
                                             common.jobs);
    } else {
        sqe::RngStream rng(common.seed, 0);
        report =
            sqe::eval_others(lm, have_head ? &head : nullptr, records, vocab, methods, opt, &rng, common.jobs);
    }
    std::vector<std::pair<std::string, std::string>> hashed = {
        {"checkpoint", ckpt}, {"vocab", vocab_path}, {"candidates", f.candidates}};
    if (have_head) {
        hashed.emplace_back("head", head_path);
    }
    const json inputs = input_hashes(hashed);
    report.metadata.update(eval_metadata(f, common, inputs));
    if (f.label.empty() && have_head) {
        sqe::HeadTrainConfig head_cfg;
        sqe::load_head<float>(head_path, &head_cfg);
        report.metadata["label"] = head_cfg.sampler.label();
    }
    report.save(f.out);
    if (!f.scatter.empty()) {
        report.save_scatter_csv(f.scatter);
    }
    for (const auto & [name, m] : report.metrics) {
        std::cout << name << ": pearson=" << (m.pearson ? std::to_string(*m.pearson) : "undef");
        if (m.bce) {
            std::cout << " bce=" << *m.bce;
        }
        std::cout << "\n";
    }
    std::vector<std::string> outputs = {f.out};
    if (!f.scatter.empty()) {
        outputs.push_back(f.scatter);
    }
    write_manifest(common.out_dir, "eval-others", report.metadata, inputs, outputs);
    return 0;
}

int run_eval_self(const Common & common, const std::string & ckpt, const std::string & vocab_path,
                  const std::string & head_path, const EvalFlags & f, const sqe::DominantConfig & dom,
                  const std::string & gen_mode, int topk, int max_len) {
    ensure_out_dir(common.out_dir);
    const sqe::LmParams<float> lm = sqe::load_lm<float>(ckpt);
    const sqe::Vocab vocab = sqe::Vocab::load(vocab_path, sqe::token_mode_from_string(lm.config.token_mode));
    sqe::HeadParams<float> head;
    const bool have_head = !head_path.empty();
    if (have_head) {
        head = sqe::load_head<float>(head_path);
    }
    const std::vector<sqe::ScoreMethod> methods = parse_methods(f.methods, have_head);
    const std::vector<sqe::CandidateRecord> records = sqe::load_candidates(f.candidates);

    sqe::ScoreOptions opt;
    opt.aggregation = sqe::aggregation_from_string(f.aggregation);
    opt.dominant = dom;
    opt.mc_samples = f.mc_samples;
    opt.mc_max_len = f.mc_max_len;

    sqe::RngStream rng(common.seed, 0);
    sqe::EvalReport report = sqe::eval_self(lm, have_head ? &head : nullptr, records, vocab,
                                            sqe::gen_mode_from_string(gen_mode), max_len, methods, opt, rng, topk,
                                            common.jobs);
    std::vector<std::pair<std::string, std::string>> hashed = {
        {"checkpoint", ckpt}, {"vocab", vocab_path}, {"candidates", f.candidates}};
    if (have_head) {
        hashed.emplace_back("head", head_path);
    }
    const json inputs = input_hashes(hashed);
    report.metadata.update(eval_metadata(f, common, inputs));
    report.metadata["gen_mode"] = gen_mode;
    report.save(f.out);
    if (!f.scatter.empty()) {
        report.save_scatter_csv(f.scatter);
    }
    for (const auto & [name, m] : report.metrics) {
        std::cout << name << ": pearson=" << (m.pearson ? std::to_string(*m.pearson) : "undef") << "\n";
    }
    if (report.failures > 0) {
        std::cout << report.failures << " generation failure(s) excluded\n";
    }
    std::vector<std::string> outputs = {f.out};
    if (!f.scatter.empty()) {
        outputs.push_back(f.scatter);
    }
    write_manifest(common.out_dir, "eval-self", report.metadata, inputs, outputs);
    return 0;
}

int run_report(const Common & common, const std::vector<std::string> & report_paths,
               const std::vector<std::string> & labels, const std::string & out_prefix) {
    ensure_out_dir(common.out_dir);
    const sqe::Comparison cmp = sqe::Comparison::from_report_files(report_paths, labels);
    const std::string json_path = out_prefix + ".json";
    const std::string csv_path = out_prefix + ".csv";
    const std::string txt_path = out_prefix + ".txt";
    {
        std::ofstream out(json_path, std::ios::binary);
        out << cmp.to_json().dump(2) << '\n';
    }
    {
        std::ofstream out(csv_path, std::ios::binary);
        out << cmp.to_csv();
    }
    const std::string text = cmp.to_text();
    {
        std::ofstream out(txt_path, std::ios::binary);
        out << text;
    }
    std::cout << text;
    std::vector<std::pair<std::string, std::string>> hashed;
    for (size_t i = 0; i < report_paths.size(); ++i) {
        hashed.emplace_back("report" + std::to_string(i), report_paths[i]);
    }
    write_manifest(common.out_dir, "report", {{"labels", labels}}, input_hashes(hashed),
                   {json_path, csv_path, txt_path});
    return 0;
}

} // namespace

int main(int argc, char ** argv) {
    CLI::App app{"sigmoid-head quality estimation toolkit"};
    app.require_subcommand(1);

    // build-vocab
    Common c_bv;
    std::string bv_corpus, bv_mode = "whitespace", bv_out = "vocab.tsv";
    long bv_min_count = 1;
    CLI::App * bv = app.add_subcommand("build-vocab", "build a vocabulary from a corpus");
    add_common(bv, c_bv);
    bv->add_option("--corpus", bv_corpus)->required();
    bv->add_option("--mode", bv_mode, "char|whitespace")->capture_default_str();
    bv->add_option("--min_count", bv_min_count)->capture_default_str();
    bv->add_option("--out", bv_out)->capture_default_str();

    // gen-synth
    Common c_gs;
    SynthFlags gs;
    CLI::App * gsc = app.add_subcommand("gen-synth", "generate a synthetic ambiguous corpus");
    add_common(gsc, c_gs);
    gsc->add_option("--synth.n_inputs", gs.n_inputs)->capture_default_str();
    gsc->add_option("--synth.k", gs.k, "synonyms per input")->capture_default_str();
    gsc->add_option("--synth.weights", gs.weights, "synonym weights (default uniform)");
    gsc->add_option("--synth.copies", gs.copies, "copies per input (0 = auto)")->capture_default_str();
    gsc->add_option("--synth.template_length", gs.template_length)->capture_default_str();
    gsc->add_option("--synth.ambiguous_position", gs.ambiguous_position)->capture_default_str();
    gsc->add_option("--synth.mode", gs.mode, "char|whitespace")->capture_default_str();
    gsc->add_option("--synth.template_pool", gs.template_pool)->capture_default_str();
    gsc->add_option("--synth.input_fillers", gs.input_fillers)->capture_default_str();
    gsc->add_option("--synth.filler_pool", gs.filler_pool)->capture_default_str();
    gsc->add_option("--synth.noise_per_input", gs.noise_per_input, "slot-corrupted extra lines per input")
        ->capture_default_str();
    gsc->add_option("--synth.noise_slots", gs.noise_slots)->capture_default_str();
    gsc->add_option("--synth.distractor_lines", gs.distractor_lines, "rare-token long-tail lines")
        ->capture_default_str();
    gsc->add_option("--synth.distractor_tokens", gs.distractor_tokens)->capture_default_str();
    gsc->add_option("--synth.rates", gs.rates, "graded-candidate error rates")->capture_default_str();
    gsc->add_option("--synth.candidates_per_rate", gs.candidates_per_rate)->capture_default_str();

    // train-lm
    Common c_tl;
    LmFlags lf;
    std::string tl_corpus, tl_vocab, tl_mode = "whitespace", tl_out = "lm.sqe";
    CLI::App * tl = app.add_subcommand("train-lm", "train the base language model");
    add_common(tl, c_tl);
    add_lm_flags(tl, lf);
    tl->add_option("--corpus", tl_corpus)->required();
    tl->add_option("--vocab", tl_vocab)->required();
    tl->add_option("--mode", tl_mode, "char|whitespace")->capture_default_str();
    tl->add_option("--out", tl_out)->capture_default_str();

    // dump-activations
    Common c_da;
    std::string da_ckpt, da_corpus, da_vocab, da_out = "activations.sqed";
    int da_topk = 0;
    CLI::App * da = app.add_subcommand("dump-activations", "export hidden states and softmax top-k");
    add_common(da, c_da);
    da->add_option("--checkpoint", da_ckpt)->required();
    da->add_option("--corpus", da_corpus)->required();
    da->add_option("--vocab", da_vocab)->required();
    da->add_option("--top_k", da_topk, "0 = full vocabulary")->capture_default_str();
    da->add_option("--out", da_out)->capture_default_str();

    // train-head
    Common c_th;
    NsFlags ns;
    HeadFlags hf;
    sqe::DominantConfig th_dom;
    std::string th_ckpt, th_corpus, th_dump, th_vocab, th_out = "head.sqe";
    CLI::App * th = app.add_subcommand("train-head", "train the sigmoid head on a frozen base model");
    add_common(th, c_th);
    add_ns_flags(th, ns);
    add_head_flags(th, hf);
    add_dominant_flags(th, th_dom);
    th->add_option("--checkpoint", th_ckpt)->required();
    th->add_option("--corpus", th_corpus, "train from live forward passes");
    th->add_option("--dump", th_dump, "train from an activation dump");
    th->add_option("--vocab", th_vocab)->required();
    th->add_option("--out", th_out)->capture_default_str();

    // generate
    Common c_ge;
    std::string ge_ckpt, ge_vocab, ge_input, ge_inputs, ge_mode = "greedy", ge_out;
    int ge_topk = 0, ge_max_len = 64;
    CLI::App * ge = app.add_subcommand("generate", "decode outputs for inputs");
    add_common(ge, c_ge);
    ge->add_option("--checkpoint", ge_ckpt)->required();
    ge->add_option("--vocab", ge_vocab)->required();
    ge->add_option("--input", ge_input, "single input text");
    ge->add_option("--inputs", ge_inputs, "file with one input per line (first TSV column)");
    ge->add_option("--mode", ge_mode, "greedy|sample|topk")->capture_default_str();
    ge->add_option("--topk", ge_topk)->capture_default_str();
    ge->add_option("--max_len", ge_max_len)->capture_default_str();
    ge->add_option("--out", ge_out, "write TSV here instead of stdout");

    // score
    Common c_sc;
    sqe::DominantConfig sc_dom;
    std::string sc_ckpt, sc_vocab, sc_head, sc_input, sc_candidate, sc_agg = "arith_mean", sc_out;
    std::vector<std::string> sc_methods = {"all"};
    CLI::App * sc = app.add_subcommand("score", "score one candidate with the requested methods");
    add_common(sc, c_sc);
    add_dominant_flags(sc, sc_dom);
    sc->add_option("--checkpoint", sc_ckpt)->required();
    sc->add_option("--vocab", sc_vocab)->required();
    sc->add_option("--head", sc_head);
    sc->add_option("--input", sc_input)->required();
    sc->add_option("--candidate", sc_candidate)->required();
    sc->add_option("--method", sc_methods)->capture_default_str();
    sc->add_option("--qe.aggregation", sc_agg)->capture_default_str();
    sc->add_option("--out", sc_out, "also write the JSON here");

    // eval-others
    Common c_eo;
    EvalFlags eo;
    sqe::DominantConfig eo_dom;
    std::string eo_ckpt, eo_vocab, eo_head;
    bool eo_word = false;
    CLI::App * eoc = app.add_subcommand("eval-others", "force-decode candidates and correlate with gold");
    add_common(eoc, c_eo);
    add_eval_flags(eoc, eo);
    add_dominant_flags(eoc, eo_dom);
    eoc->add_option("--checkpoint", eo_ckpt)->required();
    eoc->add_option("--vocab", eo_vocab)->required();
    eoc->add_option("--head", eo_head);
    eoc->add_flag("--word_level", eo_word, "word-level BCE against OK/BAD labels");

    // eval-self
    Common c_es;
    EvalFlags es;
    sqe::DominantConfig es_dom;
    std::string es_ckpt, es_vocab, es_head, es_gen_mode = "greedy";
    int es_topk = 0, es_max_len = 64;
    CLI::App * esc = app.add_subcommand("eval-self", "score the model's own generations");
    add_common(esc, c_es);
    add_eval_flags(esc, es);
    add_dominant_flags(esc, es_dom);
    esc->add_option("--checkpoint", es_ckpt)->required();
    esc->add_option("--vocab", es_vocab)->required();
    esc->add_option("--head", es_head);
    esc->add_option("--gen_mode", es_gen_mode, "greedy|sample|topk")->capture_default_str();
    esc->add_option("--topk", es_topk)->capture_default_str();
    esc->add_option("--max_len", es_max_len)->capture_default_str();

    // report
    Common c_rp;
    std::vector<std::string> rp_inputs, rp_labels;
    std::string rp_prefix = "comparison";
    CLI::App * rp = app.add_subcommand("report", "merge evaluation reports into a comparison table");
    add_common(rp, c_rp);
    rp->add_option("--inputs", rp_inputs, "report JSON files")->required();
    rp->add_option("--labels", rp_labels, "row label per report");
    rp->add_option("--out_prefix", rp_prefix)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError & e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e);
        }
        std::cerr << "error: USAGE: " << e.what() << "\n";
        return 1;
    }

    try {
        if (bv->parsed()) {
            return run_build_vocab(c_bv, bv_corpus, bv_mode, bv_min_count, bv_out);
        }
        if (gsc->parsed()) {
            return run_gen_synth(c_gs, gs);
        }
        if (tl->parsed()) {
            return run_train_lm(c_tl, lf, tl_corpus, tl_vocab, tl_mode, tl_out);
        }
        if (da->parsed()) {
            return run_dump_activations(c_da, da_ckpt, da_corpus, da_vocab, da_topk, da_out);
        }
        if (th->parsed()) {
            return run_train_head(c_th, th_ckpt, th_corpus, th_dump, th_vocab, ns, hf, th_dom, th_out);
        }
        if (ge->parsed()) {
            return run_generate(c_ge, ge_ckpt, ge_vocab, ge_input, ge_inputs, ge_mode, ge_topk, ge_max_len,
                                ge_out);
        }
        if (sc->parsed()) {
            return run_score(c_sc, sc_ckpt, sc_vocab, sc_head, sc_input, sc_candidate, sc_methods, sc_agg,
                             sc_dom, sc_out);
        }
        if (eoc->parsed()) {
            eo.word_level = eo_word;
            return run_eval_others(c_eo, eo_ckpt, eo_vocab, eo_head, eo, eo_dom);
        }
        if (esc->parsed()) {
            return run_eval_self(c_es, es_ckpt, es_vocab, es_head, es, es_dom, es_gen_mode, es_topk, es_max_len);
        }
        if (rp->parsed()) {
            return run_report(c_rp, rp_inputs, rp_labels, rp_prefix);
        }
    } catch (const sqe::invalid_input & e) {
        std::cerr << "error: DATA: " << e.what() << "\n";
        return 2;
    } catch (const sqe::data_error & e) {
        std::cerr << "error: DATA: " << e.what() << "\n";
        return 2;
    } catch (const std::exception & e) {
        std::cerr << "error: DATA: " << e.what() << "\n";
        return 2;
    }
    std::cerr << "error: USAGE: no subcommand\n";
    return 1;
}
