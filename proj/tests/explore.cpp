// Scratch experiment driver for tuning the acceptance fixtures. Not part
// of the test suite.

#include "sqe/checkpoint.hpp"
#include "sqe/decode.hpp"
#include "sqe/dump.hpp"
#include "sqe/head.hpp"
#include "sqe/metrics.hpp"
#include "sqe/model.hpp"
#include "sqe/qe.hpp"
#include "sqe/synth.hpp"
#include "sqe/train_lm.hpp"

#include <filesystem>
#include <iostream>

using namespace sqe;

namespace {

struct AmbiguousModel {
    SynthCorpus corpus;
    std::vector<ParallelExample> examples;
    FrequencyTable freq;
    LmParams<float> lm;
    double final_loss = 0.0;
};

std::string cache_path(const std::string & name) {
    const auto dir = std::filesystem::temp_directory_path() / "sqe_explore";
    std::filesystem::create_directories(dir);
    return (dir / name).string();
}

AmbiguousModel build(const AmbiguitySpec & spec, uint64_t cseed, uint64_t tseed, int epochs,
                     const std::string & tag, int noise_per_input = 0, int d_model = 32,
                     int distractors = 0) {
    AmbiguousModel m;
    RngStream crng(cseed, 0);
    m.corpus = gen_ambiguous_corpus(spec, crng);
    if (noise_per_input > 0) {
        RngStream nrng(cseed, 77);
        augment_with_noise_lines(m.corpus, noise_per_input, nrng);
    }
    if (distractors > 0) {
        RngStream drng(cseed, 78);
        augment_with_distractor_lines(m.corpus, distractors, 3, drng);
    }
    for (const auto & [in_text, out_text] : m.corpus.lines) {
        ParallelExample ex;
        ex.input_ids = m.corpus.vocab.encode(in_text);
        ex.output_ids = m.corpus.vocab.encode(out_text);
        ex.output_ids.push_back(EOS);
        m.examples.push_back(std::move(ex));
    }
    m.freq = unigram_distribution(m.corpus.vocab);

    LmConfig cfg;
    cfg.d_model = d_model;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_ff = 2 * d_model;
    cfg.vocab_size = m.corpus.vocab.size();
    cfg.learning_rate = 1e-2;
    cfg.batch_size = 8;
    cfg.epochs = epochs;
    size_t longest = 0;
    for (const auto & ex : m.examples) {
        longest = std::max(longest, ex.input_ids.size() + ex.output_ids.size() + 2);
    }
    cfg.max_seq_len = static_cast<int>(longest) + 8;

    const std::string path = cache_path(tag + ".sqe");
    if (std::filesystem::exists(path)) {
        m.lm = load_lm<float>(path);
        std::cout << "# loaded cached " << tag << "\n";
        return m;
    }
    RngStream trng(tseed, 0);
    TrainLog log;
    m.lm = train_lm<float>(m.examples, cfg, trng, &log);
    m.final_loss = log.final_loss;
    save_lm(path, m.lm);
    std::cout << "# trained " << tag << " final loss " << log.final_loss << "\n";
    return m;
}

std::vector<float> amb_hidden(const AmbiguousModel & m, const SynthTruth & truth) {
    std::vector<int> cand = m.corpus.vocab.encode(truth.variant_texts[0]);
    cand.push_back(EOS);
    const StepTrace<float> tr = force_decode(m.lm, m.corpus.vocab.encode(truth.input_text), cand);
    return tr[truth.ambiguous_step].hidden;
}

void a3_sweep(const AmbiguousModel & m) {
    for (double lr : {0.02, 0.05}) {
        for (int epochs : {15, 30, 60, 120}) {
            HeadTrainConfig cfg;
            cfg.sampler.strategy = NsStrategy::TokenFreq;
            cfg.sampler.avoid_dominant = true;
            cfg.sampler.n_negatives = 10;
            cfg.learning_rate = lr;
            cfg.epochs = epochs;
            RngStream rng(3001, 0);
            const HeadParams<float> head = train_head(m.lm, m.examples, m.freq, cfg, rng);

            double min_syn = 1.0, max_other = 0.0, mean_syn = 0.0;
            int n_syn = 0;
            for (const SynthTruth & truth : m.corpus.truth) {
                const std::vector<float> h = amb_hidden(m, truth);
                for (int id : truth.synonym_ids) {
                    const double p = head_score(head, h, id);
                    min_syn = std::min(min_syn, p);
                    mean_syn += p;
                    ++n_syn;
                }
                for (int v = kNumReserved; v < m.corpus.vocab.size(); ++v) {
                    bool is_syn = false;
                    for (int id : truth.synonym_ids) {
                        is_syn = is_syn || id == v;
                    }
                    if (!is_syn) {
                        max_other = std::max(max_other, static_cast<double>(head_score(head, h, v)));
                    }
                }
            }
            std::cout << "A3 lr=" << lr << " epochs=" << epochs << ": min_syn=" << min_syn
                      << " mean_syn=" << mean_syn / n_syn << " max_other=" << max_other << "\n";
        }
    }
}

void a5_probe(const AmbiguousModel & m) {
    GradedCandidateSpec gspec;
    gspec.error_rates = {1.0};
    gspec.candidates_per_rate = 3;
    RngStream grng(5002, 0);
    const auto corrupted = gen_graded_candidates(m.corpus, gspec, grng);

    auto mean_score = [&](const HeadParams<float> & head) {
        ScoreOptions opt;
        double sum = 0.0;
        for (const CandidateRecord & rec : corrupted) {
            const auto s = score_candidate(m.lm, &head, m.corpus.vocab.encode(rec.input),
                                           m.corpus.vocab.encode(rec.candidate),
                                           {ScoreMethod::SigmoidHead}, opt);
            sum += s.at(ScoreMethod::SigmoidHead).sequence;
        }
        return sum / corrupted.size();
    };

    std::cout << "A5 init-head mean on corrupted: " << mean_score(init_from_softmax_head(m.lm)) << "\n";

    const double sweep_lr = std::getenv("SQE_LR") ? std::atof(std::getenv("SQE_LR")) : 0.05;
    const std::string sweep_opt = std::getenv("SQE_OPT") ? std::getenv("SQE_OPT") : "adam";
    for (int epochs : {5, 10, 20, 40, 80}) {
        HeadTrainConfig cfg;
        cfg.optimizer = sweep_opt;
        cfg.sampler.strategy = NsStrategy::Random;
        cfg.sampler.avoid_dominant = false;
        cfg.sampler.n_negatives = 10;
        cfg.learning_rate = sweep_lr;
        cfg.epochs = epochs;
        RngStream rng(4104, 0);
        const HeadParams<float> rh = train_head(m.lm, m.examples, m.freq, cfg, rng);

        cfg.sampler.strategy = NsStrategy::TokenFreq;
        cfg.sampler.avoid_dominant = true;
        RngStream rng2(4001, 0);
        const HeadParams<float> ah = train_head(m.lm, m.examples, m.freq, cfg, rng2);
        (void)0;
        // per-step breakdown for the random head: first step sees a clean
        // prefix, later steps a corrupted one
        ScoreOptions opt;
        double s0 = 0.0, s12 = 0.0;
        for (const CandidateRecord & rec : corrupted) {
            const auto sc = score_candidate(m.lm, &rh, m.corpus.vocab.encode(rec.input),
                                            m.corpus.vocab.encode(rec.candidate),
                                            {ScoreMethod::SigmoidHead}, opt);
            const auto & pt = sc.at(ScoreMethod::SigmoidHead).per_token;
            s0 += pt[0];
            for (size_t i = 1; i < pt.size(); ++i) {
                s12 += pt[i] / (pt.size() - 1);
            }
        }
        std::cout << "A5 epochs=" << epochs << " random=" << mean_score(rh)
                  << " (step0=" << s0 / corrupted.size() << " later=" << s12 / corrupted.size() << ")"
                  << " tf+avoid=" << mean_score(ah) << "\n";
    }
}

void a4_probe(const AmbiguousModel & m) {
    GradedCandidateSpec gspec;
    gspec.error_rates = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
    gspec.candidates_per_rate = 3;
    RngStream grng(5001, 0);
    const auto records = gen_graded_candidates(m.corpus, gspec, grng);

    HeadTrainConfig cfg;
    cfg.sampler.strategy = NsStrategy::TokenFreq;
    cfg.sampler.avoid_dominant = true;
    cfg.sampler.n_negatives = 10;
    cfg.learning_rate = 0.05;
    cfg.epochs = 40;
    RngStream rng(4001, 0);
    const HeadParams<float> head = train_head(m.lm, m.examples, m.freq, cfg, rng);

    ScoreOptions opt;
    RngStream erng(7007, 0);
    const EvalReport rep = eval_others(
        m.lm, &head, records, m.corpus.vocab,
        {ScoreMethod::SoftmaxProb, ScoreMethod::BoostedProb, ScoreMethod::SigmoidHead}, opt, &erng);
    std::cout << "A4 softmax=" << *rep.metrics.at("softmax_prob").pearson
              << " boosted=" << *rep.metrics.at("boosted_prob").pearson
              << " sigmoid=" << *rep.metrics.at("sigmoid_head").pearson << "\n";
}

// Base-model diagnostics: how sharp is the softmax head at eval steps?
void logit_probe(const AmbiguousModel & m) {
    const SynthTruth & truth = m.corpus.truth[0];
    std::vector<int> cand = m.corpus.vocab.encode(truth.variant_texts[0]);
    cand.push_back(EOS);
    const StepTrace<float> tr = force_decode(m.lm, m.corpus.vocab.encode(truth.input_text), cand);
    const HeadParams<float> init = init_from_softmax_head(m.lm);
    for (size_t t = 0; t < tr.size(); ++t) {
        const auto & step = tr[t];
        double max_p = 0;
        for (float p : step.dist) {
            max_p = std::max(max_p, static_cast<double>(p));
        }
        const double sig_ref = head_score(init, step.hidden, step.ref);
        std::cout << "  step " << t << " ref=" << m.corpus.vocab.token(step.ref)
                  << " p_ref=" << step.dist[step.ref] << " p_max=" << max_p << " sigma_ref=" << sig_ref
                  << "\n";
    }
}

} // namespace

int main(int argc, char ** argv) {
    const std::string what = argc > 1 ? argv[1] : "all";
    const int noise = argc > 2 ? std::atoi(argv[2]) : 0;

    if (what == "a3" || what == "all") {
        AmbiguitySpec spec;
        spec.n_inputs = 24;
        spec.k_synonyms = 2;
        spec.synonym_weights = {0.5, 0.5};
        spec.copies_per_input = 2;
        spec.template_length = 5;
        spec.ambiguous_position = 2;
        spec.template_pool = 16;
        const AmbiguousModel m = build(spec, 1001, 2001, 350, "k2");
        a3_sweep(m);
    }
    if (what == "a5" || what == "a4" || what == "all" || what == "logit") {
        const int d_model = argc > 3 ? std::atoi(argv[3]) : 32;
        const int n_inputs = argc > 4 ? std::atoi(argv[4]) : 24;
        const int distractors = argc > 5 ? std::atoi(argv[5]) : 0;
        AmbiguitySpec spec;
        spec.n_inputs = n_inputs;
        spec.k_synonyms = 5;
        spec.synonym_weights = {0.32, 0.26, 0.20, 0.13, 0.09};
        spec.copies_per_input = 20;
        spec.template_length = 3;
        spec.ambiguous_position = 1;
        spec.template_pool = 10;
        const std::string tag = "eval_n" + std::to_string(noise) + "_d" + std::to_string(d_model) + "_i" +
                                std::to_string(n_inputs) + "_x" + std::to_string(distractors);
        const AmbiguousModel m = build(spec, 1003, 2003, 300, tag, noise, d_model, distractors);
        if (what == "logit" || what == "all") {
            logit_probe(m);
        }
        if (what == "a5" || what == "all") {
            a5_probe(m);
        }
        if (what == "a4" || what == "all") {
            a4_probe(m);
        }
    }
    return 0;
}
