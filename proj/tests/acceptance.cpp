// Acceptance suite: one pass/fail line per criterion, nonzero exit on failure.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <vector>

#include "ar/infill.hpp"
#include "ar/ops.hpp"
#include "ar/train.hpp"

using namespace ar;

namespace {

int g_failures = 0;

void report(int n, bool pass, const std::string& what, const std::string& detail = "") {
    std::cout << "criterion " << n << ": " << (pass ? "PASS" : "FAIL") << " - " << what;
    if (!detail.empty()) std::cout << " (" << detail << ")";
    std::cout << std::endl;
    if (!pass) ++g_failures;
}

double now_seconds() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

Tensor random_log_probs(int t, int n, std::mt19937_64& rng) {
    std::normal_distribution<double> d(0.0, 1.0);
    Tensor logits = Tensor::zeros({t, n});
    for (auto& v : logits.mutable_data()) v = d(rng);
    return log_softmax_rows(logits);
}

// independent marginal: direct sum over the enumerated preimage
double oracle_log_likelihood(const Tensor& logp, const LabelSequence& y, const Vocabulary& v) {
    auto paths = enumerate_alignments(y, logp.dim(0), v);
    if (paths.empty()) return -std::numeric_limits<double>::infinity();
    int n = logp.dim(1);
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> scores;
    for (const auto& a : paths) {
        double s = 0.0;
        for (int t = 0; t < a.length(); ++t) {
            s += logp.at(t * n + a.ids[static_cast<std::size_t>(t)]);
        }
        scores.push_back(s);
        best = std::max(best, s);
    }
    double z = 0.0;
    for (double s : scores) z += std::exp(s - best);
    return best + std::log(z);
}

// ---- shared synthetic-run artifacts (criteria 5, 6, 7, 10) ----

struct AcceptanceRun {
    Dataset train, test;
    std::vector<TrainResult> seeds;  // 3 training runs
    ModelConfig model_cfg;
    TrainConfig train_cfg;
};

SyntheticSpec corpus_spec(std::uint64_t seed, int count) {
    SyntheticSpec spec;
    spec.vocab_size = 16;
    spec.transcript_min = 2;
    spec.transcript_max = 8;
    spec.frames_per_token_min = 4;
    spec.frames_per_token_max = 6;
    spec.noise_sigma = 1.8;
    spec.feature_dim = 16;
    spec.seed = seed;
    spec.count = count;
    return spec;
}

AcceptanceRun run_acceptance_training() {
    AcceptanceRun run;
    // one corpus split 500/100 so train and test share the token prototypes
    Dataset all = generate_dataset(corpus_spec(101, 600));
    run.train = all;
    run.train.records.assign(all.records.begin(), all.records.begin() + 500);
    run.test = all;
    run.test.records.assign(all.records.begin() + 500, all.records.end());

    ModelConfig mc;
    mc.enc_layers = 2;
    mc.dec_layers = 2;
    mc.model_dim = 32;
    mc.heads = 2;
    mc.ffn_dim = 64;
    mc.dropout_p = 0.1;
    mc.vocab = Vocabulary::letters(16);
    mc.feature_dim = 16;
    mc.conv_channels = 8;
    mc.train_iterations = 2;
    mc.ctc_weight = 0.3;
    // posterior-sampled feedback keeps the refiner trained on imperfect
    // alignments; with greedy feedback it degenerates to copying its input
    mc.feedback = "sampled";
    run.model_cfg = mc;

    TrainConfig tc;
    tc.batch_size = 8;
    tc.lr_factor = 1.0;
    tc.warmup_steps = 100;
    tc.total_steps = 10000;
    tc.checkpoint_interval = 1666;
    tc.average_last = 5;
    run.train_cfg = tc;

    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        TrainConfig cfg = tc;
        cfg.seed = seed;
        run.seeds.push_back(run_training(mc, cfg, run.train, "align-refine"));
    }
    return run;
}

// ---- criteria ----

void criterion_1_oracle_equivalence() {
    double t0 = now_seconds();
    std::mt19937_64 rng(1);
    int checked = 0;
    double worst = 0.0;
    bool ok = true;
    while (checked < 200) {
        int labels = 1 + static_cast<int>(rng() % 3);
        Vocabulary v = Vocabulary::letters(labels);
        int t = 2 + static_cast<int>(rng() % 7);  // up to 8 frames
        int ylen = 1 + static_cast<int>(rng() % 4);
        LabelSequence y;
        for (int i = 0; i < ylen; ++i) y.ids.push_back(1 + static_cast<int>(rng() % labels));
        Tensor logp = random_log_probs(t, v.extended_size(), rng);
        double oracle = oracle_log_likelihood(logp, y, v);
        Tensor dp = ctc_log_likelihood(logp, y, v);
        if (std::isinf(oracle)) {
            if (!is_neg_inf(dp)) ok = false;
        } else {
            double rel = std::abs(std::exp(dp.item()) - std::exp(oracle)) /
                         std::max(1e-300, std::exp(oracle));
            worst = std::max(worst, rel);
            if (rel > 1e-9) ok = false;
        }
        ++checked;
    }
    double secs = now_seconds() - t0;
    ok = ok && secs < 30.0;
    char detail[128];
    std::snprintf(detail, sizeof(detail), "200 instances, worst rel err %.2e, %.1f s", worst,
                  secs);
    report(1, ok, "forward DP equals brute-force alignment enumeration", detail);
}

void criterion_2_collapse_fidelity() {
    Vocabulary v2 = Vocabulary::letters(2);
    Alignment ex;
    // a b _ _ b b _ a
    ex.ids = {1, 2, 0, 0, 2, 2, 0, 1};
    LabelSequence want;
    want.ids = {1, 2, 2, 1};  // "abba"
    bool ok = collapse(ex, v2) == want;

    // exhaustive consistency for every alignment up to 6 frames over {a,b,_}:
    // each alignment appears in the enumerated preimage of exactly its collapse
    for (int t = 1; t <= 6 && ok; ++t) {
        long total = 1;
        for (int i = 0; i < t; ++i) total *= v2.extended_size();
        for (long code = 0; code < total && ok; ++code) {
            long c = code;
            Alignment a;
            for (int i = 0; i < t; ++i) {
                a.ids.push_back(static_cast<int>(c % v2.extended_size()));
                c /= v2.extended_size();
            }
            LabelSequence y = collapse(a, v2);
            auto pre = enumerate_alignments(y, t, v2);
            bool found = false;
            for (const auto& p : pre) found = found || p == a;
            ok = ok && found;
            for (const auto& p : pre) ok = ok && collapse(p, v2) == y;
        }
    }
    report(2, ok, "collapse worked example and exhaustive preimage consistency (T <= 6)");
}

void criterion_3_gradients() {
    double t0 = now_seconds();
    // CTC loss wrt logits through log-softmax
    std::mt19937_64 rng(3);
    Vocabulary v = Vocabulary::letters(3);
    LabelSequence y;
    y.ids = {1, 2, 1};
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> point(6 * 4);
    for (auto& x : point) x = d(rng);
    auto ctc_fn = [&](const Tensor& logits) {
        return scale(ctc_log_likelihood(log_softmax_rows(logits), y, v), -1.0);
    };
    double ctc_err = grad_check(ctc_fn, Tensor({6, 4}, point), 1e-6);
    bool ok = ctc_err < 1e-4;

    // composite loss on a tiny model, every parameter coordinate
    ModelConfig cfg;
    cfg.enc_layers = 1;
    cfg.dec_layers = 1;
    cfg.model_dim = 8;
    cfg.heads = 2;
    cfg.ffn_dim = 16;
    cfg.dropout_p = 0.0;
    cfg.vocab = Vocabulary::letters(3);
    cfg.feature_dim = 4;
    cfg.conv_channels = 2;
    cfg.train_iterations = 2;
    cfg.ctc_weight = 0.3;
    cfg.feedback = "ground_truth";  // feedback fixed under perturbation
    Model model(cfg, 5);
    Tensor feats = Tensor::zeros({8, 4});
    for (auto& x : feats.mutable_data()) x = d(rng);
    LabelSequence target;
    target.ids = {1};
    IterationWeights iw = iteration_weights(2, 0.3);
    auto loss_value = [&]() {
        auto [states, enc_logp] = model.encode(feats);
        Tensor loss = scale(ctc_log_likelihood(enc_logp, target, cfg.vocab), -iw.lambda);
        Alignment fb = canonical_alignment(target, states.dim(0), cfg.vocab);
        for (int k = 0; k < 2; ++k) {
            Tensor dec_logp = model.decoder_forward(fb, states);
            loss = add(loss,
                       scale(ctc_log_likelihood(dec_logp, target, cfg.vocab), -iw.w[k]));
        }
        return loss;
    };
    {
        Tape tape;
        TapeScope scope(tape);
        tape.backward(loss_value());
    }
    const double eps = 1e-5;
    double worst = 0.0;
    for (auto& [name, p] : model.params()) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            double orig = p.at(i);
            p.mutable_data()[i] = orig + eps;
            double up = loss_value().item();
            p.mutable_data()[i] = orig - eps;
            double dn = loss_value().item();
            p.mutable_data()[i] = orig;
            double num = (up - dn) / (2.0 * eps);
            double ana = p.grad()[i];
            worst = std::max(worst, std::abs(num - ana) /
                                        std::max({1.0, std::abs(num), std::abs(ana)}));
        }
    }
    double secs = now_seconds() - t0;
    ok = ok && worst < 1e-3 && secs < 120.0;
    char detail[128];
    std::snprintf(detail, sizeof(detail), "ctc %.2e, composite %.2e, %.1f s", ctc_err, worst,
                  secs);
    report(3, ok, "CTC and composite loss gradients match finite differences", detail);
}

void criterion_4_weights() {
    IterationWeights w = iteration_weights(4, 0.3);
    bool ok = w.lambda == 0.3 && w.w.size() == 4;
    ok = ok && std::abs(w.w[0] - 0.35) < 1e-12;
    for (int i = 1; i < 4; ++i) ok = ok && std::abs(w.w[i] - 0.7 / 6.0) < 1e-12;
    double sum = w.lambda;
    for (double x : w.w) sum += x;
    ok = ok && sum == 1.0;
    report(4, ok, "iteration_weights(4, 0.3) = (0.3, [0.35, 0.7/6 x3]) summing to 1 exactly");
}

std::map<int, double> wer_by_k(const Checkpoint& ck, const Dataset& test,
                               const std::vector<int>& ks) {
    EvalReport rep = run_eval(ck, test, ks, "align-refine");
    std::map<int, double> out;
    for (const auto& row : rep.rows) out[row.k] = row.wer;
    return out;
}

void criterion_5_refinement_helps(const AcceptanceRun& run, double setup_seconds) {
    double t0 = now_seconds();
    double w0 = 0.0, w1 = 0.0, w5 = 0.0;
    bool in_band = true;
    std::string per_seed;
    for (const auto& tr : run.seeds) {
        auto wer = wer_by_k(tr.final_checkpoint, run.test, {0, 1, 5});
        w0 += wer[0] / 3.0;
        w1 += wer[1] / 3.0;
        w5 += wer[5] / 3.0;
        in_band = in_band && wer[0] >= 0.10 && wer[0] <= 0.30;
        char buf[64];
        std::snprintf(buf, sizeof(buf), " [%.3f/%.3f/%.3f]", wer[0], wer[1], wer[5]);
        per_seed += buf;
    }
    double secs = setup_seconds + (now_seconds() - t0);
    bool ok = in_band && w1 < w0 && w5 <= w1 && secs < 1200.0;
    char detail[192];
    std::snprintf(detail, sizeof(detail),
                  "mean WER k0=%.3f k1=%.3f k5=%.3f, per-seed k0/k1/k5:%s, %.0f s", w0, w1, w5,
                  per_seed.c_str(), secs);
    report(5, ok, "refinement lowers WER over 3 seeds with k=0 WER in [0.10, 0.30]", detail);
}

void criterion_6_early_exit(const AcceptanceRun& run) {
    Model model = run.seeds.front().final_checkpoint.to_model();
    int early = 0, verified = 0, early_total = 0;
    for (const auto& rec : run.test.records) {
        RefinementTrace trace = decode(model, rec.features, {10, true});
        if (trace.exit_iteration < 10) ++early;
        if (trace.exited_early) {
            ++early_total;
            auto [states, logp] = model.encode(rec.features);
            Alignment again =
                greedy_alignment(model.decoder_forward(trace.alignments.back(), states));
            if (again == trace.alignments.back()) ++verified;
        }
    }
    bool ok = early * 2 >= static_cast<int>(run.test.records.size()) &&
              verified == early_total;
    char detail[128];
    std::snprintf(detail, sizeof(detail), "%d/%zu exited early, %d/%d fixed points verified",
                  early, run.test.records.size(), verified, early_total);
    report(6, ok, "majority early exit at k_max=10 and every exit is a fixed point", detail);
}

void criterion_7_non_reversal(const AcceptanceRun& run) {
    // infilling decoder trained on the frozen seed-1 encoder
    TrainConfig tc = run.train_cfg;
    tc.seed = 7;
    tc.total_steps = 200;
    ModelConfig mc = run.model_cfg;
    mc.infill_dec_layers = 2;
    TrainResult infill = run_training(mc, tc, run.train, "infilling",
                                      &run.seeds.front().final_checkpoint);
    Model model = infill.last_checkpoint.to_model();

    std::mt19937_64 rng(77);
    long decodes = 0, commit_checks = 0;
    bool no_reversal = true;
    while (decodes < 1000) {
        const auto& rec = run.test.records[decodes % run.test.records.size()];
        double threshold = 0.5 + 0.5 * static_cast<double>(rng() % 1000) / 1000.0;
        Tensor enc;
        MaskedHypothesis h = initial_mask(model, rec.features, threshold, &enc);
        InfillResult r = infill_decode(model, enc, h, 4);
        std::vector<int> prev = h.tokens;
        for (const auto& it : r.iterations) {
            for (std::size_t i = 0; i < prev.size(); ++i) {
                if (prev[i] != model.mask_token_id()) {
                    no_reversal = no_reversal && it.tokens[i] == prev[i];
                    ++commit_checks;
                }
            }
            prev = it.tokens;
        }
        ++decodes;
    }

    // align-refine on the same corpus revises committed frames somewhere;
    // check the final model first, then an early snapshot if it is too settled
    long reversals = 0;
    for (const Checkpoint* ck : {&run.seeds.front().final_checkpoint,
                                 &run.seeds.front().saved.front()}) {
        EvalReport rep = run_eval(*ck, run.test, {10}, "align-refine");
        reversals = rep.rows.front().reversals;
        if (reversals > 0) break;
    }
    bool ok = no_reversal && commit_checks > 0 && reversals > 0;
    char detail[128];
    std::snprintf(detail, sizeof(detail),
                  "%ld decodes, %ld commitments honored, align-refine reversals %ld", decodes,
                  commit_checks, reversals);
    report(7, ok, "infilling never revises a committed token; align-refine does", detail);
}

void criterion_8_depth_reallocation() {
    Dataset train = generate_dataset(corpus_spec(303, 120));
    Dataset test = generate_dataset(corpus_spec(404, 30));
    ModelConfig mc;
    mc.model_dim = 32;
    mc.heads = 2;
    mc.ffn_dim = 64;
    mc.dropout_p = 0.0;
    mc.vocab = Vocabulary::letters(16);
    mc.feature_dim = 16;
    mc.conv_channels = 8;
    mc.train_iterations = 2;
    TrainConfig tc;
    tc.batch_size = 8;
    tc.lr_factor = 1.0;
    tc.warmup_steps = 50;
    tc.total_steps = 150;
    tc.checkpoint_interval = 50;
    tc.average_last = 2;
    tc.seed = 8;
    AblationReport rep =
        run_depth_ablation(mc, tc, train, test, {{5, 1}, {4, 2}}, {3});
    bool counters = true;
    for (const auto& s : rep.splits) counters = counters && s.pass_counters_ok;
    // timing compared with the budget fully used: 5 + 3*1 = 8 layer passes
    // against 4 + 3*2 = 10
    double shallow = rep.splits[0].rtf_full.at(3);
    double deep = rep.splits[1].rtf_full.at(3);
    bool ok = counters && shallow < deep;
    char detail[128];
    std::snprintf(detail, sizeof(detail),
                  "(5,1) rtf %.4f vs (4,2) rtf %.4f at k=3, counters %s", shallow, deep,
                  counters ? "exact" : "WRONG");
    report(8, ok, "fewer decoder layers decode faster at equal total depth", detail);
}

void criterion_9_frontend_law() {
    ModelConfig cfg;
    cfg.enc_layers = 1;
    cfg.dec_layers = 1;
    cfg.model_dim = 8;
    cfg.heads = 2;
    cfg.ffn_dim = 16;
    cfg.dropout_p = 0.0;
    cfg.vocab = Vocabulary::letters(3);
    cfg.feature_dim = 4;
    cfg.conv_channels = 2;
    Model model(cfg, 9);
    std::mt19937_64 rng(9);
    std::normal_distribution<double> d(0.0, 1.0);
    bool ok = true;
    for (int t = 1; t <= 64; ++t) {
        Tensor f = Tensor::zeros({t, 4});
        for (auto& x : f.mutable_data()) x = d(rng);
        int got = model.conv_frontend(f).dim(0);
        int want = ((t + 1) / 2 + 1) / 2;
        ok = ok && got == want;
    }
    report(9, ok, "conv frontend output length is ceil(ceil(T/2)/2) for T in [1, 64]");
}

void criterion_10_averaging(const AcceptanceRun& run) {
    const auto& saved = run.seeds.front().saved;
    std::vector<Checkpoint> last5(saved.end() - 5, saved.end());
    Checkpoint avg = average_checkpoints(last5);
    bool ok = true;
    double worst = 0.0;
    for (const auto& [name, t] : avg.params) {
        for (std::size_t i = 0; i < t.size(); ++i) {
            double mean = 0.0;
            for (const auto& ck : last5) mean += ck.params.at(name).at(i);
            mean /= 5.0;
            worst = std::max(worst, std::abs(t.at(i) - mean));
        }
    }
    ok = worst < 1e-15;
    double avg_wer = wer_by_k(avg, run.test, {1})[1];
    double last_wer = wer_by_k(run.seeds.front().last_checkpoint, run.test, {1})[1];
    char detail[160];
    std::snprintf(detail, sizeof(detail),
                  "worst dev %.2e; soft check: averaged WER %.3f vs last %.3f (%s)", worst,
                  avg_wer, last_wer,
                  avg_wer <= last_wer + 0.01 ? "within 1%" : "outside 1%, report only");
    report(10, ok, "5-way checkpoint mean matches external recomputation to 1e-15", detail);
}

}  // namespace

int main() {
    criterion_1_oracle_equivalence();
    criterion_2_collapse_fidelity();
    criterion_3_gradients();
    criterion_4_weights();

    double t0 = now_seconds();
    AcceptanceRun run = run_acceptance_training();
    double setup = now_seconds() - t0;

    criterion_5_refinement_helps(run, setup);
    criterion_6_early_exit(run);
    criterion_7_non_reversal(run);
    criterion_8_depth_reallocation();
    criterion_9_frontend_law();
    criterion_10_averaging(run);

    if (g_failures > 0) {
        std::cout << g_failures << " criteria failed" << std::endl;
        return 1;
    }
    std::cout << "all 10 criteria passed" << std::endl;
    return 0;
}
