#include "ar/refine.hpp"

#include <chrono>
#include <cmath>

#include "ar/ops.hpp"

namespace ar {

IterationWeights iteration_weights(int k, double lambda) {
    if (k < 1) throw ShapeError("iteration_weights: K must be >= 1");
    if (!(lambda > 0.0 && lambda < 1.0)) {
        throw ShapeError("iteration_weights: lambda must be in (0,1)");
    }
    double r = (1.0 - lambda) / (k + 2);
    IterationWeights iw;
    iw.lambda = lambda;
    iw.w.assign(static_cast<std::size_t>(k), r);
    iw.w[0] = 3.0 * r;
    // close lambda + sum(w) to exactly one (the residual is a few ulps)
    for (int pass = 0; pass < 4; ++pass) {
        double s = iw.lambda;
        for (double wi : iw.w) s += wi;
        if (s == 1.0) break;
        iw.w[0] += 1.0 - s;
    }
    return iw;
}

namespace {

Tensor uniform_kl_penalty(const Tensor& log_probs) {
    // KL(uniform || p) up to a constant: -mean(log p) - log n
    int n = log_probs.dim(1);
    return add(scale(reduce_mean(log_probs), -1.0), Tensor::scalar(-std::log(double(n))));
}

// Scheduled-sampling feedback: draw each frame label from the posterior instead
// of taking the argmax, so the next iteration trains on imperfect alignments.
Alignment sample_alignment(const Tensor& log_probs, std::mt19937_64& rng) {
    int t_frames = log_probs.dim(0);
    int n = log_probs.dim(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Alignment a;
    a.ids.reserve(static_cast<std::size_t>(t_frames));
    for (int t = 0; t < t_frames; ++t) {
        double r = u(rng);
        double acc = 0.0;
        int pick = n - 1;
        for (int j = 0; j < n; ++j) {
            acc += std::exp(log_probs.at(t * n + j));
            if (r < acc) {
                pick = j;
                break;
            }
        }
        a.ids.push_back(pick);
    }
    return a;
}

}  // namespace

TrainStepReport training_step(Model& model, const std::vector<Sample>& batch,
                              std::mt19937_64& rng, int total_batch) {
    const ModelConfig& cfg = model.config();
    if (batch.empty()) throw ShapeError("training_step: empty batch");
    if (total_batch < static_cast<int>(batch.size())) {
        throw ShapeError("training_step: total_batch smaller than micro-batch");
    }
    IterationWeights iw = iteration_weights(cfg.train_iterations, cfg.ctc_weight);
    TrainStepReport report;
    report.iteration_losses.assign(static_cast<std::size_t>(cfg.train_iterations), 0.0);
    report.batch_size = static_cast<int>(batch.size());
    int used = 0;
    for (const Sample& s : batch) {
        Tape tape;
        TapeScope scope(tape);
        auto [enc_states, enc_logp] = model.encode(s.features, &rng);
        int t_prime = enc_logp.dim(0);
        if (t_prime < min_alignment_frames(s.transcript)) {
            ++report.skipped_samples;
            continue;
        }
        Tensor l_ctc = scale(ctc_log_likelihood(enc_logp, s.transcript, cfg.vocab), -1.0);
        Tensor loss = scale(l_ctc, iw.lambda);
        if (cfg.uniform_kl_weight > 0.0) {
            loss = add(loss, scale(uniform_kl_penalty(enc_logp),
                                   iw.lambda * cfg.uniform_kl_weight));
        }
        report.encoder_ctc_loss += l_ctc.item();

        // Feedback alignments are discrete argmax identities; no gradient flows
        // through them into earlier iterations.
        Alignment a_prev = cfg.feedback == "ground_truth"
                               ? canonical_alignment(s.transcript, t_prime, cfg.vocab)
                           : cfg.feedback == "sampled" ? sample_alignment(enc_logp, rng)
                                                       : greedy_alignment(enc_logp);
        for (int k = 0; k < cfg.train_iterations; ++k) {
            Tensor dec_logp = model.decoder_forward(a_prev, enc_states, &rng);
            Tensor l_k = scale(ctc_log_likelihood(dec_logp, s.transcript, cfg.vocab), -1.0);
            report.iteration_losses[static_cast<std::size_t>(k)] += l_k.item();
            loss = add(loss, scale(l_k, iw.w[static_cast<std::size_t>(k)]));
            if (cfg.uniform_kl_weight > 0.0) {
                loss = add(loss, scale(uniform_kl_penalty(dec_logp),
                                       iw.w[static_cast<std::size_t>(k)] *
                                           cfg.uniform_kl_weight));
            }
            if (cfg.feedback == "greedy") {
                a_prev = greedy_alignment(dec_logp);
            } else if (cfg.feedback == "sampled") {
                a_prev = sample_alignment(dec_logp, rng);
            }
        }
        report.total_loss += loss.item();
        tape.backward(scale(loss, 1.0 / total_batch));
        ++used;
    }
    if (used > 0) {
        report.total_loss /= used;
        report.encoder_ctc_loss /= used;
        for (auto& l : report.iteration_losses) l /= used;
    }
    return report;
}

RefinementTrace decode(const Model& model, const Tensor& features, const DecodeOptions& opts) {
    if (opts.k_max < 0) throw ShapeError("decode: k_max must be >= 0");
    const ModelConfig& cfg = model.config();
    using clock = std::chrono::steady_clock;
    RefinementTrace trace;
    auto t0 = clock::now();
    auto [enc_states, enc_logp] = model.encode(features, nullptr);
    Alignment a = greedy_alignment(enc_logp);
    trace.iteration_seconds.push_back(std::chrono::duration<double>(clock::now() - t0).count());
    trace.alignments.push_back(a);
    trace.hypotheses.push_back(collapse(a, cfg.vocab));
    trace.exit_iteration = 0;
    for (int k = 1; k <= opts.k_max; ++k) {
        auto tk = clock::now();
        Tensor dec_logp = model.decoder_forward(a, enc_states, nullptr);
        Alignment next = greedy_alignment(dec_logp);
        trace.iteration_seconds.push_back(
            std::chrono::duration<double>(clock::now() - tk).count());
        trace.alignments.push_back(next);
        trace.hypotheses.push_back(collapse(next, cfg.vocab));
        trace.exit_iteration = k;
        bool same = cfg.exit_on_collapse ? (trace.hypotheses[k] == trace.hypotheses[k - 1])
                                         : (next == a);
        a = next;
        if (opts.early_exit && same) {
            trace.exited_early = k < opts.k_max;
            break;
        }
    }
    return trace;
}

std::vector<IterationEdits> refinement_edit_report(const RefinementTrace& trace,
                                                   const Vocabulary& v) {
    std::vector<IterationEdits> out;
    for (std::size_t i = 1; i < trace.alignments.size(); ++i) {
        const Alignment& prev = trace.alignments[i - 1];
        const Alignment& cur = trace.alignments[i];
        if (prev.length() != cur.length()) {
            throw ShapeError("refinement_edit_report: alignment lengths differ within a trace");
        }
        IterationEdits e;
        for (int t = 0; t < cur.length(); ++t) {
            if (prev.ids[static_cast<std::size_t>(t)] != cur.ids[static_cast<std::size_t>(t)])
                ++e.frame_substitutions;
        }
        e.null_edit = e.frame_substitutions > 0 && collapse(prev, v) == collapse(cur, v);
        out.push_back(e);
    }
    return out;
}

}  // namespace ar
