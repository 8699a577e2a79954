#include "ar/infill.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ar/ops.hpp"

namespace ar {

namespace {
constexpr double kLabelSmoothing = 0.1;
}

int MaskedHypothesis::mask_count(int mask_id) const {
    return static_cast<int>(std::count(tokens.begin(), tokens.end(), mask_id));
}

MaskedHypothesis initial_mask(const Model& model, const Tensor& features, double threshold,
                              Tensor* enc_states_out) {
    if (threshold < 0.0 || threshold > 1.0) {
        throw ShapeError("initial_mask: threshold must be in [0,1]");
    }
    const ModelConfig& cfg = model.config();
    auto [enc_states, enc_logp] = model.encode(features, nullptr);
    if (enc_states_out) *enc_states_out = enc_states;
    Alignment a = greedy_alignment(enc_logp);
    LabelSequence y = collapse(a, cfg.vocab);
    std::vector<double> conf = token_confidences(enc_logp, a, cfg.vocab, cfg.confidence);
    MaskedHypothesis h;
    h.tokens = y.ids;
    h.confidences = conf;
    for (std::size_t i = 0; i < h.tokens.size(); ++i) {
        if (conf[i] < threshold) h.tokens[i] = model.mask_token_id();
    }
    return h;
}

InfillResult infill_decode(const Model& model, const Tensor& enc_states, MaskedHypothesis h,
                           int k) {
    if (k < 1) throw ShapeError("infill_decode: K must be >= 1");
    const int mask_id = model.mask_token_id();
    InfillResult result;
    int remaining = h.mask_count(mask_id);
    if (remaining == 0 || h.tokens.empty()) {
        result.hypothesis.ids = h.tokens;
        return result;  // nothing masked: zero model calls
    }
    for (int pass = 1; pass <= k; ++pass) {
        Tensor logp = model.infill_decoder_forward(h.tokens, enc_states, nullptr);
        ++result.decoder_passes;
        int quota = (remaining + (k - pass)) / (k - pass + 1);  // ceil(rem / passes left)
        // predictions at masked positions only; committed tokens stay frozen
        std::vector<std::pair<double, int>> candidates;  // (-conf, position)
        int n_labels = logp.dim(1);
        for (std::size_t i = 0; i < h.tokens.size(); ++i) {
            if (h.tokens[i] != mask_id) continue;
            const double* row = logp.data().data() + i * n_labels;
            int best = static_cast<int>(std::max_element(row, row + n_labels) - row);
            candidates.emplace_back(-std::exp(row[best]), static_cast<int>(i));
        }
        std::sort(candidates.begin(), candidates.end());
        int take = std::min<int>(quota, static_cast<int>(candidates.size()));
        for (int c = 0; c < take; ++c) {
            int pos = candidates[static_cast<std::size_t>(c)].second;
            const double* row = logp.data().data() + static_cast<std::size_t>(pos) * n_labels;
            int best = static_cast<int>(std::max_element(row, row + n_labels) - row);
            h.tokens[static_cast<std::size_t>(pos)] = best + 1;  // head index -> extended id
            h.confidences[static_cast<std::size_t>(pos)] = std::exp(row[best]);
        }
        remaining -= take;
        h.iteration = pass;
        result.iterations.push_back(h);
    }
    if (remaining != 0) throw NumericError("infill_decode: schedule left masked positions");
    result.hypothesis.ids = h.tokens;
    return result;
}

double infill_training_step(Model& model, const std::vector<Sample>& batch,
                            std::mt19937_64& rng, int total_batch) {
    const ModelConfig& cfg = model.config();
    if (!cfg.has_infill) throw ShapeError("infill_training_step: model has no infill decoder");
    if (batch.empty()) throw ShapeError("infill_training_step: empty batch");
    int n_labels = cfg.vocab.num_labels();
    double total = 0.0;
    int used = 0;
    for (const Sample& s : batch) {
        if (s.transcript.length() == 0) continue;
        Tape tape;
        TapeScope scope(tape);
        auto [enc_states, enc_logp] = model.encode(s.features, &rng);
        // detach: the shared encoder is not updated by the baseline
        Tensor enc_detached(enc_states.shape(), enc_states.data());
        int len = s.transcript.length();
        std::vector<int> order(static_cast<std::size_t>(len));
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        int n_mask = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(len));
        std::vector<int> tokens = s.transcript.ids;
        std::vector<int> masked(order.begin(), order.begin() + n_mask);
        for (int pos : masked) tokens[static_cast<std::size_t>(pos)] = model.mask_token_id();
        Tensor logp = model.infill_decoder_forward(tokens, enc_detached, &rng);
        Tensor loss = Tensor::scalar(0.0);
        for (int pos : masked) {
            Tensor row = slice_rows(logp, pos, pos + 1);
            Tensor picked = gather_cols(row, {s.transcript.ids[static_cast<std::size_t>(pos)] - 1});
            loss = add(loss, add(scale(reduce_sum(picked), -(1.0 - kLabelSmoothing)),
                                 scale(reduce_sum(row), -kLabelSmoothing / n_labels)));
        }
        loss = scale(loss, 1.0 / n_mask);
        total += loss.item();
        tape.backward(scale(loss, 1.0 / total_batch));
        ++used;
    }
    return used ? total / used : 0.0;
}

}  // namespace ar
