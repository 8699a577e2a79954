#pragma once

#include <random>
#include <vector>

#include "ar/model.hpp"
#include "ar/refine.hpp"

namespace ar {

/// Token-level hypothesis for mask infilling. Tokens are extended label ids
/// (1..|L|) or the model's mask token id. Length is fixed at creation; once a
/// position is unmasked it never changes (non-reversal).
struct MaskedHypothesis {
    std::vector<int> tokens;
    std::vector<double> confidences;
    int iteration = 0;

    int mask_count(int mask_id) const;
};

/// Greedy CTC collapse of the encoder output with low-confidence tokens
/// replaced by MASK. enc_states_out receives the encoder states for the
/// subsequent infill_decode calls.
MaskedHypothesis initial_mask(const Model& model, const Tensor& features, double threshold,
                              Tensor* enc_states_out);

struct InfillResult {
    LabelSequence hypothesis;
    std::vector<MaskedHypothesis> iterations;  // state after each decoder pass
    int decoder_passes = 0;
};

/// Unmasks ceil(M_remaining / K_remaining) highest-confidence predictions per
/// pass; committed tokens are frozen. Exactly K decoder passes when any
/// position starts masked, zero otherwise.
InfillResult infill_decode(const Model& model, const Tensor& enc_states, MaskedHypothesis h,
                           int k);

/// Cross-entropy (label smoothing 0.1) on randomly masked transcript positions,
/// gradients restricted to the infill decoder (encoder states are detached).
double infill_training_step(Model& model, const std::vector<Sample>& batch,
                            std::mt19937_64& rng, int total_batch);

}  // namespace ar
