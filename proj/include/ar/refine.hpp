#pragma once

#include <random>
#include <vector>

#include "ar/model.hpp"

namespace ar {

/// Loss mixing weights: lambda for the encoder CTC term, w[k] for refinement
/// iteration k+1, with w[0] three times the rest and lambda + sum(w) = 1.
struct IterationWeights {
    double lambda;
    std::vector<double> w;
};

IterationWeights iteration_weights(int k, double lambda);

struct RefinementTrace {
    std::vector<Alignment> alignments;        // a0 .. a_exit
    std::vector<LabelSequence> hypotheses;    // collapse of each
    std::vector<double> iteration_seconds;    // [0] = encoder pass, then one per iteration
    int exit_iteration = 0;
    bool exited_early = false;

    const LabelSequence& final_hypothesis() const { return hypotheses.back(); }
};

struct TrainStepReport {
    double total_loss = 0.0;
    double encoder_ctc_loss = 0.0;
    std::vector<double> iteration_losses;  // K values
    int skipped_samples = 0;
    int batch_size = 0;
};

struct Sample {
    Tensor features;
    LabelSequence transcript;
};

/// Forward + backward for one (micro-)batch; per-sample losses are scaled by
/// 1/total_batch so gradient accumulation across micro-batches matches one
/// large batch bit-for-bit. Grads accumulate into the model parameters.
TrainStepReport training_step(Model& model, const std::vector<Sample>& batch,
                              std::mt19937_64& rng, int total_batch);

struct DecodeOptions {
    int k_max = 10;
    bool early_exit = true;
};

RefinementTrace decode(const Model& model, const Tensor& features, const DecodeOptions& opts);

struct IterationEdits {
    int frame_substitutions = 0;
    bool null_edit = false;  // alignments differ, collapses identical
};

std::vector<IterationEdits> refinement_edit_report(const RefinementTrace& trace,
                                                   const Vocabulary& v);

}  // namespace ar
