#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ar/checkpoint.hpp"
#include "ar/data.hpp"
#include "ar/refine.hpp"

namespace ar {

struct TrainConfig {
    int batch_size = 8;                  // sequences per micro-batch
    std::string batch_unit = "sequences";  // or "tokens"
    int token_budget = 64;               // used when batch_unit == "tokens"
    double lr_factor = 10.0;
    int warmup_steps = 400;
    int total_steps = 3000;
    int grad_accum = 1;
    int checkpoint_interval = 100;
    int average_last = 5;
    std::uint64_t seed = 1;

    void validate() const;
};

/// Inverse-sqrt schedule with linear warmup:
/// lr = factor * model_dim^-0.5 * min(step^-0.5, step * warmup^-1.5)
double lr_at(long step, const TrainConfig& cfg, int model_dim);

struct StepRecord {
    long step = 0;
    double lr = 0.0;
    TrainStepReport report;
};

struct TrainResult {
    Checkpoint final_checkpoint;  // averaged over the last saved snapshots
    Checkpoint last_checkpoint;
    std::vector<StepRecord> steps;
    std::vector<Checkpoint> saved;
    bool diverged = false;
    long skipped_samples = 0;
};

/// family: "align-refine" (joint CTC + refinement) or "infilling" (trains the
/// mask decoder on top of a base model's frozen encoder; init required).
/// resume continues a previous run bit-exactly (per-step keyed RNG).
TrainResult run_training(const ModelConfig& model_cfg, const TrainConfig& cfg,
                         const Dataset& data, const std::string& family,
                         const Checkpoint* init = nullptr,
                         const Checkpoint* resume = nullptr);

struct EvalMetrics {
    std::string family;
    int k = 0;
    double wer = 0.0;
    double cer = 0.0;
    double mean_exit_iteration = 0.0;
    long null_edits = 0;
    double rtf = 0.0;
    double wall_seconds = 0.0;
    long utterances = 0;
    long reversals = 0;  // committed-label frame revisions across iterations
};

struct EvalReport {
    std::string config_hash;
    std::string provenance;
    std::vector<EvalMetrics> rows;
};

double infill_threshold_default();

EvalReport run_eval(const Checkpoint& ck, const Dataset& data, const std::vector<int>& k_list,
                    const std::string& family);
void save_eval_report(const EvalReport& r, const std::string& path);

struct AblationSplit {
    int enc_layers = 0;
    int dec_layers = 0;
    std::map<int, double> wer;       // per k
    std::map<int, double> rtf;       // per k, early exit on
    std::map<int, double> rtf_full;  // per k, early exit off (pure layer cost)
    bool pass_counters_ok = true;
};

struct AblationReport {
    std::vector<AblationSplit> splits;
    bool shallow_decoder_flagged = false;  // dec==1 split trails a deeper split
};

/// Trains every split on identical data/seed and evaluates at the shared
/// k_list. Splits must all sum to the same total layer count.
AblationReport run_depth_ablation(const ModelConfig& base, const TrainConfig& cfg,
                                  const Dataset& train, const Dataset& test,
                                  const std::vector<std::pair<int, int>>& splits,
                                  const std::vector<int>& k_list);
void save_ablation_report(const AblationReport& r, const std::string& path);

std::string config_hash(const ModelConfig& cfg);

}  // namespace ar
