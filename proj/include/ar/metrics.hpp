#pragma once

#include <utility>
#include <vector>

#include "ar/ctc.hpp"

namespace ar {

struct EditStats {
    int substitutions = 0;
    int deletions = 0;
    int insertions = 0;
    int ref_length = 0;

    int errors() const { return substitutions + deletions + insertions; }
    double wer() const;
};

/// Minimal S+D+I alignment with a deterministic backtrace that prefers
/// substitutions over insert+delete pairs.
EditStats edit_distance(const LabelSequence& ref, const LabelSequence& hyp);

/// Pooled corpus rate: sum(errors) / sum(ref lengths), not a mean of rates.
double corpus_wer(const std::vector<std::pair<LabelSequence, LabelSequence>>& pairs);

struct LatencyReport {
    double wall_seconds = 0.0;
    double audio_seconds = 0.0;
    double rtf = 0.0;
    std::vector<double> per_iteration_seconds;
    bool single_threaded = true;  // measurement contract
};

LatencyReport make_latency_report(double wall_seconds, double audio_seconds,
                                  std::vector<double> per_iteration_seconds = {});

}  // namespace ar
