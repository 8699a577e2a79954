#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ar/ctc.hpp"
#include "ar/tensor.hpp"

namespace ar {

inline constexpr int kDatasetSchemaVersion = 1;
inline constexpr double kFrameShiftSeconds = 0.01;  // nominal 10 ms frame shift

struct SyntheticSpec {
    int vocab_size = 16;
    int transcript_min = 2;
    int transcript_max = 8;
    int frames_per_token_min = 4;
    int frames_per_token_max = 6;
    double blank_gap_prob = 0.3;
    int gap_min = 1;
    int gap_max = 3;
    double noise_sigma = 0.1;
    int feature_dim = 16;
    std::uint64_t seed = 0;
    int count = 100;

    void validate() const;
};

struct DatasetRecord {
    std::string id;
    Tensor features;  // [T, feature_dim]
    LabelSequence transcript;
};

struct Dataset {
    SyntheticSpec spec;
    Vocabulary vocab;
    std::vector<DatasetRecord> records;

    double total_audio_seconds() const;
};

/// Token prototype vectors used by the generator; fixed by the spec seed.
std::vector<std::vector<double>> token_prototypes(const SyntheticSpec& spec);

/// Deterministic per (seed, index): same spec twice gives identical bytes.
/// Every record satisfies the CTC reachability bound after 4x downsampling.
Dataset generate_dataset(const SyntheticSpec& spec);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace ar
