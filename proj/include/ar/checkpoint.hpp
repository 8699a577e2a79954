#pragma once

#include <map>
#include <string>
#include <vector>

#include "ar/model.hpp"

namespace ar {

inline constexpr int kCheckpointSchemaVersion = 1;

/// Full parameter snapshot. Serialization is bit-exact (raw float64 payloads).
struct Checkpoint {
    int schema_version = kCheckpointSchemaVersion;
    ModelConfig config;
    std::map<std::string, Tensor> params;
    long step = 0;
    std::map<std::string, std::vector<double>> adam_m;
    std::map<std::string, std::vector<double>> adam_v;
    std::string rng_state;
    std::vector<std::string> provenance;

    static Checkpoint from_model(const Model& model, long step);
    Model to_model() const;
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Arithmetic mean per parameter; configs must match field-for-field.
/// Optimizer state is dropped; provenance lists the inputs.
Checkpoint average_checkpoints(const std::vector<Checkpoint>& cks);
Checkpoint average_checkpoint_files(const std::vector<std::string>& paths);

}  // namespace ar
