#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>

#include "ar/ctc.hpp"
#include "ar/tensor.hpp"

namespace ar {

struct ModelConfig {
    int enc_layers = 4;
    int dec_layers = 2;
    int model_dim = 64;
    int heads = 2;
    int ffn_dim = 128;
    double dropout_p = 0.1;
    Vocabulary vocab;
    int feature_dim = 16;
    int conv_channels = 16;
    int train_iterations = 4;  // K
    double ctc_weight = 0.3;   // lambda
    bool tie_heads = false;
    bool has_infill = false;
    int infill_dec_layers = 2;
    std::string feedback = "greedy";  // or "ground_truth" / "sampled"
    ConfidenceMode confidence = ConfidenceMode::Max;
    bool exit_on_collapse = false;
    double uniform_kl_weight = 0.0;

    void validate() const;
    /// Frame count after the 4x conv frontend: ceil(ceil(T/2)/2).
    static int frontend_frames(int t) { return ((t + 1) / 2 + 1) / 2; }

    bool operator==(const ModelConfig&) const = default;
};

struct LayerPassCounters {
    long encoder_layer_passes = 0;
    long decoder_layer_passes = 0;
    long encoder_calls = 0;
    long decoder_calls = 0;
    void reset() { *this = LayerPassCounters{}; }
};

/// Transformer encoder-decoder over CTC alignments, with the optional
/// mask-infilling decoder sharing the encoder.
class Model {
  public:
    Model(ModelConfig cfg, std::uint64_t init_seed);
    Model(ModelConfig cfg, std::map<std::string, Tensor> params);

    const ModelConfig& config() const { return cfg_; }
    std::map<std::string, Tensor>& params() { return params_; }
    const std::map<std::string, Tensor>& params() const { return params_; }
    Tensor& param(const std::string& name);
    const Tensor& param(const std::string& name) const;

    /// [T, feature_dim] -> [frontend_frames(T), model_dim], positions added.
    Tensor conv_frontend(const Tensor& features, std::mt19937_64* drop_rng = nullptr) const;

    /// Returns (encoder states, CTC-head log-prob matrix), both [T', ...].
    std::pair<Tensor, Tensor> encoder_forward(const Tensor& h,
                                              std::mt19937_64* drop_rng = nullptr) const;

    /// frontend + encoder in one call.
    std::pair<Tensor, Tensor> encode(const Tensor& features,
                                     std::mt19937_64* drop_rng = nullptr) const;

    /// Refinement decoder: alignment in, same-length log-prob matrix out.
    Tensor decoder_forward(const Alignment& a, const Tensor& enc_states,
                           std::mt19937_64* drop_rng = nullptr) const;

    /// Decoder body on pre-embedded input (test hook; pos_override swaps the
    /// position encoding that is otherwise added internally).
    Tensor decoder_forward_embedded(const Tensor& embedded, const Tensor& enc_states,
                                    std::mt19937_64* drop_rng = nullptr,
                                    const Tensor* pos_override = nullptr) const;

    Tensor embed_alignment(const Alignment& a) const;

    /// Infilling decoder over token-level inputs; ids over 1..|L| plus
    /// mask_token_id(). Output: [len, |L|] log-probs over plain labels.
    Tensor infill_decoder_forward(const std::vector<int>& tokens, const Tensor& enc_states,
                                  std::mt19937_64* drop_rng = nullptr) const;
    int mask_token_id() const { return cfg_.vocab.extended_size(); }

    LayerPassCounters& counters() const { return counters_; }

    static Tensor sinusoidal_positions(int len, int dim);

  private:
    Tensor attention(const Tensor& q_in, const Tensor& kv_in, const std::string& prefix,
                     std::mt19937_64* drop_rng) const;
    Tensor ffn(const Tensor& x, const std::string& prefix, std::mt19937_64* drop_rng) const;
    Tensor decoder_stack(const Tensor& x0, const Tensor& enc_states, const std::string& prefix,
                         int layers, std::mt19937_64* drop_rng) const;
    Tensor maybe_dropout(const Tensor& x, std::mt19937_64* drop_rng) const;
    void init_params(std::uint64_t seed);

    ModelConfig cfg_;
    std::map<std::string, Tensor> params_;
    mutable LayerPassCounters counters_;
};

}  // namespace ar
