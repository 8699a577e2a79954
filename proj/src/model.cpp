#include "ar/model.hpp"

#include <cmath>

#include "ar/ops.hpp"

namespace ar {

void ModelConfig::validate() const {
    if (model_dim <= 0 || heads <= 0 || model_dim % heads != 0) {
        throw ShapeError("model_dim must be positive and divisible by heads");
    }
    if (enc_layers < 0 || dec_layers < 0 || infill_dec_layers < 0) {
        throw ShapeError("layer counts must be non-negative");
    }
    if (train_iterations < 1) throw ShapeError("train_iterations K must be >= 1");
    if (!(ctc_weight > 0.0 && ctc_weight < 1.0)) {
        throw ShapeError("ctc_weight lambda must be in (0,1)");
    }
    if (feature_dim < 4) {
        throw ShapeError("feature_dim must be >= 4 (two stride-2 reductions)");
    }
    if (ffn_dim < 1 || conv_channels < 1) throw ShapeError("ffn_dim/conv_channels must be >= 1");
    if (dropout_p < 0.0 || dropout_p >= 1.0) throw ShapeError("dropout_p must be in [0,1)");
    if (vocab.num_labels() < 1) throw ShapeError("vocabulary must have at least one label");
    if (feedback != "greedy" && feedback != "ground_truth" && feedback != "sampled") {
        throw ShapeError("feedback must be 'greedy', 'ground_truth', or 'sampled'");
    }
    if (uniform_kl_weight < 0.0) throw ShapeError("uniform_kl_weight must be >= 0");
}

Model::Model(ModelConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    init_params(init_seed);
}

Model::Model(ModelConfig cfg, std::map<std::string, Tensor> params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
    cfg_.validate();
}

Tensor& Model::param(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ShapeError("unknown parameter: " + name);
    return it->second;
}

const Tensor& Model::param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ShapeError("unknown parameter: " + name);
    return it->second;
}

namespace {

Tensor init_matrix(std::vector<int> shape, double std_dev, std::mt19937_64& rng) {
    Tensor t = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
    std::normal_distribution<double> d(0.0, std_dev);
    for (auto& v : t.mutable_data()) v = d(rng);
    return t;
}

double xavier_std(int fan_in, int fan_out) {
    return std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
}

}  // namespace

void Model::init_params(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    int d = cfg_.model_dim;
    int c = cfg_.conv_channels;
    int vp = cfg_.vocab.extended_size();

    auto linear = [&](const std::string& name, int in, int out) {
        params_[name + ".w"] = init_matrix({in, out}, xavier_std(in, out), rng);
        params_[name + ".b"] = Tensor::zeros({out}, true);
    };
    auto norm = [&](const std::string& name) {
        params_[name + ".g"] = Tensor::full({d}, 1.0, true);
        params_[name + ".b"] = Tensor::zeros({d}, true);
    };
    auto attn = [&](const std::string& p) {
        linear(p + ".q", d, d);
        linear(p + ".k", d, d);
        linear(p + ".v", d, d);
        linear(p + ".o", d, d);
    };
    auto ffn_params = [&](const std::string& p) {
        linear(p + ".w1", d, cfg_.ffn_dim);
        linear(p + ".w2", cfg_.ffn_dim, d);
    };

    params_["frontend.conv1.w"] = init_matrix({c, 1, 3, 3}, xavier_std(9, 9 * c), rng);
    params_["frontend.conv1.b"] = Tensor::zeros({c}, true);
    params_["frontend.conv2.w"] = init_matrix({c, c, 3, 3}, xavier_std(9 * c, 9 * c), rng);
    params_["frontend.conv2.b"] = Tensor::zeros({c}, true);
    int f2 = ModelConfig::frontend_frames(cfg_.feature_dim);
    linear("frontend.proj", f2 * c, d);

    for (int i = 0; i < cfg_.enc_layers; ++i) {
        std::string p = "enc.l" + std::to_string(i);
        norm(p + ".ln1");
        attn(p + ".attn");
        norm(p + ".ln2");
        ffn_params(p + ".ffn");
    }
    norm("enc.final_ln");
    linear("enc.head", d, vp);

    params_["dec.embed"] = init_matrix({vp, d}, 0.02, rng);
    for (int i = 0; i < cfg_.dec_layers; ++i) {
        std::string p = "dec.l" + std::to_string(i);
        norm(p + ".ln1");
        attn(p + ".self");
        norm(p + ".ln2");
        attn(p + ".cross");
        norm(p + ".ln3");
        ffn_params(p + ".ffn");
    }
    norm("dec.final_ln");
    if (!cfg_.tie_heads) linear("dec.head", d, vp);

    if (cfg_.has_infill) {
        params_["infill.embed"] = init_matrix({vp + 1, d}, 0.02, rng);
        for (int i = 0; i < cfg_.infill_dec_layers; ++i) {
            std::string p = "infill.l" + std::to_string(i);
            norm(p + ".ln1");
            attn(p + ".self");
            norm(p + ".ln2");
            attn(p + ".cross");
            norm(p + ".ln3");
            ffn_params(p + ".ffn");
        }
        norm("infill.final_ln");
        linear("infill.head", d, cfg_.vocab.num_labels());
    }
}

Tensor Model::sinusoidal_positions(int len, int dim) {
    Tensor pe = Tensor::zeros({len, dim});
    for (int t = 0; t < len; ++t) {
        for (int i = 0; i < dim / 2; ++i) {
            double freq = std::pow(10000.0, -2.0 * i / dim);
            pe.mutable_data()[t * dim + 2 * i] = std::sin(t * freq);
            pe.mutable_data()[t * dim + 2 * i + 1] = std::cos(t * freq);
        }
    }
    return pe;
}

Tensor Model::maybe_dropout(const Tensor& x, std::mt19937_64* drop_rng) const {
    if (!drop_rng || cfg_.dropout_p == 0.0) return x;
    return dropout(x, make_dropout_mask(x.shape(), cfg_.dropout_p, *drop_rng));
}

Tensor Model::conv_frontend(const Tensor& features, std::mt19937_64* drop_rng) const {
    if (features.ndim() != 2 || features.dim(1) != cfg_.feature_dim) {
        throw ShapeError("conv_frontend: expected [T," + std::to_string(cfg_.feature_dim) +
                         "], got " + shape_str(features.shape()));
    }
    int t = features.dim(0);
    Tensor x = reshape(features, {1, t, cfg_.feature_dim});
    x = relu(conv2d(x, param("frontend.conv1.w"), param("frontend.conv1.b"), 2, 1));
    x = relu(conv2d(x, param("frontend.conv2.w"), param("frontend.conv2.b"), 2, 1));
    int c = x.dim(0), t2 = x.dim(1), f2 = x.dim(2);
    Tensor flat = reshape(transpose(reshape(x, {c, t2 * f2})), {t2, f2 * c});
    Tensor h = add(matmul(flat, param("frontend.proj.w")), param("frontend.proj.b"));
    h = add(h, sinusoidal_positions(t2, cfg_.model_dim));
    return maybe_dropout(h, drop_rng);
}

Tensor Model::attention(const Tensor& q_in, const Tensor& kv_in, const std::string& prefix,
                        std::mt19937_64* drop_rng) const {
    int d = cfg_.model_dim;
    int dh = d / cfg_.heads;
    Tensor q = add(matmul(q_in, param(prefix + ".q.w")), param(prefix + ".q.b"));
    Tensor k = add(matmul(kv_in, param(prefix + ".k.w")), param(prefix + ".k.b"));
    Tensor v = add(matmul(kv_in, param(prefix + ".v.w")), param(prefix + ".v.b"));
    std::vector<Tensor> heads;
    for (int h = 0; h < cfg_.heads; ++h) {
        Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
        Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
        Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
        Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(dh));
        heads.push_back(matmul(softmax_rows(scores), vh));
    }
    Tensor merged = cfg_.heads == 1 ? heads[0] : concat_cols(heads);
    Tensor out = add(matmul(merged, param(prefix + ".o.w")), param(prefix + ".o.b"));
    return maybe_dropout(out, drop_rng);
}

Tensor Model::ffn(const Tensor& x, const std::string& prefix, std::mt19937_64* drop_rng) const {
    Tensor h = relu(add(matmul(x, param(prefix + ".w1.w")), param(prefix + ".w1.b")));
    Tensor out = add(matmul(h, param(prefix + ".w2.w")), param(prefix + ".w2.b"));
    return maybe_dropout(out, drop_rng);
}

std::pair<Tensor, Tensor> Model::encoder_forward(const Tensor& h,
                                                 std::mt19937_64* drop_rng) const {
    Tensor x = h;
    for (int i = 0; i < cfg_.enc_layers; ++i) {
        std::string p = "enc.l" + std::to_string(i);
        Tensor n1 = layer_norm(x, param(p + ".ln1.g"), param(p + ".ln1.b"));
        x = add(x, attention(n1, n1, p + ".attn", drop_rng));
        Tensor n2 = layer_norm(x, param(p + ".ln2.g"), param(p + ".ln2.b"));
        x = add(x, ffn(n2, p + ".ffn", drop_rng));
        ++counters_.encoder_layer_passes;
    }
    Tensor states = layer_norm(x, param("enc.final_ln.g"), param("enc.final_ln.b"));
    Tensor logits = add(matmul(states, param("enc.head.w")), param("enc.head.b"));
    ++counters_.encoder_calls;
    return {states, log_softmax_rows(logits)};
}

std::pair<Tensor, Tensor> Model::encode(const Tensor& features,
                                        std::mt19937_64* drop_rng) const {
    return encoder_forward(conv_frontend(features, drop_rng), drop_rng);
}

Tensor Model::decoder_stack(const Tensor& x0, const Tensor& enc_states,
                            const std::string& prefix, int layers,
                            std::mt19937_64* drop_rng) const {
    Tensor x = x0;
    for (int i = 0; i < layers; ++i) {
        std::string p = prefix + ".l" + std::to_string(i);
        // no causal mask: full bidirectional self-attention
        Tensor n1 = layer_norm(x, param(p + ".ln1.g"), param(p + ".ln1.b"));
        x = add(x, attention(n1, n1, p + ".self", drop_rng));
        Tensor n2 = layer_norm(x, param(p + ".ln2.g"), param(p + ".ln2.b"));
        x = add(x, attention(n2, enc_states, p + ".cross", drop_rng));
        Tensor n3 = layer_norm(x, param(p + ".ln3.g"), param(p + ".ln3.b"));
        x = add(x, ffn(n3, p + ".ffn", drop_rng));
        ++counters_.decoder_layer_passes;
    }
    return layer_norm(x, param(prefix + ".final_ln.g"), param(prefix + ".final_ln.b"));
}

Tensor Model::embed_alignment(const Alignment& a) const {
    for (int id : a.ids) {
        if (!cfg_.vocab.valid_extended(id)) {
            throw ShapeError("embed_alignment: id out of range");
        }
    }
    return embedding(param("dec.embed"), a.ids);
}

Tensor Model::decoder_forward_embedded(const Tensor& embedded, const Tensor& enc_states,
                                       std::mt19937_64* drop_rng,
                                       const Tensor* pos_override) const {
    if (embedded.dim(0) != enc_states.dim(0)) {
        throw ShapeError("decoder: alignment length " + std::to_string(embedded.dim(0)) +
                         " != encoder frame count " + std::to_string(enc_states.dim(0)));
    }
    Tensor pos = pos_override ? *pos_override
                              : sinusoidal_positions(embedded.dim(0), cfg_.model_dim);
    Tensor x = maybe_dropout(add(embedded, pos), drop_rng);
    Tensor states = decoder_stack(x, enc_states, "dec", cfg_.dec_layers, drop_rng);
    const Tensor& hw = cfg_.tie_heads ? param("enc.head.w") : param("dec.head.w");
    const Tensor& hb = cfg_.tie_heads ? param("enc.head.b") : param("dec.head.b");
    ++counters_.decoder_calls;
    return log_softmax_rows(add(matmul(states, hw), hb));
}

Tensor Model::decoder_forward(const Alignment& a, const Tensor& enc_states,
                              std::mt19937_64* drop_rng) const {
    return decoder_forward_embedded(embed_alignment(a), enc_states, drop_rng);
}

Tensor Model::infill_decoder_forward(const std::vector<int>& tokens, const Tensor& enc_states,
                                     std::mt19937_64* drop_rng) const {
    if (!cfg_.has_infill) throw ShapeError("model has no infilling decoder");
    if (tokens.empty()) throw ShapeError("infill decoder requires a non-empty hypothesis");
    for (int id : tokens) {
        if (id < 1 || id > mask_token_id()) {
            throw ShapeError("infill decoder: token id out of range");
        }
    }
    Tensor emb = embedding(param("infill.embed"), tokens);
    Tensor x = add(emb, sinusoidal_positions(static_cast<int>(tokens.size()), cfg_.model_dim));
    x = maybe_dropout(x, drop_rng);
    Tensor states = decoder_stack(x, enc_states, "infill", cfg_.infill_dec_layers, drop_rng);
    Tensor logits = add(matmul(states, param("infill.head.w")), param("infill.head.b"));
    return log_softmax_rows(logits);
}

}  // namespace ar
