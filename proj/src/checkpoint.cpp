#include "ar/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "ar/serialize.hpp"

namespace ar {

using nlohmann::json;

namespace {
const char kB64Chars[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode_doubles(const std::vector<double>& v) {
    const unsigned char* bytes = reinterpret_cast<const unsigned char*>(v.data());
    std::size_t n = v.size() * sizeof(double);
    std::string out;
    out.reserve((n + 2) / 3 * 4);
    for (std::size_t i = 0; i < n; i += 3) {
        unsigned int b = bytes[i] << 16;
        if (i + 1 < n) b |= bytes[i + 1] << 8;
        if (i + 2 < n) b |= bytes[i + 2];
        out.push_back(kB64Chars[(b >> 18) & 63]);
        out.push_back(kB64Chars[(b >> 12) & 63]);
        out.push_back(i + 1 < n ? kB64Chars[(b >> 6) & 63] : '=');
        out.push_back(i + 2 < n ? kB64Chars[b & 63] : '=');
    }
    return out;
}

std::vector<double> base64_decode_doubles(const std::string& s) {
    static int rev[256];
    static bool init = [] {
        for (int i = 0; i < 256; ++i) rev[i] = -1;
        for (int i = 0; i < 64; ++i) rev[static_cast<unsigned char>(kB64Chars[i])] = i;
        return true;
    }();
    (void)init;
    std::vector<unsigned char> bytes;
    bytes.reserve(s.size() / 4 * 3);
    unsigned int buf = 0;
    int bits = 0;
    for (char c : s) {
        if (c == '=' || c == '\n') continue;
        int v = rev[static_cast<unsigned char>(c)];
        if (v < 0) throw NumericError("base64: invalid character");
        buf = (buf << 6) | static_cast<unsigned int>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            bytes.push_back(static_cast<unsigned char>((buf >> bits) & 0xff));
        }
    }
    if (bytes.size() % sizeof(double) != 0) {
        throw NumericError("base64: payload is not a whole number of float64 values");
    }
    std::vector<double> out(bytes.size() / sizeof(double));
    std::memcpy(out.data(), bytes.data(), bytes.size());
    return out;
}

json vocab_to_json(const Vocabulary& v) {
    return json{{"labels", v.labels}};
}

Vocabulary vocab_from_json(const json& j) {
    Vocabulary v;
    v.labels = j.at("labels").get<std::vector<std::string>>();
    return v;
}

json model_config_to_json(const ModelConfig& c) {
    return json{{"enc_layers", c.enc_layers},
                {"dec_layers", c.dec_layers},
                {"model_dim", c.model_dim},
                {"heads", c.heads},
                {"ffn_dim", c.ffn_dim},
                {"dropout_p", c.dropout_p},
                {"vocab", vocab_to_json(c.vocab)},
                {"feature_dim", c.feature_dim},
                {"conv_channels", c.conv_channels},
                {"train_iterations", c.train_iterations},
                {"ctc_weight", c.ctc_weight},
                {"tie_heads", c.tie_heads},
                {"has_infill", c.has_infill},
                {"infill_dec_layers", c.infill_dec_layers},
                {"feedback", c.feedback},
                {"confidence", c.confidence == ConfidenceMode::Max   ? "max"
                               : c.confidence == ConfidenceMode::Min ? "min"
                                                                     : "mean"},
                {"exit_on_collapse", c.exit_on_collapse},
                {"uniform_kl_weight", c.uniform_kl_weight}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    c.enc_layers = j.at("enc_layers");
    c.dec_layers = j.at("dec_layers");
    c.model_dim = j.at("model_dim");
    c.heads = j.at("heads");
    c.ffn_dim = j.at("ffn_dim");
    c.dropout_p = j.at("dropout_p");
    c.vocab = vocab_from_json(j.at("vocab"));
    c.feature_dim = j.at("feature_dim");
    c.conv_channels = j.at("conv_channels");
    c.train_iterations = j.at("train_iterations");
    c.ctc_weight = j.at("ctc_weight");
    c.tie_heads = j.value("tie_heads", false);
    c.has_infill = j.value("has_infill", false);
    c.infill_dec_layers = j.value("infill_dec_layers", 2);
    c.feedback = j.value("feedback", "greedy");
    std::string conf = j.value("confidence", "max");
    c.confidence = conf == "min"    ? ConfidenceMode::Min
                   : conf == "mean" ? ConfidenceMode::Mean
                                    : ConfidenceMode::Max;
    c.exit_on_collapse = j.value("exit_on_collapse", false);
    c.uniform_kl_weight = j.value("uniform_kl_weight", 0.0);
    return c;
}

Checkpoint Checkpoint::from_model(const Model& model, long step) {
    Checkpoint ck;
    ck.config = model.config();
    for (const auto& [name, t] : model.params()) {
        ck.params.emplace(name, Tensor(t.shape(), t.data(), true));  // detached copy
    }
    ck.step = step;
    return ck;
}

Model Checkpoint::to_model() const {
    std::map<std::string, Tensor> fresh;
    for (const auto& [name, t] : params) {
        fresh.emplace(name, Tensor(t.shape(), t.data(), /*requires_grad=*/true));
    }
    return Model(config, std::move(fresh));
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    json j;
    j["schema_version"] = ck.schema_version;
    j["config"] = model_config_to_json(ck.config);
    j["step"] = ck.step;
    j["rng_state"] = ck.rng_state;
    j["provenance"] = ck.provenance;
    json params = json::object();
    for (const auto& [name, t] : ck.params) {
        params[name] = json{{"shape", t.shape()}, {"data", base64_encode_doubles(t.data())}};
    }
    j["params"] = std::move(params);
    json m = json::object(), v = json::object();
    for (const auto& [name, buf] : ck.adam_m) m[name] = base64_encode_doubles(buf);
    for (const auto& [name, buf] : ck.adam_v) v[name] = base64_encode_doubles(buf);
    j["adam_m"] = std::move(m);
    j["adam_v"] = std::move(v);
    std::ofstream out(path);
    if (!out) throw NumericError("cannot open checkpoint file for writing: " + path);
    out << j.dump() << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw NumericError("cannot open checkpoint file: " + path);
    json j;
    in >> j;
    Checkpoint ck;
    ck.schema_version = j.at("schema_version");
    if (ck.schema_version != kCheckpointSchemaVersion) {
        throw NumericError("checkpoint schema version " + std::to_string(ck.schema_version) +
                           " != supported " + std::to_string(kCheckpointSchemaVersion));
    }
    ck.config = model_config_from_json(j.at("config"));
    ck.step = j.at("step");
    ck.rng_state = j.value("rng_state", "");
    ck.provenance = j.value("provenance", std::vector<std::string>{});
    for (const auto& [name, pj] : j.at("params").items()) {
        std::vector<int> shape = pj.at("shape").get<std::vector<int>>();
        ck.params.emplace(name, Tensor(shape, base64_decode_doubles(pj.at("data")), true));
    }
    json adam_m = j.value("adam_m", json::object());
    json adam_v = j.value("adam_v", json::object());
    for (const auto& [name, s] : adam_m.items()) ck.adam_m[name] = base64_decode_doubles(s);
    for (const auto& [name, s] : adam_v.items()) ck.adam_v[name] = base64_decode_doubles(s);
    return ck;
}

Checkpoint average_checkpoints(const std::vector<Checkpoint>& cks) {
    if (cks.empty()) throw NumericError("average_checkpoints: need at least one checkpoint");
    const Checkpoint& first = cks.front();
    for (const auto& ck : cks) {
        if (ck.schema_version != first.schema_version) {
            throw NumericError("average_checkpoints: schema_version mismatch");
        }
        json a = model_config_to_json(first.config);
        json b = model_config_to_json(ck.config);
        if (a != b) {
            for (const auto& [key, val] : a.items()) {
                if (b.at(key) != val) {
                    throw NumericError("average_checkpoints: config mismatch in field '" + key +
                                       "'");
                }
            }
        }
        if (ck.params.size() != first.params.size()) {
            throw NumericError("average_checkpoints: parameter sets differ");
        }
    }
    Checkpoint out;
    out.config = first.config;
    out.step = first.step;
    double inv = 1.0 / static_cast<double>(cks.size());
    for (const auto& [name, t] : first.params) {
        std::vector<double> acc(t.size(), 0.0);
        for (const auto& ck : cks) {
            auto it = ck.params.find(name);
            if (it == ck.params.end() || it->second.shape() != t.shape()) {
                throw NumericError("average_checkpoints: parameter mismatch in '" + name + "'");
            }
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += it->second.at(i);
        }
        for (auto& x : acc) x *= inv;
        out.params.emplace(name, Tensor(t.shape(), std::move(acc), true));
    }
    out.provenance.push_back("average of " + std::to_string(cks.size()) + " checkpoints");
    for (const auto& ck : cks) {
        out.provenance.push_back("source step " + std::to_string(ck.step));
    }
    return out;
}

Checkpoint average_checkpoint_files(const std::vector<std::string>& paths) {
    std::vector<Checkpoint> cks;
    for (const auto& p : paths) cks.push_back(load_checkpoint(p));
    Checkpoint out = average_checkpoints(cks);
    out.provenance.clear();
    out.provenance.push_back("average of " + std::to_string(paths.size()) + " checkpoints");
    for (const auto& p : paths) out.provenance.push_back(p);
    return out;
}

}  // namespace ar
