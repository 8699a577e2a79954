#include "ar/data.hpp"

#include <fstream>
#include <random>

#include "ar/model.hpp"
#include "ar/serialize.hpp"

namespace ar {

using nlohmann::json;

void SyntheticSpec::validate() const {
    if (vocab_size < 1 || vocab_size > 26) throw ShapeError("vocab_size must be in [1,26]");
    if (transcript_min < 1 || transcript_max < transcript_min) {
        throw ShapeError("bad transcript length range");
    }
    if (frames_per_token_min < 1 || frames_per_token_max < frames_per_token_min) {
        throw ShapeError("bad frames_per_token range");
    }
    if (frames_per_token_min * transcript_min < 4) {
        throw ShapeError("frames_per_token_min * transcript_min must be >= 4 "
                         "(the 4x frontend must keep at least one frame)");
    }
    if (blank_gap_prob < 0.0 || blank_gap_prob > 1.0) throw ShapeError("bad blank_gap_prob");
    if (gap_min < 1 || gap_max < gap_min) throw ShapeError("bad gap length range");
    if (noise_sigma < 0.0) throw ShapeError("noise_sigma must be >= 0");
    if (feature_dim < 4) throw ShapeError("feature_dim must be >= 4");
    if (count < 1) throw ShapeError("count must be >= 1");
}

namespace {

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
    return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

}  // namespace

std::vector<std::vector<double>> token_prototypes(const SyntheticSpec& spec) {
    std::seed_seq seq{spec.seed, static_cast<std::uint64_t>(0xC0FFEE)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<std::vector<double>> protos(static_cast<std::size_t>(spec.vocab_size));
    for (auto& p : protos) {
        p.resize(static_cast<std::size_t>(spec.feature_dim));
        for (auto& x : p) x = d(rng);
    }
    return protos;
}

Dataset generate_dataset(const SyntheticSpec& spec) {
    spec.validate();
    Dataset ds;
    ds.spec = spec;
    ds.vocab = Vocabulary::letters(spec.vocab_size);
    auto protos = token_prototypes(spec);
    const std::vector<double> silence(static_cast<std::size_t>(spec.feature_dim), 0.0);

    for (int idx = 0; idx < spec.count; ++idx) {
        std::seed_seq seq{spec.seed, static_cast<std::uint64_t>(idx) + 1};
        std::mt19937_64 rng(seq);
        std::normal_distribution<double> noise(0.0, spec.noise_sigma);
        std::uniform_real_distribution<double> u(0.0, 1.0);

        int len = uniform_int(rng, spec.transcript_min, spec.transcript_max);
        LabelSequence y;
        for (int i = 0; i < len; ++i) y.ids.push_back(uniform_int(rng, 1, spec.vocab_size));
        int min_frames = min_alignment_frames(y);

        constexpr int kMaxAttempts = 32;
        std::vector<std::pair<const std::vector<double>*, int>> segments;
        bool ok = false;
        for (int attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) {
            segments.clear();
            int total = 0;
            for (int i = 0; i < len; ++i) {
                if (u(rng) < spec.blank_gap_prob) {
                    int g = uniform_int(rng, spec.gap_min, spec.gap_max);
                    segments.emplace_back(&silence, g);
                    total += g;
                }
                int d = uniform_int(rng, spec.frames_per_token_min, spec.frames_per_token_max);
                segments.emplace_back(&protos[static_cast<std::size_t>(y.ids[i] - 1)], d);
                total += d;
            }
            if (u(rng) < spec.blank_gap_prob) {
                int g = uniform_int(rng, spec.gap_min, spec.gap_max);
                segments.emplace_back(&silence, g);
                total += g;
            }
            ok = ModelConfig::frontend_frames(total) >= min_frames;
        }
        if (!ok) {
            throw NumericError("generate_dataset: transcript unreachable after duration "
                               "retries; widen frames_per_token");
        }
        int total = 0;
        for (auto& [proto, d] : segments) total += d;
        Tensor feats = Tensor::zeros({total, spec.feature_dim});
        int t = 0;
        for (auto& [proto, d] : segments) {
            for (int f = 0; f < d; ++f, ++t) {
                for (int c = 0; c < spec.feature_dim; ++c) {
                    feats.mutable_data()[t * spec.feature_dim + c] =
                        (*proto)[static_cast<std::size_t>(c)] + noise(rng);
                }
            }
        }
        DatasetRecord rec;
        rec.id = "utt" + std::to_string(idx);
        rec.features = std::move(feats);
        rec.transcript = std::move(y);
        ds.records.push_back(std::move(rec));
    }
    return ds;
}

double Dataset::total_audio_seconds() const {
    double frames = 0.0;
    for (const auto& r : records) frames += r.features.dim(0);
    return frames * kFrameShiftSeconds;
}

namespace {

json spec_to_json(const SyntheticSpec& s) {
    return json{{"vocab_size", s.vocab_size},
                {"transcript_min", s.transcript_min},
                {"transcript_max", s.transcript_max},
                {"frames_per_token_min", s.frames_per_token_min},
                {"frames_per_token_max", s.frames_per_token_max},
                {"blank_gap_prob", s.blank_gap_prob},
                {"gap_min", s.gap_min},
                {"gap_max", s.gap_max},
                {"noise_sigma", s.noise_sigma},
                {"feature_dim", s.feature_dim},
                {"seed", s.seed},
                {"count", s.count}};
}

SyntheticSpec spec_from_json(const json& j) {
    SyntheticSpec s;
    s.vocab_size = j.at("vocab_size");
    s.transcript_min = j.at("transcript_min");
    s.transcript_max = j.at("transcript_max");
    s.frames_per_token_min = j.at("frames_per_token_min");
    s.frames_per_token_max = j.at("frames_per_token_max");
    s.blank_gap_prob = j.at("blank_gap_prob");
    s.gap_min = j.at("gap_min");
    s.gap_max = j.at("gap_max");
    s.noise_sigma = j.at("noise_sigma");
    s.feature_dim = j.at("feature_dim");
    s.seed = j.at("seed");
    s.count = j.at("count");
    return s;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw NumericError("cannot open dataset file for writing: " + path);
    json header{{"schema_version", kDatasetSchemaVersion},
                {"spec", spec_to_json(ds.spec)},
                {"vocab", vocab_to_json(ds.vocab)}};
    out << header.dump() << "\n";
    for (const auto& r : ds.records) {
        json line{{"id", r.id},
                  {"transcript", r.transcript.ids},
                  {"frames", r.features.dim(0)},
                  {"feature_dim", r.features.dim(1)},
                  {"data", base64_encode_doubles(r.features.data())}};
        out << line.dump() << "\n";
    }
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw NumericError("cannot open dataset file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw NumericError("dataset file is empty: " + path);
    json header = json::parse(line);
    int version = header.at("schema_version");
    if (version != kDatasetSchemaVersion) {
        throw NumericError("dataset schema version " + std::to_string(version) +
                           " != supported " + std::to_string(kDatasetSchemaVersion));
    }
    Dataset ds;
    ds.spec = spec_from_json(header.at("spec"));
    ds.vocab = vocab_from_json(header.at("vocab"));
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        DatasetRecord r;
        r.id = j.at("id");
        r.transcript.ids = j.at("transcript").get<std::vector<int>>();
        int frames = j.at("frames");
        int fd = j.at("feature_dim");
        r.features = Tensor({frames, fd}, base64_decode_doubles(j.at("data")));
        ds.records.push_back(std::move(r));
    }
    return ds;
}

}  // namespace ar
