#include "ar/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "ar/infill.hpp"
#include "ar/metrics.hpp"
#include "ar/ops.hpp"
#include "ar/serialize.hpp"

namespace ar {

using nlohmann::json;

void TrainConfig::validate() const {
    if (batch_size < 1) throw ShapeError("batch_size must be >= 1");
    if (batch_unit != "sequences" && batch_unit != "tokens") {
        throw ShapeError("batch_unit must be 'sequences' or 'tokens'");
    }
    if (batch_unit == "tokens" && token_budget < 1) throw ShapeError("token_budget must be >= 1");
    if (lr_factor <= 0.0) throw ShapeError("lr_factor must be positive");
    if (warmup_steps < 1) throw ShapeError("warmup_steps must be >= 1");
    if (total_steps < 1) throw ShapeError("total_steps must be >= 1");
    if (grad_accum < 1) throw ShapeError("grad_accum must be >= 1");
    if (checkpoint_interval < 1) throw ShapeError("checkpoint_interval must be >= 1");
    if (average_last < 1) throw ShapeError("average_last must be >= 1");
}

double lr_at(long step, const TrainConfig& cfg, int model_dim) {
    if (step < 1) throw ShapeError("lr_at: step must be >= 1");
    double s = static_cast<double>(step);
    double warm = static_cast<double>(cfg.warmup_steps);
    return cfg.lr_factor / std::sqrt(static_cast<double>(model_dim)) *
           std::min(1.0 / std::sqrt(s), s / (warm * std::sqrt(warm)));
}

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.98;
constexpr double kAdamEps = 1e-9;

struct Adam {
    std::map<std::string, std::vector<double>> m, v;

    void step(Model& model, double lr, long t, const std::string& prefix_filter) {
        for (auto& [name, p] : model.params()) {
            if (!prefix_filter.empty() && name.rfind(prefix_filter, 0) != 0) continue;
            auto& mb = m[name];
            auto& vb = v[name];
            if (mb.size() != p.size()) mb.assign(p.size(), 0.0);
            if (vb.size() != p.size()) vb.assign(p.size(), 0.0);
            const auto& g = p.grad();
            auto& w = p.mutable_data();
            double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t));
            double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t));
            for (std::size_t i = 0; i < w.size(); ++i) {
                mb[i] = kAdamBeta1 * mb[i] + (1.0 - kAdamBeta1) * g[i];
                vb[i] = kAdamBeta2 * vb[i] + (1.0 - kAdamBeta2) * g[i] * g[i];
                w[i] -= lr * (mb[i] / bc1) / (std::sqrt(vb[i] / bc2) + kAdamEps);
            }
        }
    }
};

// Per-step keyed RNG: resume needs no serialized generator state.
std::mt19937_64 step_rng(std::uint64_t seed, long step, std::uint64_t stream) {
    std::seed_seq seq{seed, static_cast<std::uint64_t>(step), stream};
    return std::mt19937_64(seq);
}

std::vector<Sample> assemble_step_samples(const Dataset& data, const TrainConfig& cfg,
                                          long step) {
    std::mt19937_64 rng = step_rng(cfg.seed, step, 0xBA7C4);
    std::vector<Sample> out;
    std::size_t n = data.records.size();
    if (cfg.batch_unit == "sequences") {
        int total = cfg.batch_size * cfg.grad_accum;
        for (int i = 0; i < total; ++i) {
            const auto& r = data.records[rng() % n];
            out.push_back({r.features, r.transcript});
        }
    } else {
        long budget = static_cast<long>(cfg.token_budget) * cfg.grad_accum;
        long tokens = 0;
        while (tokens < budget) {
            const auto& r = data.records[rng() % n];
            out.push_back({r.features, r.transcript});
            tokens += std::max(1, r.transcript.length());
        }
    }
    return out;
}

void zero_all_grads(Model& model) {
    for (auto& [name, p] : model.params()) p.zero_grad();
}

Checkpoint snapshot(const Model& model, long step, const Adam& opt) {
    Checkpoint ck;
    ck.config = model.config();
    for (const auto& [name, t] : model.params()) {
        ck.params.emplace(name, Tensor(t.shape(), t.data(), true));
    }
    ck.step = step;
    ck.adam_m = opt.m;
    ck.adam_v = opt.v;
    ck.rng_state = "keyed(seed,step)";
    return ck;
}

}  // namespace

TrainResult run_training(const ModelConfig& model_cfg, const TrainConfig& cfg,
                         const Dataset& data, const std::string& family,
                         const Checkpoint* init, const Checkpoint* resume) {
    cfg.validate();
    if (family != "align-refine" && family != "infilling") {
        throw ShapeError("run_training: unknown family '" + family + "'");
    }
    if (data.records.empty()) throw ShapeError("run_training: empty dataset");

    std::optional<Model> model;
    std::string prefix_filter;
    if (resume) {
        model.emplace(resume->to_model());
        if (family == "infilling") prefix_filter = "infill.";
    } else if (family == "infilling") {
        if (!init) throw ShapeError("run_training: infilling needs a base checkpoint");
        ModelConfig cfg2 = init->config;
        cfg2.has_infill = true;
        cfg2.infill_dec_layers = model_cfg.infill_dec_layers;
        Model fresh(cfg2, cfg.seed ^ 0x1f111);
        for (const auto& [name, t] : init->params) {
            fresh.params()[name] = Tensor(t.shape(), t.data(), true);
        }
        model.emplace(std::move(fresh));
        prefix_filter = "infill.";
    } else if (init) {
        model.emplace(init->to_model());
    } else {
        model.emplace(model_cfg, cfg.seed);
    }

    Adam opt;
    long start_step = 0;
    if (resume) {
        opt.m = resume->adam_m;
        opt.v = resume->adam_v;
        start_step = resume->step;
    }

    TrainResult result;
    Checkpoint last_good = snapshot(*model, start_step, opt);
    for (long step = start_step + 1; step <= cfg.total_steps; ++step) {
        double lr = lr_at(step, cfg, model->config().model_dim);
        std::vector<Sample> samples = assemble_step_samples(data, cfg, step);
        int total = static_cast<int>(samples.size());
        zero_all_grads(*model);
        std::mt19937_64 mask_rng = step_rng(cfg.seed, step, 0xD50);
        StepRecord rec;
        rec.step = step;
        rec.lr = lr;
        int micro = (total + cfg.grad_accum - 1) / cfg.grad_accum;
        double infill_loss = 0.0;
        int infill_batches = 0;
        try {
            for (int off = 0; off < total; off += micro) {
                std::vector<Sample> mb(samples.begin() + off,
                                       samples.begin() + std::min(off + micro, total));
                if (family == "align-refine") {
                    TrainStepReport r = training_step(*model, mb, mask_rng, total);
                    double w = static_cast<double>(mb.size()) / total;
                    rec.report.total_loss += w * r.total_loss;
                    rec.report.encoder_ctc_loss += w * r.encoder_ctc_loss;
                    if (rec.report.iteration_losses.empty())
                        rec.report.iteration_losses.assign(r.iteration_losses.size(), 0.0);
                    for (std::size_t i = 0; i < r.iteration_losses.size(); ++i)
                        rec.report.iteration_losses[i] += w * r.iteration_losses[i];
                    rec.report.skipped_samples += r.skipped_samples;
                } else {
                    infill_loss += infill_training_step(*model, mb, mask_rng, total);
                    ++infill_batches;
                }
                rec.report.batch_size += static_cast<int>(mb.size());
            }
        } catch (const NumericError&) {
            // non-finite activations mid-step: treat as divergence, keep the
            // last finite checkpoint
            result.diverged = true;
            break;
        }
        if (family == "infilling" && infill_batches > 0) {
            rec.report.total_loss = infill_loss / infill_batches;
        }
        result.skipped_samples += rec.report.skipped_samples;
        if (!std::isfinite(rec.report.total_loss)) {
            result.diverged = true;
            break;  // last good checkpoint retained below
        }
        opt.step(*model, lr, step, prefix_filter);
        result.steps.push_back(rec);
        if (step % cfg.checkpoint_interval == 0 || step == cfg.total_steps) {
            result.saved.push_back(snapshot(*model, step, opt));
            last_good = result.saved.back();
        }
    }
    if (result.saved.empty()) result.saved.push_back(last_good);
    result.last_checkpoint = result.saved.back();
    int window = std::min<int>(cfg.average_last, static_cast<int>(result.saved.size()));
    std::vector<Checkpoint> tail(result.saved.end() - window, result.saved.end());
    result.final_checkpoint = average_checkpoints(tail);
    result.final_checkpoint.step = result.last_checkpoint.step;
    return result;
}

std::string config_hash(const ModelConfig& cfg) {
    std::size_t h = std::hash<std::string>{}(model_config_to_json(cfg).dump());
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

double infill_threshold_default() { return 0.9; }

namespace {

LabelSequence to_char_sequence(const LabelSequence& y, const Vocabulary& v) {
    LabelSequence out;
    for (int id : y.ids) {
        for (char c : v.symbol(id)) out.ids.push_back(static_cast<int>(c));
    }
    return out;
}

long count_reversals(const RefinementTrace& trace) {
    long n = 0;
    for (std::size_t i = 1; i < trace.alignments.size(); ++i) {
        const auto& prev = trace.alignments[i - 1].ids;
        const auto& cur = trace.alignments[i].ids;
        for (std::size_t t = 0; t < cur.size(); ++t) {
            if (prev[t] != 0 && cur[t] != prev[t]) ++n;  // committed label revised
        }
    }
    return n;
}

}  // namespace

EvalReport run_eval(const Checkpoint& ck, const Dataset& data, const std::vector<int>& k_list,
                    const std::string& family) {
    if (family != "align-refine" && family != "infilling" && family != "ctc-greedy") {
        throw ShapeError("run_eval: unknown family '" + family + "'");
    }
    if (data.records.empty()) throw ShapeError("run_eval: empty dataset");
    Model model = ck.to_model();
    if (family == "infilling" && !model.config().has_infill) {
        throw ShapeError("run_eval: checkpoint has no infilling decoder");
    }
    double audio = data.total_audio_seconds();
    EvalReport report;
    report.config_hash = config_hash(ck.config);
    report.provenance = "checkpoint step " + std::to_string(ck.step) + ", schema v" +
                        std::to_string(ck.schema_version) + ", " + family;
    using clock = std::chrono::steady_clock;
    for (int k : k_list) {
        if (k < 0) throw ShapeError("run_eval: k must be >= 0");
        EvalMetrics row;
        row.family = family;
        row.k = k;
        std::vector<std::pair<LabelSequence, LabelSequence>> pairs, char_pairs;
        double exit_sum = 0.0;
        auto t0 = clock::now();
        for (const auto& rec : data.records) {
            LabelSequence hyp;
            if (family == "align-refine" || family == "ctc-greedy" || k == 0) {
                int budget = (family == "align-refine") ? k : 0;
                RefinementTrace trace = decode(model, rec.features, {budget, true});
                hyp = trace.final_hypothesis();
                exit_sum += trace.exit_iteration;
                row.reversals += count_reversals(trace);
                for (const auto& e : refinement_edit_report(trace, model.config().vocab)) {
                    if (e.null_edit) ++row.null_edits;
                }
            } else {
                Tensor enc_states;
                MaskedHypothesis h = initial_mask(model, rec.features,
                                                  infill_threshold_default(), &enc_states);
                InfillResult r = infill_decode(model, enc_states, h, k);
                hyp = r.hypothesis;
                exit_sum += r.decoder_passes;
            }
            pairs.emplace_back(rec.transcript, hyp);
            char_pairs.emplace_back(to_char_sequence(rec.transcript, model.config().vocab),
                                    to_char_sequence(hyp, model.config().vocab));
            ++row.utterances;
        }
        row.wall_seconds = std::chrono::duration<double>(clock::now() - t0).count();
        row.wer = corpus_wer(pairs);
        row.cer = corpus_wer(char_pairs);
        row.mean_exit_iteration = exit_sum / static_cast<double>(row.utterances);
        row.rtf = make_latency_report(row.wall_seconds, audio).rtf;
        report.rows.push_back(row);
    }
    return report;
}

void save_eval_report(const EvalReport& r, const std::string& path) {
    json rows = json::array();
    for (const auto& m : r.rows) {
        rows.push_back(json{{"family", m.family},
                            {"k", m.k},
                            {"wer", m.wer},
                            {"cer", m.cer},
                            {"mean_exit_iteration", m.mean_exit_iteration},
                            {"null_edits", m.null_edits},
                            {"rtf", m.rtf},
                            {"wall_seconds", m.wall_seconds},
                            {"utterances", m.utterances},
                            {"reversals", m.reversals}});
    }
    json j{{"schema_version", 1},
           {"config_hash", r.config_hash},
           {"provenance", r.provenance},
           {"metrics", rows}};
    std::ofstream out(path);
    if (!out) throw NumericError("cannot open report file for writing: " + path);
    out << j.dump(2) << "\n";
}

AblationReport run_depth_ablation(const ModelConfig& base, const TrainConfig& cfg,
                                  const Dataset& train, const Dataset& test,
                                  const std::vector<std::pair<int, int>>& splits,
                                  const std::vector<int>& k_list) {
    if (splits.empty()) throw ShapeError("run_depth_ablation: empty split list");
    int total_layers = splits.front().first + splits.front().second;
    for (const auto& [e, d] : splits) {
        if (e + d != total_layers) {
            throw ShapeError("run_depth_ablation: splits must sum to the same total");
        }
        if (e < 1 || d < 0) throw ShapeError("run_depth_ablation: bad split");
    }
    AblationReport report;
    using clock = std::chrono::steady_clock;
    double audio = test.total_audio_seconds();
    for (const auto& [enc, dec] : splits) {
        ModelConfig mc = base;
        mc.enc_layers = enc;
        mc.dec_layers = dec;
        TrainResult tr = run_training(mc, cfg, train, "align-refine");
        Model model = tr.final_checkpoint.to_model();
        AblationSplit row;
        row.enc_layers = enc;
        row.dec_layers = dec;
        for (int k : k_list) {
            std::vector<std::pair<LabelSequence, LabelSequence>> pairs;
            double wall = 0.0, wall_full = 0.0;
            for (const auto& rec : test.records) {
                model.counters().reset();
                auto t0 = clock::now();
                RefinementTrace trace = decode(model, rec.features, {k, true});
                wall += std::chrono::duration<double>(clock::now() - t0).count();
                // instrumented counters vs the enc + k*dec layer-pass law
                const auto& c = model.counters();
                if (c.encoder_layer_passes != enc ||
                    c.decoder_layer_passes !=
                        static_cast<long>(trace.exit_iteration) * dec) {
                    row.pass_counters_ok = false;
                }
                pairs.emplace_back(rec.transcript, trace.final_hypothesis());
                auto t1 = clock::now();
                decode(model, rec.features, {k, false});
                wall_full += std::chrono::duration<double>(clock::now() - t1).count();
            }
            row.wer[k] = corpus_wer(pairs);
            row.rtf[k] = make_latency_report(wall, audio).rtf;
            row.rtf_full[k] = make_latency_report(wall_full, audio).rtf;
        }
        report.splits.push_back(std::move(row));
    }
    // direction check: a depth-1 refiner trailing any deeper split gets flagged
    int k_top = k_list.back();
    for (const auto& a : report.splits) {
        if (a.dec_layers != 1) continue;
        for (const auto& b : report.splits) {
            if (b.dec_layers > 1 && a.wer.at(k_top) > b.wer.at(k_top)) {
                report.shallow_decoder_flagged = true;
            }
        }
    }
    return report;
}

void save_ablation_report(const AblationReport& r, const std::string& path) {
    json splits = json::array();
    for (const auto& s : r.splits) {
        json wer = json::object(), rtf = json::object(), rtf_full = json::object();
        for (const auto& [k, v] : s.wer) wer[std::to_string(k)] = v;
        for (const auto& [k, v] : s.rtf) rtf[std::to_string(k)] = v;
        for (const auto& [k, v] : s.rtf_full) rtf_full[std::to_string(k)] = v;
        splits.push_back(json{{"enc_layers", s.enc_layers},
                              {"dec_layers", s.dec_layers},
                              {"wer", wer},
                              {"rtf", rtf},
                              {"rtf_full_budget", rtf_full},
                              {"pass_counters_ok", s.pass_counters_ok}});
    }
    json j{{"schema_version", 1},
           {"splits", splits},
           {"shallow_decoder_flagged", r.shallow_decoder_flagged}};
    std::ofstream out(path);
    if (!out) throw NumericError("cannot open report file for writing: " + path);
    out << j.dump(2) << "\n";
}

}  // namespace ar
