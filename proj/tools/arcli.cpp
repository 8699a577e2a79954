// Command-line front end: synthetic data generation, training, decoding,
// evaluation, the depth ablation, and checkpoint averaging.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ar/checkpoint.hpp"
#include "ar/data.hpp"
#include "ar/infill.hpp"
#include "ar/serialize.hpp"
#include "ar/train.hpp"

using json = nlohmann::json;
using namespace ar;

namespace {

std::string out_root() {
    const char* env = std::getenv("AR_OUT_ROOT");
    return env ? std::string(env) : std::string(".");
}

std::string resolve_out(const std::string& path) {
    if (path.empty() || path.front() == '/') return path;
    return out_root() + "/" + path;
}

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw NumericError("cannot open config file: " + path);
    json j;
    in >> j;
    return j;
}

SyntheticSpec parse_spec(const json& j) {
    SyntheticSpec d;
    SyntheticSpec s;
    s.vocab_size = j.value("vocab_size", d.vocab_size);
    s.transcript_min = j.value("transcript_min", d.transcript_min);
    s.transcript_max = j.value("transcript_max", d.transcript_max);
    s.frames_per_token_min = j.value("frames_per_token_min", d.frames_per_token_min);
    s.frames_per_token_max = j.value("frames_per_token_max", d.frames_per_token_max);
    s.blank_gap_prob = j.value("blank_gap_prob", d.blank_gap_prob);
    s.gap_min = j.value("gap_min", d.gap_min);
    s.gap_max = j.value("gap_max", d.gap_max);
    s.noise_sigma = j.value("noise_sigma", d.noise_sigma);
    s.feature_dim = j.value("feature_dim", d.feature_dim);
    s.seed = j.value("seed", d.seed);
    s.count = j.value("count", d.count);
    return s;
}

ModelConfig parse_model(const json& j, const Dataset& data) {
    ModelConfig d;
    ModelConfig c;
    c.enc_layers = j.value("enc_layers", d.enc_layers);
    c.dec_layers = j.value("dec_layers", d.dec_layers);
    c.model_dim = j.value("model_dim", d.model_dim);
    c.heads = j.value("heads", d.heads);
    c.ffn_dim = j.value("ffn_dim", d.ffn_dim);
    c.dropout_p = j.value("dropout_p", d.dropout_p);
    c.conv_channels = j.value("conv_channels", d.conv_channels);
    c.train_iterations = j.value("train_iterations", d.train_iterations);
    c.ctc_weight = j.value("ctc_weight", d.ctc_weight);
    c.tie_heads = j.value("tie_heads", d.tie_heads);
    c.infill_dec_layers = j.value("infill_dec_layers", d.infill_dec_layers);
    c.feedback = j.value("feedback", d.feedback);
    std::string conf = j.value("confidence", "max");
    c.confidence = conf == "min"    ? ConfidenceMode::Min
                   : conf == "mean" ? ConfidenceMode::Mean
                                    : ConfidenceMode::Max;
    c.exit_on_collapse = j.value("exit_on_collapse", d.exit_on_collapse);
    c.uniform_kl_weight = j.value("uniform_kl_weight", d.uniform_kl_weight);
    c.vocab = data.vocab;
    c.feature_dim = data.spec.feature_dim;
    return c;
}

TrainConfig parse_train(const json& j) {
    TrainConfig d;
    TrainConfig c;
    c.batch_size = j.value("batch_size", d.batch_size);
    c.batch_unit = j.value("batch_unit", d.batch_unit);
    c.token_budget = j.value("token_budget", d.token_budget);
    c.lr_factor = j.value("lr_factor", d.lr_factor);
    c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
    c.total_steps = j.value("total_steps", d.total_steps);
    c.grad_accum = j.value("grad_accum", d.grad_accum);
    c.checkpoint_interval = j.value("checkpoint_interval", d.checkpoint_interval);
    c.average_last = j.value("average_last", d.average_last);
    c.seed = j.value("seed", d.seed);
    return c;
}

std::vector<int> parse_k_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
    if (out.empty()) throw ShapeError("empty k list");
    return out;
}

int run(int argc, char** argv) {
    CLI::App app{"Align-Refine: iterative CTC alignment refinement at desk scale"};
    app.require_subcommand(1);

    std::string config_path, out_path, ck_path, ds_path, family = "align-refine";
    std::string k_str = "0,1,3,5,10";
    long seed_override = -1;
    int k_max = 10;
    std::vector<std::string> avg_inputs;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--seed", seed_override, "override the config seed");
        cmd->add_option("--out", out_path, "output path (relative to AR_OUT_ROOT)");
    };

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    gen->add_option("--config", config_path, "synthetic spec JSON")->required();
    add_common(gen);

    auto* train = app.add_subcommand("train", "train a model");
    train->add_option("--config", config_path,
                      "JSON with model/train sections, dataset path, family")
        ->required();
    add_common(train);

    auto* dec = app.add_subcommand("decode", "decode a dataset, write traces");
    dec->add_option("--checkpoint", ck_path)->required();
    dec->add_option("--dataset", ds_path)->required();
    dec->add_option("--k-max", k_max, "iteration budget");
    dec->add_option("--family", family, "align-refine | infilling | ctc-greedy");
    add_common(dec);

    auto* ev = app.add_subcommand("eval", "evaluate WER/CER/RTF at several k");
    ev->add_option("--checkpoint", ck_path)->required();
    ev->add_option("--dataset", ds_path)->required();
    ev->add_option("--k", k_str, "comma-separated iteration budgets");
    ev->add_option("--family", family, "align-refine | infilling | ctc-greedy");
    add_common(ev);

    auto* abl = app.add_subcommand("ablate-depth", "encoder/decoder depth reallocation");
    abl->add_option("--config", config_path, "JSON with model/train/splits/k_list")->required();
    add_common(abl);

    auto* avg = app.add_subcommand("average-checkpoints", "mean of parameter snapshots");
    avg->add_option("checkpoints", avg_inputs, "input checkpoint files")->required();
    add_common(avg);

    CLI11_PARSE(app, argc, argv);

    if (gen->parsed()) {
        SyntheticSpec spec = parse_spec(load_json_file(config_path));
        if (seed_override >= 0) spec.seed = static_cast<std::uint64_t>(seed_override);
        Dataset ds = generate_dataset(spec);
        std::string out = resolve_out(out_path.empty() ? "dataset.jsonl" : out_path);
        save_dataset(ds, out);
        std::cout << "wrote " << ds.records.size() << " records to " << out << "\n";
    } else if (train->parsed()) {
        json cfg = load_json_file(config_path);
        Dataset ds = load_dataset(cfg.at("dataset"));
        ModelConfig mc = parse_model(cfg.value("model", json::object()), ds);
        TrainConfig tc = parse_train(cfg.value("train", json::object()));
        if (seed_override >= 0) tc.seed = static_cast<std::uint64_t>(seed_override);
        std::string fam = cfg.value("family", "align-refine");
        Checkpoint init;
        const Checkpoint* init_ptr = nullptr;
        if (cfg.contains("init")) {
            init = load_checkpoint(cfg.at("init"));
            init_ptr = &init;
        }
        TrainResult r = run_training(mc, tc, ds, fam, init_ptr);
        std::string out = resolve_out(out_path.empty() ? "checkpoint.json" : out_path);
        save_checkpoint(r.final_checkpoint, out);
        double last_loss = r.steps.empty() ? 0.0 : r.steps.back().report.total_loss;
        std::cout << "trained " << r.steps.size() << " steps (final loss " << last_loss
                  << ", skipped " << r.skipped_samples << " samples), wrote " << out << "\n";
        if (r.diverged) {
            std::cerr << json{{"error", "numeric"},
                              {"message", "training diverged; last good checkpoint written"}}
                             .dump()
                      << "\n";
            return 3;
        }
    } else if (dec->parsed()) {
        Checkpoint ck = load_checkpoint(ck_path);
        Dataset ds = load_dataset(ds_path);
        Model model = ck.to_model();
        json lines = json::array();
        for (const auto& rec : ds.records) {
            json entry{{"id", rec.id}};
            if (family == "infilling") {
                Tensor enc_states;
                MaskedHypothesis h =
                    initial_mask(model, rec.features, infill_threshold_default(), &enc_states);
                InfillResult r = infill_decode(model, enc_states, h, std::max(k_max, 1));
                entry["decoder_passes"] = r.decoder_passes;
                std::string hyp;
                for (int id : r.hypothesis.ids) hyp += model.config().vocab.symbol(id);
                entry["hypothesis"] = hyp;
            } else {
                int budget = family == "ctc-greedy" ? 0 : k_max;
                RefinementTrace tr = decode(model, rec.features, {budget, true});
                entry["exit_iteration"] = tr.exit_iteration;
                std::string hyp;
                for (int id : tr.final_hypothesis().ids) hyp += model.config().vocab.symbol(id);
                entry["hypothesis"] = hyp;
                long nulls = 0;
                for (const auto& e : refinement_edit_report(tr, model.config().vocab)) {
                    if (e.null_edit) ++nulls;
                }
                entry["null_edits"] = nulls;
            }
            lines.push_back(std::move(entry));
        }
        std::string out = resolve_out(out_path.empty() ? "decode.json" : out_path);
        std::ofstream of(out);
        if (!of) throw NumericError("cannot open output file: " + out);
        of << json{{"schema_version", 1}, {"family", family}, {"utterances", lines}}.dump(2)
           << "\n";
        std::cout << "decoded " << ds.records.size() << " utterances to " << out << "\n";
    } else if (ev->parsed()) {
        Checkpoint ck = load_checkpoint(ck_path);
        Dataset ds = load_dataset(ds_path);
        EvalReport r = run_eval(ck, ds, parse_k_list(k_str), family);
        std::string out = resolve_out(out_path.empty() ? "eval.json" : out_path);
        save_eval_report(r, out);
        for (const auto& m : r.rows) {
            std::cout << family << " k=" << m.k << " WER " << m.wer << " CER " << m.cer
                      << " RTF " << m.rtf << " mean exit " << m.mean_exit_iteration << "\n";
        }
        std::cout << "wrote " << out << "\n";
    } else if (abl->parsed()) {
        json cfg = load_json_file(config_path);
        Dataset tr_ds = load_dataset(cfg.at("dataset"));
        Dataset te_ds = load_dataset(cfg.at("test_dataset"));
        ModelConfig mc = parse_model(cfg.value("model", json::object()), tr_ds);
        TrainConfig tc = parse_train(cfg.value("train", json::object()));
        if (seed_override >= 0) tc.seed = static_cast<std::uint64_t>(seed_override);
        std::vector<std::pair<int, int>> splits;
        for (const auto& s : cfg.at("splits")) splits.emplace_back(s.at(0), s.at(1));
        std::vector<int> k_list = cfg.value("k_list", std::vector<int>{0, 1, 3});
        AblationReport r = run_depth_ablation(mc, tc, tr_ds, te_ds, splits, k_list);
        std::string out = resolve_out(out_path.empty() ? "ablation.json" : out_path);
        save_ablation_report(r, out);
        std::cout << "wrote " << out << "\n";
    } else if (avg->parsed()) {
        Checkpoint mean = average_checkpoint_files(avg_inputs);
        std::string out = resolve_out(out_path.empty() ? "averaged.json" : out_path);
        save_checkpoint(mean, out);
        std::cout << "averaged " << avg_inputs.size() << " checkpoints into " << out << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ShapeError& e) {
        std::cerr << json{{"error", "config"}, {"message", e.what()}}.dump() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::string msg = e.what();
        bool io = msg.rfind("cannot open", 0) == 0;
        std::cerr << json{{"error", io ? "io" : "numeric"}, {"message", msg}}.dump() << "\n";
        return io ? 4 : 3;
    } catch (const json::exception& e) {
        std::cerr << json{{"error", "config"}, {"message", e.what()}}.dump() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << json{{"error", "internal"}, {"message", e.what()}}.dump() << "\n";
        return 5;
    }
}
