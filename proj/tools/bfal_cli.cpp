// bfal: bi-fidelity GP classification with batch active learning.
//
// Subcommands: run-toy, suggest, ingest, predict-grid. Exit codes: 0 success,
// 1 runtime/I-O failure, 2 usage/validation failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "bfal/harness.hpp"

namespace fs = std::filesystem;
using namespace bfal;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::pair<ExperimentConfig, std::string> load_config(const std::string& path) {
    const json doc = parse_json(read_text_file(path), "config " + path);
    return config_from_json(doc);
}

int run_toy(const std::string& config_path, const std::string& out_flag) {
    auto [config, out_dir] = load_config(config_path);
    if (!out_flag.empty()) out_dir = out_flag;
    if (out_dir.empty()) throw UsageFailure("run-toy: no output directory (--out or config out_dir)");
    if (!config.oracle.is_toy()) throw UsageFailure("run-toy: oracle kind must be a toy field");
    config.validate();

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    const std::vector<RunLog> runs = run_experiment(config);

    const json cfg_json = config_to_json(config);
    json sidecar;
    sidecar["config"] = cfg_json;
    sidecar["config_hash"] = config_hash_of(cfg_json);
    json timings = json::array();
    for (const RunLog& run : runs) {
        json per_round = json::array();
        for (const RoundRecord& r : run.rounds) per_round.push_back(r.wall_ms);
        json entry;
        entry["repeat"] = run.repeat_index;
        entry["wall_ms"] = per_round;
        if (run.failed) entry["failure"] = run.failure;
        timings.push_back(entry);
    }
    sidecar["runs"] = timings;

    write_text_file((fs::path(out_dir) / "metrics.csv").string(), metrics_csv(runs));
    write_text_file((fs::path(out_dir) / "summary.csv").string(), summary_csv(summarize(runs)));
    write_text_file((fs::path(out_dir) / "config.json").string(), sidecar.dump(1) + "\n");

    int failures = 0;
    for (const RunLog& run : runs) failures += run.failed ? 1 : 0;
    std::cout << "strategy " << strategy_name(config.strategy) << ": " << runs.size()
              << " repeats, " << failures << " failed; results in " << out_dir << "\n";
    return kExitOk;
}

int suggest(const std::string& dataset_path, const std::string& config_path,
            const std::string& exchange_dir, int round_id) {
    auto [config, out_dir] = load_config(config_path);
    (void)out_dir;
    config.training.validate();

    if (fs::exists(results_path(exchange_dir, round_id))) {
        throw UsageFailure("suggest: round " + std::to_string(round_id) +
                           " already has results; refusing to clobber a completed round");
    }

    const DatasetFile file = load_dataset(dataset_path);
    const LabeledDataset data = file.to_labeled(2);
    if (data.empty()) throw UsageFailure("suggest: dataset is empty, cannot train");

    // The CLI workflow operates on the unit square.
    const VectorXd lo = VectorXd::Zero(2);
    const VectorXd hi = VectorXd::Ones(2);
    for (Eigen::Index i = 0; i < data.lf_x.rows(); ++i) {
        if (data.lf_x.row(i).minCoeff() < 0.0 || data.lf_x.row(i).maxCoeff() > 1.0) {
            throw UsageFailure("suggest: LF point outside [0,1]^2");
        }
    }
    for (Eigen::Index i = 0; i < data.hf_x.rows(); ++i) {
        if (data.hf_x.row(i).minCoeff() < 0.0 || data.hf_x.row(i).maxCoeff() > 1.0) {
            throw UsageFailure("suggest: HF point outside [0,1]^2");
        }
    }

    const int n_total = static_cast<int>(data.lf_count() + data.hf_count());
    const int lf_ind = std::min(config.lf_inducing_cap, std::max(1, n_total));
    const int delta_ind =
        std::min(config.delta_inducing_cap, std::max(1, static_cast<int>(data.hf_count())));
    const std::uint64_t train_seed =
        derive_seed(config.seed, stream_tag::kTraining, static_cast<std::uint64_t>(round_id));
    BfgpcModel init =
        init_model(2, lo, hi, lf_ind, delta_ind, derive_seed(train_seed, stream_tag::kInducing));
    TrainingConfig tcfg = config.training;
    tcfg.seed = train_seed;
    const BfgpcModel model = train(init, data, tcfg).model;

    AcquisitionConfig acq = config.acquisition;
    acq.cost_lf = config.cost_lf;
    acq.cost_hf = config.cost_hf;
    acq.budget = config.round_budget;
    acq.seed = derive_seed(config.seed, stream_tag::kAcquisition, static_cast<std::uint64_t>(round_id));
    const QueryBatch batch = greedy_batch(model, config.strategy, acq, Rng(acq.seed));

    std::error_code ec;
    fs::create_directories(exchange_dir, ec);
    emit_requests(batch, exchange_dir, round_id);
    save_model(model, (fs::path(exchange_dir) / ("round_" + std::to_string(round_id) + ".model.json")).string());

    int n_lf = 0;
    int n_hf = 0;
    for (const Query& q : batch.queries) (q.fidelity == Fidelity::Low ? n_lf : n_hf) += 1;
    std::cout << "round " << round_id << ": " << n_lf << " LF + " << n_hf << " HF queries ("
              << batch.expanded.size() << " requests incl. repeats), total cost "
              << batch.total_cost << "\n";
    return kExitOk;
}

int ingest(const std::string& exchange_dir, int round_id, const std::string& dataset_path,
           bool accept_partial) {
    const std::vector<std::pair<std::string, int>> results =
        ingest_results(exchange_dir, round_id, accept_partial);
    const std::vector<ExchangeRequest> requests = parse_requests(exchange_dir, round_id);

    DatasetFile file = load_dataset(dataset_path);
    for (const std::vector<DatasetRecord>* recs : {&file.lf, &file.hf}) {
        for (const DatasetRecord& r : *recs) {
            if (!r.query_id) continue;
            for (const auto& [id, y] : results) {
                if (id == *r.query_id) {
                    throw ValidationError("ingest: query_id " + id +
                                          " already merged into the dataset");
                }
            }
        }
    }

    int merged = 0;
    for (const auto& [id, y] : results) {
        const ExchangeRequest* req = nullptr;
        for (const ExchangeRequest& r : requests) {
            if (r.query_id == id) {
                req = &r;
                break;
            }
        }
        if (req == nullptr) continue;  // ingest_results already validated ids
        DatasetRecord rec;
        rec.x = req->x;
        rec.y = y;
        rec.round_id = round_id;
        rec.query_id = id;
        (req->fidelity == Fidelity::Low ? file.lf : file.hf).push_back(std::move(rec));
        ++merged;
    }
    save_dataset(file, dataset_path);
    std::cout << "round " << round_id << ": merged " << merged << " results into " << dataset_path
              << "\n";
    return kExitOk;
}

int predict_grid(const std::string& model_path, int resolution, const std::string& fidelity_str,
                 const std::string& out_prefix) {
    if (resolution < 2) throw UsageFailure("predict-grid: resolution must be >= 2");
    Fidelity fid;
    if (fidelity_str == "L") {
        fid = Fidelity::Low;
    } else if (fidelity_str == "H") {
        fid = Fidelity::High;
    } else {
        throw UsageFailure("predict-grid: fidelity must be L or H");
    }
    const BfgpcModel model = load_model(model_path);

    const int res = resolution;
    MatrixXd grid(res * res, model.input_dim);
    // rows top to bottom: x2 descending; columns left to right: x1 ascending
    for (int r = 0; r < res; ++r) {
        for (int c = 0; c < res; ++c) {
            const double x1 = model.domain_lo[0] +
                              (model.domain_hi[0] - model.domain_lo[0]) * c / (res - 1.0);
            const double x2 = model.domain_hi[1] -
                              (model.domain_hi[1] - model.domain_lo[1]) * r / (res - 1.0);
            grid(r * res + c, 0) = x1;
            if (model.input_dim > 1) grid(r * res + c, 1) = x2;
        }
    }
    const VectorXd probs = predict_proba(model, grid, fid);

    std::string csv = "x1,x2,p\n";
    char buf[128];
    for (int i = 0; i < res * res; ++i) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", grid(i, 0),
                      model.input_dim > 1 ? grid(i, 1) : 0.0, probs[i]);
        csv += buf;
    }
    write_text_file(out_prefix + ".csv", csv);

    std::string pgm = "P5\n" + std::to_string(res) + " " + std::to_string(res) + "\n255\n";
    for (int i = 0; i < res * res; ++i) {
        const long v = std::lround(std::clamp(probs[i], 0.0, 1.0) * 255.0);
        pgm.push_back(static_cast<char>(static_cast<unsigned char>(v)));
    }
    write_text_file(out_prefix + ".pgm", pgm);
    std::cout << "wrote " << out_prefix << ".csv and " << out_prefix << ".pgm\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bi-fidelity GP classification with batch active learning"};
    app.require_subcommand(1);

    std::string config_path, out_dir, dataset_path, exchange_dir, model_path, fidelity = "H";
    int round_id = 0;
    int resolution = 64;
    bool accept_partial = false;

    CLI::App* cmd_run = app.add_subcommand("run-toy", "run a toy-problem experiment");
    cmd_run->add_option("--config", config_path)->required();
    cmd_run->add_option("--out", out_dir);

    CLI::App* cmd_suggest = app.add_subcommand("suggest", "train on a dataset and emit a request file");
    cmd_suggest->add_option("--dataset", dataset_path)->required();
    cmd_suggest->add_option("--config", config_path)->required();
    cmd_suggest->add_option("--exchange-dir", exchange_dir)->required();
    cmd_suggest->add_option("--round", round_id)->required();

    CLI::App* cmd_ingest = app.add_subcommand("ingest", "merge a results file into a dataset");
    cmd_ingest->add_option("--exchange-dir", exchange_dir)->required();
    cmd_ingest->add_option("--round", round_id)->required();
    cmd_ingest->add_option("--dataset", dataset_path)->required();
    cmd_ingest->add_flag("--accept-partial", accept_partial);

    CLI::App* cmd_grid = app.add_subcommand("predict-grid", "evaluate a model on a uniform grid");
    cmd_grid->add_option("--model", model_path)->required();
    cmd_grid->add_option("--resolution", resolution);
    cmd_grid->add_option("--fidelity", fidelity);
    cmd_grid->add_option("--out", out_dir)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (cmd_run->parsed()) return run_toy(config_path, out_dir);
        if (cmd_suggest->parsed()) return suggest(dataset_path, config_path, exchange_dir, round_id);
        if (cmd_ingest->parsed()) return ingest(exchange_dir, round_id, dataset_path, accept_partial);
        if (cmd_grid->parsed()) return predict_grid(model_path, resolution, fidelity, out_dir);
    } catch (const UsageFailure& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
