#ifndef BFAL_HARNESS_HPP
#define BFAL_HARNESS_HPP

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "bfal/acquisition.hpp"
#include "bfal/errors.hpp"
#include "bfal/model.hpp"
#include "bfal/oracles.hpp"
#include "bfal/rng.hpp"
#include "bfal/serialize.hpp"
#include "bfal/train.hpp"

namespace bfal {

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

struct ExperimentConfig {
    OracleSpec oracle;
    Strategy strategy = Strategy::BPMI;
    int init_lf = 50;
    int init_hf = 25;
    int rounds = 5;
    double round_budget = 100.0;
    double cost_lf = 0.1;
    double cost_hf = 1.0;
    int n_repeats = 20;
    int test_set_size = 10000;
    TrainingConfig training;
    AcquisitionConfig acquisition;
    int lf_inducing_cap = 64;
    int delta_inducing_cap = 32;
    std::uint64_t seed = 0;
    int threads = 0;  // 0 = hardware concurrency

    void validate() const {
        if (init_lf < 1 || init_hf < 1) throw ConfigError("init_lf and init_hf must be >= 1");
        if (rounds < 1) throw std::invalid_argument("rounds must be >= 1");
        if (!(round_budget > 0.0)) throw ConfigError("round_budget must be > 0");
        if (!(cost_lf > 0.0) || !(cost_hf > 0.0)) throw ConfigError("costs must be > 0");
        if (n_repeats < 1) throw ConfigError("n_repeats must be >= 1");
        if (test_set_size < 1) throw ConfigError("test_set_size must be >= 1");
        if (lf_inducing_cap < 1 || delta_inducing_cap < 1) {
            throw ConfigError("inducing caps must be >= 1");
        }
        training.validate();
        if (oracle.is_toy()) oracle.params.validate();
    }
};

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

inline double elpp(const VectorXd& pred_probs, const Eigen::VectorXi& labels) {
    if (pred_probs.size() != labels.size() || pred_probs.size() < 1) {
        throw std::invalid_argument("elpp: length mismatch or empty input");
    }
    double acc = 0.0;
    for (Eigen::Index i = 0; i < pred_probs.size(); ++i) {
        const double p = std::clamp(pred_probs[i], 1e-12, 1.0 - 1e-12);
        acc += labels[i] == 1 ? std::log(p) : std::log(1.0 - p);
    }
    return acc / static_cast<double>(pred_probs.size());
}

inline double mse_prob(const VectorXd& pred_probs, const VectorXd& true_probs) {
    if (pred_probs.size() != true_probs.size() || pred_probs.size() < 1) {
        throw std::invalid_argument("mse_prob: length mismatch or empty input");
    }
    return (pred_probs - true_probs).squaredNorm() / static_cast<double>(pred_probs.size());
}

// ---------------------------------------------------------------------------
// Test sets and initial designs
// ---------------------------------------------------------------------------

struct TestSet {
    MatrixXd points;
    Eigen::VectorXi labels;  // drawn once from the HF oracle
    VectorXd true_probs;     // toy only
};

// Fixed per (seed, repeat): identical across strategies by construction.
inline TestSet make_test_set(const ExperimentConfig& config, int repeat) {
    if (!config.oracle.is_toy()) {
        throw ConfigError("make_test_set: external oracle has no samplable test distribution");
    }
    Rng rng = Rng(config.seed).stream(stream_tag::kTestSet, static_cast<std::uint64_t>(repeat));
    TestSet test;
    test.points.resize(config.test_set_size, 2);
    test.labels.resize(config.test_set_size);
    test.true_probs.resize(config.test_set_size);
    for (int i = 0; i < config.test_set_size; ++i) {
        test.points(i, 0) = rng.uniform();
        test.points(i, 1) = rng.uniform();
        const double p = oracle_probability(config.oracle, test.points.row(i).transpose(), Fidelity::High);
        test.true_probs[i] = p;
        test.labels[i] = rng.bernoulli(p) ? 1 : 0;
    }
    return test;
}

// Uniform random locations labeled by the oracle; the stream depends on
// (experiment seed, repeat) only, never on the strategy.
inline LabeledDataset initial_design(const ExperimentConfig& config, int repeat) {
    if (config.init_lf < 1 || config.init_hf < 1) {
        throw ConfigError("initial_design: init counts must be >= 1");
    }
    if (!config.oracle.is_toy()) {
        throw ConfigError("initial_design: external oracle needs pre-supplied data");
    }
    Rng rng = Rng(config.seed).stream(stream_tag::kInitialDesign, static_cast<std::uint64_t>(repeat));
    std::vector<std::pair<VectorXd, Fidelity>> requests;
    requests.reserve(static_cast<std::size_t>(config.init_lf + config.init_hf));
    for (int i = 0; i < config.init_lf; ++i) {
        requests.emplace_back(VectorXd{{rng.uniform(), rng.uniform()}}, Fidelity::Low);
    }
    for (int i = 0; i < config.init_hf; ++i) {
        requests.emplace_back(VectorXd{{rng.uniform(), rng.uniform()}}, Fidelity::High);
    }
    const std::vector<int> labels = sample_labels(config.oracle, requests, rng);
    LabeledDataset data;
    for (std::size_t i = 0; i < requests.size(); ++i) {
        data.append(requests[i].first, labels[i], requests[i].second);
    }
    return data;
}

// ---------------------------------------------------------------------------
// Run logs
// ---------------------------------------------------------------------------

struct RoundRecord {
    int round_index = 0;
    double cumulative_cost = 0.0;  // acquisition cost spent before this round's batch
    double elpp = 0.0;
    double mse = 0.0;
    int n_lf_queries = 0;  // this round's batch; zero for the closing record
    int n_hf_queries = 0;
    double mean_repeats = 0.0;
    double batch_cost = 0.0;
    double last_query_cost = 0.0;
    std::int64_t wall_ms = 0;  // measured; the metrics CSV pins this column to 0
};

struct RunLog {
    int repeat_index = 0;
    std::uint64_t seed = 0;
    std::string config_hash;
    bool failed = false;
    std::string failure;
    std::vector<RoundRecord> rounds;
};

inline std::string config_hash_of(const json& config_json) {
    const std::string s = config_json.dump();
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------------------
// The active-learning loop
// ---------------------------------------------------------------------------

namespace detail {

inline BfgpcModel train_round_model(const ExperimentConfig& config, const LabeledDataset& data,
                                    int repeat, int round) {
    const int n_total = static_cast<int>(data.lf_count() + data.hf_count());
    const int lf_ind = std::min(config.lf_inducing_cap, std::max(1, n_total));
    const int delta_ind = std::min(config.delta_inducing_cap, std::max(1, static_cast<int>(data.hf_count())));
    const std::uint64_t train_seed = derive_seed(config.seed, stream_tag::kTraining,
                                                 static_cast<std::uint64_t>(repeat),
                                                 static_cast<std::uint64_t>(round));
    BfgpcModel init = init_model(2, VectorXd::Zero(2), VectorXd::Ones(2), lf_ind, delta_ind,
                                 derive_seed(train_seed, stream_tag::kInducing));
    TrainingConfig tcfg = config.training;
    tcfg.seed = train_seed;
    return train(init, data, tcfg).model;
}

}  // namespace detail

inline RunLog run_single_repeat(const ExperimentConfig& config, int repeat,
                                const std::string& config_hash) {
    RunLog log;
    log.repeat_index = repeat;
    log.seed = config.seed;
    log.config_hash = config_hash;

    const TestSet test = make_test_set(config, repeat);
    LabeledDataset data = initial_design(config, repeat);
    double cumulative = 0.0;

    for (int round = 0; round <= config.rounds; ++round) {
        const auto t0 = std::chrono::steady_clock::now();
        RoundRecord rec;
        rec.round_index = round;
        rec.cumulative_cost = cumulative;

        BfgpcModel model;
        try {
            model = detail::train_round_model(config, data, repeat, round);
        } catch (const TrainingError& e) {
            log.failed = true;
            log.failure = "round " + std::to_string(round) + ": " + e.what();
            return log;
        }
        const VectorXd probs = predict_proba(model, test.points, Fidelity::High);
        rec.elpp = elpp(probs, test.labels);
        rec.mse = mse_prob(probs, test.true_probs);

        if (round < config.rounds) {
            AcquisitionConfig acq = config.acquisition;
            acq.cost_lf = config.cost_lf;
            acq.cost_hf = config.cost_hf;
            acq.budget = config.round_budget;
            acq.seed = derive_seed(config.seed, stream_tag::kAcquisition,
                                   static_cast<std::uint64_t>(repeat),
                                   static_cast<std::uint64_t>(round));
            const QueryBatch batch = greedy_batch(model, config.strategy, acq, Rng(acq.seed));

            std::vector<std::pair<VectorXd, Fidelity>> requests;
            requests.reserve(batch.expanded.size());
            for (const ExpandedQuery& e : batch.expanded) requests.emplace_back(e.x, e.fidelity);
            Rng oracle_rng = Rng(config.seed).stream(stream_tag::kOracle,
                                                     static_cast<std::uint64_t>(repeat),
                                                     static_cast<std::uint64_t>(round));
            const std::vector<int> labels = sample_labels(config.oracle, requests, oracle_rng);
            for (std::size_t i = 0; i < requests.size(); ++i) {
                data.append(requests[i].first, labels[i], requests[i].second);
            }

            int n_lf = 0;
            int n_hf = 0;
            double repeat_sum = 0.0;
            for (const Query& q : batch.queries) {
                (q.fidelity == Fidelity::Low ? n_lf : n_hf) += 1;
                repeat_sum += q.repeats;
            }
            rec.n_lf_queries = n_lf;
            rec.n_hf_queries = n_hf;
            rec.mean_repeats = batch.queries.empty() ? 0.0 : repeat_sum / batch.queries.size();
            rec.batch_cost = batch.total_cost;
            rec.last_query_cost = batch.queries.empty()
                                      ? 0.0
                                      : batch.queries.back().repeats *
                                            (batch.queries.back().fidelity == Fidelity::Low
                                                 ? config.cost_lf
                                                 : config.cost_hf);
            cumulative += batch.total_cost;
        }
        rec.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
        log.rounds.push_back(rec);
    }
    return log;
}

inline json config_to_json(const ExperimentConfig& config);

inline std::vector<RunLog> run_experiment(const ExperimentConfig& config) {
    config.validate();
    if (!config.oracle.is_toy()) {
        throw ConfigError("run_experiment: external oracles use the suggest/ingest workflow");
    }
    const std::string hash = config_hash_of(config_to_json(config));

    std::vector<RunLog> logs(static_cast<std::size_t>(config.n_repeats));
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const int n_threads = config.threads > 0 ? config.threads
                                             : static_cast<int>(std::min<unsigned>(hw, static_cast<unsigned>(config.n_repeats)));
    if (n_threads <= 1 || config.n_repeats == 1) {
        for (int r = 0; r < config.n_repeats; ++r) logs[static_cast<std::size_t>(r)] = run_single_repeat(config, r, hash);
        return logs;
    }
    std::atomic<int> next{0};
    auto worker = [&]() {
        while (true) {
            const int r = next.fetch_add(1);
            if (r >= config.n_repeats) break;
            logs[static_cast<std::size_t>(r)] = run_single_repeat(config, r, hash);
        }
    };
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (std::thread& t : threads) t.join();
    return logs;
}

// ---------------------------------------------------------------------------
// Summaries and persistence
// ---------------------------------------------------------------------------

struct SummaryRecord {
    int round_index = 0;
    double elpp_mean = 0.0;
    double elpp_std = 0.0;
    double mse_mean = 0.0;
    double mse_std = 0.0;
    int n_runs = 0;
};

inline std::vector<SummaryRecord> summarize(const std::vector<RunLog>& runs) {
    if (runs.empty()) throw std::invalid_argument("summarize: no runs");
    std::size_t max_rounds = 0;
    for (const RunLog& r : runs) max_rounds = std::max(max_rounds, r.rounds.size());
    std::vector<SummaryRecord> out;
    for (std::size_t k = 0; k < max_rounds; ++k) {
        SummaryRecord s;
        s.round_index = static_cast<int>(k);
        std::vector<double> es, ms;
        for (const RunLog& r : runs) {
            if (r.failed || r.rounds.size() <= k) continue;
            es.push_back(r.rounds[k].elpp);
            ms.push_back(r.rounds[k].mse);
        }
        s.n_runs = static_cast<int>(es.size());
        if (s.n_runs > 0) {
            auto mean_of = [](const std::vector<double>& v) {
                double acc = 0.0;
                for (double x : v) acc += x;
                return acc / static_cast<double>(v.size());
            };
            auto std_of = [&](const std::vector<double>& v, double mean) {
                double acc = 0.0;
                for (double x : v) acc += (x - mean) * (x - mean);
                return std::sqrt(acc / static_cast<double>(v.size()));
            };
            s.elpp_mean = mean_of(es);
            s.elpp_std = std_of(es, s.elpp_mean);
            s.mse_mean = mean_of(ms);
            s.mse_std = std_of(ms, s.mse_mean);
        }
        out.push_back(s);
    }
    return out;
}

namespace detail {

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace detail

// Normative comparison artifact. The wall_ms column is pinned to zero so the
// file is byte-identical across reruns with the same seed; measured times live
// in the JSON sidecar.
inline std::string metrics_csv(const std::vector<RunLog>& runs) {
    std::string out = "repeat,round,cumulative_cost,elpp,mse,n_lf_queries,n_hf_queries,mean_repeats,wall_ms\n";
    for (const RunLog& run : runs) {
        for (const RoundRecord& r : run.rounds) {
            out += std::to_string(run.repeat_index) + "," + std::to_string(r.round_index) + "," +
                   detail::fmt_double(r.cumulative_cost) + "," + detail::fmt_double(r.elpp) + "," +
                   detail::fmt_double(r.mse) + "," + std::to_string(r.n_lf_queries) + "," +
                   std::to_string(r.n_hf_queries) + "," + detail::fmt_double(r.mean_repeats) +
                   ",0\n";
        }
    }
    return out;
}

inline std::string summary_csv(const std::vector<SummaryRecord>& summary) {
    std::string out = "round,elpp_mean,elpp_std,mse_mean,mse_std,n_runs\n";
    for (const SummaryRecord& s : summary) {
        out += std::to_string(s.round_index) + "," + detail::fmt_double(s.elpp_mean) + "," +
               detail::fmt_double(s.elpp_std) + "," + detail::fmt_double(s.mse_mean) + "," +
               detail::fmt_double(s.mse_std) + "," + std::to_string(s.n_runs) + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Config JSON (strict: unknown keys are rejected at every level)
// ---------------------------------------------------------------------------

namespace detail {

inline void reject_unknown_keys(const json& j, const std::vector<std::string>& known,
                                const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const std::string& k : known) {
            if (it.key() == k) {
                ok = true;
                break;
            }
        }
        if (!ok) throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
    }
}

template <typename T>
void maybe_get(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        try {
            out = j.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
        }
    }
}

}  // namespace detail

inline json config_to_json(const ExperimentConfig& config) {
    json j;
    j["format_version"] = kFormatVersion;
    json oracle;
    switch (config.oracle.kind) {
        case OracleKind::ToyLinear: oracle["kind"] = "TOY_LINEAR"; break;
        case OracleKind::ToyNonlinear: oracle["kind"] = "TOY_NONLINEAR"; break;
        case OracleKind::External: oracle["kind"] = "EXTERNAL"; break;
    }
    if (config.oracle.is_toy()) {
        oracle["alpha"] = config.oracle.params.alpha;
    } else {
        oracle["exchange_dir"] = config.oracle.exchange_dir;
    }
    j["oracle"] = oracle;
    j["strategy"] = strategy_name(config.strategy);
    j["init_lf"] = config.init_lf;
    j["init_hf"] = config.init_hf;
    j["rounds"] = config.rounds;
    j["round_budget"] = config.round_budget;
    j["cost_lf"] = config.cost_lf;
    j["cost_hf"] = config.cost_hf;
    j["n_repeats"] = config.n_repeats;
    j["test_set_size"] = config.test_set_size;
    j["seed"] = config.seed;
    j["threads"] = config.threads;
    j["lf_inducing_cap"] = config.lf_inducing_cap;
    j["delta_inducing_cap"] = config.delta_inducing_cap;
    json training;
    training["learning_rate"] = config.training.learning_rate;
    training["steps"] = config.training.steps;
    training["restarts"] = config.training.restarts;
    training["reg_lambda"] = config.training.reg_lambda;
    training["gh_order"] = config.training.gh_order;
    if (!config.training.theta_prior.empty()) training["theta_prior"] = config.training.theta_prior;
    j["training"] = training;
    json acq;
    acq["candidate_count"] = config.acquisition.candidate_count;
    acq["test_point_count"] = config.acquisition.test_point_count;
    acq["n_max"] = config.acquisition.n_max;
    acq["jitter_scale"] = config.acquisition.jitter_scale;
    acq["beta"] = config.acquisition.beta;
    j["acquisition"] = acq;
    return j;
}

// Parses a CLI config document; `out_dir` (optional key) is returned through
// the second member of the pair.
inline std::pair<ExperimentConfig, std::string> config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config: expected a JSON object");
    detail::reject_unknown_keys(
        j,
        {"format_version", "oracle", "strategy", "init_lf", "init_hf", "rounds", "round_budget",
         "cost_lf", "cost_hf", "n_repeats", "test_set_size", "seed", "threads", "lf_inducing_cap",
         "delta_inducing_cap", "training", "acquisition", "out_dir"},
        "top level");
    if (j.contains("format_version")) check_format_version(j, "config");
    ExperimentConfig config;
    if (!j.contains("oracle")) throw ConfigError("config: missing 'oracle'");
    {
        const json& oracle = j.at("oracle");
        detail::reject_unknown_keys(oracle, {"kind", "alpha", "exchange_dir"}, "oracle");
        std::string kind;
        detail::maybe_get(oracle, "kind", kind);
        if (kind == "TOY_LINEAR") {
            config.oracle.kind = OracleKind::ToyLinear;
        } else if (kind == "TOY_NONLINEAR") {
            config.oracle.kind = OracleKind::ToyNonlinear;
        } else if (kind == "EXTERNAL") {
            config.oracle.kind = OracleKind::External;
        } else {
            throw ConfigError("config: oracle.kind must be TOY_LINEAR, TOY_NONLINEAR or EXTERNAL");
        }
        detail::maybe_get(oracle, "alpha", config.oracle.params.alpha);
        detail::maybe_get(oracle, "exchange_dir", config.oracle.exchange_dir);
    }
    if (!j.contains("strategy")) throw ConfigError("config: missing 'strategy'");
    try {
        config.strategy = strategy_from_name(j.at("strategy").get<std::string>());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    detail::maybe_get(j, "init_lf", config.init_lf);
    detail::maybe_get(j, "init_hf", config.init_hf);
    detail::maybe_get(j, "rounds", config.rounds);
    detail::maybe_get(j, "round_budget", config.round_budget);
    detail::maybe_get(j, "cost_lf", config.cost_lf);
    detail::maybe_get(j, "cost_hf", config.cost_hf);
    detail::maybe_get(j, "n_repeats", config.n_repeats);
    detail::maybe_get(j, "test_set_size", config.test_set_size);
    detail::maybe_get(j, "seed", config.seed);
    detail::maybe_get(j, "threads", config.threads);
    detail::maybe_get(j, "lf_inducing_cap", config.lf_inducing_cap);
    detail::maybe_get(j, "delta_inducing_cap", config.delta_inducing_cap);
    if (j.contains("training")) {
        const json& t = j.at("training");
        detail::reject_unknown_keys(
            t, {"learning_rate", "steps", "restarts", "reg_lambda", "gh_order", "theta_prior"},
            "training");
        detail::maybe_get(t, "learning_rate", config.training.learning_rate);
        detail::maybe_get(t, "steps", config.training.steps);
        detail::maybe_get(t, "restarts", config.training.restarts);
        detail::maybe_get(t, "reg_lambda", config.training.reg_lambda);
        detail::maybe_get(t, "gh_order", config.training.gh_order);
        detail::maybe_get(t, "theta_prior", config.training.theta_prior);
    }
    if (j.contains("acquisition")) {
        const json& a = j.at("acquisition");
        detail::reject_unknown_keys(
            a, {"candidate_count", "test_point_count", "n_max", "jitter_scale", "beta"},
            "acquisition");
        detail::maybe_get(a, "candidate_count", config.acquisition.candidate_count);
        detail::maybe_get(a, "test_point_count", config.acquisition.test_point_count);
        detail::maybe_get(a, "n_max", config.acquisition.n_max);
        detail::maybe_get(a, "jitter_scale", config.acquisition.jitter_scale);
        detail::maybe_get(a, "beta", config.acquisition.beta);
    }
    std::string out_dir;
    detail::maybe_get(j, "out_dir", out_dir);
    return {config, out_dir};
}

}  // namespace bfal

#endif  // BFAL_HARNESS_HPP
