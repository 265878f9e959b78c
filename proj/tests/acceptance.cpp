// Acceptance suite. Each criterion prints exactly one PASS/FAIL line and
// enforces its own runtime bound. Run with a criterion number (1-9) or with
// no arguments for the full list. Criteria 7 and 8 reuse the experiment
// outputs that criterion 6 stores under the state directory.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "bfal/harness.hpp"

using namespace bfal;
namespace fs = std::filesystem;

namespace {

struct Check {
    bool ok = true;
    std::string detail;

    void require(bool cond, const std::string& what) {
        if (!cond && ok) {
            ok = false;
            detail = what;
        }
    }
};

std::string state_dir() {
#ifdef ACCEPTANCE_STATE_DIR
    return ACCEPTANCE_STATE_DIR;
#else
    return "acceptance_state";
#endif
}

MatrixXd random_psd(int n, Rng& rng, double diag_boost) {
    MatrixXd a(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) a(i, j) = rng.normal();
    }
    MatrixXd s = a * a.transpose() / n;
    s.diagonal().array() += diag_boost;
    return s;
}

BfgpcModel random_model(std::uint64_t seed, int m_lf, int m_delta) {
    BfgpcModel model = init_model(2, VectorXd::Zero(2), VectorXd::Ones(2), m_lf, m_delta, seed);
    Rng rng(seed * 131 + 17);
    auto randomize = [&](LatentGp& gp) {
        for (Eigen::Index i = 0; i < gp.var.mean.size(); ++i) gp.var.mean[i] = rng.normal();
        const Eigen::Index m = gp.inducing_count();
        MatrixXd l = MatrixXd::Zero(m, m);
        for (Eigen::Index i = 0; i < m; ++i) {
            for (Eigen::Index j = 0; j < i; ++j) l(i, j) = 0.2 * rng.normal();
            l(i, i) = 0.3 + 0.2 * rng.uniform();
        }
        gp.var.chol = l;
        gp.config.mean_const = 0.3 * rng.normal();
        gp.config.kernel.output_scale = 0.5 + rng.uniform();
        gp.config.kernel.lengthscale = 0.3 + 0.4 * rng.uniform();
    };
    randomize(model.lf);
    randomize(model.delta);
    model.rho = 0.5 + rng.uniform();
    return model;
}

// ---------------------------------------------------------------------------
// Criterion 1: closed-form oracle suite
// ---------------------------------------------------------------------------

Check criterion_1() {
    Check c;
    double worst = 0.0;
    for (int i = 0; i <= 20; ++i) {
        for (int j = 0; j <= 20; ++j) {
            const double m = -5.0 + 0.5 * i;
            const double v = 0.5 * j;
            const double closed = normal_cdf(m / std::sqrt(1.0 + v));
            worst = std::max(worst, std::abs(marginal_bernoulli_prob(m, v) - closed));
        }
    }
    c.require(worst < 1e-8, "marginal probability off the closed form by " + std::to_string(worst));

    Rng rng(20250810);
    for (int trial = 0; trial < 100; ++trial) {
        const int na = 1 + static_cast<int>(rng.below(4));
        const int nb = 1 + static_cast<int>(rng.below(4));
        GaussianJoint joint;
        joint.mean = VectorXd::Zero(na + nb);
        joint.cov = random_psd(na + nb, rng, 0.5);
        std::vector<int> a, b;
        for (int i = 0; i < na; ++i) a.push_back(i);
        for (int i = 0; i < nb; ++i) b.push_back(na + i);
        auto entropy = [](const MatrixXd& cov) {
            return 0.5 * (cov.rows() * std::log(2.0 * kPi * std::exp(1.0)) +
                          std::log(cov.determinant()));
        };
        const double oracle = entropy(joint.cov.topLeftCorner(na, na)) +
                              entropy(joint.cov.bottomRightCorner(nb, nb)) - entropy(joint.cov);
        const double got = gaussian_mi(joint, a, b);
        c.require(std::abs(got - oracle) < 1e-9,
                  "MI off the entropy identity by " + std::to_string(std::abs(got - oracle)));
    }
    return c;
}

// ---------------------------------------------------------------------------
// Criterion 2: gradient verification
// ---------------------------------------------------------------------------

Check criterion_2() {
    Check c;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        BfgpcModel model = random_model(seed, 3, 2);
        Rng rng(seed + 400);
        LabeledDataset data;
        for (int i = 0; i < 3; ++i) {
            data.append(VectorXd{{rng.uniform(), rng.uniform()}}, rng.bernoulli(0.5) ? 1 : 0,
                        Fidelity::Low);
        }
        for (int i = 0; i < 2; ++i) {
            data.append(VectorXd{{rng.uniform(), rng.uniform()}}, rng.bernoulli(0.5) ? 1 : 0,
                        Fidelity::High);
        }
        TrainingConfig cfg;
        cfg.reg_lambda = 1e-2;
        cfg.theta_prior = {0.1, -0.4, 0.2, -0.3};

        const auto [loss, grad] = regularized_loss_grad(model, data, cfg);
        c.require(std::isfinite(loss), "loss not finite");
        const VectorXd theta = detail::pack_params(model);
        const double h = 1e-5;
        for (Eigen::Index i = 0; i < theta.size(); ++i) {
            VectorXd tp = theta, tm = theta;
            tp[i] += h;
            tm[i] -= h;
            BfgpcModel mp = model, mm = model;
            detail::unpack_params(tp, mp);
            detail::unpack_params(tm, mm);
            const double fd =
                (regularized_loss(mp, data, cfg) - regularized_loss(mm, data, cfg)) / (2.0 * h);
            const double scale = std::max({std::abs(fd), std::abs(grad[i]), 1e-6});
            if (std::abs(fd - grad[i]) / scale >= 1e-3) {
                c.require(false, "seed " + std::to_string(seed) + " param " + std::to_string(i) +
                                     ": analytic " + std::to_string(grad[i]) + " vs fd " +
                                     std::to_string(fd));
            }
        }
    }
    return c;
}

// ---------------------------------------------------------------------------
// Criterion 3: joint posterior vs Monte-Carlo oracle
// ---------------------------------------------------------------------------

Check criterion_3() {
    Check c;
    for (std::uint64_t trial = 0; trial < 5; ++trial) {
        const BfgpcModel model = random_model(3000 + trial, 5, 4);
        Rng rng(500 + trial);
        std::vector<QueryPoint> queries = {
            {VectorXd{{rng.uniform(), rng.uniform()}},
             rng.bernoulli(0.5) ? Fidelity::Low : Fidelity::High},
            {VectorXd{{rng.uniform(), rng.uniform()}},
             rng.bernoulli(0.5) ? Fidelity::Low : Fidelity::High},
        };
        std::vector<VectorXd> tests;
        for (int i = 0; i < 3; ++i) tests.push_back(VectorXd{{rng.uniform(), rng.uniform()}});
        const GaussianJoint joint = joint_latent_posterior(model, queries, tests);

        // dense sampling oracle over the two independent posteriors
        std::vector<VectorXd> lf_locs, d_locs;
        std::vector<std::pair<int, int>> map;  // (lf index, delta index or -1)
        auto intern = [](std::vector<VectorXd>& locs, const VectorXd& x) {
            for (std::size_t i = 0; i < locs.size(); ++i) {
                if ((locs[i].array() == x.array()).all()) return static_cast<int>(i);
            }
            locs.push_back(x);
            return static_cast<int>(locs.size()) - 1;
        };
        std::vector<double> lf_coeff;
        for (const QueryPoint& q : queries) {
            const bool high = q.fidelity == Fidelity::High;
            map.emplace_back(intern(lf_locs, q.x), high ? intern(d_locs, q.x) : -1);
            lf_coeff.push_back(high ? model.rho : 1.0);
        }
        for (const VectorXd& x : tests) {
            map.emplace_back(intern(lf_locs, x), intern(d_locs, x));
            lf_coeff.push_back(model.rho);
        }

        auto dense = [&](const LatentGp& gp, const std::vector<VectorXd>& locs, VectorXd& mean,
                         MatrixXd& cov) {
            MatrixXd x(static_cast<Eigen::Index>(locs.size()), 2);
            for (std::size_t i = 0; i < locs.size(); ++i) {
                x.row(static_cast<Eigen::Index>(i)) = locs[i].transpose();
            }
            const MatrixXd kzz_inv = inducing_gram(gp.config).inverse();
            const MatrixXd kxz = kernel_matrix(x, gp.config.inducing, gp.config.kernel);
            const Eigen::Index m = gp.inducing_count();
            const MatrixXd s = gp.var.chol * gp.var.chol.transpose();
            mean = VectorXd::Constant(x.rows(), gp.config.mean_const) +
                   kxz * kzz_inv * (gp.var.mean - VectorXd::Constant(m, gp.config.mean_const));
            cov = kernel_matrix(x, x, gp.config.kernel) - kxz * kzz_inv * kxz.transpose() +
                  kxz * kzz_inv * s * kzz_inv * kxz.transpose();
        };
        VectorXd mu_l, mu_d;
        MatrixXd cov_l, cov_d;
        dense(model.lf, lf_locs, mu_l, cov_l);
        dense(model.delta, d_locs, mu_d, cov_d);
        const MatrixXd chol_l = stabilized_cholesky(cov_l).lower;
        const MatrixXd chol_d = stabilized_cholesky(cov_d).lower;

        const int dim = 5;
        const int n_draws = 1000000;
        VectorXd acc_mean = VectorXd::Zero(dim);
        MatrixXd acc_outer = MatrixXd::Zero(dim, dim);
        VectorXd zl(static_cast<Eigen::Index>(lf_locs.size()));
        VectorXd zd(static_cast<Eigen::Index>(d_locs.size()));
        VectorXd out(dim);
        for (int t = 0; t < n_draws; ++t) {
            for (Eigen::Index i = 0; i < zl.size(); ++i) zl[i] = rng.normal();
            for (Eigen::Index i = 0; i < zd.size(); ++i) zd[i] = rng.normal();
            const VectorXd fl = mu_l + chol_l * zl;
            const VectorXd fd = mu_d + chol_d * zd;
            for (int k = 0; k < dim; ++k) {
                const auto& mk = map[static_cast<std::size_t>(k)];
                out[k] = lf_coeff[static_cast<std::size_t>(k)] * fl[mk.first];
                if (mk.second >= 0) out[k] += fd[mk.second];
            }
            acc_mean += out;
            acc_outer += out * out.transpose();
        }
        const VectorXd mc_mean = acc_mean / n_draws;
        const MatrixXd mc_cov = acc_outer / n_draws - mc_mean * mc_mean.transpose();
        const double err = (mc_cov - joint.cov).cwiseAbs().maxCoeff();
        c.require(err < 5e-3, "trial " + std::to_string(trial) + ": covariance off MC oracle by " +
                                  std::to_string(err));
    }
    return c;
}

// ---------------------------------------------------------------------------
// Criterion 4: greedy near-optimality
// ---------------------------------------------------------------------------

Check criterion_4() {
    Check c;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const BfgpcModel model = random_model(4000 + seed, 6, 4);
        Rng rng(seed);
        CandidatePools pools;
        for (int i = 0; i < 3; ++i) pools.lf.push_back(VectorXd{{rng.uniform(), rng.uniform()}});
        for (int i = 0; i < 3; ++i) pools.hf.push_back(VectorXd{{rng.uniform(), rng.uniform()}});
        for (int i = 0; i < 10; ++i) {
            pools.test_points.push_back(VectorXd{{rng.uniform(), rng.uniform()}});
        }

        AcquisitionConfig cfg;
        cfg.cost_lf = 1.0;
        cfg.cost_hf = 1.0;
        cfg.budget = 2.5;  // three unit-cost selections under the overrun rule
        cfg.n_max = 1;     // repeats pinned to 1

        std::vector<QueryPoint> pool_pts;
        for (const VectorXd& x : pools.lf) pool_pts.push_back({x, Fidelity::Low});
        for (const VectorXd& x : pools.hf) pool_pts.push_back({x, Fidelity::High});

        for (const Strategy strategy : {Strategy::LFMI, Strategy::BPMI}) {
            const QueryBatch batch = greedy_batch_with_pools(model, strategy, cfg, pools, Rng(seed));
            c.require(batch.queries.size() == 3, "expected 3 selections");
            if (batch.queries.size() != 3) return c;
            std::vector<QueryPoint> chosen;
            for (const Query& q : batch.queries) chosen.push_back({q.x, q.fidelity});
            auto score = [&](const std::vector<QueryPoint>& qs) {
                return strategy == Strategy::LFMI ? lfmi_score(model, qs, pools.test_points)
                                                  : bpmi_score(model, qs, pools.test_points);
            };
            const double greedy_value = score(chosen);
            double best = 0.0;
            for (int a = 0; a < 6; ++a) {
                for (int b = -1; b < 6; ++b) {
                    for (int d = -1; d < 6; ++d) {
                        if (b >= 0 && b <= a) continue;
                        if (d >= 0 && (b < 0 || d <= b)) continue;
                        std::vector<QueryPoint> subset = {pool_pts[static_cast<std::size_t>(a)]};
                        if (b >= 0) subset.push_back(pool_pts[static_cast<std::size_t>(b)]);
                        if (d >= 0) subset.push_back(pool_pts[static_cast<std::size_t>(d)]);
                        best = std::max(best, score(subset));
                    }
                }
            }
            if (greedy_value < (1.0 - std::exp(-1.0)) * best - 1e-9) {
                c.require(false, "seed " + std::to_string(seed) + " " + strategy_name(strategy) +
                                     ": greedy " + std::to_string(greedy_value) + " vs (1-1/e) x " +
                                     std::to_string(best));
            }
        }
    }
    return c;
}

// ---------------------------------------------------------------------------
// Criterion 5: saturation behavior
// ---------------------------------------------------------------------------

Check criterion_5() {
    Check c;
    Rng rng(55);
    int lfmi_prefers_saturated = 0;
    for (int trial = 0; trial < 50; ++trial) {
        // equal latent variances; the saturated query gets the stronger
        // correlation with the test block in half the trials
        const double var = rng.uniform(0.6, 1.4);
        const bool saturated_strong = trial % 2 == 0;
        const double load_sat = saturated_strong ? rng.uniform(0.5, 0.7) : rng.uniform(0.2, 0.4);
        const double load_bnd = saturated_strong ? rng.uniform(0.2, 0.4) : rng.uniform(0.5, 0.7);
        VectorXd test_loadings(3);
        for (int i = 0; i < 3; ++i) test_loadings[i] = rng.uniform(0.3, 0.6);

        auto singleton = [&](double mu0, double loading0, bool linearize) {
            VectorXd means = VectorXd::Zero(4);
            means[0] = mu0;
            VectorXd loadings(4);
            loadings << loading0, test_loadings[0], test_loadings[1], test_loadings[2];
            GaussianJoint joint;
            joint.mean = means;
            joint.cov = loadings * loadings.transpose();
            joint.cov.diagonal().setConstant(var);
            return linearize ? mi_of_joint(bpmi_transform(joint), 1) : mi_of_joint(joint, 1);
        };
        const double mu_sat = rng.bernoulli(0.5) ? 5.0 : -5.0;
        const double bpmi_sat = singleton(mu_sat, load_sat, true);
        const double bpmi_bnd = singleton(0.0, load_bnd, true);
        c.require(bpmi_bnd > bpmi_sat,
                  "trial " + std::to_string(trial) + ": BPMI ranked the saturated query higher");
        if (singleton(mu_sat, load_sat, false) > singleton(0.0, load_bnd, false)) {
            ++lfmi_prefers_saturated;
        }
    }
    c.require(lfmi_prefers_saturated > 0, "LFMI never preferred the saturated query");
    return c;
}

// ---------------------------------------------------------------------------
// Criterion 6: directional reproduction of the toy-problem comparison
// (stores its outputs for criteria 7 and 8)
// ---------------------------------------------------------------------------

ExperimentConfig toy_experiment_config(OracleKind kind, Strategy strategy) {
    ExperimentConfig config;
    config.oracle.kind = kind;
    config.strategy = strategy;
    config.init_lf = 50;
    config.init_hf = 25;
    config.rounds = 5;
    config.round_budget = 100.0;
    config.cost_lf = 0.1;
    config.cost_hf = 1.0;
    config.n_repeats = 10;
    config.test_set_size = 10000;
    config.seed = 20250810;
    config.threads = 0;
    // converged training at desk scale; the library defaults
    // (lr 1e-3, 500 steps) stop far short of the optimum on these problems
    config.training.learning_rate = 0.05;
    config.training.steps = 300;
    config.training.restarts = 3;
    return config;
}

Check criterion_6() {
    Check c;
    const std::string dir = state_dir();
    fs::create_directories(dir);

    json invariants = json::array();
    std::map<std::string, std::pair<double, double>> final_metrics;  // arm -> (elpp, mse)

    for (const OracleKind kind : {OracleKind::ToyLinear, OracleKind::ToyNonlinear}) {
        const std::string problem = kind == OracleKind::ToyLinear ? "linear" : "nonlinear";
        for (const Strategy strategy :
             {Strategy::BPMI, Strategy::LFMI, Strategy::MAXUNC, Strategy::RANDOM}) {
            const ExperimentConfig config = toy_experiment_config(kind, strategy);
            const std::vector<RunLog> runs = run_experiment(config);
            const std::vector<SummaryRecord> summary = summarize(runs);
            const std::string arm = problem + "_" + strategy_name(strategy);

            int failures = 0;
            for (const RunLog& run : runs) {
                failures += run.failed ? 1 : 0;
                for (const RoundRecord& r : run.rounds) {
                    if (r.round_index >= config.rounds) continue;
                    invariants.push_back({{"arm", arm},
                                          {"repeat", run.repeat_index},
                                          {"round", r.round_index},
                                          {"batch_cost", r.batch_cost},
                                          {"last_query_cost", r.last_query_cost},
                                          {"budget", config.round_budget}});
                }
            }
            c.require(failures == 0, arm + ": " + std::to_string(failures) + " repeats failed");
            const SummaryRecord& last = summary.back();
            final_metrics[arm] = {last.elpp_mean, last.mse_mean};
            write_text_file((fs::path(dir) / (arm + "_metrics.csv")).string(), metrics_csv(runs));
            std::fprintf(stderr, "  [c6] %-18s final elpp %.4f  mse %.5f\n", arm.c_str(),
                         last.elpp_mean, last.mse_mean);
        }
    }
    write_text_file((fs::path(dir) / "invariants.json").string(), invariants.dump(1));

    for (const std::string problem : {std::string("linear"), std::string("nonlinear")}) {
        const auto bpmi = final_metrics.at(problem + "_BPMI");
        for (const std::string baseline :
             {std::string("LFMI"), std::string("MAXUNC"), std::string("RANDOM")}) {
            const auto base = final_metrics.at(problem + "_" + baseline);
            c.require(bpmi.first >= base.first, problem + ": BPMI ELPP " +
                                                    std::to_string(bpmi.first) + " < " + baseline +
                                                    " " + std::to_string(base.first));
            c.require(bpmi.second <= base.second, problem + ": BPMI MSE " +
                                                      std::to_string(bpmi.second) + " > " +
                                                      baseline + " " + std::to_string(base.second));
        }
    }
    const bool strong_mse =
        final_metrics.at("linear_BPMI").second < 0.9 * final_metrics.at("linear_RANDOM").second ||
        final_metrics.at("nonlinear_BPMI").second <
            0.9 * final_metrics.at("nonlinear_RANDOM").second;
    c.require(strong_mse, "BPMI MSE not below 0.9 x RANDOM on either problem");
    return c;
}

// ---------------------------------------------------------------------------
// Criterion 7: budget contract across every run of criterion 6
// ---------------------------------------------------------------------------

Check criterion_7() {
    Check c;
    const std::string path = (fs::path(state_dir()) / "invariants.json").string();
    if (!fs::exists(path)) {
        Check fresh = criterion_6();  // the contract is defined over those runs
        if (!fresh.ok) {
            fresh.detail = "criterion 6 rerun failed: " + fresh.detail;
            return fresh;
        }
    }
    const json invariants = parse_json(read_text_file(path), "invariants");
    int n = 0;
    for (const json& rec : invariants) {
        const double batch_cost = rec.at("batch_cost").get<double>();
        const double last = rec.at("last_query_cost").get<double>();
        const double budget = rec.at("budget").get<double>();
        ++n;
        if (!(batch_cost > budget)) {
            c.require(false, rec.at("arm").get<std::string>() + " repeat " +
                                 std::to_string(rec.at("repeat").get<int>()) + " round " +
                                 std::to_string(rec.at("round").get<int>()) +
                                 ": batch cost did not exceed the budget");
        }
        if (!(batch_cost - last <= budget * (1.0 + 1e-9) + 1e-12)) {
            c.require(false, rec.at("arm").get<std::string>() +
                                 ": batch minus last query exceeds the budget");
        }
    }
    c.require(n == 2 * 4 * 10 * 5, "expected 400 round records, saw " + std::to_string(n));
    return c;
}

// ---------------------------------------------------------------------------
// Criterion 8: byte-identical rerun of the linear BPMI arm
// ---------------------------------------------------------------------------

Check criterion_8() {
    Check c;
    const std::string stored_path = (fs::path(state_dir()) / "linear_BPMI_metrics.csv").string();
    if (!fs::exists(stored_path)) {
        Check fresh = criterion_6();
        if (!fresh.ok) {
            fresh.detail = "criterion 6 rerun failed: " + fresh.detail;
            return fresh;
        }
    }
    const ExperimentConfig config = toy_experiment_config(OracleKind::ToyLinear, Strategy::BPMI);
    const std::vector<RunLog> runs = run_experiment(config);
    const std::string rerun = metrics_csv(runs);
    const std::string stored = read_text_file(stored_path);
    c.require(rerun == stored, "rerun metrics CSV differs from the stored one");
    return c;
}

// ---------------------------------------------------------------------------
// Criterion 9: external-oracle workflow round trip through the CLI
// ---------------------------------------------------------------------------

int run_cli(const std::string& args) {
#ifdef BFAL_CLI_PATH
    const std::string cmd = std::string(BFAL_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
#else
    (void)args;
    return -1;
#endif
}

Check criterion_9() {
    Check c;
    const fs::path dir = fs::path(state_dir()) / "external";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string exchange = (dir / "exchange").string();
    const std::string dataset_path = (dir / "dataset.json").string();
    const std::string config_path = (dir / "config.json").string();

    json cfg;
    cfg["oracle"] = {{"kind", "EXTERNAL"}, {"exchange_dir", exchange}};
    cfg["strategy"] = "BPMI";
    cfg["round_budget"] = 20.0;
    cfg["seed"] = 9;
    cfg["training"] = {{"steps", 150}, {"restarts", 2}, {"learning_rate", 0.05}};
    cfg["acquisition"] = {{"candidate_count", 64}, {"test_point_count", 32}, {"n_max", 5}};
    cfg["lf_inducing_cap"] = 32;
    cfg["delta_inducing_cap"] = 16;
    write_text_file(config_path, cfg.dump());

    // seed dataset from the toy fields
    Rng rng(4242);
    DatasetFile file;
    for (int i = 0; i < 50; ++i) {
        DatasetRecord r;
        r.x = {rng.uniform(), rng.uniform()};
        r.y = rng.bernoulli(lf_probability(VectorXd{{r.x[0], r.x[1]}})) ? 1 : 0;
        file.lf.push_back(r);
    }
    for (int i = 0; i < 25; ++i) {
        DatasetRecord r;
        r.x = {rng.uniform(), rng.uniform()};
        r.y = rng.bernoulli(hf_probability_linear(VectorXd{{r.x[0], r.x[1]}})) ? 1 : 0;
        file.hf.push_back(r);
    }
    save_dataset(file, dataset_path);

    std::size_t prev_size = file.lf.size() + file.hf.size();
    for (int round = 0; round < 3; ++round) {
        const int code =
            run_cli("suggest --dataset " + dataset_path + " --config " + config_path +
                    " --exchange-dir " + exchange + " --round " + std::to_string(round));
        c.require(code == 0,
                  "suggest round " + std::to_string(round) + " exited " + std::to_string(code));
        if (!c.ok) return c;

        // play the external simulator with the toy oracle
        const std::vector<ExchangeRequest> requests = parse_requests(exchange, round);
        c.require(!requests.empty(), "round " + std::to_string(round) + " emitted no requests");
        json results = json::array();
        for (const ExchangeRequest& r : requests) {
            const VectorXd x{{r.x[0], r.x[1]}};
            const double p =
                r.fidelity == Fidelity::Low ? lf_probability(x) : hf_probability_linear(x);
            results.push_back({{"query_id", r.query_id}, {"y", rng.bernoulli(p) ? 1 : 0}});
        }
        write_text_file(results_path(exchange, round), results.dump());

        const int merge = run_cli("ingest --exchange-dir " + exchange + " --round " +
                                  std::to_string(round) + " --dataset " + dataset_path);
        c.require(merge == 0,
                  "ingest round " + std::to_string(round) + " exited " + std::to_string(merge));
        if (!c.ok) return c;

        const DatasetFile merged = load_dataset(dataset_path);
        const std::size_t size = merged.lf.size() + merged.hf.size();
        c.require(size == prev_size + requests.size(),
                  "round " + std::to_string(round) + ": dataset did not grow by the request count");
        prev_size = size;

        // the trained model document renders a valid prediction grid
        const std::string model_path = exchange + "/round_" + std::to_string(round) + ".model.json";
        const std::string grid = (dir / ("grid_" + std::to_string(round))).string();
        const int gcode = run_cli("predict-grid --model " + model_path +
                                  " --resolution 16 --fidelity H --out " + grid);
        c.require(gcode == 0, "predict-grid exited " + std::to_string(gcode));
        if (!c.ok) return c;
        const std::string pgm = read_text_file(grid + ".pgm");
        c.require(pgm.rfind("P5\n16 16\n255\n", 0) == 0, "bad PGM header");
        c.require(pgm.size() == std::string("P5\n16 16\n255\n").size() + 16 * 16,
                  "bad PGM payload");
        std::istringstream is(read_text_file(grid + ".csv"));
        std::string line;
        std::getline(is, line);
        int rows = 0;
        while (std::getline(is, line)) {
            const double p = std::stod(line.substr(line.rfind(',') + 1));
            c.require(p > 0.0 && p < 1.0, "grid probability out of (0,1)");
            ++rows;
        }
        c.require(rows == 16 * 16, "grid CSV row count " + std::to_string(rows));
    }
    return c;
}

struct Criterion {
    int id;
    const char* name;
    double budget_seconds;
    std::function<Check()> fn;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria = {
        {1, "closed-form oracle suite", 10.0, criterion_1},
        {2, "gradient verification", 60.0, criterion_2},
        {3, "joint posterior vs Monte-Carlo oracle", 300.0, criterion_3},
        {4, "greedy near-optimality", 300.0, criterion_4},
        {5, "saturation behavior", 60.0, criterion_5},
        {6, "toy-problem comparison", 7200.0, criterion_6},
        {7, "budget contract", 7200.0, criterion_7},
        {8, "reproducibility of the linear BPMI arm", 7200.0, criterion_8},
        {9, "external-oracle workflow", 600.0, criterion_9},
    };

    const int selected = argc > 1 ? std::atoi(argv[1]) : 0;
    int failures = 0;
    for (const Criterion& crit : criteria) {
        if (selected != 0 && crit.id != selected) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Check result;
        try {
            result = crit.fn();
        } catch (const std::exception& e) {
            result.ok = false;
            result.detail = std::string("exception: ") + e.what();
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (secs > crit.budget_seconds) {
            result.ok = false;
            result.detail = "runtime " + std::to_string(secs) + "s exceeds " +
                            std::to_string(crit.budget_seconds) + "s";
        }
        std::printf("%s criterion %d (%s) [%.1fs]%s%s\n", result.ok ? "PASS" : "FAIL", crit.id,
                    crit.name, secs, result.ok ? "" : ": ", result.detail.c_str());
        std::fflush(stdout);
        failures += result.ok ? 0 : 1;
    }
    return failures == 0 ? 0 : 1;
}
