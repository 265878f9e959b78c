#ifndef BFAL_ACQUISITION_HPP
#define BFAL_ACQUISITION_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bfal/errors.hpp"
#include "bfal/math.hpp"
#include "bfal/model.hpp"
#include "bfal/rng.hpp"

namespace bfal {

enum class Strategy { BPMI, LFMI, MAXUNC, RANDOM };

inline std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::BPMI: return "BPMI";
        case Strategy::LFMI: return "LFMI";
        case Strategy::MAXUNC: return "MAXUNC";
        case Strategy::RANDOM: return "RANDOM";
    }
    return "?";
}

inline Strategy strategy_from_name(const std::string& name) {
    if (name == "BPMI") return Strategy::BPMI;
    if (name == "LFMI") return Strategy::LFMI;
    if (name == "MAXUNC") return Strategy::MAXUNC;
    if (name == "RANDOM") return Strategy::RANDOM;
    throw std::invalid_argument("unknown strategy: " + name);
}

struct AcquisitionConfig {
    double cost_lf = 0.1;
    double cost_hf = 1.0;
    double budget = 100.0;
    int candidate_count = 256;   // per fidelity
    int test_point_count = 100;  // N', size of X'
    int n_max = 13;
    double jitter_scale = 0.01;  // in units of the domain side
    double beta = 0.5;           // max-uncertainty weighting
    std::uint64_t seed = 0;

    double cost(Fidelity f) const { return f == Fidelity::Low ? cost_lf : cost_hf; }

    void validate() const {
        if (!(cost_lf > 0.0) || !(cost_hf > 0.0)) {
            throw std::invalid_argument("AcquisitionConfig: costs must be > 0");
        }
        if (!(budget > 0.0)) throw std::invalid_argument("AcquisitionConfig: budget must be > 0");
        if (candidate_count < 1) throw std::invalid_argument("AcquisitionConfig: candidate_count must be >= 1");
        if (test_point_count < 1) throw std::invalid_argument("AcquisitionConfig: test_point_count must be >= 1");
        if (n_max < 1) throw std::invalid_argument("AcquisitionConfig: n_max must be >= 1");
        if (jitter_scale < 0.0) throw std::invalid_argument("AcquisitionConfig: jitter_scale must be >= 0");
        if (beta < 0.0 || beta > 1.0) throw std::invalid_argument("AcquisitionConfig: beta must be in [0,1]");
    }
};

struct Query {
    VectorXd x;
    Fidelity fidelity = Fidelity::Low;
    int repeats = 1;
};

struct ExpandedQuery {
    VectorXd x;  // jitter already applied (first copy of each query is exact)
    Fidelity fidelity = Fidelity::Low;
    int parent = 0;  // index into QueryBatch::queries
};

struct QueryBatch {
    std::vector<Query> queries;
    double total_cost = 0.0;
    std::vector<ExpandedQuery> expanded;  // one entry per repeat
};

// ---------------------------------------------------------------------------
// Scores
// ---------------------------------------------------------------------------

// I(queries; test block) on an already assembled joint.
inline double mi_of_joint(const GaussianJoint& joint, int n_query) {
    const int n = static_cast<int>(joint.dim());
    if (n_query < 1 || n_query >= n) {
        throw std::invalid_argument("mi_of_joint: query block must be a proper nonempty prefix");
    }
    std::vector<int> a(static_cast<std::size_t>(n_query));
    std::vector<int> b(static_cast<std::size_t>(n - n_query));
    for (int i = 0; i < n_query; ++i) a[static_cast<std::size_t>(i)] = i;
    for (int i = n_query; i < n; ++i) b[static_cast<std::size_t>(i - n_query)] = i;
    return gaussian_mi(joint, a, b);
}

// Floor applied to the linearized probability-space covariance AFTER the
// D-scaling. The scaling alone cancels out of the mutual information exactly,
// so this floor is what suppresses saturated points (phi(mu) ~ 0): their
// scaled variance sinks to the floor while boundary points stay far above it.
// The absolute part keeps fully saturated joints near zero score; the part
// relative to the largest scaled variance sets the saturation onset
// independently of the latent scale. Both are small enough that a joint with
// all means at zero scores within 1e-6 of the latent-space MI.
constexpr double kBpmiAbsoluteFloor = 1e-9;
constexpr double kBpmiRelativeFloor = 1e-7;

// Linearize the link around the latent mean: mean Phi(mu), covariance
// D Sigma D^T + floor I with D = diag(phi(mu)).
inline GaussianJoint bpmi_transform(const GaussianJoint& latent) {
    GaussianJoint out;
    const Eigen::Index n = latent.dim();
    out.mean.resize(n);
    VectorXd d(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        out.mean[i] = normal_cdf(latent.mean[i]);
        d[i] = normal_pdf(latent.mean[i]);
    }
    out.cov = d.asDiagonal() * latent.cov * d.asDiagonal();
    const double max_diag = n > 0 ? out.cov.diagonal().maxCoeff() : 0.0;
    out.cov.diagonal().array() += kBpmiAbsoluteFloor + kBpmiRelativeFloor * max_diag;
    return out;
}

inline double lfmi_score(const BfgpcModel& model, const std::vector<QueryPoint>& batch_queries,
                         const std::vector<VectorXd>& test_points) {
    if (batch_queries.empty() || test_points.empty()) {
        throw std::invalid_argument("lfmi_score: queries and test points must be nonempty");
    }
    const GaussianJoint joint = joint_latent_posterior(model, batch_queries, test_points);
    return mi_of_joint(joint, static_cast<int>(batch_queries.size()));
}

inline double bpmi_score(const BfgpcModel& model, const std::vector<QueryPoint>& batch_queries,
                         const std::vector<VectorXd>& test_points) {
    if (batch_queries.empty() || test_points.empty()) {
        throw std::invalid_argument("bpmi_score: queries and test points must be nonempty");
    }
    const GaussianJoint joint = joint_latent_posterior(model, batch_queries, test_points);
    return mi_of_joint(bpmi_transform(joint), static_cast<int>(batch_queries.size()));
}

// beta * epistemic + (1 - beta) * aleatoric, with the epistemic term the
// delta-method variance of the class probability and the aleatoric term the
// entropy (nats) of the marginalized prediction.
inline double max_uncertainty_from_moments(double latent_mean, double latent_var, double beta) {
    const double dp = normal_pdf(latent_mean);
    const double epistemic = dp * dp * latent_var;
    const double aleatoric = binary_entropy(marginal_bernoulli_prob(latent_mean, latent_var));
    return beta * epistemic + (1.0 - beta) * aleatoric;
}

inline double max_uncertainty_score(const BfgpcModel& model, const VectorXd& x, Fidelity fidelity,
                                    double beta) {
    MatrixXd pt(1, x.size());
    pt.row(0) = x.transpose();
    VectorXd mean, var;
    predict_latent(model, pt, fidelity, mean, var);
    return max_uncertainty_from_moments(mean[0], var[0], beta);
}

// ---------------------------------------------------------------------------
// Repeats and jitter
// ---------------------------------------------------------------------------

inline int repeats_for(double p_pred, int n_max) {
    if (!(p_pred >= 0.0 && p_pred <= 1.0)) {
        throw std::invalid_argument("repeats_for: p_pred must be in [0,1]");
    }
    if (n_max < 1) throw std::invalid_argument("repeats_for: n_max must be >= 1");
    const double raw = (static_cast<double>(n_max) - 1.0) / 4.0 * (p_pred * (1.0 - p_pred) + 1.0);
    const int rounded = static_cast<int>(std::lround(raw));  // half away from zero
    return std::clamp(rounded, 1, n_max);
}

inline VectorXd apply_jitter(const VectorXd& x, double jitter_scale, const VectorXd& domain_lo,
                             const VectorXd& domain_hi, Rng& rng) {
    VectorXd out(x.size());
    for (Eigen::Index d = 0; d < x.size(); ++d) {
        const double side = domain_hi[d] - domain_lo[d];
        const double noise = rng.uniform(-jitter_scale * side, jitter_scale * side);
        out[d] = std::clamp(x[d] + noise, domain_lo[d], domain_hi[d]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Greedy batch construction
// ---------------------------------------------------------------------------

struct CandidatePools {
    std::vector<VectorXd> lf;
    std::vector<VectorXd> hf;
    std::vector<VectorXd> test_points;  // X'
};

inline std::vector<VectorXd> uniform_points(int count, const VectorXd& lo, const VectorXd& hi,
                                            Rng rng) {
    std::vector<VectorXd> pts(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        VectorXd x(lo.size());
        for (Eigen::Index d = 0; d < lo.size(); ++d) x[d] = rng.uniform(lo[d], hi[d]);
        pts[static_cast<std::size_t>(i)] = std::move(x);
    }
    return pts;
}

inline CandidatePools make_candidate_pools(const BfgpcModel& model, const AcquisitionConfig& config,
                                           const Rng& rng) {
    CandidatePools pools;
    pools.lf = uniform_points(config.candidate_count, model.domain_lo, model.domain_hi,
                              rng.stream(stream_tag::kCandidatePool, 0));
    pools.hf = uniform_points(config.candidate_count, model.domain_lo, model.domain_hi,
                              rng.stream(stream_tag::kCandidatePool, 1));
    pools.test_points = uniform_points(config.test_point_count, model.domain_lo, model.domain_hi,
                                       rng.stream(stream_tag::kTestPoints));
    return pools;
}

namespace detail {

// Growable Cholesky factor of a principal submatrix of a fixed covariance.
class GrowingChol {
public:
    explicit GrowingChol(const MatrixXd* cov) : cov_(cov) {}

    void append(int idx) {
        const Eigen::Index k = static_cast<Eigen::Index>(indices_.size());
        VectorXd cross(k);
        for (Eigen::Index j = 0; j < k; ++j) cross[j] = (*cov_)(idx, indices_[static_cast<std::size_t>(j)]);
        lower_.conservativeResizeLike(MatrixXd::Zero(k + 1, k + 1));
        if (k > 0) {
            lower_.row(k).head(k) =
                lower_.topLeftCorner(k, k).triangularView<Eigen::Lower>().solve(cross).transpose();
        }
        const double d2 = (*cov_)(idx, idx) - lower_.row(k).head(k).squaredNorm();
        lower_(k, k) = std::sqrt(std::max(d2, 1e-300));
        indices_.push_back(idx);
    }

    // Var(q | current set)
    double conditional_variance(int idx) const {
        const Eigen::Index k = static_cast<Eigen::Index>(indices_.size());
        if (k == 0) return (*cov_)(idx, idx);
        VectorXd cross(k);
        for (Eigen::Index j = 0; j < k; ++j) cross[j] = (*cov_)(idx, indices_[static_cast<std::size_t>(j)]);
        const VectorXd l = lower_.topLeftCorner(k, k).triangularView<Eigen::Lower>().solve(cross);
        return (*cov_)(idx, idx) - l.squaredNorm();
    }

private:
    const MatrixXd* cov_;
    MatrixXd lower_;
    std::vector<int> indices_;
};

struct PoolEntry {
    VectorXd x;
    Fidelity fidelity;
    double p_pred;      // marginalized class probability at the query fidelity
    int joint_index;    // row in the pool-wide joint (MI strategies)
    double unc_score;   // max-uncertainty score
};

}  // namespace detail

// Greedy per-unit-cost batch selection. The budget-overrun rule includes the
// first proposal whose charge pushes total cost past the budget and then
// closes the batch.
inline QueryBatch greedy_batch_with_pools(const BfgpcModel& model, Strategy strategy,
                                          const AcquisitionConfig& config,
                                          const CandidatePools& pools, const Rng& rng) {
    config.validate();
    if (pools.lf.empty() && pools.hf.empty()) {
        throw std::invalid_argument("greedy_batch: empty candidate pool");
    }
    if ((strategy == Strategy::BPMI || strategy == Strategy::LFMI) && pools.test_points.empty()) {
        throw std::invalid_argument("greedy_batch: MI strategies need test points");
    }

    Rng jitter_rng = rng.stream(stream_tag::kJitter);
    Rng pick_rng = rng.stream(stream_tag::kRandomPick);

    // Precompute class probabilities (for repeats) per fidelity in one pass.
    std::vector<detail::PoolEntry> entries;
    entries.reserve(pools.lf.size() + pools.hf.size());
    auto add_entries = [&](const std::vector<VectorXd>& pts, Fidelity fid) {
        if (pts.empty()) return;
        MatrixXd m(static_cast<Eigen::Index>(pts.size()), model.input_dim);
        for (std::size_t i = 0; i < pts.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
        VectorXd mean, var;
        predict_latent(model, m, fid, mean, var);
        for (std::size_t i = 0; i < pts.size(); ++i) {
            detail::PoolEntry e;
            e.x = pts[i];
            e.fidelity = fid;
            const Eigen::Index ei = static_cast<Eigen::Index>(i);
            e.p_pred = marginal_bernoulli_prob(mean[ei], var[ei]);
            e.unc_score = max_uncertainty_from_moments(mean[ei], var[ei], config.beta);
            e.joint_index = -1;
            entries.push_back(std::move(e));
        }
    };
    add_entries(pools.lf, Fidelity::Low);
    add_entries(pools.hf, Fidelity::High);

    QueryBatch batch;
    std::vector<char> taken(entries.size(), 0);

    auto select = [&](std::size_t pool_idx) -> bool {
        detail::PoolEntry& e = entries[pool_idx];
        taken[pool_idx] = 1;
        const int repeats =
            strategy == Strategy::RANDOM ? 1 : repeats_for(e.p_pred, config.n_max);
        const double charge = repeats * config.cost(e.fidelity);
        Query q;
        q.x = e.x;
        q.fidelity = e.fidelity;
        q.repeats = repeats;
        const int parent = static_cast<int>(batch.queries.size());
        batch.queries.push_back(q);
        batch.expanded.push_back({e.x, e.fidelity, parent});
        for (int r = 1; r < repeats; ++r) {
            batch.expanded.push_back(
                {apply_jitter(e.x, config.jitter_scale, model.domain_lo, model.domain_hi, jitter_rng),
                 e.fidelity, parent});
        }
        batch.total_cost += charge;
        // overrun closes the batch; the epsilon absorbs binary-decimal dust
        // in sums like 0.1 + 0.1 + 0.1 against a budget of 0.3
        return batch.total_cost > config.budget * (1.0 + 1e-9);
    };

    if (strategy == Strategy::RANDOM || strategy == Strategy::MAXUNC) {
        Fidelity turn = Fidelity::Low;
        while (true) {
            std::vector<std::size_t> open[2];
            for (std::size_t i = 0; i < entries.size(); ++i) {
                if (!taken[i]) open[entries[i].fidelity == Fidelity::Low ? 0 : 1].push_back(i);
            }
            if (open[0].empty() && open[1].empty()) break;  // pool exhausted
            std::vector<std::size_t>& avail =
                open[turn == Fidelity::Low ? 0 : 1].empty()
                    ? open[turn == Fidelity::Low ? 1 : 0]
                    : open[turn == Fidelity::Low ? 0 : 1];
            std::size_t chosen;
            if (strategy == Strategy::RANDOM) {
                chosen = avail[static_cast<std::size_t>(pick_rng.below(avail.size()))];
            } else {
                chosen = avail[0];
                for (std::size_t i : avail) {
                    if (entries[i].unc_score > entries[chosen].unc_score) chosen = i;
                }
            }
            const bool over = select(chosen);
            turn = turn == Fidelity::Low ? Fidelity::High : Fidelity::Low;
            if (over) break;
        }
        return batch;
    }

    // MI strategies: one joint posterior over all candidates plus X', then
    // incremental greedy on conditional variances. The gain of adding q to
    // the batch Q is  1/2 [ log Var(q|Q) - log Var(q|Q, X') ].
    std::vector<QueryPoint> all_queries;
    all_queries.reserve(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
        entries[i].joint_index = static_cast<int>(i);
        all_queries.push_back({entries[i].x, entries[i].fidelity});
    }
    GaussianJoint joint = joint_latent_posterior(model, all_queries, pools.test_points);
    if (strategy == Strategy::BPMI) {
        joint = bpmi_transform(joint);
    }
    // One stabilization for the whole pool keeps every subset consistent.
    const CholeskyFactor full = stabilized_cholesky(joint.cov);
    MatrixXd cov = joint.cov;
    cov.diagonal().array() += full.nugget_used;

    detail::GrowingChol chol_q(&cov);        // over the selected batch
    detail::GrowingChol chol_qt(&cov);       // over X' plus the selected batch
    const int n_entries = static_cast<int>(entries.size());
    for (int t = 0; t < static_cast<int>(pools.test_points.size()); ++t) {
        chol_qt.append(n_entries + t);
    }

    while (true) {
        double best_rate = -std::numeric_limits<double>::infinity();
        int best = -1;
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (taken[i]) continue;
            const int idx = entries[i].joint_index;
            const double v_given_q = std::max(chol_q.conditional_variance(idx), 1e-300);
            const double v_given_qt = std::max(chol_qt.conditional_variance(idx), 1e-300);
            const double gain = 0.5 * (std::log(v_given_q) - std::log(v_given_qt));
            const double rate = gain / config.cost(entries[i].fidelity);
            if (rate > best_rate) {
                best_rate = rate;
                best = static_cast<int>(i);
            }
        }
        if (best < 0) break;  // pool exhausted
        const int idx = entries[static_cast<std::size_t>(best)].joint_index;
        chol_q.append(idx);
        chol_qt.append(idx);
        if (select(static_cast<std::size_t>(best))) break;
    }
    return batch;
}

inline QueryBatch greedy_batch(const BfgpcModel& model, Strategy strategy,
                               const AcquisitionConfig& config, const Rng& rng) {
    config.validate();
    return greedy_batch_with_pools(model, strategy, config,
                                   make_candidate_pools(model, config, rng), rng);
}

}  // namespace bfal

#endif  // BFAL_ACQUISITION_HPP
