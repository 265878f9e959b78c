#ifndef BFAL_MODEL_HPP
#define BFAL_MODEL_HPP

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "bfal/errors.hpp"
#include "bfal/math.hpp"
#include "bfal/rng.hpp"

namespace bfal {

enum class Fidelity { Low, High };

inline char fidelity_code(Fidelity f) { return f == Fidelity::Low ? 'L' : 'H'; }

// Relative diagonal jitter folded into the prior covariance at the inducing
// points; part of the model definition so that training, prediction and the
// KL term all see the same Kzz.
constexpr double kInducingJitter = 1e-8;

// ---------------------------------------------------------------------------
// Model types
// ---------------------------------------------------------------------------

struct LatentGpConfig {
    KernelParams kernel;
    double mean_const = 0.0;
    MatrixXd inducing;  // M x d
};

struct VariationalState {
    VectorXd mean;  // m_u, length M
    MatrixXd chol;  // lower Cholesky factor of S_u, strictly positive diagonal
};

struct LatentGp {
    LatentGpConfig config;
    VariationalState var;

    Eigen::Index inducing_count() const { return config.inducing.rows(); }
};

struct BfgpcModel {
    LatentGp lf;     // f_L
    LatentGp delta;  // discrepancy
    double rho = 1.0;
    int input_dim = 0;
    VectorXd domain_lo;
    VectorXd domain_hi;

    bool in_domain(const VectorXd& x) const {
        if (x.size() != input_dim) return false;
        for (int d = 0; d < input_dim; ++d) {
            if (x[d] < domain_lo[d] || x[d] > domain_hi[d]) return false;
        }
        return true;
    }

    void require_in_domain(const MatrixXd& points) const {
        for (Eigen::Index i = 0; i < points.rows(); ++i) {
            if (!in_domain(points.row(i).transpose())) {
                throw std::invalid_argument("BfgpcModel: point out of domain");
            }
        }
    }
};

struct LabeledDataset {
    MatrixXd lf_x;  // N_L x d
    Eigen::VectorXi lf_y;
    MatrixXd hf_x;  // N_H x d
    Eigen::VectorXi hf_y;

    Eigen::Index lf_count() const { return lf_x.rows(); }
    Eigen::Index hf_count() const { return hf_x.rows(); }
    bool empty() const { return lf_count() == 0 && hf_count() == 0; }

    void append(const VectorXd& x, int y, Fidelity fid) {
        MatrixXd& xs = fid == Fidelity::Low ? lf_x : hf_x;
        Eigen::VectorXi& ys = fid == Fidelity::Low ? lf_y : hf_y;
        if (xs.rows() == 0) xs.resize(0, x.size());
        xs.conservativeResize(xs.rows() + 1, Eigen::NoChange);
        xs.row(xs.rows() - 1) = x.transpose();
        ys.conservativeResize(ys.size() + 1);
        ys[ys.size() - 1] = y;
    }
};

// ---------------------------------------------------------------------------
// Kernel matrices
// ---------------------------------------------------------------------------

inline MatrixXd squared_distances(const MatrixXd& a, const MatrixXd& b) {
    MatrixXd d2(a.rows(), b.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < b.rows(); ++j) {
            d2(i, j) = (a.row(i) - b.row(j)).squaredNorm();
        }
    }
    return d2;
}

inline MatrixXd kernel_matrix(const MatrixXd& a, const MatrixXd& b, const KernelParams& p) {
    const double inv = -1.0 / (2.0 * p.lengthscale * p.lengthscale);
    return p.output_scale * (squared_distances(a, b) * inv).array().exp().matrix();
}

// Prior covariance at the inducing points, including the jitter term.
inline MatrixXd inducing_gram(const LatentGpConfig& cfg) {
    MatrixXd kzz = kernel_matrix(cfg.inducing, cfg.inducing, cfg.kernel);
    kzz.diagonal().array() += kInducingJitter * cfg.kernel.output_scale;
    return kzz;
}

// ---------------------------------------------------------------------------
// Sparse variational predictive equations (unwhitened parameterization)
// ---------------------------------------------------------------------------

// Precomputed solve state for one latent GP posterior.
class LatentPosterior {
public:
    explicit LatentPosterior(const LatentGp& gp) : gp_(&gp) {
        const MatrixXd kzz = inducing_gram(gp.config);
        llt_.compute(kzz);
        if (llt_.info() != Eigen::Success) {
            throw NumericalError("LatentPosterior: inducing Gram matrix is not positive definite");
        }
        const Eigen::Index m = gp.inducing_count();
        b_ = llt_.solve(gp.var.mean - VectorXd::Constant(m, gp.config.mean_const));
    }

    // Marginal predictive moments at the rows of x.
    void marginals(const MatrixXd& x, VectorXd& mean, VectorXd& var) const {
        const MatrixXd kxz = kernel_matrix(x, gp_->config.inducing, gp_->config.kernel);
        const MatrixXd a = llt_.solve(kxz.transpose());  // M x n
        mean = VectorXd::Constant(x.rows(), gp_->config.mean_const) + kxz * b_;
        const MatrixXd u = gp_->var.chol.transpose() * a;  // M x n
        var.resize(x.rows());
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const double prior = gp_->config.kernel.output_scale;
            const double explained = kxz.row(i).dot(a.col(i));
            const double v = prior - explained + u.col(i).squaredNorm();
            var[i] = std::max(v, 0.0);
        }
    }

    // Full predictive covariance over the rows of x (plus the mean).
    void joint(const MatrixXd& x, VectorXd& mean, MatrixXd& cov) const {
        const MatrixXd kxz = kernel_matrix(x, gp_->config.inducing, gp_->config.kernel);
        const MatrixXd a = llt_.solve(kxz.transpose());  // M x n
        mean = VectorXd::Constant(x.rows(), gp_->config.mean_const) + kxz * b_;
        const MatrixXd u = gp_->var.chol.transpose() * a;  // M x n
        cov = kernel_matrix(x, x, gp_->config.kernel) - kxz * a + u.transpose() * u;
        cov = 0.5 * (cov + cov.transpose()).eval();
    }

private:
    const LatentGp* gp_;
    Eigen::LLT<MatrixXd> llt_;
    VectorXd b_;  // Kzz^{-1} (m_u - c 1)
};

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

namespace detail {

// Latin-hypercube style stratified uniform sample of `count` points.
inline MatrixXd stratified_uniform(int count, const VectorXd& lo, const VectorXd& hi, Rng rng) {
    const int dim = static_cast<int>(lo.size());
    MatrixXd points(count, dim);
    std::vector<int> perm(static_cast<std::size_t>(count));
    for (int d = 0; d < dim; ++d) {
        for (int i = 0; i < count; ++i) perm[static_cast<std::size_t>(i)] = i;
        for (int i = count - 1; i > 0; --i) {
            std::swap(perm[static_cast<std::size_t>(i)],
                      perm[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(i + 1)))]);
        }
        const double width = (hi[d] - lo[d]) / count;
        for (int i = 0; i < count; ++i) {
            points(i, d) = lo[d] + width * (perm[static_cast<std::size_t>(i)] + rng.uniform());
        }
    }
    return points;
}

}  // namespace detail

inline BfgpcModel init_model(int input_dim, const VectorXd& domain_lo, const VectorXd& domain_hi,
                             int lf_inducing_count, int delta_inducing_count, std::uint64_t seed) {
    if (input_dim < 1 || domain_lo.size() != input_dim || domain_hi.size() != input_dim) {
        throw std::invalid_argument("init_model: invalid domain dimensions");
    }
    for (int d = 0; d < input_dim; ++d) {
        if (!(domain_hi[d] > domain_lo[d])) {
            throw std::invalid_argument("init_model: domain bounds must satisfy lo < hi");
        }
    }
    if (lf_inducing_count < 1 || delta_inducing_count < 1) {
        throw std::invalid_argument("init_model: inducing counts must be >= 1");
    }

    const double mean_side = (domain_hi - domain_lo).mean();
    const Rng base(seed);

    auto make_latent = [&](int count, std::uint64_t tag) {
        LatentGp gp;
        gp.config.kernel = KernelParams{1.0, 0.5 * mean_side};
        gp.config.mean_const = 0.0;
        gp.config.inducing =
            detail::stratified_uniform(count, domain_lo, domain_hi, base.stream(stream_tag::kInducing, tag));
        gp.var.mean = VectorXd::Zero(count);
        // variational covariance starts at 0.01 x the prior at the inducing
        // points; an isotropic start is wildly overdispersed along the small
        // eigendirections of a smooth RBF Gram matrix and its KL never
        // recovers under first-order updates
        Eigen::LLT<MatrixXd> llt(inducing_gram(gp.config));
        if (llt.info() != Eigen::Success) {
            throw NumericalError("init_model: inducing Gram matrix is not positive definite");
        }
        gp.var.chol = 0.1 * MatrixXd(llt.matrixL());
        return gp;
    };

    BfgpcModel model;
    model.input_dim = input_dim;
    model.domain_lo = domain_lo;
    model.domain_hi = domain_hi;
    model.lf = make_latent(lf_inducing_count, 0);
    model.delta = make_latent(delta_inducing_count, 1);
    model.rho = 1.0;
    return model;
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

inline void predict_latent(const BfgpcModel& model, const MatrixXd& points, Fidelity fidelity,
                           VectorXd& mean, VectorXd& var) {
    model.require_in_domain(points);
    const LatentPosterior lf_post(model.lf);
    if (fidelity == Fidelity::Low) {
        lf_post.marginals(points, mean, var);
        return;
    }
    VectorXd lf_mean, lf_var, d_mean, d_var;
    lf_post.marginals(points, lf_mean, lf_var);
    const LatentPosterior delta_post(model.delta);
    delta_post.marginals(points, d_mean, d_var);
    mean = model.rho * lf_mean + d_mean;
    var = model.rho * model.rho * lf_var + d_var;
}

inline VectorXd predict_proba(const BfgpcModel& model, const MatrixXd& points, Fidelity fidelity) {
    VectorXd mean, var;
    predict_latent(model, points, fidelity, mean, var);
    VectorXd p(mean.size());
    for (Eigen::Index i = 0; i < mean.size(); ++i) {
        p[i] = marginal_bernoulli_prob(mean[i], var[i]);
    }
    return p;
}

// ---------------------------------------------------------------------------
// Joint latent posterior over a batch of queries plus high-fidelity test points
// ---------------------------------------------------------------------------

struct QueryPoint {
    VectorXd x;
    Fidelity fidelity;
};

// Builds the joint Gaussian over [queries..., test_points...]. The base vector
// stacks q(f_L) over the unique f_L evaluation locations and q(delta) over the
// unique delta locations (block-diagonal by independence); each output row is
// f_L(x) for an L query and rho f_L(x) + delta(x) for H queries / test points.
inline GaussianJoint joint_latent_posterior(const BfgpcModel& model,
                                            const std::vector<QueryPoint>& queries,
                                            const std::vector<VectorXd>& test_points) {
    if (queries.empty() && test_points.empty()) {
        throw std::invalid_argument("joint_latent_posterior: no evaluation points");
    }

    std::vector<VectorXd> lf_locs;
    std::vector<VectorXd> delta_locs;
    auto intern = [](std::vector<VectorXd>& locs, const VectorXd& x) -> int {
        for (std::size_t i = 0; i < locs.size(); ++i) {
            if (locs[i].size() == x.size() && (locs[i].array() == x.array()).all()) {
                return static_cast<int>(i);
            }
        }
        locs.push_back(x);
        return static_cast<int>(locs.size()) - 1;
    };

    struct OutputRow {
        double lf_coeff = 0.0;  // 1 for L rows, rho for H rows
        int lf_index = -1;
        int delta_index = -1;  // >= 0 only for H rows
    };
    std::vector<OutputRow> rows;
    rows.reserve(queries.size() + test_points.size());

    auto add_point = [&](const VectorXd& x, Fidelity fid) {
        if (!model.in_domain(x)) {
            throw std::invalid_argument("joint_latent_posterior: point out of domain");
        }
        OutputRow row;
        if (fid == Fidelity::Low) {
            row.lf_coeff = 1.0;
            row.lf_index = intern(lf_locs, x);
        } else {
            row.lf_coeff = model.rho;
            row.lf_index = intern(lf_locs, x);
            row.delta_index = intern(delta_locs, x);
        }
        rows.push_back(row);
    };

    for (const QueryPoint& q : queries) add_point(q.x, q.fidelity);
    for (const VectorXd& x : test_points) add_point(x, Fidelity::High);

    auto to_matrix = [&](const std::vector<VectorXd>& locs) {
        MatrixXd m(locs.size(), model.input_dim);
        for (std::size_t i = 0; i < locs.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = locs[i].transpose();
        return m;
    };

    VectorXd lf_mean, delta_mean;
    MatrixXd lf_cov, delta_cov;
    if (!lf_locs.empty()) {
        LatentPosterior(model.lf).joint(to_matrix(lf_locs), lf_mean, lf_cov);
    }
    if (!delta_locs.empty()) {
        LatentPosterior(model.delta).joint(to_matrix(delta_locs), delta_mean, delta_cov);
    }

    const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
    GaussianJoint out;
    out.mean.resize(n);
    out.cov.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const OutputRow& ri = rows[static_cast<std::size_t>(i)];
        double mu = ri.lf_coeff * lf_mean[ri.lf_index];
        if (ri.delta_index >= 0) mu += delta_mean[ri.delta_index];
        out.mean[i] = mu;
        for (Eigen::Index j = 0; j <= i; ++j) {
            const OutputRow& rj = rows[static_cast<std::size_t>(j)];
            double cij = ri.lf_coeff * rj.lf_coeff * lf_cov(ri.lf_index, rj.lf_index);
            if (ri.delta_index >= 0 && rj.delta_index >= 0) {
                cij += delta_cov(ri.delta_index, rj.delta_index);
            }
            out.cov(i, j) = cij;
            out.cov(j, i) = cij;
        }
    }
    return out;
}

}  // namespace bfal

#endif  // BFAL_MODEL_HPP
