#ifndef BFAL_TRAIN_HPP
#define BFAL_TRAIN_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "bfal/errors.hpp"
#include "bfal/math.hpp"
#include "bfal/model.hpp"
#include "bfal/rng.hpp"

namespace bfal {

struct TrainingConfig {
    double learning_rate = 1e-3;
    int steps = 500;
    int restarts = 3;
    double reg_lambda = 1e-2;
    // Prior centers for {log s2_L, log ell_L, log s2_delta, log ell_delta}.
    // Empty means "center on the model's kernel parameters at train entry".
    std::vector<double> theta_prior;
    int gh_order = kDefaultGhOrder;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainingConfig: learning_rate must be > 0");
        if (steps < 1) throw std::invalid_argument("TrainingConfig: steps must be >= 1");
        if (restarts < 1) throw std::invalid_argument("TrainingConfig: restarts must be >= 1");
        if (reg_lambda < 0.0) throw std::invalid_argument("TrainingConfig: reg_lambda must be >= 0");
        if (gh_order < 1) throw std::invalid_argument("TrainingConfig: gh_order must be >= 1");
        if (!theta_prior.empty() && theta_prior.size() != 4) {
            throw std::invalid_argument("TrainingConfig: theta_prior must have 4 entries");
        }
    }
};

inline std::array<double, 4> resolve_theta_prior(const TrainingConfig& cfg, const BfgpcModel& model) {
    if (!cfg.theta_prior.empty()) {
        return {cfg.theta_prior[0], cfg.theta_prior[1], cfg.theta_prior[2], cfg.theta_prior[3]};
    }
    return {std::log(model.lf.config.kernel.output_scale), std::log(model.lf.config.kernel.lengthscale),
            std::log(model.delta.config.kernel.output_scale),
            std::log(model.delta.config.kernel.lengthscale)};
}

// ---------------------------------------------------------------------------
// Parameter vector layout
//
// The stored model keeps the unwhitened variational state (m_u, chol S_u),
// but the trainable coordinates are whitened: u = c 1 + C v with
// C = chol(Kzz), v ~ N(m_w, L_w L_w^T). The map is m_u = c 1 + C m_w and
// L_u = C L_w. Whitening keeps the optimization conditioned independently of
// the spectrum of Kzz, which for a smooth RBF prior spans many orders of
// magnitude.
//
// Per latent: [m_w (M)] [off-diagonal tril of L_w, row-major] [log diag of
// L_w (M)] [mean_const] [log output_scale] [log lengthscale]; rho sits last.
// The diagonal is optimized in log space so the Cholesky invariant survives
// any gradient step.
// ---------------------------------------------------------------------------

namespace detail {

struct LatentLayout {
    int offset = 0;
    int m = 0;  // inducing count

    int off_count() const { return m * (m - 1) / 2; }
    int size() const { return m + off_count() + m + 3; }
    int mean_at() const { return offset; }
    int off_at() const { return offset + m; }
    int logdiag_at() const { return offset + m + off_count(); }
    int const_at() const { return offset + 2 * m + off_count(); }
    int log_scale_at() const { return const_at() + 1; }
    int log_length_at() const { return const_at() + 2; }
};

struct ParamLayout {
    LatentLayout lf;
    LatentLayout delta;
    int rho_at = 0;
    int size = 0;

    static ParamLayout of(const BfgpcModel& model) {
        ParamLayout lay;
        lay.lf.m = static_cast<int>(model.lf.inducing_count());
        lay.lf.offset = 0;
        lay.delta.m = static_cast<int>(model.delta.inducing_count());
        lay.delta.offset = lay.lf.size();
        lay.rho_at = lay.delta.offset + lay.delta.size();
        lay.size = lay.rho_at + 1;
        return lay;
    }
};

inline MatrixXd inducing_chol(const LatentGpConfig& cfg) {
    Eigen::LLT<MatrixXd> llt(inducing_gram(cfg));
    if (llt.info() != Eigen::Success) {
        throw NumericalError("inducing_chol: inducing Gram matrix is not positive definite");
    }
    return MatrixXd(llt.matrixL());
}

inline void pack_latent(const LatentGp& gp, const LatentLayout& lay, VectorXd& theta) {
    const MatrixXd c = inducing_chol(gp.config);
    const auto tri = c.triangularView<Eigen::Lower>();
    const VectorXd m_w =
        tri.solve(gp.var.mean - VectorXd::Constant(lay.m, gp.config.mean_const));
    const MatrixXd l_w = tri.solve(gp.var.chol);

    theta.segment(lay.mean_at(), lay.m) = m_w;
    int k = lay.off_at();
    for (int i = 1; i < lay.m; ++i) {
        for (int j = 0; j < i; ++j) theta[k++] = l_w(i, j);
    }
    for (int i = 0; i < lay.m; ++i) theta[lay.logdiag_at() + i] = std::log(l_w(i, i));
    theta[lay.const_at()] = gp.config.mean_const;
    theta[lay.log_scale_at()] = std::log(gp.config.kernel.output_scale);
    theta[lay.log_length_at()] = std::log(gp.config.kernel.lengthscale);
}

inline void unpack_latent(const VectorXd& theta, const LatentLayout& lay, LatentGp& gp) {
    gp.config.mean_const = theta[lay.const_at()];
    gp.config.kernel.output_scale = std::exp(theta[lay.log_scale_at()]);
    gp.config.kernel.lengthscale = std::exp(theta[lay.log_length_at()]);

    MatrixXd l_w = MatrixXd::Zero(lay.m, lay.m);
    int k = lay.off_at();
    for (int i = 1; i < lay.m; ++i) {
        for (int j = 0; j < i; ++j) l_w(i, j) = theta[k++];
    }
    for (int i = 0; i < lay.m; ++i) l_w(i, i) = std::exp(theta[lay.logdiag_at() + i]);

    const MatrixXd c = inducing_chol(gp.config);
    gp.var.mean = VectorXd::Constant(lay.m, gp.config.mean_const) +
                  c * theta.segment(lay.mean_at(), lay.m);
    gp.var.chol = c * l_w;
}

inline VectorXd pack_params(const BfgpcModel& model) {
    const ParamLayout lay = ParamLayout::of(model);
    VectorXd theta(lay.size);
    pack_latent(model.lf, lay.lf, theta);
    pack_latent(model.delta, lay.delta, theta);
    theta[lay.rho_at] = model.rho;
    return theta;
}

inline void unpack_params(const VectorXd& theta, BfgpcModel& model) {
    const ParamLayout lay = ParamLayout::of(model);
    unpack_latent(theta, lay.lf, model.lf);
    unpack_latent(theta, lay.delta, model.delta);
    model.rho = theta[lay.rho_at];
}

// ---------------------------------------------------------------------------
// Objective: loss = -ELBO + lambda * sum (theta - theta_prior)^2
// ---------------------------------------------------------------------------

// Gradient of the loss with respect to the unwhitened quantities of one
// latent; the whitening chain converts this into packed coordinates.
struct LatentGrad {
    VectorXd mean;       // d loss / d m_u
    MatrixXd chol;       // d loss / d L_u (lower triangle)
    double mean_const = 0.0;
    double log_scale = 0.0;
    double log_length = 0.0;

    explicit LatentGrad(int m)
        : mean(VectorXd::Zero(m)), chol(MatrixXd::Zero(m, m)) {}
};

// Everything the ELBO and its gradient need for one latent GP over a fixed
// work set of evaluation points.
struct LatentWork {
    const LatentGp* gp = nullptr;
    const MatrixXd* sqdist_xz = nullptr;  // n x M, fixed across steps
    const MatrixXd* sqdist_zz = nullptr;  // M x M, fixed across steps

    Eigen::LLT<MatrixXd> llt;  // of Kzz
    MatrixXd kzz;              // M x M, jitter included
    MatrixXd kxz;              // n x M
    MatrixXd a;                // M x n, Kzz^{-1} Kzx
    MatrixXd u;                // M x n, L_u^T A
    VectorXd b;                // Kzz^{-1} (m_u - c 1)
    VectorXd mu;               // n
    VectorXd v;                // n
    VectorXd explained;        // n, k_i^T a_i

    void compute(const LatentGp& gp_in, const MatrixXd& d2xz, const MatrixXd& d2zz) {
        gp = &gp_in;
        sqdist_xz = &d2xz;
        sqdist_zz = &d2zz;
        const KernelParams& kp = gp_in.config.kernel;
        const double inv = -1.0 / (2.0 * kp.lengthscale * kp.lengthscale);
        const int m = static_cast<int>(gp_in.inducing_count());
        const Eigen::Index n = d2xz.rows();

        kzz = kp.output_scale * (d2zz * inv).array().exp().matrix();
        kzz.diagonal().array() += kInducingJitter * kp.output_scale;
        llt.compute(kzz);
        if (llt.info() != Eigen::Success) {
            throw NumericalError("LatentWork: inducing Gram matrix is not positive definite");
        }
        kxz = kp.output_scale * (d2xz * inv).array().exp().matrix();
        a = llt.solve(kxz.transpose());
        b = llt.solve(gp_in.var.mean - VectorXd::Constant(m, gp_in.config.mean_const));
        u = gp_in.var.chol.transpose() * a;

        mu = VectorXd::Constant(n, gp_in.config.mean_const) + kxz * b;
        explained.resize(n);
        v.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            explained[i] = kxz.row(i).dot(a.col(i));
            v[i] = std::max(kp.output_scale - explained[i] + u.col(i).squaredNorm(), 0.0);
        }
    }

    // KL[q(u) || p(u)] and, optionally, its gradient contributions.
    double kl(LatentGrad* grad) const {
        const int m = static_cast<int>(gp->inducing_count());
        const MatrixXd& chol = gp->var.chol;
        const VectorXd centered = gp->var.mean - VectorXd::Constant(m, gp->config.mean_const);
        const MatrixXd cinv_l = llt.matrixL().solve(chol);  // C^{-1} L_u
        const double tr_kinv_s = cinv_l.squaredNorm();
        const double quad = centered.dot(b);  // (m_u - c1)^T Kzz^{-1} (m_u - c1)
        double logdet_k = 0.0;
        for (int i = 0; i < m; ++i) logdet_k += 2.0 * std::log(llt.matrixLLT()(i, i));
        double logdet_s = 0.0;
        for (int i = 0; i < m; ++i) logdet_s += 2.0 * std::log(chol(i, i));
        const double kl_value = 0.5 * (tr_kinv_s + quad - m + logdet_k - logdet_s);

        if (grad != nullptr) {
            const KernelParams& kp = gp->config.kernel;
            const MatrixXd kinv = llt.solve(MatrixXd::Identity(m, m));
            const MatrixXd kinv_l = kinv * chol;

            grad->mean += b;
            grad->mean_const += -b.sum();
            grad->chol += kinv_l;
            for (int i = 0; i < m; ++i) grad->chol(i, i) -= 1.0 / chol(i, i);
            grad->log_scale += 0.5 * (m - tr_kinv_s - quad);

            // dKzz/dlog-ell = Kzz .* D^2 / ell^2; exact, the jitter sits on
            // the zero-distance diagonal.
            const double inv_l2 = 1.0 / (kp.lengthscale * kp.lengthscale);
            const MatrixXd kprime = kzz.cwiseProduct(*sqdist_zz) * inv_l2;
            const MatrixXd as = kinv_l * kinv_l.transpose();  // Kinv S Kinv
            const double term = kinv.cwiseProduct(kprime).sum() - as.cwiseProduct(kprime).sum() -
                                b.dot(kprime * b);
            grad->log_length += 0.5 * term;
        }
        return kl_value;
    }

    // Subtracts d(sum of expected log-liks)/d(unwhitened params) from grad,
    // where gmu and gv hold the derivatives of that sum with respect to each
    // point's predictive mean and variance.
    void backprop_data(const VectorXd& gmu, const VectorXd& gv, LatentGrad* grad) const {
        if (grad == nullptr || mu.size() == 0) return;
        const Eigen::Index n = mu.size();
        const KernelParams& kp = gp->config.kernel;
        const MatrixXd& chol = gp->var.chol;

        grad->mean -= a * gmu;
        grad->mean_const -= gmu.sum() - a.colwise().sum().dot(gmu);

        // d v_i / d L_u through S = L_u L_u^T
        const MatrixXd g = a * gv.asDiagonal() * a.transpose();
        grad->chol -= 2.0 * (g * chol).triangularView<Eigen::Lower>().toDenseMatrix();

        // log output_scale: d mu_i = 0, d v_i = s2 - explained_i
        grad->log_scale -= gv.dot(VectorXd::Constant(n, kp.output_scale) - explained);

        // log lengthscale
        const double inv_l2 = 1.0 / (kp.lengthscale * kp.lengthscale);
        const MatrixXd kprime_xz = kxz.cwiseProduct(*sqdist_xz) * inv_l2;  // n x M
        const MatrixXd kprime_zz = kzz.cwiseProduct(*sqdist_zz) * inv_l2;  // M x M
        const MatrixXd w = llt.solve(chol * u);                            // Kzz^{-1} S A
        const VectorXd h = kprime_zz * b;
        const VectorXd dmu = kprime_xz * b - a.transpose() * h;
        const MatrixXd p = kprime_zz * a;
        const MatrixXd q = kprime_zz * w;
        double acc = gmu.dot(dmu);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double t1 = kprime_xz.row(i).dot(a.col(i));
            const double t2 = a.col(i).dot(p.col(i));
            const double t3 = kprime_xz.row(i).dot(w.col(i));
            const double t4 = a.col(i).dot(q.col(i));
            acc += gv[i] * (-2.0 * t1 + t2 + 2.0 * t3 - 2.0 * t4);
        }
        grad->log_length -= acc;
    }

    // Converts the accumulated unwhitened gradient into the packed layout,
    // chaining through m_u = c 1 + C m_w and L_u = C L_w. A Cholesky factor
    // differentiates as dC = C tril*(C^{-1} dK C^{-T}) with tril* keeping the
    // lower triangle and halving the diagonal.
    void finalize_whitened(const LatentGrad& grad, const LatentLayout& lay, VectorXd& packed) const {
        const int m = lay.m;
        const MatrixXd c_mat = MatrixXd(llt.matrixL());
        const auto tri = c_mat.triangularView<Eigen::Lower>();
        const MatrixXd& chol_u = gp->var.chol;
        const VectorXd centered = gp->var.mean - VectorXd::Constant(m, gp->config.mean_const);
        const VectorXd m_w = tri.solve(centered);
        const MatrixXd l_w = tri.solve(chol_u);

        const VectorXd g_mw = c_mat.transpose() * grad.mean;
        const MatrixXd g_lw = c_mat.transpose() * grad.chol;
        packed.segment(lay.mean_at(), m) += g_mw;
        int k = lay.off_at();
        for (int i = 1; i < m; ++i) {
            for (int j = 0; j < i; ++j) packed[k++] += g_lw(i, j);
        }
        for (int i = 0; i < m; ++i) packed[lay.logdiag_at() + i] += g_lw(i, i) * l_w(i, i);

        packed[lay.const_at()] += grad.mean_const + grad.mean.sum();

        // dC/dlog s2 = C/2, so the chain contribution uses C m_w = m_u - c1
        // and C L_w = L_u directly.
        packed[lay.log_scale_at()] +=
            grad.log_scale + 0.5 * grad.mean.dot(centered) + 0.5 * grad.chol.cwiseProduct(chol_u).sum();

        const KernelParams& kp = gp->config.kernel;
        const double inv_l2 = 1.0 / (kp.lengthscale * kp.lengthscale);
        const MatrixXd kprime = kzz.cwiseProduct(*sqdist_zz) * inv_l2;
        MatrixXd inner = tri.solve(kprime);
        inner = tri.solve(inner.transpose().eval());  // C^{-1} K' C^{-T}, symmetric
        MatrixXd phi = inner.triangularView<Eigen::Lower>();
        phi.diagonal() *= 0.5;
        const MatrixXd dc = c_mat * phi;
        packed[lay.log_length_at()] +=
            grad.log_length + grad.mean.dot(dc * m_w) + grad.chol.cwiseProduct(dc * l_w).sum();
    }
};

struct Objective {
    double elbo = 0.0;
    double loss = 0.0;
};

struct ObjectiveContext {
    MatrixXd d2_lfwork_z;   // [lf_x; hf_x] vs Z_L
    MatrixXd d2_zz_lf;      // Z_L vs Z_L
    MatrixXd d2_hf_zdelta;  // hf_x vs Z_delta
    MatrixXd d2_zz_delta;   // Z_delta vs Z_delta

    static ObjectiveContext of(const BfgpcModel& model, const LabeledDataset& data) {
        if (data.empty()) {
            throw std::invalid_argument("bfgpc: dataset is empty in both fidelities");
        }
        ObjectiveContext ctx;
        MatrixXd lf_points(data.lf_count() + data.hf_count(), model.input_dim);
        if (data.lf_count() > 0) lf_points.topRows(data.lf_count()) = data.lf_x;
        if (data.hf_count() > 0) lf_points.bottomRows(data.hf_count()) = data.hf_x;
        ctx.d2_lfwork_z = squared_distances(lf_points, model.lf.config.inducing);
        ctx.d2_zz_lf = squared_distances(model.lf.config.inducing, model.lf.config.inducing);
        MatrixXd hf_points(data.hf_count(), model.input_dim);
        if (data.hf_count() > 0) hf_points = data.hf_x;
        ctx.d2_hf_zdelta = squared_distances(hf_points, model.delta.config.inducing);
        ctx.d2_zz_delta = squared_distances(model.delta.config.inducing, model.delta.config.inducing);
        return ctx;
    }
};

// Single source of truth for the training objective. `grad`, when non-null,
// receives d(loss)/d(params) in the pack_params (whitened) layout.
inline Objective evaluate_objective(const BfgpcModel& model, const LabeledDataset& data,
                                    const std::array<double, 4>& theta_prior, double reg_lambda,
                                    const GhRule& rule, const ObjectiveContext& ctx,
                                    VectorXd* grad) {
    const ParamLayout lay = ParamLayout::of(model);
    if (grad != nullptr) grad->setZero(lay.size);

    const Eigen::Index n_lf = data.lf_count();
    const Eigen::Index n_hf = data.hf_count();

    // f_L is evaluated at the LF points and at the HF points (stacked);
    // delta only at the HF points.
    LatentWork lf_work;
    lf_work.compute(model.lf, ctx.d2_lfwork_z, ctx.d2_zz_lf);
    LatentWork delta_work;
    delta_work.compute(model.delta, ctx.d2_hf_zdelta, ctx.d2_zz_delta);

    double ell = 0.0;
    VectorXd gmu_lf = VectorXd::Zero(n_lf + n_hf);
    VectorXd gv_lf = VectorXd::Zero(n_lf + n_hf);
    VectorXd gmu_delta = VectorXd::Zero(n_hf);
    VectorXd gv_delta = VectorXd::Zero(n_hf);
    double grad_rho = 0.0;

    const double inv_sqrt_pi = 1.0 / std::sqrt(kPi);
    auto accumulate = [&](double mean, double var, int y, double& gmu_out, double& gv_out) {
        const double scale = std::sqrt(2.0 * var);
        double value = 0.0;
        double gmu = 0.0;
        double gnode = 0.0;  // sum of w_k l'(f_k) t_k
        for (Eigen::Index k = 0; k < rule.nodes.size(); ++k) {
            const double f = mean + scale * rule.nodes[k];
            const double w = rule.weights[k];
            value += w * bernoulli_probit_loglik(f, y);
            const double dl = bernoulli_probit_dloglik(f, y);
            gmu += w * dl;
            gnode += w * dl * rule.nodes[k];
        }
        ell += inv_sqrt_pi * value;
        gmu_out = inv_sqrt_pi * gmu;
        gv_out = var > 0.0 ? inv_sqrt_pi * gnode * kSqrt2 / (2.0 * std::sqrt(var))
                           : 0.5 * bernoulli_probit_d2loglik(mean, y);
    };

    for (Eigen::Index i = 0; i < n_lf; ++i) {
        accumulate(lf_work.mu[i], lf_work.v[i], data.lf_y[i], gmu_lf[i], gv_lf[i]);
    }
    const double rho = model.rho;
    for (Eigen::Index j = 0; j < n_hf; ++j) {
        const double mu_l = lf_work.mu[n_lf + j];
        const double v_l = lf_work.v[n_lf + j];
        const double mu_h = rho * mu_l + delta_work.mu[j];
        const double v_h = rho * rho * v_l + delta_work.v[j];
        double gmu_h = 0.0;
        double gv_h = 0.0;
        accumulate(mu_h, v_h, data.hf_y[j], gmu_h, gv_h);
        gmu_lf[n_lf + j] = rho * gmu_h;
        gv_lf[n_lf + j] = rho * rho * gv_h;
        gmu_delta[j] = gmu_h;
        gv_delta[j] = gv_h;
        grad_rho += gmu_h * mu_l + gv_h * 2.0 * rho * v_l;
    }

    Objective obj;
    if (grad == nullptr) {
        obj.elbo = ell - lf_work.kl(nullptr) - delta_work.kl(nullptr);
    } else {
        LatentGrad lf_grad(static_cast<int>(model.lf.inducing_count()));
        LatentGrad delta_grad(static_cast<int>(model.delta.inducing_count()));
        lf_work.backprop_data(gmu_lf, gv_lf, &lf_grad);
        delta_work.backprop_data(gmu_delta, gv_delta, &delta_grad);
        obj.elbo = ell - lf_work.kl(&lf_grad) - delta_work.kl(&delta_grad);
        lf_work.finalize_whitened(lf_grad, lay.lf, *grad);
        delta_work.finalize_whitened(delta_grad, lay.delta, *grad);
        (*grad)[lay.rho_at] = -grad_rho;
    }

    double reg = 0.0;
    const std::array<int, 4> theta_idx = {lay.lf.log_scale_at(), lay.lf.log_length_at(),
                                          lay.delta.log_scale_at(), lay.delta.log_length_at()};
    const std::array<double, 4> theta_now = {
        std::log(model.lf.config.kernel.output_scale), std::log(model.lf.config.kernel.lengthscale),
        std::log(model.delta.config.kernel.output_scale),
        std::log(model.delta.config.kernel.lengthscale)};
    for (std::size_t t = 0; t < 4; ++t) {
        const double diff = theta_now[t] - theta_prior[t];
        reg += reg_lambda * diff * diff;
        if (grad != nullptr) (*grad)[theta_idx[t]] += 2.0 * reg_lambda * diff;
    }
    obj.loss = -obj.elbo + reg;
    return obj;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Public surface
// ---------------------------------------------------------------------------

inline double elbo(const BfgpcModel& model, const LabeledDataset& data,
                   int gh_order = kDefaultGhOrder) {
    const detail::ObjectiveContext ctx = detail::ObjectiveContext::of(model, data);
    const GhRule rule = GhRule::make(gh_order);
    return detail::evaluate_objective(model, data, {0, 0, 0, 0}, 0.0, rule, ctx, nullptr).elbo;
}

inline double regularized_loss(const BfgpcModel& model, const LabeledDataset& data,
                               const TrainingConfig& config) {
    config.validate();
    const detail::ObjectiveContext ctx = detail::ObjectiveContext::of(model, data);
    const GhRule rule = GhRule::make(config.gh_order);
    return detail::evaluate_objective(model, data, resolve_theta_prior(config, model),
                                      config.reg_lambda, rule, ctx, nullptr)
        .loss;
}

// Loss and its analytic gradient in the packed (whitened) parameter layout;
// exposed for gradient verification.
inline std::pair<double, VectorXd> regularized_loss_grad(const BfgpcModel& model,
                                                         const LabeledDataset& data,
                                                         const TrainingConfig& config) {
    config.validate();
    const detail::ObjectiveContext ctx = detail::ObjectiveContext::of(model, data);
    const GhRule rule = GhRule::make(config.gh_order);
    VectorXd grad;
    const double loss = detail::evaluate_objective(model, data, resolve_theta_prior(config, model),
                                                   config.reg_lambda, rule, ctx, &grad)
                            .loss;
    return {loss, std::move(grad)};
}

namespace detail {

struct Adam {
    double lr;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    VectorXd m;
    VectorXd v;
    int t = 0;

    Adam(double lr_in, Eigen::Index n) : lr(lr_in), m(VectorXd::Zero(n)), v(VectorXd::Zero(n)) {}

    void step(VectorXd& theta, const VectorXd& grad) {
        ++t;
        m = beta1 * m + (1.0 - beta1) * grad;
        v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
        const double c1 = 1.0 - std::pow(beta1, t);
        const double c2 = 1.0 - std::pow(beta2, t);
        theta -= (lr / c1) * m.cwiseQuotient(((v / c2).cwiseSqrt().array() + eps).matrix());
    }
};

// Random perturbation of the packed initial parameters for one restart.
// Whitened means translate into latent perturbations of the same order.
inline void perturb_restart(VectorXd& theta, const ParamLayout& lay, Rng rng) {
    auto latent = [&](const LatentLayout& l) {
        for (int i = 0; i < l.m; ++i) theta[l.mean_at() + i] += 0.5 * rng.normal();
        theta[l.const_at()] += 0.5 * rng.normal();
        theta[l.log_scale_at()] += 0.3 * rng.normal();
        theta[l.log_length_at()] += 0.3 * rng.normal();
    };
    latent(lay.lf);
    latent(lay.delta);
    theta[lay.rho_at] += 0.5 * rng.normal();
}

}  // namespace detail

struct TrainResult {
    BfgpcModel model;
    std::vector<double> elbo_trace;  // per-step ELBO of the winning restart
};

// Adam over the variational parameters, log kernel hyperparameters, mean
// constants and rho. Each restart starts from a randomly perturbed copy of
// `init`; the restart with the best final ELBO wins. Deterministic per seed.
inline TrainResult train(const BfgpcModel& init, const LabeledDataset& data,
                         const TrainingConfig& config) {
    config.validate();
    const detail::ObjectiveContext ctx = detail::ObjectiveContext::of(init, data);
    const GhRule rule = GhRule::make(config.gh_order);
    const std::array<double, 4> theta_prior = resolve_theta_prior(config, init);
    const detail::ParamLayout lay = detail::ParamLayout::of(init);
    const VectorXd theta0 = detail::pack_params(init);
    const Rng base(config.seed);

    bool have_best = false;
    double best_final = 0.0;
    VectorXd best_theta;
    std::vector<double> best_trace;

    for (int r = 0; r < config.restarts; ++r) {
        VectorXd theta = theta0;
        detail::perturb_restart(theta, lay,
                                base.stream(stream_tag::kRestart, static_cast<std::uint64_t>(r)));
        detail::Adam adam(config.learning_rate, theta.size());
        BfgpcModel work = init;
        std::vector<double> trace;
        trace.reserve(static_cast<std::size_t>(config.steps) + 1);
        VectorXd grad;
        bool ok = true;
        for (int s = 0; s < config.steps; ++s) {
            detail::Objective obj;
            try {
                detail::unpack_params(theta, work);
                obj = detail::evaluate_objective(work, data, theta_prior, config.reg_lambda, rule,
                                                 ctx, &grad);
            } catch (const NumericalError&) {
                ok = false;
                break;
            }
            if (!std::isfinite(obj.loss) || !grad.allFinite()) {
                ok = false;
                break;
            }
            trace.push_back(obj.elbo);
            adam.step(theta, grad);
        }
        if (!ok) continue;
        double final_elbo = 0.0;
        try {
            detail::unpack_params(theta, work);
            final_elbo =
                detail::evaluate_objective(work, data, theta_prior, config.reg_lambda, rule, ctx,
                                           nullptr)
                    .elbo;
        } catch (const NumericalError&) {
            continue;
        }
        if (!std::isfinite(final_elbo)) continue;
        trace.push_back(final_elbo);
        if (!have_best || final_elbo > best_final) {
            have_best = true;
            best_final = final_elbo;
            best_theta = theta;
            best_trace = std::move(trace);
        }
    }
    if (!have_best) {
        throw TrainingError("train: every restart diverged");
    }
    TrainResult result;
    result.model = init;
    detail::unpack_params(best_theta, result.model);
    result.elbo_trace = std::move(best_trace);
    return result;
}

}  // namespace bfal

#endif  // BFAL_TRAIN_HPP
