#ifndef BFAL_MATH_HPP
#define BFAL_MATH_HPP

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "bfal/errors.hpp"

namespace bfal {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kPi = 3.14159265358979323846;
constexpr double kSqrt2 = 1.41421356237309504880;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// Default Gauss-Hermite order for expected-log-likelihood integrals.
constexpr int kDefaultGhOrder = 20;

// ---------------------------------------------------------------------------
// RBF kernel
// ---------------------------------------------------------------------------

struct KernelParams {
    double output_scale = 1.0;  // sigma^2
    double lengthscale = 1.0;   // ell

    void validate() const {
        if (!(output_scale > 0.0) || !(lengthscale > 0.0)) {
            throw std::invalid_argument("KernelParams: output_scale and lengthscale must be > 0");
        }
    }
};

inline double rbf_kernel_sqdist(double sq_dist, const KernelParams& p) {
    return p.output_scale * std::exp(-sq_dist / (2.0 * p.lengthscale * p.lengthscale));
}

template <typename DerivedA, typename DerivedB>
double rbf_kernel(const Eigen::MatrixBase<DerivedA>& x, const Eigen::MatrixBase<DerivedB>& x_prime,
                  const KernelParams& params) {
    if (x.size() != x_prime.size() || x.size() < 1) {
        throw std::invalid_argument("rbf_kernel: dimension mismatch");
    }
    params.validate();
    return rbf_kernel_sqdist((x - x_prime).squaredNorm(), params);
}

// ---------------------------------------------------------------------------
// Probit link and stable tail helpers
// ---------------------------------------------------------------------------

// Scaled complementary error function exp(x^2) erfc(x).
inline double erfcx(double x) {
    if (x >= 25.0) {
        // asymptotic series; erfc underflows before exp(x^2) is representable
        const double inv2x2 = 1.0 / (2.0 * x * x);
        double term = 1.0;
        double sum = 1.0;
        for (int k = 1; k <= 6; ++k) {
            term *= -static_cast<double>(2 * k - 1) * inv2x2;
            sum += term;
        }
        return sum / (x * std::sqrt(kPi));
    }
    const double x2 = x * x;
    if (x2 > 708.0) {
        return std::numeric_limits<double>::infinity();  // deep negative x
    }
    return std::exp(x2) * std::erfc(x);
}

inline double normal_pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / kSqrt2); }

// log Phi(z), accurate in both tails.
inline double log_normal_cdf(double z) {
    if (z >= 0.0) {
        return std::log1p(-0.5 * std::erfc(z / kSqrt2));
    }
    return std::log(0.5 * erfcx(-z / kSqrt2)) - 0.5 * z * z;
}

// phi(z) / Phi(z) without underflow (inverse Mills ratio of -z).
inline double normal_pdf_over_cdf(double z) {
    return 2.0 / (std::sqrt(2.0 * kPi) * erfcx(-z / kSqrt2));
}

struct ProbitValue {
    double p;   // Phi(z)
    double dp;  // phi(z)
};

inline ProbitValue probit_link(double z) {
    if (!std::isfinite(z)) {
        throw std::invalid_argument("probit_link: z must be finite");
    }
    double p = normal_cdf(z);
    p = std::min(std::max(p, std::numeric_limits<double>::min()),
                 1.0 - std::numeric_limits<double>::epsilon() / 2.0);
    return {p, normal_pdf(z)};
}

// d/df log p(y|f) for the probit Bernoulli likelihood.
inline double bernoulli_probit_dloglik(double f, int y) {
    return y == 1 ? normal_pdf_over_cdf(f) : -normal_pdf_over_cdf(-f);
}

// d^2/df^2 log p(y|f); needed for the zero-variance limit of the
// expected-log-likelihood derivative.
inline double bernoulli_probit_d2loglik(double f, int y) {
    const double z = y == 1 ? f : -f;
    const double lam = normal_pdf_over_cdf(z);
    return -lam * (lam + z);
}

inline double bernoulli_probit_loglik(double f, int y) {
    return y == 1 ? log_normal_cdf(f) : log_normal_cdf(-f);
}

// Binary entropy in nats, safe at p in {0,1}.
inline double binary_entropy(double p) {
    double h = 0.0;
    if (p > 0.0) h -= p * std::log(p);
    if (p < 1.0) h -= (1.0 - p) * std::log(1.0 - p);
    return h;
}

// ---------------------------------------------------------------------------
// Gauss-Hermite quadrature (physicists' convention: integral of exp(-t^2) f)
// ---------------------------------------------------------------------------

struct GhRule {
    VectorXd nodes;
    VectorXd weights;

    // Golub-Welsch on the Jacobi matrix of the Hermite recurrence.
    static GhRule make(int order) {
        if (order < 1) {
            throw std::invalid_argument("GhRule: order must be >= 1");
        }
        MatrixXd jacobi = MatrixXd::Zero(order, order);
        for (int k = 1; k < order; ++k) {
            const double b = std::sqrt(0.5 * static_cast<double>(k));
            jacobi(k, k - 1) = b;
            jacobi(k - 1, k) = b;
        }
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(jacobi);
        GhRule rule;
        rule.nodes = es.eigenvalues();
        rule.weights.resize(order);
        const double mu0 = std::sqrt(kPi);
        for (int i = 0; i < order; ++i) {
            const double v0 = es.eigenvectors()(0, i);
            rule.weights[i] = mu0 * v0 * v0;
        }
        return rule;
    }

    // E_{f ~ N(mean, var)}[ g(f) ] for a scalar function g.
    template <typename Fn>
    double expect(double mean, double var, Fn&& g) const {
        const double scale = std::sqrt(2.0 * std::max(var, 0.0));
        double acc = 0.0;
        for (int k = 0; k < nodes.size(); ++k) {
            acc += weights[k] * g(mean + scale * nodes[k]);
        }
        return acc / std::sqrt(kPi);
    }
};

inline double gh_expected_bernoulli_loglik(double mean, double var, int y, const GhRule& rule) {
    if (var < 0.0) {
        throw std::invalid_argument("gh_expected_bernoulli_loglik: negative variance");
    }
    if (y != 0 && y != 1) {
        throw std::invalid_argument("gh_expected_bernoulli_loglik: label must be 0 or 1");
    }
    return rule.expect(mean, var, [y](double f) { return bernoulli_probit_loglik(f, y); });
}

inline double gh_expected_bernoulli_loglik(double mean, double var, int y,
                                           int order = kDefaultGhOrder) {
    return gh_expected_bernoulli_loglik(mean, var, y, GhRule::make(order));
}

// Quadrature route for the marginal class probability; kept as the second
// algebraic route next to the closed form below.
inline double gh_marginal_bernoulli_prob(double mean, double var, int order = kDefaultGhOrder) {
    if (var < 0.0) {
        throw std::invalid_argument("gh_marginal_bernoulli_prob: negative variance");
    }
    const GhRule rule = GhRule::make(order);
    const double p = rule.expect(mean, var, [](double f) { return normal_cdf(f); });
    return std::min(std::max(p, std::numeric_limits<double>::min()),
                    1.0 - std::numeric_limits<double>::epsilon() / 2.0);
}

// integral of Phi(f) N(f; mean, var) df = Phi(mean / sqrt(1 + var)).
// The identity is exact for the probit link.
inline double marginal_bernoulli_prob(double mean, double var) {
    if (var < 0.0) {
        throw std::invalid_argument("marginal_bernoulli_prob: negative variance");
    }
    const double p = normal_cdf(mean / std::sqrt(1.0 + var));
    return std::min(std::max(p, std::numeric_limits<double>::min()),
                    1.0 - std::numeric_limits<double>::epsilon() / 2.0);
}

// ---------------------------------------------------------------------------
// Gaussian joints, stabilized Cholesky, mutual information
// ---------------------------------------------------------------------------

struct GaussianJoint {
    VectorXd mean;
    MatrixXd cov;

    Eigen::Index dim() const { return mean.size(); }
};

struct CholeskyFactor {
    MatrixXd lower;
    double nugget_used = 0.0;

    double log_det() const {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < lower.rows(); ++i) {
            acc += std::log(lower(i, i));
        }
        return 2.0 * acc;
    }
};

namespace detail {

inline void check_symmetric(const MatrixXd& cov, const char* where) {
    if (cov.rows() != cov.cols()) {
        throw std::invalid_argument(std::string(where) + ": matrix not square");
    }
    const double scale = std::max(cov.cwiseAbs().maxCoeff(), 1.0);
    const double asym = (cov - cov.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-8 * scale) {
        std::ostringstream os;
        os << where << ": matrix not symmetric (max asymmetry " << asym << ")";
        throw std::invalid_argument(os.str());
    }
}

}  // namespace detail

// Escalating nugget levels, relative to the mean diagonal.
inline const std::vector<double>& nugget_ladder() {
    static const std::vector<double> ladder = {0.0, 1e-10, 1e-8, 1e-6, 1e-4};
    return ladder;
}

inline CholeskyFactor stabilized_cholesky(const MatrixXd& cov) {
    detail::check_symmetric(cov, "stabilized_cholesky");
    const Eigen::Index n = cov.rows();
    const double mean_diag = n > 0 ? cov.diagonal().mean() : 0.0;
    const MatrixXd sym = 0.5 * (cov + cov.transpose());
    for (double level : nugget_ladder()) {
        const double nugget = level * mean_diag;
        Eigen::LLT<MatrixXd> llt(sym + nugget * MatrixXd::Identity(n, n));
        if (llt.info() == Eigen::Success) {
            // LLT can report success with a zero pivot on singular input
            if ((llt.matrixLLT().diagonal().array() > 0.0).all()) {
                return {MatrixXd(llt.matrixL()), nugget};
            }
        }
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym, Eigen::EigenvaluesOnly);
    std::ostringstream os;
    os << "stabilized_cholesky: factorization failed at maximum nugget ("
       << nugget_ladder().back() * mean_diag << "); min eigenvalue estimate "
       << (es.eigenvalues().size() > 0 ? es.eigenvalues().minCoeff() : 0.0);
    throw NumericalError(os.str());
}

namespace detail {

inline MatrixXd submatrix(const MatrixXd& m, const std::vector<int>& rows,
                          const std::vector<int>& cols) {
    MatrixXd out(rows.size(), cols.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < cols.size(); ++j) {
            out(i, j) = m(rows[i], cols[j]);
        }
    }
    return out;
}

}  // namespace detail

// I(A; B) = 1/2 (logdet S_A + logdet S_B - logdet S_{A,B}) in nats.
// The joint log-determinant is accumulated A-block first, then B-block, so
// that an exactly block-diagonal covariance yields exactly zero.
inline double gaussian_mi(const GaussianJoint& joint, const std::vector<int>& set_a,
                          const std::vector<int>& set_b) {
    const Eigen::Index n = joint.dim();
    if (set_a.empty() || set_b.empty()) {
        throw std::invalid_argument("gaussian_mi: index sets must be nonempty");
    }
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    auto mark = [&](const std::vector<int>& s) {
        for (int i : s) {
            if (i < 0 || i >= n) throw std::invalid_argument("gaussian_mi: index out of range");
            if (seen[static_cast<std::size_t>(i)]) {
                throw std::invalid_argument("gaussian_mi: index sets overlap");
            }
            seen[static_cast<std::size_t>(i)] = 1;
        }
    };
    mark(set_a);
    mark(set_b);
    for (char c : seen) {
        if (!c) throw std::invalid_argument("gaussian_mi: index sets must cover the joint");
    }

    const CholeskyFactor fa = stabilized_cholesky(detail::submatrix(joint.cov, set_a, set_a));
    const CholeskyFactor fb = stabilized_cholesky(detail::submatrix(joint.cov, set_b, set_b));

    std::vector<int> ab(set_a);
    ab.insert(ab.end(), set_b.begin(), set_b.end());
    const CholeskyFactor fab = stabilized_cholesky(detail::submatrix(joint.cov, ab, ab));

    double ld_ab_a = 0.0;
    double ld_ab_b = 0.0;
    for (std::size_t i = 0; i < ab.size(); ++i) {
        const double term = 2.0 * std::log(fab.lower(static_cast<Eigen::Index>(i),
                                                     static_cast<Eigen::Index>(i)));
        (i < set_a.size() ? ld_ab_a : ld_ab_b) += term;
    }
    return 0.5 * (fa.log_det() + fb.log_det() - (ld_ab_a + ld_ab_b));
}

}  // namespace bfal

#endif  // BFAL_MATH_HPP
