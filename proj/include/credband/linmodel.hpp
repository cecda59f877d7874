#pragma once

// Approximately linear regression model Y = X beta0 + r + eps, the OLS
// centering estimator, residual-variance estimation and slope priors.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>

#include <Eigen/Dense>
#include <json.hpp>

#include "credband/errors.hpp"
#include "credband/rng.hpp"

namespace credband {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Upper bound on cond(X^T X) accepted before a design is declared singular.
inline constexpr double kConditionCap = 1e12;

/// Sufficient statistics of the Gaussian quasi-likelihood: X^T X, X^T Y,
/// Y^T Y and the number of observations. Every sampler works from these, so
/// sequence models with diagonal designs never materialize X.
struct LinearSummary {
    Matrix gram;
    Vector xty;
    double yty = 0.0;
    Index n_obs = 0;

    Index dim() const { return gram.rows(); }
};

/// Checks that `gram` is SPD with condition number below the cap and returns
/// its Cholesky factor.
inline Eigen::LLT<Matrix> checked_cholesky(const Matrix& gram) {
    if (gram.rows() == 0) throw NumericalError("empty Gram matrix");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(gram, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (!(lo > 0.0) || hi / lo > kConditionCap) {
        throw NumericalError("singular or near-singular design: cond(X'X) = " +
                             (lo > 0.0 ? std::to_string(hi / lo) : std::string("inf")));
    }
    Eigen::LLT<Matrix> llt(gram);
    if (llt.info() != Eigen::Success) throw NumericalError("Cholesky factorization failed");
    return llt;
}

inline Vector ols_from_summary(const LinearSummary& s) {
    return checked_cholesky(s.gram).solve(s.xty);
}

/// Residual sum of squares ||Y - X beta||^2 from the summary.
inline double rss_from_summary(const LinearSummary& s, const Vector& beta) {
    const double v = s.yty - 2.0 * beta.dot(s.xty) + beta.dot(s.gram * beta);
    return v > 0.0 ? v : 0.0;
}

class RegressionProblem {
public:
    RegressionProblem(Matrix design, Vector responses, std::optional<Vector> true_beta = {},
                      std::optional<Vector> bias = {}, std::optional<double> sigma0 = {})
        : design_(std::move(design)),
          responses_(std::move(responses)),
          true_beta_(std::move(true_beta)),
          bias_(std::move(bias)),
          sigma0_(sigma0) {
        const Index n = design_.rows();
        const Index p = design_.cols();
        require(n == responses_.size(), "design rows must match response length");
        require(p >= 1 && p <= n, "need 1 <= p <= n");
        require(!bias_ || bias_->size() == n, "bias length must equal n");
        require(!true_beta_ || true_beta_->size() == p, "true_beta length must equal p");
        require(!sigma0_ || *sigma0_ > 0.0, "sigma0 must be positive");
        summary_.gram = design_.transpose() * design_;
        summary_.xty = design_.transpose() * responses_;
        summary_.yty = responses_.squaredNorm();
        summary_.n_obs = n;
        checked_cholesky(summary_.gram);  // full column rank
    }

    const Matrix& design() const { return design_; }
    const Vector& responses() const { return responses_; }
    const std::optional<Vector>& true_beta() const { return true_beta_; }
    const std::optional<Vector>& bias() const { return bias_; }
    std::optional<double> sigma0() const { return sigma0_; }
    Index n() const { return design_.rows(); }
    Index p() const { return design_.cols(); }
    const LinearSummary& summary() const { return summary_; }

private:
    Matrix design_;
    Vector responses_;
    std::optional<Vector> true_beta_;
    std::optional<Vector> bias_;
    std::optional<double> sigma0_;
    LinearSummary summary_;
};

/// beta_hat = (X^T X)^{-1} X^T Y.
inline Vector ols_fit(const RegressionProblem& problem) {
    return checked_cholesky(problem.summary().gram).solve(problem.summary().xty);
}

/// Unbiased residual variance ||Y - PY||^2 / (n - p), with the residual formed
/// explicitly so that responses in the column space give exactly zero up to
/// rounding.
inline double sigma_hat_u(const RegressionProblem& problem) {
    if (problem.n() <= problem.p())
        throw NumericalError("sigma_hat_u undefined for n == p (no residual degrees of freedom)");
    const Vector resid = problem.responses() - problem.design() * ols_fit(problem);
    return resid.squaredNorm() / static_cast<double>(problem.n() - problem.p());
}

inline double sigma_hat_u(const LinearSummary& s) {
    if (s.n_obs <= s.dim())
        throw NumericalError("sigma_hat_u undefined for n == p (no residual degrees of freedom)");
    return rss_from_summary(s, ols_from_summary(s)) / static_cast<double>(s.n_obs - s.dim());
}

// ---------------------------------------------------------------------------
// Slope priors. Log-densities are unnormalized; only differences are used.

struct FlatPrior {};

/// Isotropic Gaussian N(mean, sd^2 I). An empty mean means the zero vector.
struct GaussianIsoPrior {
    Vector mean;
    double sd = 1.0;
};

/// Product of Laplace(0, scale) densities; log-Lipschitz with constant 1/scale.
struct LaplacePrior {
    double scale = 1.0;
};

/// Product prior with a user-supplied per-coordinate log density.
struct CustomProductPrior {
    std::function<double(double)> log_density;
    double log_lipschitz = 1.0;
    std::string name = "custom";
};

using SlopePrior = std::variant<FlatPrior, GaussianIsoPrior, LaplacePrior, CustomProductPrior>;

inline bool is_product_prior(const SlopePrior& prior) {
    return std::holds_alternative<LaplacePrior>(prior) ||
           std::holds_alternative<CustomProductPrior>(prior);
}

inline std::string prior_name(const SlopePrior& prior) {
    return std::visit(
        [](const auto& p) -> std::string {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, FlatPrior>) return "flat";
            else if constexpr (std::is_same_v<T, GaussianIsoPrior>) return "gaussian";
            else if constexpr (std::is_same_v<T, LaplacePrior>) return "laplace";
            else return p.name;
        },
        prior);
}

inline void validate_prior(const SlopePrior& prior) {
    if (auto g = std::get_if<GaussianIsoPrior>(&prior)) require(g->sd > 0.0, "prior sd must be positive");
    if (auto l = std::get_if<LaplacePrior>(&prior)) require(l->scale > 0.0, "Laplace scale must be positive");
    if (auto c = std::get_if<CustomProductPrior>(&prior)) {
        require(static_cast<bool>(c->log_density), "custom prior needs a log density");
        require(c->log_lipschitz > 0.0, "custom prior needs a positive log-Lipschitz constant");
    }
}

/// Per-coordinate log density of a product prior.
inline double coordinate_log_density(const SlopePrior& prior, double x) {
    if (auto l = std::get_if<LaplacePrior>(&prior)) return -std::abs(x) / l->scale;
    if (auto c = std::get_if<CustomProductPrior>(&prior)) return c->log_density(x);
    throw ConfigError("coordinate_log_density requires a product prior");
}

/// log pi(beta) up to a constant fixed per prior instance.
inline double prior_log_density(const SlopePrior& prior, const Vector& beta) {
    return std::visit(
        [&](const auto& p) -> double {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, FlatPrior>) {
                return 0.0;
            } else if constexpr (std::is_same_v<T, GaussianIsoPrior>) {
                const double sq = p.mean.size() == 0 ? beta.squaredNorm()
                                                     : (beta - p.mean).squaredNorm();
                return -0.5 * sq / (p.sd * p.sd);
            } else if constexpr (std::is_same_v<T, LaplacePrior>) {
                return -beta.lpNorm<1>() / p.scale;
            } else {
                double acc = 0.0;
                for (Index j = 0; j < beta.size(); ++j) acc += p.log_density(beta[j]);
                return acc;
            }
        },
        prior);
}

/// Local log-Lipschitz constant of a product prior: L = Ltilde * sqrt(p).
inline double product_log_lipschitz(const SlopePrior& prior, Index p) {
    double lt = 0.0;
    if (auto l = std::get_if<LaplacePrior>(&prior)) lt = 1.0 / l->scale;
    else if (auto c = std::get_if<CustomProductPrior>(&prior)) lt = c->log_lipschitz;
    else throw ConfigError("product_log_lipschitz requires a product prior");
    return lt * std::sqrt(static_cast<double>(p));
}

/// Monte Carlo lower estimate of phi(R) = 1 - inf_{b, b' in B(R)} pi(b')/pi(b),
/// B(R) = {b : ||X (b - beta0)|| <= R sigma0}, from `n_pairs` uniform pairs.
inline double lack_of_flatness(const SlopePrior& prior, const RegressionProblem& problem,
                               double radius, std::size_t n_pairs, std::uint64_t seed) {
    require(radius > 0.0, "lack_of_flatness: radius must be positive");
    require(problem.true_beta().has_value() && problem.sigma0().has_value(),
            "lack_of_flatness needs true_beta and sigma0");
    if (std::holds_alternative<FlatPrior>(prior)) return 0.0;

    const Index p = problem.p();
    const Vector& beta0 = *problem.true_beta();
    // b = beta0 + R sigma0 L^{-T} u with X^T X = L L^T and u uniform in the unit ball.
    const Eigen::LLT<Matrix> llt = checked_cholesky(problem.summary().gram);
    const double scale = radius * *problem.sigma0();
    Rng rng(seed);
    auto draw_point = [&]() {
        Vector u(p);
        for (Index j = 0; j < p; ++j) u[j] = rng.normal();
        const double r = std::pow(rng.uniform(), 1.0 / static_cast<double>(p));
        u *= r / u.norm();
        Vector v = llt.matrixU().solve(u);
        return Vector(beta0 + scale * v);
    };
    double worst = 0.0;
    for (std::size_t i = 0; i < n_pairs; ++i) {
        const Vector a = draw_point();
        const Vector b = draw_point();
        worst = std::max(worst, std::abs(prior_log_density(prior, a) - prior_log_density(prior, b)));
    }
    return 1.0 - std::exp(-worst);
}

// ---------------------------------------------------------------------------
// Variance treatment.

struct KnownVariance {
    double sigma2 = 1.0;
};
struct PlugInVariance {};
struct FullBayesVariance {
    double mu1 = 1.0;  // shape
    double mu2 = 1.0;  // scale
};

using VarianceSpec = std::variant<KnownVariance, PlugInVariance, FullBayesVariance>;

inline void validate_variance(const VarianceSpec& spec) {
    if (auto k = std::get_if<KnownVariance>(&spec)) require(k->sigma2 > 0.0, "known variance must be positive");
    if (auto f = std::get_if<FullBayesVariance>(&spec))
        require(f->mu1 > 0.5 && f->mu2 > 0.5, "inverse-gamma prior needs mu1 > 1/2 and mu2 > 1/2");
}

inline std::string variance_name(const VarianceSpec& spec) {
    if (std::holds_alternative<KnownVariance>(spec)) return "known";
    if (std::holds_alternative<PlugInVariance>(spec)) return "plugin";
    return "full_bayes";
}

struct DiracVariance {
    double value = 1.0;
};
struct InverseGammaVariance {
    double shape = 1.0;
    double scale = 1.0;
};
using VariancePosterior = std::variant<DiracVariance, InverseGammaVariance>;

inline VariancePosterior variance_posterior(const VarianceSpec& spec, const SlopePrior& prior,
                                            const LinearSummary& s) {
    validate_variance(spec);
    if (auto k = std::get_if<KnownVariance>(&spec)) return DiracVariance{k->sigma2};
    if (std::holds_alternative<PlugInVariance>(spec)) return DiracVariance{sigma_hat_u(s)};
    const auto& fb = std::get<FullBayesVariance>(spec);
    if (!std::holds_alternative<GaussianIsoPrior>(prior) && !std::holds_alternative<FlatPrior>(prior))
        throw ConfigError("closed-form inverse-gamma posterior needs a Gaussian slope prior; use the MCMC path");
    if (s.n_obs <= s.dim()) throw NumericalError("full-Bayes variance posterior needs n > p");
    const double n = static_cast<double>(s.n_obs);
    const double p = static_cast<double>(s.dim());
    const double rss = rss_from_summary(s, ols_from_summary(s));
    return InverseGammaVariance{fb.mu1 + n / 2.0 - p / 2.0, fb.mu2 + rss / 2.0};
}

inline VariancePosterior variance_posterior(const VarianceSpec& spec, const SlopePrior& prior,
                                            const RegressionProblem& problem) {
    if (std::holds_alternative<PlugInVariance>(spec)) return DiracVariance{sigma_hat_u(problem)};
    return variance_posterior(spec, prior, problem.summary());
}

// ---------------------------------------------------------------------------
// JSON: {"design": [[...]], "responses": [...], "true_beta": [...]|null,
//        "bias": [...]|null, "sigma0": number|null}

inline nlohmann::json vector_to_json(const Vector& v) {
    return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Vector vector_from_json(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

inline nlohmann::json to_json(const RegressionProblem& problem) {
    nlohmann::json rows = nlohmann::json::array();
    for (Index i = 0; i < problem.n(); ++i) rows.push_back(vector_to_json(problem.design().row(i).transpose()));
    auto opt = [](const std::optional<Vector>& v) { return v ? vector_to_json(*v) : nlohmann::json(nullptr); };
    return {{"design", rows},
            {"responses", vector_to_json(problem.responses())},
            {"true_beta", opt(problem.true_beta())},
            {"bias", opt(problem.bias())},
            {"sigma0", problem.sigma0() ? nlohmann::json(*problem.sigma0()) : nlohmann::json(nullptr)}};
}

inline RegressionProblem regression_problem_from_json(const nlohmann::json& j) {
    try {
        const auto& rows = j.at("design");
        require(rows.is_array() && !rows.empty(), "design must be a nonempty array of rows");
        const Index n = static_cast<Index>(rows.size());
        const Index p = static_cast<Index>(rows[0].size());
        Matrix design(n, p);
        for (Index i = 0; i < n; ++i) {
            require(static_cast<Index>(rows[i].size()) == p, "ragged design matrix");
            for (Index k = 0; k < p; ++k) design(i, k) = rows[i][k].get<double>();
        }
        auto opt = [&](const char* key) -> std::optional<Vector> {
            if (!j.contains(key) || j[key].is_null()) return std::nullopt;
            return vector_from_json(j[key]);
        };
        std::optional<double> sigma0;
        if (j.contains("sigma0") && !j["sigma0"].is_null()) sigma0 = j["sigma0"].get<double>();
        return RegressionProblem(std::move(design), vector_from_json(j.at("responses")), opt("true_beta"),
                                 opt("bias"), sigma0);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed regression problem JSON: ") + e.what());
    }
}

}  // namespace credband
