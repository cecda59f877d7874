#pragma once

// Quasi-posterior sampling under the Gaussian working likelihood
// (beta, sigma^2) -> (2 pi sigma^2)^{-n/2} exp(-||Y - X beta||^2 / (2 sigma^2))
// and credible-rectangle calibration.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "credband/errors.hpp"
#include "credband/io.hpp"
#include "credband/linmodel.hpp"
#include "credband/rng.hpp"

namespace credband {

enum class SamplerKind { ExactGaussian, GibbsNormalIG, MHWithinGibbs };

inline const char* to_string(SamplerKind k) {
    switch (k) {
        case SamplerKind::ExactGaussian: return "exact_gaussian";
        case SamplerKind::GibbsNormalIG: return "gibbs_normal_ig";
        case SamplerKind::MHWithinGibbs: return "mh_within_gibbs";
    }
    return "?";
}

struct SamplerDiagnostics {
    std::optional<double> acceptance_rate;  // absent for exact samplers
    Vector effective_sample_size;
    SamplerKind kind = SamplerKind::ExactGaussian;
};

struct PosteriorDraws {
    Matrix beta;                   // n_draws x p
    std::optional<Vector> sigma2;  // present for full-Bayes MCMC
    SamplerDiagnostics diagnostics;

    Index n_draws() const { return beta.rows(); }
    Index dim() const { return beta.cols(); }
};

inline constexpr std::size_t kMinMcmcDraws = 1000;
inline constexpr std::size_t kMinBurnIn = 2000;
inline constexpr double kTargetAcceptance = 0.44;
inline constexpr double kMinAcceptance = 0.1;
inline constexpr double kMaxAcceptance = 0.6;

inline std::size_t default_burn_in(std::size_t n_draws) {
    return std::max<std::size_t>(kMinBurnIn, n_draws / 5);
}

/// Effective sample size by Geyer's initial positive sequence: autocorrelations
/// are summed in consecutive pairs until a pair sum turns nonpositive.
inline double effective_sample_size(const Eigen::Ref<const Vector>& x) {
    const Index n = x.size();
    if (n < 4) return static_cast<double>(n);
    const Vector c = x.array() - x.mean();
    const double c0 = c.squaredNorm() / static_cast<double>(n);
    if (!(c0 > 0.0)) return static_cast<double>(n);
    auto rho = [&](Index lag) {
        return c.head(n - lag).dot(c.tail(n - lag)) / (static_cast<double>(n) * c0);
    };
    double tau = -1.0;  // tau = -1 + 2 sum_m Gamma_m, Gamma_0 includes rho_0 = 1
    for (Index m = 0; 2 * m + 1 < n; ++m) {
        const double gamma = (m == 0 ? 1.0 : rho(2 * m)) + rho(2 * m + 1);
        if (gamma <= 0.0) break;
        tau += 2.0 * gamma;
    }
    tau = std::max(tau, 1.0 / static_cast<double>(n));
    return std::min(static_cast<double>(n) / tau, static_cast<double>(n) * std::log10(static_cast<double>(n)));
}

namespace detail {

// sigma^2 treatment after resolving plug-in estimates.
struct ResolvedVariance {
    std::optional<double> fixed;  // Known / PlugIn
    std::optional<FullBayesVariance> full_bayes;
};

inline ResolvedVariance resolve_variance(const VarianceSpec& spec, const LinearSummary& s) {
    validate_variance(spec);
    if (auto k = std::get_if<KnownVariance>(&spec)) return {k->sigma2, std::nullopt};
    if (std::holds_alternative<PlugInVariance>(spec)) {
        const double v = sigma_hat_u(s);
        if (!(v > 0.0)) throw NumericalError("plug-in variance estimate is zero");
        return {v, std::nullopt};
    }
    return {std::nullopt, std::get<FullBayesVariance>(spec)};
}

inline Matrix standard_normals(Rng& rng, Index p, Index n) {
    Matrix z(p, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < p; ++j) z(j, i) = rng.normal();
    return z;
}

// Exact draws from N(Q^{-1} b, Q^{-1}) with Q = gram / sigma2 + prior precision.
inline PosteriorDraws sample_exact(const LinearSummary& s, const SlopePrior& prior, double sigma2,
                                   std::size_t n_draws, Rng& rng) {
    const Index p = s.dim();
    Matrix q = s.gram / sigma2;
    Vector b = s.xty / sigma2;
    if (auto g = std::get_if<GaussianIsoPrior>(&prior)) {
        const double prec = 1.0 / (g->sd * g->sd);
        q.diagonal().array() += prec;
        if (g->mean.size() != 0) {
            require(g->mean.size() == p, "Gaussian prior mean has wrong length");
            b += prec * g->mean;
        }
    } else {
        checked_cholesky(s.gram);
    }
    Eigen::LLT<Matrix> llt(q);
    if (llt.info() != Eigen::Success) throw NumericalError("posterior precision not positive definite");
    const Vector mean = llt.solve(b);
    Matrix z = standard_normals(rng, p, static_cast<Index>(n_draws));
    llt.matrixU().solveInPlace(z);  // L^T x = z  =>  x ~ N(0, Q^{-1})
    PosteriorDraws out;
    out.beta = (z.colwise() + mean).transpose();
    out.diagnostics.kind = SamplerKind::ExactGaussian;
    out.diagnostics.effective_sample_size = Vector::Constant(p, static_cast<double>(n_draws));
    return out;
}

inline void fill_ess(PosteriorDraws& d) {
    d.diagnostics.effective_sample_size.resize(d.dim());
    for (Index j = 0; j < d.dim(); ++j)
        d.diagnostics.effective_sample_size[j] = effective_sample_size(d.beta.col(j));
}

inline void check_ess(const PosteriorDraws& d) {
    const double min_ess = d.diagnostics.effective_sample_size.minCoeff();
    if (min_ess < static_cast<double>(d.n_draws()) / 100.0)
        throw SamplerError("minimum effective sample size " + format_double(min_ess) + " below n_draws/100");
}

// Alternating exact conditionals beta | sigma2 (Gaussian) and sigma2 | beta (IG).
inline PosteriorDraws sample_gibbs(const LinearSummary& s, const SlopePrior& prior, const FullBayesVariance& fb,
                                   std::size_t n_draws, std::size_t burn_in, Rng& rng) {
    const Index p = s.dim();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(s.gram);
    const Matrix& v = eig.eigenvectors();
    const Vector& d = eig.eigenvalues();
    double prior_prec = 0.0;
    Vector prior_shift = Vector::Zero(p);
    if (auto g = std::get_if<GaussianIsoPrior>(&prior)) {
        prior_prec = 1.0 / (g->sd * g->sd);
        if (g->mean.size() != 0) prior_shift = prior_prec * g->mean;
    } else {
        checked_cholesky(s.gram);
    }
    const Vector vt_xty = v.transpose() * s.xty;
    const Vector vt_shift = v.transpose() * prior_shift;
    const double shape = fb.mu1 + static_cast<double>(s.n_obs) / 2.0;

    double sigma2 = s.n_obs > p ? std::max(sigma_hat_u(s), 1e-300) : 1.0;
    PosteriorDraws out;
    out.beta.resize(static_cast<Index>(n_draws), p);
    out.sigma2 = Vector(static_cast<Index>(n_draws));
    Vector z(p);
    Vector beta(p);
    for (std::size_t it = 0; it < burn_in + n_draws; ++it) {
        const Vector prec = d.array() / sigma2 + prior_prec;
        for (Index j = 0; j < p; ++j) z[j] = rng.normal();
        const Vector eta = (vt_xty / sigma2 + vt_shift).cwiseQuotient(prec) + z.cwiseQuotient(prec.cwiseSqrt());
        beta = v * eta;
        sigma2 = rng.inverse_gamma(shape, fb.mu2 + rss_from_summary(s, beta) / 2.0);
        if (it >= burn_in) {
            const Index row = static_cast<Index>(it - burn_in);
            out.beta.row(row) = beta.transpose();
            (*out.sigma2)[row] = sigma2;
        }
    }
    out.diagnostics.kind = SamplerKind::GibbsNormalIG;
    fill_ess(out);
    check_ess(out);
    return out;
}

// Random-walk Metropolis per coordinate for product priors; sigma2 drawn from its
// inverse-gamma conditional (full Bayes) or held fixed. Proposal scales adapt in
// batches during burn-in toward 0.44 acceptance and are frozen afterwards.
inline PosteriorDraws sample_mh(const LinearSummary& s, const SlopePrior& prior, const ResolvedVariance& var,
                                std::size_t n_draws, std::size_t burn_in, Rng& rng) {
    const Index p = s.dim();
    constexpr std::size_t kBatch = 50;
    Vector beta = ols_from_summary(s);
    Vector gb = s.gram * beta;
    double sigma2 = var.fixed ? *var.fixed : (s.n_obs > p ? std::max(sigma_hat_u(s), 1e-300) : 1.0);
    const double shape = var.full_bayes ? var.full_bayes->mu1 + static_cast<double>(s.n_obs) / 2.0 : 0.0;

    Vector log_prop_sd(p);
    for (Index j = 0; j < p; ++j) log_prop_sd[j] = std::log(2.4 * std::sqrt(sigma2 / s.gram(j, j)));
    Vector log_prior(p);
    for (Index j = 0; j < p; ++j) log_prior[j] = coordinate_log_density(prior, beta[j]);

    std::vector<std::size_t> batch_accepts(static_cast<std::size_t>(p), 0);
    std::size_t kept_accepts = 0;
    std::size_t batch_index = 0;

    PosteriorDraws out;
    out.beta.resize(static_cast<Index>(n_draws), p);
    if (var.full_bayes) out.sigma2 = Vector(static_cast<Index>(n_draws));

    for (std::size_t it = 0; it < burn_in + n_draws; ++it) {
        const bool adapting = it < burn_in;
        for (Index j = 0; j < p; ++j) {
            const double step = std::exp(log_prop_sd[j]) * rng.normal();
            const double proposed = beta[j] + step;
            const double lp_new = coordinate_log_density(prior, proposed);
            const double dloglik =
                -(2.0 * step * (gb[j] - s.xty[j]) + step * step * s.gram(j, j)) / (2.0 * sigma2);
            const double log_ratio = dloglik + lp_new - log_prior[j];
            if (log_ratio >= 0.0 || std::log(rng.uniform()) < log_ratio) {
                beta[j] = proposed;
                log_prior[j] = lp_new;
                gb.noalias() += step * s.gram.col(j);
                if (adapting) ++batch_accepts[static_cast<std::size_t>(j)];
                else ++kept_accepts;
            }
        }
        if (var.full_bayes) {
            const double rss = std::max(0.0, s.yty - 2.0 * beta.dot(s.xty) + beta.dot(gb));
            sigma2 = rng.inverse_gamma(shape, var.full_bayes->mu2 + rss / 2.0);
        }
        if (adapting && (it + 1) % kBatch == 0) {
            ++batch_index;
            const double delta = std::min(0.1, 1.0 / std::sqrt(static_cast<double>(batch_index)));
            for (Index j = 0; j < p; ++j) {
                const double rate = static_cast<double>(batch_accepts[static_cast<std::size_t>(j)]) / kBatch;
                log_prop_sd[j] += rate > kTargetAcceptance ? delta : -delta;
                batch_accepts[static_cast<std::size_t>(j)] = 0;
            }
        }
        if (!adapting) {
            const Index row = static_cast<Index>(it - burn_in);
            out.beta.row(row) = beta.transpose();
            if (out.sigma2) (*out.sigma2)[row] = sigma2;
        }
    }
    const double rate = static_cast<double>(kept_accepts) / (static_cast<double>(n_draws) * static_cast<double>(p));
    out.diagnostics.kind = SamplerKind::MHWithinGibbs;
    out.diagnostics.acceptance_rate = rate;
    if (rate < kMinAcceptance || rate > kMaxAcceptance)
        throw SamplerError("acceptance rate " + format_double(rate) + " outside [0.1, 0.6]");
    fill_ess(out);
    check_ess(out);
    return out;
}

}  // namespace detail

/// Samples the quasi-posterior from sufficient statistics.
///
/// Routing: Gaussian or flat prior with known/plug-in variance draws exactly
/// from the conjugate Gaussian; Gaussian or flat prior with an inverse-gamma
/// variance prior runs a two-block Gibbs sampler; product priors run
/// Metropolis-within-Gibbs. `burn_in` defaults to max(2000, n_draws / 5) and is
/// ignored by the exact sampler.
inline PosteriorDraws sample_posterior(const LinearSummary& s, const SlopePrior& prior, const VarianceSpec& variance,
                                       std::size_t n_draws, std::optional<std::size_t> burn_in, std::uint64_t seed) {
    validate_prior(prior);
    require(n_draws >= 1, "n_draws must be at least 1");
    require(s.xty.size() == s.dim(), "summary dimension mismatch");
    Rng rng(seed);
    const detail::ResolvedVariance var = detail::resolve_variance(variance, s);
    const bool product = is_product_prior(prior);
    if (!product && var.fixed) return detail::sample_exact(s, prior, *var.fixed, n_draws, rng);

    require(n_draws >= kMinMcmcDraws, "MCMC samplers need n_draws >= 1000");
    const std::size_t burn = std::max(burn_in.value_or(default_burn_in(n_draws)), kMinBurnIn);
    if (!product) return detail::sample_gibbs(s, prior, *var.full_bayes, n_draws, burn, rng);
    return detail::sample_mh(s, prior, var, n_draws, burn, rng);
}

inline PosteriorDraws sample_posterior(const RegressionProblem& problem, const SlopePrior& prior,
                                       const VarianceSpec& variance, std::size_t n_draws,
                                       std::optional<std::size_t> burn_in, std::uint64_t seed) {
    // The plug-in estimate is taken from the explicit residual, not the summary.
    if (std::holds_alternative<PlugInVariance>(variance)) {
        const double v = sigma_hat_u(problem);
        // Residuals at rounding level mean the fit interpolates the data.
        const double floor = 1e-24 * problem.responses().squaredNorm() / static_cast<double>(problem.n());
        if (!(v > floor)) throw NumericalError("plug-in variance estimate is zero");
        return sample_posterior(problem.summary(), prior, KnownVariance{v}, n_draws, burn_in, seed);
    }
    return sample_posterior(problem.summary(), prior, variance, n_draws, burn_in, seed);
}

// ---------------------------------------------------------------------------
// Credible rectangles.

/// Rank (1-based) of the order statistic used as the empirical `level`
/// quantile of `n` values: ceil(level * n), clamped to [1, n].
inline std::size_t quantile_rank(std::size_t n, double level) {
    const double x = level * static_cast<double>(n);
    auto r = static_cast<std::size_t>(std::ceil(x - 1e-9 * std::max(1.0, x)));
    return std::clamp<std::size_t>(r, 1, n);
}

/// Order statistic of rank `quantile_rank(values.size(), level)`.
inline double empirical_quantile(std::vector<double> values, double level) {
    require(!values.empty(), "empirical_quantile of empty sample");
    const std::size_t k = quantile_rank(values.size(), level) - 1;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end());
    return values[k];
}

/// Relative slack on closed-boundary comparisons, absorbing the rounding of
/// (c + w R) - c versus w R.
inline constexpr double kBoundaryRelTol = 1e-12;

/// Weighted sup-distance max_j |beta_j - c_j| / w_j of every draw.
inline std::vector<double> weighted_max_deviation(const Matrix& beta, const Vector& center, const Vector& weights) {
    std::vector<double> m(static_cast<std::size_t>(beta.rows()));
    const Vector inv_w = weights.cwiseInverse();
    for (Index i = 0; i < beta.rows(); ++i)
        m[static_cast<std::size_t>(i)] = ((beta.row(i).transpose() - center).cwiseAbs().cwiseProduct(inv_w)).maxCoeff();
    return m;
}

inline void check_quantile_feasible(std::size_t n_draws, double alpha) {
    require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    if (static_cast<double>(n_draws) * std::min(alpha, 1.0 - alpha) < 50.0)
        throw ConfigError("too few draws (" + std::to_string(n_draws) + ") for a quantile at alpha = " +
                          format_double(alpha));
}

/// R_alpha: the ceil((1 - alpha) n_draws)-th order statistic of
/// max_j |beta_j - center_j| / w_j over the draws.
inline double credible_radius(const PosteriorDraws& draws, const Vector& center, const Vector& weights, double alpha) {
    require(center.size() == draws.dim() && weights.size() == draws.dim(), "credible_radius: dimension mismatch");
    require((weights.array() > 0.0).all(), "weights must be strictly positive");
    check_quantile_feasible(static_cast<std::size_t>(draws.n_draws()), alpha);
    return empirical_quantile(weighted_max_deviation(draws.beta, center, weights), 1.0 - alpha);
}

struct CredibleRectangle {
    Vector center;
    Vector weights;
    double radius = 0.0;
    double alpha = 0.1;
};

inline CredibleRectangle make_credible_rectangle(const PosteriorDraws& draws, const Vector& center,
                                                 const Vector& weights, double alpha) {
    return {center, weights, credible_radius(draws, center, weights, alpha), alpha};
}

/// Closed rectangle: max_j |beta_j - c_j| / w_j <= R.
inline bool rectangle_contains(const CredibleRectangle& rect, const Vector& beta) {
    require(beta.size() == rect.center.size(), "rectangle_contains: dimension mismatch");
    for (Index j = 0; j < beta.size(); ++j)
        if (std::abs(beta[j] - rect.center[j]) > rect.radius * rect.weights[j] * (1.0 + kBoundaryRelTol)) return false;
    return true;
}

/// CSV dump: header beta_1..beta_p[,sigma2], one row per draw.
inline void write_draws_csv(std::ostream& os, const PosteriorDraws& draws) {
    CsvWriter csv(os);
    std::vector<std::string> header;
    for (Index j = 0; j < draws.dim(); ++j) header.push_back("beta_" + std::to_string(j + 1));
    if (draws.sigma2) header.emplace_back("sigma2");
    csv.row(header);
    for (Index i = 0; i < draws.n_draws(); ++i) {
        std::vector<std::string> cells;
        for (Index j = 0; j < draws.dim(); ++j) cells.push_back(format_double(draws.beta(i, j)));
        if (draws.sigma2) cells.push_back(format_double((*draws.sigma2)[i]));
        csv.row(cells);
    }
}

}  // namespace credband
