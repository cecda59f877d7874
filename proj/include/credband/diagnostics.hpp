#pragma once

// Numerical companions: Gaussian-maximum functionals, the radius bound
// functionals with unit constants, a rectangle-class discrepancy between a
// posterior sample and its Gaussian approximation, and rate skeletons.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "credband/errors.hpp"
#include "credband/linmodel.hpp"
#include "credband/posterior.hpp"
#include "credband/rng.hpp"

namespace credband {

struct MonteCarloEstimate {
    double value = 0.0;
    double se = 0.0;
};

/// E[max_i |N_i / w_i|] by Monte Carlo.
inline MonteCarloEstimate gaussian_max_expectation(const Vector& weights, std::size_t draws, std::uint64_t seed) {
    require(weights.size() >= 1, "need at least one weight");
    require((weights.array() > 0.0).all(), "weights must be strictly positive");
    require(draws >= 10000, "gaussian_max_expectation needs draws >= 1e4");
    Rng rng(seed);
    const Vector inv = weights.cwiseInverse();
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t d = 0; d < draws; ++d) {
        double m = 0.0;
        for (Index i = 0; i < weights.size(); ++i) m = std::max(m, std::abs(rng.normal()) * inv[i]);
        sum += m;
        sum2 += m * m;
    }
    const double nd = static_cast<double>(draws);
    const double mean = sum / nd;
    const double var = std::max(0.0, (sum2 / nd - mean * mean) * nd / (nd - 1.0));
    return {mean, std::sqrt(var / nd)};
}

/// Monte Carlo `level`-quantile of max_i |N_i / w_i|.
inline double gaussian_max_quantile(const Vector& weights, double level, std::size_t draws, std::uint64_t seed) {
    require((weights.array() > 0.0).all(), "weights must be strictly positive");
    require(draws >= 1, "need at least one draw");
    Rng rng(seed);
    const Vector inv = weights.cwiseInverse();
    std::vector<double> m(draws);
    for (double& v : m) {
        v = 0.0;
        for (Index i = 0; i < weights.size(); ++i) v = std::max(v, std::abs(rng.normal()) * inv[i]);
    }
    return empirical_quantile(std::move(m), level);
}

/// True iff the Monte Carlo E[max_i |N_i|] exceeds sqrt(log p) / 12 by more
/// than three standard errors.
inline bool gaussian_max_lower_check(Index p, std::size_t draws, std::uint64_t seed) {
    require(p >= 2, "gaussian_max_lower_check needs p >= 2");
    const MonteCarloEstimate e = gaussian_max_expectation(Vector::Ones(p), draws, seed);
    return e.value - std::sqrt(std::log(static_cast<double>(p))) / 12.0 > 3.0 * e.se;
}

struct RadiusBounds {
    double lower = 0.0;
    double upper = 0.0;
};

/// Radius bound functionals with unit constants, where lambda_max / lambda_min
/// are the extreme eigenvalues of (X^T X)^{-1}:
///   lower = sigma0 lambda_min^{1/2} sqrt(log p) / max_j w_j
///   upper = sigma0 lambda_max^{1/2} E[max_j |N_j / w_j|].
inline RadiusBounds radius_bounds(double sigma0, double lambda_max, double lambda_min, const Vector& weights,
                                  std::size_t draws, std::uint64_t seed) {
    require(lambda_max >= lambda_min && lambda_min > 0.0, "need lambda_max >= lambda_min > 0");
    require(sigma0 > 0.0, "sigma0 must be positive");
    const double p = static_cast<double>(weights.size());
    RadiusBounds b;
    b.lower = sigma0 * std::sqrt(lambda_min) * std::sqrt(std::log(p)) / weights.maxCoeff();
    b.upper = sigma0 * std::sqrt(lambda_max) * gaussian_max_expectation(weights, draws, seed).value;
    return b;
}

// ---------------------------------------------------------------------------
// Rectangle-class discrepancy.

struct DiscrepancyEstimate {
    double value = 0.0;
    std::size_t n_rectangles = 0;
    double mc_se = 0.0;
};

struct DiscrepancyOptions {
    std::size_t bootstrap_reps = 200;
    std::size_t blocks = 100;
    int halfspace_levels = 21;
};

namespace detail {

struct Rectangle {
    std::vector<Index> coords;
    std::vector<double> lo, hi;
};

/// Per-block counts of sample rows falling in each rectangle
/// (rectangle-major, `blocks` entries each).
inline std::vector<double> block_counts(const Matrix& x, const std::vector<Rectangle>& rects, std::size_t blocks) {
    const Index n = x.rows();
    std::vector<double> counts(rects.size() * blocks, 0.0);
    for (std::size_t r = 0; r < rects.size(); ++r) {
        const Rectangle& rect = rects[r];
        for (Index i = 0; i < n; ++i) {
            bool in = true;
            for (std::size_t c = 0; c < rect.coords.size() && in; ++c) {
                const double v = x(i, rect.coords[c]);
                in = v >= rect.lo[c] && v <= rect.hi[c];
            }
            if (in) counts[r * blocks + static_cast<std::size_t>(i * static_cast<Index>(blocks) / n)] += 1.0;
        }
    }
    return counts;
}

inline std::vector<double> block_sizes(Index n, std::size_t blocks) {
    std::vector<double> s(blocks, 0.0);
    for (Index i = 0; i < n; ++i) s[static_cast<std::size_t>(i * static_cast<Index>(blocks) / n)] += 1.0;
    return s;
}

}  // namespace detail

/// Maximum absolute difference of empirical probabilities between the
/// posterior draws and exact draws from N(target_mean, target_cov), over
/// `n_rect` random axis-aligned rectangles plus one-sided half-spaces per
/// coordinate at 21 pooled quantile levels.
///
/// Random rectangles constrain a random number k of coordinates; each side
/// spans pooled quantile levels [u, u + m^{1/k}] inside [0.01, 0.99] with
/// target mass m uniform on [0.2, 0.8], so joint constraints keep
/// non-negligible mass in high dimension.
///
/// mc_se is the root-mean-square of the centered block-bootstrap statistic
/// max_r |(P*_a - P_a) - (P*_b - P_b)|, the noise floor of the estimate.
inline DiscrepancyEstimate rectangle_discrepancy(const Matrix& draws, const Vector& target_mean,
                                                 const Matrix& target_cov, std::size_t n_rect,
                                                 std::size_t gauss_draws, std::uint64_t seed,
                                                 const DiscrepancyOptions& opts = {}) {
    const Index p = draws.cols();
    require(target_mean.size() == p && target_cov.rows() == p && target_cov.cols() == p,
            "rectangle_discrepancy: dimension mismatch");
    require(n_rect >= 200, "rectangle_discrepancy needs n_rect >= 200");
    require(draws.rows() >= 10000 && gauss_draws >= 10000, "rectangle_discrepancy needs >= 1e4 samples per set");
    Rng rng(seed);

    Eigen::LLT<Matrix> llt(target_cov);
    if (llt.info() != Eigen::Success) throw NumericalError("target covariance is not positive definite");
    const Matrix z = detail::standard_normals(rng, p, static_cast<Index>(gauss_draws));
    const Matrix gauss = ((llt.matrixL() * z).colwise() + target_mean).transpose();

    // Pooled per-coordinate quantiles.
    auto pooled_quantile = [](double level, const std::vector<double>& col) {
        return col[std::min(col.size() - 1, static_cast<std::size_t>(level * static_cast<double>(col.size())))];
    };
    std::vector<std::vector<double>> sorted(static_cast<std::size_t>(p));
    for (Index j = 0; j < p; ++j) {
        auto& col = sorted[static_cast<std::size_t>(j)];
        col.reserve(static_cast<std::size_t>(draws.rows() + gauss.rows()));
        for (Index i = 0; i < draws.rows(); ++i) col.push_back(draws(i, j));
        for (Index i = 0; i < gauss.rows(); ++i) col.push_back(gauss(i, j));
        std::sort(col.begin(), col.end());
    }

    std::vector<detail::Rectangle> rects;
    const double inf = std::numeric_limits<double>::infinity();
    for (Index j = 0; j < p; ++j)
        for (int h = 0; h < opts.halfspace_levels; ++h) {
            const double level = 0.01 + 0.98 * h / static_cast<double>(opts.halfspace_levels - 1);
            rects.push_back({{j}, {-inf}, {pooled_quantile(level, sorted[static_cast<std::size_t>(j)])}});
        }
    std::vector<Index> perm(static_cast<std::size_t>(p));
    for (std::size_t r = 0; r < n_rect; ++r) {
        const Index k = 1 + std::min<Index>(p - 1, static_cast<Index>(rng.uniform() * static_cast<double>(p)));
        std::iota(perm.begin(), perm.end(), Index{0});
        for (Index i = 0; i < k; ++i) {  // partial Fisher-Yates
            const Index swap = i + std::min<Index>(p - i - 1, static_cast<Index>(rng.uniform() * static_cast<double>(p - i)));
            std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(swap)]);
        }
        const double mass = 0.2 + 0.6 * rng.uniform();
        const double width = std::min(0.98, std::pow(mass, 1.0 / static_cast<double>(k)));
        detail::Rectangle rect;
        for (Index i = 0; i < k; ++i) {
            const Index j = perm[static_cast<std::size_t>(i)];
            const double u = 0.01 + (0.98 - width) * rng.uniform();
            auto& col = sorted[static_cast<std::size_t>(j)];
            rect.coords.push_back(j);
            rect.lo.push_back(pooled_quantile(u, col));
            rect.hi.push_back(pooled_quantile(u + width, col));
        }
        rects.push_back(std::move(rect));
    }

    const std::size_t nb = opts.blocks;
    const std::vector<double> ca = detail::block_counts(draws, rects, nb);
    const std::vector<double> cb = detail::block_counts(gauss, rects, nb);
    const std::vector<double> sa = detail::block_sizes(draws.rows(), nb);
    const std::vector<double> sb = detail::block_sizes(gauss.rows(), nb);
    const double na = static_cast<double>(draws.rows()), ngauss = static_cast<double>(gauss.rows());

    std::vector<double> pa(rects.size()), pb(rects.size());
    double value = 0.0;
    for (std::size_t r = 0; r < rects.size(); ++r) {
        pa[r] = std::accumulate(ca.begin() + static_cast<std::ptrdiff_t>(r * nb),
                                ca.begin() + static_cast<std::ptrdiff_t>((r + 1) * nb), 0.0) / na;
        pb[r] = std::accumulate(cb.begin() + static_cast<std::ptrdiff_t>(r * nb),
                                cb.begin() + static_cast<std::ptrdiff_t>((r + 1) * nb), 0.0) / ngauss;
        value = std::max(value, std::abs(pa[r] - pb[r]));
    }

    double sum_sq = 0.0;
    std::vector<double> ma(nb), mb(nb);
    for (std::size_t b = 0; b < opts.bootstrap_reps; ++b) {
        std::fill(ma.begin(), ma.end(), 0.0);
        std::fill(mb.begin(), mb.end(), 0.0);
        for (std::size_t i = 0; i < nb; ++i) {
            ma[std::min(nb - 1, static_cast<std::size_t>(rng.uniform() * static_cast<double>(nb)))] += 1.0;
            mb[std::min(nb - 1, static_cast<std::size_t>(rng.uniform() * static_cast<double>(nb)))] += 1.0;
        }
        double ta = 0.0, tb = 0.0;
        for (std::size_t i = 0; i < nb; ++i) {
            ta += ma[i] * sa[i];
            tb += mb[i] * sb[i];
        }
        double worst = 0.0;
        for (std::size_t r = 0; r < rects.size(); ++r) {
            double xa = 0.0, xb = 0.0;
            for (std::size_t i = 0; i < nb; ++i) {
                xa += ma[i] * ca[r * nb + i];
                xb += mb[i] * cb[r * nb + i];
            }
            worst = std::max(worst, std::abs((xa / ta - pa[r]) - (xb / tb - pb[r])));
        }
        sum_sq += worst * worst;
    }
    DiscrepancyEstimate e;
    e.value = std::clamp(value, 0.0, 1.0);
    e.n_rectangles = rects.size();
    e.mc_se = std::sqrt(sum_sq / static_cast<double>(opts.bootstrap_reps));
    return e;
}

inline DiscrepancyEstimate rectangle_discrepancy(const PosteriorDraws& draws, const Vector& target_mean,
                                                 const Matrix& target_cov, std::size_t n_rect,
                                                 std::size_t gauss_draws, std::uint64_t seed,
                                                 const DiscrepancyOptions& opts = {}) {
    return rectangle_discrepancy(draws.beta, target_mean, target_cov, n_rect, gauss_draws, seed, opts);
}

/// True if `values` is monotone in the given direction, allowing at most one
/// adjacent inversion whose size is within k * max(se_i, se_{i+1}).
inline bool monotone_with_tolerance(const std::vector<double>& values, const std::vector<double>& ses,
                                    bool nonincreasing, double k = 2.0) {
    require(values.size() == ses.size(), "values and standard errors differ in length");
    int inversions = 0;
    for (std::size_t i = 0; i + 1 < values.size(); ++i) {
        const double step = nonincreasing ? values[i + 1] - values[i] : values[i] - values[i + 1];
        if (step <= 0.0) continue;
        if (step > k * std::max(ses[i], ses[i + 1])) return false;
        if (++inversions > 1) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Rates.

enum class RateModel { WhiteNoise, MildInverse, SevereInverse, Gumbel };

inline RateModel rate_model_from_string(const std::string& s) {
    if (s == "white_noise") return RateModel::WhiteNoise;
    if (s == "mild_inverse") return RateModel::MildInverse;
    if (s == "severe_inverse") return RateModel::SevereInverse;
    if (s == "gumbel") return RateModel::Gumbel;
    throw ConfigError("unknown rate model '" + s + "'");
}

/// Rate skeleton with unit constant.
inline double theoretical_rate(RateModel model, double s, double r, double n) {
    require(n >= 3.0, "theoretical_rate needs n >= 3");
    const double ln = std::log(n);
    switch (model) {
        case RateModel::WhiteNoise: return std::pow(n / ln, -s / (2.0 * s + 1.0));
        case RateModel::MildInverse: return std::pow(n / ln, -s / (2.0 * s + 2.0 * r + 1.0));
        case RateModel::SevereInverse: return std::pow(ln, -s);
        case RateModel::Gumbel: return 1.0 / ln;
    }
    return 0.0;
}

struct RateFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
};

enum class RateAxis { NOverLogN, LogLogN };

/// Least squares of log(value) on log(n / log n), or on log(log n).
inline RateFit rate_fit(const std::vector<std::pair<double, double>>& points, RateAxis axis = RateAxis::NOverLogN) {
    require(points.size() >= 3, "rate_fit needs at least 3 points");
    std::vector<double> x, y;
    for (const auto& [n, v] : points) {
        require(n > 1.0, "rate_fit needs n > 1");
        if (!(v > 0.0)) throw NumericalError("rate_fit needs positive values");
        x.push_back(axis == RateAxis::NOverLogN ? std::log(n / std::log(n)) : std::log(std::log(n)));
        y.push_back(std::log(v));
    }
    const double m = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / m;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / m;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    require(sxx > 0.0, "rate_fit needs distinct n");
    RateFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.r_squared = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
    return f;
}

}  // namespace credband
