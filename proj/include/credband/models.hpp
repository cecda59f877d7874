#pragma once

// Application pipelines: Gaussian white noise, linear inverse problems with a
// diagonal wavelet-vaguelette operator, and nonparametric series regression.
// Each reduces to the sieve regression of linmodel and is calibrated by the
// posterior machinery.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "credband/errors.hpp"
#include "credband/linmodel.hpp"
#include "credband/posterior.hpp"
#include "credband/rng.hpp"
#include "credband/wavelet.hpp"

namespace credband {

// ---------------------------------------------------------------------------
// Level weights w_l for l = J0 - 1 .. L_max.

class LevelWeights {
public:
    LevelWeights() = default;
    LevelWeights(int j0, std::vector<double> values) : j0_(j0), w_(std::move(values)) {
        require(!w_.empty(), "empty weight sequence");
        for (double v : w_) require(v > 0.0 && std::isfinite(v), "weights must be positive and finite");
    }

    int j0() const { return j0_; }
    int l_max() const { return j0_ - 2 + static_cast<int>(w_.size()); }
    double at(int l) const {
        require(l >= j0_ - 1 && l <= l_max(), "weight level out of range");
        return w_[static_cast<std::size_t>(l - (j0_ - 1))];
    }
    const std::vector<double>& values() const { return w_; }

    /// One weight per coordinate of the sieve I(J), level-major.
    Vector per_coordinate(int j) const {
        const CoeffField layout(j0_, j - 1);
        Vector out(layout.size());
        for (Index i = 0; i < layout.size(); ++i) out[i] = at(layout.level_of(i));
        return out;
    }

    LevelWeights scaled(double c) const {
        std::vector<double> v = w_;
        for (double& x : v) x *= c;
        return {j0_, std::move(v)};
    }

private:
    int j0_ = 0;
    std::vector<double> w_;
};

/// w_l = max(1, sqrt l) below the cutoff J, sqrt(l) (1 + log(1 + l - J))
/// from J on, and max(1, sqrt J0) on the scaling row.
inline LevelWeights default_weights(int j0, int cutoff, int l_max) {
    std::vector<double> w;
    for (int l = j0 - 1; l <= l_max; ++l) {
        if (l == j0 - 1) w.push_back(std::max(1.0, std::sqrt(static_cast<double>(j0))));
        else if (l < cutoff) w.push_back(std::max(1.0, std::sqrt(static_cast<double>(l))));
        else w.push_back(std::max(1.0, std::sqrt(static_cast<double>(l))) * (1.0 + std::log(1.0 + l - cutoff)));
    }
    return {j0, std::move(w)};
}

inline LevelWeights unit_weights(int j0, int l_max) {
    return {j0, std::vector<double>(static_cast<std::size_t>(l_max - j0 + 2), 1.0)};
}

/// Checks sqrt(l) <= w_l for l >= max(J0 - 1, 1) and that w_l / sqrt(l) is
/// nondecreasing from the cutoff on.
inline void check_admissible(const LevelWeights& w, int cutoff) {
    for (int l = std::max(w.j0() - 1, 1); l <= w.l_max(); ++l)
        if (w.at(l) < std::sqrt(static_cast<double>(l)) * (1.0 - 1e-12))
            throw ConfigError("weights violate sqrt(l) <= w_l at level " + std::to_string(l));
    for (int l = std::max(cutoff, 1); l < w.l_max(); ++l)
        if (w.at(l + 1) / std::sqrt(l + 1.0) < w.at(l) / std::sqrt(static_cast<double>(l)) * (1.0 - 1e-12))
            throw ConfigError("w_l / sqrt(l) must be nondecreasing beyond the cutoff (level " + std::to_string(l) + ")");
}

// ---------------------------------------------------------------------------

struct SequenceData {
    CoeffField observations;
    double noise_scale = 1.0;  // n^{-1/2}
    Index n = 1;
    std::optional<CoeffField> kappa;
};

enum class Centering { FInfinity, FJ };
enum class BandKind { CastilloNicklInfty, CastilloNicklJ, InverseProblem, RegressionSup, GumbelBaseline };

inline const char* to_string(BandKind k) {
    switch (k) {
        case BandKind::CastilloNicklInfty: return "castillo_nickl_infty";
        case BandKind::CastilloNicklJ: return "castillo_nickl_j";
        case BandKind::InverseProblem: return "inverse_problem";
        case BandKind::RegressionSup: return "regression_sup";
        case BandKind::GumbelBaseline: return "gumbel_baseline";
    }
    return "?";
}

struct Band {
    CoeffField center;
    LevelWeights weights;
    double radius = 0.0;
    double alpha = 0.1;
    int cutoff = 0;
    BandKind kind = BandKind::CastilloNicklInfty;
};

/// Y_{l,k} = beta0_{l,k} + eps_{l,k}, eps iid N(0, 1/n), for all levels up to
/// L_max. `noise_sd` overrides n^{-1/2} (zero gives the noiseless limit).
inline SequenceData simulate_white_noise(const CoeffField& f0, Index n, int l_max, std::uint64_t seed,
                                         std::optional<double> noise_sd = {}) {
    require(n >= 1, "n must be positive");
    require(f0.l_max() <= l_max, "f0 has levels above L_max");
    SequenceData d;
    d.n = n;
    d.noise_scale = 1.0 / std::sqrt(static_cast<double>(n));
    const double sd = noise_sd.value_or(d.noise_scale);
    d.observations = f0.resized(l_max);
    Rng rng(seed);
    for (Index i = 0; i < d.observations.size(); ++i) d.observations[i] += sd * rng.normal();
    return d;
}

namespace detail {

inline Vector sieve_kappa(const SequenceData& data, int cutoff) {
    return data.kappa ? data.kappa->sieve(cutoff) : Vector::Ones(pow2(cutoff));
}

}  // namespace detail

/// Sufficient statistics of the sieve regression with p = 2^J, X = diag(kappa)
/// on I(J); coefficients above J enter only as residuals (used by the
/// plug-in variance).
inline LinearSummary sieve_summary(const SequenceData& data, int cutoff) {
    const CoeffField& y = data.observations;
    require(cutoff >= y.j0() && cutoff <= y.l_max(), "cutoff J must satisfy J0 <= J <= L_max");
    const Vector kappa = detail::sieve_kappa(data, cutoff);
    LinearSummary s;
    s.gram = kappa.cwiseAbs2().asDiagonal();
    s.xty = kappa.cwiseProduct(y.sieve(cutoff));
    s.yty = Eigen::Map<const Vector>(y.data().data(), y.size()).squaredNorm();
    s.n_obs = y.size();
    return s;
}

/// Coefficientwise OLS centering kappa^{-1} Y, over all observed levels.
inline CoeffField ols_center(const SequenceData& data) {
    CoeffField c = data.observations;
    if (data.kappa)
        for (Index i = 0; i < c.size(); ++i) c[i] /= (*data.kappa)[i];
    return c;
}

struct SieveBandOptions {
    std::optional<VarianceSpec> variance;  // default: Known(noise_scale^2)
    std::optional<std::size_t> burn_in;
};

/// Posterior draws of the sieve coefficients plus the calibrated radius.
struct SieveFit {
    PosteriorDraws draws;
    Vector center;  // OLS on I(J)
    Vector coordinate_weights;
    double radius = 0.0;
};

inline SieveFit fit_sieve(const SequenceData& data, const SlopePrior& prior, const LevelWeights& weights, int cutoff,
                          double alpha, std::size_t n_draws, std::uint64_t seed, const SieveBandOptions& opts = {}) {
    const LinearSummary s = sieve_summary(data, cutoff);
    const VarianceSpec var = opts.variance.value_or(KnownVariance{data.noise_scale * data.noise_scale});
    SieveFit fit;
    fit.draws = sample_posterior(s, prior, var, n_draws, opts.burn_in, seed);
    fit.center = ols_center(data).sieve(cutoff);
    fit.coordinate_weights = weights.per_coordinate(cutoff);
    fit.radius = credible_radius(fit.draws, fit.center, fit.coordinate_weights, alpha);
    return fit;
}

/// Multiscale band C_w(f_hat, R_alpha) from a sieve prior with p = 2^J.
/// The radius is calibrated on the truncated centering; the returned center
/// keeps all observed levels (FInfinity) or only levels below J (FJ).
inline Band castillo_nickl_band(const SequenceData& data, const SlopePrior& prior, const LevelWeights& weights,
                                int cutoff, Centering centering, double alpha, std::size_t n_draws,
                                std::uint64_t seed, const SieveBandOptions& opts = {}) {
    require(weights.j0() == data.observations.j0() && weights.l_max() >= data.observations.l_max(),
            "weights must cover every observed level");
    check_admissible(weights, cutoff);
    const SieveFit fit = fit_sieve(data, prior, weights, cutoff, alpha, n_draws, seed, opts);
    Band b;
    b.center = centering == Centering::FInfinity ? ols_center(data) : ols_center(data).truncated(cutoff);
    b.weights = weights;
    b.radius = fit.radius;
    b.alpha = alpha;
    b.cutoff = cutoff;
    b.kind = centering == Centering::FInfinity ? BandKind::CastilloNicklInfty : BandKind::CastilloNicklJ;
    return b;
}

/// sup_{(l,k), l <= L_max} |f_{l,k} - center_{l,k}| / w_l <= R (closed).
inline bool band_contains(const Band& band, const CoeffField& f) {
    require(f.j0() == band.center.j0(), "band_contains: J0 mismatch");
    require(f.l_max() <= band.center.l_max(), "band_contains: field exceeds the band's levels");
    const CoeffField g = f.resized(band.center.l_max());
    for (Index i = 0; i < g.size(); ++i) {
        const double w = band.weights.at(g.level_of(i));
        if (std::abs(g[i] - band.center[i]) > band.radius * w * (1.0 + kBoundaryRelTol)) return false;
    }
    return true;
}

/// Sup-norm diameter of the coefficient box {|f - center| <= R w_l} intersected
/// with {|beta_{l,k}| <= B 2^{-l(s+1/2)}}: 2 max_t sum_{l,k} c_l |psi_{l,k}(t)|
/// with c_l = min(R w_l, B 2^{-l(s+1/2)}), maximized over a uniform grid.
inline double band_linf_diameter(const WaveletBasis& basis, const Band& band, double bound, double s,
                                 Index grid_size) {
    require(bound > 0.0 && s > 0.0, "B and s must be positive");
    require(grid_size >= 1, "grid_size must be positive");
    const int j0 = band.center.j0();
    std::vector<double> c;
    for (int l = j0 - 1; l <= band.center.l_max(); ++l)
        c.push_back(std::min(band.radius * band.weights.at(l), besov_envelope(l, j0, s, bound)));
    double best = 0.0;
    // Haar: every t sees one basis function of modulus 2^{l/2} per level.
    const Index points = basis.family() == WaveletFamily::Haar ? 1 : grid_size;
    for (Index i = 0; i < points; ++i) {
        const double t = (static_cast<double>(i) + 0.5) / static_cast<double>(points);
        double acc = 0.0;
        for (int l = j0 - 1; l <= band.center.l_max(); ++l) {
            const double cl = c[static_cast<std::size_t>(l - (j0 - 1))];
            if (cl == 0.0) continue;
            basis.for_each_active(l, t, [&](Index, double v) { acc += cl * std::abs(v); });
        }
        best = std::max(best, acc);
    }
    return 2.0 * best;
}

/// Pointwise envelope of the band in function space: center(t) -/+ R sum_{l,k} w_l |psi_{l,k}(t)|.
struct BandEnvelope {
    Vector t, lower, upper;
};

inline BandEnvelope band_envelope(const WaveletBasis& basis, const Band& band, const Vector& grid) {
    BandEnvelope e;
    e.t = grid;
    const Vector center = eval_function(basis, band.center, grid);
    Vector half(grid.size());
    for (Index i = 0; i < grid.size(); ++i) {
        double acc = 0.0;
        for (int l = band.center.j0() - 1; l <= band.center.l_max(); ++l) {
            const double w = band.weights.at(l);
            basis.for_each_active(l, grid[i], [&](Index, double v) { acc += w * std::abs(v); });
        }
        half[i] = band.radius * acc;
    }
    e.lower = center - half;
    e.upper = center + half;
    return e;
}

/// Envelope of the band intersected with {|beta_{l,k}| <= B 2^{-l(s+1/2)}}.
/// Each coefficient ranges over its own interval, so the pointwise bounds are
/// exact. A coefficient whose two constraints do not overlap is pinned to the
/// nearest point of the smoothness box.
inline BandEnvelope band_envelope(const WaveletBasis& basis, const Band& band, const Vector& grid, double bound,
                                  double s) {
    require(bound > 0.0 && s > 0.0, "B and s must be positive");
    const CoeffField& c = band.center;
    CoeffField lo(c.j0(), c.l_max()), hi(c.j0(), c.l_max());
    for (int l = c.j0() - 1; l <= c.l_max(); ++l) {
        const double half = band.radius * band.weights.at(l);
        const double cap = besov_envelope(l, c.j0(), s, bound);
        for (Index k = 0; k < c.level_size(l); ++k) {
            double a = std::max(c.at(l, k) - half, -cap), b = std::min(c.at(l, k) + half, cap);
            if (a > b) a = b = std::clamp(c.at(l, k), -cap, cap);
            lo.at(l, k) = a;
            hi.at(l, k) = b;
        }
    }
    BandEnvelope e;
    e.t = grid;
    e.lower = Vector::Zero(grid.size());
    e.upper = Vector::Zero(grid.size());
    for (Index i = 0; i < grid.size(); ++i)
        for (int l = c.j0() - 1; l <= c.l_max(); ++l)
            basis.for_each_active(l, grid[i], [&](Index k, double v) {
                const double a = v * lo.at(l, k), b = v * hi.at(l, k);
                e.lower[i] += std::min(a, b);
                e.upper[i] += std::max(a, b);
            });
    return e;
}

// ---------------------------------------------------------------------------
// Linear inverse problems.

struct IllPosedness {
    enum class Kind { Mild, Severe } kind = Kind::Mild;
    double r = 0.0;
};

inline double kappa_at_level(const IllPosedness& prof, int l, int j0) {
    if (l < j0) return 1.0;
    if (prof.kind == IllPosedness::Kind::Mild) return std::pow(2.0, -prof.r * l);
    return std::exp(-prof.r * std::ldexp(1.0, l));
}

inline CoeffField kappa_field(const IllPosedness& prof, int j0, int l_max) {
    require(prof.r >= 0.0, "ill-posedness exponent must be nonnegative");
    CoeffField k(j0, l_max);
    for (int l = j0 - 1; l <= l_max; ++l) {
        const double v = kappa_at_level(prof, l, j0);
        if (!(v >= 1e-300)) throw NumericalError("kappa underflows below 1e-300 at level " + std::to_string(l));
        for (Index i = 0; i < k.level_size(l); ++i) k.at(l, i) = v;
    }
    return k;
}

/// Y~_{l,k} = kappa_{l,k} beta0_{l,k} + eps_{l,k} / sqrt(n) (orthonormal vaguelettes).
inline SequenceData simulate_inverse_problem(const CoeffField& f0, const IllPosedness& prof, Index n, int l_max,
                                             std::uint64_t seed, std::optional<double> noise_sd = {}) {
    require(n >= 1, "n must be positive");
    require(f0.l_max() <= l_max, "f0 has levels above L_max");
    const CoeffField kappa = kappa_field(prof, f0.j0(), l_max);
    SequenceData d;
    d.n = n;
    d.noise_scale = 1.0 / std::sqrt(static_cast<double>(n));
    const double sd = noise_sd.value_or(d.noise_scale);
    d.observations = f0.resized(l_max);
    Rng rng(seed);
    for (Index i = 0; i < d.observations.size(); ++i)
        d.observations[i] = kappa[i] * d.observations[i] + sd * rng.normal();
    d.kappa = kappa;
    return d;
}

/// Default weights for inverse problems: kappa_l^{-1} times the default
/// white-noise weights (kappa is constant within a level).
inline LevelWeights inverse_default_weights(const CoeffField& kappa, int cutoff) {
    const LevelWeights base = default_weights(kappa.j0(), cutoff, kappa.l_max());
    std::vector<double> w;
    for (int l = kappa.j0() - 1; l <= kappa.l_max(); ++l) {
        double kmax = 0.0, kmin = std::numeric_limits<double>::infinity();
        for (Index k = 0; k < kappa.level_size(l); ++k) {
            kmax = std::max(kmax, kappa.at(l, k));
            kmin = std::min(kmin, kappa.at(l, k));
        }
        w.push_back(base.at(l) / (l < cutoff ? kmax : kmin));
    }
    return {kappa.j0(), std::move(w)};
}

/// Checks that min_k kappa_{l,k} w_l / sqrt(l) is nondecreasing beyond J.
inline void check_inverse_admissible(const LevelWeights& w, const CoeffField& kappa, int cutoff) {
    double prev = 0.0;
    for (int l = std::max(cutoff, 1); l <= kappa.l_max(); ++l) {
        double kmin = std::numeric_limits<double>::infinity();
        for (Index k = 0; k < kappa.level_size(l); ++k) kmin = std::min(kmin, kappa.at(l, k));
        const double v = kmin * w.at(l) / std::sqrt(static_cast<double>(l));
        if (v < prev * (1.0 - 1e-12))
            throw ConfigError("min_k kappa w_l / sqrt(l) must be nondecreasing beyond the cutoff");
        prev = v;
    }
}

/// Band for the indirect model: quasi-posterior on the truncated sieve with
/// X = diag(kappa), centered at kappa^{-1} Y~ over all observed levels.
inline Band inverse_band(const SequenceData& data, const SlopePrior& prior, const LevelWeights& weights, int cutoff,
                         double alpha, std::size_t n_draws, std::uint64_t seed, const SieveBandOptions& opts = {}) {
    if (!data.kappa) throw ConfigError("inverse_band needs quasi-singular values (kappa)");
    require(weights.j0() == data.observations.j0() && weights.l_max() >= data.observations.l_max(),
            "weights must cover every observed level");
    check_inverse_admissible(weights, *data.kappa, cutoff);
    const SieveFit fit = fit_sieve(data, prior, weights, cutoff, alpha, n_draws, seed, opts);
    Band b;
    b.center = ols_center(data);
    b.weights = weights;
    b.radius = fit.radius;
    b.alpha = alpha;
    b.cutoff = cutoff;
    b.kind = BandKind::InverseProblem;
    return b;
}

// ---------------------------------------------------------------------------
// Gumbel baseline.

/// Unweighted band centered at the observations below J with radius
/// n^{-1/2} (a_m + q_G(1 - alpha) / b_m), m' = 2 * 2^J.
inline Band gumbel_band(const SequenceData& data, int cutoff, double alpha) {
    require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    const Index m = pow2(cutoff);
    require(m >= 16, "Gumbel baseline needs 2^J >= 16");
    const double m2 = 2.0 * static_cast<double>(m);
    const double b_m = std::sqrt(2.0 * std::log(m2));
    const double a_m = b_m - (std::log(std::log(m2)) + std::log(4.0 * M_PI)) / (2.0 * b_m);
    const double q = -std::log(-std::log(1.0 - alpha));
    Band b;
    b.center = ols_center(data).truncated(cutoff);
    b.weights = unit_weights(data.observations.j0(), data.observations.l_max());
    b.radius = data.noise_scale * (a_m + q / b_m);
    b.alpha = alpha;
    b.cutoff = cutoff;
    b.kind = BandKind::GumbelBaseline;
    return b;
}

// ---------------------------------------------------------------------------
// Nonparametric regression.

struct ErrorLaw {
    enum class Kind { Gaussian, StudentT, ScaledRademacher } kind = Kind::Gaussian;
    double dof = 0.0;  // StudentT only, >= 5
};

inline std::string to_string(const ErrorLaw& e) {
    switch (e.kind) {
        case ErrorLaw::Kind::Gaussian: return "gaussian";
        case ErrorLaw::Kind::StudentT: return "student_t";
        case ErrorLaw::Kind::ScaledRademacher: return "rademacher";
    }
    return "?";
}

struct RegressionData {
    Vector design_points;
    Vector responses;
    ErrorLaw error_law;
    double sigma0 = 1.0;
};

/// Unit-variance error draw.
inline double draw_error(Rng& rng, const ErrorLaw& law) {
    switch (law.kind) {
        case ErrorLaw::Kind::Gaussian: return rng.normal();
        case ErrorLaw::Kind::StudentT: return rng.student_t(law.dof) * std::sqrt((law.dof - 2.0) / law.dof);
        case ErrorLaw::Kind::ScaledRademacher: return rng.rademacher();
    }
    return 0.0;
}

/// Y_i = f0(T_i) + eps_i with T_i iid uniform on [0, 1].
inline RegressionData simulate_regression(const CoeffField& f0, const WaveletBasis& basis, Index n,
                                          const ErrorLaw& law, double sigma0, std::uint64_t seed) {
    require(n >= 4, "regression needs n >= 4");
    require(sigma0 >= 0.0, "sigma0 must be nonnegative");
    if (law.kind == ErrorLaw::Kind::StudentT) require(law.dof >= 5.0, "Student-t errors need dof >= 5");
    Rng rng(seed);
    RegressionData d;
    d.error_law = law;
    d.sigma0 = sigma0;
    d.design_points.resize(n);
    for (Index i = 0; i < n; ++i) d.design_points[i] = rng.uniform();
    const Vector f = eval_function(basis, f0, d.design_points);
    d.responses.resize(n);
    for (Index i = 0; i < n; ++i) d.responses[i] = f[i] + sigma0 * draw_error(rng, law);
    return d;
}

struct RegressionBand {
    Vector grid;
    Vector center_values;
    Vector weight_values;  // ||psi^p(t)||
    double radius = 0.0;
    double alpha = 0.1;
    Index p = 0;
    Vector beta_hat;
};

/// Uniform grid of `grid_size` points on [0, 1] merged with the dyadic
/// breakpoints k / p.
inline Vector regression_grid(Index p, Index grid_size) {
    std::vector<double> g;
    for (Index i = 0; i < grid_size; ++i) g.push_back(static_cast<double>(i) / static_cast<double>(grid_size - 1));
    for (Index k = 0; k <= p; ++k) g.push_back(static_cast<double>(k) / static_cast<double>(p));
    std::sort(g.begin(), g.end());
    g.erase(std::unique(g.begin(), g.end()), g.end());
    return Eigen::Map<const Vector>(g.data(), static_cast<Index>(g.size()));
}

/// sup over rows of |rows_i^T v| / norm_i with duplicate rows collapsed.
class GridSupNorm {
public:
    explicit GridSupNorm(const Matrix& psi) {
        std::map<std::vector<double>, Index> seen;
        std::vector<Index> keep;
        for (Index i = 0; i < psi.rows(); ++i) {
            std::vector<double> key(static_cast<std::size_t>(psi.cols()));
            for (Index j = 0; j < psi.cols(); ++j) key[static_cast<std::size_t>(j)] = psi(i, j);
            if (seen.emplace(std::move(key), i).second) keep.push_back(i);
        }
        unit_rows_.resize(static_cast<Index>(keep.size()), psi.cols());
        for (std::size_t r = 0; r < keep.size(); ++r) {
            const double nrm = psi.row(keep[r]).norm();
            if (!(nrm > 0.0)) throw NumericalError("basis vector vanishes at a grid point");
            unit_rows_.row(static_cast<Index>(r)) = psi.row(keep[r]) / nrm;
        }
    }

    /// Row-wise sup for every row of `deviations` (draws x p).
    std::vector<double> sup(const Matrix& deviations) const {
        const Matrix m = deviations * unit_rows_.transpose();
        std::vector<double> out(static_cast<std::size_t>(m.rows()));
        for (Index i = 0; i < m.rows(); ++i) out[static_cast<std::size_t>(i)] = m.row(i).cwiseAbs().maxCoeff();
        return out;
    }

private:
    Matrix unit_rows_;
};

/// Band {f : sup_t |f(t) - f_hat(t)| / ||psi^p(t)|| <= R_alpha} for the series
/// regression on p = 2^J basis functions.
inline RegressionBand regression_band(const RegressionData& data, const WaveletBasis& basis, Index p,
                                      const SlopePrior& prior, const VarianceSpec& variance, double alpha,
                                      Index grid_size, std::size_t n_draws, std::uint64_t seed,
                                      std::optional<std::size_t> burn_in = {}) {
    const Index n = data.design_points.size();
    require(2 * p <= n, "regression band needs p <= n / 2");
    require(grid_size >= 256, "regression band needs grid_size >= 256");
    check_quantile_feasible(n_draws, alpha);
    const RegressionProblem problem(basis_matrix(basis, data.design_points, p), data.responses);
    const PosteriorDraws draws = sample_posterior(problem, prior, variance, n_draws, burn_in, seed);
    RegressionBand band;
    band.p = p;
    band.alpha = alpha;
    band.beta_hat = ols_fit(problem);
    band.grid = regression_grid(p, grid_size);
    const Matrix psi = basis_matrix(basis, band.grid, p);
    band.weight_values = psi.rowwise().norm();
    band.center_values = psi * band.beta_hat;
    const GridSupNorm sup(psi);
    const Matrix dev = draws.beta.rowwise() - band.beta_hat.transpose();
    band.radius = empirical_quantile(sup.sup(dev), 1.0 - alpha);
    return band;
}

/// Containment of a function given by its values on the band grid.
inline bool regression_band_contains(const RegressionBand& band, const Vector& values) {
    require(values.size() == band.grid.size(), "values must live on the band grid");
    for (Index i = 0; i < values.size(); ++i)
        if (std::abs(values[i] - band.center_values[i]) > band.radius * band.weight_values[i] * (1.0 + kBoundaryRelTol))
            return false;
    return true;
}

// ---------------------------------------------------------------------------
// JSON.

inline nlohmann::json to_json(const LevelWeights& w) {
    return {{"J0", w.j0()}, {"values", w.values()}};
}

inline nlohmann::json to_json(const Band& b) {
    return {{"center", to_json(b.center)}, {"weights", to_json(b.weights)}, {"radius", b.radius},
            {"alpha", b.alpha},           {"cutoff", b.cutoff},            {"kind", to_string(b.kind)}};
}

inline nlohmann::json to_json(const RegressionBand& b) {
    auto v = [](const Vector& x) { return vector_to_json(x); };
    return {{"grid", v(b.grid)},     {"center_values", v(b.center_values)}, {"weight_values", v(b.weight_values)},
            {"radius", b.radius},   {"alpha", b.alpha},                     {"p", b.p},
            {"kind", to_string(BandKind::RegressionSup)}};
}

inline nlohmann::json to_json(const SequenceData& d) {
    return {{"observations", to_json(d.observations)},
            {"noise_scale", d.noise_scale},
            {"n", d.n},
            {"kappa", d.kappa ? to_json(*d.kappa) : nlohmann::json(nullptr)}};
}

inline SequenceData sequence_data_from_json(const nlohmann::json& j) {
    try {
        SequenceData d;
        d.observations = coeff_field_from_json(j.at("observations"));
        d.n = j.at("n").get<Index>();
        require(d.n >= 1, "n must be positive");
        d.noise_scale = j.contains("noise_scale") ? j["noise_scale"].get<double>() : 1.0 / std::sqrt(static_cast<double>(d.n));
        if (j.contains("kappa") && !j["kappa"].is_null()) d.kappa = coeff_field_from_json(j["kappa"]);
        return d;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed sequence data JSON: ") + e.what());
    }
}

inline nlohmann::json to_json(const RegressionData& d) {
    return {{"design_points", vector_to_json(d.design_points)},
            {"responses", vector_to_json(d.responses)},
            {"error_kind", to_string(d.error_law)},
            {"dof", d.error_law.dof},
            {"sigma0", d.sigma0}};
}

}  // namespace credband
