#pragma once

// Wavelet bases on [0, 1]: Haar and periodized Daubechies, with the
// level-major coefficient layout shared by every module.
//
// Layout: the scaling row (level J0 - 1, 2^J0 entries) occupies flat indices
// [0, 2^J0); level l >= J0 occupies [2^l, 2^(l+1)). A field truncated at L_max
// therefore has exactly 2^(L_max + 1) entries and the sieve I(J) is its prefix
// of length 2^J.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "credband/errors.hpp"
#include "credband/linmodel.hpp"
#include "credband/rng.hpp"

namespace credband {

inline Index pow2(int e) { return Index{1} << e; }

inline bool is_power_of_two(Index n) { return n > 0 && (n & (n - 1)) == 0; }

inline int log2_exact(Index n) {
    require(is_power_of_two(n), "expected a power of two, got " + std::to_string(n));
    int e = 0;
    while ((Index{1} << e) < n) ++e;
    return e;
}

// ---------------------------------------------------------------------------

class CoeffField {
public:
    CoeffField() = default;
    CoeffField(int j0, int l_max) : j0_(j0), l_max_(l_max) {
        require(j0 >= 0, "J0 must be nonnegative");
        require(l_max >= j0 - 1, "L_max must be at least J0 - 1");
        require(l_max < 40, "L_max too large");
        data_.assign(static_cast<std::size_t>(pow2(l_max + 1)), 0.0);
    }

    int j0() const { return j0_; }
    int l_max() const { return l_max_; }
    Index size() const { return static_cast<Index>(data_.size()); }

    Index level_size(int l) const { return l == j0_ - 1 ? pow2(j0_) : pow2(l); }
    Index level_offset(int l) const { return l == j0_ - 1 ? 0 : pow2(l); }
    bool valid(int l, Index k) const {
        return l >= j0_ - 1 && l <= l_max_ && k >= 0 && k < level_size(l);
    }
    /// Level of a flat index.
    int level_of(Index i) const {
        if (i < pow2(j0_)) return j0_ - 1;
        int l = 0;
        while (pow2(l + 1) <= i) ++l;
        return l;
    }

    double& at(int l, Index k) {
        require(valid(l, k), "coefficient index out of range");
        return data_[static_cast<std::size_t>(level_offset(l) + k)];
    }
    double at(int l, Index k) const {
        require(valid(l, k), "coefficient index out of range");
        return data_[static_cast<std::size_t>(level_offset(l) + k)];
    }
    double& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    /// First 2^J coefficients: the index set I(J).
    Vector sieve(int j) const {
        require(j >= j0_ && j <= l_max_ + 1, "sieve level out of range");
        return Eigen::Map<const Vector>(data_.data(), pow2(j));
    }

    /// Copy zero-padded or truncated to a new L_max.
    CoeffField resized(int l_max) const {
        CoeffField out(j0_, l_max);
        const Index n = std::min(size(), out.size());
        std::copy_n(data_.begin(), n, out.data_.begin());
        return out;
    }

    /// Zero every coefficient at level >= j.
    CoeffField truncated(int j) const {
        CoeffField out = *this;
        for (Index i = std::min(size(), pow2(j)); i < size(); ++i) out[i] = 0.0;
        return out;
    }

private:
    int j0_ = 0;
    int l_max_ = -1;
    std::vector<double> data_;
};

inline nlohmann::json to_json(const CoeffField& c) {
    nlohmann::json levels = nlohmann::json::object();
    for (int l = c.j0() - 1; l <= c.l_max(); ++l) {
        std::vector<double> row(static_cast<std::size_t>(c.level_size(l)));
        for (Index k = 0; k < c.level_size(l); ++k) row[static_cast<std::size_t>(k)] = c.at(l, k);
        levels[std::to_string(l)] = row;
    }
    return {{"J0", c.j0()}, {"L_max", c.l_max()}, {"levels", levels}};
}

inline CoeffField coeff_field_from_json(const nlohmann::json& j) {
    try {
        CoeffField c(j.at("J0").get<int>(), j.at("L_max").get<int>());
        for (const auto& [key, row] : j.at("levels").items()) {
            const int l = std::stoi(key);
            require(l >= c.j0() - 1 && l <= c.l_max(), "level " + key + " out of range");
            require(static_cast<Index>(row.size()) == c.level_size(l), "level " + key + " has wrong length");
            for (Index k = 0; k < c.level_size(l); ++k) c.at(l, k) = row[static_cast<std::size_t>(k)].get<double>();
        }
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed coefficient field JSON: ") + e.what());
    }
}

// ---------------------------------------------------------------------------

enum class WaveletFamily { Haar, Daubechies };

namespace detail {

// Orthonormal Daubechies low-pass filters (sum = sqrt 2), S vanishing moments.
inline std::vector<double> daubechies_filter(int s) {
    switch (s) {
        case 2: {
            const double r3 = std::sqrt(3.0);
            const double d = 4.0 * std::sqrt(2.0);
            return {(1 + r3) / d, (3 + r3) / d, (3 - r3) / d, (1 - r3) / d};
        }
        case 3:
            return {0.33267055295008263, 0.80689150931109260, 0.45987750211849154,
                    -0.13501102001025458, -0.08544127388202666, 0.035226291885709536};
        case 4:
            return {0.23037781330889650,  0.71484657055291540, 0.63088076792985890,  -0.027983769416859854,
                    -0.18703481171909308, 0.030841381835560764, 0.032883011666885200, -0.010597401785069032};
        default:
            throw ConfigError("periodized Daubechies supports S in {2, 3, 4}");
    }
}

// Father and mother wavelet sampled on the dyadic grid i / 2^G, i = 0..(N-1) 2^G.
struct CascadeTable {
    int resolution = 12;
    std::vector<double> phi;
    std::vector<double> psi;
};

inline CascadeTable build_cascade(const std::vector<double>& h, int resolution) {
    const int n = static_cast<int>(h.size());
    const Index steps = pow2(resolution);
    const Index len = (n - 1) * steps + 1;
    CascadeTable t;
    t.resolution = resolution;
    t.phi.assign(static_cast<std::size_t>(len), 0.0);

    // Values at the integers: eigenvector of M_{ij} = sqrt2 h_{2i-j} for eigenvalue 1, sum 1.
    Matrix a = Matrix::Zero(n + 1, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const int idx = 2 * i - j;
            if (idx >= 0 && idx < n) a(i, j) = std::sqrt(2.0) * h[static_cast<std::size_t>(idx)];
        }
    a.topRows(n) -= Matrix::Identity(n, n);
    a.row(n).setOnes();
    Vector rhs = Vector::Zero(n + 1);
    rhs[n] = 1.0;
    const Vector ints = a.colPivHouseholderQr().solve(rhs);
    for (int i = 0; i < n; ++i) t.phi[static_cast<std::size_t>(i * steps)] = ints[i];
    t.phi.front() = 0.0;
    t.phi.back() = 0.0;

    // Dyadic refinement: phi(x) = sqrt2 sum_k h_k phi(2x - k).
    for (int g = 1; g <= resolution; ++g) {
        const Index stride = pow2(resolution - g);
        for (Index i = stride; i < len; i += 2 * stride) {
            double acc = 0.0;
            for (int k = 0; k < n; ++k) {
                const Index src = 2 * i - k * steps;
                if (src > 0 && src < len) acc += h[static_cast<std::size_t>(k)] * t.phi[static_cast<std::size_t>(src)];
            }
            t.phi[static_cast<std::size_t>(i)] = std::sqrt(2.0) * acc;
        }
    }

    // psi(x) = sqrt2 sum_k g_k phi(2x - k), g_k = (-1)^k h_{N-1-k}.
    t.psi.assign(static_cast<std::size_t>(len), 0.0);
    for (Index i = 0; i < len; ++i) {
        double acc = 0.0;
        for (int k = 0; k < n; ++k) {
            const Index src = 2 * i - k * steps;
            if (src > 0 && src < len) {
                const double gk = (k % 2 == 0 ? 1.0 : -1.0) * h[static_cast<std::size_t>(n - 1 - k)];
                acc += gk * t.phi[static_cast<std::size_t>(src)];
            }
        }
        t.psi[static_cast<std::size_t>(i)] = std::sqrt(2.0) * acc;
    }
    return t;
}

inline double interpolate(const std::vector<double>& table, int resolution, double x) {
    const double pos = x * static_cast<double>(pow2(resolution));
    if (pos <= 0.0 || pos >= static_cast<double>(table.size() - 1)) return 0.0;
    const auto i = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(i);
    return table[i] + frac * (table[i + 1] - table[i]);
}

}  // namespace detail

/// Orthonormal wavelet basis of L^2[0, 1], with the convention that level
/// J0 - 1 denotes the scaling functions phi_{J0, k}.
class WaveletBasis {
public:
    static constexpr int kCascadeResolution = 12;

    static WaveletBasis haar(int j0 = 0) {
        require(j0 >= 0, "Haar basis needs J0 >= 0");
        WaveletBasis b;
        b.family_ = WaveletFamily::Haar;
        b.j0_ = j0;
        b.filter_length_ = 2;
        return b;
    }

    /// Default coarse level is the smallest J0 with 2^J0 >= 2 N (N = 2 S).
    static WaveletBasis daubechies(int vanishing_moments, std::optional<int> j0 = {}) {
        require(vanishing_moments >= 2, "Daubechies basis needs S >= 2");
        WaveletBasis b;
        b.family_ = WaveletFamily::Daubechies;
        b.vanishing_moments_ = vanishing_moments;
        const auto h = detail::daubechies_filter(vanishing_moments);
        b.filter_length_ = static_cast<int>(h.size());
        int def = 0;
        while (pow2(def) < 2 * b.filter_length_) ++def;
        b.j0_ = j0.value_or(def);
        require(pow2(b.j0_) >= 2 * b.filter_length_, "periodized Daubechies needs 2^J0 >= 2N");
        b.table_ = std::make_shared<const detail::CascadeTable>(detail::build_cascade(h, kCascadeResolution));
        return b;
    }

    WaveletFamily family() const { return family_; }
    int coarse_level() const { return j0_; }
    int vanishing_moments() const { return vanishing_moments_; }
    int filter_length() const { return filter_length_; }
    std::string name() const {
        return family_ == WaveletFamily::Haar ? "haar" : "db" + std::to_string(vanishing_moments_);
    }

    /// Non-periodized father / mother wavelet on the real line.
    double father(double x) const {
        if (family_ == WaveletFamily::Haar) return (x >= 0.0 && x < 1.0) ? 1.0 : 0.0;
        return detail::interpolate(table_->phi, table_->resolution, x);
    }
    double mother(double x) const {
        if (family_ == WaveletFamily::Haar) {
            if (x >= 0.0 && x < 0.5) return 1.0;
            if (x >= 0.5 && x < 1.0) return -1.0;
            return 0.0;
        }
        return detail::interpolate(table_->psi, table_->resolution, x);
    }

    bool valid(int l, Index k) const {
        if (l == j0_ - 1) return k >= 0 && k < pow2(j0_);
        return l >= j0_ && l < 40 && k >= 0 && k < pow2(l);
    }

    /// psi_{l,k}(t) of the periodized basis; l = J0 - 1 gives phi_{J0,k}.
    double evaluate(int l, Index k, double t) const {
        if (!valid(l, k)) throw ConfigError("invalid wavelet index (" + std::to_string(l) + ", " + std::to_string(k) + ")");
        return eval_unchecked(l, k, wrap(t));
    }

    /// Calls f(k, value) for every position k at level l whose basis function
    /// is nonzero at t.
    template <class F>
    void for_each_active(int l, double t, F&& f) const {
        t = wrap(t);
        const int e = l == j0_ - 1 ? j0_ : l;
        const Index m = pow2(e);
        if (family_ == WaveletFamily::Haar) {
            const Index k = std::min<Index>(static_cast<Index>(std::floor(t * static_cast<double>(m))), m - 1);
            f(k, eval_unchecked(l, k, t));
            return;
        }
        if (m <= filter_length_) {
            for (Index k = 0; k < m; ++k) {
                const double v = eval_unchecked(l, k, t);
                if (v != 0.0) f(k, v);
            }
            return;
        }
        const auto c = static_cast<Index>(std::floor(t * static_cast<double>(m)));
        for (Index kk = c - (filter_length_ - 2); kk <= c; ++kk) {
            const Index k = ((kk % m) + m) % m;
            const double v = eval_unchecked(l, k, t);
            if (v != 0.0) f(k, v);
        }
    }

    static double wrap(double t) {
        double u = t - std::floor(t);
        return u >= 1.0 ? 0.0 : u;
    }

private:
    double eval_unchecked(int l, Index k, double t) const {
        const bool scaling = l == j0_ - 1;
        const int e = scaling ? j0_ : l;
        const double m = static_cast<double>(pow2(e));
        const double amp = std::sqrt(m);
        if (family_ == WaveletFamily::Haar) {
            const double x = m * t - static_cast<double>(k);
            return amp * (scaling ? father(x) : mother(x));
        }
        // Sum over periodic images: x = m (t + shift) - k in the support [0, N - 1].
        const double span = static_cast<double>(filter_length_ - 1);
        const double base = m * t - static_cast<double>(k);
        double acc = 0.0;
        const auto lo = static_cast<Index>(std::ceil(-base / m));
        const auto hi = static_cast<Index>(std::floor((span - base) / m));
        for (Index shift = lo; shift <= hi; ++shift) {
            const double x = base + m * static_cast<double>(shift);
            acc += scaling ? father(x) : mother(x);
        }
        return amp * acc;
    }

    WaveletFamily family_ = WaveletFamily::Haar;
    int j0_ = 0;
    int vanishing_moments_ = 1;
    int filter_length_ = 2;
    std::shared_ptr<const detail::CascadeTable> table_;
};

// ---------------------------------------------------------------------------

/// f(t_i) = sum_{(l,k)} beta_{l,k} psi_{l,k}(t_i).
inline Vector eval_function(const WaveletBasis& basis, const CoeffField& coeffs, const Vector& grid) {
    require(coeffs.j0() == basis.coarse_level(), "coefficient field and basis disagree on J0");
    Vector out = Vector::Zero(grid.size());
    for (Index i = 0; i < grid.size(); ++i) {
        double acc = 0.0;
        for (int l = coeffs.j0() - 1; l <= coeffs.l_max(); ++l)
            basis.for_each_active(l, grid[i], [&](Index k, double v) { acc += coeffs.at(l, k) * v; });
        out[i] = acc;
    }
    return out;
}

/// Exact Haar analysis of a piecewise-constant function with cell values
/// `samples` on the 2^L dyadic cells. Returns levels J0 - 1 .. L - 1.
inline CoeffField haar_analyze(const Vector& samples, int j0 = 0) {
    if (!is_power_of_two(samples.size()))
        throw ConfigError("haar_analyze needs a power-of-two length, got " + std::to_string(samples.size()));
    const int big_l = log2_exact(samples.size());
    require(j0 <= big_l, "J0 exceeds the sample resolution");
    CoeffField out(j0, big_l - 1);
    // Scaling coefficients at the finest level: <f, phi_{L,i}> = s_i 2^{-L/2}.
    std::vector<double> approx(static_cast<std::size_t>(samples.size()));
    const double scale = std::pow(2.0, -0.5 * big_l);
    for (Index i = 0; i < samples.size(); ++i) approx[static_cast<std::size_t>(i)] = samples[i] * scale;
    const double r2 = std::sqrt(0.5);
    for (int l = big_l - 1; l >= j0; --l) {
        const Index m = pow2(l);
        std::vector<double> next(static_cast<std::size_t>(m));
        for (Index k = 0; k < m; ++k) {
            const double a = approx[static_cast<std::size_t>(2 * k)];
            const double b = approx[static_cast<std::size_t>(2 * k + 1)];
            next[static_cast<std::size_t>(k)] = (a + b) * r2;
            out.at(l, k) = (a - b) * r2;
        }
        approx = std::move(next);
    }
    for (Index k = 0; k < pow2(j0); ++k) out.at(j0 - 1, k) = approx[static_cast<std::size_t>(k)];
    return out;
}

/// Sup-type Hölder–Zygmund norm:
/// max(max_k |beta_{J0-1,k}|, max_{l >= J0, k} 2^{l(s + 1/2)} |beta_{l,k}|).
inline double besov_norm(const CoeffField& coeffs, double s) {
    require(s > 0.0, "smoothness must be positive");
    double norm = 0.0;
    for (int l = coeffs.j0() - 1; l <= coeffs.l_max(); ++l) {
        const double factor = l < coeffs.j0() ? 1.0 : std::pow(2.0, l * (s + 0.5));
        for (Index k = 0; k < coeffs.level_size(l); ++k) norm = std::max(norm, factor * std::abs(coeffs.at(l, k)));
    }
    return norm;
}

enum class TestProfile { SelfSimilar, SingleSpike, Sparse };

inline TestProfile test_profile_from_string(const std::string& s) {
    if (s == "self_similar") return TestProfile::SelfSimilar;
    if (s == "single_spike") return TestProfile::SingleSpike;
    if (s == "sparse") return TestProfile::Sparse;
    throw ConfigError("unknown test-function profile '" + s + "'");
}

/// Envelope B 2^{-l(s + 1/2)} (B on the scaling row).
inline double besov_envelope(int l, int j0, double s, double bound) {
    return l < j0 ? bound : bound * std::pow(2.0, -l * (s + 0.5));
}

/// Coefficients of a test function with besov_norm(., s) == B, zero above L_max.
inline CoeffField synth_test_function(const WaveletBasis& basis, double s, double bound, int l_max,
                                      std::uint64_t seed, TestProfile profile) {
    require(bound > 0.0, "B must be positive");
    require(s > 0.0, "smoothness must be positive");
    CoeffField c(basis.coarse_level(), l_max);
    Rng rng(seed);
    switch (profile) {
        case TestProfile::SelfSimilar:
            for (int l = c.j0() - 1; l <= l_max; ++l)
                for (Index k = 0; k < c.level_size(l); ++k)
                    c.at(l, k) = besov_envelope(l, c.j0(), s, bound) * rng.rademacher();
            break;
        case TestProfile::SingleSpike: {
            // One coefficient per level along the dyadic path towards a seeded point.
            const double point = rng.uniform();
            for (int l = c.j0() - 1; l <= l_max; ++l) {
                const Index m = c.level_size(l);
                const Index k = std::min<Index>(static_cast<Index>(point * static_cast<double>(m)), m - 1);
                c.at(l, k) = besov_envelope(l, c.j0(), s, bound) * rng.rademacher();
            }
            break;
        }
        case TestProfile::Sparse:
            for (int l = c.j0() - 1; l <= l_max; ++l)
                for (Index k = 0; k < c.level_size(l); ++k) {
                    const double sign = rng.rademacher();
                    if (rng.uniform() < 0.1) c.at(l, k) = besov_envelope(l, c.j0(), s, bound) * sign;
                }
            // The scaling coefficient pins the norm at exactly B.
            c.at(c.j0() - 1, 0) = bound;
            break;
    }
    return c;
}

/// n x p matrix with rows psi^p(t_i) over I(J), p = 2^J, level-major order.
inline Matrix basis_matrix(const WaveletBasis& basis, const Vector& points, Index p) {
    if (!is_power_of_two(p)) throw ConfigError("basis_matrix: p must be a power of two");
    const int j = log2_exact(p);
    if (j < basis.coarse_level()) throw ConfigError("basis_matrix: p below 2^J0");
    Matrix m = Matrix::Zero(points.size(), p);
    const CoeffField layout(basis.coarse_level(), j - 1);
    for (Index i = 0; i < points.size(); ++i)
        for (int l = basis.coarse_level() - 1; l <= j - 1; ++l) {
            const Index off = layout.level_offset(l);
            basis.for_each_active(l, points[i], [&](Index k, double v) { m(i, off + k) = v; });
        }
    return m;
}

}  // namespace credband
