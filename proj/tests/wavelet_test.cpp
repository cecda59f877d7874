#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "credband/diagnostics.hpp"
#include "credband/wavelet.hpp"

using namespace credband;
using Catch::Approx;

namespace {

Vector midpoints(Index m) {
    Vector t(m);
    for (Index i = 0; i < m; ++i) t[i] = (static_cast<double>(i) + 0.5) / static_cast<double>(m);
    return t;
}

CoeffField random_field(int j0, int l_max, std::uint64_t seed) {
    CoeffField c(j0, l_max);
    Rng rng(seed);
    for (Index i = 0; i < c.size(); ++i) c[i] = rng.normal();
    return c;
}

// Inverse fast Haar transform to the 2^{L_max+1} cell values.
Vector inverse_haar(const CoeffField& c) {
    std::vector<double> approx(static_cast<std::size_t>(pow2(c.j0())));
    for (Index k = 0; k < pow2(c.j0()); ++k) approx[static_cast<std::size_t>(k)] = c.at(c.j0() - 1, k);
    const double r2 = std::sqrt(0.5);
    for (int l = c.j0(); l <= c.l_max(); ++l) {
        std::vector<double> next(static_cast<std::size_t>(pow2(l + 1)));
        for (Index k = 0; k < pow2(l); ++k) {
            const double a = approx[static_cast<std::size_t>(k)], d = c.at(l, k);
            next[static_cast<std::size_t>(2 * k)] = (a + d) * r2;
            next[static_cast<std::size_t>(2 * k + 1)] = (a - d) * r2;
        }
        approx = std::move(next);
    }
    const double scale = std::pow(2.0, 0.5 * (c.l_max() + 1));
    Vector out(static_cast<Index>(approx.size()));
    for (Index i = 0; i < out.size(); ++i) out[i] = approx[static_cast<std::size_t>(i)] * scale;
    return out;
}

// Largest |<psi_a, psi_b> - delta_ab| over all basis functions up to level l_top,
// by midpoint quadrature with m points.
double orthonormality_error(const WaveletBasis& b, int l_top, Index m) {
    const Vector t = midpoints(m);
    const Matrix v = basis_matrix(b, t, pow2(l_top + 1));
    const Matrix gram = v.transpose() * v / static_cast<double>(m);
    return (gram - Matrix::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("Haar values", "[wavelet]") {
    const WaveletBasis h = WaveletBasis::haar();
    CHECK(h.evaluate(0, 0, 0.25) == 1.0);
    CHECK(h.evaluate(0, 0, 0.75) == -1.0);
    for (double t : {0.0, 0.1, 0.5, 0.99}) CHECK(h.evaluate(-1, 0, t) == 1.0);
    CHECK(h.evaluate(2, 1, 0.4) == Approx(-2.0));
    CHECK(h.evaluate(2, 1, 0.26) == Approx(2.0));
    CHECK(h.evaluate(2, 1, 0.6) == 0.0);
    CHECK_THROWS_AS(h.evaluate(1, 2, 0.1), ConfigError);
    CHECK_THROWS_AS(h.evaluate(-2, 0, 0.1), ConfigError);
}

TEST_CASE("Haar basis with a coarse level above zero", "[wavelet]") {
    const WaveletBasis h = WaveletBasis::haar(2);
    CHECK(h.evaluate(1, 3, 0.9) == Approx(2.0));
    CHECK(h.evaluate(1, 3, 0.1) == 0.0);
    CHECK(orthonormality_error(h, 4, 1 << 8) < 1e-12);
}

TEST_CASE("Haar orthonormality is exact under midpoint quadrature", "[wavelet]") {
    CHECK(orthonormality_error(WaveletBasis::haar(), 5, 1 << 8) < 1e-12);
}

TEST_CASE("periodized Daubechies quadrature orthonormality", "[wavelet][slow]") {
    for (int s : {2, 3, 4}) {
        const WaveletBasis b = WaveletBasis::daubechies(s);
        INFO("S = " << s << ", J0 = " << b.coarse_level());
        CHECK(orthonormality_error(b, b.coarse_level() + 1, 1 << 14) < 1e-4);
    }
}

TEST_CASE("Daubechies construction rules", "[wavelet]") {
    const WaveletBasis b = WaveletBasis::daubechies(2);
    CHECK(b.filter_length() == 4);
    CHECK(b.coarse_level() == 3);
    CHECK(WaveletBasis::daubechies(3).coarse_level() == 4);
    CHECK_THROWS_AS(WaveletBasis::daubechies(2, 2), ConfigError);
    CHECK_THROWS_AS(WaveletBasis::daubechies(1), ConfigError);
    CHECK_THROWS_AS(WaveletBasis::haar(-1), ConfigError);
    // The father wavelet integrates to one; the mother to zero.
    double sphi = 0.0, spsi = 0.0;
    const int m = 1 << 14;
    for (int i = 0; i < 3 * m; ++i) {
        const double x = (i + 0.5) / m;
        sphi += b.father(x);
        spsi += b.mother(x);
    }
    CHECK(sphi / m == Approx(1.0).margin(1e-4));
    CHECK(spsi / m == Approx(0.0).margin(1e-4));
}

TEST_CASE("periodization", "[wavelet]") {
    const WaveletBasis h = WaveletBasis::haar();
    const WaveletBasis d = WaveletBasis::daubechies(3);
    const Vector t = midpoints(97);
    for (Index i = 0; i < t.size(); ++i)
        for (int l : {0, 1, 3})
            for (Index k = 0; k < pow2(l); ++k) CHECK(std::abs(h.evaluate(l, k, t[i]) - h.evaluate(l, k, t[i] + 1.0)) < 1e-10);
    for (Index i = 0; i < t.size(); ++i)
        for (int l : {3, 4, 5}) {
            const Index k = (7 * i) % pow2(std::max(l, 4));
            const int row = l == 3 ? 3 : l;  // l = J0 - 1 is the scaling row
            CHECK(std::abs(d.evaluate(row, k, t[i]) - d.evaluate(row, k, t[i] + 1.0)) < 1e-4);
            // Direct periodization sum 2^{l/2} sum_m psi(2^l t + 2^l m - k).
            if (row >= 4) {
                double acc = 0.0;
                for (int shift = -3; shift <= 3; ++shift)
                    acc += d.mother(std::ldexp(t[i], row) + std::ldexp(shift, row) - static_cast<double>(k));
                CHECK(d.evaluate(row, k, t[i]) == Approx(std::sqrt(std::ldexp(1.0, row)) * acc).margin(1e-12));
            }
        }
}

TEST_CASE("eval_function", "[wavelet]") {
    const WaveletBasis h = WaveletBasis::haar();
    SECTION("zero coefficients give zero") {
        CHECK(eval_function(h, CoeffField(0, 4), midpoints(33)).cwiseAbs().maxCoeff() == 0.0);
    }
    SECTION("a single detail coefficient gives +-1 by half interval") {
        CoeffField c(0, 3);
        c.at(0, 0) = 1.0;
        const Vector v = eval_function(h, c, midpoints(8));
        for (Index i = 0; i < 8; ++i) CHECK(v[i] == (i < 4 ? 1.0 : -1.0));
    }
    SECTION("matches the inverse fast Haar transform") {
        for (int j0 : {0, 2}) {
            const CoeffField c = random_field(j0, 6, 10 + static_cast<std::uint64_t>(j0));
            const Vector fast = inverse_haar(c);
            const Vector slow = eval_function(h.coarse_level() == j0 ? h : WaveletBasis::haar(j0), c, midpoints(128));
            CHECK((fast - slow).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
    SECTION("basis mismatch is rejected") {
        CHECK_THROWS_AS(eval_function(h, CoeffField(1, 3), midpoints(4)), ConfigError);
    }
}

TEST_CASE("haar_analyze", "[wavelet]") {
    const WaveletBasis h = WaveletBasis::haar();
    SECTION("constant samples only touch the scaling coefficient") {
        const CoeffField c = haar_analyze(Vector::Constant(16, 2.5));
        CHECK(c.at(-1, 0) == Approx(2.5));
        for (Index i = 1; i < c.size(); ++i) CHECK(std::abs(c[i]) < 1e-15);
        CHECK((eval_function(h, c, midpoints(16)).array() - 2.5).abs().maxCoeff() < 1e-14);
    }
    SECTION("(1, -1) is a single detail coefficient") {
        const CoeffField c = haar_analyze((Vector(2) << 1.0, -1.0).finished());
        CHECK(c.at(-1, 0) == 0.0);
        CHECK(c.at(0, 0) == Approx(1.0));
    }
    SECTION("random round trip") {
        Rng rng(3);
        Vector s(256);
        for (Index i = 0; i < 256; ++i) s[i] = rng.normal();
        CHECK((eval_function(h, haar_analyze(s), midpoints(256)) - s).cwiseAbs().maxCoeff() < 1e-12);
        const WaveletBasis h3 = WaveletBasis::haar(3);
        CHECK((eval_function(h3, haar_analyze(s, 3), midpoints(256)) - s).cwiseAbs().maxCoeff() < 1e-12);
    }
    SECTION("non-power-of-two length") { CHECK_THROWS_AS(haar_analyze(Vector::Ones(12)), ConfigError); }
}

TEST_CASE("besov_norm", "[wavelet]") {
    CoeffField c(0, 6);
    c.at(3, 5) = -0.2;
    CHECK(besov_norm(c, 1.5) == Approx(std::pow(2.0, 3 * 2.0) * 0.2));
    CoeffField d(2, 5);
    d.at(1, 3) = -0.7;
    CHECK(besov_norm(d, 1.0) == Approx(0.7));
    CoeffField e(0, 8);
    for (int l = 0; l <= 8; ++l) e.at(l, l % pow2(l)) = std::pow(2.0, -l * 1.5);
    CHECK(besov_norm(e, 1.0) == Approx(1.0).epsilon(1e-14));
    CHECK_THROWS_AS(besov_norm(e, 0.0), ConfigError);
}

TEST_CASE("synth_test_function profiles", "[wavelet]") {
    const WaveletBasis h = WaveletBasis::haar();
    for (auto profile : {TestProfile::SelfSimilar, TestProfile::SingleSpike, TestProfile::Sparse}) {
        const CoeffField c = synth_test_function(h, 1.3, 2.0, 9, 42, profile);
        CHECK(std::abs(besov_norm(c, 1.3) - 2.0) < 1e-12);
        CHECK(c.l_max() == 9);
        const CoeffField wide = c.resized(12);
        for (Index i = c.size(); i < wide.size(); ++i) CHECK(wide[i] == 0.0);
    }
    SECTION("single spike: one coefficient of magnitude 2^{-3l/2} per level") {
        const CoeffField c = synth_test_function(h, 1.0, 1.0, 10, 7, TestProfile::SingleSpike);
        for (int l = 0; l <= 10; ++l) {
            int nonzero = 0;
            for (Index k = 0; k < pow2(l); ++k)
                if (c.at(l, k) != 0.0) {
                    ++nonzero;
                    CHECK(std::abs(c.at(l, k)) == Approx(std::pow(2.0, -1.5 * l)).epsilon(1e-14));
                }
            CHECK(nonzero == 1);
        }
    }
    SECTION("sparse keeps about a tenth of the coefficients") {
        const CoeffField c = synth_test_function(h, 1.0, 1.0, 12, 9, TestProfile::Sparse);
        const auto nz = std::count_if(c.data().begin(), c.data().end(), [](double v) { return v != 0.0; });
        CHECK(static_cast<double>(nz) / static_cast<double>(c.size()) == Approx(0.1).margin(0.01));
    }
    SECTION("seeded") {
        const auto a = synth_test_function(h, 1.0, 1.0, 6, 5, TestProfile::SelfSimilar);
        const auto b = synth_test_function(h, 1.0, 1.0, 6, 5, TestProfile::SelfSimilar);
        CHECK(a.data() == b.data());
    }
    CHECK(test_profile_from_string("sparse") == TestProfile::Sparse);
    CHECK_THROWS_AS(test_profile_from_string("bumpy"), ConfigError);
}

TEST_CASE("CoeffField layout and JSON", "[wavelet]") {
    CoeffField c(2, 4);
    CHECK(c.size() == 32);
    CHECK(c.level_of(0) == 1);
    CHECK(c.level_of(3) == 1);
    CHECK(c.level_of(4) == 2);
    CHECK(c.level_of(31) == 4);
    c.at(3, 7) = 1.25;
    CHECK(c[15] == 1.25);
    CHECK(c.sieve(4).size() == 16);
    CHECK(c.truncated(3)[15] == 0.0);
    CHECK(c.truncated(4)[15] == 1.25);
    const CoeffField r = random_field(2, 4, 1);
    const nlohmann::json j = to_json(r);
    CHECK(j["levels"].contains("1"));
    CHECK(!j["levels"].contains("0"));
    CHECK(coeff_field_from_json(nlohmann::json::parse(j.dump())).data() == r.data());
    nlohmann::json bad = j;
    bad["levels"]["3"] = {1.0};
    CHECK_THROWS_AS(coeff_field_from_json(bad), ConfigError);
    CHECK_THROWS_AS(CoeffField(0, 40), ConfigError);
}

TEST_CASE("basis_matrix", "[wavelet]") {
    const WaveletBasis h = WaveletBasis::haar();
    SECTION("Haar table on dyadic midpoints") {
        const Matrix m = basis_matrix(h, midpoints(4), 4);
        const std::set<double> allowed{0.0, 1.0, -1.0, std::sqrt(2.0), -std::sqrt(2.0)};
        for (Index i = 0; i < 4; ++i)
            for (Index j = 0; j < 4; ++j) CHECK(allowed.count(m(i, j)) == 1);
        CHECK(m.row(0) == (Eigen::RowVector4d(1.0, 1.0, std::sqrt(2.0), 0.0)).cast<double>());
    }
    SECTION("first column at t = 0 is the father wavelet") {
        const WaveletBasis d = WaveletBasis::daubechies(2);
        const Matrix m = basis_matrix(d, Vector::Zero(1), 16);
        CHECK(m(0, 0) == d.evaluate(d.coarse_level() - 1, 0, 0.0));
        CHECK(basis_matrix(h, Vector::Zero(1), 8)(0, 0) == 1.0);
    }
    SECTION("Monte Carlo Gram is close to the identity") {
        Rng rng(17);
        Vector t(100000);
        for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform();
        const Matrix m = basis_matrix(h, t, 8);
        const Matrix g = m.transpose() * m / static_cast<double>(t.size());
        CHECK((g - Matrix::Identity(8, 8)).cwiseAbs().maxCoeff() < 0.02);
    }
    SECTION("invalid p") {
        CHECK_THROWS_AS(basis_matrix(h, midpoints(4), 6), ConfigError);
        CHECK_THROWS_AS(basis_matrix(WaveletBasis::haar(3), midpoints(4), 4), ConfigError);
    }
}

TEST_CASE("Haar norm equivalence: xi_p and the lower frame bound scale as sqrt(p)", "[wavelet]") {
    const WaveletBasis h = WaveletBasis::haar();
    for (int j = 3; j <= 8; ++j) {
        const Index p = pow2(j);
        const Matrix m = basis_matrix(h, midpoints(4 * p), p);
        const Vector norms = m.rowwise().norm();
        const double sp = std::sqrt(static_cast<double>(p));
        CHECK(norms.maxCoeff() / sp >= 0.9);
        CHECK(norms.maxCoeff() / sp <= 1.5);
        CHECK(norms.minCoeff() / sp >= 0.5);
    }
}

TEST_CASE("Lipschitz constant of the normalized map grows polynomially in p", "[wavelet]") {
    auto lipschitz = [](const WaveletBasis& b, Index p, Index grid) {
        const Vector t = midpoints(grid);
        Matrix m = basis_matrix(b, t, p);
        m = m.array().colwise() / m.rowwise().norm().array();
        double worst = 0.0;
        for (Index i = 0; i + 1 < grid; ++i)
            worst = std::max(worst, (m.row(i + 1) - m.row(i)).norm() / (t[i + 1] - t[i]));
        return worst;
    };
    for (const WaveletBasis& b : {WaveletBasis::haar(), WaveletBasis::daubechies(3)}) {
        std::vector<std::pair<double, double>> pts;
        for (int j = std::max(3, b.coarse_level()); j <= 8; ++j) {
            const Index p = pow2(j);
            pts.emplace_back(std::log(static_cast<double>(p)), std::log(lipschitz(b, p, 1 << 13)));
        }
        double mx = 0, my = 0;
        for (auto [x, y] : pts) mx += x, my += y;
        mx /= static_cast<double>(pts.size());
        my /= static_cast<double>(pts.size());
        double sxy = 0, sxx = 0;
        for (auto [x, y] : pts) sxy += (x - mx) * (y - my), sxx += (x - mx) * (x - mx);
        INFO(b.name() << " slope " << sxy / sxx);
        CHECK(sxy / sxx <= 3.0);
    }
}
