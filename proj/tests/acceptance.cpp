// Acceptance suite: one PASS/FAIL line per criterion.
//
// Usage: acceptance [criterion ...]   (default: all of 1..12)
// Study CSVs are written to ./acceptance_output.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "credband/experiments.hpp"

using namespace credband;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

const fs::path kOutDir = "acceptance_output";

// CSV text of each study, keyed by name, reused by the determinism check.
std::map<std::string, std::string> g_csv;

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

std::string csv_text(const CoverageReport& r) {
    std::ostringstream os;
    write_coverage_csv(os, r);
    return os.str();
}

std::string csv_text(const std::vector<BvmRow>& rows) {
    std::ostringstream os;
    write_bvm_csv(os, rows);
    return os.str();
}

void save(const std::string& name, const std::string& text) {
    g_csv[name] = text;
    fs::create_directories(kOutDir);
    std::ofstream(kOutDir / (name + ".csv"), std::ios::binary) << text;
}

ExperimentConfig parse(const std::string& text) { return experiment_config_from_json(json::parse(text)); }

// ---------------------------------------------------------------------------
// Study configurations.

const char* kC2 = R"({
  "schema_version": 1,
  "model": {"type": "white_noise", "s": 1.0, "B": 1.0, "centering": "f_j", "tail_free": true},
  "prior": {"kind": "flat"}, "alpha": 0.1, "n_grid": [4096],
  "cutoff_rule": {"kind": "fixed", "J": 6}, "reps": 5000, "n_draws": 2000, "master_seed": 2})";

const char* kC3 = R"({
  "schema_version": 1,
  "model": {"type": "white_noise", "s": 1.0, "B": 1.0, "centering": "f_infinity"},
  "prior": {"kind": "laplace", "scale": 0.1}, "variance": {"kind": "plug_in"}, "alpha": 0.1,
  "n_grid": [256, 1024, 4096, 16384], "cutoff_rule": {"kind": "paper"},
  "reps": 3600, "n_draws": 2000, "master_seed": 11})";

const char* kC4 = R"({
  "schema_version": 1,
  "model": {"type": "white_noise", "s": 1.0, "B": 1.0, "centering": "f_j", "tail_free": true},
  "prior": {"kind": "flat"}, "alpha": 0.1, "n_grid": [4096, 16384],
  "cutoff_rule": {"kind": "fixed", "J": 6}, "reps": 4000, "n_draws": 2000, "master_seed": 4})";

const char* kC5a = R"({
  "schema_version": 1,
  "model": {"type": "white_noise", "s": 1.0, "B": 1.0},
  "prior": {"kind": "flat"}, "alpha": 0.1, "n_grid": [256, 1024, 4096, 16384, 65536],
  "cutoff_rule": {"kind": "paper"}, "reps": 1000, "n_draws": 2000, "master_seed": 51})";

const char* kC5b = R"({
  "schema_version": 1,
  "model": {"type": "inverse", "s": 1.0, "B": 1.0, "ill_posedness": {"kind": "mild", "r": 0.5}},
  "prior": {"kind": "flat"}, "alpha": 0.1, "n_grid": [256, 1024, 4096, 16384, 65536],
  "cutoff_rule": {"kind": "paper"}, "reps": 1000, "n_draws": 2000, "master_seed": 52})";

const char* kC9 = R"({
  "schema_version": 1,
  "prior": {"kind": "laplace", "scale": 1.0}, "variance": {"kind": "plug_in"},
  "bvm": {"points": [[256, 8], [512, 8], [1024, 8], [2048, 8], [4096, 8], [4096, 4], [4096, 16], [4096, 64]],
          "n_draws": 20000, "gauss_draws": 20000, "n_rect": 500},
  "master_seed": 9})";

const char* kC11 = R"({
  "schema_version": 1,
  "model": {"type": "regression", "s": 1.0, "B": 1.0, "error_kind": "gaussian", "sigma0": 1.0, "in_span": true},
  "prior": {"kind": "flat"}, "variance": {"kind": "plug_in"}, "alpha": 0.1, "n_grid": [4096],
  "cutoff_rule": {"kind": "fixed", "J": 6}, "reps": 3000, "n_draws": 2000, "master_seed": 7})";

// ---------------------------------------------------------------------------
// Criteria.

Verdict c1_conjugate() {
    const Index n = 100, p = 3;
    const std::size_t draws = 200000;
    Rng rng(101);
    Matrix x(n, p);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < p; ++j) x(i, j) = rng.normal();
    Vector y = x * Vector::LinSpaced(p, 1.0, -1.0);
    for (Index i = 0; i < n; ++i) y[i] += rng.normal();
    const RegressionProblem prob(x, y);
    const PosteriorDraws d = sample_posterior(prob, FlatPrior{}, KnownVariance{1.0}, draws, std::nullopt, 102);
    const Vector beta_hat = ols_fit(prob);
    const Matrix target = (x.transpose() * x).inverse();
    const Vector mean = d.beta.colwise().mean();
    const Matrix centered = d.beta.rowwise() - mean.transpose();
    const Matrix cov = centered.transpose() * centered / static_cast<double>(draws - 1);
    double worst_mean = 0.0;
    for (Index j = 0; j < p; ++j)
        worst_mean = std::max(worst_mean, std::abs(mean[j] - beta_hat[j]) /
                                              (std::sqrt(target(j, j)) / std::sqrt(static_cast<double>(draws))));
    const double frob = (cov - target).norm() / target.norm();
    return {worst_mean <= 4.0 && frob <= 0.05,
            "max mean deviation " + fmt("%.2f", worst_mean) + " posterior se (limit 4), covariance rel. Frobenius " +
                fmt("%.4f", frob) + " (limit 0.05)"};
}

Verdict c2_nominal_coverage() {
    const CoverageReport r = run_coverage(parse(kC2));
    save("c2_coverage", csv_text(r));
    const CoverageRow& row = r.rows.at(0);
    return {row.coverage >= 0.887 && row.coverage <= 0.913 && row.reps_effective == 5000,
            "coverage " + fmt("%.4f", row.coverage) + " over " + std::to_string(row.reps_effective) +
                " reps (target [0.887, 0.913])"};
}

Verdict c3_coverage_decay() {
    const RateStudy st = run_rate_study(parse(kC3));
    save("c3_coverage", csv_text(st.report));
    std::vector<double> err, se;
    std::string seq;
    for (const auto& row : st.report.rows) {
        err.push_back(std::abs(row.coverage - 0.9));
        se.push_back(row.coverage_se);
        seq += fmt("%.4f", row.coverage) + " ";
    }
    const bool mono = monotone_with_tolerance(err, se, true);
    return {mono && st.coverage_fit.slope < 0.0,
            "coverage " + seq + "| error monotone (one inversion within 2 se): " + (mono ? "yes" : "no") +
                ", error slope " + fmt("%.3f", st.coverage_fit.slope)};
}

Verdict c4_credible_beats_gumbel() {
    const CoverageReport r = compare_bands(parse(kC4));
    save("c4_compare", csv_text(r));
    bool pass = true;
    std::string detail;
    for (std::size_t i = 0; i + 1 < r.rows.size(); i += 2) {
        const CoverageRow& cred = r.rows[i];
        const CoverageRow& gum = r.rows[i + 1];
        const double ec = std::abs(cred.coverage - 0.9), eg = std::abs(gum.coverage - 0.9);
        pass = pass && ec < eg;
        detail += "n=" + std::to_string(cred.n) + ": credible " + fmt("%.4f", cred.coverage) + " vs gumbel " +
                  fmt("%.4f", gum.coverage) + "; ";
    }
    return {pass && r.rows.size() == 4, detail};
}

Verdict c5_diameter_rates() {
    auto slope = [](const char* text, const std::string& name) {
        const ExperimentConfig c = parse(text);
        const CoverageReport r = run_coverage(c);
        save(name, csv_text(r));
        std::vector<std::pair<double, double>> pts;
        for (const auto& row : r.rows) pts.emplace_back(static_cast<double>(row.n), row.mean_diameter);
        return rate_fit(pts).slope;
    };
    const double a = slope(kC5a, "c5a_white_noise"), b = slope(kC5b, "c5b_mild_inverse");
    const double ta = -1.0 / 3.0;
    const double tb = -1.0 / (2.0 + 2.0 * 0.5 + 1.0);  // -s / (2s + 2r + 1) with s = 1, r = 1/2
    const bool pa = std::abs(a - ta) <= 0.25 * std::abs(ta);
    const bool pb = std::abs(b - tb) <= 0.25 * std::abs(tb);
    return {pa && pb, "white noise slope " + fmt("%.3f", a) + " (target -1/3 +/- 25%), mild r=1/2 slope " +
                          fmt("%.3f", b) + " (target " + fmt("%.3f", tb) + " +/- 25%)"};
}

Verdict c6_radius_sandwich() {
    bool pass = true;
    std::string detail;
    for (Index p : {Index{16}, Index{64}, Index{256}}) {
        // Four stacked identity blocks: X^T X = 4 I.
        const Index n = 4 * p;
        Matrix x = Matrix::Zero(n, p);
        for (Index b = 0; b < 4; ++b) x.block(b * p, 0, p, p).setIdentity();
        Rng rng(600 + static_cast<std::uint64_t>(p));
        Vector y(n);
        for (Index i = 0; i < n; ++i) y[i] = rng.normal();
        const RegressionProblem prob(x, y);
        const Vector w = Vector::Ones(p);
        const PosteriorDraws d =
            sample_posterior(prob, FlatPrior{}, KnownVariance{1.0}, 20000, std::nullopt, 700 + static_cast<std::uint64_t>(p));
        const double r = credible_radius(d, ols_fit(prob), w, 0.1);
        const RadiusBounds b = radius_bounds(1.0, 0.25, 0.25, w, 20000, 800 + static_cast<std::uint64_t>(p));
        const double ru = r / b.upper, rl = r / b.lower;
        pass = pass && ru >= 0.3 && ru <= 3.0 && rl >= 0.2 && rl <= 10.0;
        detail += "p=" + std::to_string(p) + ": R/upper " + fmt("%.3f", ru) + ", R/lower " + fmt("%.3f", rl) + "; ";
    }
    return {pass, detail};
}

Verdict c7_truncation() {
    // Sup of m iid |N(0,1)| sampled exactly: Phi^{-1}((1 + U^{1/m}) / 2).
    boost::math::normal nd;
    auto max_abs_normal = [&](Rng& rng, Index m) {
        const double u = std::pow(rng.uniform(), 1.0 / static_cast<double>(m));
        const double q = 0.5 * (1.0 + u);
        return q >= 1.0 ? 40.0 : boost::math::quantile(nd, q);
    };
    const Index n = 4096;
    const double sqrt_n = std::sqrt(static_cast<double>(n));
    const WaveletBasis basis = WaveletBasis::haar();
    bool pass = true;
    std::string detail;
    for (int cutoff : {3, 6}) {
        const int l_max = cutoff + 6, l_far = cutoff + 12;
        const LevelWeights w_band = default_weights(0, cutoff, l_max);
        const LevelWeights w_far = default_weights(0, cutoff, l_far);
        const CoeffField f0 = synth_test_function(basis, 1.0, 1.0, cutoff, 70, TestProfile::SelfSimilar);
        const int radii = cutoff == 3 ? 50 : 20;
        const std::size_t tail_per_radius = 1000000 / static_cast<std::size_t>(radii);
        std::size_t hits = 0, total = 0;
        double union_bound = 0.0;
        for (int k = 0; k < radii; ++k) {
            const auto uk = static_cast<std::uint64_t>(k);
            const SequenceData d = simulate_white_noise(f0, n, l_max, stream_seed(71, n, uk, StreamRole::Data));
            const Band band = castillo_nickl_band(d, FlatPrior{}, w_band, cutoff, Centering::FInfinity, 0.1, 2000,
                                                  stream_seed(71, n, uk, StreamRole::Posterior));
            Rng rng(stream_seed(71, n, uk, StreamRole::Auxiliary));
            for (std::size_t t = 0; t < tail_per_radius; ++t, ++total) {
                bool exceed = false;
                for (int l = l_max + 1; l <= l_far && !exceed; ++l)
                    exceed = max_abs_normal(rng, pow2(l)) / sqrt_n / w_far.at(l) > band.radius;
                hits += exceed;
            }
            for (int l = l_max + 1; l <= l_far; ++l)
                union_bound += static_cast<double>(pow2(l)) * 2.0 *
                               boost::math::cdf(boost::math::complement(nd, band.radius * sqrt_n * w_far.at(l))) /
                               radii;
        }
        const double prob = static_cast<double>(hits) / static_cast<double>(total);
        pass = pass && prob < 1e-3;
        detail += "J=" + std::to_string(cutoff) + ": " + std::to_string(hits) + "/" + std::to_string(total) +
                  " exceedances, union bound " + fmt("%.2e", union_bound) + "; ";
    }
    return {pass, detail};
}

Verdict c8_variance() {
    // (a) Inverse-gamma shape.
    bool shape_ok = true;
    for (auto [n, p, mu1] : {std::tuple{Index{100}, Index{4}, 2.0}, std::tuple{Index{57}, Index{9}, 0.75}}) {
        Rng rng(800 + static_cast<std::uint64_t>(n));
        Matrix x(n, p);
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < p; ++j) x(i, j) = rng.normal();
        Vector y(n);
        for (Index i = 0; i < n; ++i) y[i] = rng.normal();
        const auto post = variance_posterior(FullBayesVariance{mu1, 1.0}, FlatPrior{}, RegressionProblem(x, y));
        const double expect = mu1 + static_cast<double>(n) / 2.0 - static_cast<double>(p) / 2.0;
        shape_ok = shape_ok && std::get<InverseGammaVariance>(post).shape == expect;
    }
    // (b) P(|sigma_hat^2 / sigma0^2 - 1| > sqrt(log n / n)) over n, p = 8, sigma0 = 1.
    const Index p = 8;
    const int reps = 10000;
    std::vector<double> probs;
    std::string seq;
    for (int e = 8; e <= 14; ++e) {
        const Index n = pow2(e);
        Rng rng(stream_seed(81, static_cast<std::uint64_t>(n), 0, StreamRole::Data));
        Matrix x(n, p);
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < p; ++j) x(i, j) = rng.normal();
        LinearSummary s = RegressionProblem(x, Vector::Zero(n)).summary();
        const double delta = std::sqrt(std::log(static_cast<double>(n)) / static_cast<double>(n));
        Vector eps(n);
        int hits = 0;
        for (int r = 0; r < reps; ++r) {
            for (Index i = 0; i < n; ++i) eps[i] = rng.normal();
            s.xty = x.transpose() * eps;
            s.yty = eps.squaredNorm();
            hits += std::abs(sigma_hat_u(s) - 1.0) > delta;
        }
        probs.push_back(static_cast<double>(hits) / reps);
        seq += fmt("%.4f", probs.back()) + " ";
    }
    bool mono = true;
    for (std::size_t i = 0; i + 1 < probs.size(); ++i) mono = mono && probs[i + 1] <= probs[i];
    return {shape_ok && mono, std::string("a* exact: ") + (shape_ok ? "yes" : "no") + "; deviation probabilities " +
                                  seq + "(nonincreasing: " + (mono ? "yes" : "no") + ")"};
}

Verdict c9_bvm() {
    const std::vector<BvmRow> rows = run_bvm_study(parse(kC9));
    save("c9_bvm", csv_text(rows));
    std::vector<double> vn, sn, vp, sp;
    std::string dn, dp;
    for (const auto& r : rows) {
        if (r.p == 8 && r.n <= 4096) {
            vn.push_back(r.discrepancy), sn.push_back(r.mc_se);
            dn += fmt("%.4f", r.discrepancy) + " ";
        }
        if (r.n == 4096 && r.p != 8) {
            vp.push_back(r.discrepancy), sp.push_back(r.mc_se);
            dp += fmt("%.4f", r.discrepancy) + " ";
        }
    }
    const bool in_n = monotone_with_tolerance(vn, sn, true);
    const bool in_p = monotone_with_tolerance(vp, sp, false);
    return {in_n && in_p, "p=8 over n: " + dn + (in_n ? "(nonincreasing)" : "(NOT nonincreasing)") +
                              "; n=4096 over p=4,16,64: " + dp + (in_p ? "(nondecreasing)" : "(NOT nondecreasing)")};
}

Verdict c10_wavelets() {
    auto midpoints = [](Index m) {
        Vector t(m);
        for (Index i = 0; i < m; ++i) t[i] = (static_cast<double>(i) + 0.5) / static_cast<double>(m);
        return t;
    };
    Rng rng(1001);
    Vector s(1024);
    for (Index i = 0; i < s.size(); ++i) s[i] = rng.normal();
    const WaveletBasis haar = WaveletBasis::haar();
    const double round_trip = (eval_function(haar, haar_analyze(s), midpoints(1024)) - s).cwiseAbs().maxCoeff();

    double ortho = 0.0;
    for (int sm : {2, 3, 4}) {
        const WaveletBasis b = WaveletBasis::daubechies(sm);
        const Index m = 1 << 14;
        const Matrix v = basis_matrix(b, midpoints(m), pow2(b.coarse_level() + 2));
        const Matrix g = v.transpose() * v / static_cast<double>(m);
        ortho = std::max(ortho, (g - Matrix::Identity(g.rows(), g.cols())).cwiseAbs().maxCoeff());
    }

    double xi_lo = 1e300, xi_hi = 0.0, inf_lo = 1e300;
    for (int j = 3; j <= 8; ++j) {
        const Index p = pow2(j);
        const Vector norms = basis_matrix(haar, midpoints(4 * p), p).rowwise().norm();
        const double sp = std::sqrt(static_cast<double>(p));
        xi_lo = std::min(xi_lo, norms.maxCoeff() / sp);
        xi_hi = std::max(xi_hi, norms.maxCoeff() / sp);
        inf_lo = std::min(inf_lo, norms.minCoeff() / sp);
    }
    const bool pass = round_trip < 1e-12 && ortho < 1e-4 && xi_lo >= 0.9 && xi_hi <= 1.5 && inf_lo >= 0.5;
    return {pass, "Haar round trip " + fmt("%.2e", round_trip) + ", Daubechies S=2..4 orthonormality " +
                      fmt("%.2e", ortho) + ", xi_p/sqrt(p) in [" + fmt("%.3f", xi_lo) + ", " + fmt("%.3f", xi_hi) +
                      "], min inf/sqrt(p) " + fmt("%.3f", inf_lo)};
}

Verdict c11_regression() {
    const CoverageReport r = run_coverage(parse(kC11));
    save("c11_regression", csv_text(r));
    const CoverageRow& row = r.rows.at(0);
    const double se = std::sqrt(0.9 * 0.1 / static_cast<double>(row.reps_effective));
    return {row.j_or_p == 64 && std::abs(row.coverage - 0.9) <= 3.0 * se,
            "p=" + std::to_string(row.j_or_p) + ", coverage " + fmt("%.4f", row.coverage) + " (target 0.90 +/- " +
                fmt("%.4f", 3.0 * se) + ")"};
}

Verdict c12_determinism() {
    // Reruns at other worker counts. Studies not run in this invocation are
    // recomputed at a reduced size first.
    struct Study {
        std::string name;
        const char* config;
        bool bvm = false, gumbel = false;
    };
    const std::vector<Study> studies = {{"c2_coverage", kC2},           {"c3_coverage", kC3},
                                        {"c4_compare", kC4, false, true}, {"c9_bvm", kC9, true},
                                        {"c11_regression", kC11}};
    auto run = [](const Study& st, const ExperimentConfig& c, unsigned workers) {
        if (st.bvm) return csv_text(run_bvm_study(c, workers));
        return csv_text(st.gumbel ? compare_bands(c, workers) : run_coverage(c, workers));
    };
    bool pass = true;
    std::string detail;
    for (const Study& st : studies) {
        json doc = json::parse(st.config);
        std::string reference;
        if (auto it = g_csv.find(st.name); it != g_csv.end()) {
            reference = it->second;
        } else {
            doc["reps"] = 200;
            if (st.bvm) doc["bvm"]["points"] = json::array({{1024, 8}, {4096, 16}});
            reference = run(st, experiment_config_from_json(doc), default_workers());
        }
        const ExperimentConfig c = experiment_config_from_json(doc);
        bool same = true;
        for (unsigned workers : {1u, 3u}) same = same && run(st, c, workers) == reference;
        pass = pass && same;
        detail += st.name + (same ? " identical; " : " DIFFERS; ");
    }
    return {pass, detail};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::function<Verdict()>> criteria = {
        c1_conjugate,   c2_nominal_coverage, c3_coverage_decay, c4_credible_beats_gumbel,
        c5_diameter_rates, c6_radius_sandwich, c7_truncation,   c8_variance,
        c9_bvm,         c10_wavelets,        c11_regression,    c12_determinism};
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
    int failures = 0;
    for (int k = 1; k <= static_cast<int>(criteria.size()); ++k) {
        if (!selected.empty() && !selected.count(k)) continue;
        const auto start = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = criteria[static_cast<std::size_t>(k - 1)]();
        } catch (const std::exception& e) {
            v = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        failures += !v.pass;
        std::printf("CRITERION %d: %s  %s [%.1f s]\n", k, v.pass ? "PASS" : "FAIL", v.detail.c_str(), secs);
        std::fflush(stdout);
    }
    return failures ? 1 : 0;
}
