#pragma once

// Monte Carlo harness: replicate simulate -> band -> contain cycles over a
// grid of sample sizes, aggregate coverage, radius and diameter, and run the
// rate, baseline and Bernstein-von Mises studies.
//
// Every replication draws from RNG streams derived from (master_seed, n,
// replication, role) and writes into its own slot; aggregation then runs in
// replication order. Results are therefore bit-identical for any worker count.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "credband/diagnostics.hpp"
#include "credband/errors.hpp"
#include "credband/io.hpp"
#include "credband/linmodel.hpp"
#include "credband/models.hpp"
#include "credband/posterior.hpp"
#include "credband/rng.hpp"
#include "credband/wavelet.hpp"

namespace credband {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration.

struct WhiteNoiseModel {
    double s = 1.0;
    double bound = 1.0;
    TestProfile profile = TestProfile::SelfSimilar;
    Centering centering = Centering::FInfinity;
    bool tail_free = false;               // zero f0 above the cutoff
    std::optional<double> noise_sd;       // testing hook: overrides n^{-1/2} in the simulation
};

struct InverseModel {
    double s = 1.0;
    double bound = 1.0;
    TestProfile profile = TestProfile::SelfSimilar;
    IllPosedness ill;
    bool tail_free = false;
    std::optional<double> severe_c;  // 2^J = c log n, c < 1/(2r)
};

struct RegressionModel {
    double s = 1.0;
    double bound = 1.0;
    TestProfile profile = TestProfile::SelfSimilar;
    ErrorLaw error;
    double sigma0 = 1.0;
    bool in_span = true;  // f0 in the sieve; coverage targets the surrogate f_{0,p}
    Index grid_size = 512;
};

using ModelSpec = std::variant<WhiteNoiseModel, InverseModel, RegressionModel>;

struct BasisSpec {
    WaveletFamily family = WaveletFamily::Haar;
    int vanishing_moments = 2;
    std::optional<int> j0;

    WaveletBasis make() const {
        return family == WaveletFamily::Haar ? WaveletBasis::haar(j0.value_or(0))
                                             : WaveletBasis::daubechies(vanishing_moments, j0);
    }
};

struct BvmPoint {
    Index n = 0;
    Index p = 0;
};

struct BvmSpec {
    std::vector<BvmPoint> points;
    std::size_t n_draws = 20000;
    std::size_t gauss_draws = 20000;
    std::size_t n_rect = 500;
    double beta_magnitude = 1.0;
};

struct ExperimentConfig {
    ModelSpec model = WhiteNoiseModel{};
    BasisSpec basis;
    SlopePrior prior = FlatPrior{};
    std::optional<VarianceSpec> variance;  // empty: the model's true noise level
    double alpha = 0.1;
    std::vector<Index> n_grid{1024};
    std::optional<int> fixed_cutoff;       // empty: the paper's rule
    std::size_t reps = 200;
    std::size_t n_draws = 2000;
    std::optional<std::size_t> burn_in;
    std::uint64_t master_seed = 1;
    std::optional<std::vector<double>> custom_weights;
    int truncation_offset = 6;             // L_max = J + offset
    Index diameter_grid = 512;
    BvmSpec bvm;
};

namespace detail {

template <class T>
T get_or(const json& j, const char* key, T fallback) {
    return j.contains(key) && !j[key].is_null() ? j[key].get<T>() : fallback;
}

inline TestProfile parse_profile(const json& j) {
    return test_profile_from_string(get_or<std::string>(j, "profile", "self_similar"));
}

inline std::string profile_name(TestProfile p) {
    switch (p) {
        case TestProfile::SelfSimilar: return "self_similar";
        case TestProfile::SingleSpike: return "single_spike";
        case TestProfile::Sparse: return "sparse";
    }
    return "?";
}

inline ErrorLaw parse_error_law(const json& j) {
    const std::string kind = get_or<std::string>(j, "error_kind", "gaussian");
    ErrorLaw e;
    if (kind == "gaussian") e.kind = ErrorLaw::Kind::Gaussian;
    else if (kind == "student_t") {
        e.kind = ErrorLaw::Kind::StudentT;
        e.dof = get_or<double>(j, "dof", 6.0);
        if (e.dof < 5.0) throw ConfigError("student_t errors need dof >= 5");
    } else if (kind == "rademacher") e.kind = ErrorLaw::Kind::ScaledRademacher;
    else throw ConfigError("unknown error_kind '" + kind + "'");
    return e;
}

inline ModelSpec parse_model(const json& j) {
    const std::string type = get_or<std::string>(j, "type", "white_noise");
    const double s = get_or<double>(j, "s", 1.0);
    const double b = get_or<double>(j, "B", 1.0);
    if (!(s > 0.0) || !(b > 0.0)) throw ConfigError("model.s and model.B must be positive");
    if (type == "white_noise") {
        WhiteNoiseModel m;
        m.s = s;
        m.bound = b;
        m.profile = parse_profile(j);
        const std::string c = get_or<std::string>(j, "centering", "f_infinity");
        if (c == "f_infinity") m.centering = Centering::FInfinity;
        else if (c == "f_j") m.centering = Centering::FJ;
        else throw ConfigError("unknown centering '" + c + "' (expected f_infinity or f_j)");
        m.tail_free = get_or<bool>(j, "tail_free", false);
        if (j.contains("noise_sd") && !j["noise_sd"].is_null()) {
            m.noise_sd = j["noise_sd"].get<double>();
            if (*m.noise_sd < 0.0) throw ConfigError("model.noise_sd must be nonnegative");
        }
        return m;
    }
    if (type == "inverse") {
        InverseModel m;
        m.s = s;
        m.bound = b;
        m.profile = parse_profile(j);
        m.tail_free = get_or<bool>(j, "tail_free", false);
        const json ip = j.value("ill_posedness", json::object());
        const std::string kind = get_or<std::string>(ip, "kind", "mild");
        if (kind == "mild") m.ill.kind = IllPosedness::Kind::Mild;
        else if (kind == "severe") m.ill.kind = IllPosedness::Kind::Severe;
        else throw ConfigError("unknown ill_posedness kind '" + kind + "'");
        m.ill.r = get_or<double>(ip, "r", 0.5);
        if (!(m.ill.r > 0.0) && m.ill.kind == IllPosedness::Kind::Severe)
            throw ConfigError("severe ill-posedness needs r > 0");
        if (m.ill.r < 0.0) throw ConfigError("ill-posedness r must be nonnegative");
        if (ip.contains("c") && !ip["c"].is_null()) m.severe_c = ip["c"].get<double>();
        if (m.severe_c && (*m.severe_c <= 0.0 || *m.severe_c >= 1.0 / (2.0 * m.ill.r)))
            throw ConfigError("severe cutoff constant c must lie in (0, 1/(2r))");
        return m;
    }
    if (type == "regression") {
        RegressionModel m;
        m.s = s;
        m.bound = b;
        m.profile = parse_profile(j);
        m.error = parse_error_law(j);
        m.sigma0 = get_or<double>(j, "sigma0", 1.0);
        if (!(m.sigma0 > 0.0)) throw ConfigError("model.sigma0 must be positive");
        m.in_span = get_or<bool>(j, "in_span", true);
        m.grid_size = get_or<Index>(j, "grid_size", 512);
        if (m.grid_size < 256) throw ConfigError("model.grid_size must be at least 256");
        return m;
    }
    throw ConfigError("unknown model.type '" + type + "'");
}

inline SlopePrior parse_prior(const json& j) {
    const std::string kind = get_or<std::string>(j, "kind", "flat");
    SlopePrior p;
    if (kind == "flat") p = FlatPrior{};
    else if (kind == "gaussian_iso") p = GaussianIsoPrior{Vector(), get_or<double>(j, "sd", 1.0)};
    else if (kind == "laplace") p = LaplacePrior{get_or<double>(j, "scale", 1.0)};
    else throw ConfigError("unknown prior.kind '" + kind + "' (expected flat, gaussian_iso or laplace)");
    try {
        validate_prior(p);
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    return p;
}

inline std::optional<VarianceSpec> parse_variance(const json& j) {
    const std::string kind = get_or<std::string>(j, "kind", "known");
    std::optional<VarianceSpec> v;
    if (kind == "known") {
        if (j.contains("sigma2") && !j["sigma2"].is_null()) v = KnownVariance{j["sigma2"].get<double>()};
    } else if (kind == "plug_in") v = PlugInVariance{};
    else if (kind == "full_bayes") v = FullBayesVariance{get_or<double>(j, "mu1", 1.0), get_or<double>(j, "mu2", 1.0)};
    else throw ConfigError("unknown variance.kind '" + kind + "'");
    if (v) {
        try {
            validate_variance(*v);
        } catch (const Error& e) {
            throw ConfigError(e.what());
        }
    }
    return v;
}

inline BasisSpec parse_basis(const json& j) {
    BasisSpec b;
    const std::string fam = get_or<std::string>(j, "family", "haar");
    if (fam == "haar") b.family = WaveletFamily::Haar;
    else if (fam == "daubechies") b.family = WaveletFamily::Daubechies;
    else throw ConfigError("unknown basis.family '" + fam + "'");
    b.vanishing_moments = get_or<int>(j, "S", 2);
    if (j.contains("J0") && !j["J0"].is_null()) b.j0 = j["J0"].get<int>();
    b.make();  // validates
    return b;
}

}  // namespace detail

/// Parses a configuration document (schema_version 1), filling defaults.
inline ExperimentConfig experiment_config_from_json(const json& j) {
    try {
        if (!j.is_object()) throw ConfigError("config must be a JSON object");
        if (!j.contains("schema_version") || j["schema_version"] != 1)
            throw ConfigError("config needs \"schema_version\": 1");
        ExperimentConfig c;
        c.model = detail::parse_model(j.value("model", json::object()));
        c.basis = detail::parse_basis(j.value("basis", json::object()));
        c.prior = detail::parse_prior(j.value("prior", json::object()));
        c.variance = detail::parse_variance(j.value("variance", json::object()));
        c.alpha = detail::get_or<double>(j, "alpha", 0.1);
        if (!(c.alpha > 0.01 && c.alpha <= 0.5)) throw ConfigError("alpha must lie in (0.01, 0.5]");
        if (j.contains("n_grid")) c.n_grid = j["n_grid"].get<std::vector<Index>>();
        if (c.n_grid.empty()) throw ConfigError("n_grid must not be empty");
        for (std::size_t i = 0; i < c.n_grid.size(); ++i) {
            if (c.n_grid[i] < 4) throw ConfigError("n_grid entries must be at least 4");
            if (i && c.n_grid[i] <= c.n_grid[i - 1]) throw ConfigError("n_grid must be strictly increasing");
        }
        const json cut = j.value("cutoff_rule", json::object());
        const std::string ck = detail::get_or<std::string>(cut, "kind", "paper");
        if (ck == "fixed") {
            if (!cut.contains("J")) throw ConfigError("cutoff_rule fixed needs J");
            c.fixed_cutoff = cut["J"].get<int>();
        } else if (ck != "paper") throw ConfigError("unknown cutoff_rule.kind '" + ck + "'");
        c.reps = detail::get_or<std::size_t>(j, "reps", 200);
        if (c.reps < 100) throw ConfigError("reps must be at least 100");
        c.n_draws = detail::get_or<std::size_t>(j, "n_draws", 2000);
        if (j.contains("burn_in") && !j["burn_in"].is_null()) c.burn_in = j["burn_in"].get<std::size_t>();
        c.master_seed = detail::get_or<std::uint64_t>(j, "master_seed", 1);
        if (j.contains("weights")) {
            const json& w = j["weights"];
            if (w.is_array()) c.custom_weights = w.get<std::vector<double>>();
            else if (!(w.is_string() && w.get<std::string>() == "default"))
                throw ConfigError("weights must be \"default\" or a list of per-level weights");
        }
        c.truncation_offset = detail::get_or<int>(j, "truncation_offset", 6);
        if (c.truncation_offset < 0) throw ConfigError("truncation_offset must be nonnegative");
        c.diameter_grid = detail::get_or<Index>(j, "diameter_grid", 512);
        if (c.diameter_grid < 1) throw ConfigError("diameter_grid must be positive");
        if (j.contains("bvm")) {
            const json& b = j["bvm"];
            for (const json& pt : b.value("points", json::array())) {
                if (!pt.is_array() || pt.size() != 2) throw ConfigError("bvm.points entries must be [n, p]");
                c.bvm.points.push_back({pt[0].get<Index>(), pt[1].get<Index>()});
            }
            c.bvm.n_draws = detail::get_or<std::size_t>(b, "n_draws", c.bvm.n_draws);
            c.bvm.gauss_draws = detail::get_or<std::size_t>(b, "gauss_draws", c.bvm.gauss_draws);
            c.bvm.n_rect = detail::get_or<std::size_t>(b, "n_rect", c.bvm.n_rect);
            c.bvm.beta_magnitude = detail::get_or<double>(b, "beta_magnitude", c.bvm.beta_magnitude);
        }
        if (std::holds_alternative<FullBayesVariance>(c.variance.value_or(KnownVariance{1.0})) &&
            std::holds_alternative<FlatPrior>(c.prior))
            throw ConfigError("full_bayes variance is not supported with the flat prior");
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
}

/// Canonical JSON of a parsed configuration: every field explicit, so equal
/// semantics give equal text.
inline json to_json(const ExperimentConfig& c) {
    json j;
    j["schema_version"] = 1;
    std::visit(
        [&](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            json mj{{"s", m.s}, {"B", m.bound}, {"profile", detail::profile_name(m.profile)}};
            if constexpr (std::is_same_v<T, WhiteNoiseModel>) {
                mj["type"] = "white_noise";
                mj["centering"] = m.centering == Centering::FInfinity ? "f_infinity" : "f_j";
                mj["tail_free"] = m.tail_free;
                mj["noise_sd"] = m.noise_sd ? json(*m.noise_sd) : json(nullptr);
            } else if constexpr (std::is_same_v<T, InverseModel>) {
                mj["type"] = "inverse";
                mj["tail_free"] = m.tail_free;
                mj["ill_posedness"] = {{"kind", m.ill.kind == IllPosedness::Kind::Mild ? "mild" : "severe"},
                                       {"r", m.ill.r},
                                       {"c", m.severe_c ? json(*m.severe_c) : json(nullptr)}};
            } else {
                mj["type"] = "regression";
                mj["error_kind"] = to_string(m.error);
                mj["dof"] = m.error.dof;
                mj["sigma0"] = m.sigma0;
                mj["in_span"] = m.in_span;
                mj["grid_size"] = m.grid_size;
            }
            j["model"] = mj;
        },
        c.model);
    j["basis"] = {{"family", c.basis.family == WaveletFamily::Haar ? "haar" : "daubechies"},
                  {"S", c.basis.family == WaveletFamily::Haar ? 1 : c.basis.vanishing_moments},
                  {"J0", c.basis.make().coarse_level()}};
    std::visit(
        [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, FlatPrior>) j["prior"] = {{"kind", "flat"}};
            else if constexpr (std::is_same_v<T, GaussianIsoPrior>) j["prior"] = {{"kind", "gaussian_iso"}, {"sd", p.sd}};
            else if constexpr (std::is_same_v<T, LaplacePrior>) j["prior"] = {{"kind", "laplace"}, {"scale", p.scale}};
            else j["prior"] = {{"kind", "custom"}, {"name", p.name}};
        },
        c.prior);
    if (!c.variance) j["variance"] = {{"kind", "known"}, {"sigma2", nullptr}};
    else
        std::visit(
            [&](const auto& v) {
                using T = std::decay_t<decltype(v)>;
                if constexpr (std::is_same_v<T, KnownVariance>) j["variance"] = {{"kind", "known"}, {"sigma2", v.sigma2}};
                else if constexpr (std::is_same_v<T, PlugInVariance>) j["variance"] = {{"kind", "plug_in"}};
                else j["variance"] = {{"kind", "full_bayes"}, {"mu1", v.mu1}, {"mu2", v.mu2}};
            },
            *c.variance);
    j["alpha"] = c.alpha;
    j["n_grid"] = c.n_grid;
    j["cutoff_rule"] = c.fixed_cutoff ? json{{"kind", "fixed"}, {"J", *c.fixed_cutoff}} : json{{"kind", "paper"}};
    j["reps"] = c.reps;
    j["n_draws"] = c.n_draws;
    j["burn_in"] = c.burn_in ? json(*c.burn_in) : json(nullptr);
    j["master_seed"] = c.master_seed;
    j["weights"] = c.custom_weights ? json(*c.custom_weights) : json("default");
    j["truncation_offset"] = c.truncation_offset;
    j["diameter_grid"] = c.diameter_grid;
    json pts = json::array();
    for (const auto& pt : c.bvm.points) pts.push_back({pt.n, pt.p});
    j["bvm"] = {{"points", pts},
                {"n_draws", c.bvm.n_draws},
                {"gauss_draws", c.bvm.gauss_draws},
                {"n_rect", c.bvm.n_rect},
                {"beta_magnitude", c.bvm.beta_magnitude}};
    return j;
}

/// Applies a dotted-path override "a.b.c=value"; the value is parsed as JSON
/// when possible and taken as a string otherwise.
inline void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw;
    }
    json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) throw ConfigError("empty key in override path: " + path);
        if (!node->is_object()) throw ConfigError("override path crosses a non-object: " + path);
        if (dot == std::string::npos) {
            (*node)[key] = value;
            return;
        }
        node = &(*node)[key];
        if (node->is_null()) *node = json::object();
        start = dot + 1;
    }
}

/// 64-bit FNV-1a of the canonical configuration, as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& c) {
    const std::string text = to_json(c).dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << h;
    return os.str();
}

// ---------------------------------------------------------------------------
// Cutoff and truth.

/// Nearest power of two to x in log scale.
inline int nearest_log2(double x) { return static_cast<int>(std::lround(std::log2(x))); }

/// Sieve cutoff J for sample size n.
inline int select_cutoff(const ExperimentConfig& c, Index n) {
    const int j0 = c.basis.make().coarse_level();
    int j;
    if (c.fixed_cutoff) {
        j = *c.fixed_cutoff;
    } else {
        const double nn = static_cast<double>(n);
        const double ratio = nn / std::log(nn);
        j = std::visit(
            [&](const auto& m) -> int {
                using T = std::decay_t<decltype(m)>;
                if constexpr (std::is_same_v<T, InverseModel>) {
                    if (m.ill.kind == IllPosedness::Kind::Severe) {
                        const double cst = m.severe_c.value_or(1.0 / (4.0 * m.ill.r));
                        return nearest_log2(std::max(1.0, std::ceil(cst * std::log(nn))));
                    }
                    return nearest_log2(std::pow(ratio, 1.0 / (2.0 * m.s + 2.0 * m.ill.r + 1.0)));
                } else {
                    return nearest_log2(std::pow(ratio, 1.0 / (2.0 * m.s + 1.0)));
                }
            },
            c.model);
        j = std::max(j, std::max(j0, 1));
    }
    if (j < j0) throw ConfigError("cutoff J = " + std::to_string(j) + " is below J0 = " + std::to_string(j0));
    if (std::holds_alternative<RegressionModel>(c.model) && 2 * pow2(j) > n)
        throw ConfigError("regression needs p = 2^J <= n / 2 (J = " + std::to_string(j) + ", n = " + std::to_string(n) + ")");
    return j;
}

inline double model_s(const ModelSpec& m) {
    return std::visit([](const auto& x) { return x.s; }, m);
}
inline double model_bound(const ModelSpec& m) {
    return std::visit([](const auto& x) { return x.bound; }, m);
}

/// Fixed truth for sample size n, shared across replications.
inline CoeffField truth_for(const ExperimentConfig& c, const WaveletBasis& basis, Index n, int cutoff, int l_max) {
    const auto seed = derive_seed({c.master_seed, static_cast<std::uint64_t>(n), 0x7472757468ULL});
    const TestProfile profile = std::visit([](const auto& m) { return m.profile; }, c.model);
    CoeffField f0 = synth_test_function(basis, model_s(c.model), model_bound(c.model), l_max, seed, profile);
    const bool trunc = std::visit(
        [](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, RegressionModel>) return m.in_span;
            else return m.tail_free;
        },
        c.model);
    return trunc ? f0.truncated(cutoff) : f0;
}

inline LevelWeights weights_for(const ExperimentConfig& c, int j0, int cutoff, int l_max,
                                const std::optional<CoeffField>& kappa = {}) {
    if (c.custom_weights) {
        const std::vector<double>& w = *c.custom_weights;
        const std::size_t need = static_cast<std::size_t>(l_max - j0 + 2);
        if (w.size() < need)
            throw ConfigError("custom weights must cover levels J0-1..L_max (" + std::to_string(need) + " values)");
        return {j0, std::vector<double>(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(need))};
    }
    if (kappa) return inverse_default_weights(*kappa, cutoff);
    return default_weights(j0, cutoff, l_max);
}

// ---------------------------------------------------------------------------
// Worker pool.

/// Default worker count: $CREDIBLE_BANDS_WORKERS, else hardware concurrency.
inline unsigned default_workers() {
    if (const char* env = std::getenv("CREDIBLE_BANDS_WORKERS")) {
        const int v = std::atoi(env);
        if (v >= 1) return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs f(i) for i in [0, count) on `workers` threads.
template <class F>
void parallel_for(std::size_t count, unsigned workers, F&& f) {
    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) f(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) f(i);
        });
    for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------------------
// Coverage.

enum class Method { Credible, Gumbel };

inline const char* to_string(Method m) { return m == Method::Credible ? "credible" : "gumbel"; }

struct CoverageRow {
    Index n = 0;
    Index j_or_p = 0;
    double alpha = 0.1;
    std::size_t reps = 0;
    std::size_t reps_effective = 0;
    double coverage = 0.0;
    double coverage_se = 0.0;
    double mean_radius = 0.0;
    double mean_diameter = 0.0;
    Method method = Method::Credible;
};

struct CoverageReport {
    std::vector<CoverageRow> rows;
    std::string config_hash;
};

struct ReplicationOutcome {
    bool covered = false;
    double radius = 0.0;
    double diameter = 0.0;
};

struct ReplicationResult {
    std::vector<ReplicationOutcome> methods;  // Credible, then Gumbel when requested
    std::exception_ptr failure;
};

/// One simulate -> band -> contain cycle.
inline std::vector<ReplicationOutcome> run_replication(const ExperimentConfig& c, const WaveletBasis& basis,
                                                       const CoeffField& f0, Index n, int cutoff, std::size_t rep,
                                                       bool with_gumbel) {
    const int l_max = cutoff + c.truncation_offset;
    const auto data_seed = stream_seed(c.master_seed, static_cast<std::uint64_t>(n), rep, StreamRole::Data);
    const auto post_seed = stream_seed(c.master_seed, static_cast<std::uint64_t>(n), rep, StreamRole::Posterior);
    const double s = model_s(c.model), bound = model_bound(c.model);
    std::vector<ReplicationOutcome> out;

    if (const auto* m = std::get_if<WhiteNoiseModel>(&c.model)) {
        const SequenceData data = simulate_white_noise(f0, n, l_max, data_seed, m->noise_sd);
        const LevelWeights w = weights_for(c, basis.coarse_level(), cutoff, l_max);
        const Band band = castillo_nickl_band(data, c.prior, w, cutoff, m->centering, c.alpha, c.n_draws, post_seed,
                                              {c.variance, c.burn_in});
        out.push_back({band_contains(band, f0), band.radius, band_linf_diameter(basis, band, bound, s, c.diameter_grid)});
        if (with_gumbel) {
            const Band g = gumbel_band(data, cutoff, c.alpha);
            out.push_back({band_contains(g, f0), g.radius, band_linf_diameter(basis, g, bound, s, c.diameter_grid)});
        }
    } else if (const auto* m = std::get_if<InverseModel>(&c.model)) {
        const SequenceData data = simulate_inverse_problem(f0, m->ill, n, l_max, data_seed);
        const LevelWeights w = weights_for(c, basis.coarse_level(), cutoff, l_max, data.kappa);
        const Band band = inverse_band(data, c.prior, w, cutoff, c.alpha, c.n_draws, post_seed, {c.variance, c.burn_in});
        out.push_back({band_contains(band, f0), band.radius, band_linf_diameter(basis, band, bound, s, c.diameter_grid)});
    } else {
        const auto& reg = std::get<RegressionModel>(c.model);
        const RegressionData data = simulate_regression(f0, basis, n, reg.error, reg.sigma0, data_seed);
        const VarianceSpec var = c.variance.value_or(KnownVariance{reg.sigma0 * reg.sigma0});
        const RegressionBand band = regression_band(data, basis, pow2(cutoff), c.prior, var, c.alpha, reg.grid_size,
                                                    c.n_draws, post_seed, c.burn_in);
        const Vector target = eval_function(basis, f0, band.grid);
        out.push_back({regression_band_contains(band, target), band.radius,
                       2.0 * band.radius * band.weight_values.maxCoeff()});
    }
    return out;
}

namespace detail {

inline void aggregate(const std::vector<ReplicationResult>& results, std::size_t method, CoverageRow& row) {
    std::size_t covered = 0, eff = 0;
    double rad = 0.0, diam = 0.0;
    for (const auto& r : results) {
        if (r.failure) continue;
        ++eff;
        const ReplicationOutcome& o = r.methods[method];
        covered += o.covered ? 1 : 0;
        rad += o.radius;
        diam += o.diameter;
    }
    row.reps = results.size();
    row.reps_effective = eff;
    row.coverage = eff ? static_cast<double>(covered) / static_cast<double>(eff) : 0.0;
    row.coverage_se = eff ? std::sqrt(row.coverage * (1.0 - row.coverage) / static_cast<double>(eff)) : 0.0;
    row.mean_radius = eff ? rad / static_cast<double>(eff) : 0.0;
    row.mean_diameter = eff ? diam / static_cast<double>(eff) : 0.0;
}

/// Fails the run when more than 1% of replications failed, rethrowing the
/// failure of the lowest replication index.
inline void check_failures(const std::vector<ReplicationResult>& results) {
    std::size_t failed = 0;
    std::exception_ptr first;
    for (const auto& r : results)
        if (r.failure) {
            ++failed;
            if (!first) first = r.failure;
        }
    if (failed * 100 > results.size()) std::rethrow_exception(first);
}

inline CoverageReport coverage_impl(const ExperimentConfig& c, bool with_gumbel, unsigned workers) {
    if (with_gumbel && !std::holds_alternative<WhiteNoiseModel>(c.model))
        throw ConfigError("baseline comparison needs the white_noise model");
    const WaveletBasis basis = c.basis.make();
    CoverageReport report;
    report.config_hash = config_hash(c);
    for (const Index n : c.n_grid) {
        const int cutoff = select_cutoff(c, n);
        const int l_max = cutoff + c.truncation_offset;
        const CoeffField f0 = truth_for(c, basis, n, cutoff, l_max);
        std::vector<ReplicationResult> results(c.reps);
        parallel_for(c.reps, workers, [&](std::size_t rep) {
            try {
                results[rep].methods = run_replication(c, basis, f0, n, cutoff, rep, with_gumbel);
            } catch (const Error&) {
                results[rep].failure = std::current_exception();
            }
        });
        check_failures(results);
        const bool regression = std::holds_alternative<RegressionModel>(c.model);
        for (std::size_t m = 0; m < (with_gumbel ? 2u : 1u); ++m) {
            CoverageRow row;
            row.n = n;
            row.j_or_p = regression ? pow2(cutoff) : cutoff;
            row.alpha = c.alpha;
            row.method = m == 0 ? Method::Credible : Method::Gumbel;
            aggregate(results, m, row);
            report.rows.push_back(row);
        }
    }
    return report;
}

}  // namespace detail

inline CoverageReport run_coverage(const ExperimentConfig& c, unsigned workers = default_workers()) {
    return detail::coverage_impl(c, false, workers);
}

/// Credible and Gumbel bands on the same replication data.
inline CoverageReport compare_bands(const ExperimentConfig& c, unsigned workers = default_workers()) {
    return detail::coverage_impl(c, true, workers);
}

struct RateStudy {
    CoverageReport report;
    RateFit coverage_fit;
    RateFit diameter_fit;
    RateAxis axis = RateAxis::NOverLogN;
};

/// Coverage study plus log-log slopes of |coverage - (1 - alpha)| and of the
/// mean diameter. Zero coverage errors are floored at 0.5 / reps.
inline RateStudy run_rate_study(const ExperimentConfig& c, unsigned workers = default_workers()) {
    if (c.n_grid.size() < 4) throw ConfigError("rate study needs at least 4 sample sizes");
    RateStudy st;
    st.report = run_coverage(c, workers);
    const auto* inv = std::get_if<InverseModel>(&c.model);
    st.axis = inv && inv->ill.kind == IllPosedness::Kind::Severe ? RateAxis::LogLogN : RateAxis::NOverLogN;
    std::vector<std::pair<double, double>> cov, diam;
    for (const auto& r : st.report.rows) {
        const double floor = 0.5 / static_cast<double>(std::max<std::size_t>(r.reps_effective, 1));
        cov.emplace_back(static_cast<double>(r.n), std::max(std::abs(r.coverage - (1.0 - c.alpha)), floor));
        diam.emplace_back(static_cast<double>(r.n), r.mean_diameter);
    }
    st.coverage_fit = rate_fit(cov, st.axis);
    st.diameter_fit = rate_fit(diam, st.axis);
    return st;
}

// ---------------------------------------------------------------------------
// Bernstein-von Mises study.

struct BvmRow {
    Index n = 0;
    Index p = 0;
    std::string prior;
    std::string variance_spec;
    double discrepancy = 0.0;
    double mc_se = 0.0;
};

/// Regression problem with iid N(0, 1) design entries (so X^T X / n ~ I and
/// sigma0 lambda^{1/2} ~ n^{-1/2}), coefficients of magnitude `beta_magnitude`
/// with random signs, and N(0, 1) errors.
inline RegressionProblem bvm_problem(Index n, Index p, double beta_magnitude, std::uint64_t seed) {
    Rng rng(seed);
    Matrix x(n, p);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < p; ++j) x(i, j) = rng.normal();
    Vector beta(p);
    for (Index j = 0; j < p; ++j) beta[j] = beta_magnitude * rng.rademacher();
    Vector y = x * beta;
    for (Index i = 0; i < n; ++i) y[i] += rng.normal();
    return RegressionProblem(std::move(x), std::move(y), beta, std::nullopt, 1.0);
}

/// Discrepancy between the quasi-posterior and N(beta_hat, sigma0^2 (X^T X)^{-1}).
inline BvmRow bvm_point(const ExperimentConfig& c, Index n, Index p) {
    if (p < 1 || 4 * p > n) throw ConfigError("bvm points need 1 <= p <= n/4");
    const auto un = static_cast<std::uint64_t>(n), up = static_cast<std::uint64_t>(p);
    const RegressionProblem prob =
        bvm_problem(n, p, c.bvm.beta_magnitude, stream_seed(c.master_seed, un, up, StreamRole::Data));
    const VarianceSpec var = c.variance.value_or(KnownVariance{1.0});
    const PosteriorDraws draws = sample_posterior(prob, c.prior, var, c.bvm.n_draws, c.burn_in,
                                                  stream_seed(c.master_seed, un, up, StreamRole::Posterior));
    const Matrix cov = prob.summary().gram.inverse();
    const DiscrepancyEstimate d = rectangle_discrepancy(draws, ols_fit(prob), cov, c.bvm.n_rect, c.bvm.gauss_draws,
                                                        stream_seed(c.master_seed, un, up, StreamRole::Auxiliary));
    return {n, p, prior_name(c.prior), variance_name(var), d.value, d.mc_se};
}

inline std::vector<BvmRow> run_bvm_study(const ExperimentConfig& c, unsigned workers = default_workers()) {
    if (c.bvm.points.empty()) throw ConfigError("bvm.points is empty");
    for (const auto& pt : c.bvm.points)
        if (pt.p < 1 || 4 * pt.p > pt.n) throw ConfigError("bvm points need 1 <= p <= n/4");
    std::vector<BvmRow> rows(c.bvm.points.size());
    std::vector<std::exception_ptr> errors(rows.size());
    parallel_for(rows.size(), workers, [&](std::size_t i) {
        try {
            rows[i] = bvm_point(c, c.bvm.points[i].n, c.bvm.points[i].p);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    });
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return rows;
}

// ---------------------------------------------------------------------------
// Output.

inline void write_coverage_csv(std::ostream& os, const CoverageReport& r) {
    CsvWriter csv(os);
    csv.row({"n", "j_or_p", "alpha", "reps", "reps_effective", "coverage", "coverage_se", "mean_radius",
             "mean_diameter", "method", "config_hash"});
    for (const auto& row : r.rows)
        csv.row({std::to_string(row.n), std::to_string(row.j_or_p), format_double(row.alpha), std::to_string(row.reps),
                 std::to_string(row.reps_effective), format_double(row.coverage), format_double(row.coverage_se),
                 format_double(row.mean_radius), format_double(row.mean_diameter), to_string(row.method),
                 r.config_hash});
}

inline json to_json(const CoverageReport& r) {
    json rows = json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"n", row.n},
                        {"j_or_p", row.j_or_p},
                        {"alpha", row.alpha},
                        {"reps", row.reps},
                        {"reps_effective", row.reps_effective},
                        {"coverage", row.coverage},
                        {"coverage_se", row.coverage_se},
                        {"mean_radius", row.mean_radius},
                        {"mean_diameter", row.mean_diameter},
                        {"method", to_string(row.method)}});
    return {{"rows", rows}, {"config_hash", r.config_hash}};
}

inline json to_json(const RateFit& f) {
    return {{"slope", f.slope}, {"intercept", f.intercept}, {"r_squared", f.r_squared}};
}

inline void write_rate_fits_csv(std::ostream& os, const RateStudy& st) {
    CsvWriter csv(os);
    csv.row({"quantity", "slope", "intercept", "r_squared", "axis"});
    const std::string axis = st.axis == RateAxis::NOverLogN ? "log_n_over_log_n" : "log_log_n";
    for (const auto& [name, fit] : {std::pair{"coverage_error", st.coverage_fit}, std::pair{"mean_diameter", st.diameter_fit}})
        csv.row({name, format_double(fit.slope), format_double(fit.intercept), format_double(fit.r_squared), axis});
}

inline void write_bvm_csv(std::ostream& os, const std::vector<BvmRow>& rows) {
    CsvWriter csv(os);
    csv.row({"n", "p", "prior", "variance_spec", "discrepancy", "mc_se"});
    for (const auto& r : rows)
        csv.row({std::to_string(r.n), std::to_string(r.p), r.prior, r.variance_spec, format_double(r.discrepancy),
                 format_double(r.mc_se)});
}

/// Log-log scatter of |coverage - (1 - alpha)| and mean diameter against n,
/// with the model's rate skeleton overlaid (anchored at the first point).
inline std::string coverage_svg(const CoverageReport& r, const ExperimentConfig& c) {
    const double w = 640, h = 400, margin = 60;
    RateModel model = RateModel::WhiteNoise;
    double r_ill = 0.0;
    if (const auto* inv = std::get_if<InverseModel>(&c.model)) {
        model = inv->ill.kind == IllPosedness::Kind::Mild ? RateModel::MildInverse : RateModel::SevereInverse;
        r_ill = inv->ill.r;
    }
    struct Series {
        std::string name, color;
        std::vector<std::pair<double, double>> pts;
    };
    std::vector<Series> series;
    for (const Method m : {Method::Credible, Method::Gumbel}) {
        Series err{std::string("|coverage error| ") + to_string(m), m == Method::Credible ? "#1f77b4" : "#d62728", {}};
        Series dia{std::string("mean diameter ") + to_string(m), m == Method::Credible ? "#2ca02c" : "#ff7f0e", {}};
        for (const auto& row : r.rows)
            if (row.method == m) {
                const double floor = 0.5 / static_cast<double>(std::max<std::size_t>(row.reps_effective, 1));
                err.pts.emplace_back(static_cast<double>(row.n), std::max(std::abs(row.coverage - (1.0 - c.alpha)), floor));
                if (row.mean_diameter > 0.0) dia.pts.emplace_back(static_cast<double>(row.n), row.mean_diameter);
            }
        if (!err.pts.empty()) series.push_back(err);
        if (!dia.pts.empty()) series.push_back(dia);
    }
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series)
        for (const auto& [x, y] : s.pts) {
            xmin = std::min(xmin, std::log10(x));
            xmax = std::max(xmax, std::log10(x));
            ymin = std::min(ymin, std::log10(y));
            ymax = std::max(ymax, std::log10(y));
        }
    if (series.empty()) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    if (xmax - xmin < 1e-9) xmax = xmin + 1;
    if (ymax - ymin < 1e-9) ymax = ymin + 1;
    auto px = [&](double x) { return margin + (std::log10(x) - xmin) / (xmax - xmin) * (w - 2 * margin); };
    auto py = [&](double y) { return h - margin - (std::log10(y) - ymin) / (ymax - ymin) * (h - 2 * margin); };
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<line x1=\"" << margin << "\" y1=\"" << h - margin << "\" x2=\"" << w - margin << "\" y2=\"" << h - margin
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\"" << h - margin
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << w / 2 << "\" y=\"" << h - 15 << "\" text-anchor=\"middle\" font-size=\"12\">n (log scale)</text>\n";
    int legend = 0;
    for (const auto& s : series) {
        for (const auto& [x, y] : s.pts)
            os << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"4\" fill=\"" << s.color << "\"/>\n";
        // Rate overlay anchored at the first point.
        const auto [x0, y0] = s.pts.front();
        const bool gumbel = s.name.find("gumbel") != std::string::npos && s.name.find("coverage") != std::string::npos;
        const RateModel rm = gumbel ? RateModel::Gumbel : model;
        const double s_model = model_s(c.model);
        const double base = theoretical_rate(rm, s_model, r_ill, std::max(3.0, x0));
        os << "<polyline fill=\"none\" stroke-dasharray=\"4 3\" stroke=\"" << s.color << "\" points=\"";
        for (const auto& [x, y] : s.pts) {
            (void)y;
            const double v = y0 * theoretical_rate(rm, s_model, r_ill, std::max(3.0, x)) / base;
            os << px(x) << ',' << py(std::max(v, 1e-300)) << ' ';
        }
        os << "\"/>\n";
        os << "<text x=\"" << margin + 10 << "\" y=\"" << margin - 40 + 14 * legend++ << "\" font-size=\"11\" fill=\""
           << s.color << "\">" << s.name << " (dashed: rate)</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace credband
