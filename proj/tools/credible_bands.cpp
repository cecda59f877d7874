// credible_bands: experiment runner for quasi-Bayesian credible bands.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include "credband/diagnostics.hpp"
#include "credband/errors.hpp"
#include "credband/experiments.hpp"
#include "credband/models.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace credband;

namespace {

struct Invocation {
    std::string subcommand;
    std::string config_path;
    std::string output_dir = "out";
    std::vector<std::string> overrides;
    unsigned workers = 0;
    bool emit_svg = false;
    std::optional<std::uint64_t> seed;
    std::string data_path;
    bool dump_draws = false;
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// SHA-1 of "blob <size>\0<content>", as git computes object ids.
std::string git_blob_hash(const std::string& content) {
    const std::string header = "blob " + std::to_string(content.size()) + '\0';
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
    EVP_DigestUpdate(ctx, header.data(), header.size());
    EVP_DigestUpdate(ctx, content.data(), content.size());
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return os.str();
}

class OutputSet {
public:
    explicit OutputSet(fs::path dir) : dir_(std::move(dir)) {
        std::error_code ec;
        fs::create_directories(dir_, ec);
        if (ec) throw ConfigError("cannot create output directory '" + dir_.string() + "': " + ec.message());
    }

    void write(const std::string& name, const std::string& content) {
        std::ofstream out(dir_ / name, std::ios::binary);
        if (!out) throw ConfigError("cannot write '" + (dir_ / name).string() + "'");
        out << content;
        hashes_[name] = git_blob_hash(content);
    }

    void manifest(const std::string& subcommand, const json& config, const std::string& hash, double seconds,
                  unsigned workers) {
        json outputs = json::object();
        for (const auto& [k, v] : hashes_) outputs[k] = v;
        json m{{"subcommand", subcommand}, {"config", config},        {"config_hash", hash},
               {"outputs", outputs},       {"wall_time_seconds", seconds}, {"workers", workers}};
        std::ofstream out(dir_ / "manifest.json", std::ios::binary);
        out << m.dump(2) << '\n';
    }

private:
    fs::path dir_;
    std::map<std::string, std::string> hashes_;
};

ExperimentConfig load_config(const Invocation& inv, json& canonical) {
    json doc;
    try {
        doc = json::parse(read_file(inv.config_path));
    } catch (const json::parse_error& e) {
        throw ConfigError("config '" + inv.config_path + "' is not valid JSON: " + e.what());
    }
    for (const auto& o : inv.overrides) apply_override(doc, o);
    if (inv.seed) doc["master_seed"] = *inv.seed;
    ExperimentConfig c = experiment_config_from_json(doc);
    canonical = to_json(c);
    return c;
}

std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

template <class F>
std::string to_text(F&& f) {
    std::ostringstream os;
    f(os);
    return os.str();
}

/// Band for a stored sequence dataset, using the config's prior, variance,
/// weights, cutoff and alpha.
void run_band(const Invocation& inv, const ExperimentConfig& c, OutputSet& out) {
    if (inv.data_path.empty()) throw ConfigError("band needs --data PATH (sequence dataset JSON)");
    json dj;
    try {
        dj = json::parse(read_file(inv.data_path));
    } catch (const json::parse_error& e) {
        throw ConfigError("dataset '" + inv.data_path + "' is not valid JSON: " + e.what());
    }
    const SequenceData data = sequence_data_from_json(dj);
    const WaveletBasis basis = c.basis.make();
    if (data.observations.j0() != basis.coarse_level()) throw ConfigError("dataset J0 does not match the basis");
    const int cutoff = select_cutoff(c, data.n);
    if (cutoff > data.observations.l_max()) throw ConfigError("cutoff exceeds the dataset's finest level");
    const int l_max = data.observations.l_max();
    const LevelWeights w = weights_for(c, basis.coarse_level(), cutoff, l_max, data.kappa);
    const auto seed = stream_seed(c.master_seed, static_cast<std::uint64_t>(data.n), 0, StreamRole::Posterior);
    Band band;
    if (data.kappa) {
        band = inverse_band(data, c.prior, w, cutoff, c.alpha, c.n_draws, seed, {c.variance, c.burn_in});
    } else {
        const auto* wn = std::get_if<WhiteNoiseModel>(&c.model);
        const Centering centering = wn ? wn->centering : Centering::FInfinity;
        band = castillo_nickl_band(data, c.prior, w, cutoff, centering, c.alpha, c.n_draws, seed, {c.variance, c.burn_in});
    }
    if (inv.dump_draws) {
        const SieveFit fit = fit_sieve(data, c.prior, w, cutoff, c.alpha, c.n_draws, seed, {c.variance, c.burn_in});
        out.write("draws.csv", to_text([&](std::ostream& os) { write_draws_csv(os, fit.draws); }));
    }
    out.write("band.json", dump_json(to_json(band)));
    const Index g = c.diameter_grid;
    Vector grid(g);
    for (Index i = 0; i < g; ++i) grid[i] = (static_cast<double>(i) + 0.5) / static_cast<double>(g);
    const BandEnvelope env = band_envelope(basis, band, grid, model_bound(c.model), model_s(c.model));
    out.write("band.csv", to_text([&](std::ostream& os) {
                  CsvWriter csv(os);
                  csv.row({"t", "lower", "upper"});
                  for (Index i = 0; i < g; ++i)
                      csv.row({format_double(env.t[i]), format_double(env.lower[i]), format_double(env.upper[i])});
              }));
}

/// Replication 0 of the first grid point: dataset plus its truth.
void run_simulate(const ExperimentConfig& c, OutputSet& out) {
    const WaveletBasis basis = c.basis.make();
    const Index n = c.n_grid.front();
    const int cutoff = select_cutoff(c, n);
    const int l_max = cutoff + c.truncation_offset;
    const CoeffField f0 = truth_for(c, basis, n, cutoff, l_max);
    const auto seed = stream_seed(c.master_seed, static_cast<std::uint64_t>(n), 0, StreamRole::Data);
    if (const auto* m = std::get_if<WhiteNoiseModel>(&c.model)) {
        out.write("data.json", dump_json(to_json(simulate_white_noise(f0, n, l_max, seed, m->noise_sd))));
    } else if (const auto* m = std::get_if<InverseModel>(&c.model)) {
        out.write("data.json", dump_json(to_json(simulate_inverse_problem(f0, m->ill, n, l_max, seed))));
    } else {
        const auto& reg = std::get<RegressionModel>(c.model);
        out.write("data.json", dump_json(to_json(simulate_regression(f0, basis, n, reg.error, reg.sigma0, seed))));
    }
    out.write("truth.json", dump_json(to_json(f0)));
}

int dispatch(const Invocation& inv) {
    const auto start = std::chrono::steady_clock::now();
    json canonical;
    const ExperimentConfig c = load_config(inv, canonical);
    const unsigned workers = inv.workers ? inv.workers : default_workers();
    OutputSet out(inv.output_dir);
    const std::string hash = config_hash(c);

    if (inv.subcommand == "coverage" || inv.subcommand == "compare-baseline") {
        const CoverageReport r = inv.subcommand == "coverage" ? run_coverage(c, workers) : compare_bands(c, workers);
        out.write("coverage.csv", to_text([&](std::ostream& os) { write_coverage_csv(os, r); }));
        out.write("coverage.json", dump_json(to_json(r)));
        if (inv.emit_svg) out.write("coverage.svg", coverage_svg(r, c));
    } else if (inv.subcommand == "rate-study") {
        const RateStudy st = run_rate_study(c, workers);
        out.write("coverage.csv", to_text([&](std::ostream& os) { write_coverage_csv(os, st.report); }));
        out.write("rate_fits.csv", to_text([&](std::ostream& os) { write_rate_fits_csv(os, st); }));
        json j = to_json(st.report);
        j["coverage_fit"] = to_json(st.coverage_fit);
        j["diameter_fit"] = to_json(st.diameter_fit);
        out.write("rate_study.json", dump_json(j));
        if (inv.emit_svg) out.write("coverage.svg", coverage_svg(st.report, c));
    } else if (inv.subcommand == "bvm-check") {
        const auto rows = run_bvm_study(c, workers);
        out.write("bvm.csv", to_text([&](std::ostream& os) { write_bvm_csv(os, rows); }));
    } else if (inv.subcommand == "band") {
        run_band(inv, c, out);
    } else if (inv.subcommand == "simulate") {
        run_simulate(c, out);
    } else {
        throw ConfigError("unknown subcommand '" + inv.subcommand + "'");
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.manifest(inv.subcommand, canonical, hash, secs, workers);
    return 0;
}

void fail(int code, const std::string& reason) {
    std::string line = reason;
    for (char& ch : line)
        if (ch == '\n' || ch == '\r') ch = ' ';
    std::cerr << "ERROR " << code << ": " << line << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Quasi-Bayesian credible bands: coverage experiments and band construction"};
    app.require_subcommand(1);
    Invocation inv;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", inv.config_path, "experiment config (JSON, schema_version 1)")->required();
        sub->add_option("--out", inv.output_dir, "output directory")->capture_default_str();
        sub->add_option("--set", inv.overrides, "override a config field, e.g. model.s=1.5 (repeatable)");
        sub->add_option("--workers", inv.workers, "worker threads (default $CREDIBLE_BANDS_WORKERS or all cores)")
            ->check(CLI::PositiveNumber);
        sub->add_flag("--svg", inv.emit_svg, "also write an SVG plot");
        sub->add_option("--seed", inv.seed, "override master_seed");
    };
    const std::vector<std::pair<std::string, std::string>> subs = {
        {"coverage", "Monte Carlo coverage of the credible band"},
        {"rate-study", "coverage study with fitted log-log rates"},
        {"compare-baseline", "credible band versus the Gumbel baseline on shared data"},
        {"bvm-check", "rectangle discrepancy between posterior and its Gaussian limit"},
        {"band", "build one band from a stored dataset"},
        {"simulate", "simulate one dataset from the config"}};
    for (const auto& [name, help] : subs) {
        CLI::App* sub = app.add_subcommand(name, help);
        add_common(sub);
        if (name == "band") {
            sub->add_option("--data", inv.data_path, "sequence dataset JSON")->required();
            sub->add_flag("--dump-draws", inv.dump_draws, "write posterior draws to draws.csv");
        }
        sub->callback([&inv, name = name] { inv.subcommand = name; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        fail(1, e.what());
        return 1;
    }

    try {
        return dispatch(inv);
    } catch (const Error& e) {
        fail(e.exit_code(), e.what());
        return e.exit_code();
    } catch (const std::exception& e) {
        fail(1, e.what());
        return 1;
    }
}
