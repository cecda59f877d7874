#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

const std::string kBinary = CREDIBLE_BANDS_BINARY;
const fs::path kSource = CREDIBLE_BANDS_SOURCE_DIR;

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("credible_bands_cli_" + name);
    fs::remove_all(p);
    return p;
}

struct RunResult {
    int code;
    std::string err;
};

RunResult run(const std::string& args, const fs::path& out) {
    fs::create_directories(out);
    const fs::path err = out / "stderr.txt";
    const std::string cmd = kBinary + " " + args + " --out " + out.string() + " 2> " + err.string() + " > /dev/null";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
}

std::string config(const std::string& name) { return (kSource / "configs" / name).string(); }

}  // namespace

TEST_CASE("smoke coverage run", "[cli]") {
    const fs::path out = scratch("smoke");
    const RunResult r = run("coverage --config " + config("smoke_coverage.json") + " --svg", out);
    REQUIRE(r.code == 0);
    const std::string csv = slurp(out / "coverage.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
    CHECK(fs::exists(out / "coverage.json"));
    CHECK(slurp(out / "coverage.svg").rfind("<svg", 0) == 0);

    const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
    CHECK(manifest["config_hash"].get<std::string>().size() == 16);
    CHECK(csv.find(manifest["config_hash"].get<std::string>()) != std::string::npos);
    CHECK(manifest.contains("wall_time_seconds"));
    CHECK(manifest["config"]["reps"] == 200);
}

TEST_CASE("outputs do not depend on the worker count", "[cli]") {
    const fs::path a = scratch("w1"), b = scratch("w4");
    REQUIRE(run("coverage --config " + config("smoke_coverage.json") + " --workers 1", a).code == 0);
    REQUIRE(run("coverage --config " + config("smoke_coverage.json") + " --workers 4", b).code == 0);
    CHECK(slurp(a / "coverage.csv") == slurp(b / "coverage.csv"));
    CHECK(slurp(a / "coverage.json") == slurp(b / "coverage.json"));
}

TEST_CASE("overrides and seeds change the config hash", "[cli]") {
    auto hash_of = [](const std::string& extra, const std::string& tag) {
        const fs::path out = scratch(tag);
        REQUIRE(run("simulate --config " + config("smoke_coverage.json") + extra, out).code == 0);
        return nlohmann::json::parse(slurp(out / "manifest.json"))["config_hash"].get<std::string>();
    };
    const std::string base = hash_of("", "h0");
    CHECK(hash_of(" --set alpha=0.1", "h1") == base);
    CHECK(hash_of(" --set model.s=1.5", "h2") != base);
    CHECK(hash_of(" --seed 2", "h3") != base);
}

TEST_CASE("band on the bundled dataset", "[cli]") {
    const fs::path out = scratch("band");
    const std::string data = (kSource / "data" / "white_noise_n1024.json").string();
    REQUIRE(run("band --config " + config("smoke_coverage.json") + " --data " + data + " --dump-draws", out).code == 0);
    std::istringstream csv(slurp(out / "band.csv"));
    std::string line;
    std::getline(csv, line);
    CHECK(line == "t,lower,upper");
    int rows = 0;
    while (std::getline(csv, line)) {
        double t, lo, hi;
        char c1, c2;
        std::istringstream fields(line);
        REQUIRE(fields >> t >> c1 >> lo >> c2 >> hi);
        CHECK(lo <= hi);
        ++rows;
    }
    CHECK(rows == 512);
    CHECK(slurp(out / "draws.csv").rfind("beta_1,", 0) == 0);
}

TEST_CASE("error exit codes", "[cli]") {
    SECTION("missing config") {
        const RunResult r = run("coverage --config /nonexistent/config.json", scratch("e1"));
        CHECK(r.code == 1);
        CHECK(r.err.rfind("ERROR 1:", 0) == 0);
    }
    SECTION("invalid field") {
        const RunResult r = run("coverage --config " + config("smoke_coverage.json") + " --set alpha=0.9", scratch("e2"));
        CHECK(r.code == 1);
        CHECK(r.err.rfind("ERROR 1:", 0) == 0);
    }
    SECTION("unknown flag") {
        CHECK(run("coverage --config " + config("smoke_coverage.json") + " --bogus", scratch("e3")).code == 1);
    }
    SECTION("kappa underflow is numerical") {
        const RunResult r = run("coverage --config " + config("smoke_coverage.json") +
                                    " --set model={\\\"type\\\":\\\"inverse\\\",\\\"ill_posedness\\\":{\\\"kind\\\":\\\"severe\\\",\\\"r\\\":1}}"
                                    " --set truncation_offset=10",
                                scratch("e4"));
        CHECK(r.code == 2);
        CHECK(r.err.rfind("ERROR 2:", 0) == 0);
    }
    SECTION("sampler diagnostics") {
        const RunResult r = run("coverage --config " + config("smoke_coverage.json") +
                                    " --set prior.kind=laplace --set prior.scale=1e-9 --set model.centering=f_infinity"
                                    " --set model.tail_free=false",
                                scratch("e5"));
        CHECK(r.code == 3);
        CHECK(r.err.rfind("ERROR 3:", 0) == 0);
        CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
    }
}
