#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

// the CLI builds next to this test tree: <build>/tools/gsd
fs::path cli_path() {
    if (const char* env = std::getenv("GSD_CLI_BIN")) return env;
    return fs::read_symlink("/proc/self/exe").parent_path().parent_path() / "tools" / "gsd";
}

int run(const std::string& args) {
    const std::string cmd = "\"" + cli_path().string() + "\" " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return status < 0 ? status : WEXITSTATUS(status);
}

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "gsd_cli_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

nlohmann::json load_json(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in);
    nlohmann::json j;
    in >> j;
    return j;
}

long line_count(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in);
    long n = 0;
    std::string line;
    while (std::getline(in, line)) ++n;
    return n;
}

}  // namespace

TEST_CASE("cli rejects bad invocations with nonzero exit codes") {
    REQUIRE(run("decode --bogus-flag") != 0);
    REQUIRE(run("decode --method nonsense --V 8 --N 4 --out " +
                scratch("bad_method").string()) != 0);
    REQUIRE(run("decode --model /nonexistent/model.json --out " +
                scratch("bad_model").string()) != 0);
    REQUIRE(run("decode --method vanilla --N not_a_number") != 0);
    REQUIRE(run("") != 0);  // a subcommand is required
}

TEST_CASE("cli decode writes a trace with the definitional NFE count") {
    const fs::path out = scratch("vanilla_nfe");
    REQUIRE(run("decode --method vanilla --V 16 --entropy-mix 0.5 --model-seed 2 --seed 4 "
                "--N 100 --out " + out.string()) == 0);
    const auto trace = load_json(out / "trace.json");
    REQUIRE(trace.at("nfe_target").get<long>() == 99);  // N minus the 1-token prompt
    REQUIRE(trace.at("sequence").size() == 100);
    REQUIRE(fs::exists(out / "manifest.json"));
    REQUIRE(fs::exists(out / "diagnostics.csv"));
}

TEST_CASE("cli theorem-check passes and exits zero") {
    const fs::path out = scratch("thm");
    REQUIRE(run("theorem-check --trials 2000 --V 64 --seed 1 --out " + out.string()) == 0);
    const auto report = load_json(out / "report.json");
    REQUIRE(report.at("passed").get<bool>());
    REQUIRE(report.at("theorem1").at("max_violation").get<double>() <= 1e-12);
}

TEST_CASE("cli verify-exactness exit code follows the report") {
    const fs::path ok = scratch("vex_ok");
    REQUIRE(run("verify-exactness --method sjd --V 4 --entropy-mix 0.5 --model-seed 33 "
                "--len 3 --L 3 --K 0 --trials 20000 --jobs 4 --out " + ok.string()) == 0);
    REQUIRE(load_json(ok / "report.json").at("passed").get<bool>());

    const fs::path bad = scratch("vex_bad");
    REQUIRE(run("verify-exactness --method amplify --k-amp 8 --V 4 --entropy-mix 0.5 "
                "--model-seed 33 --len 3 --L 3 --K 0 --trials 20000 --jobs 4 --out " +
                bad.string()) == 1);
    REQUIRE_FALSE(load_json(bad / "report.json").at("passed").get<bool>());
}

TEST_CASE("cli sweep emits grid-times-seeds raw rows and one summary row per config") {
    const fs::path out = scratch("sweep_grid");
    REQUIRE(run("sweep --methods sjd,gsd --G-list 1,4,16,64 --seeds 0..19 --V 16 "
                "--entropy-mix 1.0 --L 4 --N 17 --K 0 --jobs 4 --out " + out.string()) == 0);
    // 5 configs (sjd + 4 gsd rows) x 20 seeds, plus a header line each
    REQUIRE(line_count(out / "sweep_raw.csv") == 101);
    REQUIRE(line_count(out / "sweep_summary.csv") == 6);
}

TEST_CASE("cli config file fills unset flags; explicit flags win") {
    const fs::path out = scratch("config_prec");
    const fs::path cfg = out / "cfg.json";
    {
        std::ofstream f(cfg);
        f << R"({"method":"sjd","V":16,"N":20,"L":4,"K":0,"entropy-mix":0.5,"seed":9})";
    }
    REQUIRE(run("decode --config " + cfg.string() + " --method vanilla --out " +
                out.string()) == 0);
    const auto trace = load_json(out / "trace.json");
    REQUIRE(trace.at("config").at("method").get<std::string>() == "vanilla");  // flag wins
    REQUIRE(trace.at("config").at("N").get<int>() == 20);                      // config fills
    REQUIRE(trace.at("config").at("seed").get<std::uint64_t>() == 9);
}

TEST_CASE("cli gen-model output reloads through decode --model deterministically") {
    const fs::path model_dir = scratch("genmodel");
    REQUIRE(run("gen-model --V 32 --D 8 --entropy-mix 0.7 --model-seed 5 --out " +
                model_dir.string()) == 0);

    const fs::path run_a = scratch("genmodel_a");
    const fs::path run_b = scratch("genmodel_b");
    const std::string decode_args = "decode --method sjd --L 4 --N 24 --K 0 --seed 3 ";
    REQUIRE(run(decode_args + "--model " + (model_dir / "model.json").string() + " --out " +
                run_a.string()) == 0);
    // regenerating from the same generator flags must agree with the saved file
    REQUIRE(run(decode_args + "--V 32 --D 8 --entropy-mix 0.7 --model-seed 5 --out " +
                run_b.string()) == 0);
    REQUIRE(load_json(run_a / "trace.json").at("sequence") ==
            load_json(run_b / "trace.json").at("sequence"));
}
