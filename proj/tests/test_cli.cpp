#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "scaleqsd/commands.hpp"

using namespace scaleqsd;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
    TempDir() {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        path_ = fs::temp_directory_path() / (std::string("scaleqsd_cli_") + info->test_suite_name() + "_" + info->name());
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path& path() const { return path_; }

    std::string write(const std::string& name, const std::string& text) const {
        std::ofstream(path_ / name) << text;
        return (path_ / name).string();
    }

private:
    fs::path path_;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run_cli(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + " " + SCALEQSD_CLI_PATH + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string config(const std::string& name) { return std::string(SCALEQSD_CONFIG_DIR) + "/" + name; }

std::string config_error(const std::string& text) {
    try {
        parse_config_json(json::parse(text));
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST(Config, ExpressionCoefficientUnaryMinusBindsLooserThanPower) {
    auto cfg = parse_config_json(json::parse(R"({"process": {"type": "diffusion", "drift": "-x^3"}, "grid": {"a": 0, "b": 1, "n": 10}})"));
    auto model = build_model(cfg, build_grid(cfg));
    EXPECT_DOUBLE_EQ(model.drift(0.5), -0.125);
    EXPECT_DOUBLE_EQ(CoefficientExpr::parse("-x^2")(3.0), -9.0);
    EXPECT_DOUBLE_EQ(CoefficientExpr::parse("2^3^2")(0.0), 512.0);
    EXPECT_DOUBLE_EQ(CoefficientExpr::parse("1 - 2*x + sqrt(abs(x))")(4.0), -5.0);
}

TEST(Config, CatalogCoefficientMatchesExpression) {
    auto cfg = parse_config_json(
        json::parse(R"({"process": {"type": "diffusion", "drift": {"catalog": "cubic_restoring"}}, "grid": {"a": 0, "b": 2, "n": 10}})"));
    auto model = build_model(cfg, build_grid(cfg));
    EXPECT_DOUBLE_EQ(model.drift(1.5), -3.375);
}

TEST(Config, UnknownKeyIsNamedWithPath) {
    auto msg = config_error(R"({"process": {"type": "diffusion", "driftt": "-x"}})");
    EXPECT_NE(msg.find("process.driftt"), std::string::npos) << msg;
    msg = config_error(R"({"qq": [1]})");
    EXPECT_NE(msg.find("'qq'"), std::string::npos) << msg;
}

TEST(Config, DefaultsAreEchoed) {
    auto j = to_json(parse_config_json(json::object()));
    EXPECT_EQ(j["tolerances"]["series"].get<double>(), 1e-12);
    EXPECT_EQ(j["grid"]["b"].get<double>(), 1.0);
    EXPECT_EQ(j["grid"]["n"].get<std::size_t>(), 1000u);
    EXPECT_EQ(j["mode"].get<std::string>(), "accessible_both");
    EXPECT_EQ(j["q"].size(), 4u);
    auto round = to_json(parse_config_json(j));
    EXPECT_EQ(round.dump(), j.dump());
}

TEST(Config, RejectsInconsistentGrids) {
    EXPECT_NE(config_error(R"({"grid": {"a": 0, "b": 1, "L": 5}})").find("not both"), std::string::npos);
    EXPECT_FALSE(config_error(R"({"grid": {"a": 0, "b": 0}})").empty());
    EXPECT_FALSE(config_error(R"({"grid": {"n": 4}})").empty());
    EXPECT_FALSE(config_error(R"({"grid": {"L": 5}, "mode": "accessible_both"})").empty());
    EXPECT_FALSE(config_error(R"({"mode": "sideways"})").empty());
    EXPECT_FALSE(config_error(R"({"process": {"type": "levy", "sigma": 0}})").empty());
    EXPECT_FALSE(config_error(R"({"process": {"type": "diffusion", "drift": {"expr": "x", "catalog": "zero"}}})").empty());
}

TEST(Config, TruncationDefaultsToInaccessibleUpper) {
    auto cfg = parse_config_json(json::parse(R"({"grid": {"a": 0, "L": 5, "n": 100}})"));
    EXPECT_EQ(cfg.mode, BoundaryMode::InaccessibleUpper);
    EXPECT_DOUBLE_EQ(cfg.grid.right(), 5.0);
}

TEST(Config, BadExpressionReportsField) {
    auto cfg = parse_config_json(json::parse(R"j({"process": {"type": "diffusion", "drift": "log(x - 1)"}, "grid": {"n": 10}})j"));
    try {
        build_model(cfg, build_grid(cfg));
        FAIL() << "expected a configuration error";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("process.drift"), std::string::npos);
    }
}

TEST(ExitCodes, IdentitiesPassOnUnitInterval) {
    TempDir d;
    EXPECT_EQ(run_cli("identities --config " + config("bm_unit.json") + " --out " + d.path().string()), kExitOk);
    auto j = json::parse(slurp(d.path() / "identities.json"));
    EXPECT_TRUE(j["pass"].get<bool>());
    EXPECT_TRUE(fs::exists(d.path() / "identities.csv"));
}

TEST(ExitCodes, ConfigurationErrors) {
    TempDir d;
    const auto out = " --out " + d.path().string();
    EXPECT_EQ(run_cli("lambda0 --config " + (d.path() / "missing.json").string() + out), kExitConfig);
    EXPECT_EQ(run_cli("lambda0 --config " + d.write("bad.json", "{\"grid\": ") + out), kExitConfig);
    EXPECT_EQ(run_cli("lambda0 --config " + d.write("typo.json", R"({"seeed": 1})") + out), kExitConfig);
    EXPECT_EQ(run_cli("lambda0 --bogus --config " + config("bm_unit.json") + out), kExitConfig);
    EXPECT_EQ(run_cli("mc --config " + config("bm_unit.json") + " --paths 1" + out), kExitConfig);
    EXPECT_EQ(run_cli("mc --config " + config("bm_unit.json") + " --q 1,abc" + out), kExitConfig);
    EXPECT_EQ(run_cli(""), kExitConfig);
}

TEST(ExitCodes, InconclusiveBoundary) {
    TempDir d;
    auto cfg = d.write("ou.json", R"({"process": {"type": "diffusion", "drift": "-x"}, "grid": {"a": 0, "L": 6, "n": 600}})");
    EXPECT_EQ(run_cli("lambda0 --config " + cfg + " --out " + d.path().string()), kExitInconclusive);
}

TEST(ExitCodes, DoublePrecisionIdentitiesFailOnLongDriftGrid) {
    TempDir d;
    auto cfg = d.write("drift.json",
                       R"({"process": {"type": "levy", "c": 1}, "grid": {"a": 0, "L": 20, "n": 400}, "q": [-1, 0.5, 2], "series": false})");
    EXPECT_EQ(run_cli("identities --config " + cfg + " --out " + d.path().string()), kExitInvariant);
    auto j = json::parse(slurp(d.path() / "identities.json"));
    EXPECT_FALSE(j["pass"].get<bool>());
    EXPECT_EQ(j["precision"].get<std::string>(), "double");
}

TEST(Commands, Lambda0OnDriftedHalfLine) {
    TempDir d;
    ASSERT_EQ(run_cli("lambda0 --config " + config("bm_drift.json") + " --out " + d.path().string()), kExitOk);
    auto j = json::parse(slurp(d.path() / "lambda0.json"));
    EXPECT_NEAR(j["lambda0"].get<double>(), 0.5, 1e-4);
    EXPECT_EQ(j["boundary"]["kind"].get<std::string>(), "non_entrance");
    EXPECT_FALSE(j["no_qsd"].get<bool>());
}

TEST(Commands, DriftlessHalfLineHasNoQsd) {
    TempDir d;
    ASSERT_EQ(run_cli("qsd --config " + config("bm_halfline.json") + " --out " + d.path().string()), kExitOk);
    auto text = slurp(d.path() / "qsd.json");
    EXPECT_NE(text.find("no QSD (λ₀=0)"), std::string::npos);
    EXPECT_FALSE(json::parse(text)["has_qsd"].get<bool>());
    EXPECT_FALSE(fs::exists(d.path() / "qsd.csv"));
}

TEST(Commands, ComputeWWritesRowsAndClosedForm) {
    TempDir d;
    ASSERT_EQ(run_cli("compute-w --config " + config("bm_unit.json") + " --q 0.5 --out " + d.path().string()), kExitOk);
    auto j = json::parse(slurp(d.path() / "compute_w.json"));
    ASSERT_EQ(j["scale_functions"].size(), 1u);
    EXPECT_LT(j["scale_functions"][0]["closed_form_rel_error"].get<double>(), 1e-5);
    EXPECT_LT(j["scale_functions"][0]["max_rel_deviation"].get<double>(), 1e-10);
    auto rows = slurp(d.path() / "w_rows.csv");
    EXPECT_EQ(rows.substr(0, rows.find('\n')), "node,W_q=0.5");
}

TEST(Commands, ReportWritesManifest) {
    TempDir d;
    ASSERT_EQ(run_cli("report --config " + config("reflected_bm.json") + " --out " + d.path().string()), kExitOk);
    auto m = json::parse(slurp(d.path() / "manifest.json"));
    EXPECT_EQ(m["config"]["mode"].get<std::string>(), "accessible_kill_at_zero");
    for (const auto& f : m["files"]) EXPECT_TRUE(fs::exists(d.path() / f.get<std::string>())) << f;
    EXPECT_TRUE(m["truncation_deltas"].empty());
}

TEST(Reproducibility, SameSeedGivesIdenticalFiles) {
    TempDir d;
    const std::string args = "mc --config " + config("bm_unit.json") + " --q 0.5 --paths 3000 --dt 1e-3 --t 0.1,0.2 --bins 10";
    ASSERT_EQ(run_cli(args + " --seed 5 --out " + (d.path() / "a").string(), "SCALEQSD_THREADS=1"), kExitOk);
    ASSERT_EQ(run_cli(args + " --seed 5 --out " + (d.path() / "b").string(), "SCALEQSD_THREADS=2"), kExitOk);
    ASSERT_EQ(run_cli(args + " --seed 6 --out " + (d.path() / "c").string()), kExitOk);
    const auto a = slurp(d.path() / "a" / "mc.json");
    EXPECT_FALSE(a.empty());
    EXPECT_EQ(a, slurp(d.path() / "b" / "mc.json"));
    EXPECT_EQ(slurp(d.path() / "a" / "conditional_law.csv"), slurp(d.path() / "b" / "conditional_law.csv"));
    EXPECT_NE(a, slurp(d.path() / "c" / "mc.json"));
}

TEST(Commands, MonteCarloAgreesWithKernels) {
    TempDir d;
    ASSERT_EQ(run_cli("mc --config " + config("bm_unit.json") + " --q 1 --paths 20000 --dt 1e-3 --t 0.3,0.6 --out " +
                      d.path().string()),
              kExitOk);
    auto j = json::parse(slurp(d.path() / "mc.json"));
    EXPECT_TRUE(j["exit_laplace"][0]["within_3se"].get<bool>());
    EXPECT_TRUE(j["mean_exit_time"]["within_3se"].get<bool>());
    EXPECT_TRUE(j["invariance"]["within_3se"].get<bool>());
    EXPECT_EQ(j["qsd_status"].get<std::string>(), "unique QSD");
}
