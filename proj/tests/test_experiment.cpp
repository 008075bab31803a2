#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "beltrami/experiment.hpp"

using namespace beltrami;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("beltrami_test_" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
    std::vector<std::vector<std::string>> rows;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        rows.push_back(std::move(cells));
    }
    return rows;
}

Json config(const std::string& name) { return load_json_file(fs::path(BELTRAMI_CONFIG_DIR) / name); }

std::string config_error(const Json& j) {
    try {
        parse_config(j);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

int lab(const std::string& args) {
    const int rc = std::system((std::string(BELTRAMI_LAB) + " " + args + " > /dev/null 2>&1").c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

} // namespace

TEST(Experiment, ConvertIdentity) {
    const auto dir = scratch("convert");
    const auto rec = run(parse_config(config("convert_identity.json")), dir);
    EXPECT_TRUE(rec.all_passed());
    EXPECT_EQ(rec.find_metric("sigma_11"), 1.0);
    EXPECT_EQ(rec.find_metric("sigma_12"), 0.0);
    EXPECT_EQ(rec.find_metric("sigma_21"), 0.0);
    EXPECT_EQ(rec.find_metric("sigma_22"), 1.0);
    const Json summary = Json::parse(slurp(dir / "summary.json"));
    EXPECT_EQ(summary["task"], "convert");
    EXPECT_EQ(summary["metrics"]["sigma_11"], 1.0);
    EXPECT_TRUE(summary["all_passed"].get<bool>());
    EXPECT_TRUE(fs::exists(dir / "convert.csv"));
}

TEST(Experiment, PrimaryPairIdentity) {
    const auto dir = scratch("pp_identity");
    const auto rec = run(parse_config(config("primary_pair_identity.json")), dir);
    EXPECT_TRUE(rec.all_passed());
    EXPECT_NEAR(*rec.find_metric("min_det_DU"), 1.0, 1e-10);
    EXPECT_NEAR(*rec.find_metric("max_det_DU"), 1.0, 1e-10);
    for (const char* f : {"summary.json", "summary.csv", "run.log", "vertices.csv", "triangles.csv"})
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    const auto tri = read_csv(dir / "triangles.csv");
    EXPECT_EQ(tri.size(), 1u + 2u * 8u * 8u);
}

TEST(Experiment, HomogenizeLaminate) {
    const auto rec = run(parse_config(config("homogenize_laminate.json")), scratch("homog"));
    EXPECT_TRUE(rec.all_passed());
    EXPECT_LE(*rec.find_metric("sigma_eff_error"), 0.01);
    EXPECT_LE(*rec.find_metric("area_theorem_gap"), 0.02);
}

TEST(Experiment, CellAndSolveConfigs) {
    for (const char* name : {"cell_checkerboard.json", "solve_hexagon.json", "convert_extremal.json"}) {
        const auto rec = run(parse_config(config(name)), scratch(name));
        EXPECT_TRUE(rec.all_passed()) << name << " " << rec.error;
    }
}

TEST(Experiment, DiagnoseCheckerboard) {
    const auto dir = scratch("diagnose");
    const auto rec = run(parse_config(config("diagnose_checkerboard.json")), dir);
    EXPECT_TRUE(rec.all_passed()) << rec.error;
    EXPECT_GT(*rec.find_metric("bmo_log_det_DU"), 0.0);
    for (const char* f : {"square_stats.csv", "ainfty_samples.csv", "triangles.csv"})
        EXPECT_TRUE(fs::exists(dir / f)) << f;
}

TEST(Sweep, CheckerboardErrorDecreasesWithResolution) {
    // nested conforming meshes: the discrete energy, hence the error, decreases monotonically
    const auto dir = scratch("sweep_cb");
    const auto rows = sweep(expand_sweep(config("sweep_checkerboard_resolution.json")), dir);
    ASSERT_EQ(rows.size(), 3u);
    const auto csv = read_csv(dir / "sweep.csv");
    ASSERT_EQ(csv.size(), 4u);
    ASSERT_EQ(csv[0][11], "sigma_eff_error");
    double prev = kInfinity;
    for (std::size_t i = 1; i < csv.size(); ++i) {
        EXPECT_EQ(csv[i][4], "ok");
        const double err = std::stod(csv[i][11]);
        EXPECT_LT(err, prev);
        prev = err;
    }
}

TEST(Sweep, LaminateIsExactAtEveryResolution) {
    // strips aligned with the mesh are reproduced exactly by P1
    const auto dir = scratch("sweep_lam");
    const auto rows = sweep(expand_sweep(config("sweep_laminate_resolution.json")), dir);
    ASSERT_EQ(rows.size(), 3u);
    for (const auto& r : rows) {
        EXPECT_EQ(r.status, "ok");
        EXPECT_LE(*r.record.find_metric("sigma_eff_error"), 1e-10);
    }
}

TEST(Sweep, RandomKAllPositive) {
    const auto dir = scratch("sweep_K");
    const auto rows = sweep(expand_sweep(config("sweep_random_K.json")), dir);
    ASSERT_EQ(rows.size(), 4u);
    const auto csv = read_csv(dir / "sweep.csv");
    for (std::size_t i = 1; i < csv.size(); ++i) {
        EXPECT_EQ(csv[i][4], "ok");
        EXPECT_GT(std::stod(csv[i][6]), 0.0);
    }
}

TEST(Sweep, EmptyListGivesHeaderOnly) {
    const auto dir = scratch("sweep_empty");
    const auto rows = sweep(expand_sweep(Json::parse(R"({"base": {"task": "convert"}, "runs": []})")), dir);
    EXPECT_TRUE(rows.empty());
    EXPECT_EQ(slurp(dir / "sweep.csv"), std::string(sweep_csv_header()) + "\n");
}

TEST(Sweep, BadRowIsRecordedAndSweepContinues) {
    const auto dir = scratch("sweep_bad");
    const Json doc = Json::parse(R"({"base": {"task": "primary-pair", "resolution": 8,
        "coefficient": {"family": "random_piecewise", "K_max": 2}},
        "runs": [{"coefficient": {"seed": 1}}, {}, {"coefficient": {"seed": 2}}]})");
    const auto rows = sweep(expand_sweep(doc), dir);
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0].status, "ok");
    EXPECT_EQ(rows[1].status, "error");
    EXPECT_NE(rows[1].record.error.find("coefficient.seed"), std::string::npos);
    EXPECT_EQ(rows[2].status, "ok");
}

TEST(Config, ErrorsNameTheField) {
    EXPECT_NE(config_error(Json::parse(R"({"task": "primary-pair", "coefficient": {"family": "random_piecewise", "K_max": 2}})"))
                  .find("coefficient.seed"),
              std::string::npos);
    EXPECT_NE(config_error(Json::parse(R"({"task": "primary-pair"})")).find("coefficient"), std::string::npos);
    EXPECT_NE(config_error(Json::parse(R"({"task": "bogus"})")).find("task"), std::string::npos);
    EXPECT_NE(config_error(Json::parse(R"({"task": "primary-pair", "resolution": 1,
        "coefficient": {"family": "constant"}})")).find("resolution"), std::string::npos);
    EXPECT_NE(config_error(Json::parse(R"({"task": "diagnose", "domain": {"kind": "periodic_cell"},
        "coefficient": {"family": "constant"}})")).find("domain"), std::string::npos);
    EXPECT_NE(config_error(Json::parse(R"({"task": "convert", "convert": {"mu": [0, 0]}})")).find("convert.nu"),
              std::string::npos);
}

TEST(Config, OverridesReachSeedAndResolution) {
    Overrides o;
    o.resolution = 16;
    o.seed = 99;
    const auto cfg = parse_config(apply_overrides(config("primary_pair_random.json"), o));
    EXPECT_EQ(cfg.resolution, 16);
    EXPECT_EQ(std::get<coeff::RandomPiecewise>(*cfg.coefficient).seed, 99u);
}

TEST(Determinism, RerunIsBitIdentical) {
    Json j = config("primary_pair_random.json");
    j["resolution"] = 32;
    const auto cfg = parse_config(j);
    const auto a = scratch("det_a"), b = scratch("det_b");
    run(cfg, a);
    run(cfg, b);
    for (const char* f : {"summary.csv", "vertices.csv", "triangles.csv"})
        EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

TEST(Cli, ExitCodes) {
    const auto dir = scratch("cli");
    const std::string cfg = std::string(BELTRAMI_CONFIG_DIR) + "/convert_identity.json";
    EXPECT_EQ(lab("convert --config " + cfg + " --out " + (dir / "ok").string()), 0);
    EXPECT_TRUE(fs::exists(dir / "ok" / "summary.json"));
    // verb and config task disagree
    EXPECT_EQ(lab("solve --config " + cfg + " --out " + (dir / "x").string()), 2);
    {
        std::ofstream os(dir / "bad.json");
        os << R"({"task": "primary-pair", "coefficient": {"family": "random_piecewise", "K_max": 2}})";
    }
    EXPECT_EQ(lab("primary-pair --config " + (dir / "bad.json").string() + " --out " + (dir / "y").string()), 2);
    EXPECT_NE(lab("convert --config " + (dir / "missing.json").string()), 0);
    {
        // a non-elliptic matrix is a run error, not a config error
        std::ofstream os(dir / "fail.json");
        os << R"({"task": "convert", "convert": {"sigma": [[1, 0], [0, -1]]}})";
    }
    EXPECT_EQ(lab("convert --config " + (dir / "fail.json").string() + " --out " + (dir / "z").string()), 1);
}
