#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include <gtest/gtest.h>

#include "fpep/experiments.hpp"
#include "fpep/io/config.hpp"
#include "fpep/io/data.hpp"

using namespace fpep;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ErrorCode code_of(const std::function<void()>& fn, std::string* message = nullptr) {
    try {
        fn();
    } catch (const Error& e) {
        if (message) *message = e.what();
        return e.code();
    }
    ADD_FAILURE() << "no exception";
    return ErrorCode::NonFinite;
}

fs::path temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("fpep_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

io::Dataset parse(const std::string& text, io::IngestOptions opt = {}) {
    std::istringstream in(text);
    return io::parse_csv(in, opt);
}

// ---------------------------------------------------------------------- CSV

TEST(Csv, ToyFile) {
    const auto d = parse("a,b,label\n1,2,1\n3,4,-1\n");
    EXPECT_EQ(d.X.rows(), 2);
    EXPECT_EQ(d.X.cols(), 2);
    EXPECT_EQ(d.X(1, 0), 3.0);
    EXPECT_EQ(d.y, (Vector(2) << 1.0, -1.0).finished());
    ASSERT_TRUE(d.feature_names.has_value());
    EXPECT_EQ(*d.feature_names, (std::vector<std::string>{"a", "b"}));
}

TEST(Csv, ZeroLabelMapsToMinusOne) {
    const auto d = parse("1,2,0\n3,4,1\n", {',', false, -1, false});
    EXPECT_EQ(d.y, (Vector(2) << -1.0, 1.0).finished());
    EXPECT_FALSE(d.feature_names.has_value());
}

TEST(Csv, LabelColumnAndTabs) {
    const auto d = parse("y\tf\n1\t0.5\n0\t-0.5\n", {'\t', true, 0, false});
    EXPECT_EQ(d.X.cols(), 1);
    EXPECT_EQ(d.X(1, 0), -0.5);
    EXPECT_EQ(d.y(1), -1.0);
}

TEST(Csv, StandardizeDropsConstantColumn) {
    const auto d = parse("a,c,label\n1,5,1\n2,5,-1\n3,5,1\n", {',', true, -1, true});
    EXPECT_EQ(d.X.cols(), 1);
    EXPECT_TRUE(d.standardized);
    ASSERT_EQ(d.warnings.size(), 1u);
    EXPECT_NE(d.warnings[0].find("c"), std::string::npos);
    EXPECT_NEAR(d.X.col(0).mean(), 0.0, 1e-15);
    EXPECT_NEAR(d.X.col(0).squaredNorm() / 3.0, 1.0, 1e-14);
    EXPECT_EQ(*d.feature_names, (std::vector<std::string>{"a"}));
}

TEST(Csv, Errors) {
    std::string msg;
    EXPECT_EQ(code_of([] { parse("1,x,1\n", {',', false, -1, false}); }, &msg), ErrorCode::ParseError);
    EXPECT_NE(msg.find("line 1"), std::string::npos);
    EXPECT_NE(msg.find("column 2"), std::string::npos);
    EXPECT_EQ(code_of([] { parse("1,2,1\n1,1\n", {',', false, -1, false}); }), ErrorCode::RaggedRows);
    EXPECT_EQ(code_of([] { parse("1,2,2\n", {',', false, -1, false}); }), ErrorCode::UnmappableLabel);
    EXPECT_EQ(code_of([] { io::ingest_csv("/nonexistent/file.csv"); }), ErrorCode::IoError);
}

TEST(Csv, WriteReadRoundTripIsBitExact) {
    const auto dir = temp_dir("csv");
    io::Dataset d;
    d.X = randmat::gaussian_iid(7, 4, 1.0, 3) * 1e-3;
    d.X(0, 0) = 1.0 / 3.0;
    d.X(1, 1) = -2.5e-300;
    d.y = Vector::Ones(7);
    d.y(2) = -1.0;
    d.feature_names = std::vector<std::string>{"f0", "f1", "f2", "f3"};
    io::write_dataset_csv((dir / "d.csv").string(), d);
    const auto back = io::ingest_csv((dir / "d.csv").string());
    EXPECT_EQ(std::memcmp(back.X.data(), d.X.data(), sizeof(double) * 28), 0);
    EXPECT_EQ(back.y, d.y);
    EXPECT_EQ(*back.feature_names, *d.feature_names);
}

TEST(Synthetic, ReproducibleAndShaped) {
    io::SyntheticSpec s;
    s.n = 20;
    s.k = 30;
    s.seed = 4;
    const auto a = io::synthetic_dataset(s);
    const auto b = io::synthetic_dataset(s);
    EXPECT_EQ(a.data.X, b.data.X);
    EXPECT_EQ(a.w, b.w);
    EXPECT_EQ(a.data.X.rows(), 20);
    EXPECT_TRUE((a.data.y.array().abs() == 1.0).all());
    s.seed = 5;
    EXPECT_NE(io::synthetic_dataset(s).data.X, a.data.X);
}

// ------------------------------------------------------------------- config

TEST(Config, KeyValueAndJson) {
    const auto kv = io::parse_config_text("# comment\nmax-iter = 20\n damping=0.25\nname = \"x\"\nsizes = [1, 2]\n");
    EXPECT_EQ(kv.at("max_iter"), 20);
    EXPECT_EQ(kv.at("damping"), 0.25);
    EXPECT_EQ(kv.at("name"), "x");
    EXPECT_EQ(kv.at("sizes"), json::array({1, 2}));
    const auto js = io::parse_config_text(R"({"tol": 1e-9, "solvers": "scalar"})");
    EXPECT_EQ(js.at("tol"), 1e-9);
    const auto rec = io::config_from_json(json{{"command", "ep-fit"}, {"config", {{"k", 3}}}});
    EXPECT_EQ(rec.at("k"), 3);
}

TEST(Config, ReaderTypesAndUnknownKeys) {
    io::ConfigReader r(io::parse_config_text("a = 2\nb = true\nc = [1.5, 2]\nbogus = 1\n"));
    EXPECT_EQ(r.integer("a", 0), 2);
    EXPECT_TRUE(r.boolean("b", false));
    EXPECT_EQ(r.real_list("c", {}), (std::vector<double>{1.5, 2.0}));
    EXPECT_EQ(r.real("d", 0.5), 0.5);
    EXPECT_EQ(r.resolved().at("d"), 0.5);
    std::string msg;
    EXPECT_EQ(code_of([&] { r.reject_unknown(); }, &msg), ErrorCode::ConfigError);
    EXPECT_NE(msg.find("'bogus'"), std::string::npos);

    io::ConfigReader bad(io::parse_config_text("a = x\n"));
    EXPECT_EQ(code_of([&] { bad.integer("a", 0); }), ErrorCode::ConfigError);
    io::ConfigReader ch(io::parse_config_text("mode = nope\n"));
    EXPECT_EQ(code_of([&] { ch.choice("mode", "a", {"a", "b"}); }), ErrorCode::ConfigError);
}

// -------------------------------------------------------------- experiments

io::ConfigMap cfg(const std::string& text) { return io::parse_config_text(text); }

TEST(Experiments, EpFitLinearGaussianMatchesRidge) {
    const auto rec = experiments::run_experiment(
        "ep-fit", cfg("n = 40\nk = 30\nprior = gaussian\nlikelihood = gaussian\ndamping = 1\ntol = 1e-12\n"));
    ASSERT_TRUE(rec.ok()) << rec.status.dump();
    EXPECT_LT(rec.results["diagonal"]["ridge_max_abs_error"].get<double>(), 1e-8);
    EXPECT_LT(rec.results["scalar"]["ridge_max_abs_error"].get<double>(), 1e-8);
    EXPECT_NEAR(rec.results["comparison"]["mean_correlation"].get<double>(), 1.0, 1e-8);
}

TEST(Experiments, ReplayIsBitExact) {
    const auto dir = temp_dir("replay");
    const auto rec = experiments::run_experiment(
        "ep-fit", cfg("seed = 9\nn = 32\nk = 48\nout_dir = \"" + dir.string() + "\"\n"));
    ASSERT_TRUE(rec.ok());
    EXPECT_TRUE(fs::exists(dir / "ep_fit.csv"));
    const json stored = json::parse(experiments::to_json(rec).dump());
    const auto again = experiments::replay(stored);
    EXPECT_EQ(again.results.dump(), rec.results.dump());
    EXPECT_EQ(again.config, rec.config);
    EXPECT_EQ(again.seed, 9u);

    // The CSV side file carries the same doubles as the record.
    std::ifstream csv(dir / "ep_fit.csv");
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "index,mu_diag,var_diag,mu_scalar,var_scalar");
    std::size_t row = 0;
    while (std::getline(csv, line)) {
        std::vector<double> v;
        std::stringstream ss(line);
        for (std::string f; std::getline(ss, f, ',');) v.push_back(std::stod(f));
        ASSERT_EQ(v.size(), 5u);
        EXPECT_EQ(v[1], rec.results["diagonal"]["mean_w"][row].get<double>());
        EXPECT_EQ(v[2], rec.results["diagonal"]["var_w"][row].get<double>());
        EXPECT_EQ(v[3], rec.results["scalar"]["mean_w"][row].get<double>());
        EXPECT_EQ(v[4], rec.results["scalar"]["var_w"][row].get<double>());
        ++row;
    }
    EXPECT_EQ(row, 48u);
}

TEST(Experiments, ConfigIsFullyResolved) {
    const auto rec = experiments::run_experiment("transforms", cfg("values = [1, 3]\n"));
    for (const char* key : {"seed", "out_dir", "threads", "s_grid", "order"}) EXPECT_TRUE(rec.config.contains(key)) << key;
}

TEST(Experiments, TransformsOnPointMass) {
    const auto rec = experiments::run_experiment("transforms", cfg("values = [2, 2, 2]\n"));
    ASSERT_TRUE(rec.ok()) << rec.status.dump();
    for (const auto& e : rec.results["r_transform"]) {
        ASSERT_FALSE(e["value"].is_null());
        EXPECT_NEAR(e["value"].get<double>(), 2.0, 1e-10);
    }
}

TEST(Experiments, LocalLawShiftIsExact) {
    const auto rec = experiments::run_experiment("local-law", cfg("sizes = [32, 64]\nn_seeds = 2\nj_kind = shift\n"));
    ASSERT_TRUE(rec.ok());
    ASSERT_EQ(rec.results["cells"].size(), 4u);
    for (const auto& c : rec.results["cells"]) EXPECT_LT(c["l2_deviation"].get<double>(), 1e-28);
}

TEST(Experiments, LocalLawThreadsDoNotChangeResults) {
    const auto one = experiments::run_experiment("local-law", cfg("sizes = [64, 128]\nn_seeds = 3\n"));
    const auto two = experiments::run_experiment("local-law", cfg("sizes = [64, 128]\nn_seeds = 3\nthreads = 2\n"));
    EXPECT_EQ(one.results.dump(), two.results.dump());
}

TEST(Experiments, FreenessHaarScoreIsSmall) {
    const auto rec = experiments::run_experiment("freeness", cfg("n = 1024\n"));
    ASSERT_TRUE(rec.ok());
    EXPECT_LT(rec.results["score"].get<double>(), 0.05);
    const auto ctl = experiments::run_experiment("freeness", cfg("n = 256\ncontrol = commuting\n"));
    EXPECT_GT(ctl.results["score"].get<double>(), 0.1);
}

TEST(Experiments, InputErrorsAreThrown) {
    EXPECT_EQ(code_of([] { experiments::run_experiment("bench", cfg("sizes = [256]\n")); }), ErrorCode::BenchConfigError);
    EXPECT_EQ(code_of([] { experiments::run_experiment("bench", cfg("sizes = [512, 256, 1024, 2048]\n")); }),
              ErrorCode::BenchConfigError);
    EXPECT_EQ(code_of([] { experiments::run_experiment("ep-fit", cfg("bogus = 1\n")); }), ErrorCode::ConfigError);
    EXPECT_EQ(code_of([] { experiments::run_experiment("nope", {}); }), ErrorCode::ConfigError);
    EXPECT_EQ(code_of([] { experiments::run_experiment("ingest-check", cfg("path = \"/nonexistent.csv\"\n")); }),
              ErrorCode::IoError);
}

TEST(Experiments, IngestCheckReportsDroppedColumns) {
    const auto dir = temp_dir("ingest");
    {
        std::ofstream f(dir / "d.csv");
        f << "a,b,label\n1,7,1\n2,7,0\n4,7,1\n";
    }
    const auto rec = experiments::run_experiment(
        "ingest-check", cfg("path = \"" + (dir / "d.csv").string() + "\"\nstandardize = true\n"));
    ASSERT_TRUE(rec.ok());
    EXPECT_EQ(rec.results["k"], 1);
    EXPECT_EQ(rec.results["dropped_columns"], 1);
    EXPECT_EQ(rec.results["negative_labels"], 1);
    EXPECT_EQ(rec.warnings.size(), 1u);
}

#ifdef FPEP_CLI_PATH
int run_cli(const std::string& args) {
    const std::string cmd = std::string(FPEP_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

TEST(Cli, ExitCodes) {
    EXPECT_EQ(run_cli("transforms values='[1,3]'"), 0);
    EXPECT_EQ(run_cli("bench sizes='[256]'"), 2);
    EXPECT_EQ(run_cli("ep-fit bogus=1"), 2);
    EXPECT_EQ(run_cli("no-such-command"), 2);
    EXPECT_EQ(run_cli("ingest-check path=/nonexistent.csv"), 2);
    // Lambda1 + J has zero diagonal entries: a numerical failure, not an input error.
    EXPECT_EQ(run_cli("local-law lambda1_law=two_point lambda1_x1=1.5 lambda1_x2=2 j_kind=shift shift=-1.5 "
                      "sizes='[8]' n_seeds=1"),
              3);
}

TEST(Cli, WritesRecordAndReplays) {
    const auto dir = temp_dir("cli");
    const std::string out = (dir / "rec.json").string();
    ASSERT_EQ(std::system((std::string(FPEP_CLI_PATH) + " --seed 3 ep-fit n=16 k=24 > " + out).c_str()), 0);
    std::ifstream f(out);
    const json rec = json::parse(f);
    EXPECT_EQ(rec["seed"], 3);
    EXPECT_EQ(rec["status"], "ok");
    const auto again = experiments::replay(rec);
    EXPECT_EQ(again.results.dump(), rec["results"].dump());
}
#endif

}  // namespace
