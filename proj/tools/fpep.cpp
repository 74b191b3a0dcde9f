// Command-line front end: one JSON record per run on stdout.
//
//   fpep [--seed S] [--config FILE] [--out-dir DIR] [--threads T] <command> [key=value ...]
//
// Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fpep/experiments.hpp"

namespace {

fpep::io::ConfigMap build_config(const std::string& config_path, const std::vector<std::string>& overrides) {
    fpep::io::ConfigMap cfg;
    if (!config_path.empty()) cfg = fpep::io::load_config_file(config_path);
    for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0) {
            fpep::fail(fpep::ErrorCode::ConfigError, "expected key=value, got '" + kv + "'");
        }
        cfg[fpep::io::normalize_key(fpep::io::trim(kv.substr(0, eq)))] = fpep::io::parse_scalar_text(kv.substr(eq + 1));
    }
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Free-probability EP experiments"};
    std::string config_path;
    std::vector<std::string> globals;  // flags rewritten as key=value overrides
    std::uint64_t seed = 0;
    std::string out_dir;
    int threads = 1;
    auto* seed_opt = app.add_option("--seed", seed, "Base random seed");
    app.add_option("--config", config_path, "Flat key=value or JSON config file")->check(CLI::ExistingFile);
    auto* out_opt = app.add_option("--out-dir", out_dir, "Directory for CSV side files");
    auto* thr_opt = app.add_option("--threads", threads, "Worker threads for independent cells")->check(CLI::PositiveNumber);
    app.require_subcommand(1);

    std::vector<std::string> params;
    for (const auto& name : fpep::experiments::command_names()) {
        auto* sub = app.add_subcommand(name, "run the " + name + " experiment");
        sub->add_option("params", params, "Config overrides as key=value");
        sub->add_option("--param,-p", params, "Config override key=value");
        sub->fallthrough();
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    const std::string command = app.get_subcommands().front()->get_name();
    if (*seed_opt) globals.push_back("seed=" + std::to_string(seed));
    if (*out_opt) globals.push_back("out_dir=\"" + out_dir + "\"");
    if (*thr_opt) globals.push_back("threads=" + std::to_string(threads));

    try {
        std::vector<std::string> all = params;
        all.insert(all.end(), globals.begin(), globals.end());
        const auto rec = fpep::experiments::run_experiment(command, build_config(config_path, all));
        for (const auto& w : rec.warnings) std::cerr << "warning: " << w << '\n';
        std::cout << fpep::experiments::to_json(rec).dump(2) << '\n';
        return rec.ok() ? 0 : 3;
    } catch (const fpep::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return fpep::experiments::is_input_error(e.code()) ? 2 : 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
}
