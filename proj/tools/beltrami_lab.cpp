// Command-line front end for the experiment runner.
//
//   beltrami_lab <verb> --config PATH [--out DIR] [--resolution N] [--seed N]
//
// Verbs: convert, solve, primary-pair, cell, homogenize, diagnose, sweep.
// Exit status: 0 all invariants pass, 1 some invariant failed or a run
// errored, 2 bad config or usage.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "beltrami/experiment.hpp"

namespace {

struct Args {
    std::string config;
    std::string out;
    std::optional<int> resolution;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Args& a) {
    cmd->add_option("--config", a.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", a.out, "output directory (overrides the config)");
    cmd->add_option("--resolution", a.resolution, "mesh resolution override")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", a.seed, "seed override for random families and samplers");
}

beltrami::Overrides overrides_of(const Args& a) {
    beltrami::Overrides o;
    o.resolution = a.resolution;
    o.seed = a.seed;
    if (!a.out.empty()) o.output = a.out;
    return o;
}

void report(const beltrami::RunRecord& rec) {
    for (const auto& line : rec.log) std::clog << line << '\n';
    for (const auto& i : rec.invariants)
        std::cout << (i.passed ? "PASS " : "FAIL ") << i.name << " = " << i.value << " (" << i.relation << ' '
                  << i.threshold << ")\n";
    if (!rec.error.empty()) std::cout << "ERROR " << rec.error << '\n';
}

int run_verb(const std::string& verb, const Args& a) {
    using namespace beltrami;
    Json doc = apply_overrides(load_json_file(a.config), overrides_of(a));
    if (!doc.contains("task")) doc["task"] = verb;
    if (doc.value("task", "") != verb && !(verb == "primary-pair" && doc.value("task", "") == "primary_pair"))
        throw ConfigError("task: config says '" + doc.value("task", "") + "' but the verb is '" + verb + "'");
    const auto cfg = parse_config(doc);
    const auto rec = run(cfg);
    report(rec);
    std::cout << "summary: " << (std::filesystem::path(cfg.output) / "summary.json").string() << '\n';
    return rec.all_passed() ? 0 : 1;
}

int run_sweep(const Args& a) {
    using namespace beltrami;
    const auto doc = load_json_file(a.config);
    const auto configs = expand_sweep(doc);
    const std::string out = !a.out.empty() ? a.out : doc.value("output", std::string("sweep_out"));
    auto o = overrides_of(a);
    o.output.reset();  // each run gets its own directory under `out`
    const auto rows = sweep(configs, out, o);
    bool ok = true;
    for (const auto& r : rows) {
        std::cout << "run " << r.index << ": " << r.status;
        if (!r.record.error.empty()) std::cout << " (" << r.record.error << ')';
        std::cout << '\n';
        ok = ok && r.status == "ok";
    }
    std::cout << "sweep: " << (std::filesystem::path(out) / "sweep.csv").string() << '\n';
    return ok ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Planar Beltrami / non-symmetric conductivity lab"};
    app.require_subcommand(1);
    Args args;
    const char* verbs[] = {"convert", "solve", "primary-pair", "cell", "homogenize", "diagnose", "sweep"};
    for (const char* v : verbs) add_common(app.add_subcommand(v, std::string("run the ") + v + " task"), args);
    CLI11_PARSE(app, argc, argv);

    const std::string verb = app.get_subcommands().front()->get_name();
    try {
        return verb == "sweep" ? run_sweep(args) : run_verb(verb, args);
    } catch (const beltrami::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
