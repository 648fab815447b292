#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "laco/error.hpp"
#include "laco/payload.hpp"
#include "laco/scenario.hpp"
#include "laco/telemetry.hpp"

namespace fs = std::filesystem;
using namespace laco;

namespace {

struct Overrides {
    std::string paradigm;
    std::optional<std::size_t> m;
    std::optional<double> rho;
    std::optional<double> l_comm;
    std::string dtype;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--paradigm", o.paradigm, "noncollab | language | visual | naivelatent | laco");
    cmd->add_option("--m", o.m, "latent deliberation steps");
    cmd->add_option("--rho", o.rho, "CHSA retention ratio");
    cmd->add_option("--l-comm", o.l_comm, "fraction of layers transmitted");
    cmd->add_option("--dtype", o.dtype, "f32 | f16")->check(CLI::IsMember({"f32", "f16"}));
}

void apply(const Overrides& o, ScenarioSpec& s) {
    if (!o.paradigm.empty()) s.config.paradigm = parse_paradigm(o.paradigm);
    if (o.m) s.config.deliberation_steps = *o.m;
    if (o.rho) s.config.retention = *o.rho;
    if (o.l_comm) s.config.l_comm_fraction = *o.l_comm;
    if (!o.dtype.empty()) s.config.dtype = o.dtype == "f16" ? DType::F16 : DType::F32;
    s.config.validate();
}

int cmd_run(const std::string& scenario, const Overrides& o, const std::string& out, const std::string& telemetry,
            const std::string& payload_dir) {
    ScenarioSpec spec = load_scenario(scenario);
    apply(o, spec);
    const Model model = scenario_model(spec);
    Episode ep(spec, model);
    TelemetryLog log;
    if (!telemetry.empty()) ep.record_telemetry(&log);
    if (!payload_dir.empty()) fs::create_directories(payload_dir);
    while (!ep.finished()) {
        const TickReport r = ep.step();
        if (payload_dir.empty()) continue;
        for (const auto& [sender, bytes] : ep.last_messages()) {
            char name[64];
            std::snprintf(name, sizeof name, "tick%05u_agent%u.bin", r.tick, sender);
            write_file(fs::path(payload_dir) / name, bytes);
        }
    }
    const EpisodeMetrics m = ep.metrics();
    for (const auto& w : m.warnings) std::cerr << "warning: " << w << '\n';
    write_file(out, metrics_csv(m));
    if (!telemetry.empty()) write_file(telemetry, encode_telemetry(log));
    for (const auto& a : m.agents)
        std::cout << m.scenario << " " << paradigm_name(m.paradigm) << " agent " << a.agent << ": "
                  << outcome_name(a.outcome) << " rc=" << format_real(a.rc) << " ds=" << format_real(a.ds)
                  << " bytes=" << a.comm_bytes << '\n';
    return 0;
}

int cmd_sweep(const std::string& param, const std::vector<double>& values, const std::vector<std::string>& files,
              const Overrides& o, const std::string& out) {
    std::vector<ScenarioSpec> specs;
    for (const auto& f : files) {
        specs.push_back(load_scenario(f));
        apply(o, specs.back());
    }
    const SweepParam p = parse_sweep_param(param);
    const auto rows = sweep(p, values, specs);
    for (const auto& r : rows)
        for (const auto& w : r.metrics.warnings) std::cerr << "warning: " << r.scenario << ": " << w << '\n';
    write_file(out, sweep_csv(p, rows));
    return 0;
}

int cmd_analyze(const std::string& in, const std::string& out) {
    const TelemetryLog log = decode_telemetry(read_file(in));
    const AnalysisTables t = analyze(log);
    fs::create_directories(out);
    write_file(fs::path(out) / "entropy.csv", t.entropy_csv);
    write_file(fs::path(out) / "sparsity.csv", t.sparsity_csv);
    write_file(fs::path(out) / "confusion.csv", t.confusion_csv);
    std::cout << log.traces.size() << " trace records, " << log.decisions.size() << " decision records\n";
    return 0;
}

int cmd_dump(const std::string& file) {
    const auto bytes = read_file(file);
    if (bytes.size() >= 4 && std::string(bytes.begin(), bytes.begin() + 4) == "LACT") {
        const auto tokens = deserialize_tokens(bytes);
        std::cout << "token message, " << tokens.size() << " tokens:";
        for (auto t : tokens) std::cout << ' ' << t;
        std::cout << '\n';
        return 0;
    }
    const Payload p = deserialize(bytes);
    std::cout << "version      " << p.version << '\n'
              << "sender       " << p.sender << '\n'
              << "frame        " << p.frame << '\n'
              << "dtype        " << (p.dtype == DType::F16 ? "f16" : "f32") << '\n'
              << "L_comm       " << p.l_comm() << '\n'
              << "heads        " << p.kv.num_heads() << '\n'
              << "head_dim     " << p.kv.head_dim() << '\n'
              << "salient      " << p.salient_count << '\n'
              << "latent       " << p.latent_count << '\n'
              << "bytes        " << bytes.size() << '\n'
              << "indices     ";
    for (auto i : p.source_indices) std::cout << ' ' << i;
    std::cout << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"laco: latent collaboration gridworld harness"};
    app.require_subcommand(1);

    std::string scenario, out, telemetry, payload_dir;
    Overrides run_o;
    auto* run = app.add_subcommand("run", "run one episode");
    run->add_option("--scenario", scenario, "scenario file")->required()->check(CLI::ExistingFile);
    run->add_option("--out", out, "metrics CSV")->required();
    run->add_option("--telemetry", telemetry, "write telemetry.bin here");
    run->add_option("--payload-dir", payload_dir, "dump every transmitted message here");
    add_overrides(run, run_o);

    std::string param, sweep_out;
    std::vector<double> values;
    std::vector<std::string> scenarios;
    Overrides sweep_o;
    auto* sw = app.add_subcommand("sweep", "grid of episodes over one parameter");
    sw->add_option("--param", param, "m | rho | l_comm")->required();
    sw->add_option("--values", values, "parameter values")->required();
    sw->add_option("--scenarios", scenarios, "scenario files")->required()->check(CLI::ExistingFile);
    sw->add_option("--out", sweep_out, "sweep CSV")->required();
    add_overrides(sw, sweep_o);

    std::string an_in, an_out;
    auto* an = app.add_subcommand("analyze", "entropy, sparsity and confusion tables from telemetry");
    an->add_option("--in", an_in, "telemetry.bin")->required()->check(CLI::ExistingFile);
    an->add_option("--out", an_out, "output directory")->required();

    std::string dump_file;
    auto* dump = app.add_subcommand("dump-payload", "print a serialized message");
    dump->add_option("file", dump_file)->required()->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) return cmd_run(scenario, run_o, out, telemetry, payload_dir);
        if (*sw) return cmd_sweep(param, values, scenarios, sweep_o, sweep_out);
        if (*an) return cmd_analyze(an_in, an_out);
        if (*dump) return cmd_dump(dump_file);
    } catch (const laco::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
