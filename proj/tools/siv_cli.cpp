// siv: run headless comparisons, replay logs, export plot data, serve live sessions.
//
// Exit codes: 0 ok, 2 configuration error, 3 runtime fault.

#include "siv/experiment_runner.hpp"
#include "siv/session_service.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

namespace
{
    constexpr int kExitConfig = 2;
    constexpr int kExitFault = 3;

    volatile std::sig_atomic_t g_interrupted = 0;

    void on_signal(int) { g_interrupted = 1; }

    std::string read_file(const std::filesystem::path &path)
    {
        std::ifstream in(path, std::ios::binary);
        if (!in)
        {
            throw siv::ConfigError("cannot open " + path.string());
        }
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    void print_metrics(const siv::RunMetrics &metrics)
    {
        for (const auto &m : metrics.variants)
        {
            std::cout << siv::to_string(m.variant) << ": total_steps=" << m.total_steps
                      << " total_pushes=" << m.total_pushes << " total_reward=" << m.total_reward << '\n';
        }
    }

    int cmd_run(const std::optional<std::filesystem::path> &spec_path, const std::filesystem::path &out, int seeds,
                bool no_shuffle, int parallel, bool step_logs)
    {
        siv::ExperimentSpec spec = spec_path ? siv::load_spec(*spec_path) : siv::default_spec();
        if (no_shuffle)
        {
            spec.blind_shuffle = false;
        }
        std::filesystem::create_directories(out);
        siv::ExperimentOptions options;
        options.parallel = parallel;
        for (int s = 0; s < seeds; ++s)
        {
            siv::ExperimentSpec seeded = spec;
            seeded.master_seed = spec.master_seed + static_cast<std::uint64_t>(s);
            const auto dir = seeds == 1 ? out : out / ("seed-" + std::to_string(seeded.master_seed));
            if (step_logs)
            {
                options.log_dir = dir / "logs";
            }
            const siv::ExperimentResult result = siv::run_experiment(seeded, options);
            siv::export_results(result.records, result.metrics, dir);
            if (seeds > 1)
            {
                std::cout << "seed " << seeded.master_seed << '\n';
            }
            print_metrics(result.metrics);
        }
        return 0;
    }

    int cmd_replay(const std::filesystem::path &log)
    {
        const siv::ReplayReport report = siv::replay_log(siv::read_ndjson(log));
        std::cout << "ticks=" << report.ticks << " steps_compared=" << report.steps_compared
                  << " weights_digest=" << siv::digest_hex(report.weights_digest) << '\n';
        if (!report.identical)
        {
            std::cout << "DIVERGED: " << report.mismatch << '\n';
            return 1;
        }
        std::cout << "identical\n";
        return 0;
    }

    int cmd_export(const std::filesystem::path &records_path, const std::filesystem::path &out)
    {
        const auto records = siv::parse_records_csv(read_file(records_path));
        const siv::RunMetrics metrics = siv::aggregate(records);
        siv::export_results(records, metrics, out);
        print_metrics(metrics);
        return 0;
    }

    int cmd_serve(siv::SessionConfig config, const std::optional<std::filesystem::path> &spec_path)
    {
        if (spec_path)
        {
            config.spec = siv::load_spec(*spec_path);
        }
        siv::SessionServer server(config);
        server.start();
        std::cout << "session " << config.session_id << " listening on ws://" << config.listen_address << ':'
                  << server.port() << "  log: " << server.log_path().string() << std::endl;
        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);
        while (!g_interrupted && !server.wait_finished(std::chrono::milliseconds(200)))
        {
        }
        server.stop();
        const siv::ServerStats stats = server.stats();
        std::cout << "finished: " << stats.finish_reason << " ticks=" << stats.ticks
                  << " late_ticks=" << stats.late_ticks << std::endl;
        return 0;
    }
} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"Spatial interface valuing: grip-selection agents with gesture feedback"};
    app.require_subcommand(1);

    std::optional<std::filesystem::path> spec_path;
    std::filesystem::path out_dir = "results";
    int seeds = 1;
    bool no_shuffle = false;
    int parallel = 1;
    bool step_logs = false;
    auto *run = app.add_subcommand("run", "Run the three-agent comparison against the synthetic user");
    run->add_option("--spec", spec_path, "Experiment spec (JSON); defaults when omitted")->check(CLI::ExistingFile);
    run->add_option("--out", out_dir, "Output directory");
    run->add_option("--seeds", seeds, "Number of consecutive master seeds")->check(CLI::PositiveNumber);
    run->add_flag("--no-shuffle", no_shuffle, "Execute cells in variant-major order");
    run->add_option("--parallel", parallel, "Worker threads")->check(CLI::PositiveNumber);
    run->add_flag("--step-logs", step_logs, "Write a replayable log per (variant, run)");

    std::filesystem::path log_path;
    auto *replay = app.add_subcommand("replay", "Re-run a session or cell log and compare");
    replay->add_option("--log", log_path, "ndjson log")->required()->check(CLI::ExistingFile);

    std::filesystem::path records_path;
    std::filesystem::path plots_out = "plots";
    auto *plots = app.add_subcommand("export-plots", "Recompute metrics and plot data from records.csv");
    plots->add_option("--records", records_path, "records.csv")->required()->check(CLI::ExistingFile);
    plots->add_option("--out", plots_out, "Output directory");

    siv::SessionConfig session;
    std::string variant_name = "siv";
    std::string log_dir = ".";
    std::optional<std::filesystem::path> serve_spec;
    bool visible = false;
    auto *serve = app.add_subcommand("serve", "Serve one live session over websocket");
    serve->add_option("--address", session.listen_address, "Listen address");
    serve->add_option("--port", session.port, "Listen port (0 picks a free port)");
    serve->add_option("--session", session.session_id, "Session id");
    serve->add_option("--variant", variant_name, "baseline | siv | no_siv");
    serve->add_option("--spec", serve_spec, "Experiment spec supplying env, agent and preferences");
    serve->add_option("--log-dir", log_dir, "Directory for the session log");
    serve->add_flag("--visible", visible, "Reveal the variant label to the client");
    serve->add_flag("--show-object-size", session.object_size_visible, "Include object size in state frames");
    serve->add_flag("--show-q", session.show_q, "Include action values in state frames");
    serve->add_option("--max-episodes", session.max_episodes, "Stop after this many episodes (0 = unlimited)");

    CLI11_PARSE(app, argc, argv);

    try
    {
        if (*run)
        {
            return cmd_run(spec_path, out_dir, seeds, no_shuffle, parallel, step_logs);
        }
        if (*replay)
        {
            return cmd_replay(log_path);
        }
        if (*plots)
        {
            return cmd_export(records_path, plots_out);
        }
        session.variant = siv::variant_from_string(variant_name);
        session.log_dir = log_dir;
        session.blind = !visible;
        return cmd_serve(session, serve_spec);
    }
    catch (const siv::ConfigError &e)
    {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    }
    catch (const std::exception &e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFault;
    }
}
