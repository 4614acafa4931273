// Command-line driver: synth, index, repack, match, summarize, serve, all.
// Exit codes: 0 success, 2 config error, 3 missing artifact, 4 data error.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <iostream>
#include <optional>
#include <thread>

#include <fmt/format.h>
#include "CLI11.hpp"

#include "telematics/errors.hpp"
#include "telematics/pipeline.hpp"
#include "telematics/service.hpp"

namespace {

using namespace telematics;

constexpr int kExitConfig = 2;
constexpr int kExitMissing = 3;
constexpr int kExitData = 4;

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop = true; }

struct Overrides {
    std::optional<std::string> config;
    std::optional<std::size_t> workers;
    std::optional<std::string> out;
    std::optional<std::string> raw, network, lrs, regions;
    std::optional<std::size_t> batch_size;
    std::optional<double> bin_width;
    std::optional<std::string> tz_offset;
    std::optional<std::string> unit;
    bool write_rejects = false;
    // synth
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> trips, shards, split_degree;
    std::optional<int> rows, cols;
    std::optional<double> noise, duplicate_rate, congested;
    // serve
    std::optional<std::string> host;
    std::optional<int> port;
};

PipelineConfig resolve(const Overrides& o) {
    PipelineConfig c;
    if (o.config) c = load_config(*o.config);
    if (o.workers) c.workers = *o.workers;
    if (o.out) c.out = *o.out;
    if (o.raw) c.raw_dir = *o.raw;
    if (o.network) c.network = *o.network;
    if (o.lrs) c.lrs = *o.lrs;
    if (o.regions) c.regions = *o.regions;
    if (o.batch_size) c.batch_size = *o.batch_size;
    if (o.bin_width) c.bin_width_mph = *o.bin_width;
    if (o.tz_offset) {
        const auto tz = parse_tz_offset(*o.tz_offset);
        if (!tz) throw ConfigError(fmt::format("--tz-offset '{}' is not of the form +HH:MM", *o.tz_offset));
        c.tz_offset_minutes = *tz;
    }
    if (o.unit) {
        const auto u = parse_speed_unit(*o.unit);
        if (!u) throw ConfigError(fmt::format("--unit '{}' must be mps, mph or kph", *o.unit));
        c.input_unit = *u;
    }
    if (o.write_rejects) c.write_rejects = true;
    if (o.seed) c.synth.seed = *o.seed;
    if (o.trips) c.synth.n_trips = *o.trips;
    if (o.shards) c.synth.shard_count = *o.shards;
    if (o.split_degree) c.synth.split_degree = *o.split_degree;
    if (o.rows) c.synth.grid_rows = *o.rows;
    if (o.cols) c.synth.grid_cols = *o.cols;
    if (o.noise) c.synth.gps_noise_sigma_m = *o.noise;
    if (o.duplicate_rate) c.synth.duplicate_rate = *o.duplicate_rate;
    if (o.congested) c.synth.congested_fraction = *o.congested;
    if (o.host) c.host = *o.host;
    if (o.port) c.port = *o.port;
    c.validate();
    return c;
}

void print_report(const StageReport& r) {
    std::string line = fmt::format("[{}] {:.3f}s", r.stage, r.wall_time_s);
    for (const auto& [k, v] : r.produced) line += fmt::format(" {}={}", k, v);
    std::cout << line << '\n';
}

int serve(const PipelineConfig& c) {
    std::optional<std::filesystem::path> lrs;
    if (c.lrs || std::filesystem::exists(c.lrs_path())) lrs = c.lrs_path();
    if (!std::filesystem::exists(c.network_path())) {
        throw MissingArtifactError(fmt::format("serve: network '{}' is missing", c.network_path().string()));
    }
    for (auto name : {kHistogramStoreFile, kOdStoreFile, kTripStoreFile}) {
        const auto p = c.store_dir() / name;
        if (!std::filesystem::exists(p)) {
            throw MissingArtifactError(
                fmt::format("serve: store '{}' is missing; run the summarize stage first", p.string()));
        }
    }
    const QueryService service(load_service_stores(c.store_dir(), c.network_path(), lrs));
    HttpServer server(service);
    const int port = server.bind(c.host, c.port);
    std::cout << fmt::format("listening on http://{}:{}", c.host, port) << std::endl;

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::jthread watcher([&server](std::stop_token st) {
        while (!st.stop_requested() && !g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
        server.stop();
    });
    server.run();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Telematics trip pipeline and query service"};
    app.require_subcommand(1);
    app.fallthrough();
    Overrides o;

    app.add_option("--config", o.config, "JSON config file");
    app.add_option("--workers", o.workers, "Worker threads for parallel stages (1 = serial)");
    app.add_option("--out", o.out, "Output root");
    app.add_option("--raw", o.raw, "Raw shard directory (default <out>/raw)");
    app.add_option("--network", o.network, "Network JSON (default <out>/network/network.json)");
    app.add_option("--lrs", o.lrs, "LRS CSV (default <out>/network/lrs.csv)");
    app.add_option("--regions", o.regions, "Postal regions JSON (default <out>/network/regions.json)");
    app.add_option("--batch-size", o.batch_size, "Journeys per packed file (default 10000)");
    app.add_option("--bin-width", o.bin_width, "Histogram bin width in MPH (default 5)");
    app.add_option("--tz-offset", o.tz_offset, "Local time offset, e.g. -05:00 (default)");
    app.add_option("--unit", o.unit, "Input speed unit when shards declare none: mps|mph|kph (default mps)");
    app.add_flag("--write-rejects", o.write_rejects, "Write rejected trips under <out>/packed/rejects");

    auto* synth = app.add_subcommand("synth", "Generate a synthetic network, corpus and ground truth");
    synth->add_option("--seed", o.seed, "RNG seed");
    synth->add_option("--trips", o.trips, "Number of trips");
    synth->add_option("--shards", o.shards, "Number of raw shards");
    synth->add_option("--split-degree", o.split_degree, "Max shards per trip");
    synth->add_option("--rows", o.rows, "Grid rows");
    synth->add_option("--cols", o.cols, "Grid columns");
    synth->add_option("--noise", o.noise, "GPS noise sigma in meters");
    synth->add_option("--duplicate-rate", o.duplicate_rate, "Share of points duplicated");
    synth->add_option("--congested", o.congested, "Share of congested trips");
    app.add_subcommand("index", "Index journeys per raw shard");
    app.add_subcommand("repack", "Rewrite shards into files of complete, validated trips");
    app.add_subcommand("match", "Map-match packed trips onto the network");
    app.add_subcommand("summarize", "Build trip, traversal, histogram and OD stores");
    auto* srv = app.add_subcommand("serve", "Serve the query API over the stores");
    srv->add_option("--host", o.host, "Listen address (default 127.0.0.1)");
    srv->add_option("--port", o.port, "Listen port; 0 picks a free one (default 8080)");
    app.add_subcommand("all", "Run index, repack, match and summarize");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        const PipelineConfig config = resolve(o);
        const std::string cmd = app.get_subcommands().front()->get_name();
        if (cmd == "synth") print_report(run_synth(config));
        if (cmd == "index") print_report(run_index(config));
        if (cmd == "repack") print_report(run_repack(config));
        if (cmd == "match") print_report(run_match(config));
        if (cmd == "summarize") print_report(run_summarize(config));
        if (cmd == "all") {
            for (const auto& r : run_all(config)) print_report(r);
        }
        if (cmd == "serve") return serve(config);
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const MissingArtifactError& e) {
        std::cerr << "missing artifact: " << e.what() << '\n';
        return kExitMissing;
    } catch (const std::exception& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    }
}
