#include <gtest/gtest.h>

#include <sys/wait.h>

#include <fstream>

#include "json.hpp"
#include "telematics/errors.hpp"
#include "telematics/pipeline.hpp"
#include "telematics/records_io.hpp"
#include "telematics/store_io.hpp"
#include "test_support.hpp"

using namespace telematics;
using testsupport::TempDir;
namespace fs = std::filesystem;

namespace {

int cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(TELEMATICS_CLI_PATH) + " " + args + " > '" + log.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

PipelineConfig tiny(const fs::path& out, std::size_t workers = 1) {
    PipelineConfig c;
    c.out = out;
    c.workers = workers;
    c.batch_size = 25;
    c.synth.grid_rows = 4;
    c.synth.grid_cols = 4;
    c.synth.n_trips = 80;
    c.synth.shard_count = 4;
    c.synth.split_degree = 2;
    c.synth.duplicate_rate = 0.05;
    c.synth.gps_noise_sigma_m = 4.0;
    c.synth.postal_code_rate = 0.5;
    return c;
}

std::map<std::string, std::string> dir_contents(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_file(e.path());
    }
    return out;
}

}  // namespace

TEST(Config, JsonRoundTripAndRejection) {
    const auto c = config_from_json(R"({"out":"o","batch_size":7,"tz_offset":"+02:00","match":{"sigma_gps_m":9},
                                        "synth":{"seed":5,"n_trips":12},"serve":{"port":9000},"input_speed_unit":"kph"})");
    EXPECT_EQ(c.out, "o");
    EXPECT_EQ(c.batch_size, 7u);
    EXPECT_EQ(c.tz_offset_minutes, 120);
    EXPECT_EQ(c.match.sigma_gps_m, 9.0);
    EXPECT_EQ(c.synth.seed, 5u);
    EXPECT_EQ(c.synth.n_trips, 12u);
    EXPECT_EQ(c.port, 9000);
    EXPECT_EQ(c.input_unit, SpeedUnit::kph);
    const auto back = config_from_json(config_to_json(c));
    EXPECT_EQ(config_to_json(back), config_to_json(c));

    EXPECT_THROW(config_from_json(R"({"bogus":1})"), ConfigError);
    EXPECT_THROW(config_from_json(R"({"match":{"nope":1}})"), ConfigError);
    EXPECT_THROW(config_from_json(R"({"tz_offset":"0500"})"), ConfigError);
    EXPECT_THROW(config_from_json(R"({"batch_size":0})").validate(), ConfigError);
    EXPECT_THROW(config_from_json("not json"), ConfigError);
    EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST(StageReports, JsonRoundTrip) {
    StageReport r{"repack", {{"records", 10}}, {{"files", 2}, {"points", 8}}, 0.25};
    const auto back = stage_report_from_json(to_json(r));
    EXPECT_EQ(back.stage, r.stage);
    EXPECT_EQ(back.consumed, r.consumed);
    EXPECT_EQ(back.produced, r.produced);
    EXPECT_EQ(back.wall_time_s, r.wall_time_s);
}

TEST(Pipeline, StagesChainAndConserve) {
    TempDir dir;
    const auto c = tiny(dir.path());
    run_synth(c);
    const auto reports = run_all(c);
    ASSERT_EQ(reports.size(), 4u);
    const auto& index = reports[0];
    const auto& repack = reports[1];
    const auto& match = reports[2];
    const auto& summarize = reports[3];
    EXPECT_EQ(repack.consumed.at("records"), index.produced.at("records"));
    EXPECT_EQ(repack.consumed.at("journeys"), index.produced.at("journeys"));
    for (const char* k : {"files", "trips", "points"}) {
        EXPECT_EQ(match.consumed.at(k), repack.produced.at(k)) << k;
        EXPECT_EQ(summarize.consumed.at(k), match.produced.at(k)) << k;
    }
    EXPECT_EQ(summarize.produced.at("trip_rows"), repack.produced.at("trips"));
    EXPECT_EQ(summarize.produced.at("histogram_traversals"), summarize.produced.at("traversal_rows"));
    EXPECT_EQ(summarize.produced.at("od_trips") + summarize.produced.at("od_excluded_missing_zip"),
              summarize.produced.at("trip_rows"));
    for (const char* stage : {"index", "repack", "match", "summarize"}) {
        const auto on_disk = stage_report_from_json(read_file(c.reports_dir() / (std::string(stage) + ".json")));
        EXPECT_EQ(on_disk.stage, stage);
    }
    // Every packed and matched file carries its completion marker.
    EXPECT_EQ(completed_files(c.packed_dir(), "repack").size(), repack.produced.at("files"));
    EXPECT_EQ(completed_files(c.matched_dir(), "match").size(), repack.produced.at("files"));
}

TEST(Pipeline, RepackTwiceIsByteIdentical) {
    TempDir dir;
    const auto c = tiny(dir.path());
    run_synth(c);
    run_index(c);
    run_repack(c);
    const auto first = dir_contents(c.packed_dir());
    run_repack(c);
    EXPECT_EQ(dir_contents(c.packed_dir()), first);
}

TEST(Pipeline, WorkerCountDoesNotChangeOutputs) {
    TempDir a, b;
    const auto ca = tiny(a.path(), 1);
    const auto cb = tiny(b.path(), 4);
    run_synth(ca);
    run_synth(cb);
    run_all(ca);
    run_all(cb);
    EXPECT_EQ(dir_contents(ca.packed_dir()), dir_contents(cb.packed_dir()));
    EXPECT_EQ(dir_contents(ca.matched_dir()), dir_contents(cb.matched_dir()));
    EXPECT_EQ(dir_contents(ca.store_dir()), dir_contents(cb.store_dir()));
}

TEST(Pipeline, LaterStagesRequireEarlierArtifacts) {
    TempDir dir;
    const auto c = tiny(dir.path());
    EXPECT_THROW(run_index(c), MissingArtifactError);
    EXPECT_THROW(run_repack(c), MissingArtifactError);
    EXPECT_THROW(run_match(c), MissingArtifactError);
    EXPECT_THROW(run_summarize(c), MissingArtifactError);
    run_synth(c);
    run_index(c);
    run_repack(c);
    // A packed file without its marker is incomplete.
    const auto files = completed_files(c.packed_dir(), "repack");
    ASSERT_FALSE(files.empty());
    fs::remove(done_marker(files.front()));
    EXPECT_THROW(run_match(c), MissingArtifactError);
}

TEST(Cli, ExitCodes) {
    TempDir dir;
    const auto log = dir / "log.txt";
    EXPECT_EQ(cli("--bogus-flag all", log), 2);
    EXPECT_EQ(cli("", log), 2);
    EXPECT_EQ(cli("--config /nonexistent.json all", log), 2);
    std::ofstream(dir / "bad.json") << R"({"unknown_key": true})";
    EXPECT_EQ(cli("--config '" + (dir / "bad.json").string() + "' all", log), 2);
    EXPECT_EQ(cli("--tz-offset 5 --out '" + (dir / "o").string() + "' all", log), 2);

    // Nothing generated yet: missing inputs.
    EXPECT_EQ(cli("--out '" + (dir / "empty").string() + "' all", log), 3);
    EXPECT_EQ(cli("--out '" + (dir / "empty").string() + "' serve --port 0", log), 3);
    EXPECT_NE(read_file(log).find("missing artifact"), std::string::npos);

    const std::string out = "--out '" + (dir / "run").string() + "'";
    EXPECT_EQ(cli(out + " synth --trips 30 --rows 3 --cols 3 --shards 3 --seed 9", log), 0);
    EXPECT_EQ(cli(out + " --workers 2 all", log), 0);
    EXPECT_TRUE(fs::exists(dir / "run" / "stores" / std::string(kOdStoreFile)));

    // Corrupt network: a data error.
    write_file_atomic(dir / "run" / "network" / "network.json", "{\"segments\": 5}");
    EXPECT_EQ(cli(out + " match", log), 4);
}
