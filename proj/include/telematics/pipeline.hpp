#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "telematics/domain.hpp"
#include "telematics/matcher.hpp"
#include "telematics/repack.hpp"
#include "telematics/summarize.hpp"
#include "telematics/synthgen.hpp"

namespace telematics {

// Every field has a default; the JSON config file and CLI flags override them.
struct PipelineConfig {
    std::filesystem::path out = "out";
    // Inputs default to the synth layout under `out`.
    std::optional<std::filesystem::path> raw_dir;
    std::optional<std::filesystem::path> network;
    std::optional<std::filesystem::path> lrs;
    std::optional<std::filesystem::path> regions;

    std::size_t batch_size = kDefaultBatchSize;
    MatchParams match;
    double bin_width_mph = kDefaultBinWidthMph;
    int tz_offset_minutes = kDefaultTzOffsetMinutes;
    SpeedUnit input_unit = SpeedUnit::mps;
    std::size_t workers = 1;
    bool write_rejects = false;
    SynthConfig synth;
    std::string host = "127.0.0.1";
    int port = 8080;

    std::filesystem::path raw_path() const { return raw_dir.value_or(out / "raw"); }
    std::filesystem::path network_path() const { return network.value_or(out / "network" / "network.json"); }
    std::filesystem::path lrs_path() const { return lrs.value_or(out / "network" / "lrs.csv"); }
    std::filesystem::path regions_path() const { return regions.value_or(out / "network" / "regions.json"); }
    std::filesystem::path ground_truth_path() const { return out / "ground_truth.json"; }
    std::filesystem::path index_path() const { return out / "index" / "journey_index.json"; }
    std::filesystem::path packed_dir() const { return out / "packed"; }
    std::filesystem::path matched_dir() const { return out / "matched"; }
    std::filesystem::path store_dir() const { return out / "stores"; }
    std::filesystem::path reports_dir() const { return out / "reports"; }

    // Throws ConfigError for non-positive numeric fields or invalid match parameters.
    void validate() const;
};

// Parses a JSON config; unknown keys are rejected with ConfigError.
PipelineConfig config_from_json(std::string_view text, PipelineConfig base = {});
PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base = {});
std::string config_to_json(const PipelineConfig& config);

// Per-stage audit record written to reports/<stage>.json. `consumed` of a
// stage repeats the `produced` counts of the stage before it.
struct StageReport {
    std::string stage;
    std::map<std::string, std::uint64_t> consumed;
    std::map<std::string, std::uint64_t> produced;
    double wall_time_s = 0.0;
};

std::string to_json(const StageReport& report);
StageReport stage_report_from_json(std::string_view text);

StageReport run_synth(const PipelineConfig& config);
StageReport run_index(const PipelineConfig& config);
StageReport run_repack(const PipelineConfig& config);
StageReport run_match(const PipelineConfig& config);
StageReport run_summarize(const PipelineConfig& config);
// index -> repack -> match -> summarize.
std::vector<StageReport> run_all(const PipelineConfig& config);

// Matched files in name order; throws MissingArtifactError when a completion marker is absent.
std::vector<std::filesystem::path> completed_files(const std::filesystem::path& dir, std::string_view stage);

}  // namespace telematics
