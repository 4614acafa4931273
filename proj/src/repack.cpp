#include "telematics/repack.hpp"

#include <unordered_map>
#include <unordered_set>
#include <variant>

#include <fmt/format.h>
#include "json.hpp"

#include "telematics/errors.hpp"
#include "telematics/parallel.hpp"

namespace telematics {

using nlohmann::json;
namespace fs = std::filesystem;

std::size_t JourneyIndex::total_records() const {
    std::size_t n = 0;
    for (const auto& s : shards) n += s.records;
    return n;
}

std::size_t JourneyIndex::total_malformed() const {
    std::size_t n = 0;
    for (const auto& s : shards) n += s.malformed;
    return n;
}

JourneyIndex build_journey_index(const ShardManifest& manifest, SpeedUnit default_unit, std::size_t workers) {
    struct Partial {
        ShardScan scan;
        std::vector<std::pair<std::string, std::size_t>> counts;  // first-seen order
    };
    std::vector<Partial> partials(manifest.size());

    parallel_for(manifest.size(), workers, [&](std::size_t i) {
        const ShardContents contents = read_shard(manifest[i], default_unit);
        Partial& p = partials[i];
        p.scan = {manifest[i].shard_id, contents.records.size(), contents.malformed};
        std::unordered_map<std::string_view, std::size_t> slot;
        for (const auto& r : contents.records) {
            auto [it, inserted] = slot.try_emplace(r.journey_id, p.counts.size());
            if (inserted) p.counts.emplace_back(r.journey_id, 0);
            ++p.counts[it->second].second;
        }
    });

    JourneyIndex index;
    for (auto& p : partials) {
        for (auto& [jid, n] : p.counts) index.journeys[jid].push_back({p.scan.shard_id, n});
        index.shards.push_back(std::move(p.scan));
    }
    return index;
}

std::string to_json(const JourneyIndex& index) {
    json shards = json::array();
    for (const auto& s : index.shards) {
        shards.push_back({{"shard_id", s.shard_id}, {"records", s.records}, {"malformed", s.malformed}});
    }
    json journeys = json::object();
    for (const auto& [jid, list] : index.journeys) {
        json entries = json::array();
        for (const auto& e : list) entries.push_back(json::array({e.shard_id, e.point_count}));
        journeys[jid] = std::move(entries);
    }
    return json{{"shards", std::move(shards)}, {"journeys", std::move(journeys)}}.dump(1) + "\n";
}

JourneyIndex journey_index_from_json(std::string_view text) {
    const json doc = json::parse(text, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw DataError("journey index is not valid JSON");
    JourneyIndex index;
    try {
        for (const auto& s : doc.at("shards")) {
            index.shards.push_back({s.at("shard_id").get<std::string>(), s.at("records").get<std::size_t>(),
                                    s.at("malformed").get<std::size_t>()});
        }
        for (const auto& [jid, entries] : doc.at("journeys").items()) {
            auto& list = index.journeys[jid];
            for (const auto& e : entries) list.push_back({e.at(0).get<std::string>(), e.at(1).get<std::size_t>()});
        }
    } catch (const json::exception& e) {
        throw DataError(fmt::format("journey index is malformed: {}", e.what()));
    }
    return index;
}

std::string packed_file_id(std::size_t group_index) { return fmt::format("packed-{:05d}", group_index); }

PackingPlan plan_packing(const JourneyIndex& index, std::size_t batch_size) {
    if (batch_size == 0) throw ConfigError("batch_size must be at least 1");

    std::unordered_map<std::string_view, std::size_t> shard_rank;
    for (std::size_t i = 0; i < index.shards.size(); ++i) shard_rank.emplace(index.shards[i].shard_id, i);

    PackingPlan plan;
    std::vector<bool> needs(index.shards.size(), false);
    auto close_group = [&] {
        auto& g = plan.groups.back();
        for (std::size_t i = 0; i < needs.size(); ++i) {
            if (needs[i]) g.shard_ids.push_back(index.shards[i].shard_id);
        }
        std::fill(needs.begin(), needs.end(), false);
    };

    for (const auto& [jid, list] : index.journeys) {
        if (plan.groups.empty() || plan.groups.back().journey_ids.size() >= batch_size) {
            if (!plan.groups.empty()) close_group();
            plan.groups.push_back({packed_file_id(plan.groups.size()), {}, {}});
        }
        plan.groups.back().journey_ids.push_back(jid);
        for (const auto& e : list) {
            const auto it = shard_rank.find(e.shard_id);
            if (it == shard_rank.end()) {
                throw DataError(fmt::format("journey '{}' references shard '{}' absent from the index", jid, e.shard_id));
            }
            needs[it->second] = true;
        }
    }
    if (!plan.groups.empty()) close_group();
    return plan;
}

std::size_t RepackReport::rejected_total() const {
    std::size_t n = 0;
    for (auto v : trips_rejected) n += v;
    return n;
}

bool RepackReport::conserves() const {
    return input_points == output_points + dropped_duplicates + dropped_invalid + rejected_trip_points;
}

void RepackReport::merge(const RepackReport& o) {
    input_points += o.input_points;
    output_points += o.output_points;
    dropped_duplicates += o.dropped_duplicates;
    dropped_invalid += o.dropped_invalid;
    malformed_records += o.malformed_records;
    journeys_in += o.journeys_in;
    trips_accepted += o.trips_accepted;
    for (std::size_t i = 0; i < trips_rejected.size(); ++i) trips_rejected[i] += o.trips_rejected[i];
    rejected_trip_points += o.rejected_trip_points;
    files.insert(files.end(), o.files.begin(), o.files.end());
}

std::string to_json(const RepackReport& r) {
    json rejected = json::object();
    for (auto reason : kAllRejectionReasons) rejected[std::string(to_string(reason))] = r.rejected(reason);
    return json{{"input_points", r.input_points},
                {"output_points", r.output_points},
                {"dropped_duplicates", r.dropped_duplicates},
                {"dropped_invalid", r.dropped_invalid},
                {"malformed_records", r.malformed_records},
                {"journeys_in", r.journeys_in},
                {"trips_accepted", r.trips_accepted},
                {"trips_rejected", rejected},
                {"rejected_trip_points", r.rejected_trip_points},
                {"files", r.files}}
               .dump(2) +
           "\n";
}

RepackReport repack_report_from_json(std::string_view text) {
    const json doc = json::parse(text, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw DataError("repack report is not valid JSON");
    RepackReport r;
    try {
        r.input_points = doc.at("input_points");
        r.output_points = doc.at("output_points");
        r.dropped_duplicates = doc.at("dropped_duplicates");
        r.dropped_invalid = doc.at("dropped_invalid");
        r.malformed_records = doc.at("malformed_records");
        r.journeys_in = doc.at("journeys_in");
        r.trips_accepted = doc.at("trips_accepted");
        for (auto reason : kAllRejectionReasons) r.rejected(reason) = doc.at("trips_rejected").at(std::string(to_string(reason)));
        r.rejected_trip_points = doc.at("rejected_trip_points");
        r.files = doc.at("files").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw DataError(fmt::format("repack report is malformed: {}", e.what()));
    }
    return r;
}

namespace {

RepackReport execute_group(const PackingGroup& group, const std::unordered_map<std::string_view, const ShardRef*>& shards,
                           const RepackOptions& options) {
    std::unordered_map<std::string_view, std::size_t> slot;
    for (std::size_t i = 0; i < group.journey_ids.size(); ++i) slot.emplace(group.journey_ids[i], i);
    std::vector<std::vector<RawPointRecord>> gathered(group.journey_ids.size());

    for (const auto& shard_id : group.shard_ids) {
        const auto it = shards.find(shard_id);
        if (it == shards.end() || !fs::exists(it->second->path)) {
            throw MissingArtifactError(fmt::format("group '{}' needs shard '{}', which is missing", group.file_id, shard_id));
        }
        ShardContents contents = read_shard(*it->second, options.default_unit);
        for (auto& r : contents.records) {
            const auto s = slot.find(r.journey_id);
            if (s != slot.end()) gathered[s->second].push_back(std::move(r));
        }
    }

    RepackReport report;
    report.journeys_in = group.journey_ids.size();
    std::string body;
    std::string rejects;
    std::size_t journeys_out = 0;
    for (std::size_t i = 0; i < gathered.size(); ++i) {
        report.input_points += gathered[i].size();
        CleanResult cleaned = clean_points_detailed(std::move(gathered[i]));
        report.dropped_invalid += cleaned.dropped_invalid;
        report.dropped_duplicates += cleaned.dropped_duplicates;
        const std::size_t kept = cleaned.points.size();
        TripValidation v = validate_trip(std::move(cleaned.points));
        if (auto* reason = std::get_if<RejectionReason>(&v)) {
            ++report.rejected(*reason);
            report.rejected_trip_points += kept;
            if (options.write_rejects) {
                rejects += fmt::format("{{\"journey_id\":{},\"reason\":\"{}\",\"point_count\":{}}}\n",
                                       json_quote(group.journey_ids[i]), to_string(*reason), kept);
            }
            continue;
        }
        const Trip& trip = std::get<Trip>(v);
        ++report.trips_accepted;
        ++journeys_out;
        report.output_points += trip.points.size();
        for (const auto& p : trip.points) {
            body += format_record(p);
            body += '\n';
        }
    }

    const fs::path file = options.out_dir / (group.file_id + ".ndjson");
    fs::remove(done_marker(file));
    std::string contents = format_packed_header({group.file_id, journeys_out, report.output_points});
    contents += '\n';
    contents += body;
    write_file_atomic(file, contents);
    if (options.write_rejects) write_file_atomic(options.out_dir / "rejects" / (group.file_id + ".rejects.ndjson"), rejects);
    write_done_marker(file);
    report.files.push_back(file.filename().string());
    return report;
}

}  // namespace

RepackReport repack_execute(const PackingPlan& plan, const ShardManifest& manifest, const RepackOptions& options) {
    std::unordered_map<std::string_view, const ShardRef*> shards;
    for (const auto& s : manifest) shards.emplace(s.shard_id, &s);
    fs::create_directories(options.out_dir);

    std::vector<RepackReport> partial(plan.groups.size());
    parallel_for(plan.groups.size(), options.workers,
                 [&](std::size_t i) { partial[i] = execute_group(plan.groups[i], shards, options); });

    RepackReport total;
    for (const auto& p : partial) total.merge(p);
    return total;
}

}  // namespace telematics
