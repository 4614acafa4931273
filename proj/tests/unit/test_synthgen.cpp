#include <gtest/gtest.h>

#include <map>
#include <set>

#include "json.hpp"
#include "telematics/errors.hpp"
#include "telematics/records_io.hpp"
#include "telematics/repack.hpp"
#include "telematics/synthgen.hpp"
#include "test_support.hpp"

using namespace telematics;
using testsupport::TempDir;

namespace {

SynthConfig small(std::uint64_t seed = 3) {
    SynthConfig c;
    c.seed = seed;
    c.grid_rows = 4;
    c.grid_cols = 5;
    c.n_trips = 60;
    return c;
}

}  // namespace

TEST(SynthNetwork, SegmentCounts) {
    EXPECT_EQ(grid_segment_count(10, 10), 220u);
    EXPECT_EQ(grid_segment_count(1, 1), 4u);
    SynthConfig c;
    EXPECT_EQ(generate_network(c).segments.size(), 220u);
    c.grid_rows = 1;
    c.grid_cols = 1;
    EXPECT_EQ(generate_network(c).segments.size(), 4u);
}

TEST(SynthNetwork, SegmentLengthsClassesAndRoutes) {
    const auto c = small();
    const auto net = generate_network(c);
    const auto g = RoadGraph::build(net.segments);
    for (const auto& s : g.segments()) {
        EXPECT_NEAR(s.length_m, c.segment_length_m, 1.0) << s.way_id;
        EXPECT_TRUE(s.speed_limit_mps.has_value());
    }
    std::map<std::string, int> per_route;
    for (const auto& r : net.lrs) {
        ++per_route[r.route_name];
        EXPECT_LT(r.mile_start, r.mile_end);
        EXPECT_EQ(g.segment(r.way_id)->road_class, r.route_name == "Route 1" ? RoadClass::motorway : RoadClass::arterial);
    }
    EXPECT_EQ(per_route["Route 1"], c.grid_cols);
    EXPECT_EQ(per_route["Route 2"], c.grid_rows);
    EXPECT_EQ(net.regions.size(), static_cast<std::size_t>(c.region_rows * c.region_cols));
    EXPECT_NO_THROW(RegionIndex(net.regions));
}

TEST(SynthTrips, DeterministicPerSeed) {
    const auto c = small(11);
    const auto net = generate_network(c);
    const auto a = generate_trips(net, c);
    const auto b = generate_trips(net, c);
    ASSERT_EQ(a.size(), c.n_trips);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].points, b[i].points);
        EXPECT_EQ(a[i].route, b[i].route);
    }
    const auto other = generate_trips(net, small(12));
    EXPECT_NE(other[0].points, a[0].points);
}

TEST(SynthTrips, NoiselessPointsLieOnLabelledCenterline) {
    auto c = small();
    c.min_hour = 7;
    c.max_hour = 9;
    c.congested_fraction = 0.5;
    const auto net = generate_network(c);
    const auto g = RoadGraph::build(net.segments);
    std::size_t congested = 0;
    for (const auto& t : generate_trips(net, c)) {
        EXPECT_TRUE(testsupport::oracle_accepts(t.points)) << t.journey_id;
        ASSERT_EQ(t.points.size(), t.way_labels.size());
        for (std::size_t i = 0; i < t.points.size(); ++i) {
            const auto* s = g.segment(t.way_labels[i]);
            ASSERT_TRUE(s);
            double d = 1e18;
            for (std::size_t v = 1; v < s->polyline.size(); ++v) {
                d = std::min(d, project_onto_arc(t.points[i].position(), s->polyline[v - 1], s->polyline[v]).distance);
            }
            EXPECT_LT(d, 1e-3);
            EXPECT_EQ(t.points[i].position(), t.true_positions[i]);
            if (i > 0) {
                EXPECT_GT(t.points[i].timestamp_ms, t.points[i - 1].timestamp_ms);
            }
        }
        const auto local = to_local(t.points.front().timestamp_ms, c.tz_offset_minutes);
        EXPECT_GE(local.hour, 7);
        EXPECT_LE(local.hour, 9);
        // Every labelled way lies on the planned route.
        std::set<std::string> labelled(t.way_labels.begin(), t.way_labels.end());
        for (const auto& w : labelled) EXPECT_NE(std::find(t.route.begin(), t.route.end(), w), t.route.end());
        if (t.congested) {
            ++congested;
            double sum = 0;
            for (const auto& p : t.points) sum += p.speed_mps;
            EXPECT_LT(sum / static_cast<double>(t.points.size()), 9.0);
        }
    }
    EXPECT_GT(congested, 10u);
    EXPECT_LT(congested, 50u);
}

TEST(SynthTrips, NoiseHasRequestedSpread) {
    auto c = small();
    c.gps_noise_sigma_m = 8.0;
    const auto net = generate_network(c);
    double sum_sq = 0;
    std::size_t n = 0;
    for (const auto& t : generate_trips(net, c)) {
        for (std::size_t i = 0; i < t.points.size(); ++i) {
            const double d = haversine_distance(t.points[i].position(), t.true_positions[i]);
            sum_sq += d * d;
            ++n;
        }
    }
    // Two independent axes: E[d^2] = 2 sigma^2.
    EXPECT_NEAR(std::sqrt(sum_sq / static_cast<double>(n) / 2.0), 8.0, 0.4);
}

TEST(SynthShards, BookkeepingMatchesFiles) {
    auto c = small();
    c.shard_count = 5;
    c.split_degree = 3;
    c.duplicate_rate = 0.1;
    c.invalid_rate = 0.02;
    c.postal_code_rate = 1.0;
    const auto net = generate_network(c);
    const auto trips = generate_trips(net, c);
    TempDir dir;
    const auto gt = emit_shards(trips, c, dir / "raw", dir / "ground_truth.json");
    std::size_t points = 0;
    for (const auto& t : trips) points += t.points.size();
    EXPECT_EQ(gt.unique_points, points);
    EXPECT_EQ(gt.total_records, gt.unique_points + gt.injected_duplicates + gt.injected_invalid);
    EXPECT_GT(gt.injected_duplicates, 0u);
    EXPECT_GT(gt.injected_invalid, 0u);

    const auto manifest = scan_shard_dir(dir / "raw");
    ASSERT_EQ(manifest.size(), 5u);
    std::size_t records = 0;
    for (const auto& s : manifest) {
        const auto contents = read_shard(s, SpeedUnit::kph);
        EXPECT_EQ(contents.malformed, 0u);
        records += contents.records.size();
        for (const auto& r : contents.records) EXPECT_TRUE(r.postal_code.has_value());
    }
    EXPECT_EQ(records, gt.total_records);

    const auto idx = build_journey_index(manifest, SpeedUnit::mps);
    EXPECT_EQ(idx.journeys.size(), trips.size());

    const auto doc = nlohmann::json::parse(read_file(dir / "ground_truth.json"));
    EXPECT_EQ(doc["trips"].size(), trips.size());
}

TEST(SynthShards, SplitDegreeBoundsShardsPerTrip) {
    for (std::size_t degree : {1u, 3u}) {
        auto c = small();
        c.shard_count = 6;
        c.split_degree = degree;
        const auto trips = generate_trips(generate_network(c), c);
        TempDir dir;
        const auto gt = emit_shards(trips, c, dir / "raw", dir / "gt.json");
        EXPECT_EQ(gt.total_records, gt.unique_points);
        const auto idx = build_journey_index(scan_shard_dir(dir / "raw"), SpeedUnit::mps);
        std::size_t max_seen = 0;
        for (const auto& [jid, shards] : idx.journeys) {
            EXPECT_LE(shards.size(), degree) << jid;
            max_seen = std::max(max_seen, shards.size());
        }
        EXPECT_EQ(max_seen, degree);
    }
}

TEST(SynthShards, FreshIdsDoNotCollide) {
    const auto c = small();
    const auto trips = generate_trips(generate_network(c), c);
    const auto copy = with_fresh_ids(trips, "-b");
    std::set<std::string> ids;
    for (const auto& t : trips) ids.insert(t.journey_id);
    for (const auto& t : copy) {
        EXPECT_TRUE(ids.insert(t.journey_id).second);
        for (const auto& p : t.points) EXPECT_EQ(p.journey_id, t.journey_id);
    }
}

TEST(Geohash, KnownValue) {
    EXPECT_EQ(geohash_encode({42.6, -5.6}, 5), "ezs42");
    EXPECT_EQ(geohash_encode({57.64911, 10.40744}, 11), "u4pruydqqvj");
}

TEST(SynthConfigValidate, RejectsBadValues) {
    EXPECT_NO_THROW(SynthConfig{}.validate());
    auto c = SynthConfig{};
    c.duplicate_rate = 1.5;
    EXPECT_THROW(c.validate(), ConfigError);
    c = SynthConfig{};
    c.n_trips = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = SynthConfig{};
    c.min_hour = 20;
    c.max_hour = 5;
    EXPECT_THROW(c.validate(), ConfigError);
}
