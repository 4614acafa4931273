#pragma once

#include <filesystem>
#include <map>
#include <compare>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "telematics/roadgraph.hpp"
#include "telematics/store_io.hpp"
#include "telematics/summarize.hpp"

namespace telematics {

struct HttpResponse {
    int status = 200;
    std::string body;  // JSON
};

using QueryParams = std::map<std::string, std::string, std::less<>>;

// Percentiles served as speed-distribution metrics.
inline constexpr double kServedPercentiles[] = {25.0, 50.0, 75.0, 85.0, 95.0};

struct ServiceStores {
    StoreHeader header;
    WaySpeedHistogram histograms;
    OdMatrix od;
    std::vector<TripSummary> trips;  // feeds the start/end heatmaps
    RoadGraph graph;                 // LRS-conflated when LRS data is available
};

// Loads the histogram, OD and trip stores from `store_dir` plus the network and
// the optional LRS table. Throws MissingArtifactError naming the absent file and
// DataError when the stores disagree on their header.
ServiceStores load_service_stores(const std::filesystem::path& store_dir, const std::filesystem::path& network,
                                  const std::optional<std::filesystem::path>& lrs);

// Read-only HTTP+JSON facade over the summary stores. Responses are pure
// functions of (stores, request); all speeds are MPH.
class QueryService {
public:
    explicit QueryService(ServiceStores stores);

    // `target` is the raw request target: percent-encoded path plus optional query.
    HttpResponse handle(std::string_view method, std::string_view target) const;

    const ServiceStores& stores() const noexcept { return stores_; }

private:
    struct RouteEntry {
        std::size_t segment;
        const LrsAttributes* lrs;
    };

    HttpResponse speed_distribution(std::string_view way_id, const QueryParams& q) const;
    HttpResponse route_overview(std::string_view route, const QueryParams& q) const;
    HttpResponse route_list() const;
    HttpResponse route_segments(std::string_view route) const;
    HttpResponse od(const QueryParams& q) const;
    HttpResponse heatmap(const QueryParams& q) const;

    struct HeatKey {
        bool end = false;
        int hour = 0;
        bool weekend = false;
        auto operator<=>(const HeatKey&) const = default;
    };

    ServiceStores stores_;
    std::map<HeatKey, std::map<std::string, std::uint64_t>> heat_;
    std::map<std::string, std::vector<RouteEntry>, std::less<>> routes_;  // sorted by mile_start
};

// Blocking HTTP listener with permissive cross-origin headers.
class HttpServer {
public:
    explicit HttpServer(const QueryService& service);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    // Returns the bound port (an ephemeral one when port == 0); throws Error on failure.
    int bind(const std::string& host, int port);
    // Serves until stop() is called.
    void run();
    void stop();
    void wait_until_ready() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace telematics
