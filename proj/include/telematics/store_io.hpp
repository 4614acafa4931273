#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "telematics/summarize.hpp"

namespace telematics {

// Recorded at the top of every summary store.
struct StoreHeader {
    double bin_width_mph = kDefaultBinWidthMph;
    int tz_offset_minutes = kDefaultTzOffsetMinutes;
    std::string corpus_digest;

    friend bool operator==(const StoreHeader&, const StoreHeader&) = default;
};

inline constexpr std::string_view kTripStoreFile = "trip_summaries.csv";
inline constexpr std::string_view kTraversalStoreFile = "traversal_summaries.csv";
inline constexpr std::string_view kHistogramStoreFile = "way_histograms.json";
inline constexpr std::string_view kOdStoreFile = "od_matrix.json";

// FNV-1a 64-bit, rendered as 16 hex digits.
std::string fnv1a_hex(std::string_view data);

// CSV stores open with "# key=value" header lines followed by the column row.
std::string format_trip_store(const StoreHeader& header, std::span<const TripSummary> rows);
std::string format_traversal_store(const StoreHeader& header, std::span<const TraversalSummary> rows);
std::string format_histogram_store(const StoreHeader& header, const WaySpeedHistogram& store);
std::string format_od_store(const StoreHeader& header, const OdMatrix& store);

template <typename T>
struct LoadedStore {
    StoreHeader header;
    T data;
};

// All loaders throw DataError on malformed input.
LoadedStore<std::vector<TripSummary>> parse_trip_store(std::string_view text);
LoadedStore<std::vector<TraversalSummary>> parse_traversal_store(std::string_view text);
LoadedStore<WaySpeedHistogram> parse_histogram_store(std::string_view text);
LoadedStore<OdMatrix> parse_od_store(std::string_view text);

}  // namespace telematics
