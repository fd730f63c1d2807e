#pragma once

#include <string>
#include <vector>

#include "vapipe/filters.hpp"
#include "vapipe/inference.hpp"

namespace vapipe {

struct BackendReport {
    std::string stage;
    std::string model;
    std::string device;
    int nireq = 1;
    std::vector<std::pair<std::string, std::string>> configs;
    int64_t submissions = 0;
    double busy_request_ms = 0.0;
    double utilization = 0.0;
};

/// The measurement summary of one pipeline run. Wall time spans the first
/// source emission to the last sink consumption, on a monotonic clock.
struct RunReport {
    double wall_ms = 0.0;
    int64_t frames = 0;
    double fps = 0.0;
    bool partial = false;
    std::string error;  // empty on success
    std::vector<StageCounters> stages;
    std::vector<BackendReport> backends;
    std::vector<std::string> warnings;
    int64_t peak_in_flight = 0;
};

/// Busy request time over pool capacity: busy_request_ms / (nireq * wall_ms),
/// clamped to [0,1]. Zero wall time yields 0.
double utilization(double busy_request_ms, int nireq, double wall_ms);

struct RawRunData {
    double wall_ms = 0.0;
    int64_t frames = 0;
    bool partial = false;
    std::string error;
    std::vector<StageCounters> stages;
    std::vector<BackendStats> backends;
    int64_t peak_in_flight = 0;
};

/// Aggregates counters into the final report: fps over wall time, backend
/// utilization, plus warnings for any stage whose output count does not
/// match its input count.
RunReport finalize_report(const RawRunData& raw);

/// Canonical JSON document (times in ms with 3 decimals).
std::string report_to_json(const RunReport& report);

/// One CSV row per stage.
std::string report_to_csv(const RunReport& report);

/// Human-readable multi-line summary for the console.
std::string report_summary(const RunReport& report);

}  // namespace vapipe
