#include <doctest.h>

#include <json.hpp>

#include "helpers.hpp"
#include "vapipe/graph.hpp"
#include "vapipe/metrics.hpp"

using namespace vapipe;

TEST_CASE("utilization formula") {
    CHECK(utilization(1000.0, 1, 1000.0) == doctest::Approx(1.0));
    CHECK(utilization(500.0, 4, 1000.0) == doctest::Approx(0.125));
    CHECK(utilization(0.0, 8, 1000.0) == 0.0);
    CHECK(utilization(99999.0, 1, 1000.0) == 1.0);  // clamped
    CHECK(utilization(100.0, 1, 0.0) == 0.0);
}

TEST_CASE("finalize_report computes fps and flags mismatches") {
    RawRunData raw;
    raw.wall_ms = 1000.0;
    raw.frames = 300;
    raw.stages = {
        {"source", 0, 300, 12.0},
        {"detect", 300, 300, 450.0},
        {"sink", 300, 0, 1.0},
    };
    BackendStats backend;
    backend.stage = "detect";
    backend.model = "m";
    backend.nireq = 4;
    backend.submissions = 300;
    backend.busy_request_ms = 1800.0;
    raw.backends = {backend};

    RunReport report = finalize_report(raw);
    CHECK(report.fps == doctest::Approx(300.0));
    CHECK(report.warnings.empty());
    REQUIRE(report.backends.size() == 1);
    CHECK(report.backends[0].utilization == doctest::Approx(0.45));

    raw.stages[1].frames_out = 299;  // dropped one
    RunReport warned = finalize_report(raw);
    REQUIRE(warned.warnings.size() == 1);
    CHECK(warned.warnings[0].find("detect") != std::string::npos);
}

TEST_CASE("aborted runs keep consistent counters") {
    RawRunData raw;
    raw.wall_ms = 100.0;
    raw.frames = 5;
    raw.partial = true;
    raw.error = "boom";
    raw.stages = {{"source", 0, 5, 1.0}, {"sink", 5, 0, 0.5}};
    RunReport report = finalize_report(raw);
    CHECK(report.partial);
    CHECK(report.error == "boom");
    CHECK(report.fps == doctest::Approx(50.0));
}

TEST_CASE("report serializes to parseable canonical json and csv") {
    RawRunData raw;
    raw.wall_ms = 123.4567;
    raw.frames = 10;
    raw.stages = {{"source", 0, 10, 3.25}, {"sink", 10, 0, 0.125}};
    BackendStats backend;
    backend.stage = "detect";
    backend.model = "m";
    backend.device = "CPU";
    backend.nireq = 2;
    backend.configs = {{"CPU_THROUGHPUT_STREAMS", "24"}};
    backend.submissions = 10;
    backend.busy_request_ms = 60.0;
    raw.backends = {backend};

    RunReport report = finalize_report(raw);
    std::string json = report_to_json(report);
    auto doc = nlohmann::json::parse(json);
    CHECK(doc["wall_ms"] == doctest::Approx(123.457));
    CHECK(doc["frames"] == 10);
    CHECK(doc["stages"].size() == 2);
    CHECK(doc["backends"][0]["nireq"] == 2);
    CHECK(doc["backends"][0]["configs"][0] == "CPU_THROUGHPUT_STREAMS=24");

    std::string csv = report_to_csv(report);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);  // header + two stages
    CHECK(csv.find("source,0,10,3.250") != std::string::npos);

    std::string summary = report_summary(report);
    CHECK(summary.find("fps:") != std::string::npos);
    CHECK(summary.find("backend detect") != std::string::npos);
}

TEST_CASE("per-stage busy time stays under stages times wall") {
    ModelRegistry reg;
    SyntheticModelSpec det;
    det.name = "det";
    det.kind = SyntheticOutputKind::kDetectionOutput;
    det.dims = {1, 1, 3, 7};
    det.latency_lo_ms = det.latency_hi_ms = 1.0;
    det.label_count = 2;
    reg.models["det"] = det;
    ModelProc mp;
    mp.model_name = "det";
    mp.input = {16, 16, "BGRP", 0.0, 1.0};
    mp.output.kind = ConverterKind::kDetectionOutput;
    reg.model_procs["det"] = mp;

    PipelineSpec spec;
    spec.source.count = 40;
    spec.source.width = 32;
    spec.source.height = 32;
    spec.branches = {parse_chain("format=to=bgr24,detect=model=det:nireq=4")};
    Pipeline p = build(spec, reg);
    RunReport report = run_parallel(p);
    REQUIRE(report.error.empty());

    double busy_total = 0;
    for (const auto& s : report.stages) {
        busy_total += s.busy_ms;
    }
    CHECK(busy_total <= double(report.stages.size()) * report.wall_ms * 1.05 + 5.0);
    CHECK(report.wall_ms >= 0.0);
    CHECK(report.fps > 0.0);
}
