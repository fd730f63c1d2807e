#include <doctest.h>

#include <atomic>
#include <chrono>
#include <future>
#include <thread>

#include "helpers.hpp"
#include "vapipe/graph.hpp"

using namespace vapipe;
using namespace testutil;

namespace {

ModelRegistry test_registry(double det_lat_lo = 0.0, double det_lat_hi = 0.0,
                            double cls_lat_lo = 0.0, double cls_lat_hi = 0.0) {
    ModelRegistry reg;

    SyntheticModelSpec det;
    det.name = "det-model";
    det.kind = SyntheticOutputKind::kDetectionOutput;
    det.dims = {1, 1, 4, 7};
    det.latency_lo_ms = det_lat_lo;
    det.latency_hi_ms = det_lat_hi;
    det.seed_salt = 11;
    det.label_count = 3;
    reg.models[det.name] = det;

    SyntheticModelSpec cls;
    cls.name = "cls-model";
    cls.kind = SyntheticOutputKind::kLabel;
    cls.dims = {6};
    cls.latency_lo_ms = cls_lat_lo;
    cls.latency_hi_ms = cls_lat_hi;
    cls.seed_salt = 12;
    reg.models[cls.name] = cls;

    ModelProc det_mp;
    det_mp.model_name = "det-model";
    det_mp.input = {24, 24, "BGRP", 0.0, 1.0};
    det_mp.output.kind = ConverterKind::kDetectionOutput;
    det_mp.labels = {"background", "car", "plate"};
    reg.model_procs["det-model"] = det_mp;

    ModelProc cls_mp;
    cls_mp.model_name = "cls-model";
    cls_mp.input = {16, 8, "BGRP", 127.5, 127.5};
    cls_mp.output = {ConverterKind::kLabel, "kind"};
    cls_mp.labels = {"a", "b", "c", "d", "e", "f"};
    reg.model_procs["cls-model"] = cls_mp;

    return reg;
}

PipelineSpec case_a_spec(int frames, int nireq, const std::string& publish_path,
                         size_t queue_capacity = 4) {
    PipelineSpec spec;
    spec.source.kind = SourceSpec::Kind::kSynth;
    spec.source.count = frames;
    spec.source.width = 64;
    spec.source.height = 48;
    spec.source.fps_num = 30;
    spec.branches = {parse_chain("format=to=bgr24,detect=model=det-model:nireq=" +
                                 std::to_string(nireq) +
                                 ",classify=model=cls-model:nireq=" + std::to_string(nireq))};
    if (!publish_path.empty()) {
        spec.publish.kind = PublishSpec::Kind::kFile;
        spec.publish.path = publish_path;
    }
    spec.queue_capacity = queue_capacity;
    return spec;
}

}  // namespace

TEST_CASE("parse_chain splits filters and options") {
    auto nodes = parse_chain("detect=model=m1:nireq=4,classify=model=m2");
    REQUIRE(nodes.size() == 2);
    CHECK(nodes[0].name == "detect");
    REQUIRE(nodes[0].options.size() == 2);
    CHECK(nodes[0].options[0].key == "model");
    CHECK(nodes[0].options[0].value == "m1");
    CHECK(nodes[0].options[1].key == "nireq");
    CHECK(nodes[0].options[1].value == "4");
    CHECK(nodes[1].name == "classify");
    CHECK(nodes[1].find("model")->value == "m2");

    CHECK(parse_chain("").empty());
}

TEST_CASE("parse_chain handles configs with pipe separators") {
    auto nodes = parse_chain("detect=configs=A=1|B=2");
    REQUIRE(nodes.size() == 1);
    const FilterOption* configs = nodes[0].find("configs");
    REQUIRE(configs != nullptr);
    auto pairs = parse_configs_value(configs->raw_value);
    REQUIRE(pairs.size() == 2);
    CHECK(pairs[0] == std::pair<std::string, std::string>{"A", "1"});
    CHECK(pairs[1] == std::pair<std::string, std::string>{"B", "2"});
}

TEST_CASE("parse_chain escape handling") {
    auto nodes = parse_chain("detect=model=a\\,b");
    REQUIRE(nodes.size() == 1);
    CHECK(nodes[0].find("model")->value == "a,b");

    auto piped = parse_chain("detect=configs=A=x\\|y|B=2");
    auto pairs = parse_configs_value(piped[0].find("configs")->raw_value);
    REQUIRE(pairs.size() == 2);
    CHECK(pairs[0].second == "x|y");
}

TEST_CASE("parse_chain reports errors with byte offsets") {
    auto offset_of = [](const std::string& text) -> size_t {
        try {
            parse_chain(text);
        } catch (const ChainParseError& e) {
            return e.offset();
        }
        return static_cast<size_t>(-1);
    };
    CHECK(offset_of(",detect=model=m") == 0);
    CHECK(offset_of("detect=model=m,") == 15);
    CHECK(offset_of("detect=model=m:") == 15);
    CHECK(offset_of("blur=x=1") == 0);
    CHECK(offset_of("detect=model=a:model=b") == 15);  // duplicate key
    CHECK(offset_of("detect=") == 7);
    CHECK_THROWS_AS(parse_chain("detect=model"), ChainParseError);  // not key=value
}

TEST_CASE("build wires the case-a chain into five stages") {
    ModelRegistry reg = test_registry();
    PipelineSpec spec = case_a_spec(10, 2, "");
    Pipeline p = build(spec, reg);
    CHECK(p.source != nullptr);
    REQUIRE(p.branches.size() == 1);
    // format, detect, classify, sink — the source makes it five.
    REQUIRE(p.branches[0].stages.size() == 4);
    CHECK(p.branches[0].stages[0]->name() == "format");
    CHECK(p.branches[0].stages[1]->name() == "detect");
    CHECK(p.branches[0].stages[2]->name() == "classify");
    CHECK(p.branches[0].stages[3]->name() == "sink");
    CHECK(p.backends.size() == 2);
}

TEST_CASE("build disambiguates duplicate filters and honors model_proc overrides") {
    ModelRegistry reg = test_registry();

    // Second classifier configured through an on-disk model_proc file.
    std::string proc_path = temp_path("vapipe_mp_override.json");
    {
        std::ofstream out(proc_path);
        out << R"({"model_name":"cls-model",
                   "input":{"width":8,"height":8},
                   "output":{"converter":"label","attribute_name":"second_kind"},
                   "labels":["x","y","z","w","v","u"]})";
    }
    PipelineSpec spec = case_a_spec(6, 1, "");
    spec.branches = {parse_chain("format=to=bgr24,detect=model=det-model,"
                                 "classify=model=cls-model,"
                                 "classify=model=cls-model:model_proc=" + proc_path)};
    Pipeline p = build(spec, reg);
    REQUIRE(p.branches[0].stages.size() == 5);
    CHECK(p.branches[0].stages[2]->name() == "classify");
    CHECK(p.branches[0].stages[3]->name() == "classify_2");

    RunReport report = run_serial(p);
    REQUIRE(report.error.empty());
    bool saw_both_attrs = false;
    // No direct frame capture here; the attribute names land in the report
    // via backends instead, so run again with a publisher to check output.
    std::string path = temp_path("vapipe_dup_classify.ndjson");
    spec.publish.kind = PublishSpec::Kind::kFile;
    spec.publish.path = path;
    Pipeline p2 = build(spec, reg);
    RunReport r2 = run_serial(p2);
    REQUIRE(r2.error.empty());
    std::string bytes = read_file(path);
    saw_both_attrs = bytes.find("\"kind\"") != std::string::npos &&
                     bytes.find("\"second_kind\"") != std::string::npos;
    CHECK(saw_both_attrs);
    size_t kind_pos = bytes.find("\"attribute_name\":\"kind\"");
    size_t second_pos = bytes.find("\"attribute_name\":\"second_kind\"");
    REQUIRE(kind_pos != std::string::npos);
    REQUIRE(second_pos != std::string::npos);
    CHECK(kind_pos < second_pos);  // chain order
}

TEST_CASE("build rejects ai filters without a bgr24 upstream") {
    ModelRegistry reg = test_registry();
    PipelineSpec spec;
    spec.source.count = 5;
    spec.source.width = 16;
    spec.source.height = 16;
    spec.branches = {parse_chain("detect=model=det-model")};
    try {
        build(spec, reg);
        FAIL("expected BuildError");
    } catch (const BuildError& e) {
        std::string what = e.what();
        CHECK(what.find("detect") != std::string::npos);
        CHECK(what.find("source") != std::string::npos);
    }
}

TEST_CASE("build rejects multi-branch without abr and unknown models") {
    ModelRegistry reg = test_registry();
    PipelineSpec spec = case_a_spec(5, 1, "");
    spec.branches.push_back(spec.branches[0]);
    CHECK_THROWS_AS(build(spec, reg), BuildError);
    spec.abr = true;
    CHECK_NOTHROW(build(spec, reg));

    PipelineSpec missing = case_a_spec(5, 1, "");
    missing.branches = {parse_chain("format=to=bgr24,detect=model=nope")};
    CHECK_THROWS_AS(build(missing, reg), BuildError);

    PipelineSpec badthr = case_a_spec(5, 1, "");
    badthr.branches = {parse_chain("format=to=bgr24,detect=model=det-model:threshold=1.5")};
    CHECK_THROWS_AS(build(badthr, reg), BuildError);

    PipelineSpec badnireq = case_a_spec(5, 1, "");
    badnireq.branches = {parse_chain("format=to=bgr24,detect=model=det-model:nireq=0")};
    CHECK_THROWS_AS(build(badnireq, reg), BuildError);
}

TEST_CASE("serial run counts every frame through the sink") {
    ModelRegistry reg = test_registry();
    PipelineSpec spec = case_a_spec(30, 2, "");
    Pipeline p = build(spec, reg);
    RunReport report = run_serial(p);
    CHECK(report.error.empty());
    CHECK_FALSE(report.partial);
    CHECK(report.frames == 30);
    for (const auto& s : report.stages) {
        if (s.name == "sink") {
            CHECK(s.frames_in == 30);
        }
        if (s.name == "detect" || s.name == "classify" || s.name == "format") {
            CHECK(s.frames_in == 30);
            CHECK(s.frames_out == 30);
        }
    }
    CHECK(report.warnings.empty());
    CHECK(report.fps > 0);
    // One frame at a time: nothing accumulates inside the pipeline.
    CHECK(report.peak_in_flight <= 2);
}

TEST_CASE("empty chain copies source to sink") {
    ModelRegistry reg;
    PipelineSpec spec;
    spec.source.count = 10;
    spec.source.width = 16;
    spec.source.height = 16;
    Pipeline p = build(spec, reg);
    RunReport report = run_serial(p);
    CHECK(report.frames == 10);
    CHECK(report.error.empty());
    CHECK(report.fps > 0);
}

TEST_CASE("serial abort keeps a partial report") {
    class FailAtStage : public FilterStage {
    public:
        explicit FailAtStage(int64_t seq) : FilterStage("bomb"), fail_seq_(seq) {}

    protected:
        void process(Frame frame, const FrameSink& emit) override {
            if (frame.seq == fail_seq_) {
                throw PipelineError("stage 'bomb': injected failure at frame " +
                                    std::to_string(frame.seq));
            }
            emit(std::move(frame));
        }

    private:
        int64_t fail_seq_;
    };

    Pipeline p;
    p.source = std::make_unique<SyntheticSource>(20, 16, 16, 30, 1);
    Pipeline::Branch branch;
    branch.stages.push_back(std::make_unique<FailAtStage>(5));
    auto sink = std::make_unique<NullSink>();
    branch.sink = sink.get();
    branch.stages.push_back(std::move(sink));
    p.branches.push_back(std::move(branch));

    RunReport report = run_serial(p);
    CHECK(report.partial);
    CHECK(report.error.find("frame 5") != std::string::npos);
    for (const auto& s : report.stages) {
        if (s.name == "sink") {
            CHECK(s.frames_in == 5);  // frames 0..4 made it through
        }
    }
}

TEST_CASE("parallel run cancels on stage failure") {
    class FailAtStage : public FilterStage {
    public:
        explicit FailAtStage(int64_t seq) : FilterStage("bomb"), fail_seq_(seq) {}

    protected:
        void process(Frame frame, const FrameSink& emit) override {
            if (frame.seq == fail_seq_) {
                throw PipelineError("injected failure");
            }
            emit(std::move(frame));
        }

    private:
        int64_t fail_seq_;
    };

    Pipeline p;
    p.source = std::make_unique<SyntheticSource>(1000, 16, 16, 30, 1);
    Pipeline::Branch branch;
    branch.stages.push_back(std::make_unique<FailAtStage>(7));
    auto sink = std::make_unique<NullSink>();
    branch.sink = sink.get();
    branch.stages.push_back(std::move(sink));
    p.branches.push_back(std::move(branch));
    p.queue_capacity = 2;

    auto start = std::chrono::steady_clock::now();
    RunReport report = run_parallel(p);
    auto elapsed = std::chrono::steady_clock::now() - start;
    CHECK(report.partial);
    CHECK(report.error == "injected failure");
    CHECK(std::chrono::duration_cast<std::chrono::seconds>(elapsed).count() < 10);
    // The source stopped near the failure point instead of running ahead.
    CHECK(report.frames < 1000);
}

TEST_CASE("parallel equals serial byte for byte") {
    ModelRegistry reg = test_registry(0.0, 2.0, 0.0, 1.0);
    for (int nireq : {1, 4}) {
        std::string serial_path = temp_path("vapipe_eq_serial.ndjson");
        std::string parallel_path = temp_path("vapipe_eq_parallel.ndjson");

        PipelineSpec sspec = case_a_spec(40, nireq, serial_path);
        Pipeline sp = build(sspec, reg);
        RunReport sreport = run_serial(sp);
        REQUIRE(sreport.error.empty());

        PipelineSpec pspec = case_a_spec(40, nireq, parallel_path);
        Pipeline pp = build(pspec, reg);
        RunReport preport = run_parallel(pp);
        REQUIRE(preport.error.empty());

        std::string serial_bytes = read_file(serial_path);
        std::string parallel_bytes = read_file(parallel_path);
        CHECK(serial_bytes == parallel_bytes);
        CHECK(!serial_bytes.empty());
        CHECK(sreport.frames == 40);
        CHECK(preport.frames == 40);
    }
}

TEST_CASE("latency never changes published values") {
    std::string quick_path = temp_path("vapipe_lat0.ndjson");
    std::string slow_path = temp_path("vapipe_lat50.ndjson");

    ModelRegistry quick = test_registry(0.0, 0.0, 0.0, 0.0);
    PipelineSpec qspec = case_a_spec(10, 4, quick_path);
    Pipeline qp = build(qspec, quick);
    run_parallel(qp);

    ModelRegistry slow = test_registry(50.0, 50.0, 50.0, 50.0);
    PipelineSpec lspec = case_a_spec(10, 4, slow_path);
    Pipeline lp = build(lspec, slow);
    run_parallel(lp);

    CHECK(read_file(quick_path) == read_file(slow_path));
}

TEST_CASE("backpressure keeps the source within queue capacity") {
    class StallStage : public FilterStage {
    public:
        StallStage() : FilterStage("stall") {}
        std::atomic<bool> release{false};

    protected:
        void process(Frame frame, const FrameSink& emit) override {
            while (!release.load()) {
                std::this_thread::sleep_for(std::chrono::milliseconds(1));
            }
            emit(std::move(frame));
        }
    };

    Pipeline p;
    p.source = std::make_unique<SyntheticSource>(500, 16, 16, 30, 1);
    Pipeline::Branch branch;
    auto stall = std::make_unique<StallStage>();
    StallStage* stall_ptr = stall.get();
    branch.stages.push_back(std::move(stall));
    auto sink = std::make_unique<NullSink>();
    branch.sink = sink.get();
    branch.stages.push_back(std::move(sink));
    p.branches.push_back(std::move(branch));
    p.queue_capacity = 4;

    FrameSource* source = p.source.get();
    auto future = std::async(std::launch::async, [&] { return run_parallel(p); });
    std::this_thread::sleep_for(std::chrono::milliseconds(300));
    // Stalled consumer: the source can be at most one frame past the queue.
    CHECK(source->counters().frames_out <= 6);
    stall_ptr->release.store(true);
    RunReport report = future.get();
    CHECK(report.error.empty());
    CHECK(report.frames == 500);
}

TEST_CASE("abr branches each see every frame with independent metadata") {
    ModelRegistry reg = test_registry();
    std::string path = temp_path("vapipe_abr.ndjson");
    PipelineSpec spec;
    spec.source.count = 25;
    spec.source.width = 64;
    spec.source.height = 48;
    spec.abr = true;
    spec.branches = {
        parse_chain("format=to=bgr24,detect=model=det-model:nireq=2"),
        parse_chain("format=to=bgr24,detect=model=det-model:nireq=2,"
                    "classify=model=cls-model:nireq=2"),
    };
    spec.publish.kind = PublishSpec::Kind::kFile;
    spec.publish.path = path;

    Pipeline p = build(spec, reg);
    RunReport report = run_parallel(p);
    REQUIRE(report.error.empty());

    int sinks_seen = 0;
    for (const auto& s : report.stages) {
        if (s.name == "b0:sink" || s.name == "b1:sink") {
            CHECK(s.frames_in == 25);
            sinks_seen += 1;
        }
    }
    CHECK(sinks_seen == 2);

    std::string b0 = read_file(path + ".b0");
    std::string b1 = read_file(path + ".b1");
    CHECK(std::count(b0.begin(), b0.end(), '\n') == 25);
    CHECK(std::count(b1.begin(), b1.end(), '\n') == 25);
    // Branch 1 chains a classifier, so its records carry attributes.
    CHECK(b0.find("\"attributes\":[{") == std::string::npos);
    CHECK(b1.find("\"attributes\":[{") != std::string::npos);

    // Serial agrees with parallel on both branches.
    std::string spath = temp_path("vapipe_abr_serial.ndjson");
    spec.publish.path = spath;
    Pipeline sp = build(spec, reg);
    RunReport sreport = run_serial(sp);
    REQUIRE(sreport.error.empty());
    CHECK(read_file(spath + ".b0") == b0);
    CHECK(read_file(spath + ".b1") == b1);
}

TEST_CASE("randomized latencies terminate across queue capacities") {
    for (size_t cap : {1u, 2u, 4u}) {
        ModelRegistry reg = test_registry(0.0, 3.0, 0.0, 3.0);
        PipelineSpec spec = case_a_spec(200, 8, "", cap);
        Pipeline p = build(spec, reg);
        auto future = std::async(std::launch::async, [&] { return run_parallel(p); });
        REQUIRE(future.wait_for(std::chrono::seconds(60)) == std::future_status::ready);
        RunReport report = future.get();
        CHECK(report.error.empty());
        CHECK(report.frames == 200);
        CHECK(report.warnings.empty());
        int64_t stage_count = 1 + static_cast<int64_t>(p.branches[0].stages.size());
        CHECK(report.peak_in_flight <= stage_count * static_cast<int64_t>(cap + 8));
    }
}

TEST_CASE("utilization improves in parallel mode when inference dominates") {
    ModelRegistry reg = test_registry(4.0, 4.0, 2.0, 2.0);
    PipelineSpec spec = case_a_spec(60, 8, "");
    spec.source.latency_ms = 1.0;

    Pipeline sp = build(spec, reg);
    RunReport serial = run_serial(sp);
    Pipeline pp = build(spec, reg);
    RunReport parallel = run_parallel(pp);
    REQUIRE(serial.error.empty());
    REQUIRE(parallel.error.empty());
    REQUIRE(serial.backends.size() == 2);
    REQUIRE(parallel.backends.size() == 2);
    CHECK(parallel.fps > serial.fps);
    for (size_t i = 0; i < 2; ++i) {
        CHECK(parallel.backends[i].utilization > serial.backends[i].utilization);
    }
}
