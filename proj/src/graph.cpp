#include "vapipe/graph.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace vapipe {

// ---------------------------------------------------------------------------
// Chain parsing

namespace {

struct Token {
    std::string text;      // escapes resolved
    std::string raw;       // escapes intact
    size_t offset = 0;     // byte position of the token start
};

// Splits on any of `seps` (top level, escape-aware). Keeps empty segments so
// dangling separators are detectable.
std::vector<Token> split_tokens(const std::string& text, size_t base_offset,
                                const std::string& seps) {
    std::vector<Token> out;
    Token cur;
    cur.offset = base_offset;
    for (size_t i = 0; i < text.size(); ++i) {
        char ch = text[i];
        if (ch == '\\') {
            if (i + 1 >= text.size()) {
                throw ChainParseError("dangling escape", base_offset + i);
            }
            cur.raw += ch;
            cur.raw += text[i + 1];
            cur.text += text[i + 1];
            ++i;
            continue;
        }
        if (seps.find(ch) != std::string::npos) {
            out.push_back(std::move(cur));
            cur = Token{};
            cur.offset = base_offset + i + 1;
            continue;
        }
        cur.raw += ch;
        cur.text += ch;
    }
    out.push_back(std::move(cur));
    return out;
}

// Splits "key=value" at the first unescaped '='; value may be absent.
std::optional<size_t> first_unescaped(const std::string& raw, char sep) {
    for (size_t i = 0; i < raw.size(); ++i) {
        if (raw[i] == '\\') {
            ++i;
            continue;
        }
        if (raw[i] == sep) {
            return i;
        }
    }
    return std::nullopt;
}

std::string unescape(const std::string& raw) {
    std::string out;
    for (size_t i = 0; i < raw.size(); ++i) {
        if (raw[i] == '\\' && i + 1 < raw.size()) {
            ++i;
        }
        out += raw[i];
    }
    return out;
}

const std::set<std::string> kKnownFilters = {"detect", "classify", "format"};

}  // namespace

const FilterOption* FilterNode::find(const std::string& key) const {
    for (const auto& opt : options) {
        if (opt.key == key) {
            return &opt;
        }
    }
    return nullptr;
}

std::vector<FilterNode> parse_chain(const std::string& text) {
    std::vector<FilterNode> nodes;
    if (text.empty()) {
        return nodes;  // empty chain: source feeds sink directly
    }
    auto filters = split_tokens(text, 0, ",");
    for (const auto& filter_tok : filters) {
        if (filter_tok.raw.empty()) {
            throw ChainParseError("empty filter name", filter_tok.offset);
        }
        FilterNode node;
        node.offset = filter_tok.offset;
        auto eq = first_unescaped(filter_tok.raw, '=');
        std::string name_raw = eq ? filter_tok.raw.substr(0, *eq) : filter_tok.raw;
        node.name = unescape(name_raw);
        if (node.name.empty()) {
            throw ChainParseError("empty filter name", filter_tok.offset);
        }
        if (!kKnownFilters.count(node.name)) {
            throw ChainParseError("unknown filter '" + node.name + "'", filter_tok.offset);
        }
        if (eq) {
            std::string opts_raw = filter_tok.raw.substr(*eq + 1);
            size_t opts_offset = filter_tok.offset + *eq + 1;
            auto opts = split_tokens(opts_raw, opts_offset, ":");
            for (const auto& opt_tok : opts) {
                if (opt_tok.raw.empty()) {
                    throw ChainParseError("dangling separator", opt_tok.offset);
                }
                auto opt_eq = first_unescaped(opt_tok.raw, '=');
                if (!opt_eq || *opt_eq == 0) {
                    throw ChainParseError("option is not key=value", opt_tok.offset);
                }
                FilterOption opt;
                opt.key = unescape(opt_tok.raw.substr(0, *opt_eq));
                opt.raw_value = opt_tok.raw.substr(*opt_eq + 1);
                opt.value = unescape(opt.raw_value);
                if (node.find(opt.key)) {
                    throw ChainParseError("duplicate option '" + opt.key + "'", opt_tok.offset);
                }
                node.options.push_back(std::move(opt));
            }
        }
        nodes.push_back(std::move(node));
    }
    return nodes;
}

std::vector<std::pair<std::string, std::string>> parse_configs_value(const std::string& raw) {
    std::vector<std::pair<std::string, std::string>> pairs;
    if (raw.empty()) {
        return pairs;
    }
    auto toks = split_tokens(raw, 0, "|");
    for (const auto& tok : toks) {
        if (tok.raw.empty()) {
            throw ChainParseError("dangling separator in configs", tok.offset);
        }
        auto eq = first_unescaped(tok.raw, '=');
        if (!eq || *eq == 0) {
            throw ChainParseError("configs entry is not key=value", tok.offset);
        }
        pairs.emplace_back(unescape(tok.raw.substr(0, *eq)), unescape(tok.raw.substr(*eq + 1)));
    }
    return pairs;
}

// ---------------------------------------------------------------------------
// Registry

const SyntheticModelSpec& ModelRegistry::resolve_model(const std::string& name) const {
    auto it = models.find(name);
    if (it == models.end()) {
        throw BuildError("unresolvable model '" + name + "'");
    }
    return it->second;
}

ModelProc ModelRegistry::resolve_model_proc(const std::string& model,
                                            const std::string& override_path) const {
    if (!override_path.empty()) {
        return load_model_proc(override_path);
    }
    auto it = model_procs.find(model);
    if (it != model_procs.end()) {
        return it->second;
    }
    if (model_proc_dir.empty()) {
        throw BuildError("no model_proc available for model '" + model + "'");
    }
    return load_model_proc(model_proc_dir + "/" + model + ".json");
}

// ---------------------------------------------------------------------------
// Build

namespace {

int parse_int_option(const FilterNode& node, const std::string& key, int fallback) {
    const FilterOption* opt = node.find(key);
    if (!opt) {
        return fallback;
    }
    try {
        size_t pos = 0;
        int v = std::stoi(opt->value, &pos);
        if (pos != opt->value.size()) {
            throw std::invalid_argument("");
        }
        return v;
    } catch (const std::exception&) {
        throw BuildError("filter '" + node.name + "': option " + key + "='" + opt->value +
                         "' is not an integer");
    }
}

std::string unique_stage_name(std::vector<std::string>& used, const std::string& base) {
    std::string name = base;
    int n = 1;
    while (std::find(used.begin(), used.end(), name) != used.end()) {
        name = base + "_" + std::to_string(++n);
    }
    used.push_back(name);
    return name;
}

std::unique_ptr<FilterStage> build_ai_stage(const FilterNode& node, const ModelRegistry& registry,
                                            const std::string& stage_name, Pipeline& pipeline) {
    const FilterOption* model_opt = node.find("model");
    if (!model_opt || model_opt->value.empty()) {
        throw BuildError("filter '" + node.name + "': missing model option");
    }
    const SyntheticModelSpec& model = registry.resolve_model(model_opt->value);

    const FilterOption* proc_opt = node.find("model_proc");
    ModelProc mp = registry.resolve_model_proc(model_opt->value,
                                               proc_opt ? proc_opt->value : std::string());

    if (const FilterOption* thr = node.find("threshold")) {
        try {
            size_t pos = 0;
            mp.threshold = std::stod(thr->value, &pos);
            if (pos != thr->value.size()) {
                throw std::invalid_argument("");
            }
        } catch (const std::exception&) {
            throw BuildError("filter '" + node.name + "': threshold '" + thr->value +
                             "' is not a number");
        }
        if (!(mp.threshold >= 0.0 && mp.threshold <= 1.0)) {
            throw BuildError("filter '" + node.name + "': threshold " + thr->value +
                             " outside [0,1]");
        }
    }

    InferenceConfig cfg;
    cfg.model = model_opt->value;
    if (const FilterOption* dev = node.find("device")) {
        cfg.device = dev->value;  // recorded verbatim; every backend is CPU-hosted
    }
    cfg.nireq = parse_int_option(node, "nireq", 1);
    if (cfg.nireq < 1) {
        throw BuildError("filter '" + node.name + "': nireq must be >= 1");
    }
    if (const FilterOption* configs = node.find("configs")) {
        cfg.configs = parse_configs_value(configs->raw_value);
    }

    if (node.name == "detect") {
        if (mp.output.kind != ConverterKind::kDetectionOutput) {
            throw BuildError("filter 'detect': model_proc for '" + cfg.model +
                             "' must use the detection_output converter, has '" +
                             converter_kind_name(mp.output.kind) + "'");
        }
        if (model.kind != SyntheticOutputKind::kDetectionOutput) {
            throw BuildError("filter 'detect': model '" + cfg.model +
                             "' is not a detection model");
        }
        auto backend = std::make_shared<InferenceBackend>(cfg, model);
        pipeline.backends.push_back(backend);
        return std::make_unique<DetectStage>(stage_name, std::move(mp), backend);
    }
    if (mp.output.kind != ConverterKind::kLabel) {
        throw BuildError("filter 'classify': model_proc for '" + cfg.model +
                         "' must use the label converter, has '" +
                         converter_kind_name(mp.output.kind) + "'");
    }
    if (model.kind != SyntheticOutputKind::kLabel) {
        throw BuildError("filter 'classify': model '" + cfg.model + "' is not a label model");
    }
    auto backend = std::make_shared<InferenceBackend>(cfg, model);
    pipeline.backends.push_back(backend);
    return std::make_unique<ClassifyStage>(stage_name, std::move(mp), backend);
}

}  // namespace

Pipeline build(const PipelineSpec& spec, const ModelRegistry& registry) {
    if (spec.branches.empty()) {
        throw BuildError("pipeline needs at least one branch");
    }
    if (spec.branches.size() > 1 && !spec.abr) {
        throw BuildError("multiple branches require abr mode");
    }
    if (spec.queue_capacity < 1) {
        throw BuildError("queue capacity must be >= 1");
    }

    Pipeline pipeline;
    pipeline.queue_capacity = spec.queue_capacity;

    if (spec.source.kind == SourceSpec::Kind::kY4m) {
        pipeline.source = std::make_unique<Y4mSource>(spec.source.path);
    } else {
        pipeline.source = std::make_unique<SyntheticSource>(
            spec.source.count, spec.source.width, spec.source.height, spec.source.fps_num,
            spec.source.fps_den, spec.source.latency_ms);
    }

    bool multi_branch = spec.branches.size() > 1;
    for (size_t b = 0; b < spec.branches.size(); ++b) {
        Pipeline::Branch branch;
        std::vector<std::string> used_names;
        std::string prefix = multi_branch ? "b" + std::to_string(b) + ":" : "";
        PixelFormat upstream_format = PixelFormat::kI420;  // both sources emit I420
        std::string upstream_name = "source";

        for (const FilterNode& node : spec.branches[b]) {
            std::string stage_name = prefix + unique_stage_name(used_names, node.name);
            if (node.name == "format") {
                PixelFormat target = PixelFormat::kBGR24;
                if (const FilterOption* to = node.find("to")) {
                    if (to->value == "bgr24") {
                        target = PixelFormat::kBGR24;
                    } else {
                        throw BuildError("filter 'format': unsupported conversion to '" +
                                         to->value + "' (only bgr24)");
                    }
                }
                int w = parse_int_option(node, "w", 0);
                int h = parse_int_option(node, "h", 0);
                auto stage = std::make_unique<FormatScaleStage>(target, w, h);
                stage->set_name(stage_name);
                branch.stages.push_back(std::move(stage));
                upstream_format = target;
            } else {  // detect | classify (parse_chain admits nothing else)
                if (upstream_format != PixelFormat::kBGR24) {
                    throw BuildError("filter '" + node.name + "' requires bgr24 input but '" +
                                     upstream_name + "' delivers " +
                                     pixel_format_name(upstream_format) +
                                     "; insert a format filter");
                }
                branch.stages.push_back(build_ai_stage(node, registry, stage_name, pipeline));
            }
            upstream_name = stage_name;
        }

        if (spec.publish.kind != PublishSpec::Kind::kNone) {
            // Each branch publishes its own byte stream so outputs stay
            // deterministic; file destinations get a .bN suffix.
            std::unique_ptr<PublisherStage> publisher;
            if (spec.publish.kind == PublishSpec::Kind::kFile) {
                std::string path = spec.publish.path;
                if (multi_branch) {
                    path += ".b" + std::to_string(b);
                }
                publisher = PublisherStage::to_file(path, spec.publish.format);
            } else {
                publisher = PublisherStage::to_broker(spec.publish.host, spec.publish.port,
                                                      spec.publish.topic);
            }
            publisher->set_name(prefix + "publish");
            branch.stages.push_back(std::move(publisher));
        }

        auto sink = std::make_unique<NullSink>();
        sink->set_name(prefix + "sink");
        branch.sink = sink.get();
        branch.stages.push_back(std::move(sink));
        pipeline.branches.push_back(std::move(branch));
    }
    return pipeline;
}

// ---------------------------------------------------------------------------
// Shared run machinery

namespace {

class InFlightGauge {
public:
    void add(int64_t n) {
        int64_t now = current_.fetch_add(n) + n;
        int64_t peak = peak_.load();
        while (now > peak && !peak_.compare_exchange_weak(peak, now)) {
        }
    }
    void remove() { current_.fetch_sub(1); }
    int64_t peak() const { return peak_.load(); }

private:
    std::atomic<int64_t> current_{0};
    std::atomic<int64_t> peak_{0};
};

RunReport assemble_report(Pipeline& pipeline, const std::string& error, int64_t peak_in_flight) {
    RawRunData raw;
    raw.error = error;
    raw.partial = !error.empty();
    raw.frames = pipeline.source->counters().frames_out;
    raw.peak_in_flight = peak_in_flight;

    int64_t first_ns = pipeline.source->first_emit_ns();
    int64_t last_ns = 0;
    for (const auto& branch : pipeline.branches) {
        last_ns = std::max(last_ns, branch.sink->last_consume_ns());
    }
    raw.wall_ms = (first_ns > 0 && last_ns > first_ns) ? double(last_ns - first_ns) / 1e6 : 0.0;

    raw.stages.push_back(pipeline.source->counters());
    for (const auto& branch : pipeline.branches) {
        for (const auto& stage : branch.stages) {
            raw.stages.push_back(stage->counters());
        }
    }
    for (const auto& backend : pipeline.backends) {
        raw.backends.push_back(backend->stats());
    }
    return finalize_report(raw);
}

void set_serial_inference(Pipeline& pipeline, bool serial) {
    for (auto& branch : pipeline.branches) {
        for (auto& stage : branch.stages) {
            stage->set_serial_inference(serial);
        }
    }
}

// Feeds a frame through branch stages from `from` onward, recursing on emits.
void feed_from(Pipeline::Branch& branch, size_t from, Frame frame, InFlightGauge* gauge) {
    if (from >= branch.stages.size()) {
        return;
    }
    bool is_sink = from + 1 == branch.stages.size();
    branch.stages[from]->feed(std::move(frame), [&](Frame&& out) {
        feed_from(branch, from + 1, std::move(out), gauge);
    });
    if (is_sink && gauge) {
        gauge->remove();
    }
}

void drain_from(Pipeline::Branch& branch, size_t from, InFlightGauge* gauge) {
    for (size_t i = from; i < branch.stages.size(); ++i) {
        branch.stages[i]->drain(
            [&](Frame&& out) { feed_from(branch, i + 1, std::move(out), gauge); });
    }
}

}  // namespace

RunReport run_serial(Pipeline& pipeline) {
    set_serial_inference(pipeline, true);
    InFlightGauge gauge;
    std::string error;
    try {
        while (auto frame = pipeline.source->pull()) {
            gauge.add(static_cast<int64_t>(pipeline.branches.size()));
            for (size_t b = 0; b < pipeline.branches.size(); ++b) {
                // Branches get their own side-data copy; the last takes ownership.
                Frame branch_frame;
                if (b + 1 < pipeline.branches.size()) {
                    branch_frame = *frame;
                } else {
                    branch_frame = std::move(*frame);
                }
                feed_from(pipeline.branches[b], 0, std::move(branch_frame), &gauge);
            }
        }
        for (auto& branch : pipeline.branches) {
            drain_from(branch, 0, &gauge);
        }
    } catch (const std::exception& e) {
        error = e.what();
    }
    return assemble_report(pipeline, error, gauge.peak());
}

// ---------------------------------------------------------------------------
// Parallel executor

namespace {

class FrameQueue {
public:
    explicit FrameQueue(size_t capacity) : capacity_(capacity) {}

    // Returns false if the queue was aborted.
    bool push(Frame frame) {
        std::unique_lock lock(mutex_);
        cv_push_.wait(lock, [this] { return q_.size() < capacity_ || aborted_; });
        if (aborted_) {
            return false;
        }
        q_.push_back(std::move(frame));
        lock.unlock();
        cv_pop_.notify_one();
        return true;
    }

    // nullopt on (closed and empty) or abort.
    std::optional<Frame> pop() {
        std::unique_lock lock(mutex_);
        cv_pop_.wait(lock, [this] { return !q_.empty() || closed_ || aborted_; });
        if (aborted_ || q_.empty()) {
            return std::nullopt;
        }
        Frame frame = std::move(q_.front());
        q_.pop_front();
        lock.unlock();
        cv_push_.notify_one();
        return frame;
    }

    void close() {
        {
            std::lock_guard lock(mutex_);
            closed_ = true;
        }
        cv_pop_.notify_all();
    }

    void abort() {
        {
            std::lock_guard lock(mutex_);
            aborted_ = true;
            q_.clear();
        }
        cv_push_.notify_all();
        cv_pop_.notify_all();
    }

private:
    std::mutex mutex_;
    std::condition_variable cv_push_, cv_pop_;
    std::deque<Frame> q_;
    size_t capacity_;
    bool closed_ = false;
    bool aborted_ = false;
};

struct CancelState {
    std::atomic<bool> cancelled{false};
    std::mutex mutex;
    std::string first_error;

    void fail(const std::string& what) {
        {
            std::lock_guard lock(mutex);
            if (first_error.empty()) {
                first_error = what;
            }
        }
        cancelled.store(true);
    }

    std::string error() {
        std::lock_guard lock(mutex);
        return first_error;
    }
};

struct AbortedRun : std::exception {};

}  // namespace

RunReport run_parallel(Pipeline& pipeline) {
    set_serial_inference(pipeline, false);
    InFlightGauge gauge;
    CancelState cancel;

    // queues[b][i] feeds branch b stage i.
    std::vector<std::vector<std::unique_ptr<FrameQueue>>> queues(pipeline.branches.size());
    for (size_t b = 0; b < pipeline.branches.size(); ++b) {
        for (size_t i = 0; i < pipeline.branches[b].stages.size(); ++i) {
            queues[b].push_back(std::make_unique<FrameQueue>(pipeline.queue_capacity));
        }
    }
    auto abort_all = [&] {
        for (auto& branch_queues : queues) {
            for (auto& q : branch_queues) {
                q->abort();
            }
        }
    };

    std::vector<std::thread> threads;

    threads.emplace_back([&] {  // source thread
        try {
            while (auto frame = pipeline.source->pull()) {
                gauge.add(static_cast<int64_t>(pipeline.branches.size()));
                for (size_t b = 0; b < pipeline.branches.size(); ++b) {
                    Frame branch_frame;
                    if (b + 1 < pipeline.branches.size()) {
                        branch_frame = *frame;
                    } else {
                        branch_frame = std::move(*frame);
                    }
                    if (!queues[b][0]->push(std::move(branch_frame))) {
                        return;  // aborted
                    }
                }
            }
            for (auto& branch_queues : queues) {
                branch_queues[0]->close();
            }
        } catch (const std::exception& e) {
            cancel.fail(e.what());
            abort_all();
        }
    });

    for (size_t b = 0; b < pipeline.branches.size(); ++b) {
        for (size_t i = 0; i < pipeline.branches[b].stages.size(); ++i) {
            threads.emplace_back([&, b, i] {
                FilterStage& stage = *pipeline.branches[b].stages[i];
                FrameQueue& in = *queues[b][i];
                FrameQueue* out = i + 1 < queues[b].size() ? queues[b][i + 1].get() : nullptr;
                bool is_sink = out == nullptr;
                FrameSink emit = [&](Frame&& frame) {
                    if (!out->push(std::move(frame))) {
                        throw AbortedRun{};
                    }
                };
                FrameSink discard = [&](Frame&&) {};
                try {
                    while (auto frame = in.pop()) {
                        stage.feed(std::move(*frame), is_sink ? discard : emit);
                        if (is_sink) {
                            gauge.remove();
                        }
                    }
                    if (cancel.cancelled.load()) {
                        return;
                    }
                    stage.drain(is_sink ? discard : emit);
                    if (out) {
                        out->close();
                    }
                } catch (const AbortedRun&) {
                    // another stage failed; just unwind
                } catch (const std::exception& e) {
                    cancel.fail(e.what());
                    abort_all();
                }
            });
        }
    }

    for (auto& t : threads) {
        t.join();
    }
    return assemble_report(pipeline, cancel.error(), gauge.peak());
}

}  // namespace vapipe
