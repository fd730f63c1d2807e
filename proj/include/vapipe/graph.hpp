#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vapipe/filters.hpp"
#include "vapipe/inference.hpp"
#include "vapipe/metrics.hpp"
#include "vapipe/model_proc.hpp"
#include "vapipe/publish.hpp"

namespace vapipe {

/// Chain-string parse failure; offset is the byte position in the input.
class ChainParseError : public std::runtime_error {
public:
    ChainParseError(const std::string& what, size_t offset)
        : std::runtime_error(what + " at byte " + std::to_string(offset)), offset_(offset) {}
    size_t offset() const { return offset_; }

private:
    size_t offset_;
};

struct FilterOption {
    std::string key;
    std::string value;      // escapes resolved
    std::string raw_value;  // escapes intact, for nested grammars (configs)
};

struct FilterNode {
    std::string name;  // detect | classify | format
    std::vector<FilterOption> options;
    size_t offset = 0;  // byte position of the filter in the chain string

    const FilterOption* find(const std::string& key) const;
};

/// Parses "name=k=v:k=v,name2=..." into filter nodes. '\' escapes the next
/// character; the configs option keeps its raw value so its '|'-separated
/// pairs can be split later.
std::vector<FilterNode> parse_chain(const std::string& text);

/// Splits a raw configs value on unescaped '|' into key=value pairs.
std::vector<std::pair<std::string, std::string>> parse_configs_value(const std::string& raw);

struct SourceSpec {
    enum class Kind { kY4m, kSynth };
    Kind kind = Kind::kSynth;
    std::string path;  // y4m
    int64_t count = 0;
    int width = 0;
    int height = 0;
    int fps_num = 30;
    int fps_den = 1;
    double latency_ms = 0.0;  // synthetic per-frame cost
};

struct PublishSpec {
    enum class Kind { kNone, kFile, kBroker };
    Kind kind = Kind::kNone;
    std::string path;
    PublishFormat format = PublishFormat::kJson;
    std::string host;
    int port = 0;
    std::string topic = "analytics";
};

enum class ExecMode { kSerial, kParallel };

struct PipelineSpec {
    SourceSpec source;
    std::vector<std::vector<FilterNode>> branches{{}};
    PublishSpec publish;
    ExecMode mode = ExecMode::kSerial;
    bool abr = false;
    size_t queue_capacity = 4;
};

/// Model and model_proc lookup used by build(). model_procs holds in-memory
/// entries; names not found there fall back to
/// "<model_proc_dir>/<model>.json".
struct ModelRegistry {
    std::map<std::string, SyntheticModelSpec> models;
    std::map<std::string, ModelProc> model_procs;
    std::string model_proc_dir;

    const SyntheticModelSpec& resolve_model(const std::string& name) const;
    ModelProc resolve_model_proc(const std::string& model, const std::string& override_path) const;
};

/// A built, single-use pipeline: one source feeding one stage chain per
/// branch (each chain ends in a sink, with an optional publisher before
/// it). Backends are owned here so the run report can read their stats.
struct Pipeline {
    std::unique_ptr<FrameSource> source;
    struct Branch {
        std::vector<std::unique_ptr<FilterStage>> stages;
        NullSink* sink = nullptr;  // borrowed from stages.back()
    };
    std::vector<Branch> branches;
    std::vector<std::shared_ptr<InferenceBackend>> backends;
    size_t queue_capacity = 4;
};

class BuildError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Wires the pipeline: validates filter names and options, resolves models
/// and model_proc files, checks format compatibility between adjacent
/// stages (detect/classify require a BGR24 upstream; nothing is inserted
/// implicitly).
Pipeline build(const PipelineSpec& spec, const ModelRegistry& registry);

/// Single-thread executor: one frame at a time through every stage of
/// every branch, AI stages pinned to one in-flight request.
RunReport run_serial(Pipeline& pipeline);

/// One thread per stage, bounded hand-off queues, full nireq per AI stage.
/// A stage failure cancels the whole run; the first error wins.
RunReport run_parallel(Pipeline& pipeline);

}  // namespace vapipe
