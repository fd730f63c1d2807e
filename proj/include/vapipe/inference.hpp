#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "vapipe/frame.hpp"

namespace vapipe {

struct InferenceConfig {
    std::string model;
    std::string device = "CPU";
    int nireq = 1;
    std::vector<std::pair<std::string, std::string>> configs;
};

enum class SyntheticOutputKind { kDetectionOutput, kLabel };

/// Deterministic stand-in for a real inference engine. Output values are a
/// pure function of (model name, frame seq, roi index, seed_salt); latency
/// is simulated by sleeping.
struct SyntheticModelSpec {
    std::string name;
    SyntheticOutputKind kind = SyntheticOutputKind::kLabel;
    std::vector<int64_t> dims;
    double latency_lo_ms = 0.0;
    double latency_hi_ms = 0.0;  // == lo for a fixed latency
    uint64_t seed_salt = 0;
    int label_count = 4;  // modulus for synthetic detection label ids
};

void validate_synthetic_spec(const SyntheticModelSpec& spec);

/// Model spec file: a JSON object keyed by model name, each entry holding
/// kind, dims, latency_ms (number or [lo,hi]), seed_salt and optionally
/// label_count.
std::map<std::string, SyntheticModelSpec> load_synthetic_models(const std::string& path);
std::map<std::string, SyntheticModelSpec> parse_synthetic_models(const std::string& text);

/// Deterministic output for one request. Sleeps the simulated latency.
/// The input tensor is accepted for interface parity but does not alter
/// the output values.
Tensor synthetic_infer(const SyntheticModelSpec& spec, const Tensor& input,
                       int64_t frame_seq, int32_t roi_index);

double synthetic_latency_ms(const SyntheticModelSpec& spec, int64_t frame_seq,
                            int32_t roi_index);

struct Completion {
    uint64_t ticket = 0;
    uint64_t tag = 0;
    Tensor output;
};

struct BackendStats {
    std::string stage;
    std::string model;
    std::string device;
    int nireq = 1;
    std::vector<std::pair<std::string, std::string>> configs;
    int64_t submissions = 0;
    double busy_request_ms = 0.0;
    int max_busy_observed = 0;
};

/// Async request pool bounded by nireq: submit blocks while every request
/// slot is occupied, results are collected in completion order. Safe to
/// call submit and collect_next concurrently from different threads.
class InferenceBackend {
public:
    InferenceBackend(InferenceConfig cfg, SyntheticModelSpec spec);
    ~InferenceBackend();

    InferenceBackend(const InferenceBackend&) = delete;
    InferenceBackend& operator=(const InferenceBackend&) = delete;

    /// Blocks until a request slot is idle, then starts the work.
    /// Returns the ticket to match the completion. Throws after close().
    uint64_t submit(Tensor input, int64_t frame_seq, int32_t roi_index, uint64_t tag);

    /// Blocks for the next completion in completion order. Returns nullopt
    /// once the backend is closed and fully drained.
    std::optional<Completion> collect_next();

    /// Non-blocking variant of collect_next.
    std::optional<Completion> try_collect();

    /// No further submissions; pending work still completes and can be
    /// collected.
    void close();

    struct StateCounts {
        int idle = 0;
        int busy = 0;
        int done = 0;
    };
    StateCounts state_counts() const;
    int busy_count() const;

    const InferenceConfig& config() const { return cfg_; }
    const SyntheticModelSpec& model_spec() const { return spec_; }
    void set_stage_label(std::string label);
    BackendStats stats() const;

private:
    struct Job {
        uint64_t ticket;
        uint64_t tag;
        Tensor input;
        int64_t frame_seq;
        int32_t roi_index;
        std::chrono::steady_clock::time_point submitted_at;
    };

    void worker_loop();

    InferenceConfig cfg_;
    SyntheticModelSpec spec_;
    std::string stage_label_;

    mutable std::mutex mutex_;
    std::condition_variable cv_idle_;
    std::condition_variable cv_work_;
    std::condition_variable cv_done_;
    std::deque<Job> jobs_;
    std::deque<Completion> completions_;
    int idle_ = 0;
    int busy_ = 0;
    int done_ = 0;
    int max_busy_ = 0;
    bool closed_ = false;
    uint64_t next_ticket_ = 1;
    int64_t submissions_ = 0;
    double busy_request_ms_ = 0.0;
    std::vector<std::thread> workers_;
};

}  // namespace vapipe
