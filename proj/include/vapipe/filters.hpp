#pragma once

#include <atomic>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>

#include "vapipe/frame.hpp"
#include "vapipe/inference.hpp"
#include "vapipe/model_proc.hpp"

namespace vapipe {

/// Raised when a stage fails at run time; the message names the stage and,
/// where known, the frame involved.
class PipelineError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using FrameSink = std::function<void(Frame&&)>;

struct StageCounters {
    std::string name;
    int64_t frames_in = 0;
    int64_t frames_out = 0;
    double busy_ms = 0.0;
};

/// One pipeline stage: pulls frames in via feed(), emits zero or more
/// downstream. Frames must leave every stage in strictly increasing seq
/// order and nothing may be dropped silently; feed() enforces the ordering
/// and the counters expose drops.
///
/// A stage instance is driven by one thread at a time; the executor owns
/// all threading.
class FilterStage {
public:
    explicit FilterStage(std::string name) : name_(std::move(name)) {}
    virtual ~FilterStage() = default;

    FilterStage(const FilterStage&) = delete;
    FilterStage& operator=(const FilterStage&) = delete;

    void feed(Frame frame, const FrameSink& emit);
    void drain(const FrameSink& emit);

    /// Executor hook: true pins in-flight inference to 1 (strictly serial
    /// baseline), false restores the configured nireq. No-op for stages
    /// without a backend.
    virtual void set_serial_inference(bool) {}

    const std::string& name() const { return name_; }
    void set_name(std::string name) { name_ = std::move(name); }
    StageCounters counters() const;

protected:
    virtual void process(Frame frame, const FrameSink& emit) = 0;
    virtual void finish(const FrameSink&) {}

private:
    FrameSink checked_sink(const FrameSink& emit);

    std::string name_;
    std::atomic<int64_t> frames_in_{0};
    std::atomic<int64_t> frames_out_{0};
    std::atomic<int64_t> busy_ns_{0};
    int64_t last_emitted_seq_ = -1;
};

/// Produces the input frame stream. next() returns frames with strictly
/// increasing seq and nullopt at end-of-stream.
class FrameSource {
public:
    explicit FrameSource(std::string name) : name_(std::move(name)) {}
    virtual ~FrameSource() = default;

    FrameSource(const FrameSource&) = delete;
    FrameSource& operator=(const FrameSource&) = delete;

    std::optional<Frame> pull();

    const std::string& name() const { return name_; }
    StageCounters counters() const;
    /// Steady-clock time of the first emitted frame, ns; 0 if none yet.
    int64_t first_emit_ns() const { return first_emit_ns_.load(); }

protected:
    virtual std::optional<Frame> next() = 0;

private:
    std::string name_;
    std::atomic<int64_t> frames_out_{0};
    std::atomic<int64_t> busy_ns_{0};
    std::atomic<int64_t> first_emit_ns_{0};
};

/// Reads a YUV4MPEG2 stream (C420 subset). pts comes from the header rate.
class Y4mSource : public FrameSource {
public:
    explicit Y4mSource(const std::string& path);
    ~Y4mSource() override;

    int width() const { return width_; }
    int height() const { return height_; }
    int fps_num() const { return fps_num_; }
    int fps_den() const { return fps_den_; }

protected:
    std::optional<Frame> next() override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    int width_ = 0, height_ = 0, fps_num_ = 0, fps_den_ = 0;
    int64_t next_seq_ = 0;
};

/// Emits deterministic I420 frames; pixel bytes are a hash of
/// (seq, plane, offset). An optional per-frame latency models decode cost.
class SyntheticSource : public FrameSource {
public:
    SyntheticSource(int64_t count, int width, int height, int fps_num, int fps_den,
                    double latency_ms = 0.0);

protected:
    std::optional<Frame> next() override;

private:
    int64_t count_;
    int width_, height_;
    int fps_num_, fps_den_;
    double latency_ms_;
    int64_t next_seq_ = 0;
};

/// Color-space conversion and/or scaling to BGR24. dst_w/dst_h of 0 keep
/// the source dimensions. Already-conforming frames pass through untouched.
class FormatScaleStage : public FilterStage {
public:
    FormatScaleStage(PixelFormat to, int dst_w, int dst_h);

protected:
    void process(Frame frame, const FrameSink& emit) override;

private:
    int dst_w_, dst_h_;
};

/// Object detection: frames are scaled and packed for the model, inference
/// runs through the backend with up to nireq frames in flight, results are
/// attached as side data and frames re-emitted strictly in seq order.
class DetectStage : public FilterStage {
public:
    DetectStage(std::string name, ModelProc mp, std::shared_ptr<InferenceBackend> backend);

    void set_serial_inference(bool serial) override;

protected:
    void process(Frame frame, const FrameSink& emit) override;
    void finish(const FrameSink& emit) override;

private:
    struct Pending {
        Frame frame;
        bool ready = false;
    };
    void handle_completion(const Completion& completion);
    void collect_one();
    void emit_ready(const FrameSink& emit);

    ModelProc mp_;
    std::shared_ptr<InferenceBackend> backend_;
    int inflight_limit_;
    int outstanding_ = 0;
    std::deque<Pending> queue_;
    std::unordered_map<uint64_t, Pending*> by_ticket_;
};

/// Per-object classification: every ROI of a frame is cropped, scaled,
/// packed and inferred; the decoded label joins that ROI's attributes. A
/// frame is emitted only once all of its objects completed, in seq order.
/// Frames without objects pass through untouched.
class ClassifyStage : public FilterStage {
public:
    ClassifyStage(std::string name, ModelProc mp, std::shared_ptr<InferenceBackend> backend);

    void set_serial_inference(bool serial) override;

protected:
    void process(Frame frame, const FrameSink& emit) override;
    void finish(const FrameSink& emit) override;

private:
    struct Pending {
        Frame frame;
        int outstanding_rois = 0;
    };
    void handle_completion(const Completion& completion);
    void collect_one();
    void emit_ready(const FrameSink& emit);

    ModelProc mp_;
    std::shared_ptr<InferenceBackend> backend_;
    int inflight_limit_;
    int outstanding_ = 0;
    std::deque<Pending> queue_;
    struct RoiRef {
        Pending* pending;
        size_t roi_index;
    };
    std::unordered_map<uint64_t, RoiRef> by_ticket_;
};

/// Terminal stage: counts and discards frames.
class NullSink : public FilterStage {
public:
    NullSink() : FilterStage("sink") {}

    /// Steady-clock time of the last consumed frame, ns; 0 if none.
    int64_t last_consume_ns() const { return last_consume_ns_.load(); }

protected:
    void process(Frame frame, const FrameSink& emit) override;

private:
    std::atomic<int64_t> last_consume_ns_{0};
};

int64_t steady_now_ns();

}  // namespace vapipe
