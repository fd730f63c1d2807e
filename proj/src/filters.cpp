#include "vapipe/filters.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

#include "vapipe/imageproc.hpp"

namespace vapipe {

int64_t steady_now_ns() {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

namespace {

int64_t pts_from_seq(int64_t seq, int fps_num, int fps_den) {
    return std::llround(double(seq) * 1000.0 * fps_den / fps_num);
}

uint64_t mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

class ScopedBusyTimer {
public:
    explicit ScopedBusyTimer(std::atomic<int64_t>& sink) : sink_(sink), start_(steady_now_ns()) {}
    ~ScopedBusyTimer() { sink_ += steady_now_ns() - start_; }

private:
    std::atomic<int64_t>& sink_;
    int64_t start_;
};

}  // namespace

// ---------------------------------------------------------------------------
// FilterStage

FrameSink FilterStage::checked_sink(const FrameSink& emit) {
    return [this, &emit](Frame&& frame) {
        if (frame.seq <= last_emitted_seq_) {
            std::ostringstream os;
            os << "stage '" << name_ << "' emitted seq " << frame.seq
               << " after seq " << last_emitted_seq_;
            throw PipelineError(os.str());
        }
        last_emitted_seq_ = frame.seq;
        frames_out_ += 1;
        emit(std::move(frame));
    };
}

void FilterStage::feed(Frame frame, const FrameSink& emit) {
    frames_in_ += 1;
    ScopedBusyTimer timer(busy_ns_);
    process(std::move(frame), checked_sink(emit));
}

void FilterStage::drain(const FrameSink& emit) {
    ScopedBusyTimer timer(busy_ns_);
    finish(checked_sink(emit));
}

StageCounters FilterStage::counters() const {
    return StageCounters{name_, frames_in_.load(), frames_out_.load(),
                         double(busy_ns_.load()) / 1e6};
}

// ---------------------------------------------------------------------------
// FrameSource

std::optional<Frame> FrameSource::pull() {
    int64_t start = steady_now_ns();
    auto frame = next();
    busy_ns_ += steady_now_ns() - start;
    if (frame) {
        frames_out_ += 1;
        int64_t expected = 0;
        first_emit_ns_.compare_exchange_strong(expected, steady_now_ns());
    }
    return frame;
}

StageCounters FrameSource::counters() const {
    return StageCounters{name_, 0, frames_out_.load(), double(busy_ns_.load()) / 1e6};
}

// ---------------------------------------------------------------------------
// Y4mSource

struct Y4mSource::Impl {
    std::ifstream file;
    std::string path;
};

namespace {

[[noreturn]] void y4m_fail(const std::string& path, const std::string& what) {
    throw PipelineError("y4m '" + path + "': " + what);
}

int y4m_int(const std::string& path, const std::string& token) {
    const std::string val = token.substr(1);
    if (val.empty() || val.find_first_not_of("0123456789") != std::string::npos) {
        y4m_fail(path, "bad header token '" + token + "'");
    }
    return std::atoi(val.c_str());
}

}  // namespace

Y4mSource::Y4mSource(const std::string& path)
    : FrameSource("source"), impl_(std::make_unique<Impl>()) {
    impl_->path = path;
    impl_->file.open(path, std::ios::binary);
    if (!impl_->file) {
        y4m_fail(path, "cannot open file");
    }
    std::string header;
    if (!std::getline(impl_->file, header)) {
        y4m_fail(path, "missing header line");
    }
    std::istringstream hs(header);
    std::string magic;
    hs >> magic;
    if (magic != "YUV4MPEG2") {
        y4m_fail(path, "bad signature '" + magic + "'");
    }
    std::string token;
    while (hs >> token) {
        switch (token[0]) {
        case 'W':
            width_ = y4m_int(path, token);
            break;
        case 'H':
            height_ = y4m_int(path, token);
            break;
        case 'F': {
            size_t colon = token.find(':');
            if (colon == std::string::npos || colon < 2 || colon + 1 >= token.size()) {
                y4m_fail(path, "bad frame rate token '" + token + "'");
            }
            fps_num_ = std::atoi(token.substr(1, colon - 1).c_str());
            fps_den_ = std::atoi(token.substr(colon + 1).c_str());
            if (fps_num_ <= 0 || fps_den_ <= 0) {
                y4m_fail(path, "bad frame rate token '" + token + "'");
            }
            break;
        }
        case 'C':
            if (token != "C420") {
                y4m_fail(path, "unsupported colorspace token '" + token + "'");
            }
            break;
        case 'I':
        case 'A':
        case 'X':
            break;  // interlacing, aspect and extensions are ignored
        default:
            y4m_fail(path, "unknown header token '" + token + "'");
        }
    }
    if (width_ <= 0 || height_ <= 0) {
        y4m_fail(path, "missing W or H token");
    }
    if (width_ % 2 != 0 || height_ % 2 != 0) {
        std::ostringstream os;
        os << "odd dimensions " << width_ << "x" << height_ << " invalid for C420";
        y4m_fail(path, os.str());
    }
    if (fps_num_ <= 0) {
        y4m_fail(path, "missing F token");
    }
}

Y4mSource::~Y4mSource() = default;

std::optional<Frame> Y4mSource::next() {
    std::string marker;
    if (!std::getline(impl_->file, marker)) {
        return std::nullopt;  // EOF
    }
    if (marker.rfind("FRAME", 0) != 0) {
        y4m_fail(impl_->path, "expected FRAME marker before frame " +
                                  std::to_string(next_seq_) + ", got '" + marker + "'");
    }
    Frame frame;
    frame.seq = next_seq_;
    frame.pts_ms = pts_from_seq(next_seq_, fps_num_, fps_den_);
    frame.width = width_;
    frame.height = height_;
    frame.format = PixelFormat::kI420;
    for (int p = 0; p < plane_count(PixelFormat::kI420); ++p) {
        auto plane = std::make_shared<Plane>();
        plane->stride = plane_row_bytes(PixelFormat::kI420, width_, p);
        plane->bytes.resize(plane->stride *
                            static_cast<size_t>(plane_height(PixelFormat::kI420, height_, p)));
        impl_->file.read(reinterpret_cast<char*>(plane->bytes.data()),
                         static_cast<std::streamsize>(plane->bytes.size()));
        if (impl_->file.gcount() != static_cast<std::streamsize>(plane->bytes.size())) {
            y4m_fail(impl_->path,
                     "truncated payload in frame " + std::to_string(next_seq_));
        }
        frame.planes.push_back(std::move(plane));
    }
    next_seq_ += 1;
    return frame;
}

// ---------------------------------------------------------------------------
// SyntheticSource

SyntheticSource::SyntheticSource(int64_t count, int width, int height, int fps_num,
                                 int fps_den, double latency_ms)
    : FrameSource("source"),
      count_(count),
      width_(width),
      height_(height),
      fps_num_(fps_num),
      fps_den_(fps_den),
      latency_ms_(latency_ms) {
    if (count < 0) {
        throw std::invalid_argument("synthetic source: count must be >= 0");
    }
    if (fps_num <= 0 || fps_den <= 0) {
        throw std::invalid_argument("synthetic source: invalid frame rate");
    }
    frame_byte_size(width, height, PixelFormat::kI420);  // validates dims
}

std::optional<Frame> SyntheticSource::next() {
    if (next_seq_ >= count_) {
        return std::nullopt;
    }
    if (latency_ms_ > 0) {
        std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(latency_ms_));
    }
    Frame frame;
    frame.seq = next_seq_;
    frame.pts_ms = pts_from_seq(next_seq_, fps_num_, fps_den_);
    frame.width = width_;
    frame.height = height_;
    frame.format = PixelFormat::kI420;
    uint64_t seq_key = mix64(static_cast<uint64_t>(next_seq_) + 1);
    for (int p = 0; p < plane_count(PixelFormat::kI420); ++p) {
        auto plane = std::make_shared<Plane>();
        plane->stride = plane_row_bytes(PixelFormat::kI420, width_, p);
        plane->bytes.resize(plane->stride *
                            static_cast<size_t>(plane_height(PixelFormat::kI420, height_, p)));
        uint64_t plane_key = seq_key ^ mix64(static_cast<uint64_t>(p) + 1);
        for (size_t off = 0; off < plane->bytes.size(); ++off) {
            plane->bytes[off] = static_cast<uint8_t>(mix64(plane_key + off));
        }
        frame.planes.push_back(std::move(plane));
    }
    next_seq_ += 1;
    return frame;
}

// ---------------------------------------------------------------------------
// FormatScaleStage

FormatScaleStage::FormatScaleStage(PixelFormat to, int dst_w, int dst_h)
    : FilterStage("format"), dst_w_(dst_w), dst_h_(dst_h) {
    if (to != PixelFormat::kBGR24) {
        throw std::invalid_argument(std::string("format filter: unsupported target format '") +
                                    pixel_format_name(to) + "' (only bgr24)");
    }
    if (dst_w < 0 || dst_h < 0) {
        throw std::invalid_argument("format filter: negative target dimensions");
    }
}

void FormatScaleStage::process(Frame frame, const FrameSink& emit) {
    if (frame.format == PixelFormat::kI420) {
        frame = csc_i420_to_bgr24(frame);
    } else if (frame.format != PixelFormat::kBGR24) {
        throw PipelineError(std::string("format filter: cannot convert from '") +
                            pixel_format_name(frame.format) + "' at frame " +
                            std::to_string(frame.seq));
    }
    int w = dst_w_ > 0 ? dst_w_ : frame.width;
    int h = dst_h_ > 0 ? dst_h_ : frame.height;
    if (w != frame.width || h != frame.height) {
        frame = resize_bilinear(frame, w, h);
    }
    emit(std::move(frame));
}

// ---------------------------------------------------------------------------
// DetectStage

namespace {

// roi_index used for whole-frame (detect) requests.
constexpr int32_t kFrameLevelRoi = -1;

void require_bgr24(const Frame& frame, const std::string& stage) {
    if (frame.format != PixelFormat::kBGR24) {
        throw PipelineError("stage '" + stage + "' requires bgr24 frames, got '" +
                            pixel_format_name(frame.format) + "' at frame " +
                            std::to_string(frame.seq));
    }
}

}  // namespace

DetectStage::DetectStage(std::string name, ModelProc mp,
                         std::shared_ptr<InferenceBackend> backend)
    : FilterStage(std::move(name)), mp_(std::move(mp)), backend_(std::move(backend)) {
    inflight_limit_ = backend_->config().nireq;
    backend_->set_stage_label(this->name());
}

void DetectStage::set_serial_inference(bool serial) {
    inflight_limit_ = serial ? 1 : backend_->config().nireq;
}

void DetectStage::handle_completion(const Completion& completion) {
    auto it = by_ticket_.find(completion.ticket);
    if (it == by_ticket_.end()) {
        throw PipelineError("stage '" + name() + "': unknown completion ticket");
    }
    Pending* pending = it->second;
    by_ticket_.erase(it);
    outstanding_ -= 1;
    try {
        for (auto& roi : decode_detection_output(completion.output, mp_)) {
            attach_roi(pending->frame, std::move(roi));
        }
    } catch (const std::exception& e) {
        throw PipelineError("stage '" + name() + "': frame " +
                            std::to_string(pending->frame.seq) + ": " + e.what());
    }
    pending->ready = true;
}

void DetectStage::collect_one() {
    auto completion = backend_->collect_next();
    if (!completion) {
        throw PipelineError("stage '" + name() + "': backend closed while frames in flight");
    }
    handle_completion(*completion);
}

void DetectStage::emit_ready(const FrameSink& emit) {
    while (!queue_.empty() && queue_.front().ready) {
        Frame frame = std::move(queue_.front().frame);
        queue_.pop_front();
        emit(std::move(frame));
    }
}

void DetectStage::process(Frame frame, const FrameSink& emit) {
    require_bgr24(frame, name());
    Frame scaled = (frame.width == mp_.input.width && frame.height == mp_.input.height)
                       ? frame
                       : resize_bilinear(frame, mp_.input.width, mp_.input.height);
    Tensor input = pack_bgrp_tensor(scaled, mp_.input.mean, mp_.input.scale);

    // Reorder buffer capacity equals the in-flight limit; when a slow frame
    // blocks the front, later completions wait here instead of accumulating.
    while (outstanding_ >= inflight_limit_ ||
           queue_.size() >= static_cast<size_t>(inflight_limit_)) {
        collect_one();
        emit_ready(emit);
    }
    int64_t seq = frame.seq;
    queue_.push_back(Pending{std::move(frame), false});
    Pending* pending = &queue_.back();
    uint64_t ticket;
    try {
        ticket = backend_->submit(std::move(input), seq, kFrameLevelRoi,
                                  static_cast<uint64_t>(seq));
    } catch (const std::exception& e) {
        throw PipelineError("stage '" + name() + "': frame " + std::to_string(seq) + ": " +
                            e.what());
    }
    by_ticket_.emplace(ticket, pending);
    outstanding_ += 1;

    if (inflight_limit_ == 1) {
        // Strictly serial: the frame completes within this turn, nothing
        // overlaps downstream work.
        while (outstanding_ > 0) {
            collect_one();
        }
    } else {
        while (auto completion = backend_->try_collect()) {
            handle_completion(*completion);
        }
    }
    emit_ready(emit);
}

void DetectStage::finish(const FrameSink& emit) {
    while (!queue_.empty()) {
        if (queue_.front().ready) {
            emit_ready(emit);
        } else {
            collect_one();
        }
    }
}

// ---------------------------------------------------------------------------
// ClassifyStage

ClassifyStage::ClassifyStage(std::string name, ModelProc mp,
                             std::shared_ptr<InferenceBackend> backend)
    : FilterStage(std::move(name)), mp_(std::move(mp)), backend_(std::move(backend)) {
    inflight_limit_ = backend_->config().nireq;
    backend_->set_stage_label(this->name());
}

void ClassifyStage::set_serial_inference(bool serial) {
    inflight_limit_ = serial ? 1 : backend_->config().nireq;
}

void ClassifyStage::handle_completion(const Completion& completion) {
    auto it = by_ticket_.find(completion.ticket);
    if (it == by_ticket_.end()) {
        throw PipelineError("stage '" + name() + "': unknown completion ticket");
    }
    RoiRef ref = it->second;
    by_ticket_.erase(it);
    outstanding_ -= 1;
    try {
        ref.pending->frame.side_data[ref.roi_index].attributes.push_back(
            decode_label(completion.output, mp_));
    } catch (const std::exception& e) {
        throw PipelineError("stage '" + name() + "': frame " +
                            std::to_string(ref.pending->frame.seq) + " roi " +
                            std::to_string(ref.roi_index) + ": " + e.what());
    }
    ref.pending->outstanding_rois -= 1;
}

void ClassifyStage::collect_one() {
    auto completion = backend_->collect_next();
    if (!completion) {
        throw PipelineError("stage '" + name() + "': backend closed while objects in flight");
    }
    handle_completion(*completion);
}

void ClassifyStage::emit_ready(const FrameSink& emit) {
    while (!queue_.empty() && queue_.front().outstanding_rois == 0) {
        Frame frame = std::move(queue_.front().frame);
        queue_.pop_front();
        emit(std::move(frame));
    }
}

void ClassifyStage::process(Frame frame, const FrameSink& emit) {
    require_bgr24(frame, name());

    // Bound the reorder buffer: pass-through frames queue up behind an
    // incomplete front, so completions are forced before admitting more.
    while (queue_.size() >= static_cast<size_t>(inflight_limit_)) {
        collect_one();
        emit_ready(emit);
    }

    int64_t seq = frame.seq;
    size_t roi_count = frame.side_data.size();
    queue_.push_back(Pending{std::move(frame), static_cast<int>(roi_count)});
    Pending* pending = &queue_.back();

    for (size_t i = 0; i < roi_count; ++i) {
        PixelRect rect = bbox_to_rect(pending->frame.side_data[i].bbox,
                                      pending->frame.width, pending->frame.height);
        Frame patch = crop(pending->frame, rect);
        if (patch.width != mp_.input.width || patch.height != mp_.input.height) {
            patch = resize_bilinear(patch, mp_.input.width, mp_.input.height);
        }
        Tensor input = pack_bgrp_tensor(patch, mp_.input.mean, mp_.input.scale);

        while (outstanding_ >= inflight_limit_) {
            collect_one();
        }
        uint64_t ticket;
        try {
            ticket = backend_->submit(std::move(input), seq, static_cast<int32_t>(i),
                                      static_cast<uint64_t>(i));
        } catch (const std::exception& e) {
            throw PipelineError("stage '" + name() + "': frame " + std::to_string(seq) +
                                " roi " + std::to_string(i) + ": " + e.what());
        }
        by_ticket_.emplace(ticket, RoiRef{pending, i});
        outstanding_ += 1;
    }

    if (inflight_limit_ == 1) {
        while (outstanding_ > 0) {
            collect_one();
        }
    } else {
        while (auto completion = backend_->try_collect()) {
            handle_completion(*completion);
        }
    }
    emit_ready(emit);
}

void ClassifyStage::finish(const FrameSink& emit) {
    while (!queue_.empty()) {
        if (queue_.front().outstanding_rois == 0) {
            emit_ready(emit);
        } else {
            collect_one();
        }
    }
}

// ---------------------------------------------------------------------------
// NullSink

void NullSink::process(Frame frame, const FrameSink&) {
    (void)frame;  // pixel data discarded
    last_consume_ns_.store(steady_now_ns());
}

}  // namespace vapipe
