#include "vapipe/inference.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace vapipe {

namespace {

uint64_t fnv1a64(const void* data, size_t len, uint64_t hash = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const uint8_t*>(data);
    for (size_t i = 0; i < len; ++i) {
        hash ^= p[i];
        hash *= 0x100000001b3ull;
    }
    return hash;
}

uint64_t request_seed(const SyntheticModelSpec& spec, int64_t frame_seq, int32_t roi_index) {
    uint64_t h = fnv1a64(spec.name.data(), spec.name.size());
    uint64_t seq = static_cast<uint64_t>(frame_seq);
    h = fnv1a64(&seq, sizeof(seq), h);
    uint32_t roi = static_cast<uint32_t>(roi_index);
    h = fnv1a64(&roi, sizeof(roi), h);
    h = fnv1a64(&spec.seed_salt, sizeof(spec.seed_salt), h);
    return h;
}

// Stateless counter-based generator: one mixed 64-bit word per counter value.
uint64_t mix_at(uint64_t seed, uint64_t counter) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ull * (counter + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

double uniform_at(uint64_t seed, uint64_t counter) {
    return static_cast<double>(mix_at(seed, counter) >> 11) * 0x1.0p-53;
}

constexpr uint64_t kLatencyCounter = ~0ull;

}  // namespace

void validate_synthetic_spec(const SyntheticModelSpec& spec) {
    if (spec.name.empty()) {
        throw std::invalid_argument("synthetic model: empty name");
    }
    if (spec.dims.empty()) {
        throw std::invalid_argument("synthetic model '" + spec.name + "': missing dims");
    }
    for (int64_t d : spec.dims) {
        if (d <= 0) {
            throw std::invalid_argument("synthetic model '" + spec.name +
                                        "': non-positive dim");
        }
    }
    if (spec.latency_lo_ms < 0 || spec.latency_hi_ms < spec.latency_lo_ms) {
        throw std::invalid_argument("synthetic model '" + spec.name +
                                    "': invalid latency range");
    }
    if (spec.kind == SyntheticOutputKind::kDetectionOutput) {
        bool shape_ok = (spec.dims.size() == 2 && spec.dims[1] == 7) ||
                        (spec.dims.size() == 4 && spec.dims[0] == 1 && spec.dims[1] == 1 &&
                         spec.dims[3] == 7);
        if (!shape_ok) {
            throw std::invalid_argument("synthetic model '" + spec.name +
                                        "': detection dims must be [N,7] or [1,1,N,7]");
        }
        if (spec.label_count < 1) {
            throw std::invalid_argument("synthetic model '" + spec.name +
                                        "': label_count must be >= 1");
        }
    }
}

std::map<std::string, SyntheticModelSpec> parse_synthetic_models(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("model spec file: malformed document: ") +
                                    e.what());
    }
    if (!doc.is_object()) {
        throw std::invalid_argument("model spec file: document must be an object");
    }
    std::map<std::string, SyntheticModelSpec> specs;
    for (const auto& [name, entry] : doc.items()) {
        SyntheticModelSpec spec;
        spec.name = name;
        std::string kind = entry.value("kind", std::string());
        if (kind == "detection_output") {
            spec.kind = SyntheticOutputKind::kDetectionOutput;
        } else if (kind == "label") {
            spec.kind = SyntheticOutputKind::kLabel;
        } else {
            throw std::invalid_argument("model spec '" + name + "': unknown kind '" + kind + "'");
        }
        if (!entry.contains("dims")) {
            throw std::invalid_argument("model spec '" + name + "': missing dims");
        }
        for (const auto& d : entry["dims"]) {
            spec.dims.push_back(d.get<int64_t>());
        }
        if (entry.contains("latency_ms")) {
            const auto& lat = entry["latency_ms"];
            if (lat.is_array()) {
                if (lat.size() != 2) {
                    throw std::invalid_argument("model spec '" + name +
                                                "': latency_ms range needs [lo,hi]");
                }
                spec.latency_lo_ms = lat[0].get<double>();
                spec.latency_hi_ms = lat[1].get<double>();
            } else {
                spec.latency_lo_ms = spec.latency_hi_ms = lat.get<double>();
            }
        }
        spec.seed_salt = entry.value("seed_salt", 0ull);
        spec.label_count = entry.value("label_count", 4);
        validate_synthetic_spec(spec);
        specs.emplace(name, std::move(spec));
    }
    return specs;
}

std::map<std::string, SyntheticModelSpec> load_synthetic_models(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::invalid_argument("model spec file: cannot open '" + path + "'");
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_synthetic_models(buf.str());
}

double synthetic_latency_ms(const SyntheticModelSpec& spec, int64_t frame_seq,
                            int32_t roi_index) {
    if (spec.latency_hi_ms <= spec.latency_lo_ms) {
        return spec.latency_lo_ms;
    }
    double u = uniform_at(request_seed(spec, frame_seq, roi_index), kLatencyCounter);
    return spec.latency_lo_ms + u * (spec.latency_hi_ms - spec.latency_lo_ms);
}

Tensor synthetic_infer(const SyntheticModelSpec& spec, const Tensor& /*input*/,
                       int64_t frame_seq, int32_t roi_index) {
    validate_synthetic_spec(spec);
    uint64_t seed = request_seed(spec, frame_seq, roi_index);
    Tensor out = make_tensor(spec.dims);

    if (spec.kind == SyntheticOutputKind::kLabel) {
        for (size_t i = 0; i < out.data.size(); ++i) {
            out.data[i] = static_cast<float>(uniform_at(seed, i));
        }
    } else {
        int64_t rows = out.dims.size() == 2 ? out.dims[0] : out.dims[2];
        for (int64_t r = 0; r < rows; ++r) {
            float* rec = out.data.data() + r * 7;
            if (r == rows - 1) {
                rec[0] = -1.f;  // sentinel
                continue;
            }
            uint64_t base = static_cast<uint64_t>(r) * 8;
            rec[0] = 0.f;
            rec[1] = static_cast<float>(mix_at(seed, base) %
                                        static_cast<uint64_t>(spec.label_count));
            rec[2] = static_cast<float>(uniform_at(seed, base + 1));
            auto [x0, x1] = std::minmax(uniform_at(seed, base + 2), uniform_at(seed, base + 3));
            auto [y0, y1] = std::minmax(uniform_at(seed, base + 4), uniform_at(seed, base + 5));
            rec[3] = static_cast<float>(x0);
            rec[4] = static_cast<float>(y0);
            rec[5] = static_cast<float>(x1);
            rec[6] = static_cast<float>(y1);
        }
    }

    double latency = synthetic_latency_ms(spec, frame_seq, roi_index);
    if (latency > 0) {
        std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(latency));
    }
    return out;
}

InferenceBackend::InferenceBackend(InferenceConfig cfg, SyntheticModelSpec spec)
    : cfg_(std::move(cfg)), spec_(std::move(spec)) {
    if (cfg_.nireq < 1) {
        throw std::invalid_argument("nireq must be >= 1, got " + std::to_string(cfg_.nireq));
    }
    validate_synthetic_spec(spec_);
    idle_ = cfg_.nireq;
    workers_.reserve(static_cast<size_t>(cfg_.nireq));
    for (int i = 0; i < cfg_.nireq; ++i) {
        workers_.emplace_back([this] { worker_loop(); });
    }
}

InferenceBackend::~InferenceBackend() {
    close();
    for (auto& w : workers_) {
        if (w.joinable()) {
            w.join();
        }
    }
}

void InferenceBackend::worker_loop() {
    for (;;) {
        Job job;
        {
            std::unique_lock lock(mutex_);
            cv_work_.wait(lock, [this] { return !jobs_.empty() || closed_; });
            if (jobs_.empty()) {
                return;  // closed and drained
            }
            job = std::move(jobs_.front());
            jobs_.pop_front();
        }
        Tensor output = synthetic_infer(spec_, job.input, job.frame_seq, job.roi_index);
        auto finished = std::chrono::steady_clock::now();
        {
            std::lock_guard lock(mutex_);
            busy_ -= 1;
            done_ += 1;
            busy_request_ms_ +=
                std::chrono::duration<double, std::milli>(finished - job.submitted_at).count();
            completions_.push_back(Completion{job.ticket, job.tag, std::move(output)});
        }
        cv_done_.notify_all();
    }
}

uint64_t InferenceBackend::submit(Tensor input, int64_t frame_seq, int32_t roi_index,
                                  uint64_t tag) {
    std::unique_lock lock(mutex_);
    cv_idle_.wait(lock, [this] { return idle_ > 0 || closed_; });
    if (closed_) {
        throw std::runtime_error("inference backend '" + cfg_.model + "' is closed");
    }
    idle_ -= 1;
    busy_ += 1;
    max_busy_ = std::max(max_busy_, busy_);
    submissions_ += 1;
    uint64_t ticket = next_ticket_++;
    jobs_.push_back(Job{ticket, tag, std::move(input), frame_seq, roi_index,
                        std::chrono::steady_clock::now()});
    lock.unlock();
    cv_work_.notify_one();
    return ticket;
}

std::optional<Completion> InferenceBackend::collect_next() {
    std::unique_lock lock(mutex_);
    cv_done_.wait(lock, [this] {
        return !completions_.empty() || (closed_ && busy_ == 0 && jobs_.empty());
    });
    if (completions_.empty()) {
        return std::nullopt;  // end of stream
    }
    Completion c = std::move(completions_.front());
    completions_.pop_front();
    done_ -= 1;
    idle_ += 1;
    lock.unlock();
    cv_idle_.notify_one();
    return c;
}

std::optional<Completion> InferenceBackend::try_collect() {
    std::unique_lock lock(mutex_);
    if (completions_.empty()) {
        return std::nullopt;
    }
    Completion c = std::move(completions_.front());
    completions_.pop_front();
    done_ -= 1;
    idle_ += 1;
    lock.unlock();
    cv_idle_.notify_one();
    return c;
}

void InferenceBackend::close() {
    {
        std::lock_guard lock(mutex_);
        closed_ = true;
    }
    cv_idle_.notify_all();
    cv_work_.notify_all();
    cv_done_.notify_all();
}

InferenceBackend::StateCounts InferenceBackend::state_counts() const {
    std::lock_guard lock(mutex_);
    return StateCounts{idle_, busy_, done_};
}

int InferenceBackend::busy_count() const {
    std::lock_guard lock(mutex_);
    return busy_;
}

void InferenceBackend::set_stage_label(std::string label) {
    std::lock_guard lock(mutex_);
    stage_label_ = std::move(label);
}

BackendStats InferenceBackend::stats() const {
    std::lock_guard lock(mutex_);
    BackendStats s;
    s.stage = stage_label_;
    s.model = cfg_.model;
    s.device = cfg_.device;
    s.nireq = cfg_.nireq;
    s.configs = cfg_.configs;
    s.submissions = submissions_;
    s.busy_request_ms = busy_request_ms_;
    s.max_busy_observed = max_busy_;
    return s;
}

}  // namespace vapipe
