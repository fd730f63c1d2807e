#pragma once

#include <memory>
#include <string>

#include "vapipe/filters.hpp"
#include "vapipe/frame.hpp"

namespace vapipe {

/// The per-frame record a publisher renders: frame identity plus every
/// attached object with its classification attributes, in side-data order.
struct MetaRecord {
    int64_t frame_id = 0;
    int64_t pts_ms = 0;
    std::vector<DetectionROI> objects;
};

MetaRecord meta_record_from_frame(const Frame& frame);

/// Canonical single-line JSON, newline-terminated: fixed key order, floats
/// at 6 significant digits, no whitespace outside strings. Stable across
/// runs and platforms. Throws on non-finite floats.
std::string to_json(const MetaRecord& rec);

/// Tab-separated summary: frame_id, object count, then per object
/// "label(conf)@[x_min,y_min,x_max,y_max]" with attributes as "name=label".
std::string to_text(const MetaRecord& rec);

enum class PublishFormat { kJson, kText };

/// Pass-through stage that renders one line per frame to a destination.
/// Publish failures abort the pipeline; metadata is never dropped silently.
class PublisherStage : public FilterStage {
public:
    ~PublisherStage() override;

    /// Writes NDJSON (or text) lines to a file, flushed at end-of-stream.
    static std::unique_ptr<PublisherStage> to_file(const std::string& path,
                                                   PublishFormat format);

    /// Opens one TCP connection and writes "topic TAB json LF" per frame;
    /// the connection closes at end-of-stream.
    static std::unique_ptr<PublisherStage> to_broker(const std::string& host, int port,
                                                     const std::string& topic);

protected:
    void process(Frame frame, const FrameSink& emit) override;
    void finish(const FrameSink& emit) override;

private:
    struct FileDest;
    struct BrokerDest;
    struct Dest;
    explicit PublisherStage(std::string name, std::unique_ptr<Dest> dest);
    std::unique_ptr<Dest> dest_;
};

}  // namespace vapipe
