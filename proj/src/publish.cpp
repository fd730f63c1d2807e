#include "vapipe/publish.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <netdb.h>
#include <sys/socket.h>
#include <unistd.h>

namespace vapipe {

namespace {

void append_json_string(std::string& out, const std::string& s) {
    out += '"';
    for (char ch : s) {
        switch (ch) {
        case '"':
            out += "\\\"";
            break;
        case '\\':
            out += "\\\\";
            break;
        case '\n':
            out += "\\n";
            break;
        case '\r':
            out += "\\r";
            break;
        case '\t':
            out += "\\t";
            break;
        default:
            if (static_cast<unsigned char>(ch) < 0x20) {
                char buf[8];
                std::snprintf(buf, sizeof(buf), "\\u%04x", ch);
                out += buf;
            } else {
                out += ch;
            }
        }
    }
    out += '"';
}

// 6 significant digits, the canonical float rendering of published records.
void append_float(std::string& out, double v) {
    if (!std::isfinite(v)) {
        throw std::invalid_argument("publish: non-finite float in record");
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    out += buf;
}

void append_bbox(std::string& out, const BBox& b) {
    out += "{\"x_min\":";
    append_float(out, b.x_min);
    out += ",\"y_min\":";
    append_float(out, b.y_min);
    out += ",\"x_max\":";
    append_float(out, b.x_max);
    out += ",\"y_max\":";
    append_float(out, b.y_max);
    out += '}';
}

}  // namespace

MetaRecord meta_record_from_frame(const Frame& frame) {
    return MetaRecord{frame.seq, frame.pts_ms, frame.side_data};
}

std::string to_json(const MetaRecord& rec) {
    std::string out;
    out.reserve(64 + rec.objects.size() * 160);
    out += "{\"frame_id\":";
    out += std::to_string(rec.frame_id);
    out += ",\"pts_ms\":";
    out += std::to_string(rec.pts_ms);
    out += ",\"objects\":[";
    for (size_t i = 0; i < rec.objects.size(); ++i) {
        const DetectionROI& obj = rec.objects[i];
        if (i) out += ',';
        out += "{\"bbox\":";
        append_bbox(out, obj.bbox);
        out += ",\"label_id\":";
        out += std::to_string(obj.label_id);
        out += ",\"label\":";
        append_json_string(out, obj.label);
        out += ",\"confidence\":";
        append_float(out, obj.confidence);
        out += ",\"detector\":";
        append_json_string(out, obj.detector);
        out += ",\"attributes\":[";
        for (size_t a = 0; a < obj.attributes.size(); ++a) {
            const ClassificationResult& attr = obj.attributes[a];
            if (a) out += ',';
            out += "{\"attribute_name\":";
            append_json_string(out, attr.attribute_name);
            out += ",\"label_id\":";
            out += std::to_string(attr.label_id);
            out += ",\"label\":";
            append_json_string(out, attr.label);
            out += ",\"confidence\":";
            append_float(out, attr.confidence);
            out += ",\"classifier\":";
            append_json_string(out, attr.classifier);
            out += '}';
        }
        out += "]}";
    }
    out += "]}\n";
    return out;
}

std::string to_text(const MetaRecord& rec) {
    std::string out = std::to_string(rec.frame_id) + "\t" + std::to_string(rec.objects.size());
    for (const DetectionROI& obj : rec.objects) {
        out += '\t';
        out += obj.label.empty() ? std::to_string(obj.label_id) : obj.label;
        out += '(';
        append_float(out, obj.confidence);
        out += ")@[";
        append_float(out, obj.bbox.x_min);
        out += ',';
        append_float(out, obj.bbox.y_min);
        out += ',';
        append_float(out, obj.bbox.x_max);
        out += ',';
        append_float(out, obj.bbox.y_max);
        out += ']';
        for (const ClassificationResult& attr : obj.attributes) {
            out += ' ';
            out += attr.attribute_name;
            out += '=';
            out += attr.label.empty() ? std::to_string(attr.label_id) : attr.label;
        }
    }
    out += '\n';
    return out;
}

// ---------------------------------------------------------------------------
// Publisher destinations

struct PublisherStage::Dest {
    virtual ~Dest() = default;
    virtual void write_record(const MetaRecord& rec) = 0;
    virtual void end_of_stream() {}
};

struct PublisherStage::FileDest : PublisherStage::Dest {
    FileDest(const std::string& path, PublishFormat format) : path_(path), format_(format) {
        out_.open(path, std::ios::binary | std::ios::trunc);
        if (!out_) {
            throw PipelineError("publisher: cannot open '" + path + "' for writing");
        }
    }

    void write_record(const MetaRecord& rec) override {
        std::string line = format_ == PublishFormat::kJson ? to_json(rec) : to_text(rec);
        out_.write(line.data(), static_cast<std::streamsize>(line.size()));
        if (!out_) {
            throw PipelineError("publisher: write to '" + path_ + "' failed");
        }
    }

    void end_of_stream() override {
        out_.flush();
        if (!out_) {
            throw PipelineError("publisher: flush of '" + path_ + "' failed");
        }
    }

    std::string path_;
    PublishFormat format_;
    std::ofstream out_;
};

struct PublisherStage::BrokerDest : PublisherStage::Dest {
    BrokerDest(const std::string& host, int port, const std::string& topic) : topic_(topic) {
        addrinfo hints{};
        hints.ai_family = AF_UNSPEC;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* res = nullptr;
        std::string service = std::to_string(port);
        int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res);
        if (rc != 0) {
            throw PipelineError("publisher: cannot resolve broker " + host + ":" + service +
                                ": " + gai_strerror(rc));
        }
        for (addrinfo* ai = res; ai; ai = ai->ai_next) {
            fd_ = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
            if (fd_ < 0) {
                continue;
            }
            if (::connect(fd_, ai->ai_addr, ai->ai_addrlen) == 0) {
                break;
            }
            ::close(fd_);
            fd_ = -1;
        }
        ::freeaddrinfo(res);
        if (fd_ < 0) {
            throw PipelineError("publisher: cannot connect to broker " + host + ":" + service);
        }
    }

    ~BrokerDest() override {
        if (fd_ >= 0) {
            ::close(fd_);
        }
    }

    void write_record(const MetaRecord& rec) override {
        // Message framing: topic, TAB, canonical JSON line (LF-terminated).
        std::string msg = topic_;
        msg += '\t';
        msg += to_json(rec);
        size_t sent = 0;
        while (sent < msg.size()) {
            ssize_t n = ::send(fd_, msg.data() + sent, msg.size() - sent, MSG_NOSIGNAL);
            if (n <= 0) {
                throw PipelineError("publisher: broker write failed: " +
                                    std::string(std::strerror(errno)));
            }
            sent += static_cast<size_t>(n);
        }
    }

    void end_of_stream() override {
        ::close(fd_);
        fd_ = -1;
    }

    std::string topic_;
    int fd_ = -1;
};

PublisherStage::PublisherStage(std::string name, std::unique_ptr<Dest> dest)
    : FilterStage(std::move(name)), dest_(std::move(dest)) {}

PublisherStage::~PublisherStage() = default;

std::unique_ptr<PublisherStage> PublisherStage::to_file(const std::string& path,
                                                        PublishFormat format) {
    return std::unique_ptr<PublisherStage>(
        new PublisherStage("publish", std::make_unique<FileDest>(path, format)));
}

std::unique_ptr<PublisherStage> PublisherStage::to_broker(const std::string& host, int port,
                                                          const std::string& topic) {
    return std::unique_ptr<PublisherStage>(
        new PublisherStage("publish", std::make_unique<BrokerDest>(host, port, topic)));
}

void PublisherStage::process(Frame frame, const FrameSink& emit) {
    dest_->write_record(meta_record_from_frame(frame));
    emit(std::move(frame));
}

void PublisherStage::finish(const FrameSink&) {
    dest_->end_of_stream();
}

}  // namespace vapipe
