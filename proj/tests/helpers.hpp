#pragma once

// Shared test utilities: independent reference implementations of the image
// math (straight per-pixel evaluation of the documented formulas, no tables,
// no shared code with the library kernels), random frame generators, a y4m
// writer, and a loopback TCP capture server.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <mutex>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "vapipe/frame.hpp"
#include "vapipe/imageproc.hpp"

namespace testutil {

using vapipe::BBox;
using vapipe::Frame;
using vapipe::PixelFormat;
using vapipe::PixelRect;
using vapipe::Plane;

inline uint8_t plane_at(const Frame& f, int plane, int x, int y) {
    const Plane& p = *f.planes[static_cast<size_t>(plane)];
    return p.bytes[p.stride * static_cast<size_t>(y) + static_cast<size_t>(x)];
}

inline uint8_t bgr_at(const Frame& f, int x, int y, int c) {
    const Plane& p = *f.planes[0];
    return p.bytes[p.stride * static_cast<size_t>(y) + static_cast<size_t>(x) * 3 +
                   static_cast<size_t>(c)];
}

inline void set_bgr(Frame& f, int x, int y, uint8_t b, uint8_t g, uint8_t r) {
    auto& p = const_cast<Plane&>(*f.planes[0]);
    size_t base = p.stride * static_cast<size_t>(y) + static_cast<size_t>(x) * 3;
    p.bytes[base] = b;
    p.bytes[base + 1] = g;
    p.bytes[base + 2] = r;
}

// Visible-region pixel equality (stride-independent).
inline bool frames_equal(const Frame& a, const Frame& b) {
    if (a.width != b.width || a.height != b.height || a.format != b.format) {
        return false;
    }
    for (int p = 0; p < vapipe::plane_count(a.format); ++p) {
        size_t row = vapipe::plane_row_bytes(a.format, a.width, p);
        int rows = vapipe::plane_height(a.format, a.height, p);
        for (int y = 0; y < rows; ++y) {
            const auto& pa = *a.planes[static_cast<size_t>(p)];
            const auto& pb = *b.planes[static_cast<size_t>(p)];
            if (std::memcmp(pa.bytes.data() + pa.stride * static_cast<size_t>(y),
                            pb.bytes.data() + pb.stride * static_cast<size_t>(y), row) != 0) {
                return false;
            }
        }
    }
    return true;
}

// Random frames; when pad_strides is set, planes get stride slack filled
// with noise so padding-sensitivity shows up.
inline Frame random_frame(std::mt19937& rng, int w, int h, PixelFormat fmt,
                          bool pad_strides = false) {
    std::uniform_int_distribution<int> byte(0, 255);
    std::uniform_int_distribution<int> slack(0, 13);
    Frame f;
    f.width = w;
    f.height = h;
    f.format = fmt;
    for (int p = 0; p < vapipe::plane_count(fmt); ++p) {
        auto plane = std::make_shared<Plane>();
        size_t row = vapipe::plane_row_bytes(fmt, w, p);
        plane->stride = row + (pad_strides ? static_cast<size_t>(slack(rng)) : 0);
        size_t rows = static_cast<size_t>(vapipe::plane_height(fmt, h, p));
        plane->bytes.resize(plane->stride * rows);
        for (auto& byte_val : plane->bytes) {
            byte_val = static_cast<uint8_t>(byte(rng));
        }
        f.planes.push_back(std::move(plane));
    }
    return f;
}

// ---------------------------------------------------------------------------
// Reference implementations (kept deliberately naive)

inline uint8_t ref_round_byte(double v) {
    long long r = std::llround(v);
    if (r < 0) return 0;
    if (r > 255) return 255;
    return static_cast<uint8_t>(r);
}

inline Frame ref_csc_i420_to_bgr24(const Frame& src) {
    Frame out = vapipe::make_frame(src.width, src.height, PixelFormat::kBGR24);
    out.seq = src.seq;
    out.pts_ms = src.pts_ms;
    out.side_data = src.side_data;
    auto& dst = const_cast<Plane&>(*out.planes[0]);
    for (int y = 0; y < src.height; ++y) {
        for (int x = 0; x < src.width; ++x) {
            double Y = plane_at(src, 0, x, y);
            double U = plane_at(src, 1, x / 2, y / 2);
            double V = plane_at(src, 2, x / 2, y / 2);
            double r = 1.164 * (Y - 16) + 1.596 * (V - 128);
            double g = 1.164 * (Y - 16) - 0.813 * (V - 128) - 0.391 * (U - 128);
            double b = 1.164 * (Y - 16) + 2.018 * (U - 128);
            size_t base = dst.stride * static_cast<size_t>(y) + static_cast<size_t>(x) * 3;
            dst.bytes[base] = ref_round_byte(b);
            dst.bytes[base + 1] = ref_round_byte(g);
            dst.bytes[base + 2] = ref_round_byte(r);
        }
    }
    return out;
}

inline Frame ref_resize_bilinear(const Frame& src, int dst_w, int dst_h) {
    Frame out = vapipe::make_frame(dst_w, dst_h, PixelFormat::kBGR24);
    out.seq = src.seq;
    out.pts_ms = src.pts_ms;
    out.side_data = src.side_data;
    auto& dst = const_cast<Plane&>(*out.planes[0]);
    for (int y = 0; y < dst_h; ++y) {
        double sy = (y + 0.5) * (double(src.height) / dst_h) - 0.5;
        if (sy < 0) sy = 0;
        int y0 = static_cast<int>(sy);
        if (y0 > src.height - 1) y0 = src.height - 1;
        int y1 = std::min(y0 + 1, src.height - 1);
        double fy = sy - y0;
        for (int x = 0; x < dst_w; ++x) {
            double sx = (x + 0.5) * (double(src.width) / dst_w) - 0.5;
            if (sx < 0) sx = 0;
            int x0 = static_cast<int>(sx);
            if (x0 > src.width - 1) x0 = src.width - 1;
            int x1 = std::min(x0 + 1, src.width - 1);
            double fx = sx - x0;
            for (int c = 0; c < 3; ++c) {
                double p00 = bgr_at(src, x0, y0, c);
                double p01 = bgr_at(src, x1, y0, c);
                double p10 = bgr_at(src, x0, y1, c);
                double p11 = bgr_at(src, x1, y1, c);
                double v = (1 - fy) * ((1 - fx) * p00 + fx * p01) +
                           fy * ((1 - fx) * p10 + fx * p11);
                dst.bytes[dst.stride * static_cast<size_t>(y) + static_cast<size_t>(x) * 3 +
                          static_cast<size_t>(c)] = ref_round_byte(v);
            }
        }
    }
    return out;
}

inline Frame ref_crop(const Frame& src, const PixelRect& rect) {
    Frame out = vapipe::make_frame(rect.w, rect.h, PixelFormat::kBGR24);
    auto& dst = const_cast<Plane&>(*out.planes[0]);
    for (int y = 0; y < rect.h; ++y) {
        for (int x = 0; x < rect.w; ++x) {
            for (int c = 0; c < 3; ++c) {
                dst.bytes[dst.stride * static_cast<size_t>(y) + static_cast<size_t>(x) * 3 +
                          static_cast<size_t>(c)] = bgr_at(src, rect.x + x, rect.y + y, c);
            }
        }
    }
    return out;
}

inline PixelRect ref_bbox_to_rect(const BBox& bbox, int width, int height) {
    auto rnd = [](double v) { return static_cast<int>(std::llround(v)); };
    int x = rnd(double(bbox.x_min) * width);
    int y = rnd(double(bbox.y_min) * height);
    int w = rnd(double(bbox.x_max - bbox.x_min) * width);
    int h = rnd(double(bbox.y_max - bbox.y_min) * height);
    x = std::max(0, std::min(x, width - 1));
    y = std::max(0, std::min(y, height - 1));
    w = std::max(1, std::min(w, width - x));
    h = std::max(1, std::min(h, height - y));
    return PixelRect{x, y, w, h};
}

inline std::vector<float> ref_pack_bgrp(const Frame& src, double mean, double scale) {
    std::vector<float> out;
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < src.height; ++y) {
            for (int x = 0; x < src.width; ++x) {
                out.push_back(static_cast<float>((bgr_at(src, x, y, c) - mean) / scale));
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// y4m writer

inline void write_y4m(const std::string& path, const std::vector<Frame>& frames, int fps_num,
                      int fps_den) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (frames.empty()) {
        out << "YUV4MPEG2 W4 H4 F" << fps_num << ":" << fps_den << " C420\n";
        return;
    }
    out << "YUV4MPEG2 W" << frames[0].width << " H" << frames[0].height << " F" << fps_num
        << ":" << fps_den << " C420\n";
    for (const Frame& f : frames) {
        out << "FRAME\n";
        for (int p = 0; p < 3; ++p) {
            size_t row = vapipe::plane_row_bytes(f.format, f.width, p);
            int rows = vapipe::plane_height(f.format, f.height, p);
            const auto& plane = *f.planes[static_cast<size_t>(p)];
            for (int y = 0; y < rows; ++y) {
                out.write(reinterpret_cast<const char*>(plane.bytes.data() +
                                                        plane.stride * static_cast<size_t>(y)),
                          static_cast<std::streamsize>(row));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Loopback capture server

class CaptureServer {
public:
    CaptureServer() {
        listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        addr.sin_port = 0;
        if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
            ::listen(listen_fd_, 8) != 0) {
            throw std::runtime_error("capture server: bind/listen failed");
        }
        socklen_t len = sizeof(addr);
        ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
        port_ = ntohs(addr.sin_port);
        thread_ = std::thread([this] { accept_loop(); });
    }

    ~CaptureServer() {
        stop();
    }

    int port() const { return port_; }

    // Stops accepting and returns per-connection byte streams. Waits up to
    // five seconds for `expected` connections to finish first, so a client
    // that already connected is never dropped from the listen backlog.
    std::vector<std::string> stop(size_t expected = 0) {
        auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(5);
        while (std::chrono::steady_clock::now() < deadline) {
            {
                std::lock_guard lock(mutex_);
                if (connections_.size() >= expected) {
                    break;
                }
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(1));
        }
        if (listen_fd_ >= 0) {
            ::shutdown(listen_fd_, SHUT_RDWR);
            ::close(listen_fd_);
            listen_fd_ = -1;
        }
        if (thread_.joinable()) {
            thread_.join();
        }
        std::lock_guard lock(mutex_);
        return connections_;
    }

private:
    void accept_loop() {
        std::vector<std::thread> readers;
        for (;;) {
            int fd = ::accept(listen_fd_, nullptr, nullptr);
            if (fd < 0) {
                break;
            }
            readers.emplace_back([this, fd] {
                std::string data;
                char buf[4096];
                ssize_t n;
                while ((n = ::read(fd, buf, sizeof(buf))) > 0) {
                    data.append(buf, static_cast<size_t>(n));
                }
                ::close(fd);
                std::lock_guard lock(mutex_);
                connections_.push_back(std::move(data));
            });
        }
        for (auto& r : readers) {
            r.join();
        }
    }

    int listen_fd_ = -1;
    int port_ = 0;
    std::thread thread_;
    std::mutex mutex_;
    std::vector<std::string> connections_;
};

inline std::string temp_path(const std::string& name) {
    const char* dir = std::getenv("TMPDIR");
    return std::string(dir ? dir : "/tmp") + "/" + name;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace testutil
