#include "vapipe/imageproc.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace vapipe {

namespace {

// llround without the libm call, for the per-pixel hot paths. The shift
// constant (2^52 + 2^51) rounds to the nearest integer with ties-to-even;
// v - r is exact at this magnitude, so half-way ties are detected exactly
// and bumped away from zero. Bit-identical to std::llround for |v| < 2^51.
long long round_half_away(double v) {
    constexpr double kShift = 6755399441055744.0;  // 2^52 + 2^51
    double r = v >= 0 ? (v + kShift) - kShift : (v - kShift) + kShift;
    double diff = v - r;
    if (diff == 0.5 && v > 0) {
        r += 1;
    } else if (diff == -0.5 && v < 0) {
        r -= 1;
    }
    return static_cast<long long>(r);
}

uint8_t round_clamp_byte(double v) {
    long long r = round_half_away(v);
    return static_cast<uint8_t>(std::clamp<long long>(r, 0, 255));
}

void require_format(const Frame& frame, PixelFormat fmt, const char* op) {
    if (frame.format != fmt) {
        std::ostringstream os;
        os << op << " expects " << pixel_format_name(fmt) << " input, got "
           << pixel_format_name(frame.format);
        throw std::invalid_argument(os.str());
    }
}

std::shared_ptr<Plane> alloc_plane(size_t row_bytes, size_t rows) {
    auto plane = std::make_shared<Plane>();
    plane->stride = row_bytes;
    plane->bytes.resize(row_bytes * rows);
    return plane;
}

Frame bgr24_shell(int width, int height, const Frame& meta_from) {
    Frame out;
    out.seq = meta_from.seq;
    out.pts_ms = meta_from.pts_ms;
    out.width = width;
    out.height = height;
    out.format = PixelFormat::kBGR24;
    return out;
}

}  // namespace

void validate_rect(const PixelRect& rect, int frame_width, int frame_height) {
    if (rect.x < 0 || rect.y < 0 || rect.w < 1 || rect.h < 1 ||
        rect.x + rect.w > frame_width || rect.y + rect.h > frame_height) {
        std::ostringstream os;
        os << "rect (" << rect.x << "," << rect.y << "," << rect.w << "," << rect.h
           << ") out of bounds for " << frame_width << "x" << frame_height;
        throw std::invalid_argument(os.str());
    }
}

PixelRect bbox_to_rect(const BBox& bbox, int width, int height) {
    validate_bbox(bbox);
    if (width < 1 || height < 1) {
        throw std::invalid_argument("bbox_to_rect needs dims >= 1");
    }
    int x = static_cast<int>(round_half_away(double(bbox.x_min) * width));
    int y = static_cast<int>(round_half_away(double(bbox.y_min) * height));
    int w = static_cast<int>(round_half_away(double(bbox.x_max - bbox.x_min) * width));
    int h = static_cast<int>(round_half_away(double(bbox.y_max - bbox.y_min) * height));
    PixelRect rect;
    rect.x = std::clamp(x, 0, width - 1);
    rect.y = std::clamp(y, 0, height - 1);
    rect.w = std::clamp(w, 1, width - rect.x);
    rect.h = std::clamp(h, 1, height - rect.y);
    return rect;
}

Frame csc_i420_to_bgr24(const Frame& frame) {
    require_format(frame, PixelFormat::kI420, "csc_i420_to_bgr24");
    validate_frame(frame);

    // Per-component contribution tables; table sums match the per-pixel
    // formula exactly since the same two doubles are added.
    static const auto tables = [] {
        struct T {
            double y[256], vr[256], vg[256], ug[256], ub[256];
        } t;
        for (int i = 0; i < 256; ++i) {
            t.y[i] = 1.164 * (i - 16);
            t.vr[i] = 1.596 * (i - 128);
            t.vg[i] = 0.813 * (i - 128);
            t.ug[i] = 0.391 * (i - 128);
            t.ub[i] = 2.018 * (i - 128);
        }
        return t;
    }();

    const Plane& py = *frame.planes[0];
    const Plane& pu = *frame.planes[1];
    const Plane& pv = *frame.planes[2];
    auto dst = alloc_plane(static_cast<size_t>(frame.width) * 3,
                           static_cast<size_t>(frame.height));

    for (int row = 0; row < frame.height; ++row) {
        const uint8_t* yrow = py.bytes.data() + py.stride * static_cast<size_t>(row);
        const uint8_t* urow = pu.bytes.data() + pu.stride * static_cast<size_t>(row / 2);
        const uint8_t* vrow = pv.bytes.data() + pv.stride * static_cast<size_t>(row / 2);
        uint8_t* drow = dst->bytes.data() + dst->stride * static_cast<size_t>(row);
        for (int col = 0; col < frame.width; ++col) {
            double ty = tables.y[yrow[col]];
            uint8_t u = urow[col / 2];
            uint8_t v = vrow[col / 2];
            drow[col * 3 + 0] = round_clamp_byte(ty + tables.ub[u]);
            drow[col * 3 + 1] = round_clamp_byte(ty - tables.vg[v] - tables.ug[u]);
            drow[col * 3 + 2] = round_clamp_byte(ty + tables.vr[v]);
        }
    }

    Frame out = bgr24_shell(frame.width, frame.height, frame);
    out.side_data = frame.side_data;
    out.planes.push_back(std::move(dst));
    return out;
}

Frame resize_bilinear(const Frame& src, int dst_w, int dst_h) {
    require_format(src, PixelFormat::kBGR24, "resize_bilinear");
    validate_frame(src);
    if (dst_w < 1 || dst_h < 1) {
        throw std::invalid_argument("resize_bilinear needs dst dims >= 1");
    }

    const Plane& sp = *src.planes[0];
    auto dp = alloc_plane(static_cast<size_t>(dst_w) * 3, static_cast<size_t>(dst_h));

    struct Axis {
        int lo, hi;
        double frac;
    };
    auto map_axis = [](int dst_coord, int dst_dim, int src_dim) {
        double scale = double(src_dim) / dst_dim;
        double s = (dst_coord + 0.5) * scale - 0.5;
        if (s < 0) s = 0;
        int lo = static_cast<int>(s);
        if (lo > src_dim - 1) lo = src_dim - 1;
        int hi = std::min(lo + 1, src_dim - 1);
        return Axis{lo, hi, s - lo};
    };

    std::vector<Axis> cols(static_cast<size_t>(dst_w));
    for (int x = 0; x < dst_w; ++x) {
        cols[static_cast<size_t>(x)] = map_axis(x, dst_w, src.width);
    }

    for (int y = 0; y < dst_h; ++y) {
        Axis ay = map_axis(y, dst_h, src.height);
        const uint8_t* row0 = sp.bytes.data() + sp.stride * static_cast<size_t>(ay.lo);
        const uint8_t* row1 = sp.bytes.data() + sp.stride * static_cast<size_t>(ay.hi);
        uint8_t* drow = dp->bytes.data() + dp->stride * static_cast<size_t>(y);
        for (int x = 0; x < dst_w; ++x) {
            const Axis& ax = cols[static_cast<size_t>(x)];
            for (int c = 0; c < 3; ++c) {
                double p00 = row0[ax.lo * 3 + c];
                double p01 = row0[ax.hi * 3 + c];
                double p10 = row1[ax.lo * 3 + c];
                double p11 = row1[ax.hi * 3 + c];
                double v = (1 - ay.frac) * ((1 - ax.frac) * p00 + ax.frac * p01) +
                           ay.frac * ((1 - ax.frac) * p10 + ax.frac * p11);
                drow[x * 3 + c] = round_clamp_byte(v);
            }
        }
    }

    Frame out = bgr24_shell(dst_w, dst_h, src);
    out.side_data = src.side_data;
    out.planes.push_back(std::move(dp));
    return out;
}

Frame crop(const Frame& src, const PixelRect& rect) {
    require_format(src, PixelFormat::kBGR24, "crop");
    validate_frame(src);
    validate_rect(rect, src.width, src.height);

    const Plane& sp = *src.planes[0];
    auto dp = alloc_plane(static_cast<size_t>(rect.w) * 3, static_cast<size_t>(rect.h));
    for (int y = 0; y < rect.h; ++y) {
        const uint8_t* srow =
            sp.bytes.data() + sp.stride * static_cast<size_t>(rect.y + y) + static_cast<size_t>(rect.x) * 3;
        std::copy_n(srow, static_cast<size_t>(rect.w) * 3,
                    dp->bytes.data() + dp->stride * static_cast<size_t>(y));
    }

    Frame out = bgr24_shell(rect.w, rect.h, src);
    out.planes.push_back(std::move(dp));
    return out;
}

Tensor pack_bgrp_tensor(const Frame& src, double mean, double scale) {
    require_format(src, PixelFormat::kBGR24, "pack_bgrp_tensor");
    validate_frame(src);
    if (scale == 0.0) {
        throw std::invalid_argument("pack_bgrp_tensor: scale must be non-zero");
    }

    Tensor t = make_tensor({1, 3, src.height, src.width});
    const Plane& sp = *src.planes[0];
    size_t plane_elems = static_cast<size_t>(src.width) * static_cast<size_t>(src.height);
    for (int y = 0; y < src.height; ++y) {
        const uint8_t* srow = sp.bytes.data() + sp.stride * static_cast<size_t>(y);
        size_t row_base = static_cast<size_t>(y) * static_cast<size_t>(src.width);
        for (int x = 0; x < src.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                t.data[plane_elems * static_cast<size_t>(c) + row_base + static_cast<size_t>(x)] =
                    static_cast<float>((srow[x * 3 + c] - mean) / scale);
            }
        }
    }
    return t;
}

}  // namespace vapipe
