#include "vapipe/frame.hpp"

#include <cstring>
#include <sstream>

namespace vapipe {

const char* pixel_format_name(PixelFormat fmt) {
    switch (fmt) {
    case PixelFormat::kI420:
        return "i420";
    case PixelFormat::kBGR24:
        return "bgr24";
    case PixelFormat::kBGRP:
        return "bgrp";
    }
    return "?";
}

int plane_count(PixelFormat fmt) {
    switch (fmt) {
    case PixelFormat::kI420:
        return 3;
    case PixelFormat::kBGR24:
        return 1;
    case PixelFormat::kBGRP:
        return 3;
    }
    return 0;
}

int plane_width(PixelFormat fmt, int frame_width, int plane_index) {
    if (fmt == PixelFormat::kI420 && plane_index > 0) {
        return frame_width / 2;
    }
    return frame_width;
}

int plane_height(PixelFormat fmt, int frame_height, int plane_index) {
    if (fmt == PixelFormat::kI420 && plane_index > 0) {
        return frame_height / 2;
    }
    return frame_height;
}

size_t plane_row_bytes(PixelFormat fmt, int frame_width, int plane_index) {
    size_t w = static_cast<size_t>(plane_width(fmt, frame_width, plane_index));
    return fmt == PixelFormat::kBGR24 ? w * 3 : w;
}

static void check_dims(int width, int height, PixelFormat fmt) {
    if (width <= 0 || height <= 0) {
        std::ostringstream os;
        os << "frame dimensions must be positive, got " << width << "x" << height;
        throw std::invalid_argument(os.str());
    }
    if (fmt == PixelFormat::kI420 && (width % 2 != 0 || height % 2 != 0)) {
        std::ostringstream os;
        os << "i420 requires even dimensions, got " << width << "x" << height;
        throw std::invalid_argument(os.str());
    }
}

size_t frame_byte_size(int width, int height, PixelFormat fmt) {
    check_dims(width, height, fmt);
    size_t total = 0;
    for (int p = 0; p < plane_count(fmt); ++p) {
        total += plane_row_bytes(fmt, width, p) *
                 static_cast<size_t>(plane_height(fmt, height, p));
    }
    return total;
}

Frame make_frame(int width, int height, PixelFormat fmt) {
    check_dims(width, height, fmt);
    Frame frame;
    frame.width = width;
    frame.height = height;
    frame.format = fmt;
    for (int p = 0; p < plane_count(fmt); ++p) {
        auto plane = std::make_shared<Plane>();
        plane->stride = plane_row_bytes(fmt, width, p);
        plane->bytes.assign(plane->stride * static_cast<size_t>(plane_height(fmt, height, p)), 0);
        frame.planes.push_back(std::move(plane));
    }
    return frame;
}

void validate_frame(const Frame& frame) {
    check_dims(frame.width, frame.height, frame.format);
    size_t expected = static_cast<size_t>(plane_count(frame.format));
    if (frame.planes.size() != expected) {
        std::ostringstream os;
        os << pixel_format_name(frame.format) << " frame needs " << expected
           << " planes, has " << frame.planes.size();
        throw std::invalid_argument(os.str());
    }
    for (size_t p = 0; p < frame.planes.size(); ++p) {
        const auto& plane = frame.planes[p];
        if (!plane) {
            throw std::invalid_argument("frame plane " + std::to_string(p) + " is null");
        }
        size_t row = plane_row_bytes(frame.format, frame.width, static_cast<int>(p));
        size_t rows = static_cast<size_t>(plane_height(frame.format, frame.height, static_cast<int>(p)));
        if (plane->stride < row || plane->bytes.size() < plane->stride * rows) {
            std::ostringstream os;
            os << "plane " << p << " buffer too small: stride " << plane->stride
               << ", size " << plane->bytes.size() << ", needs " << row << "x" << rows;
            throw std::invalid_argument(os.str());
        }
    }
}

void validate_bbox(const BBox& bbox) {
    auto fail = [](const std::string& what) {
        throw std::invalid_argument("invalid bbox: " + what);
    };
    if (!(bbox.x_min >= 0.f)) fail("x_min=" + std::to_string(bbox.x_min) + " below 0");
    if (!(bbox.y_min >= 0.f)) fail("y_min=" + std::to_string(bbox.y_min) + " below 0");
    if (!(bbox.x_max <= 1.f)) fail("x_max=" + std::to_string(bbox.x_max) + " exceeds 1");
    if (!(bbox.y_max <= 1.f)) fail("y_max=" + std::to_string(bbox.y_max) + " exceeds 1");
    if (!(bbox.x_min <= bbox.x_max)) fail("x_min exceeds x_max");
    if (!(bbox.y_min <= bbox.y_max)) fail("y_min exceeds y_max");
}

void attach_roi(Frame& frame, DetectionROI roi) {
    validate_bbox(roi.bbox);
    if (!(roi.confidence >= 0.f && roi.confidence <= 1.f)) {
        throw std::invalid_argument("invalid roi: confidence=" +
                                    std::to_string(roi.confidence) + " outside [0,1]");
    }
    frame.side_data.push_back(std::move(roi));
}

int64_t tensor_element_count(const Tensor& t) {
    int64_t n = 1;
    for (int64_t d : t.dims) {
        n *= d;
    }
    return t.dims.empty() ? 0 : n;
}

void validate_tensor(const Tensor& t) {
    if (t.dims.empty()) {
        throw std::invalid_argument("tensor has no dimensions");
    }
    for (int64_t d : t.dims) {
        if (d <= 0) {
            throw std::invalid_argument("tensor dimension " + std::to_string(d) +
                                        " is not positive");
        }
    }
    if (tensor_element_count(t) != static_cast<int64_t>(t.data.size())) {
        std::ostringstream os;
        os << "tensor element count " << tensor_element_count(t)
           << " does not match buffer size " << t.data.size();
        throw std::invalid_argument(os.str());
    }
}

Tensor make_tensor(std::vector<int64_t> dims) {
    Tensor t;
    t.dims = std::move(dims);
    for (int64_t d : t.dims) {
        if (d <= 0) {
            throw std::invalid_argument("tensor dimension " + std::to_string(d) +
                                        " is not positive");
        }
    }
    t.data.assign(static_cast<size_t>(tensor_element_count(t)), 0.f);
    return t;
}

}  // namespace vapipe
