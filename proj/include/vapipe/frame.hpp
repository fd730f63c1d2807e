#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace vapipe {

/// Pixel layouts understood by the pipeline.
///   kI420  - planar YUV 4:2:0, 8-bit, chroma planes at half resolution
///   kBGR24 - packed byte-interleaved B,G,R
///   kBGRP  - planar B, G, R, one full-resolution plane each
enum class PixelFormat { kI420, kBGR24, kBGRP };

const char* pixel_format_name(PixelFormat fmt);

/// One pixel plane. Bytes are laid out row by row with `stride` bytes
/// between row starts; stride may exceed the visible row width.
struct Plane {
    std::vector<uint8_t> bytes;
    size_t stride = 0;
};

struct ClassificationResult {
    std::string attribute_name;
    int label_id = 0;
    std::string label;
    float confidence = 0.f;
    std::string classifier;

    bool operator==(const ClassificationResult&) const = default;
};

/// Normalized box, coordinates in [0,1] relative to the producing frame.
struct BBox {
    float x_min = 0.f, y_min = 0.f, x_max = 0.f, y_max = 0.f;

    bool operator==(const BBox&) const = default;
};

struct DetectionROI {
    BBox bbox;
    int label_id = 0;
    std::string label;
    float confidence = 0.f;
    std::string detector;
    std::vector<ClassificationResult> attributes;

    bool operator==(const DetectionROI&) const = default;
};

/// A video picture plus the analytics metadata attached so far. Plane
/// buffers are immutable once built and shared between copies; side data
/// is copied per frame so branches can append independently.
struct Frame {
    int64_t seq = 0;
    int64_t pts_ms = 0;
    int width = 0;
    int height = 0;
    PixelFormat format = PixelFormat::kI420;
    std::vector<std::shared_ptr<const Plane>> planes;
    std::vector<DetectionROI> side_data;
};

/// Dense row-major float tensor, the inference I/O unit.
struct Tensor {
    std::vector<int64_t> dims;
    std::vector<float> data;
};

int plane_count(PixelFormat fmt);
int plane_width(PixelFormat fmt, int frame_width, int plane_index);
int plane_height(PixelFormat fmt, int frame_height, int plane_index);
/// Bytes covered by one row of the given plane (no stride padding).
size_t plane_row_bytes(PixelFormat fmt, int frame_width, int plane_index);

/// Total tightly-packed byte count across all planes.
/// Throws std::invalid_argument for non-positive dims or odd dims with I420.
size_t frame_byte_size(int width, int height, PixelFormat fmt);

/// Allocates a frame with tight (unpadded) zero-filled planes.
Frame make_frame(int width, int height, PixelFormat fmt);

/// Checks dimensions, plane count and per-plane buffer sizes.
void validate_frame(const Frame& frame);

/// Throws std::invalid_argument naming the violated bound.
void validate_bbox(const BBox& bbox);

/// Appends a validated ROI to the frame's side data (order is append order).
void attach_roi(Frame& frame, DetectionROI roi);

int64_t tensor_element_count(const Tensor& t);
void validate_tensor(const Tensor& t);
Tensor make_tensor(std::vector<int64_t> dims);

}  // namespace vapipe
