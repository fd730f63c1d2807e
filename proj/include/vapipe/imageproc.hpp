#pragma once

#include "vapipe/frame.hpp"

namespace vapipe {

/// Integer pixel rectangle inside a frame.
struct PixelRect {
    int x = 0, y = 0, w = 0, h = 0;

    bool operator==(const PixelRect&) const = default;
};

void validate_rect(const PixelRect& rect, int frame_width, int frame_height);

/// Maps a normalized box to pixels: round(coord * dim) with half-away-from-zero
/// rounding, then clamps into the frame with w,h forced >= 1.
PixelRect bbox_to_rect(const BBox& bbox, int width, int height);

/// BT.601 limited-range YUV -> BGR, chroma upsampled nearest-neighbor.
/// Values computed in double, rounded half-away-from-zero, clamped to [0,255].
/// seq, pts and side data carry over.
Frame csc_i420_to_bgr24(const Frame& frame);

/// Pixel-center aligned bilinear resize of a BGR24 frame, edges clamped.
Frame resize_bilinear(const Frame& src, int dst_w, int dst_h);

/// Copies the sub-rectangle of a BGR24 frame. Side data is not carried:
/// crops only ever feed inference.
Frame crop(const Frame& src, const PixelRect& rect);

/// Packs a BGR24 frame into a [1,3,H,W] tensor, plane order B,G,R,
/// element = (byte - mean) / scale.
Tensor pack_bgrp_tensor(const Frame& src, double mean, double scale);

}  // namespace vapipe
