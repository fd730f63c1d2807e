#pragma once

#include <string>
#include <vector>

#include "vapipe/frame.hpp"

namespace vapipe {

enum class ConverterKind { kDetectionOutput, kLabel, kRaw };

const char* converter_kind_name(ConverterKind kind);

struct OutputConverter {
    ConverterKind kind = ConverterKind::kRaw;
    std::string attribute_name;  // label kind only

    bool operator==(const OutputConverter&) const = default;
};

struct ModelProcInput {
    int width = 0;
    int height = 0;
    std::string format = "BGRP";
    double mean = 0.0;
    double scale = 1.0;

    bool operator==(const ModelProcInput&) const = default;
};

/// Declarative pre/post-processing spec for one model: how frames are
/// prepared for its input and how its output tensor turns into metadata.
struct ModelProc {
    std::string model_name;
    ModelProcInput input;
    OutputConverter output;
    std::vector<std::string> labels;
    double threshold = 0.5;  // detection only

    bool operator==(const ModelProc&) const = default;
};

/// Parses a model_proc JSON document and applies defaults
/// (mean=0, scale=1, threshold=0.5). Throws std::invalid_argument on
/// missing input dims, unknown converter kind, threshold outside [0,1],
/// or a label converter without labels.
ModelProc parse_model_proc(const std::string& text);

ModelProc load_model_proc(const std::string& path);

/// Canonical JSON rendering; parse(serialize(mp)) == mp.
std::string serialize_model_proc(const ModelProc& mp);

/// Decodes an [N,7] or [1,1,N,7] detection tensor: rows are
/// [image_id, label_id, confidence, x_min, y_min, x_max, y_max].
/// image_id < 0 terminates, sub-threshold and NaN rows are dropped,
/// coordinates are ordered and clamped into [0,1].
std::vector<DetectionROI> decode_detection_output(const Tensor& t, const ModelProc& mp);

/// Argmax over a flat score vector (ties -> lowest index). The vector
/// length must equal the label count.
ClassificationResult decode_label(const Tensor& t, const ModelProc& mp);

}  // namespace vapipe
