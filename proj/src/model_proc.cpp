#include "vapipe/model_proc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace vapipe {

const char* converter_kind_name(ConverterKind kind) {
    switch (kind) {
    case ConverterKind::kDetectionOutput:
        return "detection_output";
    case ConverterKind::kLabel:
        return "label";
    case ConverterKind::kRaw:
        return "raw";
    }
    return "?";
}

namespace {

ConverterKind converter_kind_from_name(const std::string& name) {
    if (name == "detection_output") return ConverterKind::kDetectionOutput;
    if (name == "label") return ConverterKind::kLabel;
    if (name == "raw") return ConverterKind::kRaw;
    throw std::invalid_argument("model_proc: unknown converter kind '" + name + "'");
}

void validate_model_proc(const ModelProc& mp) {
    if (mp.input.width < 1 || mp.input.height < 1) {
        throw std::invalid_argument("model_proc: input dims must be >= 1");
    }
    if (mp.input.format != "BGRP") {
        throw std::invalid_argument("model_proc: unsupported input format '" +
                                    mp.input.format + "'");
    }
    if (!(mp.threshold >= 0.0 && mp.threshold <= 1.0)) {
        throw std::invalid_argument("model_proc: threshold " + std::to_string(mp.threshold) +
                                    " outside [0,1]");
    }
    if (mp.output.kind == ConverterKind::kLabel && mp.labels.empty()) {
        throw std::invalid_argument("model_proc: label converter requires a labels list");
    }
}

}  // namespace

ModelProc parse_model_proc(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("model_proc: malformed document: ") + e.what());
    }
    if (!doc.is_object()) {
        throw std::invalid_argument("model_proc: document must be an object");
    }

    ModelProc mp;
    mp.model_name = doc.value("model_name", std::string());
    if (mp.model_name.empty()) {
        throw std::invalid_argument("model_proc: missing model_name");
    }
    if (!doc.contains("input") || !doc["input"].is_object()) {
        throw std::invalid_argument("model_proc: missing input section");
    }
    const auto& in = doc["input"];
    if (!in.contains("width") || !in.contains("height")) {
        throw std::invalid_argument("model_proc: missing input width/height");
    }
    mp.input.width = in["width"].get<int>();
    mp.input.height = in["height"].get<int>();
    mp.input.format = in.value("format", std::string("BGRP"));
    mp.input.mean = in.value("mean", 0.0);
    mp.input.scale = in.value("scale", 1.0);
    if (mp.input.scale == 0.0) {
        throw std::invalid_argument("model_proc: input scale must be non-zero");
    }

    if (!doc.contains("output") || !doc["output"].is_object()) {
        throw std::invalid_argument("model_proc: missing output section");
    }
    const auto& out = doc["output"];
    if (!out.contains("converter")) {
        throw std::invalid_argument("model_proc: missing output converter");
    }
    mp.output.kind = converter_kind_from_name(out["converter"].get<std::string>());
    mp.output.attribute_name = out.value("attribute_name", std::string());

    if (doc.contains("labels")) {
        for (const auto& l : doc["labels"]) {
            mp.labels.push_back(l.get<std::string>());
        }
    }
    mp.threshold = doc.value("threshold", 0.5);

    validate_model_proc(mp);
    return mp;
}

ModelProc load_model_proc(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::invalid_argument("model_proc: cannot open '" + path + "'");
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_model_proc(buf.str());
}

std::string serialize_model_proc(const ModelProc& mp) {
    nlohmann::ordered_json doc;
    doc["model_name"] = mp.model_name;
    doc["threshold"] = mp.threshold;
    doc["input"] = {{"width", mp.input.width},
                    {"height", mp.input.height},
                    {"format", mp.input.format},
                    {"mean", mp.input.mean},
                    {"scale", mp.input.scale}};
    doc["output"] = nlohmann::ordered_json::object();
    doc["output"]["converter"] = converter_kind_name(mp.output.kind);
    if (!mp.output.attribute_name.empty()) {
        doc["output"]["attribute_name"] = mp.output.attribute_name;
    }
    doc["labels"] = mp.labels;
    return doc.dump(2) + "\n";
}

std::vector<DetectionROI> decode_detection_output(const Tensor& t, const ModelProc& mp) {
    validate_tensor(t);
    bool shape_ok = (t.dims.size() == 2 && t.dims[1] == 7) ||
                    (t.dims.size() == 4 && t.dims[0] == 1 && t.dims[1] == 1 && t.dims[3] == 7);
    if (!shape_ok) {
        std::ostringstream os;
        os << "detection output must be [N,7] or [1,1,N,7], got [";
        for (size_t i = 0; i < t.dims.size(); ++i) {
            os << (i ? "," : "") << t.dims[i];
        }
        os << "]";
        throw std::invalid_argument(os.str());
    }

    int64_t rows = t.dims.size() == 2 ? t.dims[0] : t.dims[2];
    std::vector<DetectionROI> result;
    for (int64_t r = 0; r < rows; ++r) {
        const float* rec = t.data.data() + r * 7;
        if (std::any_of(rec, rec + 7, [](float v) { return std::isnan(v); })) {
            continue;
        }
        if (rec[0] < 0.f) {
            break;
        }
        float confidence = rec[2];
        if (confidence < mp.threshold) {
            continue;
        }
        DetectionROI roi;
        roi.confidence = std::clamp(confidence, 0.f, 1.f);
        roi.label_id = std::max(0, static_cast<int>(rec[1]));
        if (roi.label_id < static_cast<int>(mp.labels.size())) {
            roi.label = mp.labels[static_cast<size_t>(roi.label_id)];
        }
        auto [x0, x1] = std::minmax(rec[3], rec[5]);
        auto [y0, y1] = std::minmax(rec[4], rec[6]);
        roi.bbox.x_min = std::clamp(x0, 0.f, 1.f);
        roi.bbox.x_max = std::clamp(x1, 0.f, 1.f);
        roi.bbox.y_min = std::clamp(y0, 0.f, 1.f);
        roi.bbox.y_max = std::clamp(y1, 0.f, 1.f);
        roi.detector = mp.model_name;
        result.push_back(std::move(roi));
    }
    return result;
}

ClassificationResult decode_label(const Tensor& t, const ModelProc& mp) {
    validate_tensor(t);
    if (tensor_element_count(t) != static_cast<int64_t>(mp.labels.size())) {
        std::ostringstream os;
        os << "label output length " << tensor_element_count(t)
           << " does not match " << mp.labels.size() << " labels";
        throw std::invalid_argument(os.str());
    }
    size_t best = 0;
    for (size_t i = 1; i < t.data.size(); ++i) {
        if (t.data[i] > t.data[best]) {
            best = i;
        }
    }
    ClassificationResult res;
    res.attribute_name = mp.output.attribute_name;
    res.label_id = static_cast<int>(best);
    res.label = mp.labels[best];
    res.confidence = t.data[best];
    res.classifier = mp.model_name;
    return res;
}

}  // namespace vapipe
