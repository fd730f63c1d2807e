#include "vapipe/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace vapipe {

namespace {

std::string fmt_ms(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

std::string fmt_util(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

std::string json_str(const std::string& s) {
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"' || ch == '\\') {
            out += '\\';
        }
        out += ch;
    }
    out += '"';
    return out;
}

}  // namespace

double utilization(double busy_request_ms, int nireq, double wall_ms) {
    if (wall_ms <= 0.0 || nireq < 1) {
        return 0.0;
    }
    return std::clamp(busy_request_ms / (nireq * wall_ms), 0.0, 1.0);
}

RunReport finalize_report(const RawRunData& raw) {
    RunReport report;
    report.wall_ms = raw.wall_ms;
    report.frames = raw.frames;
    report.fps = raw.wall_ms > 0 ? double(raw.frames) / (raw.wall_ms / 1000.0) : 0.0;
    report.partial = raw.partial;
    report.error = raw.error;
    report.stages = raw.stages;
    report.peak_in_flight = raw.peak_in_flight;

    for (const auto& b : raw.backends) {
        BackendReport br;
        br.stage = b.stage;
        br.model = b.model;
        br.device = b.device;
        br.nireq = b.nireq;
        br.configs = b.configs;
        br.submissions = b.submissions;
        br.busy_request_ms = b.busy_request_ms;
        br.utilization = utilization(b.busy_request_ms, b.nireq, raw.wall_ms);
        report.backends.push_back(std::move(br));
    }

    for (const auto& s : report.stages) {
        // Sources report no input and sinks emit nothing; only transforming
        // stages are held to frames_out == frames_in.
        bool terminal = s.frames_out == 0 && s.name.find("sink") != std::string::npos;
        bool source = s.frames_in == 0 && s.name.find("source") != std::string::npos;
        if (!terminal && !source && s.frames_in != s.frames_out) {
            std::ostringstream os;
            os << "stage '" << s.name << "' consumed " << s.frames_in << " frames but emitted "
               << s.frames_out;
            report.warnings.push_back(os.str());
        }
    }
    return report;
}

std::string report_to_json(const RunReport& report) {
    std::string out = "{";
    out += "\"wall_ms\":" + fmt_ms(report.wall_ms);
    out += ",\"frames\":" + std::to_string(report.frames);
    out += ",\"fps\":" + fmt_ms(report.fps);
    out += ",\"partial\":" + std::string(report.partial ? "true" : "false");
    out += ",\"error\":" + json_str(report.error);
    out += ",\"peak_in_flight\":" + std::to_string(report.peak_in_flight);
    out += ",\"stages\":[";
    for (size_t i = 0; i < report.stages.size(); ++i) {
        const auto& s = report.stages[i];
        if (i) out += ',';
        out += "{\"name\":" + json_str(s.name);
        out += ",\"frames_in\":" + std::to_string(s.frames_in);
        out += ",\"frames_out\":" + std::to_string(s.frames_out);
        out += ",\"busy_ms\":" + fmt_ms(s.busy_ms) + "}";
    }
    out += "],\"backends\":[";
    for (size_t i = 0; i < report.backends.size(); ++i) {
        const auto& b = report.backends[i];
        if (i) out += ',';
        out += "{\"stage\":" + json_str(b.stage);
        out += ",\"model\":" + json_str(b.model);
        out += ",\"device\":" + json_str(b.device);
        out += ",\"nireq\":" + std::to_string(b.nireq);
        out += ",\"configs\":[";
        for (size_t c = 0; c < b.configs.size(); ++c) {
            if (c) out += ',';
            out += json_str(b.configs[c].first + "=" + b.configs[c].second);
        }
        out += "],\"submissions\":" + std::to_string(b.submissions);
        out += ",\"busy_request_ms\":" + fmt_ms(b.busy_request_ms);
        out += ",\"utilization\":" + fmt_util(b.utilization) + "}";
    }
    out += "],\"warnings\":[";
    for (size_t i = 0; i < report.warnings.size(); ++i) {
        if (i) out += ',';
        out += json_str(report.warnings[i]);
    }
    out += "]}\n";
    return out;
}

std::string report_to_csv(const RunReport& report) {
    std::string out = "stage,frames_in,frames_out,busy_ms\n";
    for (const auto& s : report.stages) {
        out += s.name + "," + std::to_string(s.frames_in) + "," + std::to_string(s.frames_out) +
               "," + fmt_ms(s.busy_ms) + "\n";
    }
    return out;
}

std::string report_summary(const RunReport& report) {
    std::ostringstream os;
    os << "frames: " << report.frames << "\n";
    os << "wall_ms: " << fmt_ms(report.wall_ms) << "\n";
    os << "fps: " << fmt_ms(report.fps) << "\n";
    if (report.partial) {
        os << "partial: true\n";
    }
    if (!report.error.empty()) {
        os << "error: " << report.error << "\n";
    }
    for (const auto& s : report.stages) {
        os << "stage " << s.name << ": in=" << s.frames_in << " out=" << s.frames_out
           << " busy_ms=" << fmt_ms(s.busy_ms) << "\n";
    }
    for (const auto& b : report.backends) {
        os << "backend " << b.stage << " (" << b.model << "): nireq=" << b.nireq
           << " submissions=" << b.submissions << " busy_request_ms=" << fmt_ms(b.busy_request_ms)
           << " utilization=" << fmt_util(b.utilization) << "\n";
    }
    for (const auto& w : report.warnings) {
        os << "warning: " << w << "\n";
    }
    return os.str();
}

}  // namespace vapipe
