// vapipe command line front end.
//
// Mirrors the ffmpeg-style invocation:
//   vapipe -i synth:300x640x480@30 \
//          -vf format=to=bgr24,detect=model=M1:nireq=8,classify=model=M2:nireq=8 \
//          -mode parallel -publish file:out.ndjson -metrics report.json \
//          -models scenarios/models.json -model_proc_dir scenarios/model_proc

#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "vapipe/graph.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitPipelineError = 1;
constexpr int kExitUsageError = 2;

void print_usage(std::ostream& os) {
    os << "usage: vapipe -i INPUT [options]\n"
          "\n"
          "  -i INPUT            y4m file path, or synth:COUNTxWIDTHxHEIGHT@FPS\n"
          "                      (FPS is an integer or NUM:DEN rational)\n"
          "  -vf CHAIN           filter chain: name=k=v:k=v,name=... with filters\n"
          "                      detect, classify, format; repeat -vf for extra\n"
          "                      branches (requires -abr_pipeline)\n"
          "  -abr_pipeline       fan the source out to every -vf branch\n"
          "  -mode MODE          serial | parallel (default serial)\n"
          "  -publish DEST       file:PATH | broker:HOST:PORT[:TOPIC] | null\n"
          "  -metrics PATH       write the run report (JSON, or CSV if PATH\n"
          "                      ends in .csv)\n"
          "  -models PATH        synthetic model spec file (JSON)\n"
          "  -model_proc_dir DIR directory of <model>.json model_proc files\n"
          "  -queue_capacity N   bounded hand-off queue size (default 4)\n"
          "  -h, --help          this text\n";
}

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CliArgs {
    std::string input;
    std::vector<std::string> chains;
    bool abr = false;
    std::string mode = "serial";
    std::string publish = "null";
    std::string metrics_path;
    std::string models_path;
    std::string model_proc_dir;
    size_t queue_capacity = 4;
    bool help = false;
};

CliArgs parse_args(int argc, char** argv) {
    CliArgs args;
    auto value_of = [&](int& i, const char* flag) -> std::string {
        if (i + 1 >= argc) {
            throw UsageError(std::string(flag) + " requires a value");
        }
        return argv[++i];
    };
    for (int i = 1; i < argc; ++i) {
        std::string flag = argv[i];
        if (flag == "-i") {
            args.input = value_of(i, "-i");
        } else if (flag == "-vf") {
            args.chains.push_back(value_of(i, "-vf"));
        } else if (flag == "-abr_pipeline") {
            args.abr = true;
        } else if (flag == "-mode") {
            args.mode = value_of(i, "-mode");
        } else if (flag == "-publish") {
            args.publish = value_of(i, "-publish");
        } else if (flag == "-metrics") {
            args.metrics_path = value_of(i, "-metrics");
        } else if (flag == "-models") {
            args.models_path = value_of(i, "-models");
        } else if (flag == "-model_proc_dir") {
            args.model_proc_dir = value_of(i, "-model_proc_dir");
        } else if (flag == "-queue_capacity") {
            std::string v = value_of(i, "-queue_capacity");
            try {
                args.queue_capacity = std::stoul(v);
            } catch (const std::exception&) {
                throw UsageError("-queue_capacity: '" + v + "' is not a number");
            }
            if (args.queue_capacity < 1) {
                throw UsageError("-queue_capacity must be >= 1");
            }
        } else if (flag == "-h" || flag == "--help") {
            args.help = true;
        } else {
            throw UsageError("unknown flag '" + flag + "'");
        }
    }
    return args;
}

vapipe::SourceSpec parse_input_spec(const std::string& input) {
    vapipe::SourceSpec spec;
    if (input.rfind("synth:", 0) != 0) {
        spec.kind = vapipe::SourceSpec::Kind::kY4m;
        spec.path = input;
        return spec;
    }
    // synth:COUNTxWIDTHxHEIGHT@FPS
    spec.kind = vapipe::SourceSpec::Kind::kSynth;
    std::string body = input.substr(6);
    size_t at = body.find('@');
    std::string dims = at == std::string::npos ? body : body.substr(0, at);
    int64_t vals[3] = {0, 0, 0};
    size_t pos = 0;
    for (int v = 0; v < 3; ++v) {
        size_t x = v < 2 ? dims.find('x', pos) : dims.size();
        if (x == std::string::npos) {
            throw UsageError("-i: synth spec needs COUNTxWIDTHxHEIGHT, got '" + input + "'");
        }
        std::string part = dims.substr(pos, x - pos);
        if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) {
            throw UsageError("-i: bad synth dimension '" + part + "'");
        }
        vals[v] = std::stoll(part);
        pos = x + 1;
    }
    spec.count = vals[0];
    spec.width = static_cast<int>(vals[1]);
    spec.height = static_cast<int>(vals[2]);
    if (at != std::string::npos) {
        std::string fps = body.substr(at + 1);
        size_t colon = fps.find(':');
        try {
            if (colon == std::string::npos) {
                spec.fps_num = std::stoi(fps);
                spec.fps_den = 1;
            } else {
                spec.fps_num = std::stoi(fps.substr(0, colon));
                spec.fps_den = std::stoi(fps.substr(colon + 1));
            }
        } catch (const std::exception&) {
            throw UsageError("-i: bad synth frame rate '" + fps + "'");
        }
        if (spec.fps_num <= 0 || spec.fps_den <= 0) {
            throw UsageError("-i: synth frame rate must be positive");
        }
    }
    return spec;
}

vapipe::PublishSpec parse_publish_spec(const std::string& text) {
    vapipe::PublishSpec spec;
    if (text == "null") {
        return spec;
    }
    if (text.rfind("file:", 0) == 0) {
        spec.kind = vapipe::PublishSpec::Kind::kFile;
        spec.path = text.substr(5);
        if (spec.path.empty()) {
            throw UsageError("-publish file: needs a path");
        }
        return spec;
    }
    if (text.rfind("broker:", 0) == 0) {
        spec.kind = vapipe::PublishSpec::Kind::kBroker;
        std::string body = text.substr(7);
        size_t c1 = body.find(':');
        if (c1 == std::string::npos || c1 == 0) {
            throw UsageError("-publish broker: needs HOST:PORT[:TOPIC]");
        }
        spec.host = body.substr(0, c1);
        size_t c2 = body.find(':', c1 + 1);
        std::string port = body.substr(c1 + 1, c2 == std::string::npos ? std::string::npos
                                                                       : c2 - c1 - 1);
        try {
            spec.port = std::stoi(port);
        } catch (const std::exception&) {
            throw UsageError("-publish broker: bad port '" + port + "'");
        }
        if (c2 != std::string::npos && c2 + 1 < body.size()) {
            spec.topic = body.substr(c2 + 1);
        }
        return spec;
    }
    throw UsageError("-publish: expected file:PATH, broker:HOST:PORT[:TOPIC] or null, got '" +
                     text + "'");
}

}  // namespace

int main(int argc, char** argv) {
    CliArgs args;
    vapipe::PipelineSpec spec;
    try {
        args = parse_args(argc, argv);
        if (args.help) {
            print_usage(std::cout);
            return kExitOk;
        }
        if (args.input.empty()) {
            throw UsageError("-i is required");
        }
        if (args.chains.size() > 1 && !args.abr) {
            throw UsageError("multiple -vf branches require -abr_pipeline");
        }
        if (args.mode != "serial" && args.mode != "parallel") {
            throw UsageError("-mode must be serial or parallel, got '" + args.mode + "'");
        }

        spec.source = parse_input_spec(args.input);
        spec.branches.clear();
        if (args.chains.empty()) {
            spec.branches.push_back({});
        } else {
            for (const auto& chain : args.chains) {
                spec.branches.push_back(vapipe::parse_chain(chain));
            }
        }
        spec.publish = parse_publish_spec(args.publish);
        spec.mode = args.mode == "serial" ? vapipe::ExecMode::kSerial
                                          : vapipe::ExecMode::kParallel;
        spec.abr = args.abr;
        spec.queue_capacity = args.queue_capacity;
    } catch (const vapipe::ChainParseError& e) {
        std::cerr << "vapipe: -vf: " << e.what() << "\n";
        return kExitUsageError;
    } catch (const UsageError& e) {
        std::cerr << "vapipe: " << e.what() << "\n";
        print_usage(std::cerr);
        return kExitUsageError;
    }

    try {
        vapipe::ModelRegistry registry;
        if (!args.models_path.empty()) {
            registry.models = vapipe::load_synthetic_models(args.models_path);
        }
        registry.model_proc_dir = args.model_proc_dir;

        vapipe::Pipeline pipeline = vapipe::build(spec, registry);
        vapipe::RunReport report = spec.mode == vapipe::ExecMode::kSerial
                                       ? vapipe::run_serial(pipeline)
                                       : vapipe::run_parallel(pipeline);

        if (!args.metrics_path.empty()) {
            std::ofstream out(args.metrics_path, std::ios::binary | std::ios::trunc);
            if (!out) {
                throw std::runtime_error("cannot write metrics file '" + args.metrics_path + "'");
            }
            bool csv = args.metrics_path.size() > 4 &&
                       args.metrics_path.rfind(".csv") == args.metrics_path.size() - 4;
            out << (csv ? vapipe::report_to_csv(report) : vapipe::report_to_json(report));
        }

        std::cout << vapipe::report_summary(report);
        if (!report.error.empty()) {
            std::cerr << "vapipe: pipeline failed: " << report.error << "\n";
            return kExitPipelineError;
        }
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "vapipe: " << e.what() << "\n";
        return kExitPipelineError;
    }
}
