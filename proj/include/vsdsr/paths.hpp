#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>

namespace vsdsr {

// Default data root (NIQE model, corpora). Overridable via VSDSR_DATA.
inline std::filesystem::path default_data_root() {
    if (const char* env = std::getenv("VSDSR_DATA")) return env;
    return "data";
}

// Run-directory layout, shared by the pipeline, the evaluator, and the tests.
inline constexpr const char* kRunConfigFile = "config.json";
inline constexpr const char* kRunFieldFile = "field_sr.bin";
inline constexpr const char* kRunStatusFile = "status.json";
inline constexpr const char* kRunReportFile = "report.json";
inline constexpr const char* kRunLockFile = ".lock";
inline constexpr const char* kCheckpointDir = "checkpoints";

inline std::string round_dir_name(int round) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "round_%02d", round);
    return buf;
}

inline std::string field_round_name(int round) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "field_round%02d.bin", round);
    return buf;
}

inline std::string adapters_round_name(int round) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "adapters_round%02d.bin", round);
    return buf;
}

inline std::string lora_opt_round_name(int round) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "lora_opt_round%02d.bin", round);
    return buf;
}

inline std::string view_png_name(size_t view) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04zu.png", view);
    return buf;
}

inline std::string view_trace_name(size_t view) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04zu.csv", view);
    return buf;
}

} // namespace vsdsr
