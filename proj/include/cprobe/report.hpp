#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "cprobe/alignment.hpp"
#include "cprobe/attention.hpp"
#include "cprobe/behavior.hpp"
#include "cprobe/geometry.hpp"

namespace cprobe {

inline constexpr const char* kReportSchema = "concreteness-probe/1";

// Section payloads hold one entry per model of the pair.
template <class T>
struct ModelPair {
    T baseline;
    T vision;
};

struct DatasetAccuracy {
    double accuracy = 0.0;
    std::size_t questions = 0;
};

struct BehaviorSection {
    ModelPair<BinnedSeries> accuracy;
    BinnedSeries gap;
    GapTrend trend;
    ModelPair<std::map<std::string, DatasetAccuracy>> per_dataset;
    ModelPair<double> pooled_accuracy{};
};

struct GeometryModel {
    DispersionResult dispersion;
    std::size_t words = 0;
    std::size_t words_without_norms = 0;
    double final_kl = 0.0;
    std::size_t uncalibrated_rows = 0;
};

struct GeometrySection {
    ModelPair<GeometryModel> models;
};

struct AttentionModel {
    std::vector<LayerCorrelation> layers;
    double mean_r = 0.0;
    std::optional<SigmoidFit> sigmoid;
    std::string sigmoid_note;  // why the fit is missing
    std::size_t sequences = 0;
    std::size_t tokens = 0;
};

struct AttentionSection {
    ModelPair<AttentionModel> models;
};

struct AlignmentSection {
    ModelPair<AlignmentResult> models;
};

struct DiagnosticsReport {
    std::string run_id;
    std::string baseline_id;
    std::string vision_id;
    std::optional<BehaviorSection> behavior;
    std::optional<GeometrySection> geometry;
    std::optional<AttentionSection> attention;
    std::optional<AlignmentSection> alignment;
    std::map<std::string, std::string> skipped;  // section name -> reason
    nlohmann::json config_echo = nlohmann::json::object();
};

inline const std::vector<std::string>& report_section_names() {
    static const std::vector<std::string> names{"behavior", "geometry", "attention", "alignment"};
    return names;
}

// Assembles a report. Sections left empty must be listed in `skipped`; a
// report with no completed section is rejected with InvalidArgument.
DiagnosticsReport build_report(std::string run_id, std::string baseline_id, std::string vision_id,
                               std::optional<BehaviorSection> behavior, std::optional<GeometrySection> geometry,
                               std::optional<AttentionSection> attention, std::optional<AlignmentSection> alignment,
                               std::map<std::string, std::string> skipped, nlohmann::json config_echo);

// Rounds to 6 significant digits; non-finite values become null.
nlohmann::json report_number(double x);

// Sorted keys, floats at 6 significant digits.
nlohmann::json report_to_json(const DiagnosticsReport& report);
std::string dump_report(const DiagnosticsReport& report);

// Writes accuracy_by_bin, dispersion_by_bin, layer_correlation, alignment_by_bin and
// accuracy_by_dataset (CSV + SVG) for the sections present. Returns written paths.
std::vector<std::filesystem::path> emit_figures(const DiagnosticsReport& report, const std::filesystem::path& dir);

}  // namespace cprobe
