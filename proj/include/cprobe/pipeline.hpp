#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "cprobe/config.hpp"
#include "cprobe/report.hpp"

namespace cprobe {

// Every parameter of a report run. Paths are relative to the run directory.
struct RunSettings {
    std::string run_id = "run";
    std::string baseline_id = "baseline";
    std::string vision_id = "vision";

    std::string norms_path = "norms.csv";
    NormsColumns norms_columns;
    Scale scale;
    std::string function_words_path;  // empty: built-in list
    std::string named_entities_path;  // empty: none
    SentenceScoring scoring;

    std::string bins = "1.8:4.8:0.6";

    TsneParams tsne;
    DispersionOptions dispersion;

    EntropyNormalization normalization = EntropyNormalization::raw;
    CorrelationOptions correlation;

    std::string grid;  // empty: scale min to scale max in steps of 0.1
    AlignmentOptions alignment;

    // Keys under "fixture." are carried through to the config echo untouched.
    std::map<std::string, std::string> passthrough;

    std::string grid_text() const;
};

// Unknown keys (outside the "fixture." namespace) are rejected.
RunSettings settings_from_config(const KeyValueConfig& config);
KeyValueConfig settings_to_config(const RunSettings& settings);
nlohmann::json settings_to_json(const RunSettings& settings);

std::string to_string(EntropyNormalization n);
EntropyNormalization parse_normalization(std::string_view text);
std::string to_string(DispersionMetric m);
DispersionMetric parse_metric(std::string_view text);

// Section analyses shared by the subcommands and the report run.
BehaviorSection analyze_behavior(std::span<const QARecord> baseline, std::span<const QARecord> vision,
                                 const BinSpec& bins);
GeometryModel summarize_geometry(const GeometryOutcome& outcome);
AttentionModel analyze_attention(std::span<const EntropySheet> sheets, const CorrelationOptions& options);

// Loads the run directory (qa/, embeddings/, attention/, ratings/) and runs
// every section whose inputs exist. Missing inputs mark the section skipped.
DiagnosticsReport run_report(const std::filesystem::path& run_dir, const RunSettings& settings, unsigned threads = 1);

}  // namespace cprobe
