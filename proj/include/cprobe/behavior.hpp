#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cprobe/norms.hpp"

namespace cprobe {

struct QARecord {
    std::string model_id;
    std::string dataset;
    std::string question_id;
    std::string question_text;
    bool correct = false;
    // Filled by the norms scorer unless the input already carried it.
    std::optional<double> sentence_concreteness;
};

// Equal-width bins over [lo, hi]. Bin k is [lo + k w, lo + (k+1) w); the last
// bin is closed on the right.
class BinSpec {
public:
    // Placement snaps values within this fraction of a bin width onto the edge.
    static constexpr double kEdgeTolerance = 1e-9;

    double lo() const noexcept { return lo_; }
    double hi() const noexcept { return hi_; }
    double width() const noexcept { return width_; }
    std::size_t size() const noexcept { return n_; }
    double center(std::size_t k) const noexcept { return lo_ + (static_cast<double>(k) + 0.5) * width_; }
    std::vector<double> centers() const;

    // Bin index, or nullopt when x falls outside [lo, hi].
    std::optional<std::size_t> locate(double x) const noexcept;

    friend BinSpec make_bins(double lo, double hi, double width);

private:
    double lo_ = 0.0;
    double hi_ = 0.0;
    double width_ = 1.0;
    std::size_t n_ = 0;
};

// Throws InvalidArgument unless lo < hi, width > 0 and (hi - lo) / width is an
// integer within 1e-9.
BinSpec make_bins(double lo, double hi, double width);

// Parses "lo:hi:width".
BinSpec parse_bins(std::string_view text);

struct BinnedSeries {
    std::vector<double> bin_centers;
    std::vector<std::optional<double>> values;  // nullopt where the bin is empty
    std::vector<std::size_t> counts;
    std::size_t out_of_range = 0;

    std::size_t total() const noexcept;
};

// Per-bin accuracy for the records of a single model. Records must have their
// sentence concreteness filled.
BinnedSeries bin_accuracy(std::span<const QARecord> records, const BinSpec& bins);

// Count-weighted merge of two binnings on the same grid.
BinnedSeries merge_binned(const BinnedSeries& a, const BinnedSeries& b);

// value[k] = vision[k] - baseline[k]; undefined where either side is empty.
BinnedSeries accuracy_gap(const BinnedSeries& vision, const BinnedSeries& baseline);

struct GapTrend {
    double spearman_rho = 0.0;
    std::size_t n_bins = 0;
};

GapTrend gap_trend(const BinnedSeries& gaps);

// Overall accuracy per dataset (for the per-dataset table).
std::map<std::string, double> dataset_accuracy(std::span<const QARecord> records);

// JSON-lines reader. Rejects duplicate (model_id, dataset, question_id) keys.
std::vector<QARecord> read_qa_jsonl(std::istream& in, const std::string& source_name = "<stream>");
std::vector<QARecord> read_qa_jsonl_file(const std::filesystem::path& path);

// Scores every record lacking a concreteness value.
void fill_concreteness(std::span<QARecord> records, const NormsTable& norms, const WordSet& function_words,
                       const WordSet* named_entities = nullptr, const SentenceScoring& options = {});

}  // namespace cprobe
