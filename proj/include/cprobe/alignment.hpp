#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cprobe/behavior.hpp"
#include "cprobe/norms.hpp"
#include "cprobe/stats.hpp"

namespace cprobe {

struct RatingRecord {
    std::string model_id;
    std::string context_id;
    std::string word;
    double rating = 0.0;
};

// Evenly spaced rating support min, min + step, ..., max.
class RatingGrid {
public:
    RatingGrid(double min, double max, double step);

    double min() const noexcept { return min_; }
    double max() const noexcept { return max_; }
    double step() const noexcept { return step_; }
    std::size_t size() const noexcept { return n_; }
    double point(std::size_t k) const noexcept { return min_ + static_cast<double>(k) * step_; }
    std::vector<double> points() const;

    // Nearest grid index; ratings outside [min, max] are rejected.
    std::size_t snap(double rating) const;

private:
    double min_, max_, step_;
    std::size_t n_;
};

// Parses "min:max:step".
RatingGrid parse_grid(std::string_view text);

struct RatingDistribution {
    std::vector<double> support;
    std::vector<double> probs;
};

// Adds `epsilon` to every cell and renormalises. epsilon = 0 leaves p unchanged.
void smooth(RatingDistribution& dist, double epsilon);

// Empirical distribution of ratings snapped to the grid. Throws InvalidArgument
// when fewer than `min_contexts` ratings are given.
RatingDistribution model_distribution(std::span<const double> ratings, const RatingGrid& grid, double epsilon = 1e-6,
                                      std::size_t min_contexts = 3);

// N(mean, sd^2) integrated over grid cells (edges at midpoints, outer cells
// take the tails). sd = 0 gives a point mass at the nearest grid point.
RatingDistribution human_distribution(const NormEntry& entry, const RatingGrid& grid, double epsilon = 1e-6);

// 0.5 [KL(p||q) + KL(q||p)] in nats.
double sym_kl(const RatingDistribution& p, const RatingDistribution& q);

struct WordAlignment {
    double human_mean = 0.0;
    double divergence = 0.0;
    std::size_t contexts = 0;
};

struct AlignmentFit {
    stats::OlsResult ols;
    BinnedSeries binned;  // mean divergence per bin
};

// OLS of per-bin mean divergence on bin center over occupied bins.
AlignmentFit binned_divergence_regression(const std::map<std::string, WordAlignment>& per_word, const BinSpec& bins);

struct AlignmentOptions {
    double epsilon = 1e-6;
    std::size_t min_contexts = 3;
    double bin_width = 0.5;
    // When set, model ratings are mapped linearly from this scale onto the grid range.
    std::optional<Scale> model_scale;
};

struct AlignmentResult {
    std::string model_id;
    std::map<std::string, WordAlignment> per_word;
    AlignmentFit fit;
    double mean_divergence = 0.0;
    std::size_t skipped_few_contexts = 0;
    std::size_t skipped_no_norms = 0;
};

AlignmentResult align_ratings(std::span<const RatingRecord> records, const NormsTable& norms, const RatingGrid& grid,
                              const AlignmentOptions& options = {});

std::vector<RatingRecord> read_ratings_jsonl(std::istream& in, const std::string& source_name = "<stream>");
std::vector<RatingRecord> read_ratings_jsonl_file(const std::filesystem::path& path);

}  // namespace cprobe
