#include "cprobe/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>

#include <fmt/format.h>
#include "json.hpp"

#include "text_util.hpp"

namespace cprobe {

RatingGrid::RatingGrid(double min, double max, double step) : min_(min), max_(max), step_(step), n_(0) {
    if (!std::isfinite(min) || !std::isfinite(max) || !(min < max)) {
        throw InvalidArgument(fmt::format("rating grid: need min < max, got {}:{}", min, max));
    }
    if (!(step > 0.0) || !std::isfinite(step)) throw InvalidArgument(fmt::format("rating grid: step must be > 0, got {}", step));
    const double cells = std::round((max - min) / step);
    if (std::abs(cells * step - (max - min)) > 1e-9) {
        throw InvalidArgument(fmt::format("rating grid: span {} is not a multiple of step {}", max - min, step));
    }
    n_ = static_cast<std::size_t>(cells) + 1;
}

std::vector<double> RatingGrid::points() const {
    std::vector<double> out(n_);
    for (std::size_t k = 0; k < n_; ++k) out[k] = point(k);
    return out;
}

std::size_t RatingGrid::snap(double rating) const {
    if (!std::isfinite(rating) || rating < min_ - 1e-9 || rating > max_ + 1e-9) {
        throw InvalidArgument(fmt::format("rating {} outside grid [{}, {}]", rating, min_, max_));
    }
    const double k = std::round((rating - min_) / step_);
    return static_cast<std::size_t>(std::clamp(k, 0.0, static_cast<double>(n_ - 1)));
}

RatingGrid parse_grid(std::string_view text) {
    const auto parts = detail::parse_number_list(text, ':');
    if (!parts || parts->size() != 3) throw InvalidArgument(fmt::format("grid: expected min:max:step, got '{}'", text));
    return RatingGrid((*parts)[0], (*parts)[1], (*parts)[2]);
}

void smooth(RatingDistribution& dist, double epsilon) {
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw InvalidArgument("smoothing epsilon must be >= 0");
    stats::KahanSum total;
    for (double& p : dist.probs) {
        p += epsilon;
        total += p;
    }
    const double z = total.value();
    for (double& p : dist.probs) p /= z;
}

RatingDistribution model_distribution(std::span<const double> ratings, const RatingGrid& grid, double epsilon,
                                      std::size_t min_contexts) {
    if (ratings.size() < std::max<std::size_t>(min_contexts, 1)) {
        throw InvalidArgument(fmt::format("model_distribution: {} ratings, need at least {}", ratings.size(),
                                          std::max<std::size_t>(min_contexts, 1)));
    }
    RatingDistribution dist{grid.points(), std::vector<double>(grid.size(), 0.0)};
    for (double r : ratings) dist.probs[grid.snap(r)] += 1.0;
    const double n = static_cast<double>(ratings.size());
    for (double& p : dist.probs) p /= n;
    smooth(dist, epsilon);
    return dist;
}

namespace {

// P(Z > z) for a standard normal.
double upper_tail(double z) noexcept { return 0.5 * std::erfc(z / std::numbers::sqrt2); }

// Mass of N(mu, sd^2) on (lo, hi); infinite edges allowed. Uses the tail on
// the far side of the mean to avoid cancellation.
double gaussian_mass(double lo, double hi, double mu, double sd) noexcept {
    const double zl = (lo - mu) / sd;
    const double zh = (hi - mu) / sd;
    if (zl >= 0.0) return upper_tail(zl) - upper_tail(zh);
    if (zh <= 0.0) return upper_tail(-zh) - upper_tail(-zl);
    return 1.0 - upper_tail(-zl) - upper_tail(zh);
}

}  // namespace

RatingDistribution human_distribution(const NormEntry& entry, const RatingGrid& grid, double epsilon) {
    if (!(entry.sd >= 0.0) || !std::isfinite(entry.mean)) throw InvalidArgument("human_distribution: invalid norm entry");
    RatingDistribution dist{grid.points(), std::vector<double>(grid.size(), 0.0)};
    if (entry.sd == 0.0) {
        const double clamped = std::clamp(entry.mean, grid.min(), grid.max());
        dist.probs[grid.snap(clamped)] = 1.0;
    } else {
        const double inf = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < grid.size(); ++k) {
            const double lo = k == 0 ? -inf : grid.point(k) - 0.5 * grid.step();
            const double hi = k + 1 == grid.size() ? inf : grid.point(k) + 0.5 * grid.step();
            dist.probs[k] = std::max(0.0, gaussian_mass(lo, hi, entry.mean, entry.sd));
        }
        stats::KahanSum total;
        for (double p : dist.probs) total += p;
        for (double& p : dist.probs) p /= total.value();
    }
    smooth(dist, epsilon);
    return dist;
}

double sym_kl(const RatingDistribution& p, const RatingDistribution& q) {
    if (p.support.size() != q.support.size() || p.probs.size() != p.support.size() ||
        q.probs.size() != q.support.size()) {
        throw InvalidArgument("sym_kl: supports differ in size");
    }
    for (std::size_t k = 0; k < p.support.size(); ++k) {
        if (std::abs(p.support[k] - q.support[k]) > 1e-12) throw InvalidArgument("sym_kl: supports differ");
        if (!(p.probs[k] > 0.0) || !(q.probs[k] > 0.0)) {
            throw InvalidArgument(fmt::format("sym_kl: zero probability at support point {}", p.support[k]));
        }
    }
    // KL(p||q) + KL(q||p) = sum (p - q)(ln p - ln q); the product is unchanged
    // when p and q swap, so the result is exactly symmetric.
    stats::KahanSum s;
    for (std::size_t k = 0; k < p.probs.size(); ++k) {
        s += (p.probs[k] - q.probs[k]) * (std::log(p.probs[k]) - std::log(q.probs[k]));
    }
    return 0.5 * s.value();
}

AlignmentFit binned_divergence_regression(const std::map<std::string, WordAlignment>& per_word, const BinSpec& bins) {
    AlignmentFit fit;
    fit.binned.bin_centers = bins.centers();
    fit.binned.counts.assign(bins.size(), 0);
    fit.binned.values.resize(bins.size());
    std::vector<stats::KahanSum> sums(bins.size());
    for (const auto& [word, wa] : per_word) {
        const auto k = bins.locate(wa.human_mean);
        if (!k) {
            ++fit.binned.out_of_range;
            continue;
        }
        sums[*k] += wa.divergence;
        ++fit.binned.counts[*k];
    }
    std::vector<double> x, y;
    for (std::size_t k = 0; k < bins.size(); ++k) {
        if (fit.binned.counts[k] == 0) continue;
        const double m = sums[k].value() / static_cast<double>(fit.binned.counts[k]);
        fit.binned.values[k] = m;
        x.push_back(fit.binned.bin_centers[k]);
        y.push_back(m);
    }
    if (x.size() < 3) {
        throw InvalidArgument(fmt::format("binned_divergence_regression: need >= 3 occupied bins, have {}", x.size()));
    }
    fit.ols = stats::ols(x, y);
    return fit;
}

AlignmentResult align_ratings(std::span<const RatingRecord> records, const NormsTable& norms, const RatingGrid& grid,
                              const AlignmentOptions& options) {
    if (records.empty()) throw InvalidArgument("align: no rating records");
    AlignmentResult out;
    out.model_id = records.front().model_id;

    std::map<std::string, std::vector<double>> by_word;
    for (const RatingRecord& r : records) {
        if (r.model_id != out.model_id) {
            throw InvalidArgument(fmt::format("align: mixed model ids '{}' and '{}'", out.model_id, r.model_id));
        }
        double rating = r.rating;
        if (options.model_scale) {
            const Scale& s = *options.model_scale;
            rating = grid.min() + (rating - s.min) * (grid.max() - grid.min()) / (s.max - s.min);
        }
        const std::string key = to_lower(trim_punctuation(r.word));
        if (key.empty()) throw InvalidArgument(fmt::format("align: empty word in context '{}'", r.context_id));
        grid.snap(rating);  // range check
        by_word[key].push_back(rating);
    }

    for (const auto& [word, ratings] : by_word) {
        const NormEntry* entry = norms.find(word);
        if (entry == nullptr) {
            ++out.skipped_no_norms;
            continue;
        }
        if (ratings.size() < options.min_contexts) {
            ++out.skipped_few_contexts;
            continue;
        }
        const RatingDistribution pm = model_distribution(ratings, grid, options.epsilon, options.min_contexts);
        const RatingDistribution ph = human_distribution(*entry, grid, options.epsilon);
        out.per_word[word] = {entry->mean, sym_kl(pm, ph), ratings.size()};
    }
    if (out.per_word.empty()) throw InvalidArgument("align: no word has both norms and enough ratings");

    stats::KahanSum total;
    for (const auto& [word, wa] : out.per_word) total += wa.divergence;
    out.mean_divergence = total.value() / static_cast<double>(out.per_word.size());

    const BinSpec bins = make_bins(norms.scale().min, norms.scale().max, options.bin_width);
    out.fit = binned_divergence_regression(out.per_word, bins);
    return out;
}

std::vector<RatingRecord> read_ratings_jsonl(std::istream& in, const std::string& source_name) {
    std::vector<RatingRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::is_blank(line)) continue;
        const nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            throw InputError(fmt::format("{}:{}: not a JSON object", source_name, line_no));
        }
        RatingRecord r;
        try {
            r.model_id = j.at("model_id").get<std::string>();
            const auto& ctx = j.at("context_id");
            r.context_id = ctx.is_string() ? ctx.get<std::string>() : ctx.dump();
            r.word = j.at("word").get<std::string>();
            r.rating = j.at("rating").get<double>();
        } catch (const nlohmann::json::exception& e) {
            throw InputError(fmt::format("{}:{}: {}", source_name, line_no, e.what()));
        }
        if (!std::isfinite(r.rating)) throw InputError(fmt::format("{}:{}: non-finite rating", source_name, line_no));
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<RatingRecord> read_ratings_jsonl_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError(fmt::format("cannot open ratings file '{}'", path.string()));
    return read_ratings_jsonl(in, path.filename().string());
}

}  // namespace cprobe
