#include "cprobe/behavior.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <set>
#include <tuple>

#include <fmt/format.h>
#include "json.hpp"

#include "cprobe/stats.hpp"
#include "text_util.hpp"

namespace cprobe {

std::vector<double> BinSpec::centers() const {
    std::vector<double> out(n_);
    for (std::size_t k = 0; k < n_; ++k) out[k] = center(k);
    return out;
}

std::optional<std::size_t> BinSpec::locate(double x) const noexcept {
    if (!std::isfinite(x)) return std::nullopt;
    const double t = (x - lo_) / width_;
    const double n = static_cast<double>(n_);
    if (t < -kEdgeTolerance || t > n + kEdgeTolerance) return std::nullopt;
    const double k = std::floor(t + kEdgeTolerance);
    if (k <= 0.0) return std::size_t{0};
    if (k >= n) return n_ - 1;
    return static_cast<std::size_t>(k);
}

BinSpec make_bins(double lo, double hi, double width) {
    if (!std::isfinite(lo) || !std::isfinite(hi) || !(lo < hi)) {
        throw InvalidArgument(fmt::format("bins: need lo < hi, got {}:{}", lo, hi));
    }
    if (!(width > 0.0) || !std::isfinite(width)) throw InvalidArgument(fmt::format("bins: width must be > 0, got {}", width));
    const double ratio = (hi - lo) / width;
    const double n = std::round(ratio);
    if (n < 1.0 || std::abs(n * width - (hi - lo)) > 1e-9) {
        throw InvalidArgument(fmt::format("bins: span {} is not an integer multiple of width {}", hi - lo, width));
    }
    BinSpec spec;
    spec.lo_ = lo;
    spec.hi_ = hi;
    spec.width_ = width;
    spec.n_ = static_cast<std::size_t>(n);
    return spec;
}

BinSpec parse_bins(std::string_view text) {
    const auto parts = detail::parse_number_list(text, ':');
    if (!parts || parts->size() != 3) {
        throw InvalidArgument(fmt::format("bins: expected lo:hi:width, got '{}'", text));
    }
    return make_bins((*parts)[0], (*parts)[1], (*parts)[2]);
}

std::size_t BinnedSeries::total() const noexcept {
    std::size_t n = out_of_range;
    for (std::size_t c : counts) n += c;
    return n;
}

BinnedSeries bin_accuracy(std::span<const QARecord> records, const BinSpec& bins) {
    if (records.empty()) throw InvalidArgument("bin_accuracy: no records");
    const std::string& model = records.front().model_id;
    std::vector<std::size_t> correct(bins.size(), 0);

    BinnedSeries out;
    out.bin_centers = bins.centers();
    out.counts.assign(bins.size(), 0);
    for (const QARecord& r : records) {
        if (r.model_id != model) {
            throw InvalidArgument(fmt::format("bin_accuracy: mixed model ids '{}' and '{}'", model, r.model_id));
        }
        if (!r.sentence_concreteness) {
            throw InvalidArgument(fmt::format("bin_accuracy: record {}/{} has no concreteness score", r.dataset,
                                              r.question_id));
        }
        const auto k = bins.locate(*r.sentence_concreteness);
        if (!k) {
            ++out.out_of_range;
            continue;
        }
        ++out.counts[*k];
        if (r.correct) ++correct[*k];
    }
    out.values.resize(bins.size());
    for (std::size_t k = 0; k < bins.size(); ++k) {
        if (out.counts[k] > 0) out.values[k] = static_cast<double>(correct[k]) / static_cast<double>(out.counts[k]);
    }
    return out;
}

namespace {

void check_same_grid(const BinnedSeries& a, const BinnedSeries& b, const char* what) {
    if (a.bin_centers.size() != b.bin_centers.size()) {
        throw InvalidArgument(fmt::format("{}: bin grids differ in size", what));
    }
    for (std::size_t k = 0; k < a.bin_centers.size(); ++k) {
        if (std::abs(a.bin_centers[k] - b.bin_centers[k]) > 1e-9) {
            throw InvalidArgument(fmt::format("{}: bin centers differ at bin {}", what, k));
        }
    }
}

}  // namespace

BinnedSeries merge_binned(const BinnedSeries& a, const BinnedSeries& b) {
    check_same_grid(a, b, "merge_binned");
    BinnedSeries out;
    out.bin_centers = a.bin_centers;
    out.counts.resize(a.counts.size());
    out.values.resize(a.counts.size());
    out.out_of_range = a.out_of_range + b.out_of_range;
    for (std::size_t k = 0; k < a.counts.size(); ++k) {
        out.counts[k] = a.counts[k] + b.counts[k];
        if (out.counts[k] == 0) continue;
        const double wa = static_cast<double>(a.counts[k]);
        const double wb = static_cast<double>(b.counts[k]);
        const double sum = wa * a.values[k].value_or(0.0) + wb * b.values[k].value_or(0.0);
        out.values[k] = sum / static_cast<double>(out.counts[k]);
    }
    return out;
}

BinnedSeries accuracy_gap(const BinnedSeries& vision, const BinnedSeries& baseline) {
    check_same_grid(vision, baseline, "accuracy_gap");
    BinnedSeries out;
    out.bin_centers = vision.bin_centers;
    out.counts.resize(vision.counts.size());
    out.values.resize(vision.counts.size());
    for (std::size_t k = 0; k < vision.counts.size(); ++k) {
        out.counts[k] = std::min(vision.counts[k], baseline.counts[k]);
        if (vision.values[k] && baseline.values[k]) out.values[k] = *vision.values[k] - *baseline.values[k];
    }
    return out;
}

GapTrend gap_trend(const BinnedSeries& gaps) {
    std::vector<double> centers, values;
    for (std::size_t k = 0; k < gaps.values.size(); ++k) {
        if (!gaps.values[k]) continue;
        centers.push_back(gaps.bin_centers[k]);
        values.push_back(*gaps.values[k]);
    }
    if (centers.size() < 3) {
        throw InvalidArgument(fmt::format("gap_trend: need >= 3 occupied bins, have {}", centers.size()));
    }
    return {stats::spearman(centers, values), centers.size()};
}

std::map<std::string, double> dataset_accuracy(std::span<const QARecord> records) {
    std::map<std::string, std::pair<std::size_t, std::size_t>> tally;
    for (const QARecord& r : records) {
        auto& [n, c] = tally[r.dataset];
        ++n;
        if (r.correct) ++c;
    }
    std::map<std::string, double> out;
    for (const auto& [name, nc] : tally) {
        out[name] = static_cast<double>(nc.second) / static_cast<double>(nc.first);
    }
    return out;
}

std::vector<QARecord> read_qa_jsonl(std::istream& in, const std::string& source_name) {
    std::vector<QARecord> records;
    std::set<std::tuple<std::string, std::string, std::string>> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::is_blank(line)) continue;
        const auto where = [&] { return fmt::format("{}:{}", source_name, line_no); };
        const nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) throw InputError(fmt::format("{}: not a JSON object", where()));
        QARecord r;
        try {
            r.model_id = j.at("model_id").get<std::string>();
            r.dataset = j.at("dataset").get<std::string>();
            r.question_id = j.at("question_id").is_string() ? j.at("question_id").get<std::string>()
                                                            : j.at("question_id").dump();
            r.question_text = j.at("question_text").get<std::string>();
            r.correct = j.at("correct").get<bool>();
            if (j.contains("sentence_concreteness")) r.sentence_concreteness = j.at("sentence_concreteness").get<double>();
        } catch (const nlohmann::json::exception& e) {
            throw InputError(fmt::format("{}: {}", where(), e.what()));
        }
        if (!seen.emplace(r.model_id, r.dataset, r.question_id).second) {
            throw InputError(fmt::format("{}: duplicate question ({}, {}, {})", where(), r.model_id, r.dataset,
                                         r.question_id));
        }
        records.push_back(std::move(r));
    }
    return records;
}

std::vector<QARecord> read_qa_jsonl_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError(fmt::format("cannot open QA file '{}'", path.string()));
    return read_qa_jsonl(in, path.filename().string());
}

void fill_concreteness(std::span<QARecord> records, const NormsTable& norms, const WordSet& function_words,
                       const WordSet* named_entities, const SentenceScoring& options) {
    for (QARecord& r : records) {
        if (r.sentence_concreteness) {
            const double c = *r.sentence_concreteness;
            if (!(c >= 0.0 && c <= norms.scale().max)) {
                throw InputError(fmt::format("question {}/{}: concreteness {} outside [0, {}]", r.dataset,
                                             r.question_id, c, norms.scale().max));
            }
            continue;
        }
        try {
            r.sentence_concreteness = score_text(r.question_text, norms, function_words, named_entities, options).score;
        } catch (const InvalidArgument& e) {
            throw InputError(fmt::format("question {}/{}: {}", r.dataset, r.question_id, e.what()));
        }
    }
}

}  // namespace cprobe
