#include "cprobe/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <string_view>

#include <fmt/format.h>

namespace cprobe {

namespace {

using nlohmann::json;

std::string format_g6(double x) { return fmt::format("{:.6g}", x); }

std::string csv_field(const std::optional<double>& x) {
    return x && std::isfinite(*x) ? format_g6(*x) : std::string();
}

json optional_number(const std::optional<double>& x) { return x ? report_number(*x) : json(nullptr); }

json series_json(const BinnedSeries& s) {
    json values = json::array();
    for (const auto& v : s.values) values.push_back(optional_number(v));
    json centers = json::array();
    for (double c : s.bin_centers) centers.push_back(report_number(c));
    return {{"bin_centers", centers}, {"values", values}, {"counts", s.counts}, {"out_of_range", s.out_of_range}};
}

json behavior_json(const BehaviorSection& b) {
    auto datasets = [](const std::map<std::string, DatasetAccuracy>& m) {
        json out = json::object();
        for (const auto& [name, d] : m) out[name] = {{"accuracy", report_number(d.accuracy)}, {"questions", d.questions}};
        return out;
    };
    return {
        {"accuracy", {{"baseline", series_json(b.accuracy.baseline)}, {"vision", series_json(b.accuracy.vision)}}},
        {"gap", series_json(b.gap)},
        {"gap_trend", {{"spearman_rho", report_number(b.trend.spearman_rho)}, {"n_bins", b.trend.n_bins}}},
        {"per_dataset", {{"baseline", datasets(b.per_dataset.baseline)}, {"vision", datasets(b.per_dataset.vision)}}},
        {"pooled_accuracy",
         {{"baseline", report_number(b.pooled_accuracy.baseline)}, {"vision", report_number(b.pooled_accuracy.vision)}}},
    };
}

json geometry_model_json(const GeometryModel& g) {
    json bins = json::object();
    for (const auto& [bin, d] : g.dispersion.bins) {
        bins[std::to_string(bin)] = {
            {"dispersion", report_number(d.value)}, {"members", d.members}, {"pairs", d.pairs}, {"sampled", d.sampled}};
    }
    return {{"bins", bins},
            {"overall", g.dispersion.bins.empty() ? json(nullptr) : report_number(g.dispersion.overall())},
            {"omitted_bins", g.dispersion.omitted_bins},
            {"zero_norm_excluded", g.dispersion.zero_norm_excluded},
            {"words", g.words},
            {"words_without_norms", g.words_without_norms},
            {"final_kl", report_number(g.final_kl)},
            {"uncalibrated_rows", g.uncalibrated_rows}};
}

json attention_model_json(const AttentionModel& a) {
    json layers = json::array();
    for (const LayerCorrelation& c : a.layers) {
        json row = {{"layer", c.layer},
                    {"r", optional_number(c.r)},
                    {"p", optional_number(c.p)},
                    {"n", c.n},
                    {"p_underflow", c.p_underflow}};
        if (!c.note.empty()) row["note"] = c.note;
        layers.push_back(std::move(row));
    }
    json out = {{"layers", layers},
                {"mean_r", report_number(a.mean_r)},
                {"sequences", a.sequences},
                {"tokens", a.tokens}};
    if (a.sigmoid) {
        const SigmoidFit& s = *a.sigmoid;
        out["sigmoid"] = {{"lower", report_number(s.lower)},         {"upper", report_number(s.upper)},
                          {"midpoint", report_number(s.midpoint)},   {"slope", report_number(s.slope)},
                          {"residual_sse", report_number(s.residual_sse)}, {"iterations", s.iterations},
                          {"converged", s.converged},                {"degenerate", s.degenerate}};
    } else {
        out["sigmoid"] = nullptr;
        out["sigmoid_note"] = a.sigmoid_note;
    }
    return out;
}

json alignment_model_json(const AlignmentResult& a) {
    json words = json::object();
    for (const auto& [word, w] : a.per_word) {
        words[word] = {{"human_mean", report_number(w.human_mean)},
                       {"divergence", report_number(w.divergence)},
                       {"contexts", w.contexts}};
    }
    const stats::OlsResult& o = a.fit.ols;
    return {{"model_id", a.model_id},
            {"mean_divergence", report_number(a.mean_divergence)},
            {"binned", series_json(a.fit.binned)},
            {"regression",
             {{"slope", report_number(o.slope)},
              {"intercept", report_number(o.intercept)},
              {"r_squared", report_number(o.r_squared)},
              {"p_slope", optional_number(o.p_slope)},
              {"n", o.n},
              {"p_underflow", o.p_underflow}}},
            {"words", words},
            {"skipped_few_contexts", a.skipped_few_contexts},
            {"skipped_no_norms", a.skipped_no_norms}};
}

void write_text(const std::filesystem::path& path, const std::string& text, std::vector<std::filesystem::path>& written) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError(fmt::format("cannot write '{}'", path.string()));
    out << text;
    if (!out) throw InputError(fmt::format("write failed for '{}'", path.string()));
    written.push_back(path);
}

// Minimal static charts. Coordinates are printed with fixed precision so the
// files are stable across platforms.
struct Point {
    double x;
    std::optional<double> y;
};

struct Series {
    std::string name;
    std::string color;
    std::vector<Point> points;
};

struct Curve {
    std::string name;
    std::string color;
    std::vector<std::pair<double, double>> points;
};

constexpr double kWidth = 640, kHeight = 400, kLeft = 70, kRight = 160, kTop = 40, kBottom = 50;

std::string escape_xml(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

struct Frame {
    double x0, x1, y0, y1;

    double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
    double py(double y) const { return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom); }
};

Frame fit_frame(double x0, double x1, double y0, double y1) {
    if (!(x1 > x0)) x0 -= 0.5, x1 += 0.5;
    if (!(y1 > y0)) y0 -= 0.5, y1 += 0.5;
    const double pad = 0.05 * (y1 - y0);
    return {x0, x1, y0 - pad, y1 + pad};
}

std::string svg_open(const std::string& title) {
    return fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\" viewBox=\"0 0 {:.0f} {:.0f}\" "
        "font-family=\"sans-serif\" font-size=\"12\">\n"
        "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        "<text x=\"{:.1f}\" y=\"22\" font-size=\"14\">{}</text>\n",
        kWidth, kHeight, kWidth, kHeight, kLeft, escape_xml(title));
}

std::string svg_axes(const Frame& f, const std::string& xlabel, const std::string& ylabel,
                     const std::vector<double>& xticks) {
    std::string s;
    const double bx = kLeft, by = kHeight - kBottom, tx = kWidth - kRight;
    s += fmt::format("<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"black\"/>\n", bx, by, tx, by);
    s += fmt::format("<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"black\"/>\n", bx, by, bx,
                     kTop);
    for (double x : xticks) {
        s += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{}</text>\n", f.px(x), by + 16,
                         format_g6(x));
    }
    for (int k = 0; k <= 4; ++k) {
        const double y = f.y0 + (f.y1 - f.y0) * k / 4.0;
        s += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"end\">{:.3g}</text>\n", bx - 6, f.py(y) + 4, y);
        s += fmt::format("<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"#dddddd\"/>\n", bx,
                         f.py(y), tx, f.py(y));
    }
    if (f.y0 < 0 && f.y1 > 0) {
        s += fmt::format("<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"#888888\"/>\n", bx,
                         f.py(0), tx, f.py(0));
    }
    s += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{}</text>\n", (bx + tx) / 2, kHeight - 12,
                     escape_xml(xlabel));
    s += fmt::format("<text x=\"16\" y=\"{:.2f}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2f})\">{}</text>\n",
                     (by + kTop) / 2, (by + kTop) / 2, escape_xml(ylabel));
    return s;
}

std::string svg_legend(const std::vector<std::pair<std::string, std::string>>& entries) {
    std::string s;
    double y = kTop + 10;
    for (const auto& [name, color] : entries) {
        s += fmt::format("<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"12\" height=\"12\" fill=\"{}\"/>\n",
                         kWidth - kRight + 16, y - 10, color);
        s += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\">{}</text>\n", kWidth - kRight + 34, y, escape_xml(name));
        y += 18;
    }
    return s;
}

std::pair<double, double> y_range(const std::vector<Series>& series, const std::vector<Curve>& curves) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const Series& s : series) {
        for (const Point& p : s.points) {
            if (p.y && std::isfinite(*p.y)) lo = std::min(lo, *p.y), hi = std::max(hi, *p.y);
        }
    }
    for (const Curve& c : curves) {
        for (const auto& [x, y] : c.points) lo = std::min(lo, y), hi = std::max(hi, y);
    }
    if (!std::isfinite(lo)) return {0.0, 1.0};
    return {lo, hi};
}

std::string line_chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                       const std::vector<Series>& series, const std::vector<Curve>& curves,
                       const std::vector<double>& xticks) {
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0;
    for (double x : xticks) x0 = std::min(x0, x), x1 = std::max(x1, x);
    const auto [ylo, yhi] = y_range(series, curves);
    const Frame f = fit_frame(x0, x1, std::min(ylo, 0.0), std::max(yhi, 0.0));

    std::string s = svg_open(title) + svg_axes(f, xlabel, ylabel, xticks);
    std::vector<std::pair<std::string, std::string>> legend;
    for (const Series& ser : series) {
        std::string pts;
        for (const Point& p : ser.points) {
            if (!p.y || !std::isfinite(*p.y)) continue;
            if (!pts.empty()) pts += ' ';
            pts += fmt::format("{:.2f},{:.2f}", f.px(p.x), f.py(*p.y));
        }
        s += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n", ser.color, pts);
        for (const Point& p : ser.points) {
            if (!p.y || !std::isfinite(*p.y)) continue;
            s += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"3\" fill=\"{}\"/>\n", f.px(p.x), f.py(*p.y),
                             ser.color);
        }
        legend.emplace_back(ser.name, ser.color);
    }
    for (const Curve& c : curves) {
        std::string d;
        for (const auto& [x, y] : c.points) {
            d += fmt::format("{}{:.2f},{:.2f}", d.empty() ? "M" : " L", f.px(x), f.py(y));
        }
        s += fmt::format("<path d=\"{}\" fill=\"none\" stroke=\"{}\" stroke-dasharray=\"5,4\"/>\n", d, c.color);
        legend.emplace_back(c.name, c.color);
    }
    return s + svg_legend(legend) + "</svg>\n";
}

std::string bar_chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                      const std::vector<std::string>& categories, const std::vector<Series>& series) {
    const auto [ylo, yhi] = y_range(series, {});
    const double n = static_cast<double>(categories.size());
    const Frame f = fit_frame(-0.5, n - 0.5, std::min(ylo, 0.0), std::max(yhi, 0.0));
    std::string s = svg_open(title) + svg_axes(f, xlabel, ylabel, {});
    const double slot = (f.px(1.0) - f.px(0.0)) * 0.8;
    const double bar = slot / static_cast<double>(std::max<std::size_t>(series.size(), 1));
    for (std::size_t k = 0; k < categories.size(); ++k) {
        const double cx = f.px(static_cast<double>(k));
        s += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{}</text>\n", cx,
                         kHeight - kBottom + 16, escape_xml(categories[k]));
        for (std::size_t m = 0; m < series.size(); ++m) {
            const auto& y = series[m].points[k].y;
            if (!y || !std::isfinite(*y)) continue;
            const double top = std::min(f.py(*y), f.py(0.0));
            const double h = std::abs(f.py(*y) - f.py(0.0));
            s += fmt::format("<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"{}\"/>\n",
                             cx - slot / 2 + bar * static_cast<double>(m), top, bar, h, series[m].color);
        }
    }
    std::vector<std::pair<std::string, std::string>> legend;
    for (const Series& ser : series) legend.emplace_back(ser.name, ser.color);
    return s + svg_legend(legend) + "</svg>\n";
}

constexpr const char* kBaselineColor = "#1f77b4";
constexpr const char* kVisionColor = "#d62728";
constexpr const char* kGapColor = "#2ca02c";

std::vector<Point> series_points(const BinnedSeries& s) {
    std::vector<Point> pts;
    for (std::size_t k = 0; k < s.bin_centers.size(); ++k) pts.push_back({s.bin_centers[k], s.values[k]});
    return pts;
}

std::string n_field(const BinnedSeries& s, std::size_t k) { return std::to_string(s.counts[k]); }

void emit_behavior(const DiagnosticsReport& r, const BehaviorSection& b, const std::filesystem::path& dir,
                   std::vector<std::filesystem::path>& written) {
    std::string csv = "bin_center,baseline_accuracy,baseline_n,vision_accuracy,vision_n,gap\n";
    for (std::size_t k = 0; k < b.gap.bin_centers.size(); ++k) {
        csv += fmt::format("{},{},{},{},{},{}\n", format_g6(b.gap.bin_centers[k]),
                           csv_field(b.accuracy.baseline.values[k]), n_field(b.accuracy.baseline, k),
                           csv_field(b.accuracy.vision.values[k]), n_field(b.accuracy.vision, k),
                           csv_field(b.gap.values[k]));
    }
    write_text(dir / "accuracy_by_bin.csv", csv, written);
    const std::vector<Series> series{{r.baseline_id, kBaselineColor, series_points(b.accuracy.baseline)},
                                     {r.vision_id, kVisionColor, series_points(b.accuracy.vision)},
                                     {"gap", kGapColor, series_points(b.gap)}};
    write_text(dir / "accuracy_by_bin.svg",
               line_chart("Accuracy by question concreteness", "sentence concreteness (bin center)", "accuracy",
                          series, {}, b.gap.bin_centers),
               written);

    std::string table = "dataset,baseline_accuracy,baseline_n,vision_accuracy,vision_n\n";
    std::vector<std::string> names;
    for (const auto& [name, d] : b.per_dataset.baseline) names.push_back(name);
    for (const auto& [name, d] : b.per_dataset.vision) {
        if (!b.per_dataset.baseline.contains(name)) names.push_back(name);
    }
    std::sort(names.begin(), names.end());
    Series sb{r.baseline_id, kBaselineColor, {}}, sv{r.vision_id, kVisionColor, {}};
    for (const std::string& name : names) {
        const auto ib = b.per_dataset.baseline.find(name);
        const auto iv = b.per_dataset.vision.find(name);
        const std::optional<double> ab =
            ib != b.per_dataset.baseline.end() ? std::optional<double>(ib->second.accuracy) : std::nullopt;
        const std::optional<double> av =
            iv != b.per_dataset.vision.end() ? std::optional<double>(iv->second.accuracy) : std::nullopt;
        table += fmt::format("{},{},{},{},{}\n", name, csv_field(ab),
                             ib != b.per_dataset.baseline.end() ? ib->second.questions : 0, csv_field(av),
                             iv != b.per_dataset.vision.end() ? iv->second.questions : 0);
        sb.points.push_back({static_cast<double>(sb.points.size()), ab});
        sv.points.push_back({static_cast<double>(sv.points.size()), av});
    }
    write_text(dir / "accuracy_by_dataset.csv", table, written);
    write_text(dir / "accuracy_by_dataset.svg", bar_chart("Accuracy per dataset", "dataset", "accuracy", names, {sb, sv}),
               written);
}

void emit_geometry(const DiagnosticsReport& r, const GeometrySection& g, const std::filesystem::path& dir,
                   std::vector<std::filesystem::path>& written) {
    std::string csv = "bin,baseline_dispersion,baseline_members,vision_dispersion,vision_members\n";
    std::vector<std::string> categories;
    Series sb{r.baseline_id, kBaselineColor, {}}, sv{r.vision_id, kVisionColor, {}};
    for (int bin = 1; bin <= 5; ++bin) {
        auto lookup = [bin](const DispersionResult& d) -> std::pair<std::optional<double>, std::size_t> {
            const auto it = d.bins.find(bin);
            if (it == d.bins.end()) return {std::nullopt, 0};
            return {it->second.value, it->second.members};
        };
        const auto [db, mb] = lookup(g.models.baseline.dispersion);
        const auto [dv, mv] = lookup(g.models.vision.dispersion);
        csv += fmt::format("{},{},{},{},{}\n", bin, csv_field(db), mb, csv_field(dv), mv);
        categories.push_back(std::to_string(bin));
        sb.points.push_back({static_cast<double>(bin), db});
        sv.points.push_back({static_cast<double>(bin), dv});
    }
    write_text(dir / "dispersion_by_bin.csv", csv, written);
    write_text(dir / "dispersion_by_bin.svg",
               bar_chart("Intra-bin dispersion of the 2-D projection", "concreteness bin", "mean pairwise distance",
                         categories, {sb, sv}),
               written);
}

void emit_attention(const DiagnosticsReport& r, const AttentionSection& a, const std::filesystem::path& dir,
                    std::vector<std::filesystem::path>& written) {
    const std::size_t layers = std::max(a.models.baseline.layers.size(), a.models.vision.layers.size());
    auto layer_r = [](const AttentionModel& m, std::size_t l) -> std::optional<double> {
        return l < m.layers.size() ? m.layers[l].r : std::nullopt;
    };
    auto layer_p = [](const AttentionModel& m, std::size_t l) -> std::optional<double> {
        return l < m.layers.size() ? m.layers[l].p : std::nullopt;
    };
    auto fitted = [](const AttentionModel& m, std::size_t l) -> std::optional<double> {
        return m.sigmoid ? std::optional<double>((*m.sigmoid)(static_cast<double>(l))) : std::nullopt;
    };
    std::string csv = "layer,baseline_r,baseline_p,vision_r,vision_p,baseline_sigmoid,vision_sigmoid\n";
    std::vector<double> ticks;
    for (std::size_t l = 0; l < layers; ++l) {
        csv += fmt::format("{},{},{},{},{},{},{}\n", l, csv_field(layer_r(a.models.baseline, l)),
                           csv_field(layer_p(a.models.baseline, l)), csv_field(layer_r(a.models.vision, l)),
                           csv_field(layer_p(a.models.vision, l)), csv_field(fitted(a.models.baseline, l)),
                           csv_field(fitted(a.models.vision, l)));
        ticks.push_back(static_cast<double>(l));
    }
    write_text(dir / "layer_correlation.csv", csv, written);

    auto points = [&](const AttentionModel& m) {
        std::vector<Point> pts;
        for (std::size_t l = 0; l < m.layers.size(); ++l) pts.push_back({static_cast<double>(l), m.layers[l].r});
        return pts;
    };
    std::vector<Curve> curves;
    auto add_curve = [&](const AttentionModel& m, const std::string& name, const char* color) {
        if (!m.sigmoid || layers < 2) return;
        Curve c{name + " sigmoid", color, {}};
        const double span = static_cast<double>(layers - 1);
        for (int k = 0; k <= 60; ++k) {
            const double x = span * k / 60.0;
            c.points.emplace_back(x, (*m.sigmoid)(x));
        }
        curves.push_back(std::move(c));
    };
    add_curve(a.models.baseline, r.baseline_id, kBaselineColor);
    add_curve(a.models.vision, r.vision_id, kVisionColor);
    const std::vector<Series> series{{r.baseline_id, kBaselineColor, points(a.models.baseline)},
                                     {r.vision_id, kVisionColor, points(a.models.vision)}};
    write_text(dir / "layer_correlation.svg",
               line_chart("Layerwise Pearson r (concreteness vs. attention entropy)", "layer", "r", series, curves,
                          ticks),
               written);
}

void emit_alignment(const DiagnosticsReport& r, const AlignmentSection& a, const std::filesystem::path& dir,
                    std::vector<std::filesystem::path>& written) {
    const BinnedSeries& b = a.models.baseline.fit.binned;
    const BinnedSeries& v = a.models.vision.fit.binned;
    std::string csv = "bin_center,baseline_divergence,baseline_n,vision_divergence,vision_n,baseline_fit,vision_fit\n";
    auto line = [](const AlignmentResult& m, double x) { return m.fit.ols.intercept + m.fit.ols.slope * x; };
    for (std::size_t k = 0; k < b.bin_centers.size(); ++k) {
        const double x = b.bin_centers[k];
        csv += fmt::format("{},{},{},{},{},{},{}\n", format_g6(x), csv_field(b.values[k]), n_field(b, k),
                           csv_field(k < v.values.size() ? v.values[k] : std::nullopt),
                           k < v.counts.size() ? v.counts[k] : 0, format_g6(line(a.models.baseline, x)),
                           format_g6(line(a.models.vision, x)));
    }
    write_text(dir / "alignment_by_bin.csv", csv, written);
    std::vector<Curve> curves;
    if (!b.bin_centers.empty()) {
        const double x0 = b.bin_centers.front(), x1 = b.bin_centers.back();
        curves.push_back({r.baseline_id + " OLS", kBaselineColor,
                          {{x0, line(a.models.baseline, x0)}, {x1, line(a.models.baseline, x1)}}});
        curves.push_back(
            {r.vision_id + " OLS", kVisionColor, {{x0, line(a.models.vision, x0)}, {x1, line(a.models.vision, x1)}}});
    }
    const std::vector<Series> series{{r.baseline_id, kBaselineColor, series_points(b)},
                                     {r.vision_id, kVisionColor, series_points(v)}};
    write_text(dir / "alignment_by_bin.svg",
               line_chart("Human-model rating divergence", "human concreteness (bin center)",
                          "symmetric KL (nats)", series, curves, b.bin_centers),
               written);
}

}  // namespace

json report_number(double x) {
    if (!std::isfinite(x)) return nullptr;
    if (x == 0.0) return 0.0;
    const std::string text = format_g6(x);
    double rounded = 0.0;
    std::from_chars(text.data(), text.data() + text.size(), rounded);
    return rounded;
}

DiagnosticsReport build_report(std::string run_id, std::string baseline_id, std::string vision_id,
                               std::optional<BehaviorSection> behavior, std::optional<GeometrySection> geometry,
                               std::optional<AttentionSection> attention, std::optional<AlignmentSection> alignment,
                               std::map<std::string, std::string> skipped, json config_echo) {
    if (baseline_id.empty() || vision_id.empty()) throw InvalidArgument("report: model ids must be non-empty");
    if (baseline_id == vision_id) throw InvalidArgument("report: baseline and vision ids must differ");
    if (!config_echo.is_object()) throw InvalidArgument("report: config echo must be a JSON object");
    DiagnosticsReport r;
    r.run_id = std::move(run_id);
    r.baseline_id = std::move(baseline_id);
    r.vision_id = std::move(vision_id);
    r.behavior = std::move(behavior);
    r.geometry = std::move(geometry);
    r.attention = std::move(attention);
    r.alignment = std::move(alignment);
    r.config_echo = std::move(config_echo);

    const std::map<std::string, bool> present{{"behavior", r.behavior.has_value()},
                                              {"geometry", r.geometry.has_value()},
                                              {"attention", r.attention.has_value()},
                                              {"alignment", r.alignment.has_value()}};
    for (const auto& [name, reason] : skipped) {
        if (!present.contains(name)) throw InvalidArgument(fmt::format("report: unknown section '{}'", name));
        if (present.at(name)) throw InvalidArgument(fmt::format("report: section '{}' is both present and skipped", name));
        if (reason.empty()) throw InvalidArgument(fmt::format("report: skipped section '{}' needs a reason", name));
    }
    std::size_t completed = 0;
    for (const auto& [name, has] : present) {
        if (has) {
            ++completed;
        } else if (!skipped.contains(name)) {
            throw InvalidArgument(fmt::format("report: section '{}' is neither present nor skipped", name));
        }
    }
    if (completed == 0) throw InvalidArgument("report: no completed section");
    r.skipped = std::move(skipped);
    return r;
}

json report_to_json(const DiagnosticsReport& r) {
    json sections = json::object();
    auto section = [&](const std::string& name, bool has, auto&& make) {
        if (has) {
            sections[name] = make();
            sections[name]["status"] = "ok";
        } else {
            sections[name] = {{"status", "skipped"}, {"reason", r.skipped.at(name)}};
        }
    };
    section("behavior", r.behavior.has_value(), [&] { return behavior_json(*r.behavior); });
    section("geometry", r.geometry.has_value(), [&] {
        return json{{"baseline", geometry_model_json(r.geometry->models.baseline)},
                    {"vision", geometry_model_json(r.geometry->models.vision)}};
    });
    section("attention", r.attention.has_value(), [&] {
        return json{{"baseline", attention_model_json(r.attention->models.baseline)},
                    {"vision", attention_model_json(r.attention->models.vision)}};
    });
    section("alignment", r.alignment.has_value(), [&] {
        return json{{"baseline", alignment_model_json(r.alignment->models.baseline)},
                    {"vision", alignment_model_json(r.alignment->models.vision)},
                    {"human_distribution", "discretized Gaussian from norms mean and sd (approximation)"}};
    });
    json config = r.config_echo;
    return {{"schema", kReportSchema},
            {"run_id", r.run_id},
            {"model_pair", {{"baseline", r.baseline_id}, {"vision", r.vision_id}}},
            {"sections", sections},
            {"config_echo", config}};
}

std::string dump_report(const DiagnosticsReport& report) { return report_to_json(report).dump(2) + "\n"; }

std::vector<std::filesystem::path> emit_figures(const DiagnosticsReport& report, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw InputError(fmt::format("cannot create figure directory '{}': {}", dir.string(), ec.message()));
    std::vector<std::filesystem::path> written;
    if (report.behavior) emit_behavior(report, *report.behavior, dir, written);
    if (report.geometry) emit_geometry(report, *report.geometry, dir, written);
    if (report.attention) emit_attention(report, *report.attention, dir, written);
    if (report.alignment) emit_alignment(report, *report.alignment, dir, written);
    return written;
}

}  // namespace cprobe
