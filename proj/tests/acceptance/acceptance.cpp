// Acceptance gate. Run without arguments to evaluate every criterion, or with
// criterion names to evaluate a subset. Prints one PASS/FAIL line per
// criterion and exits non-zero when any of them fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <unistd.h>

#include <fmt/format.h>

#include "cprobe/alignment.hpp"
#include "cprobe/attention.hpp"
#include "cprobe/behavior.hpp"
#include "cprobe/fixtures.hpp"
#include "cprobe/geometry.hpp"
#include "cprobe/pipeline.hpp"
#include "cprobe/random.hpp"
#include "cprobe/report.hpp"
#include "cprobe/stats.hpp"
#include "cprobe/tensor.hpp"
#include "oracles.hpp"
#include "tensor_fuzz.hpp"

namespace fs = std::filesystem;
using namespace cprobe;

namespace {

namespace tol {
constexpr double kEntropy = 1e-12;
constexpr double kEntropyRuntimeSec = 1.0;
constexpr double kDispersion = 1e-12;
constexpr double kDispersionScale = 1e-9;
constexpr double kPerplexity = 1e-4;
constexpr double kPurity = 0.95;
constexpr double kKlRise = 1e-3;
constexpr double kTsneRuntimeSec = 30.0;
constexpr double kSymKlExample = 1e-6;
constexpr double kSymKlOracle = 1e-12;
constexpr double kStatsOracle = 1e-10;
constexpr double kCriticalT = 5e-4;
constexpr std::size_t kExpectedBinCount = 6;
constexpr double kGapRho = 0.8;
constexpr double kLayerRMargin = 0.05;
constexpr double kAlignmentP = 0.01;
constexpr int kDispersionBinsLower = 4;
constexpr double kEndToEndRuntimeSec = 120.0;
constexpr int kTensorCases = 10000;
}  // namespace tol

// Collects failed checks of one criterion.
class Verdict {
public:
    void check(bool ok, std::string what) {
        if (!ok) failures_.push_back(std::move(what));
    }
    void note(std::string what) { notes_.push_back(std::move(what)); }
    bool passed() const { return failures_.empty(); }

    std::string summary() const {
        std::string s;
        const auto& items = failures_.empty() ? notes_ : failures_;
        for (const auto& item : items) s += (s.empty() ? "" : "; ") + item;
        return s;
    }

private:
    std::vector<std::string> failures_;
    std::vector<std::string> notes_;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::vector<double> random_row(Rng& rng, std::size_t n) {
    std::vector<double> row(n);
    double total = 0;
    for (double& p : row) {
        p = rng.uniform() < 0.2 ? 0.0 : std::exp(2 * rng.normal());
        total += p;
    }
    if (total == 0) row[n - 1] = total = 1;
    for (double& p : row) p /= total;
    return row;
}

// ---------------------------------------------------------------------------

Verdict entropy_kernel() {
    Verdict v;
    const auto start = std::chrono::steady_clock::now();
    double worst_uniform = 0;
    for (std::size_t t = 1; t <= 512; ++t) {
        const std::vector<double> uniform(t, 1.0 / static_cast<double>(t));
        worst_uniform = std::max(worst_uniform, std::abs(entropy(uniform) - std::log(static_cast<double>(t))));
        std::vector<double> one_hot(t, 0.0);
        one_hot[t / 2] = 1.0;
        v.check(entropy(one_hot) == 0.0, fmt::format("one-hot row of length {} has non-zero entropy", t));
    }
    v.check(worst_uniform <= tol::kEntropy, fmt::format("uniform rows deviate from ln T by {:.3g}", worst_uniform));

    Rng rng(1001);
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto row = random_row(rng, 1 + rng.below(256));
        worst = std::max(worst, std::abs(entropy(row) - oracle::entropy(row)));
    }
    v.check(worst <= tol::kEntropy, fmt::format("random rows deviate from the summation oracle by {:.3g}", worst));
    const double elapsed = seconds_since(start);
    v.check(elapsed < tol::kEntropyRuntimeSec, fmt::format("runtime {:.2f} s", elapsed));
    v.note(fmt::format("uniform err {:.2g}, oracle err {:.2g}, {:.3f} s", worst_uniform, worst, elapsed));
    return v;
}

Verdict dispersion_kernel() {
    Verdict v;
    Rng rng(1002);
    double worst = 0, worst_scale = 0, lo = 2, hi = 0;
    for (int trial = 0; trial < 100; ++trial) {
        PlanarEmbedding e;
        e.coords = Matrix(30, 2);
        std::vector<std::array<double, 2>> pts(30);
        for (std::size_t i = 0; i < 30; ++i) {
            pts[i] = {rng.normal(), rng.normal()};
            e.coords(i, 0) = pts[i][0];
            e.coords(i, 1) = pts[i][1];
        }
        e.concreteness_bin.assign(30, 1 + static_cast<int>(trial % 5));
        const double d = dispersion(e).bins.begin()->second.value;
        worst = std::max(worst, std::abs(d - oracle::dispersion_cosine(pts)));
        lo = std::min(lo, d);
        hi = std::max(hi, d);

        for (std::size_t i = 0; i < 30; ++i) {
            const double s = std::exp(rng.uniform(-5, 5));
            e.coords(i, 0) *= s;
            e.coords(i, 1) *= s;
        }
        worst_scale = std::max(worst_scale, std::abs(dispersion(e).bins.begin()->second.value - d));
    }
    v.check(worst <= tol::kDispersion, fmt::format("all-pairs oracle error {:.3g}", worst));
    v.check(lo >= 0.0 && hi <= 2.0, fmt::format("dispersion outside [0, 2]: [{}, {}]", lo, hi));
    v.check(worst_scale <= tol::kDispersionScale, fmt::format("rescaling changed D by {:.3g}", worst_scale));
    v.note(fmt::format("oracle err {:.2g}, range [{:.3f}, {:.3f}], rescale err {:.2g}", worst, lo, hi, worst_scale));
    return v;
}

// Largest single-step KL increase over the last `tail` iterations.
double worst_rise(const std::vector<double>& kl, std::size_t tail) {
    double worst = 0;
    for (std::size_t k = kl.size() - tail; k + 1 < kl.size(); ++k) worst = std::max(worst, kl[k + 1] - kl[k]);
    return worst;
}

Verdict tsne() {
    Verdict v;
    const auto start = std::chrono::steady_clock::now();
    Rng rng(1003);

    Matrix pts(50, 8);
    for (double& x : pts.values) x = rng.normal();
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < 50; ++i) rows.emplace_back(pts.row(i).begin(), pts.row(i).end());
    TsneParams params;
    params.perplexity = 15;
    params.validate(50);
    const auto aff = tsne_affinities(pts, params.perplexity);
    double worst = 0;
    for (std::size_t i = 0; i < 50; ++i) {
        worst = std::max(worst, std::abs(oracle::row_perplexity(rows, i, aff.beta[i]) - params.perplexity));
    }
    v.check(worst <= tol::kPerplexity, fmt::format("row perplexity off by {:.3g}", worst));
    const auto random_run = tsne_embed(aff.joint, params);
    const double random_rise = worst_rise(random_run.kl_history, 50);
    v.check(random_rise <= tol::kKlRise, fmt::format("N=50: KL rose by {:.3g} in the final 50 iterations", random_rise));

    double worst_purity = 1;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Rng data(100 + seed);
        Matrix m(40, 10);
        std::vector<int> label(40);
        for (std::size_t i = 0; i < 40; ++i) {
            label[i] = i < 20 ? 0 : 1;
            for (std::size_t k = 0; k < 10; ++k) m(i, k) = data.normal() + (label[i] && k == 0 ? 10.0 : 0.0);
        }
        TsneParams p;
        p.perplexity = 10;
        p.seed = seed;
        const auto res = tsne_embed(tsne_affinities(m, p.perplexity).joint, p);
        std::vector<std::array<double, 2>> planar;
        for (std::size_t i = 0; i < 40; ++i) planar.push_back({res.coords(i, 0), res.coords(i, 1)});
        const double purity = oracle::nn_purity(planar, label);
        worst_purity = std::min(worst_purity, purity);
        v.check(purity >= tol::kPurity, fmt::format("seed {} purity {:.3f}", seed, purity));
        const double rise = worst_rise(res.kl_history, 50);
        v.check(rise <= tol::kKlRise, fmt::format("seed {}: KL rose by {:.3g} in the final 50 iterations", seed, rise));
    }
    const double elapsed = seconds_since(start);
    v.check(elapsed < tol::kTsneRuntimeSec, fmt::format("runtime {:.1f} s", elapsed));
    v.note(fmt::format("perplexity err {:.2g}, min purity {:.3f}, {:.2f} s", worst, worst_purity, elapsed));
    return v;
}

Verdict sym_kl_kernel() {
    Verdict v;
    const auto make = [](std::vector<double> probs) {
        RatingDistribution d;
        for (std::size_t k = 0; k < probs.size(); ++k) d.support.push_back(static_cast<double>(k));
        d.probs = std::move(probs);
        return d;
    };
    const auto p = make({0.8, 0.2}), q = make({0.2, 0.8});
    const double example = sym_kl(p, q);
    v.check(std::abs(example - 0.831777) <= tol::kSymKlExample, fmt::format("example gives {:.9f}", example));

    Rng rng(1004);
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto n = 2 + rng.below(60);
        auto a = make(random_row(rng, n)), b = make(random_row(rng, n));
        smooth(a, 1e-6);
        smooth(b, 1e-6);
        const double ab = sym_kl(a, b);
        v.check(ab == sym_kl(b, a), "asymmetric result");
        v.check(sym_kl(a, a) == 0.0, "sym_kl(p, p) != 0");
        v.check(ab >= 0.0, "negative divergence");
        worst = std::max(worst, std::abs(ab - oracle::sym_kl(a.probs, b.probs)) / std::max(1.0, ab));
    }
    v.check(worst <= tol::kSymKlOracle, fmt::format("summation oracle error {:.3g}", worst));
    v.note(fmt::format("example {:.6f}, oracle err {:.2g}", example, worst));
    return v;
}

Verdict statistics() {
    Verdict v;
    Rng rng(1005);
    double worst_r = 0, worst_ols = 0, worst_p = 0;
    for (int i = 0; i < 100; ++i) {
        const std::size_t n = 5 + rng.below(60);
        std::vector<double> x(n), y(n);
        const double slope = rng.uniform(-2, 2);
        for (std::size_t k = 0; k < n; ++k) {
            x[k] = rng.uniform(-4, 4);
            y[k] = slope * x[k] + rng.normal();
        }
        const auto pr = stats::pearson(x, y);
        worst_r = std::max(worst_r, std::abs(pr.r - oracle::pearson_r(x, y)));
        const auto fit = stats::ols(x, y);
        const auto ref = oracle::ols(x, y);
        worst_ols = std::max({worst_ols, std::abs(fit.slope - ref.slope), std::abs(fit.intercept - ref.intercept),
                              std::abs(fit.r_squared - ref.r_squared)});
        worst_p = std::max(worst_p, std::abs(*fit.p_slope - *ref.p));
        const double t = rng.uniform(0, 6);
        const int df = 1 + static_cast<int>(rng.below(60));
        worst_p = std::max(worst_p, std::abs(stats::student_t_two_sided(t, df).value - oracle::t_two_sided(t, df)));
    }
    v.check(worst_r <= tol::kStatsOracle, fmt::format("pearson error {:.3g}", worst_r));
    v.check(worst_ols <= tol::kStatsOracle, fmt::format("ols error {:.3g}", worst_ols));
    v.check(worst_p <= tol::kStatsOracle, fmt::format("t tail error {:.3g}", worst_p));
    const double crit = stats::student_t_two_sided(2.086, 20).value;
    v.check(std::abs(crit - 0.05) <= tol::kCriticalT, fmt::format("t=2.086, df=20 gives p={:.6f}", crit));
    v.note(fmt::format("r err {:.2g}, ols err {:.2g}, p err {:.2g}, p(2.086, 20)={:.5f}", worst_r, worst_ols, worst_p,
                       crit));
    return v;
}

Verdict binning() {
    Verdict v;
    const BinSpec bins = make_bins(1.8, 4.8, 0.6);
    v.check(bins.size() == tol::kExpectedBinCount,
            fmt::format("(1.8, 4.8, 0.6) yields {} bins, criterion expects {}", bins.size(), tol::kExpectedBinCount));
    v.check(bins.locate(1.8) == 0u, "1.8 not in the first bin");
    v.check(bins.locate(2.4) == 1u, "2.4 not in the second bin");
    v.check(bins.locate(4.8) == bins.size() - 1, "4.8 not in the last bin");

    Rng rng(1006);
    std::vector<QARecord> a, b;
    for (int i = 0; i < 400; ++i) {
        QARecord r;
        r.model_id = "m";
        r.dataset = i % 2 ? "a" : "b";
        r.question_id = std::to_string(i);
        r.correct = rng.bernoulli(0.6);
        r.sentence_concreteness = rng.uniform(1.6, 5.0);
        (i % 2 ? a : b).push_back(r);
    }
    std::vector<QARecord> all = a;
    all.insert(all.end(), b.begin(), b.end());
    const auto merged = merge_binned(bin_accuracy(a, bins), bin_accuracy(b, bins));
    const auto direct = bin_accuracy(all, bins);
    v.check(merged.counts == direct.counts && merged.out_of_range == direct.out_of_range, "counts not additive");
    v.note(fmt::format("{} bins, boundaries and additivity hold", bins.size()));
    return v;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Verdict end_to_end() {
    Verdict v;
    const auto start = std::chrono::steady_clock::now();
    const fs::path root = fs::temp_directory_path() / fmt::format("cprobe_acceptance_{}", ::getpid());
    fs::remove_all(root);

    std::vector<std::string> texts;
    std::vector<DiagnosticsReport> reports;
    const unsigned many = std::max(2u, std::thread::hardware_concurrency());
    for (const unsigned threads : {1u, many}) {
        const fs::path dir = root / fmt::format("run{}", reports.size());
        generate_fixtures(7, dir);
        const RunSettings settings = settings_from_config(KeyValueConfig::load(dir / "run.conf"));
        reports.push_back(run_report(dir, settings, threads));
        texts.push_back(dump_report(reports.back()));
        emit_figures(reports.back(), dir / "figures");
    }
    v.check(texts[0] == texts[1], "reports of two runs differ");

    const fs::path golden = CPROBE_GOLDEN_DIR;
    v.check(texts[0] == slurp(golden / "report_seed7.json"), "report differs from the golden file");
    for (const char* csv : {"accuracy_by_bin.csv", "accuracy_by_dataset.csv", "dispersion_by_bin.csv", "layer_correlation.csv",
                            "alignment_by_bin.csv"}) {
        const std::string ours = slurp(root / "run0" / "figures" / csv);
        v.check(ours == slurp(root / "run1" / "figures" / csv), fmt::format("{} differs between runs", csv));
        v.check(ours == slurp(golden / csv), fmt::format("{} differs from the golden file", csv));
    }

    const DiagnosticsReport& r = reports[0];
    if (!r.behavior || !r.attention || !r.alignment || !r.geometry) {
        v.check(false, "a section was skipped");
    } else {
        const double rho = r.behavior->trend.spearman_rho;
        v.check(rho > tol::kGapRho, fmt::format("gap trend rho {:.3f}", rho));
        const double rv = r.attention->models.vision.mean_r, rb = r.attention->models.baseline.mean_r;
        v.check(rv <= rb - tol::kLayerRMargin, fmt::format("mean layer r vision {:.3f} vs baseline {:.3f}", rv, rb));
        const auto& fit = r.alignment->models.vision.fit.ols;
        v.check(fit.slope < 0 && fit.p_slope && *fit.p_slope < tol::kAlignmentP,
                fmt::format("alignment slope {:.3f}, p {}", fit.slope, fit.p_slope ? *fit.p_slope : NAN));
        int lower = 0;
        for (int bin = 1; bin <= 5; ++bin) {
            const auto& dv = r.geometry->models.vision.dispersion.bins;
            const auto& db = r.geometry->models.baseline.dispersion.bins;
            if (dv.contains(bin) && db.contains(bin) && dv.at(bin).value < db.at(bin).value) ++lower;
        }
        v.check(lower >= tol::kDispersionBinsLower, fmt::format("vision dispersion lower in {} of 5 bins", lower));
        v.note(fmt::format("rho {:.3f}, r {:.3f} vs {:.3f}, slope {:.3f} (p {:.2g}), dispersion lower in {}/5", rho, rv,
                           rb, fit.slope, fit.p_slope.value_or(NAN), lower));
    }
    fs::remove_all(root);
    const double elapsed = seconds_since(start);
    v.check(elapsed < tol::kEndToEndRuntimeSec, fmt::format("runtime {:.1f} s", elapsed));
    v.note(fmt::format("{:.1f} s", elapsed));
    return v;
}

Verdict tensor_container() {
    Verdict v;
    Rng rng(1008);
    int decoded = 0, rejected = 0, round_trip_failures = 0;
    std::string unexpected;
    for (int i = 0; i < tol::kTensorCases; ++i) {
        const Tensor t = fuzz::random_tensor(rng);
        if (!fuzz::bit_equal(t, decode_tensor(encode_tensor(t)))) ++round_trip_failures;

        const auto bytes = fuzz::random_input(rng);
        try {
            decode_tensor(bytes);
            ++decoded;
        } catch (const TensorError&) {
            ++rejected;
        } catch (const std::exception& e) {
            if (unexpected.empty()) unexpected = e.what();
        }
    }
    v.check(round_trip_failures == 0, fmt::format("{} round-trips were not bit-exact", round_trip_failures));
    v.check(unexpected.empty(), fmt::format("unstructured exception: {}", unexpected));
    v.note(fmt::format("{} cases: {} decoded, {} structured errors, round-trips exact", tol::kTensorCases, decoded,
                       rejected));
    return v;
}

struct Criterion {
    const char* name;
    std::function<Verdict()> run;
};

const std::vector<Criterion>& criteria() {
    static const std::vector<Criterion> all{
        {"entropy_kernel", entropy_kernel}, {"dispersion_kernel", dispersion_kernel}, {"tsne", tsne},
        {"sym_kl_kernel", sym_kl_kernel},   {"statistics", statistics},               {"binning", binning},
        {"end_to_end", end_to_end},         {"tensor_container", tensor_container},
    };
    return all;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> wanted(argv + 1, argv + argc);
    if (wanted.size() == 1 && wanted[0] == "--list") {
        for (const auto& c : criteria()) std::cout << c.name << '\n';
        return 0;
    }
    for (const auto& w : wanted) {
        if (std::none_of(criteria().begin(), criteria().end(), [&](const Criterion& c) { return w == c.name; })) {
            std::cerr << "unknown criterion '" << w << "' (see --list)\n";
            return 2;
        }
    }
    int failed = 0;
    for (const auto& c : criteria()) {
        if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.name) == wanted.end()) continue;
        Verdict verdict;
        try {
            verdict = c.run();
        } catch (const std::exception& e) {
            verdict.check(false, fmt::format("exception: {}", e.what()));
        }
        std::cout << (verdict.passed() ? "PASS " : "FAIL ") << c.name << ": " << verdict.summary() << std::endl;
        if (!verdict.passed()) ++failed;
    }
    return failed == 0 ? 0 : 1;
}
