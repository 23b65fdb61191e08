#include "cprobe/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "cprobe/stats.hpp"
#include "parallel.hpp"

namespace cprobe {

namespace {

constexpr double kNegativeTolerance = -1e-9;

double normalizer(EntropyNormalization normalization, std::size_t support) {
    if (normalization == EntropyNormalization::raw) return 1.0;
    return support > 1 ? std::log(static_cast<double>(support)) : 0.0;
}

}  // namespace

void AttentionTensor::validate(double tolerance) const {
    if (heads == 0 || tokens == 0) throw InvalidArgument("attention: empty tensor");
    if (weights.size() != heads * tokens * tokens) {
        throw InvalidArgument(fmt::format("attention layer {}: {} weights for shape [{}, {}, {}]", layer,
                                          weights.size(), heads, tokens, tokens));
    }
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < tokens; ++i) {
            const auto r = row(h, i);
            stats::KahanSum s;
            for (std::size_t j = 0; j < tokens; ++j) {
                const double w = r[j];
                if (!std::isfinite(w) || w < kNegativeTolerance) {
                    throw InvalidArgument(fmt::format("attention layer {}: bad weight {} at head {} row {} col {}",
                                                      layer, w, h, i, j));
                }
                if (causal && j > i && std::abs(w) > tolerance) {
                    throw InvalidArgument(fmt::format(
                        "attention layer {}: causal tensor has weight {} above the diagonal (head {}, row {}, col {})",
                        layer, w, h, i, j));
                }
                s += w;
            }
            if (std::abs(s.value() - 1.0) > tolerance) {
                throw InvalidArgument(
                    fmt::format("attention layer {}: head {} row {} sums to {}", layer, h, i, s.value()));
            }
        }
    }
}

double entropy(std::span<const double> row) {
    stats::KahanSum total;
    for (double p : row) {
        if (std::isnan(p) || p < kNegativeTolerance) throw InvalidArgument(fmt::format("entropy: invalid entry {}", p));
        if (p > 0.0) total += p;
    }
    const double z = total.value();
    if (!(z > 0.0) || !std::isfinite(z)) throw InvalidArgument("entropy: row has no positive mass");
    stats::KahanSum h;
    for (double p : row) {
        if (p <= 0.0) continue;
        const double q = p / z;
        h += -q * std::log(q);
    }
    return std::max(0.0, h.value());
}

std::vector<double> head_average_entropy(const AttentionTensor& tensor, EntropyNormalization normalization) {
    std::vector<double> out(tensor.tokens, 0.0);
    for (std::size_t i = 0; i < tensor.tokens; ++i) {
        const std::size_t support = tensor.causal ? i + 1 : tensor.tokens;
        const double norm = normalizer(normalization, support);
        stats::KahanSum acc;
        for (std::size_t h = 0; h < tensor.heads; ++h) {
            const double hv = entropy(tensor.support(h, i));
            acc += norm > 0.0 ? hv / norm : 0.0;
        }
        out[i] = acc.value() / static_cast<double>(tensor.heads);
    }
    return out;
}

void EntropySheet::validate(bool raw_entropy) const {
    if (values.rows == 0 || values.cols == 0) throw InvalidArgument("entropy sheet: empty");
    if (token_concreteness.size() != values.cols || token_words.size() != values.cols) {
        throw InvalidArgument(fmt::format("entropy sheet '{}': {} tokens but {} scores and {} words", sequence_id,
                                          values.cols, token_concreteness.size(), token_words.size()));
    }
    const double bound = std::log(static_cast<double>(values.cols)) + 1e-9;
    for (double v : values.values) {
        if (!std::isfinite(v) || v < 0.0) throw InvalidArgument(fmt::format("entropy sheet '{}': invalid entropy {}", sequence_id, v));
        if (raw_entropy && v > bound) {
            throw InvalidArgument(fmt::format("entropy sheet '{}': entropy {} exceeds ln(T)", sequence_id, v));
        }
    }
}

EntropySheet pool_sheets(std::span<const EntropySheet> sheets) {
    if (sheets.empty()) throw InvalidArgument("pool_sheets: nothing to pool");
    const std::size_t layers = sheets.front().layers();
    std::size_t total = 0;
    for (const EntropySheet& s : sheets) {
        if (s.layers() != layers) {
            throw InvalidArgument(fmt::format("pool_sheets: sequence '{}' has {} layers, expected {}", s.sequence_id,
                                              s.layers(), layers));
        }
        total += s.tokens();
    }
    EntropySheet out;
    out.sequence_id = "pooled";
    out.values = Matrix(layers, total);
    std::size_t offset = 0;
    for (const EntropySheet& s : sheets) {
        for (std::size_t l = 0; l < layers; ++l) {
            const auto src = s.values.row(l);
            std::copy(src.begin(), src.end(), out.values.row(l).begin() + static_cast<std::ptrdiff_t>(offset));
        }
        out.token_concreteness.insert(out.token_concreteness.end(), s.token_concreteness.begin(),
                                      s.token_concreteness.end());
        out.token_words.insert(out.token_words.end(), s.token_words.begin(), s.token_words.end());
        offset += s.tokens();
    }
    return out;
}

namespace {

std::vector<std::size_t> usable_tokens(const EntropySheet& sheet, const CorrelationOptions& options) {
    std::vector<std::size_t> keep;
    for (std::size_t t = 0; t < sheet.tokens(); ++t) {
        const double c = sheet.token_concreteness[t];
        if (std::isnan(c)) continue;
        if (c == 0.0 && !options.include_zero_scores) continue;
        keep.push_back(t);
    }
    return keep;
}

LayerCorrelation correlate_layer(const EntropySheet& sheet, std::size_t layer, std::span<const std::size_t> keep,
                                 const CorrelationOptions& options) {
    LayerCorrelation lc;
    lc.layer = layer;
    lc.n = keep.size();
    if (keep.size() < std::max<std::size_t>(options.min_n, 3)) {
        lc.note = fmt::format("n = {} below minimum {}", keep.size(), std::max<std::size_t>(options.min_n, 3));
        return lc;
    }
    std::vector<double> x, y;
    x.reserve(keep.size());
    y.reserve(keep.size());
    for (std::size_t t : keep) {
        x.push_back(sheet.token_concreteness[t]);
        y.push_back(sheet.values(layer, t));
    }
    try {
        const stats::CorrelationResult res = stats::pearson(x, y);
        lc.r = res.r;
        lc.p = res.p;
        lc.p_underflow = res.p_underflow;
    } catch (const ZeroVarianceError&) {
        lc.note = "zero variance";
    }
    return lc;
}

}  // namespace

std::vector<LayerCorrelation> layer_correlations(const EntropySheet& sheet, const CorrelationOptions& options) {
    const std::vector<std::size_t> keep = usable_tokens(sheet, options);
    std::vector<LayerCorrelation> out;
    out.reserve(sheet.layers());
    for (std::size_t l = 0; l < sheet.layers(); ++l) out.push_back(correlate_layer(sheet, l, keep, options));
    return out;
}

std::vector<LayerCorrelation> per_sequence_correlations(std::span<const EntropySheet> sheets,
                                                        const CorrelationOptions& options) {
    if (sheets.empty()) throw InvalidArgument("per_sequence_correlations: no sequences");
    const std::size_t layers = sheets.front().layers();
    std::vector<stats::KahanSum> sums(layers);
    std::vector<std::size_t> counts(layers, 0);
    for (const EntropySheet& s : sheets) {
        if (s.layers() != layers) throw InvalidArgument("per_sequence_correlations: layer counts differ");
        for (const LayerCorrelation& lc : layer_correlations(s, options)) {
            if (!lc.r) continue;
            sums[lc.layer] += *lc.r;
            ++counts[lc.layer];
        }
    }
    std::vector<LayerCorrelation> out(layers);
    for (std::size_t l = 0; l < layers; ++l) {
        out[l].layer = l;
        out[l].n = counts[l];
        if (counts[l] > 0) {
            out[l].r = sums[l].value() / static_cast<double>(counts[l]);
            out[l].note = "mean of per-sequence r";
        } else {
            out[l].note = "no sequence with a defined r";
        }
    }
    return out;
}

double mean_layer_r(std::span<const LayerCorrelation> correlations) {
    stats::KahanSum s;
    std::size_t n = 0;
    for (const LayerCorrelation& lc : correlations) {
        if (!lc.r) continue;
        s += *lc.r;
        ++n;
    }
    if (n == 0) throw InvalidArgument("mean_layer_r: no layer has a defined r");
    return s.value() / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Sigmoid fit

namespace {

double logistic(double u) noexcept {
    if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
    const double e = std::exp(u);
    return e / (1.0 + e);
}

using Params = Eigen::Vector4d;  // lower, upper, midpoint, slope

double model(const Params& th, double x) noexcept { return th[0] + (th[1] - th[0]) * logistic(th[3] * (x - th[2])); }

double sse(const Params& th, std::span<const double> x, std::span<const double> y) {
    stats::KahanSum s;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = y[i] - model(th, x[i]);
        s += r * r;
    }
    return s.value();
}

constexpr int kMaxIterations = 500;
constexpr double kStepTolerance = 1e-8;

SigmoidFit levenberg_marquardt(Params th, std::span<const double> x, std::span<const double> y) {
    const auto n = static_cast<Eigen::Index>(x.size());
    Eigen::MatrixXd jac(n, 4);
    Eigen::VectorXd res(n);
    double lambda = 1e-3;
    double cost = sse(th, x, y);
    SigmoidFit fit;
    int iter = 0;
    for (; iter < kMaxIterations; ++iter) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const double xi = x[static_cast<std::size_t>(i)];
            const double s = logistic(th[3] * (xi - th[2]));
            const double ds = s * (1.0 - s) * (th[1] - th[0]);
            jac(i, 0) = 1.0 - s;
            jac(i, 1) = s;
            jac(i, 2) = -ds * th[3];
            jac(i, 3) = ds * (xi - th[2]);
            res[i] = y[static_cast<std::size_t>(i)] - model(th, xi);
        }
        const Eigen::Matrix4d jtj = jac.transpose() * jac;
        const Eigen::Vector4d jtr = jac.transpose() * res;

        bool accepted = false;
        double step_norm = 0.0;
        while (!accepted) {
            Eigen::Matrix4d damped = jtj;
            for (int k = 0; k < 4; ++k) damped(k, k) += lambda * std::max(jtj(k, k), 1e-12);
            const Eigen::Vector4d step = damped.ldlt().solve(jtr);
            step_norm = step.norm();
            if (!step.allFinite()) {
                lambda *= 10.0;
            } else {
                const Params trial = th + step;
                const double trial_cost = sse(trial, x, y);
                if (std::isfinite(trial_cost) && trial_cost <= cost) {
                    th = trial;
                    cost = trial_cost;
                    lambda = std::max(lambda / 10.0, 1e-12);
                    accepted = true;
                } else {
                    lambda *= 10.0;
                }
            }
            if (step_norm < kStepTolerance || lambda > 1e16) break;
        }
        if (step_norm < kStepTolerance) {
            fit.converged = true;
            break;
        }
        if (!accepted) break;
    }
    fit.lower = th[0];
    fit.upper = th[1];
    fit.midpoint = th[2];
    fit.slope = th[3];
    fit.residual_sse = cost;
    fit.iterations = static_cast<std::size_t>(iter + 1);
    return fit;
}

}  // namespace

double SigmoidFit::operator()(double layer) const noexcept {
    return lower + (upper - lower) * logistic(slope * (layer - midpoint));
}

SigmoidFit sigmoid_fit(std::span<const double> layers, std::span<const double> r_values) {
    if (layers.size() != r_values.size()) throw InvalidArgument("sigmoid_fit: length mismatch");
    if (layers.size() < 5) throw InvalidArgument(fmt::format("sigmoid_fit: need >= 5 points, got {}", layers.size()));
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (!std::isfinite(layers[i]) || !std::isfinite(r_values[i])) throw InvalidArgument("sigmoid_fit: non-finite input");
    }
    const auto [xmin_it, xmax_it] = std::minmax_element(layers.begin(), layers.end());
    const double xmin = *xmin_it, xmax = *xmax_it;
    if (!(xmax > xmin)) throw InvalidArgument("sigmoid_fit: layers must not all coincide");
    const auto [ymin_it, ymax_it] = std::minmax_element(r_values.begin(), r_values.end());
    const double span = xmax - xmin;

    if (*ymax_it - *ymin_it <= 1e-14 * std::max(1.0, std::abs(*ymax_it))) {
        SigmoidFit flat;
        flat.lower = flat.upper = stats::mean(r_values);
        flat.midpoint = 0.5 * (xmin + xmax);
        flat.slope = 0.0;
        flat.residual_sse = sse(Params(flat.lower, flat.upper, flat.midpoint, 0.0), layers, r_values);
        flat.converged = true;
        flat.degenerate = true;
        return flat;
    }

    // Asymptote guesses from the outer thirds of the layer range.
    stats::KahanSum early, late;
    std::size_t n_early = 0, n_late = 0;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i] <= xmin + span / 3.0) {
            early += r_values[i];
            ++n_early;
        } else if (layers[i] >= xmax - span / 3.0) {
            late += r_values[i];
            ++n_late;
        }
    }
    const double a0 = n_early ? early.value() / static_cast<double>(n_early) : *ymin_it;
    const double b0 = n_late ? late.value() / static_cast<double>(n_late) : *ymax_it;

    SigmoidFit best;
    best.residual_sse = std::numeric_limits<double>::infinity();
    for (const double cf : {0.25, 0.5, 0.75}) {
        for (const double df : {1.0, 4.0, 16.0}) {
            const Params start(a0, b0, xmin + cf * span, df / span);
            SigmoidFit fit = levenberg_marquardt(start, layers, r_values);
            if (fit.residual_sse < best.residual_sse) best = fit;
        }
    }
    if (best.slope < 0.0) {
        std::swap(best.lower, best.upper);
        best.slope = -best.slope;
    }
    if (std::abs(best.upper - best.lower) <= 1e-9 * std::max(1.0, std::abs(best.lower))) {
        best.degenerate = true;
        best.slope = 0.0;
    }
    return best;
}

// ---------------------------------------------------------------------------
// Loading

std::vector<double> token_concreteness(std::span<const std::string> words, std::span<const long long> word_index,
                                       const NormsTable& norms, const WordSet& function_words,
                                       const WordSet* named_entities) {
    std::vector<WordToken> scored;
    scored.reserve(words.size());
    std::size_t position = 0;
    for (const std::string& w : words) {
        const std::string_view trimmed = trim_punctuation(w);
        if (trimmed.empty()) {
            scored.push_back({w, position, LexicalClass::other_oov, 0.0});
        } else {
            scored.push_back(classify_and_score(w, position, norms, function_words, named_entities));
        }
        ++position;
        const char last = w.empty() ? '\0' : w.back();
        if (last == '.' || last == '!' || last == '?') position = 0;
    }

    SubwordAlignment alignment;
    for (long long idx : word_index) {
        if (idx >= 0) alignment.word_index_per_subtoken.push_back(static_cast<std::size_t>(idx));
    }
    const std::vector<SubtokenScore> propagated = propagate_subwords(scored, alignment);

    std::vector<double> out(word_index.size(), std::numeric_limits<double>::quiet_NaN());
    std::size_t k = 0;
    for (std::size_t t = 0; t < word_index.size(); ++t) {
        if (word_index[t] >= 0) out[t] = propagated[k++].score;
    }
    return out;
}

EntropySheet sheet_from_tensors(std::span<const AttentionTensor> layers, std::vector<double> concreteness,
                                std::vector<std::string> token_words, EntropyNormalization normalization,
                                unsigned threads) {
    if (layers.empty()) throw InvalidArgument("sheet_from_tensors: no layers");
    const std::size_t t = layers.front().tokens;
    EntropySheet sheet;
    sheet.values = Matrix(layers.size(), t);
    for (const AttentionTensor& a : layers) {
        if (a.tokens != t) throw InvalidArgument("sheet_from_tensors: token counts differ across layers");
    }
    detail::parallel_for(layers.size(), threads, [&](std::size_t l) {
        const std::vector<double> h = head_average_entropy(layers[l], normalization);
        std::copy(h.begin(), h.end(), sheet.values.row(l).begin());
    });
    sheet.token_concreteness = std::move(concreteness);
    sheet.token_words = std::move(token_words);
    sheet.validate(normalization == EntropyNormalization::raw);
    return sheet;
}

AttentionTensor attention_from_tensor(const Tensor& tensor) {
    if (tensor.rank() != 3 || tensor.shape[1] != tensor.shape[2]) {
        throw InputError("attention: expected an [H, T, T] tensor");
    }
    AttentionTensor a;
    a.heads = tensor.shape[0];
    a.tokens = tensor.shape[1];
    a.layer = tensor.meta.value("layer", std::size_t{0});
    a.causal = tensor.meta.value("causal", true);
    a.weights.assign(tensor.data.begin(), tensor.data.end());
    return a;
}

Tensor attention_to_tensor(const AttentionTensor& tensor, const nlohmann::json& meta) {
    Tensor t;
    t.shape = {tensor.heads, tensor.tokens, tensor.tokens};
    t.data.reserve(tensor.weights.size());
    for (double w : tensor.weights) t.data.push_back(static_cast<float>(w));
    t.meta = meta.is_object() ? meta : nlohmann::json::object();
    t.meta["kind"] = "attention";
    t.meta["layer"] = tensor.layer;
    t.meta["causal"] = tensor.causal;
    return t;
}

namespace {

struct TokenLabels {
    std::vector<std::string> words;
    std::vector<long long> word_index;
};

TokenLabels read_labels(const Tensor& t, std::size_t n_tokens, const std::string& where) {
    TokenLabels labels;
    try {
        labels.words = t.meta.at("words").get<std::vector<std::string>>();
        if (t.meta.contains("word_index")) {
            labels.word_index = t.meta.at("word_index").get<std::vector<long long>>();
        } else {
            for (std::size_t i = 0; i < labels.words.size(); ++i) labels.word_index.push_back(static_cast<long long>(i));
        }
    } catch (const nlohmann::json::exception& e) {
        throw InputError(fmt::format("{}: bad token labels ({})", where, e.what()));
    }
    if (labels.word_index.size() != n_tokens) {
        throw InputError(fmt::format("{}: word_index has {} entries for {} tokens", where, labels.word_index.size(), n_tokens));
    }
    return labels;
}

std::vector<std::string> token_strings(const TokenLabels& labels) {
    std::vector<std::string> out;
    out.reserve(labels.word_index.size());
    for (long long idx : labels.word_index) {
        out.push_back(idx >= 0 && static_cast<std::size_t>(idx) < labels.words.size()
                          ? labels.words[static_cast<std::size_t>(idx)]
                          : std::string("<special>"));
    }
    return out;
}

struct PendingSequence {
    std::map<std::size_t, AttentionTensor> layers;
    TokenLabels labels;
    std::string first_file;
};

}  // namespace

std::vector<EntropySheet> load_attention_dir(const std::filesystem::path& dir, const NormsTable& norms,
                                             const WordSet& function_words, const AttentionLoadOptions& options,
                                             const WordSet* named_entities) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw InputError(fmt::format("attention: '{}' is not a directory", dir.string()));
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".tns") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());

    std::map<std::string, PendingSequence> raw;
    std::map<std::string, EntropySheet> sheets;
    for (const fs::path& file : files) {
        const Tensor t = read_tensor(file);
        const std::string where = file.filename().string();
        if (options.model_id) {
            const auto m = t.meta.find("model_id");
            if (m == t.meta.end() || !m->is_string() || m->get<std::string>() != *options.model_id) continue;
        }
        const std::string kind = t.meta.value("kind", t.rank() == 3 ? "attention" : "entropy_sheet");
        const std::string seq = t.meta.value("sequence", file.stem().string());
        try {
            if (kind == "attention") {
                AttentionTensor a = attention_from_tensor(t);
                a.validate();
                PendingSequence& p = raw[seq];
                if (p.layers.empty()) {
                    p.labels = read_labels(t, a.tokens, where);
                    p.first_file = where;
                } else if (p.layers.begin()->second.tokens != a.tokens) {
                    throw InputError(fmt::format("{}: token count differs from {}", where, p.first_file));
                }
                if (!p.layers.emplace(a.layer, std::move(a)).second) {
                    throw InputError(fmt::format("{}: duplicate layer for sequence '{}'", where, seq));
                }
            } else if (kind == "entropy_sheet") {
                if (t.rank() != 2) throw InputError(fmt::format("{}: entropy sheet must be [L, T]", where));
                const TokenLabels labels = read_labels(t, t.shape[1], where);
                EntropySheet s;
                s.sequence_id = seq;
                s.values = Matrix(t.shape[0], t.shape[1]);
                std::copy(t.data.begin(), t.data.end(), s.values.values.begin());
                s.token_concreteness =
                    token_concreteness(labels.words, labels.word_index, norms, function_words, named_entities);
                s.token_words = token_strings(labels);
                s.validate(true);
                if (options.normalization == EntropyNormalization::length) {
                    const bool causal = t.meta.value("causal", true);
                    for (std::size_t l = 0; l < s.layers(); ++l) {
                        for (std::size_t i = 0; i < s.tokens(); ++i) {
                            const double z = normalizer(options.normalization, causal ? i + 1 : s.tokens());
                            s.values(l, i) = z > 0.0 ? s.values(l, i) / z : 0.0;
                        }
                    }
                }
                if (!sheets.emplace(seq, std::move(s)).second) {
                    throw InputError(fmt::format("{}: duplicate sequence '{}'", where, seq));
                }
            } else {
                throw InputError(fmt::format("{}: unknown kind '{}'", where, kind));
            }
        } catch (const InvalidArgument& e) {
            throw InputError(fmt::format("{}: {}", where, e.what()));
        }
    }

    for (auto& [seq, pending] : raw) {
        if (sheets.contains(seq)) throw InputError(fmt::format("sequence '{}' has both raw tensors and a sheet", seq));
        std::vector<AttentionTensor> layers;
        std::size_t expected = 0;
        for (auto& [layer, tensor] : pending.layers) {
            if (layer != expected++) {
                throw InputError(fmt::format("sequence '{}': layers must be 0..L-1 without gaps", seq));
            }
            layers.push_back(std::move(tensor));
        }
        try {
            std::vector<double> conc = token_concreteness(pending.labels.words, pending.labels.word_index, norms,
                                                          function_words, named_entities);
            EntropySheet s = sheet_from_tensors(layers, std::move(conc), token_strings(pending.labels),
                                                options.normalization, options.threads);
            s.sequence_id = seq;
            sheets.emplace(seq, std::move(s));
        } catch (const InvalidArgument& e) {
            throw InputError(fmt::format("sequence '{}': {}", seq, e.what()));
        }
    }

    std::vector<EntropySheet> out;
    out.reserve(sheets.size());
    for (auto& [seq, s] : sheets) out.push_back(std::move(s));
    if (out.empty()) throw InputError(fmt::format("attention: no usable tensors in '{}'", dir.string()));
    return out;
}

}  // namespace cprobe
