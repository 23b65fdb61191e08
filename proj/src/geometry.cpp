#include "cprobe/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "cprobe/random.hpp"
#include "cprobe/stats.hpp"
#include "parallel.hpp"

namespace cprobe {

// ---------------------------------------------------------------------------
// Type vectors

void TypeVectorAccumulator::add(std::string_view word, std::span<const double> vector) {
    if (vector.empty()) throw InvalidArgument("type_vectors: empty vector");
    if (words_.empty()) {
        dim_ = vector.size();
    } else if (vector.size() != dim_) {
        throw InvalidArgument(fmt::format("type_vectors: dimension {} for '{}', expected {}", vector.size(), word, dim_));
    }
    for (double v : vector) {
        if (!std::isfinite(v)) throw InvalidArgument(fmt::format("type_vectors: non-finite value for '{}'", word));
    }
    auto it = index_.find(word);
    if (it == index_.end()) {
        it = index_.emplace(std::string(word), words_.size()).first;
        words_.emplace_back(word);
        sums_.emplace_back(dim_, 0.0);
        counts_.push_back(0);
    }
    std::vector<double>& sum = sums_[it->second];
    for (std::size_t d = 0; d < dim_; ++d) sum[d] += vector[d];
    ++counts_[it->second];
}

EmbeddingMatrix TypeVectorAccumulator::finish() const {
    if (words_.empty()) throw InvalidArgument("type_vectors: no occurrences");
    EmbeddingMatrix out;
    out.words = words_;
    out.vectors = Matrix(words_.size(), dim_);
    for (std::size_t i = 0; i < words_.size(); ++i) {
        const double n = static_cast<double>(counts_[i]);
        for (std::size_t d = 0; d < dim_; ++d) out.vectors(i, d) = sums_[i][d] / n;
    }
    return out;
}

EmbeddingMatrix type_vectors(std::span<const Occurrence> occurrences) {
    TypeVectorAccumulator acc;
    for (const Occurrence& o : occurrences) acc.add(o.word, o.vector);
    return acc.finish();
}

EmbeddingMatrix embeddings_from_tensor(const Tensor& tensor) {
    if (tensor.rank() != 2) throw InputError(fmt::format("embeddings: expected rank-2 tensor, got rank {}", tensor.rank()));
    const auto words = tensor.meta.find("words");
    if (words == tensor.meta.end() || !words->is_array() || words->size() != tensor.shape[0]) {
        throw InputError("embeddings: meta.words must list one word per row");
    }
    const std::size_t dim = tensor.shape[1];
    TypeVectorAccumulator acc;
    std::vector<double> row(dim);
    for (std::size_t i = 0; i < tensor.shape[0]; ++i) {
        if (!(*words)[i].is_string()) throw InputError("embeddings: meta.words entries must be strings");
        for (std::size_t d = 0; d < dim; ++d) row[d] = tensor.data[i * dim + d];
        try {
            acc.add((*words)[i].get<std::string>(), row);
        } catch (const InvalidArgument& e) {
            throw InputError(fmt::format("embeddings row {}: {}", i, e.what()));
        }
    }
    return acc.finish();
}

Tensor embeddings_to_tensor(const EmbeddingMatrix& matrix, const nlohmann::json& extra_meta) {
    Tensor t;
    t.shape = {matrix.size(), matrix.d_model()};
    t.data.reserve(matrix.vectors.values.size());
    for (double v : matrix.vectors.values) t.data.push_back(static_cast<float>(v));
    t.meta = extra_meta.is_object() ? extra_meta : nlohmann::json::object();
    t.meta["words"] = matrix.words;
    return t;
}

// ---------------------------------------------------------------------------
// Input affinities

namespace {

constexpr double kEntropyTolerance = 1e-10;
constexpr int kMaxBisectionSteps = 200;

struct RowCalibration {
    double beta = 1.0;
    double entropy = 0.0;
    bool converged = false;
};

// Fills `row` with P(. | i) for the given precision and returns its entropy (nats).
double conditional_row(std::span<const double> sq_dist, std::size_t self, double min_dist, double beta,
                       std::span<double> row) {
    stats::KahanSum total, weighted;
    for (std::size_t j = 0; j < sq_dist.size(); ++j) {
        if (j == self) {
            row[j] = 0.0;
            continue;
        }
        const double shifted = sq_dist[j] - min_dist;
        const double w = std::exp(-beta * shifted);
        row[j] = w;
        total += w;
        weighted += w * shifted;
    }
    const double z = total.value();
    for (double& p : row) p /= z;
    return std::log(z) + beta * weighted.value() / z;
}

RowCalibration calibrate_row(std::span<const double> sq_dist, std::size_t self, double target_entropy,
                             std::span<double> row) {
    double min_dist = std::numeric_limits<double>::infinity();
    stats::KahanSum spread;
    for (std::size_t j = 0; j < sq_dist.size(); ++j) {
        if (j == self) continue;
        min_dist = std::min(min_dist, sq_dist[j]);
    }
    for (std::size_t j = 0; j < sq_dist.size(); ++j) {
        if (j != self) spread += sq_dist[j] - min_dist;
    }
    const double mean_spread = spread.value() / static_cast<double>(sq_dist.size() - 1);

    RowCalibration cal;
    cal.beta = mean_spread > 0.0 ? 1.0 / mean_spread : 1.0;
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
    for (int step = 0; step < kMaxBisectionSteps; ++step) {
        cal.entropy = conditional_row(sq_dist, self, min_dist, cal.beta, row);
        const double diff = cal.entropy - target_entropy;
        if (std::abs(diff) < kEntropyTolerance) {
            cal.converged = true;
            return cal;
        }
        if (diff > 0.0) {
            lo = cal.beta;
            cal.beta = std::isinf(hi) ? cal.beta * 2.0 : 0.5 * (lo + hi);
        } else {
            hi = cal.beta;
            cal.beta = 0.5 * (lo + hi);
        }
        if (cal.beta > 1e300 || hi - lo <= std::numeric_limits<double>::min()) break;
    }
    cal.entropy = conditional_row(sq_dist, self, min_dist, cal.beta, row);
    // Accept the iterate when the perplexity itself is within 1e-6 of the target.
    cal.converged = std::abs(std::exp(cal.entropy) - std::exp(target_entropy)) < 1e-6;
    return cal;
}

}  // namespace

Affinities tsne_affinities(const Matrix& points, double perplexity, unsigned threads) {
    const std::size_t n = points.rows;
    if (n < 4) throw InvalidArgument(fmt::format("tsne_affinities: need N >= 4, got {}", n));
    if (!(perplexity >= 1.0) || !(perplexity < static_cast<double>(n - 1))) {
        throw InvalidArgument(fmt::format("tsne_affinities: perplexity {} must lie in [1, N - 1) for N = {}", perplexity, n));
    }
    for (double v : points.values) {
        if (!std::isfinite(v)) throw InvalidArgument("tsne_affinities: non-finite input coordinate");
    }

    Matrix sq(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double d = 0.0;
            for (std::size_t k = 0; k < points.cols; ++k) {
                const double diff = points(i, k) - points(j, k);
                d += diff * diff;
            }
            sq(i, j) = sq(j, i) = d;
        }
    }

    Affinities out;
    out.conditional = Matrix(n, n);
    out.beta.assign(n, 0.0);
    out.row_perplexity.assign(n, 0.0);
    std::vector<char> converged(n, 0);
    const double target = std::log(perplexity);
    detail::parallel_for(n, threads, [&](std::size_t i) {
        const RowCalibration cal = calibrate_row(sq.row(i), i, target, out.conditional.row(i));
        out.beta[i] = cal.beta;
        out.row_perplexity[i] = std::exp(cal.entropy);
        converged[i] = cal.converged ? 1 : 0;
    });
    out.uncalibrated_rows = static_cast<std::size_t>(std::count(converged.begin(), converged.end(), 0));

    out.joint = Matrix(n, n);
    const double scale = 1.0 / (2.0 * static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double p = (out.conditional(i, j) + out.conditional(j, i)) * scale;
            out.joint(i, j) = out.joint(j, i) = p;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Gradient descent

void TsneParams::validate(std::size_t n_points) const {
    if (!(perplexity > 0.0)) throw InvalidArgument("tsne: perplexity must be > 0");
    if (n_points > 0 && !(3.0 * perplexity < static_cast<double>(n_points))) {
        throw InvalidArgument(fmt::format("tsne: perplexity {} must be < N/3 for N = {}", perplexity, n_points));
    }
    if (iterations < exaggeration_iters) throw InvalidArgument("tsne: iterations must be >= exaggeration_iters");
    if (!(learning_rate > 0.0)) throw InvalidArgument("tsne: learning rate must be > 0");
    if (!(early_exaggeration > 0.0)) throw InvalidArgument("tsne: early exaggeration must be > 0");
    if (!(momentum_initial >= 0.0 && momentum_initial < 1.0) || !(momentum_final >= 0.0 && momentum_final < 1.0)) {
        throw InvalidArgument("tsne: momentum must lie in [0, 1)");
    }
    if (!(init_scale > 0.0)) throw InvalidArgument("tsne: init scale must be > 0");
}

namespace {

void check_joint(const Matrix& p) {
    if (p.rows != p.cols || p.rows < 2) throw InvalidArgument("tsne: affinity matrix must be square with N >= 2");
    stats::KahanSum total;
    for (std::size_t i = 0; i < p.rows; ++i) {
        if (p(i, i) != 0.0) throw InvalidArgument("tsne: affinity matrix diagonal must be zero");
        for (std::size_t j = 0; j < p.cols; ++j) {
            const double v = p(i, j);
            if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidArgument("tsne: affinities must be finite and >= 0");
            if (std::abs(v - p(j, i)) > 1e-12) throw InvalidArgument("tsne: affinity matrix must be symmetric");
            total += v;
        }
    }
    if (std::abs(total.value() - 1.0) > 1e-6) {
        throw InvalidArgument(fmt::format("tsne: affinities sum to {}, expected 1", total.value()));
    }
}

// Student-t kernel values (1 + |yi - yj|^2)^-1 into `kernel`; returns their sum over i != j.
double student_kernel(const Matrix& y, Matrix& kernel) {
    const std::size_t n = y.rows;
    stats::KahanSum z;
    for (std::size_t i = 0; i < n; ++i) {
        kernel(i, i) = 0.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = y(i, 0) - y(j, 0);
            const double dy = y(i, 1) - y(j, 1);
            const double k = 1.0 / (1.0 + dx * dx + dy * dy);
            kernel(i, j) = kernel(j, i) = k;
            z += 2.0 * k;
        }
    }
    return z.value();
}

}  // namespace

double tsne_kl(const Matrix& joint, const Matrix& coords) {
    Matrix kernel(coords.rows, coords.rows);
    const double z = student_kernel(coords, kernel);
    stats::KahanSum kl;
    for (std::size_t i = 0; i < joint.rows; ++i) {
        for (std::size_t j = 0; j < joint.cols; ++j) {
            const double p = joint(i, j);
            if (i == j || p <= 0.0) continue;
            const double q = std::max(kernel(i, j) / z, std::numeric_limits<double>::min());
            kl += p * std::log(p / q);
        }
    }
    return kl.value();
}

TsneResult tsne_embed(const Matrix& joint, const TsneParams& params) {
    params.validate(0);
    check_joint(joint);
    const std::size_t n = joint.rows;

    Rng rng(params.seed);
    TsneResult out;
    out.coords = Matrix(n, 2);
    for (double& v : out.coords.values) v = params.init_scale * rng.normal();
    out.initial_kl = tsne_kl(joint, out.coords);

    Matrix& y = out.coords;
    Matrix kernel(n, n);
    Matrix grad(n, 2);
    Matrix update(n, 2, 0.0);
    Matrix gains(n, 2, 1.0);
    out.kl_history.reserve(params.iterations);

    for (std::size_t iter = 0; iter < params.iterations; ++iter) {
        const bool exaggerating = iter < params.exaggeration_iters;
        const double exaggeration = exaggerating ? params.early_exaggeration : 1.0;
        const double momentum = exaggerating ? params.momentum_initial : params.momentum_final;

        const double z = student_kernel(y, kernel);
        for (std::size_t i = 0; i < n; ++i) {
            double gx = 0.0, gy = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                const double k = kernel(i, j);
                const double force = (exaggeration * joint(i, j) - k / z) * k;
                gx += force * (y(i, 0) - y(j, 0));
                gy += force * (y(i, 1) - y(j, 1));
            }
            grad(i, 0) = 4.0 * gx;
            grad(i, 1) = 4.0 * gy;
            if (!std::isfinite(grad(i, 0)) || !std::isfinite(grad(i, 1))) {
                throw NumericError(fmt::format("tsne: non-finite gradient at iteration {} for point {}", iter, i));
            }
        }

        for (std::size_t k = 0; k < y.values.size(); ++k) {
            const double g = grad.values[k];
            double& gain = gains.values[k];
            gain = (g > 0.0) != (update.values[k] > 0.0) ? gain + 0.2 : gain * 0.8;
            gain = std::max(gain, 0.01);
            update.values[k] = momentum * update.values[k] - params.learning_rate * gain * g;
            y.values[k] += update.values[k];
        }

        double mx = 0.0, my = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            mx += y(i, 0);
            my += y(i, 1);
        }
        mx /= static_cast<double>(n);
        my /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            y(i, 0) -= mx;
            y(i, 1) -= my;
        }

        const double kl = tsne_kl(joint, y);
        if (!std::isfinite(kl)) throw NumericError(fmt::format("tsne: non-finite objective at iteration {}", iter));
        out.kl_history.push_back(kl);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dispersion

int concreteness_bin(double mean) {
    const double r = std::floor(mean + 0.5);
    return static_cast<int>(std::clamp(r, 1.0, 5.0));
}

double cosine_distance(std::span<const double> a, std::span<const double> b) noexcept {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        dot += a[k] * b[k];
        na += a[k] * a[k];
        nb += b[k] * b[k];
    }
    const double c = std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
    return 1.0 - c;
}

double euclidean_distance(std::span<const double> a, std::span<const double> b) noexcept {
    double d = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) d += (a[k] - b[k]) * (a[k] - b[k]);
    return std::sqrt(d);
}

double DispersionResult::overall() const {
    if (bins.empty()) throw InvalidArgument("dispersion: no bins reported");
    stats::KahanSum s;
    for (const auto& [bin, d] : bins) s += d.value;
    return s.value() / static_cast<double>(bins.size());
}

DispersionResult dispersion(const PlanarEmbedding& embedding, const DispersionOptions& options) {
    const Matrix& z = embedding.coords;
    if (embedding.concreteness_bin.size() != z.rows) {
        throw InvalidArgument("dispersion: one bin label per point required");
    }
    const auto distance = options.metric == DispersionMetric::cosine ? &cosine_distance : &euclidean_distance;

    DispersionResult out;
    std::map<int, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < z.rows; ++i) {
        bool zero = true;
        for (double v : z.row(i)) {
            if (!std::isfinite(v)) throw InvalidArgument(fmt::format("dispersion: non-finite coordinate at row {}", i));
            zero = zero && v == 0.0;
        }
        if (zero && options.metric == DispersionMetric::cosine) {
            ++out.zero_norm_excluded;
            continue;
        }
        members[embedding.concreteness_bin[i]].push_back(i);
    }
    for (const int label : embedding.concreteness_bin) members.try_emplace(label);

    Rng rng(options.seed);
    for (const auto& [label, idx] : members) {
        const std::size_t m = idx.size();
        if (m < 2) {
            out.omitted_bins.push_back(label);
            continue;
        }
        const std::size_t all_pairs = m * (m - 1) / 2;
        BinDispersion bd;
        bd.members = m;
        stats::KahanSum total;
        if (options.pair_cap == 0 || all_pairs <= options.pair_cap) {
            for (std::size_t a = 0; a < m; ++a) {
                for (std::size_t b = a + 1; b < m; ++b) total += distance(z.row(idx[a]), z.row(idx[b]));
            }
            bd.pairs = all_pairs;
        } else {
            for (std::size_t s = 0; s < options.pair_cap; ++s) {
                const std::size_t a = rng.below(m);
                std::size_t b = rng.below(m - 1);
                if (b >= a) ++b;
                total += distance(z.row(idx[a]), z.row(idx[b]));
            }
            bd.pairs = options.pair_cap;
            bd.sampled = true;
        }
        bd.value = total.value() / static_cast<double>(bd.pairs);
        out.bins[label] = bd;
    }
    return out;
}

GeometryOutcome run_geometry(const EmbeddingMatrix& matrix, const NormsTable& norms, const TsneParams& params,
                             const DispersionOptions& options, unsigned threads) {
    GeometryOutcome out;
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < matrix.size(); ++i) {
        if (const NormEntry* e = norms.find(matrix.words[i])) {
            keep.push_back(i);
            out.embedding.words.push_back(matrix.words[i]);
            out.embedding.concreteness_bin.push_back(concreteness_bin(e->mean));
        } else {
            ++out.words_without_norms;
        }
    }
    if (keep.size() < 4) {
        throw InputError(fmt::format("geometry: only {} embedded words are covered by the norms", keep.size()));
    }
    params.validate(keep.size());

    Matrix points(keep.size(), matrix.d_model());
    for (std::size_t r = 0; r < keep.size(); ++r) {
        const auto src = matrix.vectors.row(keep[r]);
        std::copy(src.begin(), src.end(), points.row(r).begin());
    }
    out.affinities = tsne_affinities(points, params.perplexity, threads);
    out.tsne = tsne_embed(out.affinities.joint, params);
    out.embedding.coords = out.tsne.coords;
    out.dispersion = dispersion(out.embedding, options);
    return out;
}

}  // namespace cprobe
