#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cprobe/norms.hpp"
#include "cprobe/tensor.hpp"

namespace cprobe {

// Row-major dense matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) noexcept { return values[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const noexcept { return values[i * cols + j]; }
    std::span<const double> row(std::size_t i) const noexcept { return {values.data() + i * cols, cols}; }
    std::span<double> row(std::size_t i) noexcept { return {values.data() + i * cols, cols}; }
};

// One averaged vector per word type.
struct EmbeddingMatrix {
    std::vector<std::string> words;
    Matrix vectors;  // N x d_model

    std::size_t size() const noexcept { return words.size(); }
    std::size_t d_model() const noexcept { return vectors.cols; }
};

struct Occurrence {
    std::string word;
    std::vector<double> vector;
};

// Streaming type-vector accumulation. Rows appear in first-occurrence order.
class TypeVectorAccumulator {
public:
    void add(std::string_view word, std::span<const double> vector);
    bool empty() const noexcept { return words_.empty(); }
    EmbeddingMatrix finish() const;

private:
    std::size_t dim_ = 0;
    std::vector<std::string> words_;
    std::map<std::string, std::size_t, std::less<>> index_;
    std::vector<std::vector<double>> sums_;
    std::vector<std::size_t> counts_;
};

EmbeddingMatrix type_vectors(std::span<const Occurrence> occurrences);

// Reads a [M, D] tensor whose meta.words lists the word of every row; repeated
// words are averaged into a single type vector.
EmbeddingMatrix embeddings_from_tensor(const Tensor& tensor);
Tensor embeddings_to_tensor(const EmbeddingMatrix& matrix, const nlohmann::json& extra_meta = nlohmann::json::object());

struct Affinities {
    Matrix joint;                        // symmetric, zero diagonal, sums to 1
    Matrix conditional;                  // row i is P(j | i)
    std::vector<double> beta;            // per-row precision 1 / (2 sigma^2)
    std::vector<double> row_perplexity;  // achieved exp(H_i)
    std::size_t uncalibrated_rows = 0;   // rows where the bandwidth search had to clamp
};

// Gaussian input affinities with per-row bandwidth calibrated by bisection so
// that exp(H(P_i)) matches `perplexity`. Requires N >= 4 and
// 1 <= perplexity < N - 1. `threads` > 1 splits rows across workers; the
// result does not depend on the thread count.
Affinities tsne_affinities(const Matrix& points, double perplexity, unsigned threads = 1);

struct TsneParams {
    double perplexity = 30.0;
    std::size_t iterations = 1000;
    double learning_rate = 200.0;
    double early_exaggeration = 12.0;
    std::size_t exaggeration_iters = 250;
    double momentum_initial = 0.5;
    double momentum_final = 0.8;
    double init_scale = 1e-4;
    std::uint64_t seed = 42;

    // Throws InvalidArgument; `n_points` enables the perplexity < N / 3 check.
    void validate(std::size_t n_points) const;
};

struct TsneResult {
    Matrix coords;                   // N x 2
    std::vector<double> kl_history;  // KL(P || Q) after each iteration, unexaggerated P
    double initial_kl = 0.0;         // KL at the random initialisation
};

// Exact-gradient t-SNE into 2-D. Throws NumericError when the gradient turns
// non-finite.
TsneResult tsne_embed(const Matrix& joint, const TsneParams& params);

// KL(P || Q) for 2-D coordinates under Student-t (df = 1) affinities.
double tsne_kl(const Matrix& joint, const Matrix& coords);

struct PlanarEmbedding {
    std::vector<std::string> words;
    Matrix coords;                  // N x 2
    std::vector<int> concreteness_bin;
};

// Nearest integer, halves rounded up, clamped to 1..5.
int concreteness_bin(double mean);

enum class DispersionMetric { cosine, euclidean };

struct DispersionOptions {
    DispersionMetric metric = DispersionMetric::cosine;
    // Bins with more than this many unordered pairs are estimated from
    // `pair_cap` uniformly sampled pairs. 0 means always exact.
    std::size_t pair_cap = 0;
    std::uint64_t seed = 42;
};

struct BinDispersion {
    double value = 0.0;
    std::size_t members = 0;
    std::size_t pairs = 0;
    bool sampled = false;
};

struct DispersionResult {
    std::map<int, BinDispersion> bins;
    std::size_t zero_norm_excluded = 0;
    std::vector<int> omitted_bins;  // fewer than 2 usable members

    // Mean over reported bins.
    double overall() const;
};

// Mean pairwise distance among same-bin points.
DispersionResult dispersion(const PlanarEmbedding& embedding, const DispersionOptions& options = {});

// Pairwise distance helpers shared with the dispersion kernel.
double cosine_distance(std::span<const double> a, std::span<const double> b) noexcept;
double euclidean_distance(std::span<const double> a, std::span<const double> b) noexcept;

struct GeometryOutcome {
    PlanarEmbedding embedding;
    Affinities affinities;
    TsneResult tsne;
    DispersionResult dispersion;
    std::size_t words_without_norms = 0;
};

// Restricts the matrix to norm-covered words, embeds it and measures dispersion.
GeometryOutcome run_geometry(const EmbeddingMatrix& matrix, const NormsTable& norms, const TsneParams& params,
                             const DispersionOptions& options = {}, unsigned threads = 1);

}  // namespace cprobe
