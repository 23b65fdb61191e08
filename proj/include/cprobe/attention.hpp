#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cprobe/geometry.hpp"
#include "cprobe/norms.hpp"
#include "cprobe/tensor.hpp"

namespace cprobe {

// Attention weights of one layer: heads x tokens x tokens, row (h, i) is the
// distribution of query token i over key tokens j.
struct AttentionTensor {
    std::size_t layer = 0;
    std::size_t heads = 0;
    std::size_t tokens = 0;
    bool causal = true;
    std::vector<double> weights;

    std::span<const double> row(std::size_t head, std::size_t query) const noexcept {
        return {weights.data() + (head * tokens + query) * tokens, tokens};
    }
    // The keys a query can attend to: j <= i when causal, all j otherwise.
    std::span<const double> support(std::size_t head, std::size_t query) const noexcept {
        return row(head, query).first(causal ? query + 1 : tokens);
    }

    // Rows non-negative and summing to 1 within `tolerance`; masked entries zero.
    void validate(double tolerance = 1e-5) const;
};

// Shannon entropy in nats, 0 ln 0 = 0. The row is renormalised first; entries
// below -1e-9 or a non-positive total are errors.
double entropy(std::span<const double> row);

enum class EntropyNormalization {
    raw,     // H in nats
    length,  // H / ln(support size); 0 for single-key rows
};

// Per-token entropy averaged across heads.
std::vector<double> head_average_entropy(const AttentionTensor& tensor,
                                         EntropyNormalization normalization = EntropyNormalization::raw);

// Layers x tokens head-averaged entropies with per-token concreteness. Tokens
// without a concreteness value (special tokens) carry NaN.
struct EntropySheet {
    std::string sequence_id;
    Matrix values;  // L x T
    std::vector<double> token_concreteness;
    std::vector<std::string> token_words;

    std::size_t layers() const noexcept { return values.rows; }
    std::size_t tokens() const noexcept { return values.cols; }

    // Checks shapes, 0 <= H, and H <= ln(T) for raw sheets.
    void validate(bool raw_entropy = true) const;
};

// Concatenates token columns of sheets that share a layer count.
EntropySheet pool_sheets(std::span<const EntropySheet> sheets);

struct LayerCorrelation {
    std::size_t layer = 0;
    std::optional<double> r;  // nullopt: undefined for this layer
    std::optional<double> p;
    std::size_t n = 0;
    bool p_underflow = false;
    std::string note;

    bool defined() const noexcept { return r.has_value(); }
};

struct CorrelationOptions {
    std::size_t min_n = 10;
    // Tokens scored exactly 0 (function words, other OOV) carry no concreteness.
    bool include_zero_scores = false;
};

// Pearson r between token concreteness and entropy at each layer.
std::vector<LayerCorrelation> layer_correlations(const EntropySheet& sheet, const CorrelationOptions& options = {});

// Per-sequence correlations averaged across sequences (r only; p undefined).
std::vector<LayerCorrelation> per_sequence_correlations(std::span<const EntropySheet> sheets,
                                                        const CorrelationOptions& options = {});

// Mean of the defined per-layer r values.
double mean_layer_r(std::span<const LayerCorrelation> correlations);

// r(layer) ~ lower + (upper - lower) / (1 + exp(-slope (layer - midpoint))).
// Reported with slope >= 0 (the curve is symmetric under swapping the
// asymptotes and negating the slope).
struct SigmoidFit {
    double lower = 0.0;
    double upper = 0.0;
    double midpoint = 0.0;
    double slope = 0.0;
    double residual_sse = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
    bool degenerate = false;  // flat data: asymptotes coincide, slope reported as 0

    double operator()(double layer) const noexcept;
};

// Damped Gauss-Newton least squares. Needs >= 5 points.
SigmoidFit sigmoid_fit(std::span<const double> layers, std::span<const double> r_values);

// Attention artifacts as exported per sequence. Raw tensors are [H, T, T] with
// meta {"kind":"attention","sequence","layer","causal","words","word_index"};
// entropy sheets are [L, T] with meta {"kind":"entropy_sheet","sequence",
// "causal","normalization","words","word_index"}. word_index maps each token
// to its word (-1 for special tokens). An optional "model_id" filters files.
struct AttentionLoadOptions {
    std::optional<std::string> model_id;
    EntropyNormalization normalization = EntropyNormalization::raw;
    unsigned threads = 1;
};

// Token concreteness for one sequence: words scored with the norms rules, then
// propagated to their subtokens. Special tokens get NaN.
std::vector<double> token_concreteness(std::span<const std::string> words, std::span<const long long> word_index,
                                       const NormsTable& norms, const WordSet& function_words,
                                       const WordSet* named_entities = nullptr);

// Builds one entropy sheet from the per-layer tensors of a sequence.
EntropySheet sheet_from_tensors(std::span<const AttentionTensor> layers, std::vector<double> concreteness,
                                std::vector<std::string> token_words,
                                EntropyNormalization normalization = EntropyNormalization::raw, unsigned threads = 1);

AttentionTensor attention_from_tensor(const Tensor& tensor);
Tensor attention_to_tensor(const AttentionTensor& tensor, const nlohmann::json& meta);

// Reads every *.tns file under `dir`, groups raw tensors by sequence, and
// returns one sheet per sequence in lexicographic sequence order.
std::vector<EntropySheet> load_attention_dir(const std::filesystem::path& dir, const NormsTable& norms,
                                             const WordSet& function_words, const AttentionLoadOptions& options = {},
                                             const WordSet* named_entities = nullptr);

}  // namespace cprobe
