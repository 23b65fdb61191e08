#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>

#include "cprobe/config.hpp"

namespace cprobe {

// Shape of the synthetic model pair written by generate_fixtures. Every field
// is echoed into run.conf under "fixture.".
struct FixtureParams {
    std::size_t words = 200;

    // QA: both models answer the same questions built from normed words.
    std::size_t datasets = 2;
    std::size_t questions_per_dataset = 300;
    std::size_t words_per_question = 5;
    double baseline_accuracy = 0.70;
    double vision_accuracy_low = 0.64;   // at the lowest question concreteness
    double vision_accuracy_high = 0.94;  // at the highest

    // Embeddings: per-bin cluster centers scaled by these factors.
    std::size_t embedding_dim = 32;
    std::size_t occurrences_per_word = 2;
    double vision_cluster_scale = 4.0;
    double baseline_cluster_scale = 0.5;

    // Attention: sharpness of query rows grows with token concreteness by a
    // layer-dependent coupling that follows a logistic ramp over depth.
    std::size_t sequences = 32;
    std::size_t tokens = 20;
    std::size_t layers = 8;
    std::size_t heads = 4;
    double vision_coupling = 0.8;
    double baseline_coupling = 0.0;

    // Ratings: model ratings around the norm mean, shifted by a bias.
    std::size_t contexts_per_word = 12;
    double vision_abstract_bias = 1.5;  // bias at the abstract end, fading to 0 at the concrete end
    double baseline_bias = 0.6;
    double rating_noise = 0.5;

    KeyValueConfig to_config() const;
};

// Writes norms.csv, function_words.txt, qa/, embeddings/, attention/,
// ratings/ and run.conf under `out_dir`. Identical seeds and params give
// byte-identical directories. Throws InputError when the directory cannot be
// written.
void generate_fixtures(std::uint64_t seed, const std::filesystem::path& out_dir, const FixtureParams& params = {});

}  // namespace cprobe
