#include "cprobe/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <fmt/format.h>
#include "json.hpp"

#include "cprobe/geometry.hpp"
#include "cprobe/norms.hpp"
#include "cprobe/pipeline.hpp"
#include "cprobe/random.hpp"
#include "cprobe/tensor.hpp"

namespace cprobe {

namespace fs = std::filesystem;

namespace {

constexpr const char* kBaseline = "baseline";
constexpr const char* kVision = "vision";

// SplitMix64 finaliser; gives each fixture component its own stream.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

struct Lexicon {
    std::vector<std::string> words;  // alphabetical
    std::vector<double> means;
    std::vector<double> sds;
    std::vector<std::string> function_words;
};

Lexicon make_lexicon(Rng& rng, std::size_t n) {
    static constexpr std::string_view consonants = "bdfgklmnprstvz";
    static constexpr std::string_view vowels = "aeiou";
    const WordSet& stop = default_function_words();
    WordSet chosen;
    while (chosen.size() < n) {
        std::string w;
        const std::size_t syllables = 2 + rng.below(2);
        for (std::size_t k = 0; k < syllables; ++k) {
            w += consonants[rng.below(consonants.size())];
            w += vowels[rng.below(vowels.size())];
        }
        if (rng.bernoulli(0.4)) w += consonants[rng.below(consonants.size())];
        if (!stop.contains(w)) chosen.insert(w);
    }
    Lexicon lex;
    lex.words.assign(chosen.begin(), chosen.end());
    // Stratified means over [1, 5] so every concreteness bin is populated,
    // then shuffled onto the alphabetical word list.
    std::vector<double> means(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = 1.0 + 4.0 * (static_cast<double>(i) + rng.uniform(0.05, 0.95)) / static_cast<double>(n);
        means[i] = std::round(x * 100.0) / 100.0;
    }
    for (std::size_t i = n; i > 1; --i) std::swap(means[i - 1], means[rng.below(i)]);
    lex.means = std::move(means);
    for (std::size_t i = 0; i < n; ++i) lex.sds.push_back(std::round(rng.uniform(0.6, 1.4) * 100.0) / 100.0);
    lex.function_words.assign(stop.begin(), stop.end());
    return lex;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError(fmt::format("cannot write '{}'", path.string()));
    out << text;
    if (!out) throw InputError(fmt::format("write failed for '{}'", path.string()));
}

void write_norms(const Lexicon& lex, const fs::path& dir) {
    std::string csv = "Word,Conc.M,Conc.SD\n";
    for (std::size_t i = 0; i < lex.words.size(); ++i) {
        csv += fmt::format("{},{:.2f},{:.2f}\n", lex.words[i], lex.means[i], lex.sds[i]);
    }
    write_file(dir / "norms.csv", csv);
    std::string fw = "# function words used by the synthetic fixtures\n";
    for (const std::string& w : lex.function_words) fw += w + "\n";
    write_file(dir / "function_words.txt", fw);
}

void write_qa(const Lexicon& lex, const FixtureParams& p, std::uint64_t seed, const fs::path& dir) {
    Rng rng(derive_seed(seed, 1));
    std::vector<std::size_t> order(lex.words.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lex.means[a] < lex.means[b]; });

    struct Question {
        std::string dataset;
        std::string id;
        std::string text;
        double concreteness;
    };
    std::vector<Question> questions;
    constexpr std::size_t kCandidates = 12;
    for (std::size_t d = 0; d < p.datasets; ++d) {
        const std::string dataset = fmt::format("synth-{}", static_cast<char>('a' + d % 26));
        for (std::size_t q = 0; q < p.questions_per_dataset; ++q) {
            const double target = rng.uniform(1.85, 4.75);
            // The kCandidates words with means closest to the target.
            std::vector<std::size_t> pool(order);
            std::partial_sort(pool.begin(), pool.begin() + kCandidates, pool.end(), [&](std::size_t a, std::size_t b) {
                const double da = std::abs(lex.means[a] - target), db = std::abs(lex.means[b] - target);
                return da != db ? da < db : a < b;
            });
            pool.resize(kCandidates);
            std::string text;
            double sum = 0.0;
            for (std::size_t k = 0; k < p.words_per_question; ++k) {
                const std::size_t pick = k + rng.below(pool.size() - k);
                std::swap(pool[k], pool[pick]);
                text += (k ? " " : "") + lex.words[pool[k]];
                sum += lex.means[pool[k]];
            }
            questions.push_back({dataset, fmt::format("{}-{:04}", dataset, q), text + "?",
                                 sum / static_cast<double>(p.words_per_question)});
        }
    }

    // Error diffusion along increasing concreteness hits the target accuracy
    // curve exactly up to one question per run of the curve.
    auto answers = [&](auto accuracy) {
        std::vector<std::size_t> by_conc(questions.size());
        for (std::size_t i = 0; i < by_conc.size(); ++i) by_conc[i] = i;
        std::stable_sort(by_conc.begin(), by_conc.end(), [&](std::size_t a, std::size_t b) {
            return questions[a].concreteness < questions[b].concreteness;
        });
        std::vector<bool> correct(questions.size());
        std::map<std::string, double> carry;
        for (std::size_t i : by_conc) {
            double& acc = carry.try_emplace(questions[i].dataset, 0.5).first->second;
            acc += accuracy(questions[i].concreteness);
            if (acc >= 1.0) {
                correct[i] = true;
                acc -= 1.0;
            }
        }
        return correct;
    };
    const auto base = answers([&](double) { return p.baseline_accuracy; });
    const auto vis = answers([&](double c) {
        const double t = std::clamp((c - 1.8) / 3.0, 0.0, 1.0);
        return p.vision_accuracy_low + (p.vision_accuracy_high - p.vision_accuracy_low) * t;
    });

    fs::create_directories(dir / "qa");
    for (const auto& [model, correct] : {std::pair{kBaseline, &base}, std::pair{kVision, &vis}}) {
        std::string out;
        for (std::size_t i = 0; i < questions.size(); ++i) {
            const nlohmann::json j = {{"model_id", model},
                                      {"dataset", questions[i].dataset},
                                      {"question_id", questions[i].id},
                                      {"question_text", questions[i].text},
                                      {"correct", static_cast<bool>((*correct)[i])}};
            out += j.dump() + "\n";
        }
        write_file(dir / "qa" / fmt::format("{}.jsonl", model), out);
    }
}

void write_embeddings(const Lexicon& lex, const FixtureParams& p, std::uint64_t seed, const fs::path& dir) {
    fs::create_directories(dir / "embeddings");
    const std::size_t d = p.embedding_dim;
    std::uint64_t stream = 10;
    for (const auto& [model, scale] : {std::pair{kBaseline, p.baseline_cluster_scale},
                                       std::pair{kVision, p.vision_cluster_scale}}) {
        Rng rng(derive_seed(seed, stream++));
        std::vector<std::vector<double>> centers(6, std::vector<double>(d));
        for (auto& c : centers) {
            for (double& x : c) x = scale * rng.normal();
        }
        // A handful of unnormed rows exercise the coverage filter.
        std::vector<std::string> words(lex.words);
        std::vector<int> bins;
        for (double m : lex.means) bins.push_back(concreteness_bin(m));
        for (std::size_t k = 0; k < 8 && k < lex.function_words.size(); ++k) {
            words.push_back(lex.function_words[k * 7 % lex.function_words.size()]);
            bins.push_back(0);
        }
        Tensor t;
        t.shape = {words.size() * p.occurrences_per_word, d};
        nlohmann::json row_words = nlohmann::json::array();
        for (std::size_t w = 0; w < words.size(); ++w) {
            std::vector<double> base(d);
            for (std::size_t k = 0; k < d; ++k) base[k] = centers[static_cast<std::size_t>(bins[w])][k] + rng.normal();
            for (std::size_t o = 0; o < p.occurrences_per_word; ++o) {
                for (std::size_t k = 0; k < d; ++k) t.data.push_back(static_cast<float>(base[k] + 0.3 * rng.normal()));
                row_words.push_back(words[w]);
            }
        }
        t.meta = {{"kind", "embeddings"}, {"model_id", model}, {"words", row_words}};
        write_tensor(t, dir / "embeddings" / fmt::format("{}.tns", model));
    }
}

void write_attention(const Lexicon& lex, const FixtureParams& p, std::uint64_t seed, const fs::path& dir) {
    fs::create_directories(dir / "attention");
    const std::size_t T = p.tokens, H = p.heads;
    std::uint64_t stream = 20;
    for (const auto& [model, coupling] : {std::pair{kBaseline, p.baseline_coupling},
                                          std::pair{kVision, p.vision_coupling}}) {
        Rng rng(derive_seed(seed, stream++));
        for (std::size_t s = 0; s < p.sequences; ++s) {
            std::vector<std::string> words;
            std::vector<long long> word_index{-1};
            std::vector<double> token_c{3.0};
            while (word_index.size() < T) {
                double c = 3.0;
                if (rng.bernoulli(0.7)) {
                    const std::size_t w = rng.below(lex.words.size());
                    words.push_back(lex.words[w]);
                    c = lex.means[w];
                } else {
                    words.push_back(lex.function_words[rng.below(lex.function_words.size())]);
                }
                const std::size_t pieces = (T - word_index.size() >= 2 && rng.bernoulli(0.2)) ? 2 : 1;
                for (std::size_t k = 0; k < pieces; ++k) {
                    word_index.push_back(static_cast<long long>(words.size() - 1));
                    token_c.push_back(c);
                }
            }
            const std::string sequence = fmt::format("seq{:03}", s);
            for (std::size_t layer = 0; layer < p.layers; ++layer) {
                const double depth = static_cast<double>(layer) - 0.5 * static_cast<double>(p.layers - 1);
                const double kappa = coupling / (1.0 + std::exp(-1.5 * depth));
                Tensor t;
                t.shape = {H, T, T};
                t.data.assign(H * T * T, 0.0f);
                std::vector<double> logits(T);
                for (std::size_t h = 0; h < H; ++h) {
                    for (std::size_t i = 0; i < T; ++i) {
                        const double sharp = std::exp(0.5 + kappa * (token_c[i] - 3.0) + 0.2 * rng.normal());
                        double peak = -std::numeric_limits<double>::infinity();
                        for (std::size_t j = 0; j <= i; ++j) {
                            logits[j] = sharp * rng.normal();
                            peak = std::max(peak, logits[j]);
                        }
                        double z = 0.0;
                        for (std::size_t j = 0; j <= i; ++j) z += std::exp(logits[j] - peak);
                        for (std::size_t j = 0; j <= i; ++j) {
                            t.data[(h * T + i) * T + j] = static_cast<float>(std::exp(logits[j] - peak) / z);
                        }
                    }
                }
                t.meta = {{"kind", "attention"}, {"model_id", model},  {"sequence", sequence}, {"layer", layer},
                          {"causal", true},      {"words", words},     {"word_index", word_index}};
                write_tensor(t, dir / "attention" / fmt::format("{}_{}_layer{:02}.tns", model, sequence, layer));
            }
        }
    }
}

void write_ratings(const Lexicon& lex, const FixtureParams& p, std::uint64_t seed, const fs::path& dir) {
    fs::create_directories(dir / "ratings");
    std::uint64_t stream = 30;
    for (const char* model : {kBaseline, kVision}) {
        Rng rng(derive_seed(seed, stream++));
        const bool vision = std::string_view(model) == kVision;
        std::string out;
        auto emit = [&](const std::string& word, double center) {
            for (std::size_t k = 0; k < p.contexts_per_word; ++k) {
                const double raw = std::clamp(center + p.rating_noise * rng.normal(), 1.0, 5.0);
                const nlohmann::json j = {{"model_id", model},
                                          {"context_id", fmt::format("{}-ctx{:02}", word, k)},
                                          {"word", word},
                                          {"rating", std::round(raw * 10.0) / 10.0}};
                out += j.dump() + "\n";
            }
        };
        for (std::size_t w = 0; w < lex.words.size(); ++w) {
            const double m = lex.means[w];
            const double bias = vision ? p.vision_abstract_bias * (5.0 - m) / 4.0 : p.baseline_bias;
            emit(lex.words[w], m + bias);
        }
        // Ratings for unnormed words are counted and skipped by the aligner.
        for (std::size_t k = 0; k < 4 && k < lex.function_words.size(); ++k) emit(lex.function_words[k], 3.0);
        write_file(dir / "ratings" / fmt::format("{}.jsonl", model), out);
    }
}

}  // namespace

KeyValueConfig FixtureParams::to_config() const {
    KeyValueConfig c;
    auto num = [](double x) { return fmt::format("{}", x); };
    c.set("fixture.words", std::to_string(words));
    c.set("fixture.datasets", std::to_string(datasets));
    c.set("fixture.questions_per_dataset", std::to_string(questions_per_dataset));
    c.set("fixture.words_per_question", std::to_string(words_per_question));
    c.set("fixture.baseline_accuracy", num(baseline_accuracy));
    c.set("fixture.vision_accuracy_low", num(vision_accuracy_low));
    c.set("fixture.vision_accuracy_high", num(vision_accuracy_high));
    c.set("fixture.embedding_dim", std::to_string(embedding_dim));
    c.set("fixture.occurrences_per_word", std::to_string(occurrences_per_word));
    c.set("fixture.vision_cluster_scale", num(vision_cluster_scale));
    c.set("fixture.baseline_cluster_scale", num(baseline_cluster_scale));
    c.set("fixture.sequences", std::to_string(sequences));
    c.set("fixture.tokens", std::to_string(tokens));
    c.set("fixture.layers", std::to_string(layers));
    c.set("fixture.heads", std::to_string(heads));
    c.set("fixture.vision_coupling", num(vision_coupling));
    c.set("fixture.baseline_coupling", num(baseline_coupling));
    c.set("fixture.contexts_per_word", std::to_string(contexts_per_word));
    c.set("fixture.vision_abstract_bias", num(vision_abstract_bias));
    c.set("fixture.baseline_bias", num(baseline_bias));
    c.set("fixture.rating_noise", num(rating_noise));
    return c;
}

void generate_fixtures(std::uint64_t seed, const fs::path& out_dir, const FixtureParams& params) {
    if (params.words < 60) throw InvalidArgument("fixtures: need at least 60 words");
    if (params.tokens < 4 || params.layers < 5 || params.heads < 1 || params.sequences < 1) {
        throw InvalidArgument("fixtures: need tokens >= 4, layers >= 5, heads >= 1, sequences >= 1");
    }
    if (params.words_per_question < 1 || params.words_per_question > 12) {
        throw InvalidArgument("fixtures: words_per_question must be in 1..12");
    }
    if (params.contexts_per_word < 3) throw InvalidArgument("fixtures: contexts_per_word must be >= 3");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir)) {
        throw InputError(fmt::format("cannot create fixture directory '{}'", out_dir.string()));
    }
    try {
        Rng rng(derive_seed(seed, 0));
        const Lexicon lex = make_lexicon(rng, params.words);
        write_norms(lex, out_dir);
        write_qa(lex, params, seed, out_dir);
        write_embeddings(lex, params, seed, out_dir);
        write_attention(lex, params, seed, out_dir);
        write_ratings(lex, params, seed, out_dir);

        RunSettings settings;
        settings.run_id = fmt::format("synthetic-seed{}", seed);
        settings.baseline_id = kBaseline;
        settings.vision_id = kVision;
        settings.function_words_path = "function_words.txt";
        const KeyValueConfig fixture_keys = params.to_config();
        for (const auto& [k, v] : fixture_keys.values()) settings.passthrough[k] = v;
        settings.passthrough["fixture.seed"] = std::to_string(seed);
        write_file(out_dir / "run.conf", "# synthetic model pair\n" + settings_to_config(settings).serialize());
    } catch (const fs::filesystem_error& e) {
        throw InputError(fmt::format("fixtures: {}", e.what()));
    }
}

}  // namespace cprobe
