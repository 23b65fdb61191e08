#include <array>
#include <cmath>
#include <vector>

#include "doctest.h"

#include "cprobe/geometry.hpp"
#include "cprobe/random.hpp"
#include "oracles.hpp"

using namespace cprobe;

namespace {

Matrix random_points(Rng& rng, std::size_t n, std::size_t d) {
    Matrix m(n, d);
    for (double& v : m.values) v = rng.normal();
    return m;
}

std::vector<std::vector<double>> as_rows(const Matrix& m) {
    std::vector<std::vector<double>> out;
    for (std::size_t i = 0; i < m.rows; ++i) out.emplace_back(m.row(i).begin(), m.row(i).end());
    return out;
}

PlanarEmbedding single_bin(const std::vector<std::array<double, 2>>& pts, int bin = 3) {
    PlanarEmbedding e;
    e.coords = Matrix(pts.size(), 2);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        e.coords(i, 0) = pts[i][0];
        e.coords(i, 1) = pts[i][1];
        e.words.push_back("w" + std::to_string(i));
    }
    e.concreteness_bin.assign(pts.size(), bin);
    return e;
}

// Two clusters of 20 points in 10-D, centers 10 sd apart.
Matrix two_clusters(Rng& rng, std::vector<int>& label) {
    Matrix m(40, 10);
    label.assign(40, 0);
    for (std::size_t i = 0; i < 40; ++i) {
        label[i] = i < 20 ? 0 : 1;
        for (std::size_t k = 0; k < 10; ++k) m(i, k) = rng.normal() + (label[i] && k == 0 ? 10.0 : 0.0);
    }
    return m;
}

std::vector<std::array<double, 2>> planar(const Matrix& coords) {
    std::vector<std::array<double, 2>> out;
    for (std::size_t i = 0; i < coords.rows; ++i) out.push_back({coords(i, 0), coords(i, 1)});
    return out;
}

}  // namespace

TEST_CASE("type_vectors averages occurrences per word") {
    const std::vector<Occurrence> occ{{"cat", {1, 0}}, {"dog", {0, 2}}, {"cat", {3, 0}}};
    const auto m = type_vectors(occ);
    REQUIRE(m.size() == 2);
    CHECK(m.words[0] == "cat");
    CHECK(m.vectors(0, 0) == 2.0);
    CHECK(m.vectors(0, 1) == 0.0);
    CHECK(m.vectors(1, 1) == 2.0);

    CHECK_THROWS_AS(type_vectors(std::vector<Occurrence>{}), InvalidArgument);
    const std::vector<Occurrence> bad{{"a", {1, 0}}, {"b", {1}}};
    CHECK_THROWS_AS(type_vectors(bad), InvalidArgument);
}

TEST_CASE("type_vectors agrees with a two-pass mean") {
    Rng rng(51);
    std::vector<Occurrence> occ;
    for (int i = 0; i < 50; ++i) {
        Occurrence o{"w" + std::to_string(rng.below(7)), {}};
        for (int k = 0; k < 4; ++k) o.vector.push_back(rng.normal());
        occ.push_back(o);
    }
    const auto m = type_vectors(occ);
    for (std::size_t r = 0; r < m.size(); ++r) {
        for (std::size_t k = 0; k < 4; ++k) {
            long double s = 0;
            int n = 0;
            for (const auto& o : occ) {
                if (o.word == m.words[r]) s += o.vector[k], ++n;
            }
            CHECK(std::abs(m.vectors(r, k) - static_cast<double>(s / n)) < 1e-14);
        }
    }
}

TEST_CASE("embedding tensors round-trip and merge repeated rows") {
    Tensor t;
    t.shape = {3, 2};
    t.data = {1, 2, 3, 4, 5, 6};
    t.meta["words"] = {"a", "b", "a"};
    const auto m = embeddings_from_tensor(t);
    REQUIRE(m.size() == 2);
    CHECK(m.vectors(0, 0) == 3.0);
    CHECK(m.vectors(0, 1) == 4.0);
    const auto back = embeddings_from_tensor(embeddings_to_tensor(m));
    CHECK(back.words == m.words);
    CHECK(back.vectors.values == m.vectors.values);

    t.meta["words"] = {"a", "b"};
    CHECK_THROWS_AS(embeddings_from_tensor(t), InputError);
}

TEST_CASE("square corners give uniform rows over equidistant neighbours") {
    Matrix sq(4, 2);
    const double corners[4][2] = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
    for (int i = 0; i < 4; ++i) sq(i, 0) = corners[i][0], sq(i, 1) = corners[i][1];
    const auto aff = tsne_affinities(sq, 2.0);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(aff.conditional(i, i) == 0.0);
        const std::size_t left = (i + 1) % 4, right = (i + 3) % 4;
        CHECK(aff.conditional(i, left) == doctest::Approx(aff.conditional(i, right)).epsilon(1e-12));
        CHECK(std::abs(aff.row_perplexity[i] - 2.0) < 1e-4);
    }
    double total = 0;
    for (double v : aff.joint.values) total += v;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("affinity rows reach the target perplexity") {
    Rng rng(52);
    const auto pts = random_points(rng, 10, 5);
    const auto aff = tsne_affinities(pts, 3.0);
    const auto rows = as_rows(pts);
    CHECK(aff.uncalibrated_rows == 0);
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(std::abs(oracle::row_perplexity(rows, i, aff.beta[i]) - 3.0) < 1e-4);
        // Perplexity grows as beta shrinks: a coarse scan brackets the solution.
        CHECK(oracle::row_perplexity(rows, i, aff.beta[i] * 1.05) < 3.0);
        CHECK(oracle::row_perplexity(rows, i, aff.beta[i] / 1.05) > 3.0);
        for (std::size_t j = 0; j < 10; ++j) {
            CHECK(aff.joint(i, j) == aff.joint(j, i));
            CHECK(aff.joint(i, j) ==
                  doctest::Approx((aff.conditional(i, j) + aff.conditional(j, i)) / 20.0).epsilon(1e-14));
        }
    }
}

TEST_CASE("affinities are independent of the thread count") {
    Rng rng(53);
    const auto pts = random_points(rng, 30, 4);
    const auto a = tsne_affinities(pts, 5.0, 1);
    const auto b = tsne_affinities(pts, 5.0, 4);
    CHECK(a.joint.values == b.joint.values);
    CHECK(a.beta == b.beta);
}

TEST_CASE("affinity and t-SNE parameter checks") {
    Matrix tiny(3, 2);
    CHECK_THROWS_AS(tsne_affinities(tiny, 1.5), InvalidArgument);
    Matrix four(4, 2);
    CHECK_THROWS_AS(tsne_affinities(four, 3.0), InvalidArgument);

    TsneParams p;
    CHECK_NOTHROW(p.validate(100));
    CHECK_THROWS_AS(p.validate(90), InvalidArgument);
    p.iterations = 100;
    CHECK_THROWS_AS(p.validate(1000), InvalidArgument);
    TsneParams q;
    q.learning_rate = 0;
    CHECK_THROWS_AS(q.validate(1000), InvalidArgument);
}

TEST_CASE("duplicate points clamp the bandwidth instead of failing") {
    Matrix dup(6, 2, 1.0);
    const auto aff = tsne_affinities(dup, 2.0);
    double total = 0;
    for (double v : aff.joint.values) {
        CHECK(std::isfinite(v));
        total += v;
    }
    CHECK(total == doctest::Approx(1.0));
}

TEST_CASE("t-SNE on the square descends and is deterministic") {
    Matrix sq(4, 2);
    const double corners[4][2] = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
    for (int i = 0; i < 4; ++i) sq(i, 0) = corners[i][0], sq(i, 1) = corners[i][1];
    const auto aff = tsne_affinities(sq, 2.0);
    TsneParams p;
    p.perplexity = 1.0;
    const auto a = tsne_embed(aff.joint, p);
    CHECK(a.kl_history.size() == 1000);
    CHECK(a.kl_history.back() <= a.initial_kl);
    // The optimum spreads the square out: q(edge) -> 1/10, so KL -> ln 1.25.
    CHECK(a.kl_history.back() == doctest::Approx(std::log(1.25)).epsilon(1e-3));
    CHECK(tsne_kl(aff.joint, a.coords) == doctest::Approx(a.kl_history.back()).epsilon(1e-12));
    const auto b = tsne_embed(aff.joint, p);
    CHECK(a.coords.values == b.coords.values);
    p.seed = 7;
    CHECK(tsne_embed(aff.joint, p).coords.values != a.coords.values);
}

TEST_CASE("t-SNE separates two distant Gaussian clusters") {
    Rng rng(54);
    std::vector<int> label;
    const auto pts = two_clusters(rng, label);
    TsneParams p;
    p.perplexity = 10;
    const auto res = tsne_embed(tsne_affinities(pts, p.perplexity).joint, p);
    CHECK(oracle::nn_purity(planar(res.coords), label) >= 0.95);
    for (std::size_t k = res.kl_history.size() - 50; k + 1 < res.kl_history.size(); ++k) {
        CHECK(res.kl_history[k + 1] <= res.kl_history[k] + 1e-12);
    }
}

TEST_CASE("tsne_embed rejects malformed affinities") {
    Matrix asym(4, 4);
    asym(0, 1) = 0.6;
    asym(1, 0) = 0.4;
    CHECK_THROWS_AS(tsne_embed(asym, TsneParams{}), InvalidArgument);
    Matrix unnorm(4, 4);
    unnorm(0, 1) = unnorm(1, 0) = 0.25;
    CHECK_THROWS_AS(tsne_embed(unnorm, TsneParams{}), InvalidArgument);
}

TEST_CASE("concreteness_bin rounds halves up and clamps") {
    CHECK(concreteness_bin(1.0) == 1);
    CHECK(concreteness_bin(1.49) == 1);
    CHECK(concreteness_bin(1.5) == 2);
    CHECK(concreteness_bin(2.5) == 3);
    CHECK(concreteness_bin(4.49) == 4);
    CHECK(concreteness_bin(4.5) == 5);
    CHECK(concreteness_bin(0.2) == 1);
    CHECK(concreteness_bin(6.0) == 5);
}

TEST_CASE("dispersion on simple bins") {
    CHECK(dispersion(single_bin({{{1, 0}}, {{1, 0}}})).bins.at(3).value == 0.0);
    CHECK(dispersion(single_bin({{{1, 0}}, {{0, 1}}})).bins.at(3).value == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(dispersion(single_bin({{{1, 0}}, {{-2, 0}}})).bins.at(3).value == doctest::Approx(2.0).epsilon(1e-15));

    auto with_zero = single_bin({{{1, 0}}, {{0, 0}}, {{0, 1}}});
    const auto res = dispersion(with_zero);
    CHECK(res.zero_norm_excluded == 1);
    CHECK(res.bins.at(3).members == 2);

    auto lonely = single_bin({{{1, 0}}, {{0, 1}}, {{1, 1}}});
    lonely.concreteness_bin = {1, 1, 4};
    const auto r2 = dispersion(lonely);
    CHECK(r2.bins.count(4) == 0);
    CHECK(r2.omitted_bins == std::vector<int>{4});
    CHECK(r2.overall() == doctest::Approx(1.0));
}

TEST_CASE("dispersion matches the all-pairs oracle") {
    Rng rng(55);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::array<double, 2>> pts(30);
        for (auto& p : pts) p = {rng.normal(), rng.normal()};
        const auto emb = single_bin(pts);
        CHECK(std::abs(dispersion(emb).bins.at(3).value - oracle::dispersion_cosine(pts)) < 1e-12);
        const auto eu = dispersion(emb, {.metric = DispersionMetric::euclidean});
        CHECK(std::abs(eu.bins.at(3).value - oracle::dispersion_euclidean(pts)) < 1e-12);
    }
}

TEST_CASE("sampled dispersion is reproducible and close to exact") {
    Rng rng(56);
    std::vector<std::array<double, 2>> pts(200);
    for (auto& p : pts) p = {rng.normal(), rng.normal() + 0.5};
    const auto emb = single_bin(pts);
    const DispersionOptions capped{.metric = DispersionMetric::cosine, .pair_cap = 5000, .seed = 3};
    const auto a = dispersion(emb, capped);
    const auto b = dispersion(emb, capped);
    CHECK(a.bins.at(3).sampled);
    CHECK(a.bins.at(3).pairs == 5000);
    CHECK(a.bins.at(3).value == b.bins.at(3).value);
    CHECK(std::abs(a.bins.at(3).value - dispersion(emb).bins.at(3).value) < 0.05);
}

TEST_CASE("run_geometry keeps only normed words") {
    Rng rng(57);
    EmbeddingMatrix m;
    NormsTable norms;
    m.vectors = Matrix(40, 6);
    for (std::size_t i = 0; i < 40; ++i) {
        m.words.push_back("w" + std::to_string(i));
        for (std::size_t k = 0; k < 6; ++k) m.vectors(i, k) = rng.normal() + (i % 2 ? 5.0 : 0.0);
        if (i < 36) norms.insert(m.words.back(), {i % 2 ? 4.6 : 1.2, 0.5, {}});
    }
    TsneParams p;
    p.perplexity = 5;
    p.iterations = 400;
    const auto out = run_geometry(m, norms, p);
    CHECK(out.words_without_norms == 4);
    CHECK(out.embedding.words.size() == 36);
    CHECK(out.dispersion.bins.size() == 2);
    CHECK(out.dispersion.bins.count(1) == 1);
    CHECK(out.dispersion.bins.count(5) == 1);

    NormsTable none;
    CHECK_THROWS_AS(run_geometry(m, none, p), InputError);
}
