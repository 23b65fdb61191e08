#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"

#include "cprobe/norms.hpp"
#include "cprobe/random.hpp"

using namespace cprobe;

namespace {

const char* kFixture =
    "Word,Conc.M,Conc.SD\n"
    "apple,4.9,0.3\n"
    "idea,1.6,0.9\n"
    "run,4.0,0.6\n";

NormsTable fixture_norms() {
    std::istringstream in(kFixture);
    return load_norms(in).table;
}

WordSet small_stoplist() { return {"the", "a", "of"}; }

}  // namespace

TEST_CASE("load_norms parses the three-row fixture") {
    std::istringstream in(kFixture);
    const auto res = load_norms(in);
    CHECK(res.table.size() == 3);
    CHECK(res.duplicates == 0);
    CHECK(res.delimiter == ',');
    REQUIRE(res.table.find("IDEA") != nullptr);
    CHECK(res.table.find("idea")->mean == 1.6);
    CHECK(res.table.find("idea")->sd == 0.9);
}

TEST_CASE("load_norms keeps the first of case-insensitive duplicates") {
    std::istringstream in(std::string(kFixture) + "APPLE,3.0,0.1\n");
    const auto res = load_norms(in);
    CHECK(res.table.size() == 3);
    CHECK(res.duplicates == 1);
    CHECK(res.table.find("apple")->mean == 4.9);
}

TEST_CASE("load_norms reads tab-separated files with custom columns") {
    std::istringstream in("term\tm\ts\tn\nStone\t4.5\t0.5\t30\n");
    NormsColumns cols{"term", "m", "s", "n"};
    const auto res = load_norms(in, cols, Scale{1, 7});
    CHECK(res.delimiter == '\t');
    REQUIRE(res.table.find("stone"));
    CHECK(res.table.find("stone")->n_raters == 30u);
    CHECK(res.table.scale().max == 7.0);
}

TEST_CASE("load_norms errors") {
    std::istringstream bad_mean("Word,Conc.M,Conc.SD\napple,4.9,0.3\nzebra,7.2,0.5\n");
    try {
        load_norms(bad_mean);
        FAIL("expected a row error");
    } catch (const NormsRowError& e) {
        CHECK(e.line() == 3);
    }

    std::istringstream unparsable("Word,Conc.M,Conc.SD\napple,high,0.3\n");
    CHECK_THROWS_AS(load_norms(unparsable), NormsRowError);

    std::istringstream missing_col("Word,Mean,Conc.SD\napple,4.9,0.3\n");
    CHECK_THROWS_AS(load_norms(missing_col), NormsSchemaError);

    std::istringstream empty("");
    CHECK_THROWS_AS(load_norms(empty), InputError);

    std::istringstream header_only("Word,Conc.M,Conc.SD\n");
    CHECK_THROWS_AS(load_norms(header_only), InputError);
}

TEST_CASE("classify_and_score applies the lexical rules in order") {
    const auto norms = fixture_norms();
    const auto stop = small_stoplist();

    const auto apple = classify_and_score("apple", 3, norms, stop);
    CHECK(apple.lexical_class == LexicalClass::covered);
    CHECK(apple.score == 4.9);

    const auto the = classify_and_score("the", 0, norms, stop);
    CHECK(the.lexical_class == LexicalClass::function_word);
    CHECK(the.score == 0.0);

    const auto name = classify_and_score("Beyonce", 3, norms, stop);
    CHECK(name.lexical_class == LexicalClass::proper_noun_oov);
    CHECK(name.score == 5.0);

    const auto initial = classify_and_score("Beyonce", 0, norms, stop);
    CHECK(initial.lexical_class == LexicalClass::other_oov);
    CHECK(initial.score == 0.0);

    const WordSet entities{"beyonce"};
    CHECK(classify_and_score("beyonce", 0, norms, stop, &entities).lexical_class == LexicalClass::proper_noun_oov);

    CHECK(classify_and_score("Apple", 4, norms, stop).lexical_class == LexicalClass::covered);
    CHECK(classify_and_score("apple,", 4, norms, stop).score == 4.9);
    CHECK_THROWS_AS(classify_and_score("...", 1, norms, stop), InvalidArgument);
}

TEST_CASE("score_sentence averages token scores") {
    std::vector<WordToken> tokens(3);
    tokens[0].score = 4.9;
    tokens[0].lexical_class = LexicalClass::covered;
    tokens[1].score = 0.0;
    tokens[1].lexical_class = LexicalClass::function_word;
    tokens[2].score = 3.1;
    tokens[2].lexical_class = LexicalClass::covered;
    CHECK(score_sentence(tokens) == doctest::Approx(8.0 / 3.0).epsilon(1e-15));
    CHECK(score_sentence(tokens, {.include_function_words = false}) == doctest::Approx(4.0));
    CHECK(score_sentence(std::span(tokens).first(1)) == 4.9);
    CHECK_THROWS_AS(score_sentence(std::vector<WordToken>{}), InvalidArgument);

    std::vector<WordToken> only_stop(1);
    only_stop[0].lexical_class = LexicalClass::function_word;
    CHECK_THROWS_AS(score_sentence(only_stop, {.include_function_words = false}), InvalidArgument);
}

TEST_CASE("score_text on a six-word sentence matches a hand sum") {
    const auto norms = fixture_norms();
    const auto stop = small_stoplist();
    const auto scored = score_text("The apple of an idea, Run!", norms, stop);
    REQUIRE(scored.tokens.size() == 6);
    // the=0, apple=4.9, of=0, an=0 (other OOV), idea=1.6, Run=4.0
    CHECK(scored.score == doctest::Approx((4.9 + 1.6 + 4.0) / 6.0).epsilon(1e-15));
    CHECK(scored.tokens[3].lexical_class == LexicalClass::other_oov);
}

TEST_CASE("tokenize_words restarts positions after sentence ends") {
    const auto words = tokenize_words("Hello there. Paris is big -- ok");
    REQUIRE(words.size() == 6);
    CHECK(words[1].surface == "there");
    CHECK(words[2].surface == "Paris");
    CHECK(words[2].position == 0);
    CHECK(words[3].position == 1);
    CHECK(words[5].surface == "ok");
}

TEST_CASE("trim_punctuation and to_lower") {
    CHECK(trim_punctuation("\"don't!\"") == "don't");
    CHECK(trim_punctuation("--well-known--") == "well-known");
    CHECK(trim_punctuation("?!").empty());
    CHECK(to_lower("MiXeD") == "mixed");
}

TEST_CASE("propagate_subwords copies each word score to its subtokens") {
    std::vector<WordToken> words(2);
    words[0].score = 4.9;
    words[1].score = 0.0;
    const auto out = propagate_subwords(words, SubwordAlignment{{0, 0, 1}});
    const std::vector<SubtokenScore> expected{{0, 4.9}, {1, 4.9}, {2, 0.0}};
    CHECK(out == expected);

    std::vector<WordToken> one(1);
    one[0].score = 3.3;
    CHECK(propagate_subwords(one, SubwordAlignment{{0}})[0].score == 3.3);

    CHECK_THROWS_AS(propagate_subwords(words, SubwordAlignment{{0, 2}}), InvalidArgument);
    CHECK_THROWS_AS(propagate_subwords(words, SubwordAlignment{{1, 0}}), InvalidArgument);
    CHECK_THROWS_AS(propagate_subwords(words, SubwordAlignment{{0, 0}}), InvalidArgument);
}

TEST_CASE("propagate_subwords matches an index expansion on random alignments") {
    Rng rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<WordToken> words(20);
        for (auto& w : words) w.score = rng.uniform(1, 5);
        SubwordAlignment align;
        std::vector<double> expanded;
        for (std::size_t w = 0; w < words.size(); ++w) {
            const auto pieces = 1 + rng.below(4);
            for (std::uint64_t k = 0; k < pieces; ++k) {
                align.word_index_per_subtoken.push_back(w);
                expanded.push_back(words[w].score);
            }
        }
        const auto out = propagate_subwords(words, align);
        REQUIRE(out.size() == expanded.size());
        for (std::size_t k = 0; k < out.size(); ++k) {
            CHECK(out[k].subtoken_index == k);
            CHECK(out[k].score == expanded[k]);
        }
    }
}

TEST_CASE("word lists") {
    std::istringstream in("# comment\nThe\n\n  of \n");
    const auto set = load_word_list(in);
    CHECK(set.size() == 2);
    CHECK(set.count("the") == 1);
    CHECK(set.count("of") == 1);
    CHECK(default_function_words().count("the") == 1);
    CHECK(default_function_words().count("apple") == 0);
}
