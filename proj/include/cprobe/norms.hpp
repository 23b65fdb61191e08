#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cprobe/error.hpp"

namespace cprobe {

// Rating scale bounds in rating units.
struct Scale {
    double min = 1.0;
    double max = 5.0;
};

struct NormEntry {
    double mean = 0.0;
    double sd = 0.0;
    std::optional<std::size_t> n_raters;
};

// Word -> (mean, sd) human concreteness norms. Keys are lower-cased.
class NormsTable {
public:
    explicit NormsTable(Scale scale = {});

    // Returns false (and leaves the table untouched) when the lower-cased word
    // is already present. Throws InvalidArgument on invariant violations.
    bool insert(std::string_view word, const NormEntry& entry);

    // Case-insensitive lookup.
    const NormEntry* find(std::string_view word) const;
    bool contains(std::string_view word) const { return find(word) != nullptr; }

    const Scale& scale() const noexcept { return scale_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    const std::map<std::string, NormEntry, std::less<>>& entries() const noexcept { return entries_; }

private:
    Scale scale_;
    std::map<std::string, NormEntry, std::less<>> entries_;
};

// Header names for the columns of a norms file. Defaults follow the layout of
// the published 40K concreteness norms.
struct NormsColumns {
    std::string word = "Word";
    std::string mean = "Conc.M";
    std::string sd = "Conc.SD";
    std::string n_raters;  // empty: not read
};

class NormsSchemaError : public InputError {
public:
    using InputError::InputError;
};

class NormsRowError : public InputError {
public:
    NormsRowError(std::size_t line, const std::string& what);
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

struct NormsLoadResult {
    NormsTable table;
    std::size_t duplicates = 0;
    char delimiter = ',';
};

// Parses a delimited norms table (comma or tab, autodetected from the header).
NormsLoadResult load_norms(std::istream& source, const NormsColumns& columns = {}, Scale scale = {});
NormsLoadResult load_norms_file(const std::filesystem::path& path, const NormsColumns& columns = {},
                                Scale scale = {});

// Lower-cased word set with heterogeneous lookup.
using WordSet = std::set<std::string, std::less<>>;

// One word per line; blank lines and lines starting with '#' are skipped.
WordSet load_word_list(std::istream& source);
WordSet load_word_list_file(const std::filesystem::path& path);

// The stoplist shipped in data/function_words.txt.
const WordSet& default_function_words();

enum class LexicalClass { covered, function_word, proper_noun_oov, other_oov };

std::string_view to_string(LexicalClass c) noexcept;

struct WordToken {
    std::string surface;
    std::size_t position = 0;
    LexicalClass lexical_class = LexicalClass::other_oov;
    double score = 0.0;
};

// ASCII lower-casing; bytes outside ASCII pass through unchanged.
std::string to_lower(std::string_view s);

// Strips leading and trailing ASCII punctuation. Inner apostrophes and hyphens stay.
std::string_view trim_punctuation(std::string_view s) noexcept;

// Assigns a concreteness score to a word at a given position in its sentence.
// Order of rules: norms lookup, function-word list, proper-noun rule
// (capitalised at a non-initial position, or listed in `named_entities`),
// otherwise other_oov with score 0.
WordToken classify_and_score(std::string_view word, std::size_t sentence_position, const NormsTable& norms,
                             const WordSet& function_words, const WordSet* named_entities = nullptr);

struct SentenceScoring {
    bool include_function_words = true;
    bool include_other_oov = true;
};

// Mean of token scores. Throws InvalidArgument when no token is left to average.
double score_sentence(std::span<const WordToken> tokens, const SentenceScoring& options = {});

struct RawWord {
    std::string surface;
    std::size_t position = 0;  // index within its sentence
};

// Whitespace split, then punctuation trim. Tokens that are pure punctuation are
// dropped. Sentence positions restart after a token ending in '.', '!' or '?'.
std::vector<RawWord> tokenize_words(std::string_view text);

struct ScoredText {
    std::vector<WordToken> tokens;
    double score = 0.0;
};

ScoredText score_text(std::string_view text, const NormsTable& norms, const WordSet& function_words,
                      const WordSet* named_entities = nullptr, const SentenceScoring& options = {});

struct SubwordAlignment {
    std::vector<std::size_t> word_index_per_subtoken;

    std::size_t n_subtokens() const noexcept { return word_index_per_subtoken.size(); }
    // Checks monotonicity and that each of the n_words words owns >= 1 subtoken.
    void validate(std::size_t n_words) const;
};

struct SubtokenScore {
    std::size_t subtoken_index = 0;
    double score = 0.0;

    friend bool operator==(const SubtokenScore&, const SubtokenScore&) = default;
};

std::vector<SubtokenScore> propagate_subwords(std::span<const WordToken> tokens, const SubwordAlignment& alignment);

}  // namespace cprobe
