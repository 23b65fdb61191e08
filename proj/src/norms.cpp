#include "cprobe/norms.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>

#include <fmt/format.h>

#include "cprobe/stats.hpp"
#include "function_words_data.hpp"

namespace cprobe {

namespace {

bool is_punct(char c) noexcept { return std::ispunct(static_cast<unsigned char>(c)) != 0; }
bool is_space(char c) noexcept { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string_view trim_space(std::string_view s) noexcept {
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

// Splits one delimited line. Double-quoted fields may contain the delimiter
// and "" escapes.
std::vector<std::string> split_fields(std::string_view line, char delim) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"' && trim_space(cur).empty()) {
            cur.clear();
            quoted = true;
        } else if (c == delim) {
            fields.emplace_back(trim_space(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    fields.emplace_back(trim_space(cur));
    return fields;
}

std::optional<double> parse_double(std::string_view s) {
    s = trim_space(s);
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

std::size_t column_index(const std::vector<std::string>& header, const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
        throw NormsSchemaError(fmt::format("norms: column '{}' not found in header", name));
    }
    return static_cast<std::size_t>(it - header.begin());
}

bool ends_sentence(std::string_view raw) noexcept {
    while (!raw.empty() && (raw.back() == '"' || raw.back() == '\'' || raw.back() == ')')) raw.remove_suffix(1);
    return !raw.empty() && (raw.back() == '.' || raw.back() == '!' || raw.back() == '?');
}

}  // namespace

NormsTable::NormsTable(Scale scale) : scale_(scale) {
    if (!(scale.min < scale.max)) {
        throw InvalidArgument(fmt::format("norms scale must satisfy min < max, got {}:{}", scale.min, scale.max));
    }
}

bool NormsTable::insert(std::string_view word, const NormEntry& entry) {
    if (!(entry.mean >= scale_.min && entry.mean <= scale_.max)) {
        throw InvalidArgument(fmt::format("mean {} outside scale [{}, {}]", entry.mean, scale_.min, scale_.max));
    }
    if (!(entry.sd >= 0.0)) throw InvalidArgument(fmt::format("negative sd {}", entry.sd));
    std::string key = to_lower(trim_space(word));
    if (key.empty()) throw InvalidArgument("empty norms word");
    return entries_.try_emplace(std::move(key), entry).second;
}

const NormEntry* NormsTable::find(std::string_view word) const {
    auto it = entries_.find(word);
    if (it != entries_.end()) return &it->second;
    const bool has_upper = std::any_of(word.begin(), word.end(), [](char c) { return c >= 'A' && c <= 'Z'; });
    if (!has_upper) return nullptr;
    it = entries_.find(to_lower(word));
    return it == entries_.end() ? nullptr : &it->second;
}

NormsRowError::NormsRowError(std::size_t line, const std::string& what)
    : InputError(fmt::format("norms line {}: {}", line, what)), line_(line) {}

NormsLoadResult load_norms(std::istream& source, const NormsColumns& columns, Scale scale) {
    NormsLoadResult result{NormsTable(scale), 0, ','};

    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (!have_header && std::getline(source, line)) {
        ++line_no;
        if (line_no == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
        if (!trim_space(line).empty()) have_header = true;
    }
    if (!have_header) throw InputError("norms: empty table (no header row)");
    if (!line.empty() && line.back() == '\r') line.pop_back();

    const auto tabs = std::count(line.begin(), line.end(), '\t');
    const auto commas = std::count(line.begin(), line.end(), ',');
    result.delimiter = tabs > commas ? '\t' : ',';
    const std::vector<std::string> header = split_fields(line, result.delimiter);

    const std::size_t word_col = column_index(header, columns.word);
    const std::size_t mean_col = column_index(header, columns.mean);
    const std::size_t sd_col = column_index(header, columns.sd);
    const std::optional<std::size_t> raters_col =
        columns.n_raters.empty() ? std::nullopt : std::optional(column_index(header, columns.n_raters));
    const std::size_t needed = std::max({word_col, mean_col, sd_col, raters_col.value_or(0)}) + 1;

    while (std::getline(source, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim_space(line).empty()) continue;
        const std::vector<std::string> fields = split_fields(line, result.delimiter);
        if (fields.size() < needed) {
            throw NormsRowError(line_no, fmt::format("expected at least {} fields, found {}", needed, fields.size()));
        }
        const std::string& word = fields[word_col];
        if (word.empty()) throw NormsRowError(line_no, "empty word cell");
        const auto mean = parse_double(fields[mean_col]);
        if (!mean) throw NormsRowError(line_no, fmt::format("unparsable mean '{}'", fields[mean_col]));
        const auto sd = parse_double(fields[sd_col]);
        if (!sd) throw NormsRowError(line_no, fmt::format("unparsable sd '{}'", fields[sd_col]));

        NormEntry entry{*mean, *sd, std::nullopt};
        if (raters_col) {
            const auto n = parse_double(fields[*raters_col]);
            if (!n || *n < 0.0 || std::floor(*n) != *n) {
                throw NormsRowError(line_no, fmt::format("unparsable rater count '{}'", fields[*raters_col]));
            }
            entry.n_raters = static_cast<std::size_t>(*n);
        }
        try {
            if (!result.table.insert(word, entry)) ++result.duplicates;
        } catch (const InvalidArgument& e) {
            throw NormsRowError(line_no, e.what());
        }
    }
    if (result.table.empty()) throw InputError("norms: table has a header but no rows");
    return result;
}

NormsLoadResult load_norms_file(const std::filesystem::path& path, const NormsColumns& columns, Scale scale) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError(fmt::format("cannot open norms file '{}'", path.string()));
    return load_norms(in, columns, scale);
}

WordSet load_word_list(std::istream& source) {
    WordSet words;
    std::string line;
    while (std::getline(source, line)) {
        const std::string_view w = trim_space(line);
        if (w.empty() || w.front() == '#') continue;
        words.insert(to_lower(w));
    }
    return words;
}

WordSet load_word_list_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError(fmt::format("cannot open word list '{}'", path.string()));
    return load_word_list(in);
}

const WordSet& default_function_words() {
    static const WordSet words = [] {
        std::istringstream in{std::string(detail::kFunctionWordsData)};
        return load_word_list(in);
    }();
    return words;
}

std::string_view to_string(LexicalClass c) noexcept {
    switch (c) {
        case LexicalClass::covered: return "covered";
        case LexicalClass::function_word: return "function_word";
        case LexicalClass::proper_noun_oov: return "proper_noun_oov";
        case LexicalClass::other_oov: return "other_oov";
    }
    return "unknown";
}

std::string to_lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return out;
}

std::string_view trim_punctuation(std::string_view s) noexcept {
    s = trim_space(s);
    while (!s.empty() && is_punct(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_punct(s.back())) s.remove_suffix(1);
    return s;
}

WordToken classify_and_score(std::string_view word, std::size_t sentence_position, const NormsTable& norms,
                             const WordSet& function_words, const WordSet* named_entities) {
    const std::string_view surface = trim_punctuation(word);
    if (surface.empty()) throw InvalidArgument(fmt::format("word '{}' is empty after normalization", word));
    const std::string key = to_lower(surface);

    WordToken token{std::string(surface), sentence_position, LexicalClass::other_oov, 0.0};
    if (const NormEntry* entry = norms.find(key)) {
        token.lexical_class = LexicalClass::covered;
        token.score = entry->mean;
    } else if (function_words.contains(key)) {
        token.lexical_class = LexicalClass::function_word;
    } else if ((sentence_position > 0 && surface.front() >= 'A' && surface.front() <= 'Z') ||
               (named_entities != nullptr && named_entities->contains(key))) {
        token.lexical_class = LexicalClass::proper_noun_oov;
        token.score = norms.scale().max;
    }
    return token;
}

double score_sentence(std::span<const WordToken> tokens, const SentenceScoring& options) {
    if (tokens.empty()) throw InvalidArgument("score_sentence: empty token list");
    stats::KahanSum total;
    std::size_t n = 0;
    for (const WordToken& t : tokens) {
        if (t.lexical_class == LexicalClass::function_word && !options.include_function_words) continue;
        if (t.lexical_class == LexicalClass::other_oov && !options.include_other_oov) continue;
        total += t.score;
        ++n;
    }
    if (n == 0) throw InvalidArgument("score_sentence: every token was excluded");
    return total.value() / static_cast<double>(n);
}

std::vector<RawWord> tokenize_words(std::string_view text) {
    std::vector<RawWord> words;
    std::size_t position = 0;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        const std::size_t start = i;
        while (i < text.size() && !is_space(text[i])) ++i;
        if (start == i) break;
        const std::string_view raw = text.substr(start, i - start);
        const std::string_view word = trim_punctuation(raw);
        if (!word.empty()) words.push_back({std::string(word), position++});
        if (ends_sentence(raw)) position = 0;
    }
    return words;
}

ScoredText score_text(std::string_view text, const NormsTable& norms, const WordSet& function_words,
                      const WordSet* named_entities, const SentenceScoring& options) {
    ScoredText out;
    for (const RawWord& w : tokenize_words(text)) {
        out.tokens.push_back(classify_and_score(w.surface, w.position, norms, function_words, named_entities));
    }
    if (out.tokens.empty()) throw InvalidArgument("score_text: no word tokens in text");
    out.score = score_sentence(out.tokens, options);
    return out;
}

void SubwordAlignment::validate(std::size_t n_words) const {
    std::size_t expected_next = 0;
    for (std::size_t k = 0; k < word_index_per_subtoken.size(); ++k) {
        const std::size_t w = word_index_per_subtoken[k];
        if (w >= n_words) {
            throw InvalidArgument(fmt::format("subtoken {} maps to word {} but there are only {} words", k, w, n_words));
        }
        if (w + 1 == expected_next) continue;  // same word as previous subtoken
        if (w != expected_next) {
            throw InvalidArgument(fmt::format("subtoken {} maps to word {}; expected {} (indices must be "
                                              "non-decreasing and cover every word)",
                                              k, w, expected_next));
        }
        ++expected_next;
    }
    if (expected_next != n_words) {
        throw InvalidArgument(fmt::format("alignment covers {} of {} words", expected_next, n_words));
    }
}

std::vector<SubtokenScore> propagate_subwords(std::span<const WordToken> tokens, const SubwordAlignment& alignment) {
    alignment.validate(tokens.size());
    std::vector<SubtokenScore> out;
    out.reserve(alignment.n_subtokens());
    for (std::size_t k = 0; k < alignment.n_subtokens(); ++k) {
        out.push_back({k, tokens[alignment.word_index_per_subtoken[k]].score});
    }
    return out;
}

}  // namespace cprobe
