#include "cprobe/cli.hpp"

#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <vector>

#include <fmt/format.h>
#include "CLI11.hpp"
#include "json.hpp"

#include "cprobe/fixtures.hpp"
#include "cprobe/pipeline.hpp"
#include "cprobe/version.hpp"
#include "text_util.hpp"

namespace cprobe {

namespace fs = std::filesystem;

namespace {

std::string g6(double x) { return fmt::format("{:.6g}", x); }
std::string g6(const std::optional<double>& x) { return x ? g6(*x) : std::string(); }

Scale parse_scale_flag(const std::string& text) {
    const auto parts = detail::parse_number_list(text, ':');
    if (!parts || parts->size() != 2 || !((*parts)[0] < (*parts)[1])) {
        throw InvalidArgument(fmt::format("--norms-scale: expected MIN:MAX with MIN < MAX, got '{}'", text));
    }
    return {(*parts)[0], (*parts)[1]};
}

struct NormsFlags {
    std::string path;
    NormsColumns columns;
    std::string scale = "1:5";
    std::string function_words;
    std::string named_entities;

    void add(CLI::App* cmd, bool required) {
        auto* opt = cmd->add_option("--norms", path, "Concreteness norms table (CSV or TSV with header)");
        if (required) opt->required();
        cmd->add_option("--norms-word-col", columns.word, "Norms column holding the word")->capture_default_str();
        cmd->add_option("--norms-mean-col", columns.mean, "Norms column holding the mean rating")->capture_default_str();
        cmd->add_option("--norms-sd-col", columns.sd, "Norms column holding the rating SD")->capture_default_str();
        cmd->add_option("--norms-scale", scale, "Rating scale of the norms, MIN:MAX")->capture_default_str();
        cmd->add_option("--function-words", function_words, "Function-word list, one per line (default: built-in)");
        cmd->add_option("--named-entities", named_entities, "Named-entity list scored as proper nouns");
    }

    bool given() const { return !path.empty(); }
    Scale scale_value() const { return parse_scale_flag(scale); }
    NormsTable load() const { return load_norms_file(path, columns, scale_value()).table; }
    WordSet function_word_set() const {
        return function_words.empty() ? default_function_words() : load_word_list_file(function_words);
    }
    std::optional<WordSet> named_entity_set() const {
        if (named_entities.empty()) return std::nullopt;
        return load_word_list_file(named_entities);
    }
};

// Writes to `path`, or to `fallback` when the path is empty.
void emit(const std::string& path, std::ostream& fallback, const std::string& text) {
    if (path.empty()) {
        fallback << text;
        return;
    }
    std::ofstream file(path, std::ios::binary);
    if (!file) throw InputError(fmt::format("cannot write '{}'", path));
    file << text;
    if (!file) throw InputError(fmt::format("write failed for '{}'", path));
}

struct ScoreArgs {
    NormsFlags norms;
    std::string text;
    std::string input;
    std::string out;
    bool exclude_function_words = false;
    bool exclude_oov = false;
};

void run_score(const ScoreArgs& a, std::ostream& out) {
    const NormsTable norms = a.norms.load();
    const WordSet fw = a.norms.function_word_set();
    const auto ne = a.norms.named_entity_set();
    SentenceScoring scoring;
    scoring.include_function_words = !a.exclude_function_words;
    scoring.include_other_oov = !a.exclude_oov;

    std::vector<std::string> lines;
    if (!a.text.empty()) {
        lines.push_back(a.text);
    } else {
        std::ifstream in(a.input);
        if (!in) throw InputError(fmt::format("cannot open '{}'", a.input));
        for (std::string line; std::getline(in, line);) lines.push_back(line);
    }
    std::string csv = "line,concreteness,tokens,covered,function_word,proper_noun_oov,other_oov\n";
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (detail::is_blank(lines[i])) continue;
        std::map<LexicalClass, std::size_t> counts;
        std::optional<double> score;
        std::size_t n_tokens = 0;
        for (const RawWord& w : tokenize_words(lines[i])) {
            ++n_tokens;
            ++counts[classify_and_score(w.surface, w.position, norms, fw, ne ? &*ne : nullptr).lexical_class];
        }
        try {
            score = score_text(lines[i], norms, fw, ne ? &*ne : nullptr, scoring).score;
        } catch (const InvalidArgument&) {
            // No token left to average; reported as an empty field.
        }
        csv += fmt::format("{},{},{},{},{},{},{}\n", i + 1, g6(score), n_tokens, counts[LexicalClass::covered],
                           counts[LexicalClass::function_word], counts[LexicalClass::proper_noun_oov],
                           counts[LexicalClass::other_oov]);
    }
    emit(a.out, out, csv);
}

struct BehaviorArgs {
    NormsFlags norms;
    std::string qa;
    std::string qa_baseline;
    std::string bins = "1.8:4.8:0.6";
    std::string out;
};

void run_behavior(const BehaviorArgs& a, std::ostream& out) {
    const BinSpec bins = parse_bins(a.bins);
    auto vision = read_qa_jsonl_file(a.qa);
    auto baseline = read_qa_jsonl_file(a.qa_baseline);
    if (vision.empty() || baseline.empty()) throw InputError("behavior: empty QA file");
    auto lacks = [](const std::vector<QARecord>& rs) {
        return std::any_of(rs.begin(), rs.end(), [](const QARecord& r) { return !r.sentence_concreteness; });
    };
    if (lacks(vision) || lacks(baseline)) {
        if (!a.norms.given()) {
            throw InvalidArgument("behavior: --norms is required when QA records lack sentence_concreteness");
        }
        const NormsTable norms = a.norms.load();
        const WordSet fw = a.norms.function_word_set();
        const auto ne = a.norms.named_entity_set();
        fill_concreteness(vision, norms, fw, ne ? &*ne : nullptr);
        fill_concreteness(baseline, norms, fw, ne ? &*ne : nullptr);
    }
    const BehaviorSection b = analyze_behavior(baseline, vision, bins);
    std::string csv = "bin_center,baseline_accuracy,baseline_n,vision_accuracy,vision_n,gap\n";
    for (std::size_t k = 0; k < bins.size(); ++k) {
        csv += fmt::format("{},{},{},{},{},{}\n", g6(b.gap.bin_centers[k]), g6(b.accuracy.baseline.values[k]),
                           b.accuracy.baseline.counts[k], g6(b.accuracy.vision.values[k]),
                           b.accuracy.vision.counts[k], g6(b.gap.values[k]));
    }
    emit(a.out, out, csv);
    if (!a.out.empty()) {
        out << fmt::format("accuracy {} {} / {} {}; gap trend spearman rho {} over {} bins; out of range {} / {}\n",
                           baseline.front().model_id, g6(b.pooled_accuracy.baseline), vision.front().model_id,
                           g6(b.pooled_accuracy.vision), g6(b.trend.spearman_rho), b.trend.n_bins,
                           b.accuracy.baseline.out_of_range, b.accuracy.vision.out_of_range);
    }
}

struct GeometryArgs {
    NormsFlags norms;
    std::string embeddings;
    TsneParams tsne;
    std::string metric = "cosine";
    std::size_t pair_cap = 0;
    std::string out;
    std::string coords;
};

void run_geometry_cmd(const GeometryArgs& a, unsigned threads, std::ostream& out) {
    DispersionOptions options;
    options.metric = parse_metric(a.metric);
    options.pair_cap = a.pair_cap;
    options.seed = a.tsne.seed;
    const NormsTable norms = a.norms.load();
    const EmbeddingMatrix matrix = embeddings_from_tensor(read_tensor(a.embeddings));
    const GeometryOutcome g = run_geometry(matrix, norms, a.tsne, options, threads);
    std::string csv = "bin,dispersion,members,pairs,sampled\n";
    for (const auto& [bin, d] : g.dispersion.bins) {
        csv += fmt::format("{},{},{},{},{}\n", bin, g6(d.value), d.members, d.pairs, d.sampled ? 1 : 0);
    }
    emit(a.out, out, csv);
    if (!a.coords.empty()) {
        std::string c = "word,x,y,bin\n";
        for (std::size_t i = 0; i < g.embedding.words.size(); ++i) {
            c += fmt::format("{},{:.9g},{:.9g},{}\n", g.embedding.words[i], g.embedding.coords(i, 0),
                             g.embedding.coords(i, 1), g.embedding.concreteness_bin[i]);
        }
        emit(a.coords, out, c);
    }
    if (!a.out.empty()) {
        const GeometryModel m = summarize_geometry(g);
        out << fmt::format("embedded {} words ({} without norms); final KL {}; overall dispersion {}\n", m.words,
                           m.words_without_norms, g6(m.final_kl),
                           g.dispersion.bins.empty() ? std::string("undefined") : g6(g.dispersion.overall()));
    }
}

struct AttentionArgs {
    NormsFlags norms;
    std::string tensors;
    std::string model_id;
    std::string normalization = "raw";
    std::size_t min_n = 10;
    bool include_zero_scores = false;
    bool per_sequence = false;
    std::string out;
};

void run_attention_cmd(const AttentionArgs& a, unsigned threads, std::ostream& out) {
    AttentionLoadOptions opt;
    if (!a.model_id.empty()) opt.model_id = a.model_id;
    opt.normalization = parse_normalization(a.normalization);
    opt.threads = threads;
    CorrelationOptions corr;
    corr.min_n = a.min_n;
    corr.include_zero_scores = a.include_zero_scores;
    const NormsTable norms = a.norms.load();
    const WordSet fw = a.norms.function_word_set();
    const auto ne = a.norms.named_entity_set();
    const auto sheets = load_attention_dir(a.tensors, norms, fw, opt, ne ? &*ne : nullptr);
    if (sheets.empty()) throw InputError(fmt::format("attention: no tensors found in '{}'", a.tensors));

    AttentionModel m;
    if (a.per_sequence) {
        m.layers = per_sequence_correlations(sheets, corr);
        m.mean_r = mean_layer_r(m.layers);
    } else {
        m = analyze_attention(sheets, corr);
    }
    std::string csv = "layer,r,p,n,p_underflow,note\n";
    for (const LayerCorrelation& c : m.layers) {
        csv += fmt::format("{},{},{},{},{},{}\n", c.layer, g6(c.r), g6(c.p), c.n, c.p_underflow ? 1 : 0, c.note);
    }
    emit(a.out, out, csv);
    if (!a.out.empty()) {
        out << fmt::format("{} sequences; mean layer r {}", sheets.size(), g6(m.mean_r));
        if (m.sigmoid) {
            out << fmt::format("; sigmoid lower {} upper {} midpoint {} slope {}", g6(m.sigmoid->lower),
                               g6(m.sigmoid->upper), g6(m.sigmoid->midpoint), g6(m.sigmoid->slope));
        }
        out << "\n";
    }
}

struct AlignArgs {
    NormsFlags norms;
    std::string ratings;
    std::string grid;
    double epsilon = 1e-6;
    std::size_t min_contexts = 3;
    double bin_width = 0.5;
    std::string model_scale;
    std::string out;
};

void run_align_cmd(const AlignArgs& a, std::ostream& out) {
    const Scale scale = a.norms.scale_value();
    const RatingGrid grid = parse_grid(a.grid.empty() ? fmt::format("{}:{}:0.1", scale.min, scale.max) : a.grid);
    AlignmentOptions opt;
    opt.epsilon = a.epsilon;
    opt.min_contexts = a.min_contexts;
    opt.bin_width = a.bin_width;
    if (!a.model_scale.empty()) opt.model_scale = parse_scale_flag(a.model_scale);
    const NormsTable norms = a.norms.load();
    const auto records = read_ratings_jsonl_file(a.ratings);
    const AlignmentResult r = align_ratings(records, norms, grid, opt);
    std::string csv = "word,human_mean,divergence,contexts\n";
    for (const auto& [word, w] : r.per_word) {
        csv += fmt::format("{},{},{},{}\n", word, g6(w.human_mean), g6(w.divergence), w.contexts);
    }
    emit(a.out, out, csv);
    if (!a.out.empty()) {
        const stats::OlsResult& o = r.fit.ols;
        out << fmt::format(
            "{}: {} words, mean divergence {}; binned OLS slope {} intercept {} R2 {} p {} over {} bins; skipped {} "
            "(few contexts) {} (no norms)\n",
            r.model_id, r.per_word.size(), g6(r.mean_divergence), g6(o.slope), g6(o.intercept), g6(o.r_squared),
            o.p_slope ? g6(*o.p_slope) : std::string("undefined"), o.n, r.skipped_few_contexts, r.skipped_no_norms);
    }
}

struct ReportArgs {
    std::string run_dir;
    std::string run_config;
    std::string out;
    std::string figures;
};

void run_report_cmd(const ReportArgs& a, unsigned threads, std::ostream& out) {
    fs::path conf = a.run_config.empty() ? fs::path(a.run_dir) / "run.conf" : fs::path(a.run_config);
    RunSettings settings;
    if (!a.run_config.empty() || fs::exists(conf)) settings = settings_from_config(KeyValueConfig::load(conf));
    const DiagnosticsReport report = run_report(a.run_dir, settings, threads);
    emit(a.out, out, dump_report(report));
    if (!a.figures.empty()) {
        const auto files = emit_figures(report, a.figures);
        if (!a.out.empty()) out << fmt::format("wrote {} figure files to {}\n", files.size(), a.figures);
    }
}

struct FixtureArgs {
    std::uint64_t seed = 7;
    std::string out;
    bool force = false;
};

void run_fixtures_cmd(const FixtureArgs& a, std::ostream& out) {
    const fs::path dir(a.out);
    std::error_code ec;
    if (fs::exists(dir, ec) && !fs::is_empty(dir, ec)) {
        if (!a.force) throw InvalidArgument(fmt::format("'{}' is not empty; pass --force to replace it", a.out));
        for (const char* entry : {"run.conf", "norms.csv", "function_words.txt", "qa", "embeddings", "attention",
                                  "ratings"}) {
            fs::remove_all(dir / entry);
        }
    }
    generate_fixtures(a.seed, dir);
    out << fmt::format("wrote synthetic run directory {} (seed {})\n", a.out, a.seed);
}

std::string version_text() {
    return fmt::format("probe {}\nreport schema {}\ntensor format {} v{}", kEngineVersion, kReportSchema,
                       kTensorMagic, kTensorVersion);
}

int exit_code_for(const Error& e) {
    switch (e.kind()) {
        case ErrorKind::invalid_argument: return kExitUsage;
        case ErrorKind::input_data: return kExitInput;
        case ErrorKind::numeric: return kExitNumeric;
    }
    return kExitInput;
}

}  // namespace

int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Concreteness diagnostics for matched text-only / vision-language model pairs", "probe"};
    app.set_version_flag("--version", version_text());
    app.set_config("--config", "", "Plain key=value file supplying flag defaults (keys: subcommand.flag)");
    app.require_subcommand(1);
    unsigned threads = 1;
    app.add_option("--threads", threads, "Worker threads; results do not depend on it")
        ->check(CLI::Range(1u, 1024u))
        ->capture_default_str();

    ScoreArgs score;
    auto* score_cmd = app.add_subcommand("score", "Sentence concreteness from word norms");
    score.norms.add(score_cmd, true);
    auto* text_opt = score_cmd->add_option("--text", score.text, "Sentence to score");
    auto* input_opt = score_cmd->add_option("--input", score.input, "File with one sentence per line");
    text_opt->excludes(input_opt);
    score_cmd->add_flag("--exclude-function-words", score.exclude_function_words,
                        "Leave function words out of the mean");
    score_cmd->add_flag("--exclude-oov", score.exclude_oov, "Leave other out-of-vocabulary words out of the mean");
    score_cmd->add_option("--out", score.out, "Output CSV (default: stdout)");

    BehaviorArgs behavior;
    auto* behavior_cmd = app.add_subcommand("behavior", "Accuracy by question concreteness and the accuracy gap");
    behavior_cmd->add_option("--qa", behavior.qa, "QA records of the vision-language model (JSON lines)")->required();
    behavior_cmd->add_option("--qa-baseline", behavior.qa_baseline, "QA records of the text-only model")->required();
    behavior_cmd->add_option("--bins", behavior.bins, "Concreteness bins LO:HI:WIDTH")->capture_default_str();
    behavior.norms.add(behavior_cmd, false);
    behavior_cmd->add_option("--out", behavior.out, "Output CSV (default: stdout)");

    GeometryArgs geometry;
    auto* geometry_cmd = app.add_subcommand("geometry", "t-SNE projection and per-bin dispersion of type vectors");
    geometry_cmd->add_option("--embeddings", geometry.embeddings, "Embedding tensor [rows, d] with meta.words")
        ->required();
    geometry.norms.add(geometry_cmd, true);
    geometry_cmd->add_option("--perplexity", geometry.tsne.perplexity, "t-SNE perplexity")->capture_default_str();
    geometry_cmd->add_option("--iterations", geometry.tsne.iterations, "Gradient iterations")->capture_default_str();
    geometry_cmd->add_option("--learning-rate", geometry.tsne.learning_rate, "Step size")->capture_default_str();
    geometry_cmd->add_option("--exaggeration", geometry.tsne.early_exaggeration, "Early exaggeration factor")
        ->capture_default_str();
    geometry_cmd->add_option("--exaggeration-iters", geometry.tsne.exaggeration_iters, "Early exaggeration length")
        ->capture_default_str();
    geometry_cmd->add_option("--seed", geometry.tsne.seed, "Seed for the initial layout and pair sampling")
        ->capture_default_str();
    geometry_cmd->add_option("--metric", geometry.metric, "Dispersion distance: cosine or euclidean")
        ->capture_default_str();
    geometry_cmd->add_option("--pair-cap", geometry.pair_cap, "Sample this many pairs in larger bins (0: exact)")
        ->capture_default_str();
    geometry_cmd->add_option("--out", geometry.out, "Dispersion CSV (default: stdout)");
    geometry_cmd->add_option("--coords", geometry.coords, "Also write the 2-D coordinates to this CSV");

    AttentionArgs attention;
    auto* attention_cmd = app.add_subcommand("attention", "Layerwise correlation of concreteness and attention entropy");
    attention_cmd->add_option("--tensors", attention.tensors, "Directory of attention or entropy-sheet tensors")
        ->required();
    attention.norms.add(attention_cmd, true);
    attention_cmd->add_option("--model-id", attention.model_id, "Only read tensors whose meta.model_id matches");
    attention_cmd->add_option("--normalization", attention.normalization, "Entropy: raw or length")
        ->capture_default_str();
    attention_cmd->add_option("--min-n", attention.min_n, "Minimum tokens for a defined layer correlation")
        ->capture_default_str();
    attention_cmd->add_flag("--include-zero-scores", attention.include_zero_scores,
                            "Keep tokens scored 0 (function words, other OOV) in the correlation");
    attention_cmd->add_flag("--per-sequence", attention.per_sequence,
                            "Average per-sequence r instead of pooling tokens");
    attention_cmd->add_option("--out", attention.out, "Layer correlation CSV (default: stdout)");

    AlignArgs align;
    auto* align_cmd = app.add_subcommand("align", "Human-model rating divergence and its trend over concreteness");
    align_cmd->add_option("--ratings", align.ratings, "Model ratings (JSON lines)")->required();
    align.norms.add(align_cmd, true);
    align_cmd->add_option("--grid", align.grid, "Rating support MIN:MAX:STEP (default: norms scale, step 0.1)");
    align_cmd->add_option("--epsilon", align.epsilon, "Smoothing mass added to every cell")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    align_cmd->add_option("--min-contexts", align.min_contexts, "Minimum ratings per word")->capture_default_str();
    align_cmd->add_option("--bin-width", align.bin_width, "Width of the human-concreteness bins")
        ->capture_default_str();
    align_cmd->add_option("--model-scale", align.model_scale, "Map model ratings from MIN:MAX onto the grid range");
    align_cmd->add_option("--out", align.out, "Per-word CSV (default: stdout)");

    ReportArgs report;
    auto* report_cmd = app.add_subcommand("report", "Run every analysis on a run directory");
    report_cmd->add_option("--run-dir", report.run_dir, "Run directory (qa/, embeddings/, attention/, ratings/)")
        ->required();
    report_cmd->add_option("--run-config", report.run_config, "Settings file (default: <run-dir>/run.conf if present)");
    report_cmd->add_option("--out", report.out, "Report JSON (default: stdout)");
    report_cmd->add_option("--figures", report.figures, "Directory for figure CSV and SVG files");

    FixtureArgs fixtures;
    auto* fixtures_cmd = app.add_subcommand("fixtures", "Write the synthetic model-pair run directory");
    fixtures_cmd->add_option("--seed", fixtures.seed, "Generator seed")->required();
    fixtures_cmd->add_option("--out", fixtures.out, "Output directory")->required();
    fixtures_cmd->add_flag("--force", fixtures.force, "Replace the fixture files of a non-empty directory");

    std::vector<const char*> argv;
    for (const std::string& a : args) argv.push_back(a.c_str());
    if (argv.empty()) argv.push_back("probe");
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (score_cmd->parsed()) {
            if (score.text.empty() && score.input.empty()) throw InvalidArgument("score: pass --text or --input");
            run_score(score, out);
        } else if (behavior_cmd->parsed()) {
            run_behavior(behavior, out);
        } else if (geometry_cmd->parsed()) {
            run_geometry_cmd(geometry, threads, out);
        } else if (attention_cmd->parsed()) {
            run_attention_cmd(attention, threads, out);
        } else if (align_cmd->parsed()) {
            run_align_cmd(align, out);
        } else if (report_cmd->parsed()) {
            run_report_cmd(report, threads, out);
        } else if (fixtures_cmd->parsed()) {
            run_fixtures_cmd(fixtures, out);
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const nlohmann::json::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitInput;
    }
    return kExitOk;
}

}  // namespace cprobe
