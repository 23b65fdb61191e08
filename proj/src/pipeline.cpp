#include "cprobe/pipeline.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>

#include "cprobe/version.hpp"
#include "text_util.hpp"

namespace cprobe {

namespace fs = std::filesystem;

namespace {

std::string format_scale(const Scale& s) { return fmt::format("{}:{}", s.min, s.max); }

Scale parse_scale(std::string_view text) {
    const auto parts = detail::parse_number_list(text, ':');
    if (!parts || parts->size() != 2 || !((*parts)[0] < (*parts)[1])) {
        throw InvalidArgument(fmt::format("scale: expected MIN:MAX with MIN < MAX, got '{}'", text));
    }
    return {(*parts)[0], (*parts)[1]};
}

std::vector<fs::path> files_with_extension(const fs::path& dir, std::string_view ext) {
    std::vector<fs::path> out;
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) return out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ext) out.push_back(entry.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

template <class Record>
std::pair<std::vector<Record>, std::vector<Record>> split_models(std::vector<Record> records,
                                                                 const RunSettings& s) {
    std::pair<std::vector<Record>, std::vector<Record>> out;
    for (Record& r : records) {
        if (r.model_id == s.baseline_id) {
            out.first.push_back(std::move(r));
        } else if (r.model_id == s.vision_id) {
            out.second.push_back(std::move(r));
        }
    }
    return out;
}

std::string relative_names(const std::vector<fs::path>& files, const fs::path& root) {
    std::string out;
    for (const fs::path& f : files) {
        if (!out.empty()) out += ',';
        out += fs::relative(f, root).generic_string();
    }
    return out;
}

}  // namespace

std::string RunSettings::grid_text() const {
    return grid.empty() ? fmt::format("{}:{}:0.1", scale.min, scale.max) : grid;
}

std::string to_string(EntropyNormalization n) { return n == EntropyNormalization::raw ? "raw" : "length"; }

EntropyNormalization parse_normalization(std::string_view text) {
    if (text == "raw") return EntropyNormalization::raw;
    if (text == "length") return EntropyNormalization::length;
    throw InvalidArgument(fmt::format("normalization must be raw or length, got '{}'", text));
}

std::string to_string(DispersionMetric m) { return m == DispersionMetric::cosine ? "cosine" : "euclidean"; }

DispersionMetric parse_metric(std::string_view text) {
    if (text == "cosine") return DispersionMetric::cosine;
    if (text == "euclidean") return DispersionMetric::euclidean;
    throw InvalidArgument(fmt::format("metric must be cosine or euclidean, got '{}'", text));
}

RunSettings settings_from_config(const KeyValueConfig& c) {
    RunSettings s;
    static const std::set<std::string, std::less<>> known{
        "run_id",          "model.baseline",           "model.vision",         "norms",
        "norms.word_col",  "norms.mean_col",           "norms.sd_col",         "norms.scale",
        "function_words",  "named_entities",           "score.function_words", "score.other_oov",
        "bins",            "tsne.perplexity",          "tsne.iterations",      "tsne.learning_rate",
        "tsne.early_exaggeration", "tsne.exaggeration_iters", "tsne.momentum_initial", "tsne.momentum_final",
        "tsne.init_scale", "tsne.seed",                "dispersion.metric",    "dispersion.pair_cap",
        "dispersion.seed", "attention.normalization",  "attention.min_n",      "attention.include_zero_scores",
        "align.grid",      "align.epsilon",            "align.min_contexts",   "align.bin_width"};
    for (const auto& [key, value] : c.values()) {
        if (key.starts_with("fixture.")) {
            s.passthrough[key] = value;
        } else if (!known.contains(key)) {
            throw InvalidArgument(fmt::format("config: unknown key '{}'", key));
        }
    }
    s.run_id = c.get_string("run_id", s.run_id);
    s.baseline_id = c.get_string("model.baseline", s.baseline_id);
    s.vision_id = c.get_string("model.vision", s.vision_id);
    s.norms_path = c.get_string("norms", s.norms_path);
    s.norms_columns.word = c.get_string("norms.word_col", s.norms_columns.word);
    s.norms_columns.mean = c.get_string("norms.mean_col", s.norms_columns.mean);
    s.norms_columns.sd = c.get_string("norms.sd_col", s.norms_columns.sd);
    if (auto v = c.get("norms.scale")) s.scale = parse_scale(*v);
    s.function_words_path = c.get_string("function_words", "");
    s.named_entities_path = c.get_string("named_entities", "");
    s.scoring.include_function_words = c.get_bool("score.function_words", s.scoring.include_function_words);
    s.scoring.include_other_oov = c.get_bool("score.other_oov", s.scoring.include_other_oov);
    s.bins = c.get_string("bins", s.bins);
    parse_bins(s.bins);

    s.tsne.perplexity = c.get_double("tsne.perplexity", s.tsne.perplexity);
    s.tsne.iterations = c.get_uint("tsne.iterations", s.tsne.iterations);
    s.tsne.learning_rate = c.get_double("tsne.learning_rate", s.tsne.learning_rate);
    s.tsne.early_exaggeration = c.get_double("tsne.early_exaggeration", s.tsne.early_exaggeration);
    s.tsne.exaggeration_iters = c.get_uint("tsne.exaggeration_iters", s.tsne.exaggeration_iters);
    s.tsne.momentum_initial = c.get_double("tsne.momentum_initial", s.tsne.momentum_initial);
    s.tsne.momentum_final = c.get_double("tsne.momentum_final", s.tsne.momentum_final);
    s.tsne.init_scale = c.get_double("tsne.init_scale", s.tsne.init_scale);
    s.tsne.seed = c.get_uint("tsne.seed", s.tsne.seed);
    if (auto v = c.get("dispersion.metric")) s.dispersion.metric = parse_metric(*v);
    s.dispersion.pair_cap = c.get_uint("dispersion.pair_cap", s.dispersion.pair_cap);
    s.dispersion.seed = c.get_uint("dispersion.seed", s.dispersion.seed);

    if (auto v = c.get("attention.normalization")) s.normalization = parse_normalization(*v);
    s.correlation.min_n = c.get_uint("attention.min_n", s.correlation.min_n);
    s.correlation.include_zero_scores = c.get_bool("attention.include_zero_scores", s.correlation.include_zero_scores);

    s.grid = c.get_string("align.grid", "");
    parse_grid(s.grid_text());
    s.alignment.epsilon = c.get_double("align.epsilon", s.alignment.epsilon);
    if (!(s.alignment.epsilon >= 0.0)) throw InvalidArgument("config: align.epsilon must be >= 0");
    s.alignment.min_contexts = c.get_uint("align.min_contexts", s.alignment.min_contexts);
    s.alignment.bin_width = c.get_double("align.bin_width", s.alignment.bin_width);
    make_bins(s.scale.min, s.scale.max, s.alignment.bin_width);
    return s;
}

KeyValueConfig settings_to_config(const RunSettings& s) {
    KeyValueConfig c;
    auto num = [](double x) { return fmt::format("{}", x); };
    c.set("run_id", s.run_id);
    c.set("model.baseline", s.baseline_id);
    c.set("model.vision", s.vision_id);
    c.set("norms", s.norms_path);
    c.set("norms.word_col", s.norms_columns.word);
    c.set("norms.mean_col", s.norms_columns.mean);
    c.set("norms.sd_col", s.norms_columns.sd);
    c.set("norms.scale", format_scale(s.scale));
    if (!s.function_words_path.empty()) c.set("function_words", s.function_words_path);
    if (!s.named_entities_path.empty()) c.set("named_entities", s.named_entities_path);
    c.set("score.function_words", s.scoring.include_function_words ? "true" : "false");
    c.set("score.other_oov", s.scoring.include_other_oov ? "true" : "false");
    c.set("bins", s.bins);
    c.set("tsne.perplexity", num(s.tsne.perplexity));
    c.set("tsne.iterations", std::to_string(s.tsne.iterations));
    c.set("tsne.learning_rate", num(s.tsne.learning_rate));
    c.set("tsne.early_exaggeration", num(s.tsne.early_exaggeration));
    c.set("tsne.exaggeration_iters", std::to_string(s.tsne.exaggeration_iters));
    c.set("tsne.momentum_initial", num(s.tsne.momentum_initial));
    c.set("tsne.momentum_final", num(s.tsne.momentum_final));
    c.set("tsne.init_scale", num(s.tsne.init_scale));
    c.set("tsne.seed", std::to_string(s.tsne.seed));
    c.set("dispersion.metric", to_string(s.dispersion.metric));
    c.set("dispersion.pair_cap", std::to_string(s.dispersion.pair_cap));
    c.set("dispersion.seed", std::to_string(s.dispersion.seed));
    c.set("attention.normalization", to_string(s.normalization));
    c.set("attention.min_n", std::to_string(s.correlation.min_n));
    c.set("attention.include_zero_scores", s.correlation.include_zero_scores ? "true" : "false");
    c.set("align.grid", s.grid_text());
    c.set("align.epsilon", num(s.alignment.epsilon));
    c.set("align.min_contexts", std::to_string(s.alignment.min_contexts));
    c.set("align.bin_width", num(s.alignment.bin_width));
    for (const auto& [k, v] : s.passthrough) c.set(k, v);
    return c;
}

nlohmann::json settings_to_json(const RunSettings& s) {
    nlohmann::json out = nlohmann::json::object();
    const KeyValueConfig config = settings_to_config(s);
    for (const auto& [k, v] : config.values()) out[k] = v;
    return out;
}

BehaviorSection analyze_behavior(std::span<const QARecord> baseline, std::span<const QARecord> vision,
                                 const BinSpec& bins) {
    BehaviorSection b;
    b.accuracy.baseline = bin_accuracy(baseline, bins);
    b.accuracy.vision = bin_accuracy(vision, bins);
    b.gap = accuracy_gap(b.accuracy.vision, b.accuracy.baseline);
    b.trend = gap_trend(b.gap);
    auto datasets = [](std::span<const QARecord> records) {
        std::map<std::string, DatasetAccuracy> out;
        for (const auto& [name, acc] : dataset_accuracy(records)) out[name].accuracy = acc;
        for (const QARecord& r : records) ++out[r.dataset].questions;
        return out;
    };
    b.per_dataset.baseline = datasets(baseline);
    b.per_dataset.vision = datasets(vision);
    auto pooled = [](std::span<const QARecord> records) {
        const auto correct = std::count_if(records.begin(), records.end(), [](const QARecord& r) { return r.correct; });
        return static_cast<double>(correct) / static_cast<double>(records.size());
    };
    b.pooled_accuracy.baseline = pooled(baseline);
    b.pooled_accuracy.vision = pooled(vision);
    return b;
}

GeometryModel summarize_geometry(const GeometryOutcome& outcome) {
    GeometryModel g;
    g.dispersion = outcome.dispersion;
    g.words = outcome.embedding.words.size();
    g.words_without_norms = outcome.words_without_norms;
    g.final_kl = outcome.tsne.kl_history.empty() ? outcome.tsne.initial_kl : outcome.tsne.kl_history.back();
    g.uncalibrated_rows = outcome.affinities.uncalibrated_rows;
    return g;
}

AttentionModel analyze_attention(std::span<const EntropySheet> sheets, const CorrelationOptions& options) {
    if (sheets.empty()) throw InvalidArgument("attention: no entropy sheets");
    AttentionModel m;
    const EntropySheet pooled = pool_sheets(sheets);
    m.sequences = sheets.size();
    m.tokens = pooled.tokens();
    m.layers = layer_correlations(pooled, options);
    m.mean_r = mean_layer_r(m.layers);
    std::vector<double> layer, r;
    for (const LayerCorrelation& c : m.layers) {
        if (c.r) {
            layer.push_back(static_cast<double>(c.layer));
            r.push_back(*c.r);
        }
    }
    if (layer.size() >= 5) {
        m.sigmoid = sigmoid_fit(layer, r);
    } else {
        m.sigmoid_note = fmt::format("{} defined layers; the sigmoid fit needs 5", layer.size());
    }
    return m;
}

DiagnosticsReport run_report(const fs::path& run_dir, const RunSettings& s, unsigned threads) {
    std::error_code ec;
    if (!fs::is_directory(run_dir, ec)) throw InputError(fmt::format("run directory '{}' not found", run_dir.string()));

    const NormsTable norms = load_norms_file(run_dir / s.norms_path, s.norms_columns, s.scale).table;
    const WordSet function_words =
        s.function_words_path.empty() ? default_function_words() : load_word_list_file(run_dir / s.function_words_path);
    std::optional<WordSet> named_entities;
    if (!s.named_entities_path.empty()) named_entities = load_word_list_file(run_dir / s.named_entities_path);
    const WordSet* ne = named_entities ? &*named_entities : nullptr;

    nlohmann::json echo = settings_to_json(s);
    std::map<std::string, std::string> skipped;
    auto missing_model = [&](std::string_view what, bool has_baseline, bool has_vision) {
        std::string which;
        if (!has_baseline) which = s.baseline_id;
        if (!has_vision) which += (which.empty() ? "" : ", ") + s.vision_id;
        return fmt::format("no {} for model(s) {}", what, which);
    };

    std::optional<BehaviorSection> behavior;
    const auto qa_files = files_with_extension(run_dir / "qa", ".jsonl");
    echo["inputs.qa"] = relative_names(qa_files, run_dir);
    if (qa_files.empty()) {
        skipped["behavior"] = "no qa/*.jsonl files";
    } else {
        std::vector<QARecord> all;
        for (const fs::path& f : qa_files) {
            auto records = read_qa_jsonl_file(f);
            all.insert(all.end(), std::make_move_iterator(records.begin()), std::make_move_iterator(records.end()));
        }
        auto [base, vis] = split_models(std::move(all), s);
        if (base.empty() || vis.empty()) {
            skipped["behavior"] = missing_model("QA records", !base.empty(), !vis.empty());
        } else {
            fill_concreteness(base, norms, function_words, ne, s.scoring);
            fill_concreteness(vis, norms, function_words, ne, s.scoring);
            behavior = analyze_behavior(base, vis, parse_bins(s.bins));
        }
    }

    std::optional<GeometrySection> geometry;
    const auto emb_files = files_with_extension(run_dir / "embeddings", ".tns");
    echo["inputs.embeddings"] = relative_names(emb_files, run_dir);
    if (emb_files.empty()) {
        skipped["geometry"] = "no embeddings/*.tns files";
    } else {
        std::optional<EmbeddingMatrix> base, vis;
        for (const fs::path& f : emb_files) {
            const Tensor t = read_tensor(f);
            const auto id = t.meta.find("model_id");
            if (id == t.meta.end() || !id->is_string()) {
                throw InputError(fmt::format("{}: meta.model_id missing", f.filename().string()));
            }
            std::optional<EmbeddingMatrix>* slot = *id == s.baseline_id ? &base : *id == s.vision_id ? &vis : nullptr;
            if (slot == nullptr) continue;
            if (slot->has_value()) {
                throw InputError(fmt::format("{}: second embedding file for model '{}'", f.filename().string(),
                                             id->get<std::string>()));
            }
            *slot = embeddings_from_tensor(t);
        }
        if (!base || !vis) {
            skipped["geometry"] = missing_model("embeddings", base.has_value(), vis.has_value());
        } else {
            GeometrySection g;
            g.models.baseline = summarize_geometry(run_geometry(*base, norms, s.tsne, s.dispersion, threads));
            g.models.vision = summarize_geometry(run_geometry(*vis, norms, s.tsne, s.dispersion, threads));
            geometry = std::move(g);
        }
    }

    std::optional<AttentionSection> attention;
    const auto att_files = files_with_extension(run_dir / "attention", ".tns");
    echo["inputs.attention_files"] = att_files.size();
    if (att_files.empty()) {
        skipped["attention"] = "no attention/*.tns files";
    } else {
        auto load = [&](const std::string& id) {
            AttentionLoadOptions opt;
            opt.model_id = id;
            opt.normalization = s.normalization;
            opt.threads = threads;
            return load_attention_dir(run_dir / "attention", norms, function_words, opt, ne);
        };
        const auto base = load(s.baseline_id);
        const auto vis = load(s.vision_id);
        if (base.empty() || vis.empty()) {
            skipped["attention"] = missing_model("attention tensors", !base.empty(), !vis.empty());
        } else {
            AttentionSection a;
            a.models.baseline = analyze_attention(base, s.correlation);
            a.models.vision = analyze_attention(vis, s.correlation);
            attention = std::move(a);
        }
    }

    std::optional<AlignmentSection> alignment;
    const auto rating_files = files_with_extension(run_dir / "ratings", ".jsonl");
    echo["inputs.ratings"] = relative_names(rating_files, run_dir);
    if (rating_files.empty()) {
        skipped["alignment"] = "no ratings/*.jsonl files";
    } else {
        std::vector<RatingRecord> all;
        for (const fs::path& f : rating_files) {
            auto records = read_ratings_jsonl_file(f);
            all.insert(all.end(), std::make_move_iterator(records.begin()), std::make_move_iterator(records.end()));
        }
        auto [base, vis] = split_models(std::move(all), s);
        if (base.empty() || vis.empty()) {
            skipped["alignment"] = missing_model("ratings", !base.empty(), !vis.empty());
        } else {
            const RatingGrid grid = parse_grid(s.grid_text());
            AlignmentSection a;
            a.models.baseline = align_ratings(base, norms, grid, s.alignment);
            a.models.vision = align_ratings(vis, norms, grid, s.alignment);
            alignment = std::move(a);
        }
    }

    echo["tensor_format"] = fmt::format("{} v{}", kTensorMagic, kTensorVersion);
    echo["engine_version"] = kEngineVersion;
    return build_report(s.run_id, s.baseline_id, s.vision_id, std::move(behavior), std::move(geometry),
                        std::move(attention), std::move(alignment), std::move(skipped), std::move(echo));
}

}  // namespace cprobe
