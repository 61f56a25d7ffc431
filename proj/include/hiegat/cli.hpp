#pragma once

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hiegat/checkpoint.hpp"
#include "hiegat/graph_builder.hpp"
#include "hiegat/model.hpp"
#include "hiegat/settings.hpp"
#include "hiegat/text_pipeline.hpp"
#include "hiegat/trainer.hpp"

namespace hiegat::cli {

enum ExitCode : int { ok = 0, usage_error = 1, data_error = 2, training_failure = 3 };

namespace fs = std::filesystem;

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Options shared by train and ablate.
struct RunOptions {
    std::string config_path;
    std::string dataset;
    std::string meta, text, cache;
    std::string out_dir = "run";
    std::string lambda;
    std::vector<std::string> sets;
    std::optional<std::size_t> seed, epochs, batch_size, embedding_width;
    std::optional<double> lr;
    bool json = false;
    bool verbose = false;
};

inline void add_run_options(CLI::App* cmd, RunOptions& o) {
    cmd->add_option("--config", o.config_path, "INI config file ([data], [model], [train])");
    cmd->add_option("--dataset", o.dataset, "Benchmark defaults bundle: mr, r8, r52, 20ng, ohsumed, custom");
    cmd->add_option("--meta", o.meta, "Metadata file (doc_id<TAB>split<TAB>label)");
    cmd->add_option("--text", o.text, "Corpus file, one document per line");
    cmd->add_option("--cache", o.cache, "Directory written by `ingest`");
    cmd->add_option("--out", o.out_dir, "Output directory");
    cmd->add_option("--lambda", o.lambda, "Fixed level weights lambda_d,lambda_s,lambda_w");
    cmd->add_option("--seed", o.seed, "Random seed");
    cmd->add_option("--epochs", o.epochs, "Maximum epochs");
    cmd->add_option("--lr", o.lr, "Learning rate");
    cmd->add_option("--batch-size", o.batch_size, "Mini-batch size");
    cmd->add_option("--embedding-width", o.embedding_width, "Embedding width n");
    cmd->add_option("--set", o.sets, "Override any setting: section.key=value (repeatable)");
    cmd->add_flag("--json", o.json, "Machine-readable output on stdout");
    cmd->add_flag("-v,--verbose", o.verbose, "Per-epoch progress on stderr");
}

/// Layers defaults, dataset bundle, config file, then flags.
inline Settings resolve_settings(const RunOptions& o) {
    Settings s;
    if (!o.dataset.empty()) s.apply_dataset_defaults(o.dataset);
    if (!o.config_path.empty()) {
        if (!fs::exists(o.config_path)) throw ConfigError("config file not found: " + o.config_path);
        s.apply_file(o.config_path);
    }
    // The dataset flag wins over a dataset named in the file.
    if (!o.dataset.empty() && s.get("data.dataset") != o.dataset) s.apply_dataset_defaults(o.dataset);
    auto flag = [&](const std::string& key, const std::string& value) { s.set(key, value, "flag"); };
    if (!o.meta.empty()) flag("data.meta", o.meta);
    if (!o.text.empty()) flag("data.text", o.text);
    if (!o.cache.empty()) flag("data.cache", o.cache);
    if (!o.lambda.empty()) flag("train.lambda", o.lambda);
    if (o.seed) flag("train.seed", std::to_string(*o.seed));
    if (o.epochs) flag("train.max_epochs", std::to_string(*o.epochs));
    if (o.batch_size) flag("train.batch_size", std::to_string(*o.batch_size));
    if (o.embedding_width) flag("model.embedding_width", std::to_string(*o.embedding_width));
    if (o.lr) {
        std::ostringstream os;
        os << std::setprecision(17) << *o.lr;
        flag("train.learning_rate", os.str());
    }
    for (const auto& kv : o.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + kv + "'");
        flag(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return s;
}

inline Corpus load_corpus(const Settings& s) {
    try {
        if (const auto& cache = s.get("data.cache"); !cache.empty()) {
            if (!fs::exists(fs::path(cache) / "records.tsv")) throw DataError("no ingested corpus cache in " + cache);
            return load_corpus_cache(cache);
        }
        const auto& meta = s.get("data.meta");
        const auto& text = s.get("data.text");
        if (meta.empty() || text.empty()) throw ConfigError("no corpus given: set --cache or both --meta and --text");
        for (const auto& p : {meta, text}) {
            if (!fs::exists(p)) throw DataError("file not found: " + p);
        }
        return ingest_corpus(meta, text, s.ingest_options());
    } catch (const FormatError& e) {
        throw DataError(e.what());
    }
}

inline std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

/// Fully resolved settings with the source of each value.
inline void write_manifest(const fs::path& dir, const std::string& command, const Settings& s) {
    fs::create_directories(dir);
    std::ofstream out(dir / "manifest.txt");
    out << "command = " << command << '\n'
        << "corpus = " << s.get("data.dataset") << '\n'
        << "timestamp = " << timestamp_utc() << '\n'
        << "seed = " << s.get("train.seed") << '\n';
    for (const auto& [k, e] : s.entries()) out << k << " = " << e.value << "  # " << e.source << '\n';
}

inline int cmd_ingest(const std::string& meta, const std::string& text, const std::string& out_dir,
                      const std::string& dataset, const std::string& sentence_mode, std::size_t chunk_size, bool json,
                      std::ostream& out, std::ostream& err) {
    Settings s;
    try {
        if (!dataset.empty()) s.apply_dataset_defaults(dataset);
        if (!sentence_mode.empty()) s.set("data.sentence_mode", sentence_mode, "flag");
        s.set("data.chunk_size", std::to_string(chunk_size), "flag");
        s.set("data.meta", meta, "flag");
        s.set("data.text", text, "flag");
        s.ingest_options();
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return usage_error;
    }
    Corpus corpus;
    try {
        corpus = load_corpus(s);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return data_error;
    }
    save_corpus_cache(corpus, out_dir);
    std::vector<std::string> issues;
    const auto* ref = find_reference_stats(s.get("data.dataset"));
    if (ref) issues = compare_with_reference(corpus.stats, *ref);
    if (json) {
        nlohmann::json j = {{"docs", corpus.stats.doc_count},
                            {"train", corpus.stats.train_count},
                            {"test", corpus.stats.test_count},
                            {"words", corpus.stats.vocab_size},
                            {"classes", corpus.stats.class_count},
                            {"avg_length", corpus.stats.average_length},
                            {"avg_sentences", corpus.stats.average_sentences},
                            {"dropped_docs", corpus.stats.dropped_docs}};
        if (ref) j["reference_mismatches"] = issues;
        out << j.dump(2) << '\n';
    } else {
        out << corpus.stats.report();
        if (ref) {
            out << "reference = " << ref->name << (issues.empty() ? " (match)" : " (MISMATCH)") << '\n';
            for (const auto& i : issues) out << "  " << i << '\n';
        }
    }
    return ok;
}

inline int cmd_train(const RunOptions& o, std::ostream& out, std::ostream& err) {
    Settings s;
    HieGnnConfig mc;
    TrainConfig tc;
    Corpus corpus;
    try {
        s = resolve_settings(o);
        tc = s.train_config();
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return usage_error;
    }
    write_manifest(o.out_dir, "train", s);
    try {
        corpus = load_corpus(s);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return usage_error;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return data_error;
    }
    try {
        mc = s.model_config(corpus.vocab.size(), corpus.class_count());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return usage_error;
    }
    HieGnnModel model(mc);
    TrainReport report;
    try {
        report = train(model, corpus, tc, o.verbose ? &err : nullptr);
    } catch (const TrainingDiverged& e) {
        std::ofstream(fs::path(o.out_dir) / "report.txt") << e.report().to_text();
        err << "error: " << e.what() << '\n';
        return training_failure;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return training_failure;
    }
    save_checkpoint(model, fs::path(o.out_dir) / "best.ckpt");
    std::ofstream(fs::path(o.out_dir) / "report.txt") << report.to_text();
    std::ofstream(fs::path(o.out_dir) / "report.json") << report.to_json().dump(2) << '\n';
    if (o.json) {
        out << report.to_json().dump(2) << '\n';
    } else {
        out << std::setprecision(4) << std::fixed << "test_accuracy = " << report.test_accuracy << '\n'
            << "best_epoch = " << report.best_epoch << '\n'
            << "stop_reason = " << report.stop_reason << '\n'
            << "checkpoint = " << (fs::path(o.out_dir) / "best.ckpt").string() << '\n';
    }
    return ok;
}

struct EvalCliOptions {
    std::string checkpoint;
    std::string cache, meta, text, dataset;
    std::string split = "test";
    bool json = false;
};

inline int cmd_eval(const EvalCliOptions& o, std::ostream& out, std::ostream& err) {
    if (o.split != "test" && o.split != "train") {
        err << "error: --split must be train or test\n";
        return usage_error;
    }
    HieGnnModel model;
    try {
        model = load_checkpoint(o.checkpoint);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return data_error;
    }
    Corpus corpus;
    try {
        RunOptions ro;
        ro.cache = o.cache;
        ro.meta = o.meta;
        ro.text = o.text;
        ro.dataset = o.dataset;
        corpus = load_corpus(resolve_settings(ro));
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return usage_error;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return data_error;
    }
    const auto& mc = model.config();
    if (corpus.class_count() != mc.class_count) {
        err << "error: class count mismatch: checkpoint has C=" << mc.class_count << ", corpus has C="
            << corpus.class_count() << '\n';
        return data_error;
    }
    if (corpus.vocab.size() != mc.vocab_size) {
        err << "error: vocabulary size mismatch: checkpoint has N=" << mc.vocab_size << ", corpus has N="
            << corpus.vocab.size() << '\n';
        return data_error;
    }
    const auto want = o.split == "train" ? Split::train : Split::test;
    std::vector<const DocumentRecord*> recs;
    std::vector<SampleGraphs> graphs;
    for (const auto& r : corpus.records) {
        if (r.split != want) continue;
        recs.push_back(&r);
        graphs.push_back(build_sample_graphs(r, mc.windows()));
    }
    std::vector<const SampleGraphs*> gp;
    for (const auto& g : graphs) gp.push_back(&g);
    EvalOptions opts;
    opts.schedule.policy = mc.lambda_policy;
    const auto res = evaluate_detailed(model, recs, gp, opts);
    if (o.json) {
        nlohmann::json j = {{"split", o.split}, {"samples", recs.size()}, {"accuracy", res.accuracy}};
        auto& per = j["per_class"] = nlohmann::json::array();
        for (std::size_t c = 0; c < mc.class_count; ++c) {
            per.push_back({{"label", corpus.labels[c]}, {"correct", res.correct_per_class[c]}, {"total", res.total_per_class[c]}});
        }
        out << j.dump(2) << '\n';
    } else {
        out << "split = " << o.split << '\n'
            << "samples = " << recs.size() << '\n'
            << std::fixed << std::setprecision(4) << "accuracy = " << res.accuracy << '\n';
        for (std::size_t c = 0; c < mc.class_count; ++c) {
            out << "class " << corpus.labels[c] << " = " << res.correct_per_class[c] << '/' << res.total_per_class[c] << '\n';
        }
    }
    return ok;
}

inline std::string valid_rows_list() {
    std::string s;
    for (auto r : all_ablation_rows()) s += (s.empty() ? "" : ", ") + to_string(r);
    return s;
}

inline int cmd_ablate(const RunOptions& o, const std::vector<std::string>& row_names, std::ostream& out,
                      std::ostream& err) {
    std::vector<AblationRow> rows;
    for (const auto& name : row_names) {
        auto r = parse_ablation_row(name);
        if (!r) {
            err << "error: unknown ablation row '" << name << "'; valid rows: " << valid_rows_list() << '\n';
            return usage_error;
        }
        rows.push_back(*r);
    }
    if (rows.empty()) rows = all_ablation_rows();
    Settings s;
    TrainConfig tc;
    try {
        s = resolve_settings(o);
        tc = s.train_config();
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return usage_error;
    }
    write_manifest(o.out_dir, "ablate", s);
    Corpus corpus;
    HieGnnConfig mc;
    try {
        corpus = load_corpus(s);
        mc = s.model_config(corpus.vocab.size(), corpus.class_count());
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return usage_error;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return data_error;
    }
    std::vector<AblationResult> results;
    try {
        results = run_ablation_grid(corpus, mc, tc, rows, o.verbose ? &err : nullptr);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return training_failure;
    }
    const auto table = render_ablation_table(results);
    std::ofstream(fs::path(o.out_dir) / "ablation.txt") << table;
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : results) {
        j.push_back({{"row", to_string(r.row)}, {"label", ablation_label(r.row)}, {"accuracy", r.accuracy}, {"report", r.report.to_json()}});
    }
    std::ofstream(fs::path(o.out_dir) / "ablation.json") << j.dump(2) << '\n';
    if (o.json) {
        out << j.dump(2) << '\n';
    } else {
        out << table;
    }
    return ok;
}

inline int cmd_graph_dump(const std::string& cache, std::size_t index, std::size_t window, std::ostream& out,
                          std::ostream& err) {
    Corpus corpus;
    try {
        corpus = load_corpus_cache(cache);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return data_error;
    }
    if (index >= corpus.records.size()) {
        err << "error: document index " << index << " out of range (" << corpus.records.size() << " documents)\n";
        return usage_error;
    }
    dump_edge_list(build_sample_graphs(corpus.records[index], window), out);
    return ok;
}

/// Entry point; returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Hierarchical graph attention text classifier"};
    app.require_subcommand(1);

    std::string meta, text, out_dir = "ingested", dataset, sentence_mode;
    std::size_t chunk_size = default_chunk_size;
    bool ingest_json = false;
    auto* ingest = app.add_subcommand("ingest", "Tokenize and cache a corpus, print its statistics");
    ingest->add_option("--meta", meta, "Metadata file")->required();
    ingest->add_option("--text", text, "Corpus file")->required();
    ingest->add_option("--out", out_dir, "Cache directory");
    ingest->add_option("--dataset", dataset, "Benchmark name, enables reference comparison");
    ingest->add_option("--sentence-mode", sentence_mode, "punct or chunk");
    ingest->add_option("--chunk-size", chunk_size, "Tokens per chunk in chunk mode");
    ingest->add_flag("--json", ingest_json, "Machine-readable output");

    RunOptions train_opts;
    auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoint and reports");
    add_run_options(train_cmd, train_opts);

    EvalCliOptions eval_opts;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
    eval_cmd->add_option("--checkpoint", eval_opts.checkpoint, "Checkpoint file")->required();
    eval_cmd->add_option("--cache", eval_opts.cache, "Directory written by `ingest`");
    eval_cmd->add_option("--meta", eval_opts.meta, "Metadata file");
    eval_cmd->add_option("--text", eval_opts.text, "Corpus file");
    eval_cmd->add_option("--dataset", eval_opts.dataset, "Benchmark defaults bundle");
    eval_cmd->add_option("--split", eval_opts.split, "train or test");
    eval_cmd->add_flag("--json", eval_opts.json, "Machine-readable output");

    RunOptions ablate_opts;
    std::vector<std::string> rows;
    auto* ablate = app.add_subcommand("ablate", "Run the level-weight ablation grid");
    add_run_options(ablate, ablate_opts);
    ablate->add_option("--rows", rows, "Subset of rows: " + valid_rows_list())->delimiter(',');

    std::string dump_cache;
    std::size_t dump_index = 0, dump_window = 2;
    auto* dump = app.add_subcommand("graph-dump", "Print the level graphs of one document as an edge list");
    dump->add_option("--cache", dump_cache, "Directory written by `ingest`")->required();
    dump->add_option("--index", dump_index, "Document index");
    dump->add_option("--window", dump_window, "n-gram window");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return ok;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return usage_error;
    }

    try {
        if (*ingest) return cmd_ingest(meta, text, out_dir, dataset, sentence_mode, chunk_size, ingest_json, out, err);
        if (*train_cmd) return cmd_train(train_opts, out, err);
        if (*eval_cmd) return cmd_eval(eval_opts, out, err);
        if (*ablate) return cmd_ablate(ablate_opts, rows, out, err);
        if (*dump) return cmd_graph_dump(dump_cache, dump_index, dump_window, out, err);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return usage_error;
    }
    return usage_error;
}

}  // namespace hiegat::cli
