#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace hiegat {

/// Malformed corpus or cache files. Carries the offending line when known
/// (0 means "the file as a whole").
class FormatError : public std::runtime_error {
   public:
    FormatError(const std::string& file, std::size_t line, const std::string& what)
        : std::runtime_error(file + ":" + std::to_string(line) + ": " + what), file_(file), line_(line) {}
    const std::string& file() const { return file_; }
    std::size_t line() const { return line_; }

   private:
    std::string file_;
    std::size_t line_;
};

enum class Split { train, test };
enum class SentenceMode { punct, chunk };

inline std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }
inline std::string to_string(SentenceMode m) { return m == SentenceMode::punct ? "punct" : "chunk"; }

inline std::optional<SentenceMode> parse_sentence_mode(std::string_view s) {
    if (s == "punct") return SentenceMode::punct;
    if (s == "chunk") return SentenceMode::chunk;
    return std::nullopt;
}

struct SentenceSpan {
    std::size_t begin;
    std::size_t end;  // exclusive
    std::size_t size() const { return end - begin; }
    bool operator==(const SentenceSpan&) const = default;
};

struct DocumentRecord {
    std::string doc_id;
    Split split = Split::train;
    std::size_t label_id = 0;
    std::vector<std::size_t> tokens;
    std::vector<SentenceSpan> sentence_spans;

    std::size_t sentence_count() const { return sentence_spans.size(); }
    bool operator==(const DocumentRecord&) const = default;
};

/// True when spans are non-empty, contiguous, and cover [0, token count).
inline bool spans_partition_tokens(const DocumentRecord& doc) {
    if (doc.sentence_spans.empty()) return false;
    std::size_t cursor = 0;
    for (const auto& s : doc.sentence_spans) {
        if (s.begin != cursor || s.end <= s.begin) return false;
        cursor = s.end;
    }
    return cursor == doc.tokens.size();
}

class Vocabulary {
   public:
    static constexpr std::size_t unk_id = 0;
    static constexpr const char* unk_token = "<unk>";

    Vocabulary() { tokens_.emplace_back(unk_token); }

    /// Returns the id of `token`, assigning the next free id when unseen.
    std::size_t add(const std::string& token) {
        auto [it, inserted] = ids_.try_emplace(token, tokens_.size());
        if (inserted) tokens_.push_back(token);
        return it->second;
    }

    std::size_t lookup(const std::string& token) const {
        auto it = ids_.find(token);
        return it == ids_.end() ? unk_id : it->second;
    }

    const std::string& token(std::size_t id) const { return tokens_.at(id); }
    /// N, including the UNK row.
    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    static Vocabulary from_tokens(const std::vector<std::string>& tokens) {
        Vocabulary v;
        if (tokens.empty() || tokens.front() != unk_token) {
            throw std::invalid_argument("vocabulary listing must start with " + std::string(unk_token));
        }
        for (std::size_t i = 1; i < tokens.size(); ++i) {
            if (v.add(tokens[i]) != i) throw std::invalid_argument("duplicate vocabulary token '" + tokens[i] + "'");
        }
        return v;
    }

   private:
    std::unordered_map<std::string, std::size_t> ids_;
    std::vector<std::string> tokens_;
};

struct CorpusStats {
    std::size_t doc_count = 0;
    std::size_t train_count = 0;
    std::size_t test_count = 0;
    std::size_t vocab_size = 0;  // excludes UNK
    std::size_t class_count = 0;
    double average_length = 0.0;
    double average_sentences = 0.0;
    std::size_t dropped_docs = 0;

    /// Flat key-value block.
    std::string report() const {
        std::ostringstream os;
        os << "docs = " << doc_count << '\n'
           << "train = " << train_count << '\n'
           << "test = " << test_count << '\n'
           << "words = " << vocab_size << '\n'
           << "classes = " << class_count << '\n'
           << std::fixed << std::setprecision(2) << "avg_length = " << average_length << '\n'
           << "avg_sentences = " << average_sentences << '\n'
           << "dropped_docs = " << dropped_docs << '\n';
        return os.str();
    }
};

/// Published statistics for the five benchmark corpora.
struct ReferenceStats {
    std::string name;
    std::size_t docs, train, test, words, classes;
    double average_length, average_sentences;
};

inline const std::vector<ReferenceStats>& benchmark_reference_stats() {
    static const std::vector<ReferenceStats> table = {
        {"20ng", 18846, 11314, 7532, 42757, 20, 221.26, 4.89},
        {"r8", 7674, 5485, 2189, 7688, 8, 65.72, 6.24},
        {"r52", 9100, 6532, 2568, 8892, 52, 69.82, 6.29},
        {"ohsumed", 7400, 3357, 4043, 14157, 23, 135.82, 9.02},
        {"mr", 10662, 7108, 3554, 18764, 2, 20.39, 1.19},
    };
    return table;
}

inline const ReferenceStats* find_reference_stats(std::string_view name) {
    for (const auto& r : benchmark_reference_stats()) {
        if (r.name == name) return &r;
    }
    return nullptr;
}

/// Mismatches between computed stats and a reference row. Counts must match
/// exactly; average length is allowed ±2%.
inline std::vector<std::string> compare_with_reference(const CorpusStats& s, const ReferenceStats& ref) {
    std::vector<std::string> issues;
    auto exact = [&](const char* key, std::size_t got, std::size_t want) {
        if (got != want) issues.push_back(std::string(key) + ": " + std::to_string(got) + " != " + std::to_string(want));
    };
    exact("docs", s.doc_count, ref.docs);
    exact("train", s.train_count, ref.train);
    exact("test", s.test_count, ref.test);
    exact("classes", s.class_count, ref.classes);
    if (std::abs(s.average_length - ref.average_length) > 0.02 * ref.average_length) {
        issues.push_back("avg_length: " + std::to_string(s.average_length) + " outside 2% of " +
                         std::to_string(ref.average_length));
    }
    return issues;
}

namespace detail {

inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
inline bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && is_space(s[b])) ++b;
    while (e > b && is_space(s[e - 1])) --e;
    return std::string(s.substr(b, e - b));
}

inline std::vector<std::string_view> split_whitespace(std::string_view text) {
    std::vector<std::string_view> words;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        std::size_t j = i;
        while (j < text.size() && !is_space(text[j])) ++j;
        if (j > i) words.push_back(text.substr(i, j - i));
        i = j;
    }
    return words;
}

}  // namespace detail

/// Lowercases, splits on whitespace, and strips punctuation from token edges.
/// Internal punctuation (hyphens, apostrophes) is kept.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    for (auto word : detail::split_whitespace(text)) {
        std::size_t b = 0, e = word.size();
        while (b < e && detail::is_punct(word[b])) ++b;
        while (e > b && detail::is_punct(word[e - 1])) --e;
        if (b == e) continue;
        std::string tok(word.substr(b, e - b));
        std::transform(tok.begin(), tok.end(), tok.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        out.push_back(std::move(tok));
    }
    return out;
}

inline constexpr std::size_t default_chunk_size = 12;

/// `punct` splits after any of . ! ? ; and drops empty pieces. `chunk` cuts the
/// whitespace-separated words into windows of `chunk_size`.
inline std::vector<std::string> split_sentences(std::string_view text, SentenceMode mode,
                                                std::size_t chunk_size = default_chunk_size) {
    std::vector<std::string> out;
    if (mode == SentenceMode::punct) {
        std::size_t start = 0;
        for (std::size_t i = 0; i <= text.size(); ++i) {
            const bool boundary = i == text.size() || text[i] == '.' || text[i] == '!' || text[i] == '?' || text[i] == ';';
            if (!boundary) continue;
            auto piece = detail::trim(text.substr(start, i - start));
            if (!piece.empty()) out.push_back(std::move(piece));
            start = i + 1;
        }
    } else {
        if (chunk_size == 0) throw std::invalid_argument("chunk size must be positive");
        const auto words = detail::split_whitespace(text);
        for (std::size_t i = 0; i < words.size(); i += chunk_size) {
            std::string chunk;
            for (std::size_t j = i; j < std::min(words.size(), i + chunk_size); ++j) {
                if (j > i) chunk += ' ';
                chunk += words[j];
            }
            out.push_back(std::move(chunk));
        }
    }
    if (out.empty()) {
        auto whole = detail::trim(text);
        if (!whole.empty()) out.push_back(std::move(whole));
    }
    return out;
}

/// Tokenized sentences of one raw document; sentences that tokenize to nothing
/// are skipped.
inline std::vector<std::vector<std::string>> segment_document(std::string_view text, SentenceMode mode,
                                                              std::size_t chunk_size = default_chunk_size) {
    std::vector<std::vector<std::string>> sentences;
    for (const auto& s : split_sentences(text, mode, chunk_size)) {
        auto toks = tokenize(s);
        if (!toks.empty()) sentences.push_back(std::move(toks));
    }
    return sentences;
}

struct Corpus {
    std::vector<DocumentRecord> records;
    Vocabulary vocab;
    std::vector<std::string> labels;  // label_id -> original label string
    CorpusStats stats;

    std::size_t class_count() const { return labels.size(); }
};

struct IngestOptions {
    SentenceMode sentence_mode = SentenceMode::punct;
    std::size_t chunk_size = default_chunk_size;
    std::ostream* warnings = &std::cerr;
};

namespace detail {

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(std::move(line));
    }
    return lines;
}

}  // namespace detail

inline CorpusStats compute_stats(const std::vector<DocumentRecord>& records, const Vocabulary& vocab,
                                 std::size_t class_count, std::size_t dropped) {
    CorpusStats s;
    s.doc_count = records.size();
    s.vocab_size = vocab.size() - 1;
    s.class_count = class_count;
    s.dropped_docs = dropped;
    double tokens = 0.0, sentences = 0.0;
    for (const auto& r : records) {
        (r.split == Split::train ? s.train_count : s.test_count) += 1;
        tokens += static_cast<double>(r.tokens.size());
        sentences += static_cast<double>(r.sentence_count());
    }
    if (!records.empty()) {
        s.average_length = tokens / static_cast<double>(records.size());
        s.average_sentences = sentences / static_cast<double>(records.size());
    }
    return s;
}

/// Reads the metadata file (`doc_id<TAB>split<TAB>label` per line) and the
/// aligned one-document-per-line text file. Vocabulary comes from the train
/// split only; label ids follow sorted label strings.
inline Corpus ingest_corpus(const std::filesystem::path& meta_path, const std::filesystem::path& text_path,
                            const IngestOptions& options = {}) {
    const auto meta = detail::read_lines(meta_path);
    const auto text = detail::read_lines(text_path);
    if (meta.empty()) throw FormatError(meta_path.string(), 0, "metadata file is empty");
    if (text.empty()) throw FormatError(text_path.string(), 0, "corpus file is empty");
    if (meta.size() != text.size()) {
        throw FormatError(text_path.string(), 0,
                          "line count " + std::to_string(text.size()) + " does not match metadata line count " +
                              std::to_string(meta.size()));
    }

    struct Raw {
        std::string id, label;
        Split split;
        std::vector<std::vector<std::string>> sentences;
    };
    std::vector<Raw> raw;
    raw.reserve(meta.size());
    std::map<std::string, std::size_t> label_ids;
    std::size_t dropped = 0;
    for (std::size_t i = 0; i < meta.size(); ++i) {
        const auto& line = meta[i];
        const auto t1 = line.find('\t');
        const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos) {
            throw FormatError(meta_path.string(), i + 1, "expected exactly two TAB separators");
        }
        Raw r;
        r.id = line.substr(0, t1);
        const auto split = line.substr(t1 + 1, t2 - t1 - 1);
        r.label = line.substr(t2 + 1);
        if (split == "train") {
            r.split = Split::train;
        } else if (split == "test") {
            r.split = Split::test;
        } else {
            throw FormatError(meta_path.string(), i + 1, "unknown split '" + split + "'");
        }
        r.sentences = segment_document(text[i], options.sentence_mode, options.chunk_size);
        if (r.sentences.empty()) {
            ++dropped;
            if (options.warnings) {
                *options.warnings << "warning: dropping empty document '" << r.id << "' (line " << i + 1 << ")\n";
            }
            continue;
        }
        label_ids.emplace(r.label, 0);
        raw.push_back(std::move(r));
    }

    Corpus corpus;
    for (auto& [label, id] : label_ids) {
        id = corpus.labels.size();
        corpus.labels.push_back(label);
    }
    for (const auto& r : raw) {
        if (r.split != Split::train) continue;
        for (const auto& s : r.sentences)
            for (const auto& t : s) corpus.vocab.add(t);
    }
    corpus.records.reserve(raw.size());
    for (auto& r : raw) {
        DocumentRecord doc;
        doc.doc_id = std::move(r.id);
        doc.split = r.split;
        doc.label_id = label_ids.at(r.label);
        for (const auto& s : r.sentences) {
            const auto begin = doc.tokens.size();
            for (const auto& t : s) doc.tokens.push_back(corpus.vocab.lookup(t));
            doc.sentence_spans.push_back({begin, doc.tokens.size()});
        }
        corpus.records.push_back(std::move(doc));
    }
    corpus.stats = compute_stats(corpus.records, corpus.vocab, corpus.labels.size(), dropped);
    return corpus;
}

// Cache layout: vocab.txt (one token per line, line 0 is UNK), labels.txt,
// records.tsv (id, split, label id, token ids, span ends), stats.txt.

inline void save_corpus_cache(const Corpus& corpus, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto open = [&](const char* name) {
        std::ofstream out(dir / name, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
        return out;
    };
    {
        auto out = open("vocab.txt");
        for (const auto& t : corpus.vocab.tokens()) out << t << '\n';
    }
    {
        auto out = open("labels.txt");
        for (const auto& l : corpus.labels) out << l << '\n';
    }
    {
        auto out = open("records.tsv");
        for (const auto& r : corpus.records) {
            out << r.doc_id << '\t' << to_string(r.split) << '\t' << r.label_id << '\t';
            for (std::size_t i = 0; i < r.tokens.size(); ++i) out << (i ? " " : "") << r.tokens[i];
            out << '\t';
            for (std::size_t i = 0; i < r.sentence_spans.size(); ++i) out << (i ? " " : "") << r.sentence_spans[i].end;
            out << '\n';
        }
    }
    {
        auto out = open("stats.txt");
        out << corpus.stats.report();
    }
}

inline Corpus load_corpus_cache(const std::filesystem::path& dir) {
    Corpus corpus;
    corpus.vocab = Vocabulary::from_tokens(detail::read_lines(dir / "vocab.txt"));
    corpus.labels = detail::read_lines(dir / "labels.txt");
    const auto path = (dir / "records.tsv").string();
    const auto lines = detail::read_lines(dir / "records.tsv");
    auto parse_ids = [&](const std::string& field, std::size_t line) {
        std::vector<std::size_t> ids;
        std::istringstream is(field);
        std::size_t v;
        while (is >> v) ids.push_back(v);
        if (!is.eof()) throw FormatError(path, line, "bad integer list");
        return ids;
    };
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::vector<std::string> f;
        std::istringstream is(lines[i]);
        std::string field;
        while (std::getline(is, field, '\t')) f.push_back(field);
        if (f.size() != 5) throw FormatError(path, i + 1, "expected 5 fields");
        DocumentRecord r;
        r.doc_id = f[0];
        if (f[1] == "train") {
            r.split = Split::train;
        } else if (f[1] == "test") {
            r.split = Split::test;
        } else {
            throw FormatError(path, i + 1, "unknown split '" + f[1] + "'");
        }
        r.label_id = std::stoul(f[2]);
        r.tokens = parse_ids(f[3], i + 1);
        std::size_t begin = 0;
        for (auto end : parse_ids(f[4], i + 1)) {
            r.sentence_spans.push_back({begin, end});
            begin = end;
        }
        if (r.label_id >= corpus.labels.size()) throw FormatError(path, i + 1, "label id out of range");
        for (auto t : r.tokens) {
            if (t >= corpus.vocab.size()) throw FormatError(path, i + 1, "token id out of range");
        }
        if (!spans_partition_tokens(r)) throw FormatError(path, i + 1, "sentence spans do not partition tokens");
        corpus.records.push_back(std::move(r));
    }
    std::size_t dropped = 0;
    for (const auto& line : detail::read_lines(dir / "stats.txt")) {
        if (line.rfind("dropped_docs = ", 0) == 0) dropped = std::stoul(line.substr(15));
    }
    corpus.stats = compute_stats(corpus.records, corpus.vocab, corpus.labels.size(), dropped);
    return corpus;
}

}  // namespace hiegat
