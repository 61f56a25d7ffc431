#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "hiegat/text_pipeline.hpp"
#include "support/synthetic.hpp"

using namespace hiegat;
using hiegat::testing::scratch_dir;
using hiegat::testing::synthetic_corpus;

namespace {

void write_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    out << content;
}

Corpus ingest_strings(const std::string& name, const std::string& meta, const std::string& text,
                      std::ostream* warnings = nullptr) {
    const auto dir = scratch_dir(name);
    write_file(dir / "meta.txt", meta);
    write_file(dir / "text.txt", text);
    IngestOptions opts;
    opts.warnings = warnings;
    return ingest_corpus(dir / "meta.txt", dir / "text.txt", opts);
}

}  // namespace

TEST(Tokenize, Examples) {
    EXPECT_EQ(tokenize("Good, movie!"), (std::vector<std::string>{"good", "movie"}));
    EXPECT_TRUE(tokenize("").empty());
    EXPECT_EQ(tokenize("state-of-the-art"), (std::vector<std::string>{"state-of-the-art"}));
    EXPECT_EQ(tokenize("  ... it's   FINE ?? "), (std::vector<std::string>{"it's", "fine"}));
}

TEST(SplitSentences, PunctExamples) {
    EXPECT_EQ(split_sentences("good movie. bad ending.", SentenceMode::punct),
              (std::vector<std::string>{"good movie", "bad ending"}));
    EXPECT_EQ(split_sentences("no punctuation here", SentenceMode::punct),
              (std::vector<std::string>{"no punctuation here"}));
    EXPECT_EQ(split_sentences("a! b? c; d", SentenceMode::punct), (std::vector<std::string>{"a", "b", "c", "d"}));
}

TEST(SplitSentences, ChunkSizes) {
    std::string text;
    for (int i = 0; i < 30; ++i) text += "w" + std::to_string(i) + " ";
    const auto chunks = split_sentences(text, SentenceMode::chunk);
    ASSERT_EQ(chunks.size(), 3u);
    EXPECT_EQ(tokenize(chunks[0]).size(), 12u);
    EXPECT_EQ(tokenize(chunks[1]).size(), 12u);
    EXPECT_EQ(tokenize(chunks[2]).size(), 6u);
    EXPECT_THROW(split_sentences(text, SentenceMode::chunk, 0), std::invalid_argument);
}

TEST(Vocabulary, UnkIsZeroAndCounted) {
    Vocabulary v;
    EXPECT_EQ(v.size(), 1u);
    EXPECT_EQ(v.add("x"), 1u);
    EXPECT_EQ(v.add("x"), 1u);
    EXPECT_EQ(v.lookup("never"), Vocabulary::unk_id);
    EXPECT_EQ(v.size(), 2u);
    EXPECT_THROW(Vocabulary::from_tokens({"x"}), std::invalid_argument);
    EXPECT_THROW(Vocabulary::from_tokens({"<unk>", "a", "a"}), std::invalid_argument);
}

TEST(Ingest, ToyCorpusSharedWordAndUnk) {
    const auto c = ingest_strings("toy", "d0\ttrain\tpos\nd1\ttest\tneg\n", "good film\nfilm noir\n");
    ASSERT_EQ(c.records.size(), 2u);
    EXPECT_EQ(c.vocab.size(), 3u);
    EXPECT_EQ(c.stats.vocab_size, 2u);
    const auto& test_doc = c.records[1];
    EXPECT_EQ(test_doc.tokens, (std::vector<std::size_t>{c.vocab.lookup("film"), Vocabulary::unk_id}));
    EXPECT_EQ(c.labels, (std::vector<std::string>{"neg", "pos"}));
    EXPECT_EQ(c.records[0].label_id, 1u);
    EXPECT_EQ(c.stats.train_count, 1u);
    EXPECT_EQ(c.stats.test_count, 1u);
}

TEST(Ingest, LineCountMismatch) {
    EXPECT_THROW(ingest_strings("mismatch", "d0\ttrain\ta\nd1\ttrain\tb\n", "one\n"), FormatError);
}

TEST(Ingest, UnknownSplitNamesLine) {
    try {
        ingest_strings("split", "d0\ttrain\ta\nd1\tdev\tb\n", "one\ntwo\n");
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
}

TEST(Ingest, WrongFieldCount) {
    EXPECT_THROW(ingest_strings("fields", "d0 train a\n", "one\n"), FormatError);
    EXPECT_THROW(ingest_strings("fields2", "d0\ttrain\ta\tb\n", "one\n"), FormatError);
}

TEST(Ingest, EmptyFileIsLineZero) {
    try {
        ingest_strings("empty", "", "");
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_EQ(e.line(), 0u);
    }
}

TEST(Ingest, EmptyDocumentDroppedWithWarning) {
    std::ostringstream warn;
    const auto c = ingest_strings("drop", "d0\ttrain\ta\nd1\ttrain\tb\nd2\ttest\ta\n", "fine text\n ... !!\nmore\n", &warn);
    EXPECT_EQ(c.records.size(), 2u);
    EXPECT_EQ(c.stats.dropped_docs, 1u);
    EXPECT_NE(warn.str().find("d1"), std::string::npos);
    EXPECT_EQ(c.labels, (std::vector<std::string>{"a"}));
}

TEST(Ingest, DeterministicAndInRange) {
    const auto a = synthetic_corpus(scratch_dir("det_a"), 60, 20, 3, 3);
    const auto b = synthetic_corpus(scratch_dir("det_b"), 60, 20, 3, 3);
    EXPECT_EQ(a.records, b.records);
    EXPECT_EQ(a.vocab.tokens(), b.vocab.tokens());
    for (const auto& r : a.records) {
        EXPECT_TRUE(spans_partition_tokens(r));
        EXPECT_LT(r.label_id, a.class_count());
        for (auto t : r.tokens) EXPECT_LT(t, a.vocab.size());
    }
    EXPECT_EQ(a.stats.doc_count, a.stats.train_count + a.stats.test_count);
    EXPECT_GE(a.stats.average_length, 1.0);
    EXPECT_GE(a.stats.average_sentences, 1.0);
}

TEST(Ingest, ChunkModeSegments) {
    std::string text;
    for (int i = 0; i < 30; ++i) text += "w ";
    const auto dir = scratch_dir("chunk");
    write_file(dir / "meta.txt", "d0\ttrain\ta\n");
    write_file(dir / "text.txt", text + "\n");
    IngestOptions opts;
    opts.sentence_mode = SentenceMode::chunk;
    const auto c = ingest_corpus(dir / "meta.txt", dir / "text.txt", opts);
    ASSERT_EQ(c.records[0].sentence_spans.size(), 3u);
    EXPECT_EQ(c.records[0].sentence_spans[2], (SentenceSpan{24, 30}));
}

TEST(Cache, RoundTrip) {
    const auto c = synthetic_corpus(scratch_dir("cache_src"), 30, 10, 5);
    const auto dir = scratch_dir("cache");
    save_corpus_cache(c, dir);
    const auto d = load_corpus_cache(dir);
    EXPECT_EQ(c.records, d.records);
    EXPECT_EQ(c.vocab.tokens(), d.vocab.tokens());
    EXPECT_EQ(c.labels, d.labels);
    EXPECT_EQ(c.stats.report(), d.stats.report());
}

TEST(Cache, CorruptRecordRejected) {
    const auto c = synthetic_corpus(scratch_dir("cache_bad_src"), 4, 2, 5);
    const auto dir = scratch_dir("cache_bad");
    save_corpus_cache(c, dir);
    write_file(dir / "records.tsv", "x\ttrain\t0\t1 2\t3\n");
    EXPECT_THROW(load_corpus_cache(dir), FormatError);
}

TEST(ReferenceStats, TableValues) {
    const auto* mr = find_reference_stats("mr");
    ASSERT_NE(mr, nullptr);
    EXPECT_EQ(mr->docs, 10662u);
    EXPECT_EQ(mr->train, 7108u);
    EXPECT_EQ(mr->test, 3554u);
    EXPECT_EQ(mr->classes, 2u);
    const auto* r8 = find_reference_stats("r8");
    ASSERT_NE(r8, nullptr);
    EXPECT_EQ(r8->docs, 7674u);
    EXPECT_EQ(r8->words, 7688u);
    EXPECT_EQ(r8->classes, 8u);
    EXPECT_EQ(find_reference_stats("nope"), nullptr);

    CorpusStats s;
    s.doc_count = mr->docs;
    s.train_count = mr->train;
    s.test_count = mr->test;
    s.vocab_size = mr->words;
    s.class_count = mr->classes;
    s.average_length = mr->average_length * 1.019;
    EXPECT_TRUE(compare_with_reference(s, *mr).empty());
    s.average_length = mr->average_length * 1.03;
    EXPECT_EQ(compare_with_reference(s, *mr).size(), 1u);
}
