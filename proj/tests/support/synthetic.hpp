#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hiegat/text_pipeline.hpp"

namespace hiegat::testing {

struct CorpusFiles {
    std::filesystem::path meta;
    std::filesystem::path text;
};

/// Balanced labelled corpus of short punctuated reviews. Each class has its own
/// cue words mixed into shared filler; documents have 1-3 sentences.
inline CorpusFiles write_synthetic_corpus(const std::filesystem::path& dir, std::size_t n_train, std::size_t n_test,
                                          unsigned seed, std::size_t classes = 2) {
    static const std::vector<std::vector<std::string>> cues = {
        {"good", "great", "lovely", "superb", "fun"},
        {"bad", "awful", "dull", "boring", "weak"},
        {"odd", "strange", "weird", "quirky", "unusual"},
        {"long", "slow", "lengthy", "endless", "drawn-out"},
    };
    static const std::vector<std::string> filler = {"the", "movie", "plot", "actor", "was", "a", "film",
                                                    "story", "it", "scene", "and", "very", "this", "ending"};
    std::filesystem::create_directories(dir);
    CorpusFiles files{dir / "meta.txt", dir / "corpus.txt"};
    std::ofstream meta(files.meta), text(files.text);
    std::mt19937 rng(seed);
    auto pick = [&](const std::vector<std::string>& v) { return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)]; };
    for (std::size_t i = 0; i < n_train + n_test; ++i) {
        const std::size_t label = i % classes;
        const auto split = i < n_train ? "train" : "test";
        meta << "doc" << i << '\t' << split << '\t' << "c" << label << '\n';
        const auto sentences = std::uniform_int_distribution<int>(1, 3)(rng);
        std::string line;
        for (int s = 0; s < sentences; ++s) {
            const auto len = std::uniform_int_distribution<int>(3, 7)(rng);
            const auto cue_at = std::uniform_int_distribution<int>(0, len - 1)(rng);
            for (int t = 0; t < len; ++t) {
                if (!line.empty() && line.back() != ' ') line += ' ';
                line += t == cue_at ? pick(cues[label]) : pick(filler);
            }
            line += ". ";
        }
        text << line << '\n';
    }
    return files;
}

inline Corpus synthetic_corpus(const std::filesystem::path& dir, std::size_t n_train, std::size_t n_test,
                               unsigned seed, std::size_t classes = 2) {
    const auto files = write_synthetic_corpus(dir, n_train, n_test, seed, classes);
    IngestOptions opts;
    opts.warnings = nullptr;
    return ingest_corpus(files.meta, files.text, opts);
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("hiegat_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace hiegat::testing
