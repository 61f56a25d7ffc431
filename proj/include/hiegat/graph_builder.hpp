#pragma once

#include <cstddef>
#include <ostream>
#include <string>
#include <vector>

#include "hiegat/tensor.hpp"
#include "hiegat/text_pipeline.hpp"

namespace hiegat {

enum class Level { word, sen, doc };

inline const char* to_string(Level level) {
    switch (level) {
        case Level::word: return "word";
        case Level::sen: return "sen";
        case Level::doc: return "doc";
    }
    return "?";
}

/// One graph at one level. Edges are directed src -> dst pairs, sorted by
/// (dst, src), and always include a self-loop per node.
struct LevelGraph {
    Level level = Level::word;
    std::size_t num_nodes = 0;
    // Token ids into the level's embedding table (word/doc) or sentence indices (sen).
    std::vector<std::size_t> node_refs;
    std::vector<std::size_t> src;
    std::vector<std::size_t> dst;

    std::size_t num_edges() const { return src.size(); }
    bool has_edge(std::size_t from, std::size_t to) const {
        for (std::size_t e = 0; e < src.size(); ++e) {
            if (src[e] == from && dst[e] == to) return true;
        }
        return false;
    }
};

/// n-gram window adjacency: i and j are connected exactly when |i - j| <= window.
inline LevelGraph build_window_graph(std::size_t num_nodes, std::size_t window, Level level = Level::word) {
    if (num_nodes == 0) throw InvalidInput("build_window_graph: graph needs at least one node");
    if (window == 0) throw InvalidInput("build_window_graph: window must be >= 1");
    LevelGraph g;
    g.level = level;
    g.num_nodes = num_nodes;
    for (std::size_t i = 0; i < num_nodes; ++i) {
        const std::size_t lo = i >= window ? i - window : 0;
        const std::size_t hi = std::min(num_nodes - 1, i + window);
        for (std::size_t j = lo; j <= hi; ++j) {
            g.src.push_back(j);
            g.dst.push_back(i);
        }
    }
    return g;
}

struct SampleGraphs {
    std::vector<LevelGraph> word_graphs;  // one per sentence
    LevelGraph sen_graph;
    LevelGraph doc_graph;
    std::size_t sentence_count = 0;
};

struct GraphWindows {
    std::size_t word = 2;
    std::size_t sen = 2;
    std::size_t doc = 2;
};

inline SampleGraphs build_sample_graphs(const DocumentRecord& doc, const GraphWindows& windows) {
    if (doc.tokens.empty() || doc.sentence_spans.empty()) {
        throw InvalidInput("build_sample_graphs: document '" + doc.doc_id + "' has no tokens or sentences");
    }
    SampleGraphs out;
    out.sentence_count = doc.sentence_spans.size();
    out.word_graphs.reserve(out.sentence_count);
    for (const auto& span : doc.sentence_spans) {
        auto g = build_window_graph(span.size(), windows.word, Level::word);
        g.node_refs.assign(doc.tokens.begin() + static_cast<std::ptrdiff_t>(span.begin),
                           doc.tokens.begin() + static_cast<std::ptrdiff_t>(span.end));
        out.word_graphs.push_back(std::move(g));
    }
    out.sen_graph = build_window_graph(out.sentence_count, windows.sen, Level::sen);
    for (std::size_t i = 0; i < out.sentence_count; ++i) out.sen_graph.node_refs.push_back(i);
    out.doc_graph = build_window_graph(doc.tokens.size(), windows.doc, Level::doc);
    out.doc_graph.node_refs = doc.tokens;
    return out;
}

inline SampleGraphs build_sample_graphs(const DocumentRecord& doc, std::size_t window) {
    return build_sample_graphs(doc, GraphWindows{window, window, window});
}

/// Debug edge list, one `level src dst` line per directed edge. Word graphs are
/// written as `word<k>` for sentence k.
inline void dump_edge_list(const SampleGraphs& graphs, std::ostream& os) {
    for (std::size_t k = 0; k < graphs.word_graphs.size(); ++k) {
        const auto& g = graphs.word_graphs[k];
        for (std::size_t e = 0; e < g.num_edges(); ++e) os << "word" << k << ' ' << g.src[e] << ' ' << g.dst[e] << '\n';
    }
    for (const auto* g : {&graphs.sen_graph, &graphs.doc_graph}) {
        for (std::size_t e = 0; e < g->num_edges(); ++e)
            os << to_string(g->level) << ' ' << g->src[e] << ' ' << g->dst[e] << '\n';
    }
}

}  // namespace hiegat
