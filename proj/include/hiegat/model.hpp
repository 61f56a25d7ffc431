#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hiegat/gat_layer.hpp"
#include "hiegat/graph_builder.hpp"
#include "hiegat/ops.hpp"
#include "hiegat/tensor.hpp"

namespace hiegat {

enum class LambdaPolicy { per_sample, batch_mean };

inline std::string to_string(LambdaPolicy p) { return p == LambdaPolicy::per_sample ? "per_sample" : "batch_mean"; }
inline std::string to_string(ReadoutMode m) {
    switch (m) {
        case ReadoutMode::mean: return "mean";
        case ReadoutMode::max: return "max";
        case ReadoutMode::sum: return "sum";
    }
    return "?";
}
inline std::optional<LambdaPolicy> parse_lambda_policy(const std::string& s) {
    if (s == "per_sample") return LambdaPolicy::per_sample;
    if (s == "batch_mean") return LambdaPolicy::batch_mean;
    return std::nullopt;
}
inline std::optional<ReadoutMode> parse_readout_mode(const std::string& s) {
    if (s == "mean") return ReadoutMode::mean;
    if (s == "max") return ReadoutMode::max;
    if (s == "sum") return ReadoutMode::sum;
    return std::nullopt;
}

struct LevelConfig {
    std::size_t layers = 1;
    std::size_t heads = 1;
    std::size_t window = 2;
    bool operator==(const LevelConfig&) const = default;
};

struct HieGnnConfig {
    std::size_t embedding_width = 200;
    std::size_t vocab_size = 1;
    std::size_t class_count = 2;
    LevelConfig word{1, 1, 2};
    LevelConfig sen{1, 1, 2};
    LevelConfig doc{3, 3, 2};
    ReadoutMode readout = ReadoutMode::mean;
    double dropout = 0.5;
    double negative_slope = 0.2;
    double embedding_init = 0.01;
    LambdaPolicy lambda_policy = LambdaPolicy::per_sample;
    std::uint64_t seed = 1;

    GraphWindows windows() const { return {word.window, sen.window, doc.window}; }

    void validate() const {
        for (const auto* l : {&word, &sen, &doc}) {
            if (l->layers == 0) throw InvalidInput("config: every level needs at least one layer");
            if (l->heads == 0) throw InvalidInput("config: every level needs at least one head");
            if (l->window == 0) throw InvalidInput("config: window must be >= 1");
        }
        if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidInput("config: dropout must be in [0, 1)");
        if (embedding_width == 0) throw InvalidInput("config: embedding width must be positive");
        if (vocab_size == 0) throw InvalidInput("config: vocabulary size must be positive");
        if (class_count == 0) throw InvalidInput("config: class count must be positive");
    }

    bool operator==(const HieGnnConfig&) const = default;
};

/// Level fusion weights. Computed weights satisfy λ_s = 2 λ_w and sum to 1.
struct LambdaWeights {
    double lambda_d = 1.0;
    double lambda_s = 0.0;
    double lambda_w = 0.0;
    double source_xs = 1.0;
};

/// λ_d = 1/(ln x_s + 1), λ_s = 2/3 (1 - λ_d), λ_w = 1/3 (1 - λ_d).
inline LambdaWeights compute_lambda(double x_s) {
    if (!(x_s >= 1.0)) throw InvalidInput("compute_lambda: sentence count must be >= 1, got " + std::to_string(x_s));
    LambdaWeights w;
    w.source_xs = x_s;
    w.lambda_d = 1.0 / (std::log(x_s) + 1.0);
    const double rest = 1.0 - w.lambda_d;
    w.lambda_s = 2.0 * rest / 3.0;
    w.lambda_w = rest / 3.0;
    return w;
}

/// Per-level log-probability vectors R'_t. A level skipped because its weight is
/// zero is left undefined.
struct LevelOutputs {
    Tensor word;
    Tensor sen;
    Tensor doc;
};

/// ŷ = λ_d R'_d + λ_s R'_s + λ_w R'_w. Levels with zero weight may be undefined.
inline Tensor fuse_and_predict(const LevelOutputs& outputs, const LambdaWeights& lambdas) {
    std::vector<Tensor> parts;
    std::vector<double> weights;
    auto take = [&](const Tensor& t, double w, const char* name) {
        if (w == 0.0) return;
        if (!t.defined()) throw InvalidInput(std::string("fuse_and_predict: missing ") + name + "-level output");
        parts.push_back(t);
        weights.push_back(w);
    };
    take(outputs.doc, lambdas.lambda_d, "doc");
    take(outputs.sen, lambdas.lambda_s, "sen");
    take(outputs.word, lambdas.lambda_w, "word");
    if (parts.empty()) throw InvalidInput("fuse_and_predict: all level weights are zero");
    // A single active level with weight 1 passes through untouched.
    if (parts.size() == 1 && weights.front() == 1.0) return parts.front();
    return weighted_sum(parts, weights);
}

struct Linear {
    Tensor weight;  // in x out
    Tensor bias;    // out

    Tensor forward(const Tensor& x) const {
        return reshape(add_bias(matmul(reshape(x, {1, x.size()}), weight), bias), {bias.size()});
    }
};

struct WordLevelResult {
    Tensor output;                      // R_w
    std::vector<Tensor> sentence_vecs;  // r_i
};

struct ForwardResult {
    Tensor log_probs;  // fused ŷ, [C]
    LevelOutputs levels;
    LambdaWeights lambdas;
};

/// The three-level model: embedding tables M1 (word level) and M2 (doc level),
/// a GAT stack per level, and one C-way projection per level.
class HieGnnModel {
   public:
    HieGnnModel() = default;

    explicit HieGnnModel(const HieGnnConfig& config) : config_(config) {
        config_.validate();
        std::mt19937_64 rng(config_.seed);
        const auto n = config_.embedding_width;
        auto table = [&] {
            std::uniform_real_distribution<double> dist(-config_.embedding_init, config_.embedding_init);
            std::vector<double> v(config_.vocab_size * n);
            for (auto& x : v) x = dist(rng);
            return Tensor({config_.vocab_size, n}, std::move(v), true);
        };
        m1_ = table();
        m2_ = table();
        word_gat_ = GatStack(n, n, config_.word.layers, config_.word.heads, config_.negative_slope, rng);
        sen_gat_ = GatStack(word_gat_.out_width(), n, config_.sen.layers, config_.sen.heads, config_.negative_slope, rng);
        doc_gat_ = GatStack(n, n, config_.doc.layers, config_.doc.heads, config_.negative_slope, rng);
        auto linear = [&](std::size_t in) {
            const double limit = std::sqrt(6.0 / double(in + config_.class_count));
            std::uniform_real_distribution<double> dist(-limit, limit);
            std::vector<double> w(in * config_.class_count);
            for (auto& x : w) x = dist(rng);
            return Linear{Tensor({in, config_.class_count}, std::move(w), true), Tensor::zeros({config_.class_count}, true)};
        };
        proj_word_ = linear(word_gat_.out_width());
        proj_sen_ = linear(sen_gat_.out_width());
        proj_doc_ = linear(doc_gat_.out_width());
    }

    const HieGnnConfig& config() const { return config_; }

    /// Visits every parameter tensor in a fixed order with its registry name.
    void for_each_parameter(const std::function<void(const std::string&, Tensor&)>& fn) {
        fn("M1", m1_);
        fn("M2", m2_);
        visit_stack("word_gat", word_gat_, "W", "a", fn);
        visit_stack("sen_gat", sen_gat_, "W_s", "b", fn);
        visit_stack("doc_gat", doc_gat_, "W", "a", fn);
        visit_linear("proj_word", proj_word_, fn);
        visit_linear("proj_sen", proj_sen_, fn);
        visit_linear("proj_doc", proj_doc_, fn);
    }

    ParameterRegistry parameters() {
        ParameterRegistry reg;
        for_each_parameter([&](const std::string& name, Tensor& t) { reg.add(name, t); });
        return reg;
    }

    /// Shallow copy whose parameters are alias leaves: same values, separate
    /// gradient buffers. Used for per-worker gradient accumulation.
    HieGnnModel alias() const {
        HieGnnModel copy = *this;
        copy.for_each_parameter([](const std::string&, Tensor& t) { t = Tensor::alias_leaf(t); });
        return copy;
    }

    const Tensor& m1() const { return m1_; }
    const Tensor& m2() const { return m2_; }
    const GatStack& word_gat() const { return word_gat_; }
    const GatStack& sen_gat() const { return sen_gat_; }
    const GatStack& doc_gat() const { return doc_gat_; }
    const Linear& proj_word() const { return proj_word_; }
    const Linear& proj_sen() const { return proj_sen_; }
    const Linear& proj_doc() const { return proj_doc_; }

    /// Embeds each sentence from M1, runs the word-level stack, reads out r_i,
    /// and averages them into R_w.
    template <typename Rng>
    WordLevelResult word_level_forward(const SampleGraphs& graphs, bool training, Rng& rng) const {
        WordLevelResult out;
        out.sentence_vecs.reserve(graphs.word_graphs.size());
        for (const auto& g : graphs.word_graphs) {
            auto h = gather_rows(m1_, g.node_refs);
            h = word_gat_.forward(h, g, config_.dropout, training, rng);
            out.sentence_vecs.push_back(readout(h, config_.readout));
        }
        out.output = out.sentence_vecs.size() == 1 ? out.sentence_vecs.front() : mean_of(out.sentence_vecs);
        return out;
    }

    /// Sentence vectors r_i become node features of the sentence graph; the
    /// updated nodes are averaged into R_s.
    template <typename Rng>
    Tensor sen_level_forward(const std::vector<Tensor>& sentence_vecs, const LevelGraph& sen_graph, bool training,
                             Rng& rng) const {
        if (sentence_vecs.size() != sen_graph.num_nodes) {
            throw DimensionError("sen_level_forward: " + std::to_string(sentence_vecs.size()) +
                                 " sentence vectors for a graph of " + std::to_string(sen_graph.num_nodes) + " nodes");
        }
        auto s = sen_gat_.forward(stack_rows(sentence_vecs), sen_graph, config_.dropout, training, rng);
        return readout(s, ReadoutMode::mean);
    }

    /// Whole sample as one long sentence over M2; nodes averaged into R_d.
    template <typename Rng>
    Tensor doc_level_forward(const LevelGraph& doc_graph, bool training, Rng& rng) const {
        auto h = gather_rows(m2_, doc_graph.node_refs);
        h = doc_gat_.forward(h, doc_graph, config_.dropout, training, rng);
        return readout(h, ReadoutMode::mean);
    }

    /// Full forward for one sample. Levels whose λ is zero are not computed.
    template <typename Rng>
    ForwardResult forward(const SampleGraphs& graphs, const LambdaWeights& lambdas, bool training, Rng& rng) const {
        ForwardResult out;
        out.lambdas = lambdas;
        if (lambdas.lambda_d != 0.0) {
            out.levels.doc = log_softmax(proj_doc_.forward(doc_level_forward(graphs.doc_graph, training, rng)));
        }
        if (lambdas.lambda_w != 0.0 || lambdas.lambda_s != 0.0) {
            auto word = word_level_forward(graphs, training, rng);
            if (lambdas.lambda_w != 0.0) out.levels.word = log_softmax(proj_word_.forward(word.output));
            if (lambdas.lambda_s != 0.0) {
                out.levels.sen = log_softmax(
                    proj_sen_.forward(sen_level_forward(word.sentence_vecs, graphs.sen_graph, training, rng)));
            }
        }
        out.log_probs = fuse_and_predict(out.levels, lambdas);
        return out;
    }

    /// Evaluation-mode prediction (no dropout, no graph recording).
    std::vector<double> predict_log_probs(const SampleGraphs& graphs, const LambdaWeights& lambdas) const {
        NoGradGuard guard;
        std::mt19937_64 unused(0);
        auto r = forward(graphs, lambdas, false, unused);
        return {r.log_probs.data().begin(), r.log_probs.data().end()};
    }

   private:
    static void visit_stack(const std::string& prefix, GatStack& stack, const char* w_name, const char* a_name,
                            const std::function<void(const std::string&, Tensor&)>& fn) {
        for (std::size_t l = 0; l < stack.layers().size(); ++l) {
            auto& layer = stack.layers()[l];
            for (std::size_t h = 0; h < layer.num_heads(); ++h) {
                const auto base = prefix + ".l" + std::to_string(l) + ".h" + std::to_string(h) + ".";
                fn(base + w_name, layer.weights[h]);
                fn(base + a_name, layer.attention[h]);
            }
        }
    }
    static void visit_linear(const std::string& prefix, Linear& lin,
                             const std::function<void(const std::string&, Tensor&)>& fn) {
        fn(prefix + ".weight", lin.weight);
        fn(prefix + ".bias", lin.bias);
    }

    HieGnnConfig config_;
    Tensor m1_, m2_;
    GatStack word_gat_, sen_gat_, doc_gat_;
    Linear proj_word_, proj_sen_, proj_doc_;
};

}  // namespace hiegat
