#pragma once

// Finite-difference checks for every differentiable op plus the full model loss
// on a two-sentence, six-token sample.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "hiegat/gat_layer.hpp"
#include "hiegat/model.hpp"
#include "hiegat/ops.hpp"
#include "hiegat/trainer.hpp"
#include "support/grad_check.hpp"

namespace hiegat::testing {

struct GradientCase {
    std::string name;
    std::function<GradCheckResult()> run;
};

inline Tensor random_leaf(Shape shape, std::mt19937_64& rng, bool requires_grad = true) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

/// sum(out * w) for fixed random w, so every output entry has its own upstream gradient.
inline Tensor random_probe(const Tensor& out, unsigned seed) {
    std::mt19937_64 rng(seed);
    const auto w = random_leaf({out.size(), 1}, rng, false);
    return sum(matmul(reshape(out, {1, out.size()}), w));
}

inline std::vector<GradientCase> gradient_suite() {
    std::vector<GradientCase> cases;
    auto unary = [&](const std::string& name, Shape shape, std::function<Tensor(const Tensor&)> op) {
        cases.push_back({name, [shape, op] {
                             std::mt19937_64 rng(std::hash<std::string>{}(shape_str(shape)));
                             auto x = random_leaf(shape, rng);
                             return check_gradients({{"x", x}}, [&] { return random_probe(op(x), 11); });
                         }});
    };
    cases.push_back({"matmul", [] {
                         std::mt19937_64 rng(1);
                         auto a = random_leaf({3, 4}, rng), b = random_leaf({4, 2}, rng);
                         return check_gradients({{"a", a}, {"b", b}}, [&] { return random_probe(matmul(a, b), 1); });
                     }});
    cases.push_back({"add", [] {
                         std::mt19937_64 rng(2);
                         auto a = random_leaf({2, 3}, rng), b = random_leaf({2, 3}, rng);
                         return check_gradients({{"a", a}, {"b", b}}, [&] { return random_probe(add(a, b), 2); });
                     }});
    cases.push_back({"add_bias", [] {
                         std::mt19937_64 rng(3);
                         auto x = random_leaf({3, 2}, rng), b = random_leaf({2}, rng);
                         return check_gradients({{"x", x}, {"b", b}}, [&] { return random_probe(add_bias(x, b), 3); });
                     }});
    unary("scale", {2, 3}, [](const Tensor& x) { return scale(x, -1.7); });
    unary("sum", {2, 3}, [](const Tensor& x) { return sum(x); });
    unary("reshape", {2, 3}, [](const Tensor& x) { return reshape(x, {3, 2}); });
    unary("leaky_relu", {3, 3}, [](const Tensor& x) { return leaky_relu(x, 0.2); });
    unary("elu", {3, 4}, [](const Tensor& x) { return elu(x); });
    unary("log_softmax", {2, 4}, [](const Tensor& x) { return log_softmax(x); });
    unary("softmax_over_segments", {7}, [](const Tensor& x) {
        static const std::vector<std::size_t> seg{0, 0, 1, 1, 1, 2, 3};
        return softmax_over_segments(x, seg);
    });
    unary("dropout", {4, 3}, [](const Tensor& x) {
        std::mt19937_64 rng(5);
        return dropout(x, 0.4, true, rng);
    });
    unary("gather_rows", {4, 3}, [](const Tensor& x) {
        static const std::vector<std::size_t> idx{3, 0, 3, 1};
        return gather_rows(x, idx);
    });
    unary("stack_rows", {3}, [](const Tensor& x) { return stack_rows({x, scale(x, 2.0), x}); });
    unary("concat_cols", {2, 3}, [](const Tensor& x) { return concat_cols({x, elu(x)}); });
    unary("mean_of", {2, 2}, [](const Tensor& x) { return mean_of({x, elu(x), scale(x, 3.0)}); });
    unary("weighted_sum", {3}, [](const Tensor& x) { return weighted_sum({x, elu(x)}, {0.3, -1.1}); });
    unary("pick", {5}, [](const Tensor& x) { return pick(x, 3); });
    unary("readout_mean", {4, 3}, [](const Tensor& x) { return readout(x, ReadoutMode::mean); });
    unary("readout_max", {4, 3}, [](const Tensor& x) { return readout(x, ReadoutMode::max); });
    unary("readout_sum", {4, 3}, [](const Tensor& x) { return readout(x, ReadoutMode::sum); });
    cases.push_back({"edge_scores", [] {
                         std::mt19937_64 rng(6);
                         auto z = random_leaf({4, 3}, rng), a = random_leaf({6}, rng);
                         const std::vector<std::size_t> src{0, 1, 1, 2, 3, 3}, dst{0, 0, 1, 2, 2, 3};
                         return check_gradients({{"z", z}, {"a", a}},
                                                [&] { return random_probe(edge_scores(z, a, src, dst), 6); });
                     }});
    cases.push_back({"edge_aggregate", [] {
                         std::mt19937_64 rng(7);
                         auto z = random_leaf({4, 3}, rng), w = random_leaf({6}, rng);
                         const std::vector<std::size_t> src{0, 1, 1, 2, 3, 3}, dst{0, 0, 1, 2, 2, 3};
                         return check_gradients({{"z", z}, {"w", w}},
                                                [&] { return random_probe(edge_aggregate(w, z, src, dst, 4), 7); });
                     }});
    cases.push_back({"cross_entropy_loss", [] {
                         std::mt19937_64 rng(8);
                         auto x = random_leaf({3, 4}, rng);
                         const std::vector<std::size_t> labels{2, 0, 3};
                         return check_gradients({{"x", x}}, [&] { return cross_entropy_loss(log_softmax(x), labels); });
                     }});
    cases.push_back({"gat_forward", [] {
                         std::mt19937_64 rng(9);
                         auto params = make_gat_layer(3, 3, 2, HeadMerge::concat, 0.2, rng);
                         auto h = random_leaf({6, 3}, rng);
                         const auto g = build_window_graph(6, 2);
                         std::vector<std::pair<std::string, Tensor>> leaves{{"h", h}};
                         for (std::size_t k = 0; k < params.num_heads(); ++k) {
                             leaves.emplace_back("W" + std::to_string(k), params.weights[k]);
                             leaves.emplace_back("a" + std::to_string(k), params.attention[k]);
                         }
                         return check_gradients(
                             leaves, [&] { return random_probe(gat_forward(h, g, params, Activation::elu), 9); });
                     }});
    cases.push_back({"hiegat_loss", [] {
                         HieGnnConfig cfg;
                         cfg.embedding_width = 4;
                         cfg.vocab_size = 8;
                         cfg.class_count = 3;
                         cfg.embedding_init = 0.5;
                         cfg.dropout = 0.0;
                         cfg.seed = 13;
                         HieGnnModel model(cfg);
                         DocumentRecord doc;
                         doc.tokens = {1, 2, 3, 4, 2, 5};
                         doc.sentence_spans = {{0, 3}, {3, 6}};
                         doc.label_id = 1;
                         const auto graphs = build_sample_graphs(doc, cfg.windows());
                         std::vector<std::pair<std::string, Tensor>> leaves;
                         model.for_each_parameter([&](const std::string& n, Tensor& t) { leaves.emplace_back(n, t); });
                         const std::vector<std::size_t> labels{doc.label_id};
                         const auto lambdas = compute_lambda(2.0);
                         std::mt19937_64 rng(0);
                         return check_gradients(leaves, [&] {
                             auto lp = model.forward(graphs, lambdas, false, rng).log_probs;
                             return cross_entropy_loss(reshape(lp, {1, lp.size()}), labels);
                         });
                     }});
    return cases;
}

}  // namespace hiegat::testing
