#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "hiegat/gat_layer.hpp"
#include "support/dense_reference.hpp"
#include "support/grad_check.hpp"

using namespace hiegat;
using hiegat::testing::check_gradients;
using hiegat::testing::dense_gat;
using hiegat::testing::dense_layer;
using hiegat::testing::to_mat;
using hiegat::testing::window_adjacency;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, bool requires_grad = false) {
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> v(r * c);
    for (auto& x : v) x = d(rng);
    return Tensor({r, c}, std::move(v), requires_grad);
}

LevelGraph complete_graph(std::size_t n) { return build_window_graph(n, n); }

}  // namespace

TEST(GatForward, SingleNodeIsLinearMap) {
    std::mt19937_64 rng(1);
    const auto params = make_gat_layer(4, 3, 1, HeadMerge::mean, 0.2, rng);
    const auto h = random_matrix(1, 4, rng);
    const auto out = gat_forward(h, build_window_graph(1, 2), params, Activation::none);
    const auto wh = matmul(h, params.weights[0]);
    ASSERT_EQ(out.shape(), wh.shape());
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(out[c], wh[c]);
}

TEST(GatForward, IdenticalNodesGiveIdenticalRows) {
    std::mt19937_64 rng(2);
    const auto params = make_gat_layer(3, 3, 1, HeadMerge::mean, 0.2, rng);
    const Tensor h({2, 3}, {0.3, -0.1, 0.7, 0.3, -0.1, 0.7});
    const auto out = gat_forward(h, complete_graph(2), params, Activation::elu);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(out.at(0, c), out.at(1, c));
}

TEST(GatForward, MatchesDenseReferenceOnPath) {
    std::mt19937_64 rng(3);
    for (auto merge : {HeadMerge::mean, HeadMerge::concat}) {
        const auto params = make_gat_layer(5, 4, 3, merge, 0.2, rng);
        const auto h = random_matrix(4, 5, rng);
        for (auto act : {Activation::none, Activation::elu}) {
            const auto out = gat_forward(h, build_window_graph(4, 1), params, act);
            const auto ref = dense_gat(to_mat(h), window_adjacency(4, 1), dense_layer(params), 0.2,
                                       act == Activation::elu);
            ASSERT_EQ(out.dim(1), ref.front().size());
            for (std::size_t i = 0; i < 4; ++i)
                for (std::size_t c = 0; c < ref[i].size(); ++c) EXPECT_NEAR(out.at(i, c), ref[i][c], 1e-10);
        }
    }
}

TEST(GatForward, AttentionRowsSumToOne) {
    std::mt19937_64 rng(4);
    const auto params = make_gat_layer(6, 6, 2, HeadMerge::concat, 0.2, rng);
    const auto g = build_window_graph(12, 3);
    std::vector<Tensor> alphas;
    gat_forward(random_matrix(12, 6, rng), g, params, Activation::elu, &alphas);
    ASSERT_EQ(alphas.size(), 2u);
    for (const auto& a : alphas) {
        std::vector<double> sums(g.num_nodes, 0.0);
        for (std::size_t e = 0; e < g.num_edges(); ++e) {
            EXPECT_GT(a[e], 0.0);
            EXPECT_LE(a[e], 1.0);
            sums[g.dst[e]] += a[e];
        }
        for (double s : sums) EXPECT_NEAR(s, 1.0, 1e-9);
    }
}

TEST(GatForward, RelabelingEquivariance) {
    std::mt19937_64 rng(5);
    const auto params = make_gat_layer(4, 4, 2, HeadMerge::concat, 0.2, rng);
    const std::size_t n = 7;
    const auto g = build_window_graph(n, 2);
    const auto h = random_matrix(n, 4, rng);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);

    // Node i becomes perm[i]. Edges keep their relative order within each destination.
    std::vector<double> hp(n * 4);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < 4; ++c) hp[perm[i] * 4 + c] = h.at(i, c);
    std::vector<std::size_t> order(g.num_edges());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return perm[g.dst[a]] < perm[g.dst[b]]; });
    LevelGraph pg;
    pg.num_nodes = n;
    for (auto e : order) {
        pg.src.push_back(perm[g.src[e]]);
        pg.dst.push_back(perm[g.dst[e]]);
    }
    const auto out = gat_forward(h, g, params, Activation::elu);
    const auto pout = gat_forward(Tensor({n, 4}, hp), pg, params, Activation::elu);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < out.dim(1); ++c) EXPECT_EQ(out.at(i, c), pout.at(perm[i], c));
}

TEST(GatForward, SizeMismatchThrows) {
    std::mt19937_64 rng(6);
    const auto params = make_gat_layer(4, 4, 1, HeadMerge::mean, 0.2, rng);
    EXPECT_THROW(gat_forward(random_matrix(3, 4, rng), build_window_graph(4, 1), params, Activation::none),
                 DimensionError);
    EXPECT_THROW(gat_forward(random_matrix(4, 5, rng), build_window_graph(4, 1), params, Activation::none),
                 DimensionError);
}

TEST(GatForward, GradientCheckSmallGraph) {
    std::mt19937_64 rng(7);
    const auto g = build_window_graph(6, 2);
    auto params = make_gat_layer(3, 3, 2, HeadMerge::concat, 0.2, rng);
    auto h = random_matrix(6, 3, rng, true);
    std::vector<std::pair<std::string, Tensor>> leaves{{"h", h}};
    for (std::size_t k = 0; k < 2; ++k) {
        leaves.emplace_back("W" + std::to_string(k), params.weights[k]);
        leaves.emplace_back("a" + std::to_string(k), params.attention[k]);
    }
    const auto probe = random_matrix(6, 6, rng);
    const auto r = check_gradients(leaves, [&] {
        return sum(matmul(reshape(gat_forward(h, g, params, Activation::elu), {1, 36}), reshape(probe, {36, 1})));
    });
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(GatStack, WidthsAndDenseAgreement) {
    std::mt19937_64 rng(8);
    const GatStack stack(5, 5, 3, 3, 0.2, rng);
    ASSERT_EQ(stack.layers().size(), 3u);
    EXPECT_EQ(stack.layers()[0].out_width(), 15u);
    EXPECT_EQ(stack.layers()[1].in_width(), 15u);
    EXPECT_EQ(stack.out_width(), 5u);
    const auto h = random_matrix(6, 5, rng);
    const auto g = build_window_graph(6, 2);
    const auto out = stack.forward(h, g, 0.5, false, rng);
    const auto ref = hiegat::testing::dense_stack(to_mat(h), window_adjacency(6, 2), stack, 0.2);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(out.at(i, c), ref[i][c], 1e-10);
}

TEST(Readout, Examples) {
    const Tensor x({2, 2}, {1, 3, 3, 5});
    EXPECT_EQ(to_mat(reshape(readout(x, ReadoutMode::mean), {1, 2})).front(), (std::vector<double>{2, 4}));
    EXPECT_EQ(to_mat(reshape(readout(x, ReadoutMode::max), {1, 2})).front(), (std::vector<double>{3, 5}));
    EXPECT_EQ(to_mat(reshape(readout(x, ReadoutMode::sum), {1, 2})).front(), (std::vector<double>{4, 8}));
    const Tensor one({1, 3}, {0.1, -2, 7});
    for (auto m : {ReadoutMode::mean, ReadoutMode::max, ReadoutMode::sum}) {
        const auto r = readout(one, m);
        for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(r[c], one[c]);
    }
}
