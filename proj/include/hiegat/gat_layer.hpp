#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "hiegat/graph_builder.hpp"
#include "hiegat/ops.hpp"
#include "hiegat/tensor.hpp"

namespace hiegat {

enum class HeadMerge { concat, mean };
enum class Activation { elu, none };

/// Parameters of one graph-attention layer. Head h owns weights[h] (d_in x d_out)
/// and attention[h] (2*d_out).
struct GatLayerParams {
    std::vector<Tensor> weights;
    std::vector<Tensor> attention;
    HeadMerge head_merge = HeadMerge::mean;
    double negative_slope = 0.2;

    std::size_t num_heads() const { return weights.size(); }
    std::size_t in_width() const { return weights.front().dim(0); }
    std::size_t head_width() const { return weights.front().dim(1); }
    std::size_t out_width() const {
        return head_merge == HeadMerge::concat ? num_heads() * head_width() : head_width();
    }
};

/// Glorot-uniform initialised layer.
template <typename Rng>
GatLayerParams make_gat_layer(std::size_t in_width, std::size_t head_width, std::size_t heads, HeadMerge merge,
                              double negative_slope, Rng& rng) {
    if (heads == 0 || in_width == 0 || head_width == 0) throw InvalidInput("make_gat_layer: zero-sized layer");
    GatLayerParams p;
    p.head_merge = merge;
    p.negative_slope = negative_slope;
    auto uniform = [&](Shape shape, double fan_in, double fan_out) {
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-limit, limit);
        std::vector<double> v(numel(shape));
        for (auto& x : v) x = dist(rng);
        return Tensor(std::move(shape), std::move(v), true);
    };
    for (std::size_t h = 0; h < heads; ++h) {
        p.weights.push_back(uniform({in_width, head_width}, double(in_width), double(head_width)));
        p.attention.push_back(uniform({2 * head_width}, double(2 * head_width), 1.0));
    }
    return p;
}

/// Attention coefficients of one head, one per edge of `graph`, normalised over
/// each destination node's in-neighbourhood.
inline Tensor gat_attention(const Tensor& z, const Tensor& attention, const LevelGraph& graph,
                            double negative_slope) {
    auto e = leaky_relu(edge_scores(z, attention, graph.src, graph.dst), negative_slope);
    return softmax_over_segments(e, graph.dst);
}

/// h'_i = act( Σ_{j ∈ Nei(i)} α_ij z_j ) with z = h W, per head, heads merged by
/// concatenation or averaging. When `attention_out` is given it receives each
/// head's edge coefficients.
inline Tensor gat_forward(const Tensor& features, const LevelGraph& graph, const GatLayerParams& params,
                          Activation activation, std::vector<Tensor>* attention_out = nullptr) {
    if (features.rank() != 2 || features.dim(0) != graph.num_nodes) {
        throw DimensionError("gat_forward: features " + shape_str(features.shape()) + " for a graph of " +
                             std::to_string(graph.num_nodes) + " nodes");
    }
    if (features.dim(1) != params.in_width()) {
        throw DimensionError("gat_forward: features " + shape_str(features.shape()) + " vs weight " +
                             shape_str(params.weights.front().shape()));
    }
    std::vector<Tensor> heads;
    heads.reserve(params.num_heads());
    if (attention_out) attention_out->clear();
    for (std::size_t h = 0; h < params.num_heads(); ++h) {
        auto z = matmul(features, params.weights[h]);
        auto alpha = gat_attention(z, params.attention[h], graph, params.negative_slope);
        if (attention_out) attention_out->push_back(alpha);
        heads.push_back(edge_aggregate(alpha, z, graph.src, graph.dst, graph.num_nodes));
    }
    Tensor merged;
    if (heads.size() == 1) {
        merged = heads.front();
    } else if (params.head_merge == HeadMerge::concat) {
        merged = concat_cols(heads);
    } else {
        merged = mean_of(heads);
    }
    return activation == Activation::elu ? elu(merged) : merged;
}

/// Stack of GAT layers: hidden layers concatenate heads and apply ELU; the last
/// layer averages heads and applies no activation. Each layer's input passes
/// through dropout.
class GatStack {
   public:
    GatStack() = default;

    template <typename Rng>
    GatStack(std::size_t in_width, std::size_t head_width, std::size_t layers, std::size_t heads,
             double negative_slope, Rng& rng) {
        if (layers == 0) throw InvalidInput("GatStack: need at least one layer");
        std::size_t width = in_width;
        for (std::size_t l = 0; l < layers; ++l) {
            const bool last = l + 1 == layers;
            layers_.push_back(make_gat_layer(width, head_width, heads, last ? HeadMerge::mean : HeadMerge::concat,
                                             negative_slope, rng));
            width = layers_.back().out_width();
        }
    }

    template <typename Rng>
    Tensor forward(Tensor x, const LevelGraph& graph, double dropout_rate, bool training, Rng& rng) const {
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            x = dropout(x, dropout_rate, training, rng);
            x = gat_forward(x, graph, layers_[l], l + 1 == layers_.size() ? Activation::none : Activation::elu);
        }
        return x;
    }

    std::vector<GatLayerParams>& layers() { return layers_; }
    const std::vector<GatLayerParams>& layers() const { return layers_; }
    std::size_t out_width() const { return layers_.back().out_width(); }

   private:
    std::vector<GatLayerParams> layers_;
};

}  // namespace hiegat
