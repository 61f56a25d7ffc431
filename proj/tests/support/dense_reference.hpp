#pragma once

// Straight dense-matrix evaluation of the model, written independently of the
// tensor engine: plain loops over an N x N adjacency built from |i - j| <= w.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "hiegat/model.hpp"

namespace hiegat::testing {

using Mat = std::vector<std::vector<double>>;
using Vec = std::vector<double>;

inline Mat to_mat(const Tensor& t) {
    Mat m(t.dim(0), Vec(t.dim(1)));
    for (std::size_t r = 0; r < t.dim(0); ++r)
        for (std::size_t c = 0; c < t.dim(1); ++c) m[r][c] = t.at(r, c);
    return m;
}

inline Vec to_vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline std::vector<std::vector<bool>> window_adjacency(std::size_t n, std::size_t window) {
    std::vector<std::vector<bool>> a(n, std::vector<bool>(n, false));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const auto d = i > j ? i - j : j - i;
            a[i][j] = d <= window;
        }
    return a;
}

inline Mat mat_mul(const Mat& a, const Mat& b) {
    Mat out(a.size(), Vec(b.front().size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < b.size(); ++k)
            for (std::size_t j = 0; j < b.front().size(); ++j) out[i][j] += a[i][k] * b[k][j];
    return out;
}

struct DenseHead {
    Mat w;
    Vec a;
};

struct DenseLayer {
    std::vector<DenseHead> heads;
    bool concat = false;
};

inline DenseLayer dense_layer(const GatLayerParams& p) {
    DenseLayer d;
    d.concat = p.head_merge == HeadMerge::concat;
    for (std::size_t h = 0; h < p.num_heads(); ++h) d.heads.push_back({to_mat(p.weights[h]), to_vec(p.attention[h])});
    return d;
}

/// h'_i = act(Σ_j α_ij z_j), α_ij = softmax_j(LeakyReLU(aᵀ[z_i ‖ z_j])) over A[i][j].
inline Mat dense_gat(const Mat& h, const std::vector<std::vector<bool>>& adj, const DenseLayer& layer, double slope,
                     bool elu_activation) {
    const auto n = h.size();
    std::vector<Mat> outs;
    for (const auto& head : layer.heads) {
        const Mat z = mat_mul(h, head.w);
        const auto d = z.front().size();
        Mat out(n, Vec(d, 0.0));
        for (std::size_t i = 0; i < n; ++i) {
            Vec e(n, 0.0);
            double mx = -1e300;
            for (std::size_t j = 0; j < n; ++j) {
                if (!adj[i][j]) continue;
                double s = 0.0;
                for (std::size_t c = 0; c < d; ++c) s += head.a[c] * z[i][c] + head.a[d + c] * z[j][c];
                e[j] = s >= 0 ? s : slope * s;
                mx = std::max(mx, e[j]);
            }
            double denom = 0.0;
            for (std::size_t j = 0; j < n; ++j)
                if (adj[i][j]) denom += std::exp(e[j] - mx);
            for (std::size_t j = 0; j < n; ++j) {
                if (!adj[i][j]) continue;
                const double alpha = std::exp(e[j] - mx) / denom;
                for (std::size_t c = 0; c < d; ++c) out[i][c] += alpha * z[j][c];
            }
        }
        outs.push_back(std::move(out));
    }
    Mat merged;
    if (layer.concat) {
        merged.assign(n, Vec{});
        for (const auto& o : outs)
            for (std::size_t i = 0; i < n; ++i) merged[i].insert(merged[i].end(), o[i].begin(), o[i].end());
    } else {
        merged.assign(n, Vec(outs.front().front().size(), 0.0));
        for (const auto& o : outs)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t c = 0; c < o[i].size(); ++c) merged[i][c] += o[i][c] / double(outs.size());
    }
    if (elu_activation) {
        for (auto& row : merged)
            for (auto& x : row) x = x >= 0 ? x : std::exp(x) - 1.0;
    }
    return merged;
}

inline Mat dense_stack(Mat h, const std::vector<std::vector<bool>>& adj, const GatStack& stack, double slope) {
    for (std::size_t l = 0; l < stack.layers().size(); ++l) {
        h = dense_gat(h, adj, dense_layer(stack.layers()[l]), slope, l + 1 < stack.layers().size());
    }
    return h;
}

inline Vec dense_mean_rows(const Mat& m) {
    Vec out(m.front().size(), 0.0);
    for (const auto& r : m)
        for (std::size_t c = 0; c < r.size(); ++c) out[c] += r[c] / double(m.size());
    return out;
}

inline Mat embed(const Tensor& table, const std::vector<std::size_t>& ids) {
    Mat m;
    for (auto id : ids) {
        Vec row(table.dim(1));
        for (std::size_t c = 0; c < row.size(); ++c) row[c] = table.at(id, c);
        m.push_back(row);
    }
    return m;
}

inline Vec dense_log_softmax_linear(const Vec& x, const Linear& lin) {
    const auto c = lin.bias.size();
    Vec logits(c, 0.0);
    for (std::size_t j = 0; j < c; ++j) {
        logits[j] = lin.bias[j];
        for (std::size_t i = 0; i < x.size(); ++i) logits[j] += x[i] * lin.weight.at(i, j);
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double v : logits) s += std::exp(v - mx);
    for (auto& v : logits) v = v - mx - std::log(s);
    return logits;
}

struct DenseSample {
    Vec r_word;
    std::vector<Vec> sentence_vecs;
    Vec r_sen;
    Vec r_doc;
    Vec y_hat;
};

/// Whole-model evaluation (mean readouts, eval mode) with λ computed from k.
inline DenseSample dense_forward(const HieGnnModel& model, const DocumentRecord& doc) {
    const auto& cfg = model.config();
    DenseSample s;
    for (const auto& span : doc.sentence_spans) {
        std::vector<std::size_t> ids(doc.tokens.begin() + span.begin, doc.tokens.begin() + span.end);
        const auto h = dense_stack(embed(model.m1(), ids), window_adjacency(ids.size(), cfg.word.window),
                                   model.word_gat(), cfg.negative_slope);
        s.sentence_vecs.push_back(dense_mean_rows(h));
    }
    s.r_word = dense_mean_rows(s.sentence_vecs);
    const auto k = s.sentence_vecs.size();
    s.r_sen = dense_mean_rows(
        dense_stack(s.sentence_vecs, window_adjacency(k, cfg.sen.window), model.sen_gat(), cfg.negative_slope));
    s.r_doc = dense_mean_rows(dense_stack(embed(model.m2(), doc.tokens), window_adjacency(doc.tokens.size(), cfg.doc.window),
                                          model.doc_gat(), cfg.negative_slope));
    const double ld = 1.0 / (std::log(double(k)) + 1.0);
    const double ls = 2.0 / 3.0 * (1.0 - ld), lw = 1.0 / 3.0 * (1.0 - ld);
    const auto pd = dense_log_softmax_linear(s.r_doc, model.proj_doc());
    const auto ps = dense_log_softmax_linear(s.r_sen, model.proj_sen());
    const auto pw = dense_log_softmax_linear(s.r_word, model.proj_word());
    s.y_hat.resize(pd.size());
    for (std::size_t c = 0; c < pd.size(); ++c) s.y_hat[c] = ld * pd[c] + ls * ps[c] + lw * pw[c];
    return s;
}

}  // namespace hiegat::testing
