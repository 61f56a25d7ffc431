#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hiegat/tensor.hpp"

namespace hiegat {

namespace detail {

// Gradient buffer of parent `i`, or nullptr when that parent takes no gradient.
inline double* parent_grad(Node& self, std::size_t i) {
    Node* p = self.parents[i].get();
    if (!p->requires_grad) return nullptr;
    p->ensure_grad();
    return p->grad.data();
}

inline const std::vector<double>& parent_value(const Node& self, std::size_t i) {
    return *self.parents[i]->value;
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + " tensor, got " +
                             shape_str(t.shape()));
    }
}

}  // namespace detail

/// [m x k] * [k x n] -> [m x n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(m * n);
    detail::MapMat(out.data(), m, n).noalias() = detail::ConstMapMat(a.data().data(), m, k) *
                                                 detail::ConstMapMat(b.data().data(), k, n);
    return Tensor::from_op({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
        detail::ConstMapMat g(self.grad.data(), m, n);
        if (double* ga = detail::parent_grad(self, 0)) {
            detail::MapMat(ga, m, k).noalias() += g * detail::ConstMapMat(detail::parent_value(self, 1).data(), k, n).transpose();
        }
        if (double* gb = detail::parent_grad(self, 1)) {
            detail::MapMat(gb, k, n).noalias() += detail::ConstMapMat(detail::parent_value(self, 0).data(), m, k).transpose() * g;
        }
    });
}

/// Elementwise sum of two same-shape tensors.
inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return Tensor::from_op(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            if (double* g = detail::parent_grad(self, p)) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
            }
        }
    });
}

/// Adds a length-n bias to every row of an [m x n] matrix.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
    detail::require_rank(x, 2, "add_bias");
    if (bias.size() != x.dim(1)) {
        throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match " + shape_str(x.shape()));
    }
    const auto m = x.dim(0), n = x.dim(1);
    std::vector<double> out(x.data().begin(), x.data().end());
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) out[r * n + c] += bias[c];
    return Tensor::from_op(x.shape(), std::move(out), {x, bias}, [m, n](detail::Node& self) {
        if (double* gx = detail::parent_grad(self, 0)) {
            for (std::size_t i = 0; i < m * n; ++i) gx[i] += self.grad[i];
        }
        if (double* gb = detail::parent_grad(self, 1)) {
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t c = 0; c < n; ++c) gb[c] += self.grad[r * n + c];
        }
    });
}

inline Tensor scale(const Tensor& x, double factor) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * x[i];
    return Tensor::from_op(x.shape(), std::move(out), {x}, [factor](detail::Node& self) {
        if (double* g = detail::parent_grad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += factor * self.grad[i];
        }
    });
}

/// Sum of all entries as a scalar.
inline Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return Tensor::from_op({1}, {s}, {x}, [](detail::Node& self) {
        if (double* g = detail::parent_grad(self, 0)) {
            const double up = self.grad[0];
            const auto n = self.parents[0]->value->size();
            for (std::size_t i = 0; i < n; ++i) g[i] += up;
        }
    });
}

/// Same values viewed under a new shape with an equal element count.
inline Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.size()) {
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    return Tensor::from_op(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()), {x},
                           [](detail::Node& self) {
                               if (double* g = detail::parent_grad(self, 0)) {
                                   for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
                               }
                           });
}

inline Tensor leaky_relu(const Tensor& x, double negative_slope) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] >= 0.0 ? x[i] : negative_slope * x[i];
    return Tensor::from_op(x.shape(), std::move(out), {x}, [negative_slope](detail::Node& self) {
        if (double* g = detail::parent_grad(self, 0)) {
            const auto& in = detail::parent_value(self, 0);
            for (std::size_t i = 0; i < in.size(); ++i) g[i] += (in[i] >= 0.0 ? 1.0 : negative_slope) * self.grad[i];
        }
    });
}

inline Tensor elu(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] >= 0.0 ? x[i] : std::expm1(x[i]);
    return Tensor::from_op(x.shape(), std::move(out), {x}, [](detail::Node& self) {
        if (double* g = detail::parent_grad(self, 0)) {
            const auto& in = detail::parent_value(self, 0);
            const auto& y = *self.value;
            // d/dx (e^x - 1) = y + 1 on the negative side
            for (std::size_t i = 0; i < in.size(); ++i) g[i] += (in[i] >= 0.0 ? 1.0 : y[i] + 1.0) * self.grad[i];
        }
    });
}

/// Softmax computed independently inside each segment of a flat score vector.
/// `segments[e]` names the segment of entry e; ids must cover [0, S) with every
/// segment non-empty.
inline Tensor softmax_over_segments(const Tensor& scores, std::span<const std::size_t> segments) {
    if (scores.size() == 0 || segments.empty()) throw InvalidInput("softmax_over_segments: empty segment set");
    if (segments.size() != scores.size()) {
        throw DimensionError("softmax_over_segments: " + std::to_string(segments.size()) + " segment ids for scores " +
                             shape_str(scores.shape()));
    }
    const std::size_t num_segments = *std::max_element(segments.begin(), segments.end()) + 1;
    std::vector<double> seg_max(num_segments, -std::numeric_limits<double>::infinity());
    std::vector<std::size_t> seg_count(num_segments, 0);
    for (std::size_t e = 0; e < segments.size(); ++e) {
        seg_max[segments[e]] = std::max(seg_max[segments[e]], scores[e]);
        ++seg_count[segments[e]];
    }
    for (std::size_t s = 0; s < num_segments; ++s) {
        if (seg_count[s] == 0) throw InvalidInput("softmax_over_segments: segment " + std::to_string(s) + " is empty");
    }
    std::vector<double> out(scores.size());
    std::vector<double> seg_sum(num_segments, 0.0);
    for (std::size_t e = 0; e < out.size(); ++e) {
        out[e] = std::exp(scores[e] - seg_max[segments[e]]);
        seg_sum[segments[e]] += out[e];
    }
    for (std::size_t e = 0; e < out.size(); ++e) out[e] /= seg_sum[segments[e]];
    std::vector<std::size_t> seg(segments.begin(), segments.end());
    return Tensor::from_op(scores.shape(), std::move(out), {scores},
                           [seg = std::move(seg), num_segments](detail::Node& self) {
                               double* g = detail::parent_grad(self, 0);
                               if (!g) return;
                               const auto& y = *self.value;
                               std::vector<double> dot(num_segments, 0.0);
                               for (std::size_t e = 0; e < y.size(); ++e) dot[seg[e]] += self.grad[e] * y[e];
                               for (std::size_t e = 0; e < y.size(); ++e) g[e] += y[e] * (self.grad[e] - dot[seg[e]]);
                           });
}

/// Log-softmax over the last axis (each row of a matrix, or a whole vector).
inline Tensor log_softmax(const Tensor& logits) {
    if (logits.size() == 0) throw InvalidInput("log_softmax: empty input");
    const std::size_t width = logits.shape().back();
    const std::size_t rows = logits.size() / width;
    std::vector<double> out(logits.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = logits.data().data() + r * width;
        const double mx = *std::max_element(x, x + width);
        double s = 0.0;
        for (std::size_t c = 0; c < width; ++c) s += std::exp(x[c] - mx);
        const double lse = mx + std::log(s);
        for (std::size_t c = 0; c < width; ++c) out[r * width + c] = x[c] - lse;
    }
    return Tensor::from_op(logits.shape(), std::move(out), {logits}, [rows, width](detail::Node& self) {
        double* g = detail::parent_grad(self, 0);
        if (!g) return;
        const auto& y = *self.value;
        for (std::size_t r = 0; r < rows; ++r) {
            double gs = 0.0;
            for (std::size_t c = 0; c < width; ++c) gs += self.grad[r * width + c];
            for (std::size_t c = 0; c < width; ++c) {
                const auto i = r * width + c;
                g[i] += self.grad[i] - std::exp(y[i]) * gs;
            }
        }
    });
}

/// Inverted dropout: survivors are scaled by 1/(1-rate) so evaluation is identity.
template <typename Rng>
Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng) {
    if (!(rate >= 0.0) || rate >= 1.0) throw InvalidInput("dropout: rate must be in [0, 1), got " + std::to_string(rate));
    if (!training || rate == 0.0) return x;
    std::bernoulli_distribution keep(1.0 - rate);
    const double inv = 1.0 / (1.0 - rate);
    std::vector<double> mask(x.size());
    for (auto& m : mask) m = keep(rng) ? inv : 0.0;
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * mask[i];
    return Tensor::from_op(x.shape(), std::move(out), {x}, [mask = std::move(mask)](detail::Node& self) {
        if (double* g = detail::parent_grad(self, 0)) {
            for (std::size_t i = 0; i < mask.size(); ++i) g[i] += mask[i] * self.grad[i];
        }
    });
}

/// Rows `indices` of an [N x d] table, in order; indices may repeat.
inline Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices) {
    detail::require_rank(table, 2, "gather_rows");
    const auto rows = table.dim(0), d = table.dim(1);
    std::vector<double> out(indices.size() * d);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= rows) {
            throw InvalidInput("gather_rows: index " + std::to_string(indices[i]) + " out of range for " +
                               shape_str(table.shape()));
        }
        std::copy_n(table.data().data() + indices[i] * d, d, out.data() + i * d);
    }
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    Shape shape{idx.size(), d};
    return Tensor::from_op(std::move(shape), std::move(out), {table}, [idx = std::move(idx), d](detail::Node& self) {
        if (double* g = detail::parent_grad(self, 0)) {
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (std::size_t c = 0; c < d; ++c) g[idx[i] * d + c] += self.grad[i * d + c];
        }
    });
}

/// Stacks equal-length vectors as the rows of a matrix.
inline Tensor stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) throw InvalidInput("stack_rows: no rows");
    const auto d = rows.front().size();
    std::vector<double> out;
    out.reserve(rows.size() * d);
    for (const auto& r : rows) {
        if (r.size() != d) {
            throw DimensionError("stack_rows: row " + shape_str(r.shape()) + " vs " + shape_str(rows.front().shape()));
        }
        out.insert(out.end(), r.data().begin(), r.data().end());
    }
    return Tensor::from_op({rows.size(), d}, std::move(out), rows, [d](detail::Node& self) {
        for (std::size_t p = 0; p < self.parents.size(); ++p) {
            if (double* g = detail::parent_grad(self, p)) {
                for (std::size_t c = 0; c < d; ++c) g[c] += self.grad[p * d + c];
            }
        }
    });
}

/// Column-wise concatenation of matrices with equal row counts.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw InvalidInput("concat_cols: no inputs");
    const auto rows = parts.front().dim(0);
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        detail::require_rank(p, 2, "concat_cols");
        if (p.dim(0) != rows) {
            throw DimensionError("concat_cols: row mismatch " + shape_str(p.shape()) + " vs " +
                                 shape_str(parts.front().shape()));
        }
        widths.push_back(p.dim(1));
        total += p.dim(1);
    }
    std::vector<double> out(rows * total);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(parts[k].data().data() + r * widths[k], widths[k], out.data() + r * total + offset);
        offset += widths[k];
    }
    return Tensor::from_op({rows, total}, std::move(out), parts, [rows, total, widths](detail::Node& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            if (double* g = detail::parent_grad(self, k)) {
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < widths[k]; ++c) g[r * widths[k] + c] += self.grad[r * total + off + c];
            }
            off += widths[k];
        }
    });
}

/// Elementwise mean of same-shape tensors.
inline Tensor mean_of(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw InvalidInput("mean_of: no inputs");
    const auto& shape = parts.front().shape();
    std::vector<double> out(parts.front().size(), 0.0);
    for (const auto& p : parts) {
        if (p.shape() != shape) {
            throw DimensionError("mean_of: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(shape));
        }
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += p[i];
    }
    const double inv = 1.0 / static_cast<double>(parts.size());
    for (auto& v : out) v *= inv;
    return Tensor::from_op(shape, std::move(out), parts, [inv](detail::Node& self) {
        for (std::size_t p = 0; p < self.parents.size(); ++p) {
            if (double* g = detail::parent_grad(self, p)) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += inv * self.grad[i];
            }
        }
    });
}

/// Weighted sum Σ w_k x_k of same-shape tensors.
inline Tensor weighted_sum(const std::vector<Tensor>& parts, const std::vector<double>& weights) {
    if (parts.empty() || parts.size() != weights.size()) throw InvalidInput("weighted_sum: parts/weights mismatch");
    const auto& shape = parts.front().shape();
    std::vector<double> out(parts.front().size(), 0.0);
    for (std::size_t k = 0; k < parts.size(); ++k) {
        if (parts[k].shape() != shape) {
            throw DimensionError("weighted_sum: shape mismatch " + shape_str(parts[k].shape()) + " vs " +
                                 shape_str(shape));
        }
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += weights[k] * parts[k][i];
    }
    return Tensor::from_op(shape, std::move(out), parts, [weights](detail::Node& self) {
        for (std::size_t p = 0; p < self.parents.size(); ++p) {
            if (double* g = detail::parent_grad(self, p)) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += weights[p] * self.grad[i];
            }
        }
    });
}

/// Scores aᵀ[z_dst ‖ z_src] for every directed edge src -> dst.
/// `z` is [V x d]; `a` holds 2d entries, the first half applied to the
/// destination (attending) node and the second half to the source.
inline Tensor edge_scores(const Tensor& z, const Tensor& a, std::span<const std::size_t> src,
                          std::span<const std::size_t> dst) {
    detail::require_rank(z, 2, "edge_scores");
    const auto v = z.dim(0), d = z.dim(1);
    if (a.size() != 2 * d) {
        throw DimensionError("edge_scores: attention vector " + shape_str(a.shape()) + " does not match features " +
                             shape_str(z.shape()));
    }
    if (src.size() != dst.size()) throw InvalidInput("edge_scores: src/dst length mismatch");
    // Per-node partial scores, then one add per edge.
    std::vector<double> left(v, 0.0), right(v, 0.0);
    for (std::size_t i = 0; i < v; ++i) {
        for (std::size_t c = 0; c < d; ++c) {
            left[i] += a[c] * z.at(i, c);
            right[i] += a[d + c] * z.at(i, c);
        }
    }
    std::vector<double> out(src.size());
    for (std::size_t e = 0; e < src.size(); ++e) {
        if (src[e] >= v || dst[e] >= v) throw InvalidInput("edge_scores: edge endpoint out of range");
        out[e] = left[dst[e]] + right[src[e]];
    }
    std::vector<std::size_t> s(src.begin(), src.end()), t(dst.begin(), dst.end());
    Shape shape{out.size()};
    return Tensor::from_op(std::move(shape), std::move(out), {z, a},
                           [s = std::move(s), t = std::move(t), v, d](detail::Node& self) {
                               std::vector<double> g_left(v, 0.0), g_right(v, 0.0);
                               for (std::size_t e = 0; e < s.size(); ++e) {
                                   g_left[t[e]] += self.grad[e];
                                   g_right[s[e]] += self.grad[e];
                               }
                               const auto& zv = detail::parent_value(self, 0);
                               const auto& av = detail::parent_value(self, 1);
                               if (double* gz = detail::parent_grad(self, 0)) {
                                   for (std::size_t i = 0; i < v; ++i)
                                       for (std::size_t c = 0; c < d; ++c)
                                           gz[i * d + c] += g_left[i] * av[c] + g_right[i] * av[d + c];
                               }
                               if (double* ga = detail::parent_grad(self, 1)) {
                                   for (std::size_t i = 0; i < v; ++i)
                                       for (std::size_t c = 0; c < d; ++c) {
                                           ga[c] += g_left[i] * zv[i * d + c];
                                           ga[d + c] += g_right[i] * zv[i * d + c];
                                       }
                               }
                           });
}

/// out[dst] += weight[e] * z[src] for every edge e; result is [num_nodes x d].
inline Tensor edge_aggregate(const Tensor& weights, const Tensor& z, std::span<const std::size_t> src,
                             std::span<const std::size_t> dst, std::size_t num_nodes) {
    detail::require_rank(z, 2, "edge_aggregate");
    if (weights.size() != src.size() || src.size() != dst.size()) {
        throw DimensionError("edge_aggregate: " + std::to_string(weights.size()) + " weights for " +
                             std::to_string(src.size()) + " edges");
    }
    const auto v = z.dim(0), d = z.dim(1);
    std::vector<double> out(num_nodes * d, 0.0);
    for (std::size_t e = 0; e < src.size(); ++e) {
        if (src[e] >= v || dst[e] >= num_nodes) throw InvalidInput("edge_aggregate: edge endpoint out of range");
        const double w = weights[e];
        for (std::size_t c = 0; c < d; ++c) out[dst[e] * d + c] += w * z.at(src[e], c);
    }
    std::vector<std::size_t> s(src.begin(), src.end()), t(dst.begin(), dst.end());
    return Tensor::from_op({num_nodes, d}, std::move(out), {weights, z},
                           [s = std::move(s), t = std::move(t), d](detail::Node& self) {
                               const auto& wv = detail::parent_value(self, 0);
                               const auto& zv = detail::parent_value(self, 1);
                               double* gw = detail::parent_grad(self, 0);
                               double* gz = detail::parent_grad(self, 1);
                               for (std::size_t e = 0; e < s.size(); ++e) {
                                   const double* up = self.grad.data() + t[e] * d;
                                   if (gw) {
                                       double acc = 0.0;
                                       for (std::size_t c = 0; c < d; ++c) acc += up[c] * zv[s[e] * d + c];
                                       gw[e] += acc;
                                   }
                                   if (gz) {
                                       for (std::size_t c = 0; c < d; ++c) gz[s[e] * d + c] += wv[e] * up[c];
                                   }
                               }
                           });
}

enum class ReadoutMode { mean, max, sum };

/// Column-wise reduction of [V x d] node features to a length-d graph vector.
inline Tensor readout(const Tensor& nodes, ReadoutMode mode) {
    detail::require_rank(nodes, 2, "readout");
    const auto v = nodes.dim(0), d = nodes.dim(1);
    if (v == 0) throw InvalidInput("readout: empty graph");
    std::vector<double> out(d, mode == ReadoutMode::max ? -std::numeric_limits<double>::infinity() : 0.0);
    std::vector<std::size_t> argmax(mode == ReadoutMode::max ? d : 0, 0);
    const double factor = mode == ReadoutMode::mean ? 1.0 / static_cast<double>(v) : 1.0;
    if (mode == ReadoutMode::mean) {
        // first row plus the mean deviation from it: exact when all rows agree
        for (std::size_t c = 0; c < d; ++c) {
            const double base = nodes.at(0, c);
            double dev = 0.0;
            for (std::size_t i = 1; i < v; ++i) dev += nodes.at(i, c) - base;
            out[c] = base + dev * factor;
        }
    } else {
        for (std::size_t i = 0; i < v; ++i) {
            for (std::size_t c = 0; c < d; ++c) {
                const double x = nodes.at(i, c);
                if (mode == ReadoutMode::max) {
                    if (x > out[c]) {
                        out[c] = x;
                        argmax[c] = i;
                    }
                } else {
                    out[c] += x;
                }
            }
        }
    }
    return Tensor::from_op({d}, std::move(out), {nodes},
                           [mode, v, d, factor, argmax = std::move(argmax)](detail::Node& self) {
                               double* g = detail::parent_grad(self, 0);
                               if (!g) return;
                               if (mode == ReadoutMode::max) {
                                   for (std::size_t c = 0; c < d; ++c) g[argmax[c] * d + c] += self.grad[c];
                                   return;
                               }
                               for (std::size_t i = 0; i < v; ++i)
                                   for (std::size_t c = 0; c < d; ++c) g[i * d + c] += factor * self.grad[c];
                           });
}

/// Scalar x[index] of a flat tensor.
inline Tensor pick(const Tensor& x, std::size_t index) {
    if (index >= x.size()) throw InvalidInput("pick: index " + std::to_string(index) + " out of range");
    return Tensor::from_op({1}, {x[index]}, {x}, [index](detail::Node& self) {
        if (double* g = detail::parent_grad(self, 0)) g[index] += self.grad[0];
    });
}

}  // namespace hiegat
