#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "hiegat/graph_builder.hpp"
#include "hiegat/model.hpp"
#include "hiegat/ops.hpp"
#include "hiegat/tensor.hpp"
#include "hiegat/text_pipeline.hpp"

namespace hiegat {

/// −(1/B) Σ_i log_probs[i, label_i]. Inputs are already log-probabilities.
inline Tensor cross_entropy_loss(const Tensor& log_probs, std::span<const std::size_t> labels) {
    if (log_probs.rank() != 2 || log_probs.dim(0) != labels.size()) {
        throw DimensionError("cross_entropy_loss: log_probs " + shape_str(log_probs.shape()) + " for " +
                             std::to_string(labels.size()) + " labels");
    }
    const auto b = log_probs.dim(0), c = log_probs.dim(1);
    if (b == 0) throw InvalidInput("cross_entropy_loss: empty batch");
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        if (labels[i] >= c) {
            throw InvalidInput("cross_entropy_loss: label " + std::to_string(labels[i]) + " outside [0, " +
                               std::to_string(c) + ")");
        }
        total += log_probs[i * c + labels[i]];
    }
    std::vector<std::size_t> lab(labels.begin(), labels.end());
    const double inv = 1.0 / static_cast<double>(b);
    return Tensor::from_op({1}, {-total * inv}, {log_probs}, [lab = std::move(lab), c, inv](detail::Node& self) {
        if (double* g = detail::parent_grad(self, 0)) {
            for (std::size_t i = 0; i < lab.size(); ++i) g[i * c + lab[i]] -= inv * self.grad[0];
        }
    });
}

enum class AblationRow { full, d_only, s_only, w_only, no_d, no_s, no_w };

inline const std::vector<AblationRow>& all_ablation_rows() {
    static const std::vector<AblationRow> rows = {AblationRow::d_only, AblationRow::s_only, AblationRow::w_only,
                                                  AblationRow::no_d,   AblationRow::no_s,   AblationRow::no_w,
                                                  AblationRow::full};
    return rows;
}

inline std::string to_string(AblationRow r) {
    switch (r) {
        case AblationRow::full: return "full";
        case AblationRow::d_only: return "d_only";
        case AblationRow::s_only: return "s_only";
        case AblationRow::w_only: return "w_only";
        case AblationRow::no_d: return "no_d";
        case AblationRow::no_s: return "no_s";
        case AblationRow::no_w: return "no_w";
    }
    return "?";
}

inline std::optional<AblationRow> parse_ablation_row(const std::string& s) {
    for (auto r : all_ablation_rows()) {
        if (to_string(r) == s) return r;
    }
    return std::nullopt;
}

/// Row label in the published table's notation.
inline std::string ablation_label(AblationRow r) {
    switch (r) {
        case AblationRow::d_only: return "lambda_d=1, lambda_s,w=0";
        case AblationRow::s_only: return "lambda_s=1, lambda_d,w=0";
        case AblationRow::w_only: return "lambda_w=1, lambda_d,s=0";
        case AblationRow::no_d: return "lambda_d=0, lambda_s,w!=0";
        case AblationRow::no_s: return "lambda_s=0, lambda_d,w!=0";
        case AblationRow::no_w: return "lambda_w=0, lambda_d,s!=0";
        case AblationRow::full: return "HieGAT (lambda_d,s,w!=0)";
    }
    return "?";
}

/// Level weights for an ablation row at sentence count x_s. Two-level rows keep
/// the surviving schedule values renormalised to sum to one.
inline LambdaWeights ablation_lambda(AblationRow row, double x_s) {
    auto w = compute_lambda(x_s);
    switch (row) {
        case AblationRow::full: return w;
        case AblationRow::d_only: return {1.0, 0.0, 0.0, x_s};
        case AblationRow::s_only: return {0.0, 1.0, 0.0, x_s};
        case AblationRow::w_only: return {0.0, 0.0, 1.0, x_s};
        case AblationRow::no_d:
            // λ_s : λ_w is 2 : 1 for every x_s, including x_s = 1 where both vanish.
            return {0.0, 2.0 / 3.0, 1.0 / 3.0, x_s};
        case AblationRow::no_s: {
            const double z = w.lambda_d + w.lambda_w;
            return {w.lambda_d / z, 0.0, w.lambda_w / z, x_s};
        }
        case AblationRow::no_w: {
            const double z = w.lambda_d + w.lambda_s;
            return {w.lambda_d / z, w.lambda_s / z, 0.0, x_s};
        }
    }
    return w;
}

/// How level weights are chosen for a sample.
struct LambdaSchedule {
    LambdaPolicy policy = LambdaPolicy::per_sample;
    AblationRow row = AblationRow::full;
    std::optional<std::array<double, 3>> fixed;  // (λ_d, λ_s, λ_w)

    LambdaWeights weights(double x_s) const {
        if (fixed) return {(*fixed)[0], (*fixed)[1], (*fixed)[2], x_s};
        return ablation_lambda(row, x_s);
    }
};

enum class OptimizerKind { adam, sgd };

struct TrainConfig {
    std::size_t batch_size = 64;
    double learning_rate = 1e-3;
    std::size_t max_epochs = 200;
    std::size_t patience = 10;
    double validation_fraction = 0.1;
    std::optional<std::array<double, 3>> lambda_override;
    AblationRow ablation_row = AblationRow::full;
    OptimizerKind optimizer = OptimizerKind::adam;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double clip_norm = 5.0;
    std::size_t grad_lanes = 4;
    std::size_t workers = 0;  // 0: hardware concurrency, capped at grad_lanes
    std::uint64_t seed = 1;
    bool log_progress = false;

    void validate() const {
        if (batch_size == 0) throw InvalidInput("train config: batch_size must be >= 1");
        if (!(validation_fraction > 0.0 && validation_fraction < 0.5)) {
            throw InvalidInput("train config: validation_fraction must be in (0, 0.5)");
        }
        if (!(learning_rate >= 0.0)) throw InvalidInput("train config: learning_rate must be >= 0");
        if (grad_lanes == 0) throw InvalidInput("train config: grad_lanes must be >= 1");
        if (lambda_override) {
            double s = 0.0;
            for (double v : *lambda_override) {
                if (!(v >= 0.0)) throw InvalidInput("train config: lambda override entries must be non-negative");
                s += v;
            }
            if (std::abs(s - 1.0) > 1e-9) throw InvalidInput("train config: lambda override must sum to 1");
        }
    }
};

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double validation_accuracy = 0.0;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_validation_accuracy = 0.0;
    double test_accuracy = 0.0;
    double wall_clock_seconds = 0.0;
    std::string stop_reason;
    std::map<std::string, std::string> config_echo;
    std::uint64_t seed = 0;

    std::string to_text() const {
        std::ostringstream os;
        os << "seed = " << seed << '\n'
           << "best_epoch = " << best_epoch << '\n'
           << std::setprecision(17) << "best_validation_accuracy = " << best_validation_accuracy << '\n'
           << "test_accuracy = " << test_accuracy << '\n'
           << std::setprecision(6) << "wall_clock_seconds = " << wall_clock_seconds << '\n'
           << "stop_reason = " << stop_reason << '\n';
        for (const auto& [k, v] : config_echo) os << "config." << k << " = " << v << '\n';
        os << "\nepoch  train_loss             val_accuracy\n";
        for (const auto& e : epochs) {
            os << std::setw(5) << e.epoch << "  " << std::setprecision(17) << std::setw(22) << std::left
               << e.train_loss << ' ' << e.validation_accuracy << std::right << '\n';
        }
        return os.str();
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["format"] = "hiegat-train-report/1";
        j["seed"] = seed;
        j["best_epoch"] = best_epoch;
        j["best_validation_accuracy"] = best_validation_accuracy;
        j["test_accuracy"] = test_accuracy;
        j["wall_clock_seconds"] = wall_clock_seconds;
        j["stop_reason"] = stop_reason;
        j["config"] = config_echo;
        auto& arr = j["epochs"] = nlohmann::json::array();
        for (const auto& e : epochs) {
            arr.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"validation_accuracy", e.validation_accuracy}});
        }
        return j;
    }
};

/// Loss became NaN or infinite; carries the report up to that point.
class TrainingDiverged : public std::runtime_error {
   public:
    TrainingDiverged(const std::string& what, TrainReport report)
        : std::runtime_error(what), report_(std::move(report)) {}
    const TrainReport& report() const { return report_; }

   private:
    TrainReport report_;
};

/// Adam, or plain SGD, over a flat list of parameter tensors.
class Optimizer {
   public:
    Optimizer(OptimizerKind kind, double lr, double beta1, double beta2, double eps)
        : kind_(kind), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(std::vector<Tensor>& params, const std::vector<std::vector<double>>& grads) {
        if (kind_ == OptimizerKind::sgd) {
            for (std::size_t p = 0; p < params.size(); ++p) {
                auto data = params[p].mutable_data();
                for (std::size_t i = 0; i < data.size(); ++i) data[i] -= lr_ * grads[p][i];
            }
            return;
        }
        if (m_.empty()) {
            for (const auto& p : params) {
                m_.emplace_back(p.size(), 0.0);
                v_.emplace_back(p.size(), 0.0);
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, double(t_));
        const double bc2 = 1.0 - std::pow(beta2_, double(t_));
        for (std::size_t p = 0; p < params.size(); ++p) {
            auto data = params[p].mutable_data();
            auto& m = m_[p];
            auto& v = v_[p];
            const auto& g = grads[p];
            for (std::size_t i = 0; i < data.size(); ++i) {
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
                data[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
            }
        }
    }

   private:
    OptimizerKind kind_;
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

/// Per-sample dropout stream derived from (seed, epoch, sample index) so results
/// do not depend on batching or worker scheduling.
inline std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t sample) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(sample),
                      static_cast<std::uint32_t>(sample >> 32), 0x68696567u};
    return std::mt19937_64(seq);
}

struct EvalOptions {
    LambdaSchedule schedule;
    std::size_t batch_size = 64;  // groups samples for the batch_mean policy
};

/// x_s for each position: the sample's own sentence count, or the mean over
/// consecutive groups of `batch_size` under the batch_mean policy.
inline std::vector<double> sentence_counts_for(const std::vector<const SampleGraphs*>& graphs, LambdaPolicy policy,
                                               std::size_t batch_size) {
    std::vector<double> xs(graphs.size());
    for (std::size_t i = 0; i < graphs.size(); ++i) xs[i] = static_cast<double>(graphs[i]->sentence_count);
    if (policy == LambdaPolicy::batch_mean) {
        for (std::size_t b = 0; b < xs.size(); b += batch_size) {
            const auto e = std::min(xs.size(), b + batch_size);
            const double mean = std::accumulate(xs.begin() + b, xs.begin() + e, 0.0) / double(e - b);
            std::fill(xs.begin() + b, xs.begin() + e, mean);
        }
    }
    return xs;
}

struct EvalResult {
    double accuracy = 0.0;
    std::vector<std::size_t> predictions;
    std::vector<std::size_t> correct_per_class;
    std::vector<std::size_t> total_per_class;
};

inline std::size_t argmax(std::span<const double> v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Accuracy of argmax ŷ against the labels, with dropout disabled.
inline EvalResult evaluate_detailed(const HieGnnModel& model, const std::vector<const DocumentRecord*>& records,
                                    const std::vector<const SampleGraphs*>& graphs, const EvalOptions& options) {
    EvalResult r;
    const auto c = model.config().class_count;
    r.correct_per_class.assign(c, 0);
    r.total_per_class.assign(c, 0);
    if (records.empty()) return r;
    const auto xs = sentence_counts_for(graphs, options.schedule.policy, options.batch_size);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto lp = model.predict_log_probs(*graphs[i], options.schedule.weights(xs[i]));
        const auto pred = argmax(lp);
        r.predictions.push_back(pred);
        const auto label = records[i]->label_id;
        if (label < c) {
            ++r.total_per_class[label];
            if (pred == label) ++r.correct_per_class[label];
        }
        if (pred == label) ++correct;
    }
    r.accuracy = static_cast<double>(correct) / static_cast<double>(records.size());
    return r;
}

/// Convenience overload that builds graphs on the fly.
inline double evaluate(const HieGnnModel& model, const std::vector<DocumentRecord>& records,
                       const EvalOptions& options = {}) {
    std::vector<SampleGraphs> graphs;
    graphs.reserve(records.size());
    std::vector<const DocumentRecord*> recs;
    for (const auto& r : records) {
        graphs.push_back(build_sample_graphs(r, model.config().windows()));
        recs.push_back(&r);
    }
    std::vector<const SampleGraphs*> gp;
    for (const auto& g : graphs) gp.push_back(&g);
    return evaluate_detailed(model, recs, gp, options).accuracy;
}

/// Stratified train/validation split of record indices.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(
    const std::vector<const DocumentRecord*>& records, double fraction, std::uint64_t seed) {
    std::map<std::size_t, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < records.size(); ++i) by_label[records[i]->label_id].push_back(i);
    std::mt19937_64 rng(seed ^ 0x76616c69ull);
    std::vector<std::size_t> train, val;
    for (auto& [label, idx] : by_label) {
        std::shuffle(idx.begin(), idx.end(), rng);
        auto n_val = static_cast<std::size_t>(std::llround(fraction * double(idx.size())));
        if (idx.size() > 1) n_val = std::clamp<std::size_t>(n_val, 1, idx.size() - 1);
        else n_val = 0;
        val.insert(val.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
        train.insert(train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
    }
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());
    return {train, val};
}

namespace detail {

// A fixed number of gradient lanes; sample at batch position p goes to lane
// p % lanes and each lane accumulates in position order. Lanes are summed in
// lane order, so the result does not depend on how many threads run them.
class GradientLanes {
   public:
    GradientLanes(const HieGnnModel& model, std::size_t lanes) {
        for (std::size_t l = 0; l < lanes; ++l) {
            lanes_.push_back(model.alias());
            lane_tensors_.emplace_back();
            lanes_.back().for_each_parameter(
                [&](const std::string&, Tensor& t) { lane_tensors_.back().push_back(t); });
            touched_.emplace_back();
        }
        for (const auto& t : lane_tensors_.front()) merged_.emplace_back(t.size(), 0.0);
        embedding_width_ = model.config().embedding_width;
    }

    std::size_t lanes() const { return lanes_.size(); }
    const HieGnnModel& lane_model(std::size_t l) const { return lanes_[l]; }

    // Embedding tables are parameters 0 (M1) and 1 (M2); only touched rows are
    // zeroed and merged.
    void note_rows(std::size_t lane, const std::vector<std::size_t>& tokens) {
        touched_[lane].insert(touched_[lane].end(), tokens.begin(), tokens.end());
    }

    void zero_lane(std::size_t lane) {
        auto& ts = lane_tensors_[lane];
        for (std::size_t p = 2; p < ts.size(); ++p) ts[p].zero_grad();
        auto& rows = touched_[lane];
        for (std::size_t p = 0; p < 2; ++p) {
            if (!ts[p].has_grad()) continue;
            auto g = ts[p].mutable_grad();
            for (auto r : rows) std::fill_n(g.begin() + r * embedding_width_, embedding_width_, 0.0);
        }
        rows.clear();
    }

    /// Sums lane gradients into the merged buffers and returns them.
    std::vector<std::vector<double>>& merge() {
        for (auto r : merged_touched_)
            for (std::size_t p = 0; p < 2; ++p) std::fill_n(merged_[p].begin() + r * embedding_width_, embedding_width_, 0.0);
        merged_touched_.clear();
        for (std::size_t p = 2; p < merged_.size(); ++p) std::fill(merged_[p].begin(), merged_[p].end(), 0.0);
        for (std::size_t l = 0; l < lanes_.size(); ++l) {
            auto rows = touched_[l];
            std::sort(rows.begin(), rows.end());
            rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
            for (std::size_t p = 0; p < merged_.size(); ++p) {
                const auto& t = lane_tensors_[l][p];
                if (!t.has_grad()) continue;
                const auto g = t.grad();
                if (p < 2) {
                    for (auto r : rows)
                        for (std::size_t c = 0; c < embedding_width_; ++c)
                            merged_[p][r * embedding_width_ + c] += g[r * embedding_width_ + c];
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) merged_[p][i] += g[i];
                }
            }
            merged_touched_.insert(merged_touched_.end(), rows.begin(), rows.end());
        }
        return merged_;
    }

   private:
    std::vector<HieGnnModel> lanes_;
    std::vector<std::vector<Tensor>> lane_tensors_;
    std::vector<std::vector<std::size_t>> touched_;
    std::vector<std::vector<double>> merged_;
    std::vector<std::size_t> merged_touched_;
    std::size_t embedding_width_ = 0;
};

inline double global_norm(const std::vector<std::vector<double>>& grads) {
    double s = 0.0;
    for (const auto& g : grads)
        for (double v : g) s += v * v;
    return std::sqrt(s);
}

}  // namespace detail

/// Loss of a batch of samples as the mean of single-sample losses, with graph
/// recording (used by tests and the line-search check).
template <typename Rng>
Tensor batch_loss(const HieGnnModel& model, const std::vector<const SampleGraphs*>& graphs,
                  const std::vector<std::size_t>& labels, const std::vector<LambdaWeights>& lambdas, bool training,
                  Rng& rng) {
    std::vector<Tensor> rows;
    for (std::size_t i = 0; i < graphs.size(); ++i) rows.push_back(model.forward(*graphs[i], lambdas[i], training, rng).log_probs);
    return cross_entropy_loss(stack_rows(rows), labels);
}

struct TrainData {
    std::vector<const DocumentRecord*> train;
    std::vector<const DocumentRecord*> test;
};

inline TrainData split_corpus(const Corpus& corpus) {
    TrainData d;
    for (const auto& r : corpus.records) (r.split == Split::train ? d.train : d.test).push_back(&r);
    return d;
}

inline std::map<std::string, std::string> echo_config(const HieGnnConfig& m, const TrainConfig& t) {
    auto num = [](double v) {
        std::ostringstream os;
        os << std::setprecision(17) << v;
        return os.str();
    };
    std::map<std::string, std::string> e;
    e["model.embedding_width"] = std::to_string(m.embedding_width);
    e["model.vocab_size"] = std::to_string(m.vocab_size);
    e["model.class_count"] = std::to_string(m.class_count);
    e["model.word"] = std::to_string(m.word.layers) + "x" + std::to_string(m.word.heads) + "/w" + std::to_string(m.word.window);
    e["model.sen"] = std::to_string(m.sen.layers) + "x" + std::to_string(m.sen.heads) + "/w" + std::to_string(m.sen.window);
    e["model.doc"] = std::to_string(m.doc.layers) + "x" + std::to_string(m.doc.heads) + "/w" + std::to_string(m.doc.window);
    e["model.readout"] = to_string(m.readout);
    e["model.dropout"] = num(m.dropout);
    e["model.negative_slope"] = num(m.negative_slope);
    e["model.lambda_policy"] = to_string(m.lambda_policy);
    e["model.seed"] = std::to_string(m.seed);
    e["train.batch_size"] = std::to_string(t.batch_size);
    e["train.learning_rate"] = num(t.learning_rate);
    e["train.max_epochs"] = std::to_string(t.max_epochs);
    e["train.patience"] = std::to_string(t.patience);
    e["train.validation_fraction"] = num(t.validation_fraction);
    e["train.optimizer"] = to_string(t.optimizer);
    e["train.clip_norm"] = num(t.clip_norm);
    e["train.ablation_row"] = to_string(t.ablation_row);
    e["train.grad_lanes"] = std::to_string(t.grad_lanes);
    if (t.lambda_override) {
        const auto& l = *t.lambda_override;
        e["train.lambda"] = num(l[0]) + "," + num(l[1]) + "," + num(l[2]);
    }
    e["train.seed"] = std::to_string(t.seed);
    return e;
}

namespace detail {

/// One optimisation pass at a time over a fixed list of samples: per-sample
/// dropout streams, deterministic gradient lanes, global-norm clipping, and the
/// optimizer update.
class MiniBatchRunner {
   public:
    MiniBatchRunner(HieGnnModel& model, const TrainConfig& config)
        : config_(config),
          optimizer_(config.optimizer, config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps),
          lanes_(model, config.grad_lanes) {
        model.for_each_parameter([&](const std::string&, Tensor& t) { params_.push_back(t); });
        workers_ = config.workers ? config.workers : std::max(1u, std::thread::hardware_concurrency());
        workers_ = std::min(workers_, lanes_.lanes());
    }

    std::vector<Tensor>& params() { return params_; }

    /// Shuffles `indices` for this epoch, steps once per mini-batch, and returns
    /// the mean per-sample loss. Throws TrainingDiverged (with `report`) on a
    /// non-finite loss or gradient.
    double run_epoch(const std::vector<const DocumentRecord*>& records, const std::vector<SampleGraphs>& graphs,
                     std::vector<std::size_t> indices, std::size_t epoch, const LambdaSchedule& schedule,
                     TrainReport& report) {
        std::mt19937_64 shuffle_rng(config_.seed * 0x9E3779B97F4A7C15ull + epoch);
        std::shuffle(indices.begin(), indices.end(), shuffle_rng);
        double epoch_loss = 0.0;
        for (std::size_t b = 0; b < indices.size(); b += config_.batch_size) {
            const auto e = std::min(indices.size(), b + config_.batch_size);
            const auto bsize = e - b;
            std::vector<const SampleGraphs*> batch_graphs;
            for (auto p = b; p < e; ++p) batch_graphs.push_back(&graphs[indices[p]]);
            const auto xs = sentence_counts_for(batch_graphs, schedule.policy, config_.batch_size);
            std::vector<double> losses(bsize, 0.0);
            std::vector<std::string> errors(lanes_.lanes());
            auto run_lane = [&](std::size_t lane) {
                try {
                    lanes_.zero_lane(lane);
                    const auto& m = lanes_.lane_model(lane);
                    for (std::size_t p = lane; p < bsize; p += lanes_.lanes()) {
                        const auto idx = indices[b + p];
                        auto rng = sample_rng(config_.seed, epoch, idx);
                        auto fwd = m.forward(*batch_graphs[p], schedule.weights(xs[p]), true, rng);
                        auto loss = scale(pick(fwd.log_probs, records[idx]->label_id), -1.0 / double(bsize));
                        losses[p] = loss.item();
                        backward(loss);
                        lanes_.note_rows(lane, records[idx]->tokens);
                    }
                } catch (const std::exception& ex) {
                    errors[lane] = ex.what();
                }
            };
            if (workers_ <= 1) {
                for (std::size_t l = 0; l < lanes_.lanes(); ++l) run_lane(l);
            } else {
                std::vector<std::thread> pool;
                for (std::size_t w = 0; w < workers_; ++w) {
                    pool.emplace_back([&, w] {
                        for (std::size_t l = w; l < lanes_.lanes(); l += workers_) run_lane(l);
                    });
                }
                for (auto& t : pool) t.join();
            }
            for (const auto& err : errors) {
                if (!err.empty()) throw std::runtime_error("train: " + err);
            }
            double batch_value = 0.0;
            for (double l : losses) batch_value += l;
            if (!std::isfinite(batch_value)) {
                report.stop_reason = "diverged";
                throw TrainingDiverged("train: non-finite loss in epoch " + std::to_string(epoch), report);
            }
            epoch_loss += batch_value * double(bsize);
            auto& grads = lanes_.merge();
            const double norm = global_norm(grads);
            if (!std::isfinite(norm)) {
                report.stop_reason = "diverged";
                throw TrainingDiverged("train: non-finite gradient in epoch " + std::to_string(epoch), report);
            }
            if (config_.clip_norm > 0.0 && norm > config_.clip_norm) {
                const double f = config_.clip_norm / norm;
                for (auto& g : grads)
                    for (auto& v : g) v *= f;
            }
            optimizer_.step(params_, grads);
        }
        return epoch_loss / double(indices.size());
    }

   private:
    TrainConfig config_;
    Optimizer optimizer_;
    GradientLanes lanes_;
    std::vector<Tensor> params_;
    std::size_t workers_ = 1;
};

inline void check_labels(const HieGnnModel& model, const std::vector<const DocumentRecord*>& records) {
    for (const auto* r : records) {
        if (r->label_id >= model.config().class_count) {
            throw InvalidInput("train: label " + std::to_string(r->label_id) + " outside model class count " +
                               std::to_string(model.config().class_count));
        }
    }
}

}  // namespace detail

/// Mini-batch training with early stopping on validation accuracy. On return
/// the model holds the best-validation parameters.
inline TrainReport train(HieGnnModel& model, const Corpus& corpus, const TrainConfig& config,
                         std::ostream* log = nullptr) {
    config.validate();
    const auto started = std::chrono::steady_clock::now();
    const auto data = split_corpus(corpus);
    if (data.train.size() < 2) throw InvalidInput("train: need at least two training documents");
    detail::check_labels(model, data.train);
    detail::check_labels(model, data.test);

    std::vector<SampleGraphs> train_graphs, test_graphs;
    train_graphs.reserve(data.train.size());
    test_graphs.reserve(data.test.size());
    for (const auto* r : data.train) train_graphs.push_back(build_sample_graphs(*r, model.config().windows()));
    for (const auto* r : data.test) test_graphs.push_back(build_sample_graphs(*r, model.config().windows()));

    auto [fit_idx, val_idx] = stratified_split(data.train, config.validation_fraction, config.seed);
    std::vector<const DocumentRecord*> val_recs, test_recs = data.test;
    std::vector<const SampleGraphs*> val_graphs, test_graph_ptrs;
    for (auto i : val_idx) {
        val_recs.push_back(data.train[i]);
        val_graphs.push_back(&train_graphs[i]);
    }
    for (const auto& g : test_graphs) test_graph_ptrs.push_back(&g);

    LambdaSchedule schedule{model.config().lambda_policy, config.ablation_row, config.lambda_override};
    EvalOptions eval_opts{schedule, config.batch_size};

    TrainReport report;
    report.seed = config.seed;
    report.config_echo = echo_config(model.config(), config);

    detail::MiniBatchRunner runner(model, config);
    auto& params = runner.params();
    std::vector<std::vector<double>> best_values;
    auto snapshot = [&] {
        best_values.clear();
        for (const auto& p : params) best_values.emplace_back(p.data().begin(), p.data().end());
    };
    snapshot();
    report.best_validation_accuracy = -1.0;
    std::size_t since_best = 0;

    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        try {
            rec.train_loss = runner.run_epoch(data.train, train_graphs, fit_idx, epoch, schedule, report);
        } catch (TrainingDiverged&) {
            report.wall_clock_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
            throw TrainingDiverged("train: non-finite loss or gradient in epoch " + std::to_string(epoch), report);
        }
        rec.validation_accuracy = evaluate_detailed(model, val_recs, val_graphs, eval_opts).accuracy;
        report.epochs.push_back(rec);
        if (log) {
            *log << "epoch " << epoch << " loss " << std::setprecision(6) << rec.train_loss << " val_acc "
                 << rec.validation_accuracy << std::endl;
        }
        if (rec.validation_accuracy > report.best_validation_accuracy) {
            report.best_validation_accuracy = rec.validation_accuracy;
            report.best_epoch = epoch;
            since_best = 0;
            snapshot();
        } else if (++since_best >= config.patience) {
            report.stop_reason = "early_stop";
            break;
        }
    }
    if (report.stop_reason.empty()) report.stop_reason = "max_epochs";
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto d = params[p].mutable_data();
        std::copy(best_values[p].begin(), best_values[p].end(), d.begin());
    }
    report.test_accuracy = evaluate_detailed(model, test_recs, test_graph_ptrs, eval_opts).accuracy;
    report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
}

struct FitReport {
    std::vector<double> losses;  // mean loss per epoch
    double accuracy = 0.0;       // on the fitted samples, after the last epoch
};

/// Trains on exactly `records` for `epochs` epochs with no validation split or
/// early stopping. Used for memorisation checks on small subsets.
inline FitReport fit_samples(HieGnnModel& model, const std::vector<const DocumentRecord*>& records,
                             const TrainConfig& config, std::size_t epochs, std::ostream* log = nullptr) {
    config.validate();
    if (records.empty()) throw InvalidInput("fit_samples: no samples");
    detail::check_labels(model, records);
    std::vector<SampleGraphs> graphs;
    for (const auto* r : records) graphs.push_back(build_sample_graphs(*r, model.config().windows()));
    std::vector<const SampleGraphs*> graph_ptrs;
    for (const auto& g : graphs) graph_ptrs.push_back(&g);
    std::vector<std::size_t> all(records.size());
    std::iota(all.begin(), all.end(), 0);
    LambdaSchedule schedule{model.config().lambda_policy, config.ablation_row, config.lambda_override};
    detail::MiniBatchRunner runner(model, config);
    TrainReport scratch;
    FitReport out;
    for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
        out.losses.push_back(runner.run_epoch(records, graphs, all, epoch, schedule, scratch));
        if (log) *log << "fit epoch " << epoch << " loss " << std::setprecision(6) << out.losses.back() << std::endl;
    }
    out.accuracy = evaluate_detailed(model, records, graph_ptrs, EvalOptions{schedule, config.batch_size}).accuracy;
    return out;
}

struct AblationResult {
    AblationRow row;
    double accuracy = 0.0;
    TrainReport report;
};

/// Trains a fresh model (same seed) for each requested row.
inline std::vector<AblationResult> run_ablation_grid(const Corpus& corpus, const HieGnnConfig& model_config,
                                                     const TrainConfig& base, const std::vector<AblationRow>& rows,
                                                     std::ostream* log = nullptr) {
    std::vector<AblationResult> out;
    for (auto row : rows) {
        auto cfg = base;
        cfg.ablation_row = row;
        cfg.lambda_override.reset();
        HieGnnModel model(model_config);
        if (log) *log << "ablation row " << to_string(row) << '\n';
        auto report = train(model, corpus, cfg, log);
        out.push_back({row, report.test_accuracy, std::move(report)});
    }
    return out;
}

/// Aligned table with the best row flagged.
inline std::string render_ablation_table(const std::vector<AblationResult>& results) {
    std::ostringstream os;
    std::size_t best = 0;
    for (std::size_t i = 1; i < results.size(); ++i) {
        if (results[i].accuracy > results[best].accuracy) best = i;
    }
    os << std::left << std::setw(8) << "row" << std::setw(30) << "lambda" << "accuracy\n";
    for (std::size_t i = 0; i < results.size(); ++i) {
        os << std::left << std::setw(8) << to_string(results[i].row) << std::setw(30) << ablation_label(results[i].row)
           << std::fixed << std::setprecision(4) << results[i].accuracy << (i == best ? "  *max" : "") << '\n';
    }
    return os.str();
}

}  // namespace hiegat
