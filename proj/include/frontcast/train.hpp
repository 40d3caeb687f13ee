#pragma once

// Training loop (mini-batch Adam over the tape), autoregressive rollout and
// multi-horizon evaluation. Training is sequential and fully seeded;
// evaluation can fan out over samples (capped by FRONTCAST_THREADS) and
// aggregates in sample order, so thread count never changes results.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "frontcast/autodiff.hpp"
#include "frontcast/grid.hpp"
#include "frontcast/loss.hpp"
#include "frontcast/metrics.hpp"
#include "frontcast/model.hpp"
#include "frontcast/random.hpp"

namespace frontcast {

struct TrainConfig {
    int batch_size = 32;
    double learning_rate = 1e-4;  // LSTM-family models default to 1e-3 at the CLI
    int epochs = 50;
    int loss_variant = 1;
    uint64_t seed = 0;

    void validate() const {
        if (batch_size < 1)
            throw invariant_error("TrainConfig: batch_size must be positive");
        if (epochs < 0)
            throw invariant_error("TrainConfig: epochs must be non-negative");
        if (!(learning_rate >= 0.0))
            throw invariant_error("TrainConfig: learning_rate must be non-negative");
        validate_loss_variant(loss_variant);
    }
};

struct EpochRecord {
    int epoch = 0;  // 1-based
    LossBreakdown loss;
    double wall_seconds = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    double wall_seconds = 0.0;
};

// Adam with the canonical moment defaults and bias correction.
class Adam {
public:
    Adam(double lr, const ParamStore& params, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& e : params.entries) {
            m_.emplace_back(e.value.shape);
            v_.emplace_back(e.value.shape);
        }
    }

    void step(ParamStore& params, const std::vector<Tensor>& grads) {
        if (grads.size() != params.entries.size())
            throw std::invalid_argument("Adam::step: gradient count mismatch");
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (size_t p = 0; p < grads.size(); ++p) {
            auto& theta = params.entries[p].value.data;
            const auto& g = grads[p].data;
            auto& m = m_[p].data;
            auto& v = v_[p].data;
            for (size_t k = 0; k < theta.size(); ++k) {
                m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
                v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
                theta[k] -= lr_ * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + eps_);
            }
        }
    }

private:
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

// Builds the sample loss on the tape: full 9-term assembly for 3-channel
// models, CE-only front loss for single-channel ones.
template <class Model>
Var sample_loss_node(const Model& model, Tape& t, const std::vector<Var>& pv,
                     const SampleWindow& w, int loss_variant, LossBreakdown* bd) {
    const Var x = t.constant(stack_window(w.inputs, model.channels(), model.grid()));
    const Var pred = model.predict(t, pv, x);
    if (model.channels() == 3)
        return assemble_loss_node(t, loss_variant, pred, *w.target, *w.inputs.back(), model.grid(),
                                  bd);
    return assemble_front_loss_node(t, loss_variant, pred, w.target->front, bd);
}

namespace detail {
inline void add_breakdown(LossBreakdown& acc, const LossBreakdown& bd) {
    acc.front_term += bd.front_term;
    acc.u_term += bd.u_term;
    acc.v_term += bd.v_term;
    acc.ddt_u += bd.ddt_u;
    acc.ddt_v += bd.ddt_v;
    acc.conv_u += bd.conv_u;
    acc.conv_v += bd.conv_v;
    acc.diff_u += bd.diff_u;
    acc.diff_v += bd.diff_v;
    acc.total += bd.total;
}

inline void scale_breakdown(LossBreakdown& acc, double s) {
    acc.front_term *= s;
    acc.u_term *= s;
    acc.v_term *= s;
    acc.ddt_u *= s;
    acc.ddt_v *= s;
    acc.conv_u *= s;
    acc.conv_v *= s;
    acc.diff_u *= s;
    acc.diff_v *= s;
    acc.total *= s;
}

inline void check_finite_loss(const LossBreakdown& bd, int epoch) {
    if (std::isfinite(bd.total))
        return;
    std::string offender = "total";
    for (const auto& [name, value] : bd.named())
        if (!std::isfinite(value)) {
            offender = name;
            break;
        }
    throw std::runtime_error("training diverged in epoch " + std::to_string(epoch) +
                             ": loss term '" + offender + "' is non-finite");
}
}  // namespace detail

// Mini-batch Adam training. Batches are drawn in a freshly shuffled order
// each epoch (seeded); the history records the per-epoch mean breakdown.
template <class Model>
TrainHistory train(Model& model, const Dataset& train_set, const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.empty())
        throw std::invalid_argument("train: empty dataset");
    if (model.channels() == 1 && !variant_front_is_ce(cfg.loss_variant))
        throw std::invalid_argument(
            "train: front-only models support CE-based loss variants (1 or 3) only");
    if (train_set.spec != model.grid())
        throw std::invalid_argument("train: dataset grid does not match model grid");

    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(cfg.seed);
    Adam adam(cfg.learning_rate, model.params());
    const size_t n = train_set.size();
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i)
        order[i] = i;

    TrainHistory history;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        // Fisher-Yates draw per epoch.
        for (size_t i = n; i > 1; --i) {
            const size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1));
            std::swap(order[i - 1], order[j]);
        }

        LossBreakdown epoch_sum;
        for (size_t start = 0; start < n; start += static_cast<size_t>(cfg.batch_size)) {
            const size_t stop = std::min(n, start + static_cast<size_t>(cfg.batch_size));
            std::vector<Tensor> grad_sum;
            for (const auto& e : model.params().entries)
                grad_sum.emplace_back(e.value.shape);

            for (size_t s = start; s < stop; ++s) {
                Tape tape;
                const std::vector<Var> pv = model.bind(tape, true);
                LossBreakdown bd;
                const Var total = sample_loss_node(model, tape, pv, train_set.samples[order[s]],
                                                   cfg.loss_variant, &bd);
                detail::check_finite_loss(bd, epoch);
                detail::add_breakdown(epoch_sum, bd);
                tape.backward(total);
                for (size_t p = 0; p < pv.size(); ++p) {
                    const Tensor g = tape.grad(pv[p]);
                    auto& acc = grad_sum[p].data;
                    for (size_t k = 0; k < acc.size(); ++k)
                        acc[k] += g.data[k];
                }
            }
            const double inv = 1.0 / static_cast<double>(stop - start);
            for (auto& g : grad_sum)
                for (double& x : g.data)
                    x *= inv;
            adam.step(model.params(), grad_sum);
        }

        detail::scale_breakdown(epoch_sum, 1.0 / static_cast<double>(n));
        EpochRecord rec;
        rec.epoch = epoch;
        rec.loss = epoch_sum;
        rec.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        history.epochs.push_back(rec);
    }
    history.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return history;
}

// Autoregressive rollout: each step drops the oldest frame and appends the
// previous prediction, with the front channel kept as a raw probability map.
template <class Model>
std::vector<StateFrame> rollout(const Model& model,
                                const std::vector<std::shared_ptr<const StateFrame>>& seed_window,
                                int n_steps) {
    if (n_steps < 1)
        throw std::invalid_argument("rollout: n_steps must be >= 1");
    std::vector<std::shared_ptr<const StateFrame>> window = seed_window;
    std::vector<StateFrame> out;
    out.reserve(static_cast<size_t>(n_steps));
    for (int s = 0; s < n_steps; ++s) {
        StateFrame pred = model.forward(window);
        out.push_back(pred);
        window.erase(window.begin());
        window.push_back(std::make_shared<const StateFrame>(out.back()));
    }
    return out;
}

struct MetricsReport {
    int horizon = 1;
    double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;  // percent
    std::vector<double> per_sample_f1;                               // percent
    double wall_seconds = 0.0;  // training time of the evaluated model, when known
};

inline int eval_thread_count(size_t n_samples) {
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0)
        hw = 1;
    if (const char* env = std::getenv("FRONTCAST_THREADS")) {
        const long cap = std::strtol(env, nullptr, 10);
        if (cap >= 1 && static_cast<unsigned>(cap) < hw)
            hw = static_cast<unsigned>(cap);
    }
    return static_cast<int>(std::min<size_t>(hw, std::max<size_t>(n_samples, 1)));
}

// For each horizon k, rolls out k steps from every window whose true frame
// k days ahead exists in the dataset and scores the k-th prediction's front
// channel. Reports aggregate (micro) confusion metrics plus the per-sample
// F1 distribution.
template <class Model>
std::vector<MetricsReport> evaluate(const Model& model, const Dataset& test_set,
                                    const std::vector<int>& horizons, double threshold = 0.5,
                                    double train_wall_seconds = 0.0) {
    if (test_set.empty())
        throw std::invalid_argument("evaluate: empty dataset");
    if (test_set.spec != model.grid())
        throw std::invalid_argument("evaluate: dataset grid does not match model grid");

    std::map<int64_t, size_t> by_target_day;
    for (size_t i = 0; i < test_set.size(); ++i)
        by_target_day[test_set.samples[i].target->day_index] = i;

    // Longest feasible horizon: longest run of consecutive target days
    // starting at any sample.
    int max_feasible = 0;
    for (size_t i = 0; i < test_set.size(); ++i) {
        int k = 0;
        int64_t day = test_set.samples[i].target->day_index;
        while (by_target_day.count(day + k))
            ++k;
        max_feasible = std::max(max_feasible, k);
    }
    for (int k : horizons)
        if (k < 1 || k > max_feasible)
            throw std::invalid_argument("evaluate: horizon " + std::to_string(k) +
                                        " infeasible for dataset (max feasible " +
                                        std::to_string(max_feasible) + ")");

    const int max_h = *std::max_element(horizons.begin(), horizons.end());

    struct SampleResult {
        std::map<int, Confusion> by_horizon;
    };
    std::vector<SampleResult> results(test_set.size());

    auto work = [&](size_t begin, size_t stride) {
        for (size_t i = begin; i < test_set.size(); i += stride) {
            const SampleWindow& w = test_set.samples[i];
            int longest = 0;
            while (longest < max_h &&
                   by_target_day.count(w.target->day_index + longest))
                ++longest;
            const int steps = std::min(max_h, longest);
            if (steps < 1)
                continue;
            const std::vector<StateFrame> preds = rollout(model, w.inputs, steps);
            for (int k : horizons) {
                if (k > steps)
                    continue;
                const auto it = by_target_day.find(w.target->day_index + k - 1);
                if (it == by_target_day.end())
                    continue;
                const StateFrame& truth = *test_set.samples[it->second].target;
                results[i].by_horizon[k] =
                    confusion_counts(preds[static_cast<size_t>(k - 1)].front, truth.front, threshold);
            }
        }
    };

    const int nthreads = eval_thread_count(test_set.size());
    if (nthreads <= 1) {
        work(0, 1);
    } else {
        std::vector<std::thread> pool;
        for (int th = 0; th < nthreads; ++th)
            pool.emplace_back(work, static_cast<size_t>(th), static_cast<size_t>(nthreads));
        for (auto& th : pool)
            th.join();
    }

    std::vector<MetricsReport> reports;
    for (int k : horizons) {
        Confusion agg;
        MetricsReport rep;
        rep.horizon = k;
        rep.wall_seconds = train_wall_seconds;
        for (const auto& r : results) {
            const auto it = r.by_horizon.find(k);
            if (it == r.by_horizon.end())
                continue;
            agg += it->second;
            rep.per_sample_f1.push_back(metrics_from_confusion(it->second).f1);
        }
        const ClassificationMetrics m = metrics_from_confusion(agg);
        rep.accuracy = m.accuracy;
        rep.precision = m.precision;
        rep.recall = m.recall;
        rep.f1 = m.f1;
        reports.push_back(std::move(rep));
    }
    return reports;
}

// ---- serialization of training logs and reports ----

inline nlohmann::json breakdown_json(const LossBreakdown& bd) {
    nlohmann::json j;
    for (const auto& [name, value] : bd.named())
        j[name] = value;
    j["total"] = bd.total;
    return j;
}

inline nlohmann::json epoch_json(const EpochRecord& rec) {
    return {{"epoch", rec.epoch}, {"loss", breakdown_json(rec.loss)}, {"wall_seconds", rec.wall_seconds}};
}

inline double round2(double v) { return std::round(v * 100.0) / 100.0; }

// Table-style row: step, dataset, accuracy, precision, recall, f1 (percent,
// two decimals, matching the report CSV).
inline nlohmann::json report_json(const MetricsReport& rep, const std::string& dataset_name) {
    return {{"step", rep.horizon},         {"dataset", dataset_name},
            {"accuracy", round2(rep.accuracy)}, {"precision", round2(rep.precision)},
            {"recall", round2(rep.recall)},     {"f1", round2(rep.f1)}};
}

inline std::string report_csv_header() { return "step,dataset,accuracy,precision,recall,f1"; }

inline std::string report_csv_row(const MetricsReport& rep, const std::string& dataset_name) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%d,%s,%.2f,%.2f,%.2f,%.2f", rep.horizon, dataset_name.c_str(),
                  rep.accuracy, rep.precision, rep.recall, rep.f1);
    return buf;
}

inline nlohmann::json box_stats_json(const BoxStats& b) {
    return {{"median", b.median},
            {"q1", b.q1},
            {"q3", b.q3},
            {"lower_whisker", b.lower_whisker},
            {"upper_whisker", b.upper_whisker},
            {"outliers", b.outliers}};
}

}  // namespace frontcast
