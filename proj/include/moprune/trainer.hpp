#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <span>
#include <vector>

#include "moprune/datamodel.hpp"
#include "moprune/rng.hpp"

namespace moprune {

/// Dense head: input(P) -> ReLU hidden(H) -> logits(Y), with input rows of
/// pruned features held at zero.
///
/// input_weights is P x H row-major (row j = outgoing weights of feature j),
/// output_weights is H x Y row-major.
struct TrainedHead {
    ArchSpec arch;
    PruningMask mask;
    std::vector<double> input_weights;
    std::vector<double> hidden_bias;
    std::vector<double> output_weights;
    std::vector<double> output_bias;
    double best_train_accuracy = 0.0;
    std::size_t epochs_run = 0;
    /// Train accuracy after each epoch; element 0 is the state before training.
    std::vector<double> accuracy_history;

    [[nodiscard]] std::span<const double> input_row(std::size_t j) const noexcept
    {
        return {input_weights.data() + j * arch.hidden_units, arch.hidden_units};
    }

    friend bool operator==(const TrainedHead&, const TrainedHead&) = default;
};

/// Gradient buffers shaped like the trainable tensors of a TrainedHead.
struct HeadGradients {
    std::vector<double> input_weights;
    std::vector<double> hidden_bias;
    std::vector<double> output_weights;
    std::vector<double> output_bias;

    explicit HeadGradients(const ArchSpec& a)
        : input_weights(a.feature_dim * a.hidden_units, 0.0),
          hidden_bias(a.hidden_units, 0.0),
          output_weights(a.hidden_units * a.num_classes, 0.0),
          output_bias(a.num_classes, 0.0)
    {
    }
};

namespace detail {

inline void check_mask(const PruningMask& mask, const ArchSpec& arch)
{
    if (mask.size() != arch.feature_dim)
        throw ValidationError("mask length " + std::to_string(mask.size()) + " does not match feature_dim " +
                              std::to_string(arch.feature_dim));
}

/// Forward pass for one sample; fills the hidden pre-activation and logits.
inline void forward(const TrainedHead& head, std::span<const std::size_t> active, std::span<const double> x,
                    std::span<double> pre, std::span<double> logits) noexcept
{
    const std::size_t H = head.arch.hidden_units;
    const std::size_t Y = head.arch.num_classes;
    std::copy(head.hidden_bias.begin(), head.hidden_bias.end(), pre.begin());
    for (std::size_t j : active) {
        const double xj = x[j];
        if (xj == 0.0) continue;
        const double* w = head.input_weights.data() + j * H;
        for (std::size_t h = 0; h < H; ++h) pre[h] += xj * w[h];
    }
    std::copy(head.output_bias.begin(), head.output_bias.end(), logits.begin());
    for (std::size_t h = 0; h < H; ++h) {
        const double a = pre[h] > 0.0 ? pre[h] : 0.0;
        if (a == 0.0) continue;
        const double* w = head.output_weights.data() + h * Y;
        for (std::size_t y = 0; y < Y; ++y) logits[y] += a * w[y];
    }
}

inline std::size_t argmax(std::span<const double> v) noexcept
{
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

}  // namespace detail

/// Builds an untrained head for `mask`. Weights are Glorot-uniform per layer
/// with fan_in counting only connected inputs; biases start at zero.
[[nodiscard]] inline TrainedHead decode(const PruningMask& mask, const ArchSpec& arch, std::uint64_t seed)
{
    arch.validate();
    detail::check_mask(mask, arch);
    const std::size_t P = arch.feature_dim, H = arch.hidden_units, Y = arch.num_classes;

    TrainedHead head;
    head.arch = arch;
    head.mask = mask;
    head.input_weights.assign(P * H, 0.0);
    head.hidden_bias.assign(H, 0.0);
    head.output_weights.assign(H * Y, 0.0);
    head.output_bias.assign(Y, 0.0);

    Rng rng(derive_seed(seed, 0));
    const std::size_t k = active_count(mask);
    if (k > 0) {
        const double limit = std::sqrt(6.0 / static_cast<double>(k + H));
        for (std::size_t j = 0; j < P; ++j) {
            if (!mask[j]) continue;
            for (std::size_t h = 0; h < H; ++h) head.input_weights[j * H + h] = rng.uniform(-limit, limit);
        }
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(H + Y));
    for (auto& w : head.output_weights) w = rng.uniform(-limit, limit);
    return head;
}

[[nodiscard]] inline std::vector<double> predict_logits(const TrainedHead& head, std::span<const double> features)
{
    if (features.size() != head.arch.feature_dim)
        throw ValidationError("feature vector has length " + std::to_string(features.size()) + ", expected " +
                              std::to_string(head.arch.feature_dim));
    const auto active = head.mask.active_indices();
    std::vector<double> pre(head.arch.hidden_units);
    std::vector<double> logits(head.arch.num_classes);
    detail::forward(head, active, features, pre, logits);
    return logits;
}

/// Logits for every row of `split`, row-major (rows x Y).
[[nodiscard]] inline std::vector<double> predict_logits(const TrainedHead& head, const Split& split)
{
    if (split.feature_dim != head.arch.feature_dim)
        throw ValidationError("split has feature_dim " + std::to_string(split.feature_dim) + ", expected " +
                              std::to_string(head.arch.feature_dim));
    const std::size_t Y = head.arch.num_classes;
    const auto active = head.mask.active_indices();
    std::vector<double> pre(head.arch.hidden_units);
    std::vector<double> out(split.rows() * Y);
    for (std::size_t i = 0; i < split.rows(); ++i)
        detail::forward(head, active, split.row(i), pre, std::span<double>(out.data() + i * Y, Y));
    return out;
}

[[nodiscard]] inline std::size_t predict_class(const TrainedHead& head, std::span<const double> features)
{
    const auto logits = predict_logits(head, features);
    return detail::argmax(logits);
}

[[nodiscard]] inline double accuracy(const TrainedHead& head, const Split& split)
{
    if (split.empty()) throw ValidationError("accuracy of an empty split is undefined");
    const std::size_t Y = head.arch.num_classes;
    const auto logits = predict_logits(head, split);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < split.rows(); ++i) {
        const auto pred = detail::argmax(std::span<const double>(logits.data() + i * Y, Y));
        if (static_cast<int>(pred) == split.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(split.rows());
}

/// Mean softmax cross-entropy over `rows` of `split`; accumulates the mean
/// gradient into `grads` (which must be zeroed by the caller). Gradients for
/// pruned input rows are never written.
inline double loss_and_gradients(const TrainedHead& head, const Split& split, std::span<const std::size_t> rows,
                                 HeadGradients& grads)
{
    const std::size_t H = head.arch.hidden_units, Y = head.arch.num_classes;
    const auto active = head.mask.active_indices();
    std::vector<double> pre(H), logits(Y), prob(Y), dhidden(H);
    const double scale = 1.0 / static_cast<double>(rows.size());
    double loss = 0.0;

    for (std::size_t r : rows) {
        const auto x = split.row(r);
        const auto label = static_cast<std::size_t>(split.labels[r]);
        detail::forward(head, active, x, pre, logits);

        const double m = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (std::size_t y = 0; y < Y; ++y) z += (prob[y] = std::exp(logits[y] - m));
        for (auto& p : prob) p /= z;
        loss -= (logits[label] - m - std::log(z)) * scale;

        // dL/dlogits = softmax - onehot
        prob[label] -= 1.0;
        for (std::size_t y = 0; y < Y; ++y) grads.output_bias[y] += prob[y] * scale;
        for (std::size_t h = 0; h < H; ++h) {
            const double a = pre[h] > 0.0 ? pre[h] : 0.0;
            const double* w = head.output_weights.data() + h * Y;
            double* g = grads.output_weights.data() + h * Y;
            double back = 0.0;
            for (std::size_t y = 0; y < Y; ++y) {
                g[y] += a * prob[y] * scale;
                back += w[y] * prob[y];
            }
            dhidden[h] = pre[h] > 0.0 ? back * scale : 0.0;
            grads.hidden_bias[h] += dhidden[h];
        }
        for (std::size_t j : active) {
            const double xj = x[j];
            if (xj == 0.0) continue;
            double* g = grads.input_weights.data() + j * H;
            for (std::size_t h = 0; h < H; ++h) g[h] += xj * dhidden[h];
        }
    }
    return loss;
}

/// One plain SGD step on the given mini-batch. Returns the batch loss.
inline double sgd_step(TrainedHead& head, const Split& split, std::span<const std::size_t> batch, double learning_rate)
{
    const std::size_t H = head.arch.hidden_units;
    HeadGradients g(head.arch);
    const double loss = loss_and_gradients(head, split, batch, g);
    for (std::size_t j = 0; j < head.arch.feature_dim; ++j) {
        if (!head.mask[j]) continue;
        for (std::size_t h = 0; h < H; ++h) head.input_weights[j * H + h] -= learning_rate * g.input_weights[j * H + h];
    }
    for (std::size_t i = 0; i < head.hidden_bias.size(); ++i) head.hidden_bias[i] -= learning_rate * g.hidden_bias[i];
    for (std::size_t i = 0; i < head.output_weights.size(); ++i)
        head.output_weights[i] -= learning_rate * g.output_weights[i];
    for (std::size_t i = 0; i < head.output_bias.size(); ++i) head.output_bias[i] -= learning_rate * g.output_bias[i];
    return loss;
}

/// Mini-batch SGD with per-epoch shuffling. Keeps the snapshot with the best
/// train accuracy (strict improvement) and stops after `early_stop_patience`
/// epochs without improvement, or at `max_epochs`. Patience 0 disables early
/// stopping.
[[nodiscard]] inline TrainedHead train_head(TrainedHead head, const Split& train, const EvolutionConfig& cfg,
                                            std::uint64_t seed)
{
    if (train.empty()) throw ValidationError("cannot train on an empty split");
    if (train.feature_dim != head.arch.feature_dim)
        throw ValidationError("training split feature_dim does not match the head");

    Rng rng(derive_seed(seed, 1));
    std::vector<std::size_t> order(train.rows());
    std::iota(order.begin(), order.end(), std::size_t{0});

    head.accuracy_history.clear();
    head.epochs_run = 0;
    double best_acc = accuracy(head, train);
    head.accuracy_history.push_back(best_acc);
    TrainedHead best = head;
    std::size_t stale = 0;

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(order));
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t len = std::min(cfg.batch_size, order.size() - start);
            sgd_step(head, train, std::span<const std::size_t>(order.data() + start, len), cfg.learning_rate);
        }
        head.epochs_run = epoch;
        const double acc = accuracy(head, train);
        head.accuracy_history.push_back(acc);
        if (acc > best_acc) {
            best_acc = acc;
            best = head;
            stale = 0;
        } else if (cfg.early_stop_patience > 0 && ++stale >= cfg.early_stop_patience) {
            break;
        }
    }

    best.epochs_run = head.epochs_run;
    best.accuracy_history = std::move(head.accuracy_history);
    best.best_train_accuracy = best_acc;
    return best;
}

/// Debug dump: one tensor per block, `name rows cols` then whitespace values.
inline void write_weights(std::ostream& out, const TrainedHead& head)
{
    const auto emit = [&](const char* name, std::size_t rows, std::size_t cols, const std::vector<double>& v) {
        out << name << ' ' << rows << ' ' << cols << '\n';
        std::string line;
        for (std::size_t r = 0; r < rows; ++r) {
            line.clear();
            for (std::size_t c = 0; c < cols; ++c) {
                if (c) line.push_back(' ');
                detail::append_double(line, v[r * cols + c]);
            }
            out << line << '\n';
        }
    };
    const auto& a = head.arch;
    emit("input_weights", a.feature_dim, a.hidden_units, head.input_weights);
    emit("hidden_bias", 1, a.hidden_units, head.hidden_bias);
    emit("output_weights", a.hidden_units, a.num_classes, head.output_weights);
    emit("output_bias", 1, a.num_classes, head.output_bias);
}

}  // namespace moprune
