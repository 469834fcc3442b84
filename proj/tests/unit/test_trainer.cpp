#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "moprune/trainer.hpp"
#include "support/gradcheck.hpp"
#include "support/synthetic.hpp"

using namespace moprune;

namespace {

EvolutionConfig fast_config()
{
    EvolutionConfig cfg;
    cfg.max_epochs = 60;
    cfg.early_stop_patience = 10;
    cfg.batch_size = 16;
    cfg.learning_rate = 0.05;
    return cfg;
}

Split random_split(std::size_t rows, std::size_t dim, std::size_t classes, std::uint64_t seed)
{
    Rng rng(seed);
    Split s;
    s.feature_dim = dim;
    std::vector<double> x(dim);
    for (std::size_t r = 0; r < rows; ++r) {
        for (auto& v : x) v = rng.normal();
        s.push_back(x, static_cast<int>(r % classes));
    }
    return s;
}

bool pruned_rows_zero(const TrainedHead& h)
{
    for (std::size_t j = 0; j < h.arch.feature_dim; ++j) {
        if (h.mask[j]) continue;
        for (double w : h.input_row(j))
            if (w != 0.0) return false;
    }
    return true;
}

}  // namespace

TEST(Decode, ShapesAndDeterminism)
{
    const ArchSpec arch{4, 2, 2};
    const PruningMask mask{1, 0, 1, 1};
    const auto a = decode(mask, arch, 42);
    const auto b = decode(mask, arch, 42);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.input_weights.size(), 4u * 2u);
    EXPECT_EQ(a.hidden_bias.size(), 2u);
    EXPECT_EQ(a.output_weights.size(), 2u * 2u);
    EXPECT_EQ(a.output_bias.size(), 2u);
    EXPECT_TRUE(pruned_rows_zero(a));
    EXPECT_NE(a, decode(mask, arch, 43));
}

TEST(Decode, AllZeroMaskHasNoInputWeights)
{
    const auto h = decode(PruningMask(16), ArchSpec{16, 8, 3}, 1);
    for (double w : h.input_weights) EXPECT_EQ(w, 0.0);
}

TEST(Decode, InitializationStaysInsideGlorotLimits)
{
    const ArchSpec arch{10, 6, 3};
    PruningMask mask(10);
    for (std::size_t j = 0; j < 4; ++j) mask.set(j, true);
    const auto h = decode(mask, arch, 5);
    const double in_limit = std::sqrt(6.0 / (4 + 6));
    const double out_limit = std::sqrt(6.0 / (6 + 3));
    for (double w : h.input_weights) EXPECT_LE(std::abs(w), in_limit);
    for (double w : h.output_weights) EXPECT_LE(std::abs(w), out_limit);
    for (double b : h.hidden_bias) EXPECT_EQ(b, 0.0);
}

TEST(Decode, LengthMismatchThrows)
{
    EXPECT_THROW(decode(PruningMask(3), ArchSpec{4, 2, 2}, 0), ValidationError);
}

TEST(PredictLogits, HandSetHead)
{
    TrainedHead h = decode(PruningMask(2, true), ArchSpec{2, 2, 2}, 0);
    h.input_weights = {1.0, -1.0, 2.0, 0.5};
    h.hidden_bias = {0.1, -0.2};
    h.output_weights = {1.0, 2.0, 3.0, 4.0};
    h.output_bias = {0.5, -0.5};
    // hidden pre = [0.1 + 1 + 4, -0.2 - 1 + 1] = [5.1, -0.2] -> relu [5.1, 0]
    // logits = [5.1 * 1 + 0.5, 5.1 * 2 - 0.5] = [5.6, 9.7]
    const auto logits = predict_logits(h, std::vector<double>{1.0, 2.0});
    EXPECT_NEAR(logits[0], 5.6, 1e-12);
    EXPECT_NEAR(logits[1], 9.7, 1e-12);
    EXPECT_EQ(predict_class(h, std::vector<double>{1.0, 2.0}), 1u);

    // Pruning feature 1 removes its contribution: pre = [1.1, -1.2].
    h.mask = PruningMask{1, 0};
    h.input_weights[2] = h.input_weights[3] = 0.0;
    const auto pruned = predict_logits(h, std::vector<double>{1.0, 2.0});
    EXPECT_NEAR(pruned[0], 1.1 + 0.5, 1e-12);
    EXPECT_NEAR(pruned[1], 2.2 - 0.5, 1e-12);
}

TEST(PredictLogits, ZeroHeadAndConstantMask)
{
    TrainedHead zero = decode(PruningMask(3, true), ArchSpec{3, 4, 2}, 0);
    std::fill(zero.input_weights.begin(), zero.input_weights.end(), 0.0);
    std::fill(zero.output_weights.begin(), zero.output_weights.end(), 0.0);
    for (double l : predict_logits(zero, std::vector<double>{1, 2, 3})) EXPECT_EQ(l, 0.0);

    const auto h = decode(PruningMask(3), ArchSpec{3, 4, 2}, 9);
    EXPECT_EQ(predict_logits(h, std::vector<double>{1, 2, 3}), predict_logits(h, std::vector<double>{-5, 0, 7}));
    EXPECT_THROW(predict_logits(h, std::vector<double>{1, 2}), ValidationError);
}

TEST(Accuracy, ArgmaxTiesGoToLowestClass)
{
    TrainedHead h = decode(PruningMask(1), ArchSpec{1, 1, 3}, 0);
    h.output_bias = {0.0, 0.0, 0.0};
    Split s;
    s.feature_dim = 1;
    s.push_back(std::vector<double>{0.0}, 0);
    EXPECT_DOUBLE_EQ(accuracy(h, s), 1.0);

    Split wrong;
    wrong.feature_dim = 1;
    wrong.push_back(std::vector<double>{0.0}, 2);
    EXPECT_DOUBLE_EQ(accuracy(h, wrong), 0.0);
    EXPECT_THROW((void)accuracy(h, Split{1, {}, {}}), ValidationError);
}

TEST(Accuracy, AllZeroMaskOnBalancedDataIsChance)
{
    const testkit::GaussianClasses g(4, 8, 6.0, 0.0, 2);
    const auto ds = testkit::make_dataset(g, 80, 40, 3);
    const auto head = train_head(decode(PruningMask(8), ArchSpec{8, 16, 4}, 1), ds.train, fast_config(), 1);
    // A constant predictor scores the frequency of its class: 10 of 40.
    EXPECT_NEAR(accuracy(head, ds.test), 0.25, 1.0 / 40 + 1e-12);
}

TEST(TrainHead, ZeroEpochsReturnsInputHead)
{
    const auto data = random_split(20, 4, 2, 1);
    const auto init = decode(PruningMask(4, true), ArchSpec{4, 3, 2}, 7);
    auto cfg = fast_config();
    cfg.max_epochs = 0;
    const auto out = train_head(init, data, cfg, 7);
    EXPECT_EQ(out.input_weights, init.input_weights);
    EXPECT_EQ(out.output_bias, init.output_bias);
    EXPECT_EQ(out.epochs_run, 0u);
    ASSERT_EQ(out.accuracy_history.size(), 1u);
    EXPECT_DOUBLE_EQ(out.best_train_accuracy, accuracy(init, data));
}

TEST(TrainHead, EmptySplitThrows)
{
    const auto init = decode(PruningMask(4, true), ArchSpec{4, 3, 2}, 7);
    EXPECT_THROW((void)train_head(init, Split{4, {}, {}}, fast_config(), 0), ValidationError);
}

TEST(TrainHead, SeparableBlobsReachHighAccuracy)
{
    const testkit::GaussianClasses g(2, 8, 6.0, 0.0, 21);
    const auto train = g.sample(100, 5);

    // Oracle: the nearest-class-mean linear rule separates this sample, so a
    // trained head has an accuracy >= 0.95 target that is attainable.
    std::vector<std::vector<double>> mean(2, std::vector<double>(8, 0.0));
    for (std::size_t i = 0; i < train.rows(); ++i)
        for (std::size_t j = 0; j < 8; ++j) mean[static_cast<std::size_t>(train.labels[i])][j] += train.row(i)[j] / 50.0;
    std::size_t linear_correct = 0;
    for (std::size_t i = 0; i < train.rows(); ++i) {
        double d0 = 0, d1 = 0;
        for (std::size_t j = 0; j < 8; ++j) {
            d0 += std::pow(train.row(i)[j] - mean[0][j], 2);
            d1 += std::pow(train.row(i)[j] - mean[1][j], 2);
        }
        linear_correct += ((d1 < d0 ? 1 : 0) == train.labels[i]);
    }
    ASSERT_GE(linear_correct, 99u);

    EvolutionConfig cfg;  // library defaults: lr 0.01, batch 32
    cfg.max_epochs = 200;
    const auto head = train_head(decode(PruningMask(8, true), ArchSpec{8, 32, 2}, 3), train, cfg, 3);
    EXPECT_GE(head.best_train_accuracy, 0.95);
    EXPECT_DOUBLE_EQ(head.best_train_accuracy, accuracy(head, train));
}

TEST(TrainHead, EarlyStopAfterPlateau)
{
    // Random labels on a 1-feature input: accuracy plateaus quickly.
    const auto data = random_split(64, 1, 2, 8);
    auto cfg = fast_config();
    cfg.max_epochs = 500;
    cfg.early_stop_patience = 10;
    const auto head = train_head(decode(PruningMask(1, true), ArchSpec{1, 4, 2}, 2), data, cfg, 2);
    ASSERT_LT(head.epochs_run, cfg.max_epochs);

    // Last strict improvement epoch.
    const auto& hist = head.accuracy_history;
    std::size_t plateau_start = 0;
    double best = hist[0];
    for (std::size_t e = 1; e < hist.size(); ++e)
        if (hist[e] > best) best = hist[e], plateau_start = e;
    EXPECT_LE(head.epochs_run, plateau_start + cfg.early_stop_patience);
    EXPECT_EQ(head.epochs_run, plateau_start + cfg.early_stop_patience);
}

TEST(TrainHead, BestSnapshotIsMaxOverEpochs)
{
    const auto data = random_split(60, 5, 3, 4);
    auto cfg = fast_config();
    cfg.max_epochs = 30;
    const auto head = train_head(decode(PruningMask{1, 1, 0, 1, 0}, ArchSpec{5, 6, 3}, 4), data, cfg, 4);
    EXPECT_DOUBLE_EQ(head.best_train_accuracy,
                     *std::max_element(head.accuracy_history.begin(), head.accuracy_history.end()));
    EXPECT_DOUBLE_EQ(head.best_train_accuracy, accuracy(head, data));
    EXPECT_LE(head.epochs_run, cfg.max_epochs);
}

TEST(TrainHead, DeterministicForFixedSeed)
{
    const auto data = random_split(50, 6, 2, 12);
    const PruningMask mask{1, 0, 1, 1, 0, 1};
    const auto a = train_head(decode(mask, ArchSpec{6, 5, 2}, 77), data, fast_config(), 77);
    const auto b = train_head(decode(mask, ArchSpec{6, 5, 2}, 77), data, fast_config(), 77);
    EXPECT_EQ(a, b);
}

TEST(TrainHead, PrunedRowsStayZero)
{
    const auto data = random_split(40, 6, 2, 13);
    const PruningMask mask{0, 1, 0, 1, 1, 0};
    auto head = decode(mask, ArchSpec{6, 3, 2}, 5);
    std::vector<std::size_t> batch(8);
    for (int step = 0; step < 100; ++step) {
        std::iota(batch.begin(), batch.end(), static_cast<std::size_t>((step * 8) % 32));
        sgd_step(head, data, batch, 0.1);
    }
    EXPECT_TRUE(pruned_rows_zero(head));
    EXPECT_TRUE(pruned_rows_zero(train_head(decode(mask, ArchSpec{6, 3, 2}, 5), data, fast_config(), 5)));
}

TEST(Gradients, MatchCentralDifferences)
{
    const auto data = random_split(10, 6, 2, 99);
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        auto head = decode(PruningMask{1, 1, 0, 1, 0, 1}, ArchSpec{6, 3, 2}, seed);
        Rng rng(seed);
        for (auto& b : head.hidden_bias) b = rng.uniform(-0.5, 0.5);
        for (auto& b : head.output_bias) b = rng.uniform(-0.5, 0.5);
        std::vector<std::size_t> rows(data.rows());
        std::iota(rows.begin(), rows.end(), std::size_t{0});
        const auto res = testkit::check_gradients(head, data, rows);
        EXPECT_EQ(res.parameters_checked, 4u * 3 + 3 + 3 * 2 + 2);
        EXPECT_LT(res.max_relative_error, 1e-4);
    }
}

TEST(WriteWeights, EmitsEveryTensor)
{
    const auto h = decode(PruningMask{1, 0}, ArchSpec{2, 2, 2}, 1);
    std::ostringstream out;
    write_weights(out, h);
    const auto s = out.str();
    EXPECT_NE(s.find("input_weights 2 2"), std::string::npos);
    EXPECT_NE(s.find("hidden_bias 1 2"), std::string::npos);
    EXPECT_NE(s.find("output_weights 2 2"), std::string::npos);
    EXPECT_NE(s.find("output_bias 1 2"), std::string::npos);
}
