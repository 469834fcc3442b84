#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "moprune/datamodel.hpp"
#include "moprune/rng.hpp"
#include "support/synthetic.hpp"

using namespace moprune;

namespace {

FeatsetFile parse(const std::string& text)
{
    std::istringstream in(text);
    return parse_featset(in, "test.featset");
}

std::string error_of(const std::string& text)
{
    try {
        parse(text);
    } catch (const ParseError& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST(ActiveCount, CountsOneBits)
{
    EXPECT_EQ(active_count(PruningMask(2048, true)), 2048u);
    EXPECT_EQ(active_count(PruningMask(2048, false)), 0u);
    EXPECT_EQ(active_count(PruningMask{1, 0, 1, 1}), 3u);
}

TEST(PruningMask, RejectsNonBinaryValues)
{
    EXPECT_THROW((PruningMask{1, 2}), ValidationError);
    EXPECT_THROW(PruningMask(std::vector<std::uint8_t>{0, 1, 7}), ValidationError);
}

TEST(PruningMask, HexPutsGeneZeroInMostSignificantBit)
{
    EXPECT_EQ((PruningMask{1, 0, 0, 0}).to_hex(), "8");
    EXPECT_EQ((PruningMask{0, 0, 0, 1, 1, 1, 1, 1}).to_hex(), "1f");
    // 5 bits pad to two nibbles: 1,0,1,1 | 1,0,0,0
    EXPECT_EQ((PruningMask{1, 0, 1, 1, 1}).to_hex(), "b8");
}

TEST(PruningMask, HexRoundTripsRandomMasks)
{
    Rng rng(11);
    for (std::size_t len : {1u, 3u, 4u, 7u, 64u, 2048u}) {
        PruningMask m(len);
        for (std::size_t i = 0; i < len; ++i) m.set(i, rng.bernoulli(0.5));
        EXPECT_EQ(PruningMask::from_hex(m.to_hex(), len), m);
    }
    EXPECT_THROW(PruningMask::from_hex("b9", 5), ValidationError);  // padding bit set
    EXPECT_THROW(PruningMask::from_hex("zz", 8), ValidationError);
    EXPECT_THROW(PruningMask::from_hex("f", 8), ValidationError);
}

TEST(MemRatio, MatchesHandCountedWeights)
{
    const ArchSpec arch{4, 2, 2};
    // Full: 4*2 input + 2 hidden bias + 2*2 output + 2 output bias = 16.
    EXPECT_DOUBLE_EQ(mem_ratio(PruningMask(4, true), arch), 1.0);
    // k=2: 2*2 + 2 + 4 + 2 = 12.
    EXPECT_DOUBLE_EQ(mem_ratio(PruningMask{1, 0, 1, 0}, arch), 12.0 / 16.0);
    // k=0: 2 + 4 + 2 = 8.
    EXPECT_DOUBLE_EQ(mem_ratio(PruningMask(4, false), arch), 0.5);
    EXPECT_THROW((void)mem_ratio(PruningMask(3, true), arch), ValidationError);
}

TEST(MemRatio, StrictlyIncreasingInActiveCountAndPositiveAtZero)
{
    const ArchSpec arch{64, 512, 3};
    double prev = -1.0;
    for (std::size_t k = 0; k <= 64; ++k) {
        PruningMask m(64);
        for (std::size_t j = 0; j < k; ++j) m.set(j, true);
        const double r = mem_ratio(m, arch);
        EXPECT_GT(r, prev);
        prev = r;
    }
    EXPECT_GT(mem_ratio(PruningMask(64), arch), 0.0);
}

TEST(Dominates, Examples)
{
    EXPECT_TRUE(dominates({0.9, 100, 0.9}, {0.8, 200, 0.8}));
    EXPECT_FALSE(dominates({0.9, 100, 0.9}, {0.9, 100, 0.9}));
    EXPECT_FALSE(dominates({0.9, 300, 0.9}, {0.8, 200, 0.8}));
    EXPECT_TRUE(dominates({0.9, 100, 0.9}, {0.9, 101, 0.9}));
}

TEST(Dominates, IrreflexiveAntisymmetricAndMatchesOracle)
{
    Rng rng(3);
    // Coarse levels force plenty of equal coordinates.
    const auto pts = testkit::random_objectives(300, rng, 5, 4);
    for (const auto& a : pts) {
        EXPECT_FALSE(dominates(a, a));
        for (const auto& b : pts) {
            EXPECT_FALSE(dominates(a, b) && dominates(b, a));
            EXPECT_EQ(dominates(a, b), testkit::oracle_dominates(a, b));
        }
    }
}

TEST(Featset, LoadsTableOneShapedHeader)
{
    // CATARACT train split shape: 480 rows of 2048 features, 4 classes.
    std::string text = "FEATSET 1\n480 2048 4\n";
    for (int r = 0; r < 480; ++r) {
        text += std::to_string(r % 4);
        for (int j = 0; j < 2048; ++j) text += ",0.5";
        text += '\n';
    }
    const auto f = parse(text);
    EXPECT_EQ(f.split.rows(), 480u);
    EXPECT_EQ(f.split.feature_dim, 2048u);
    EXPECT_EQ(f.num_classes, 4u);
    EXPECT_EQ(f.split.labels[5], 1);
}

TEST(Featset, PreservesRowOrderAndValues)
{
    const auto f = parse("FEATSET 1\n3 2 3\n2,1.5,-2\n0,0,1e-3\n1,3,4\n");
    ASSERT_EQ(f.split.rows(), 3u);
    EXPECT_EQ(f.split.labels, (std::vector<int>{2, 0, 1}));
    EXPECT_DOUBLE_EQ(f.split.row(1)[1], 1e-3);
    EXPECT_DOUBLE_EQ(f.split.row(0)[1], -2.0);
}

TEST(Featset, ReportsErrorsWithLineNumbers)
{
    EXPECT_NE(error_of("FEATSET 1\n0 2 2\n").find("empty dataset"), std::string::npos);
    EXPECT_NE(error_of("").find("empty dataset"), std::string::npos);
    EXPECT_NE(error_of("FEATSET 2\n1 2 2\n0,1,2\n").find(":1: malformed header"), std::string::npos);
    EXPECT_NE(error_of("FEATSET 1\n1 2\n0,1,2\n").find(":2: malformed header"), std::string::npos);

    const auto short_row = error_of("FEATSET 1\n2 3 2\n0,1,2,3\n1,1,2\n");
    EXPECT_NE(short_row.find("test.featset:4:"), std::string::npos) << short_row;
    EXPECT_NE(short_row.find("expected 3"), std::string::npos);

    EXPECT_NE(error_of("FEATSET 1\n1 2 2\n2,1,1\n").find(":3: label 2 out of range"), std::string::npos);
    EXPECT_NE(error_of("FEATSET 1\n1 2 2\n0,1,x\n").find(":3: invalid feature value"), std::string::npos);
    EXPECT_NE(error_of("FEATSET 1\n2 2 2\n0,1,1\n").find("declares 2 rows"), std::string::npos);
}

TEST(Featset, SkipsCommentLines)
{
    const auto f = parse("FEATSET 1\n# backbone=resnet50\n1 2 2\n# normalization=imagenet\n1,0.25,0.75\n");
    EXPECT_EQ(f.split.rows(), 1u);
}

TEST(Featset, SerializeThenLoadRoundTrips)
{
    const testkit::GaussianClasses g(3, 5, 6.0, 0.0, 9);
    const auto ds = testkit::make_dataset(g, 30, 12, 4);
    const auto dir = std::filesystem::temp_directory_path() / "moprune_featset_rt";
    std::filesystem::create_directories(dir);
    write_featset(dir / "train.featset", ds.train, ds.num_classes);
    write_featset(dir / "test.featset", ds.test, ds.num_classes);
    auto loaded = load_feature_dataset(ds.name, dir / "train.featset", dir / "test.featset");
    EXPECT_EQ(loaded, ds);
    std::filesystem::remove_all(dir);
}

TEST(Featset, MissingFileIsValidationError)
{
    EXPECT_THROW(read_featset("/nonexistent/file.featset"), ValidationError);
}

TEST(EvolutionConfig, DefaultsAndValidation)
{
    EvolutionConfig cfg;
    EXPECT_EQ(cfg.max_evals, 200u);
    EXPECT_EQ(cfg.population_size, 30u);
    EXPECT_EQ(cfg.batch_size, 32u);
    EXPECT_DOUBLE_EQ(cfg.odin_temperature, 1000.0);
    EXPECT_EQ(cfg.max_epochs, 600u);
    EXPECT_EQ(cfg.early_stop_patience, 10u);
    EXPECT_DOUBLE_EQ(cfg.mutation_prob_for(2048), 1.0 / 2048.0);
    EXPECT_NO_THROW(cfg.validate());

    cfg.population_size = 1;
    EXPECT_THROW(cfg.validate(), ValidationError);
    cfg.population_size = 30;
    cfg.max_evals = 29;
    EXPECT_THROW(cfg.validate(), ValidationError);
    cfg.max_evals = 200;
    cfg.mutation_prob = 1.5;
    EXPECT_THROW(cfg.validate(), ValidationError);
}
