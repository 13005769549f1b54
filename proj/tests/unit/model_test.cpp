#include "instances.hpp"
#include "naive.hpp"

#include "simsbm/em.hpp"
#include "simsbm/errors.hpp"
#include "simsbm/model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numeric>
#include <random>

using namespace simsbm;

namespace {

using RowFn = std::function<std::vector<double>(const std::vector<std::uint32_t>&)>;

Model make_model(const ModelSpec& spec, const std::vector<std::vector<std::vector<double>>>& theta, const RowFn& p) {
    auto layout = std::make_shared<const Layout>(spec);
    std::vector<MembershipMatrix> memberships;
    for (std::size_t t = 0; t < spec.types.size(); ++t) {
        MembershipMatrix m(spec.types[t].name, spec.types[t].entity_count, spec.types[t].cluster_count);
        for (std::size_t e = 0; e < theta[t].size(); ++e)
            for (std::size_t k = 0; k < theta[t][e].size(); ++k) m(e, k) = theta[t][e][k];
        memberships.push_back(std::move(m));
    }
    auto rows = RowStore::dense(layout->canonical_count(), spec.output_count);
    rows.for_each_mutable([&](std::uint64_t key, std::span<double> row) {
        const auto values = p(layout->canonical_key(key));
        std::copy(values.begin(), values.end(), row.begin());
    });
    return Model(layout, spec, std::move(memberships), ClusterTensor(layout, std::move(rows)));
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

} // namespace

TEST(Predict, SingleClusterCollapse) {
    const ModelSpec spec{{{"f", 3, 1}, {"g", 2, 1}}, {"f", "f", "g"}, 3};
    const auto model = make_model(spec, {{{1.0}, {1.0}, {1.0}}, {{1.0}, {1.0}}},
                                  [](const auto&) { return std::vector<double>{0.2, 0.3, 0.5}; });
    const std::vector<std::uint32_t> ctx{2, 0, 1};
    EXPECT_EQ(predict(model, ctx), (std::vector<double>{0.2, 0.3, 0.5}));
}

TEST(Predict, OneHotMembershipSelectsTensorRow) {
    const ModelSpec spec{{{"f", 3, 2}, {"g", 2, 3}}, {"f", "g", "f"}, 2};
    // f0 -> 1, f1 -> 0, f2 -> 1; g0 -> 2, g1 -> 0.
    const std::vector<std::vector<std::vector<double>>> theta{
        {{0, 1}, {1, 0}, {0, 1}}, {{0, 0, 1}, {1, 0, 0}}};
    const auto row_of = [](const std::vector<std::uint32_t>& k) {
        const double a = 0.1 + 0.1 * (k[0] + k[2]) + 0.05 * k[1];
        return std::vector<double>{a, 1.0 - a};
    };
    const auto model = make_model(spec, theta, row_of);
    const std::vector<std::uint32_t> ctx{1, 0, 2};
    const auto probs = predict(model, ctx);
    const auto expected = row_of({0, 2, 1});
    EXPECT_DOUBLE_EQ(probs[0], expected[0]);
    EXPECT_DOUBLE_EQ(probs[1], expected[1]);
}

TEST(Predict, MatchesExhaustiveSumForInteractingPair) {
    const ModelSpec spec{{{"f", 4, 2}}, {"f", "f"}, 2};
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto model = init_params(spec, seed);
        const auto nm = testing_support::to_naive(model);
        for (std::uint32_t a = 0; a < 4; ++a)
            for (std::uint32_t b = 0; b < 4; ++b) {
                const std::vector<std::uint32_t> ctx{a, b};
                const auto got = predict(model, ctx);
                const auto want = oracle::naive_predict(nm, ctx);
                for (std::size_t o = 0; o < 2; ++o) EXPECT_NEAR(got[o], want[o], 1e-12);
            }
    }
}

TEST(Predict, UniformParametersGiveUniformOutput) {
    const ModelSpec spec{{{"f", 3, 3}, {"g", 2, 2}}, {"f", "g", "f"}, 4};
    const std::vector<std::vector<std::vector<double>>> theta{
        std::vector<std::vector<double>>(3, std::vector<double>(3, 1.0 / 3)),
        std::vector<std::vector<double>>(2, std::vector<double>(2, 0.5))};
    const auto model = make_model(spec, theta, [](const auto&) { return std::vector<double>(4, 0.25); });
    const std::vector<std::uint32_t> ctx{0, 1, 2};
    for (double v : predict(model, ctx)) EXPECT_NEAR(v, 0.25, 1e-12);
}

TEST(Predict, IsProbabilityVectorOnRandomModels) {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 30; ++i) {
        const auto spec = testing_support::random_spec(rng, {});
        const auto model = init_params(spec, rng());
        const auto data = testing_support::random_dataset(spec, rng, {});
        for (std::size_t r = 0; r < data.size(); ++r) {
            const auto probs = predict(model, data[r].context);
            EXPECT_NEAR(sum(probs), 1.0, 1e-9);
            for (double v : probs) EXPECT_GE(v, 0.0);
        }
    }
}

TEST(Predict, RejectsOutOfRangeContext) {
    const ModelSpec spec{{{"f", 3, 2}}, {"f", "f"}, 2};
    const auto model = init_params(spec, 1);
    const std::vector<std::uint32_t> bad{0, 3};
    const std::vector<std::uint32_t> short_ctx{0};
    EXPECT_THROW(predict(model, bad), std::out_of_range);
    EXPECT_THROW(predict(model, short_ctx), std::out_of_range);
}

TEST(LogLikelihood, CertainModelGivesZero) {
    const ModelSpec spec{{{"f", 2, 1}}, {"f"}, 2};
    const auto model = make_model(spec, {{{1.0}, {1.0}}}, [](const auto&) { return std::vector<double>{1.0, 0.0}; });
    const std::vector<Observation> rows{{{0}, 0, 3}, {{1}, 0, 1}};
    EXPECT_EQ(log_likelihood(model, Dataset(spec, rows)), 0.0);
}

TEST(LogLikelihood, DirectSubstitution) {
    const ModelSpec spec{{{"f", 1, 1}}, {"f"}, 2};
    const auto model = make_model(spec, {{{1.0}}}, [](const auto&) { return std::vector<double>{0.5, 0.5}; });
    const std::vector<Observation> rows{{{0}, 1, 2}};
    EXPECT_NEAR(log_likelihood(model, Dataset(spec, rows)), 2.0 * std::log(0.5), 1e-15);
}

TEST(LogLikelihood, ZeroProbabilityIsFloored) {
    const ModelSpec spec{{{"f", 1, 1}}, {"f"}, 2};
    const auto model = make_model(spec, {{{1.0}}}, [](const auto&) { return std::vector<double>{1.0, 0.0}; });
    const std::vector<Observation> rows{{{0}, 1, 3}};
    const double ll = log_likelihood(model, Dataset(spec, rows));
    EXPECT_TRUE(std::isfinite(ll));
    EXPECT_NEAR(ll, 3.0 * std::log(kProbabilityFloor), 1e-9);
}

TEST(LogLikelihood, MatchesSumOfLogPredictions) {
    std::mt19937_64 rng(12);
    for (int i = 0; i < 30; ++i) {
        const auto spec = testing_support::random_spec(rng, {});
        const auto model = init_params(spec, rng());
        const auto data = testing_support::random_dataset(spec, rng, {});
        double expected = 0.0;
        for (std::size_t r = 0; r < data.size(); ++r)
            expected += static_cast<double>(data[r].count) * std::log(predict(model, data[r].context)[data[r].output]);
        EXPECT_NEAR(log_likelihood(model, data), expected, 1e-9);
        EXPECT_LE(log_likelihood(model, data), 0.0);
    }
}

TEST(ModelTest, ShapeMismatchThrows) {
    const ModelSpec spec{{{"f", 3, 2}}, {"f"}, 2};
    auto layout = std::make_shared<const Layout>(spec);
    std::vector<MembershipMatrix> wrong{MembershipMatrix("f", 2, 2, 0.5)};
    EXPECT_THROW(Model(layout, spec, wrong, ClusterTensor::uniform(layout)), SpecError);
}

TEST(ModelTest, NormalizationViolationsFlagBadRows) {
    const ModelSpec spec{{{"f", 2, 2}}, {"f"}, 2};
    const auto good = make_model(spec, {{{0.5, 0.5}, {1.0, 0.0}}}, [](const auto&) { return std::vector<double>{0.4, 0.6}; });
    EXPECT_TRUE(normalization_violations(good, 1e-9).empty());
    const auto bad = make_model(spec, {{{0.5, 0.6}, {1.0, 0.0}}}, [](const auto&) { return std::vector<double>{0.4, 0.6}; });
    EXPECT_EQ(normalization_violations(bad, 1e-9).size(), 1u);
}

TEST(ModelTest, LargeSpecsUseSparseTensorWithUniformFallback) {
    const ModelSpec spec{{{"f", 2, 100}}, {"f", "f", "f", "f"}, 5};
    const auto layout = std::make_shared<const Layout>(spec);
    EXPECT_FALSE(use_dense_storage(*layout));
    const auto tensor = ClusterTensor::uniform(layout);
    EXPECT_FALSE(tensor.is_dense());
    EXPECT_EQ(tensor.rows().stored(), 0u);
    for (double v : tensor.row(12345)) EXPECT_DOUBLE_EQ(v, 0.2);
}

TEST(ModelTest, NonCanonicalLookupRedirects) {
    const ModelSpec spec{{{"f", 2, 3}, {"g", 2, 2}}, {"f", "g", "f"}, 2};
    const auto model = init_params(spec, 3);
    const std::vector<std::uint32_t> a{2, 1, 0};
    const std::vector<std::uint32_t> b{0, 1, 2};
    EXPECT_EQ(model.p(a, 0), model.p(b, 0));
    EXPECT_EQ(model.p(a, 1), model.p(b, 1));
}
