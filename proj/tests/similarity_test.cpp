#include <gtest/gtest.h>

#include "mmnd/similarity.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace mmnd;
using namespace mmnd::testutil;

namespace {

FeatureSequence seq_of(Modality m, std::vector<Vec> vecs) {
    return make_sequence(m, std::move(vecs));
}

std::vector<Vec> to_vecs(const FeatureSequence& s) { return s.elements; }

}  // namespace

TEST(CosineTest, Examples) {
    EXPECT_DOUBLE_EQ(cosine(basis(3, 0), basis(3, 0)), 1.0);
    EXPECT_DOUBLE_EQ(cosine(basis(3, 0), basis(3, 1)), 0.0);
    EXPECT_NEAR(cosine({1.0, 1.0}, {1.0, 0.0}), 1.0 / std::sqrt(2.0), 1e-15);
}

TEST(CosineTest, Errors) {
    EXPECT_MMND_ERROR(cosine({1.0, 0.0}, {1.0}), ErrorCode::DimMismatch);
    EXPECT_MMND_ERROR(cosine({0.0, 0.0}, {1.0, 0.0}), ErrorCode::ZeroVector);
}

TEST(CosineTest, SymmetryExactAndScaleInvariance) {
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
        Vec a = rng.normal_vec(6), b = rng.normal_vec(6);
        EXPECT_EQ(cosine(a, b), cosine(b, a));
        Vec a4 = a;
        for (auto& x : a4) x *= 4.0;
        EXPECT_NEAR(cosine(a4, b), cosine(a, b), 1e-12);
    }
}

TEST(CosineTest, ClampedToRange) {
    Vec a = {1e-8, 1e8}, b = {2e-8, 2e8};
    double c = cosine(a, b);
    EXPECT_LE(c, 1.0);
    EXPECT_GE(c, -1.0);
}

TEST(TopKTest, PoolOfOne) {
    Pool pool;
    pool.modality = Modality::Video;
    Vec only = {0.3, 0.7};
    pool.indices = {4};
    pool.vectors = {&only};
    NeighborSet ns = top_k({1.0, 0.0}, pool, 5);
    ASSERT_EQ(ns.members.size(), 1u);
    EXPECT_EQ(ns.members[0].id.index, 4u);
}

TEST(TopKTest, SelfRanksFirst) {
    Rng rng(5);
    FeatureSequence seq = random_sequence(rng, Modality::Video, 6, 4);
    Pool pool = make_pool(seq);
    NeighborSet ns = top_k(seq.elements[3], pool, 3);
    EXPECT_EQ(ns.members[0].id.index, 3u);
    EXPECT_DOUBLE_EQ(ns.members[0].score, 1.0);
}

TEST(TopKTest, MatchesBruteForceSort) {
    std::vector<Vec> vecs = {{1.0, 0.1}, {0.2, 1.0}, {-1.0, 0.4}, {0.9, 0.9}, {0.5, -0.5}};
    FeatureSequence seq = seq_of(Modality::Video, vecs);
    Pool pool = make_pool(seq);
    Vec anchor = {1.0, 0.2};
    NeighborSet ns = top_k(anchor, pool, 2);
    auto expected = oracle::brute_top_k(anchor, vecs, 2);
    ASSERT_EQ(ns.members.size(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i)
        EXPECT_EQ(ns.members[i].id.index, expected[i]);
}

TEST(TopKTest, EmptyPool) {
    Pool pool;
    EXPECT_MMND_ERROR(top_k({1.0}, pool, 1), ErrorCode::EmptyPool);
}

TEST(KReciprocalTest, SingletonPoolsAreMutual) {
    FeatureSequence video = seq_of(Modality::Video, {{0.4, 0.2}});
    FeatureSequence text = seq_of(Modality::Text, {{-0.3, 0.9}});
    ReciprocalSet rs = k_reciprocal({Modality::Text, 0}, video, text, 1, ReciprocalMode::Cross);
    ASSERT_EQ(rs.members.size(), 1u);
    EXPECT_EQ(rs.members.begin()->index, 0u);
    EXPECT_EQ(rs.members.begin()->modality, Modality::Video);
}

// anchor's nearest frame prefers another word: the reciprocal set is empty
TEST(KReciprocalTest, NonMutualConfigurationYieldsEmptySet) {
    FeatureSequence text = seq_of(Modality::Text, {{1.0, 0.0}, {0.9, 0.44}});
    FeatureSequence video = seq_of(Modality::Video, {{0.92, 0.39}, {0.0, 1.0}});
    ReciprocalSet rs = k_reciprocal({Modality::Text, 0}, video, text, 1, ReciprocalMode::Cross);
    EXPECT_TRUE(rs.members.empty());
    // confirm against exhaustive enumeration
    auto expected = oracle::brute_cross_reciprocal(0, to_vecs(text), to_vecs(video), 1);
    EXPECT_TRUE(expected.empty());
}

TEST(KReciprocalTest, MissingAnchorRejected) {
    FeatureSequence text = seq_of(Modality::Text, {{1.0, 0.0}, {0.0, 1.0}});
    FeatureSequence video = seq_of(Modality::Video, {{1.0, 0.5}});
    mask_slot(text, 0);
    EXPECT_MMND_ERROR(k_reciprocal({Modality::Text, 0}, video, text, 1, ReciprocalMode::Cross),
                      ErrorCode::MissingAnchor);
}

TEST(KReciprocalTest, EmptyPoolRejected) {
    FeatureSequence text = seq_of(Modality::Text, {{1.0, 0.0}});
    FeatureSequence video = seq_of(Modality::Video, {{1.0, 0.5}});
    mask_slot(video, 0);
    EXPECT_MMND_ERROR(k_reciprocal({Modality::Text, 0}, video, text, 1, ReciprocalMode::Cross),
                      ErrorCode::EmptyPool);
}

TEST(KReciprocalTest, RandomInstancesMatchBruteForce) {
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        Rng rng(seed_for(seed, "kr"));
        std::size_t t = 2 + rng.index(11), m = 2 + rng.index(11);
        std::size_t k = 1 + rng.index(5);
        FeatureSequence video = random_sequence(rng, Modality::Video, t, 5);
        FeatureSequence text = random_sequence(rng, Modality::Text, m, 5);

        for (std::size_t a = 0; a < m; ++a) {
            ReciprocalSet rs =
                k_reciprocal({Modality::Text, a}, video, text, k, ReciprocalMode::Cross);
            auto expected = oracle::brute_cross_reciprocal(a, to_vecs(text), to_vecs(video), k);
            std::set<std::size_t> got;
            for (const auto& id : rs.members) {
                EXPECT_EQ(id.modality, Modality::Video);
                got.insert(id.index);
            }
            EXPECT_EQ(got, expected) << "cross seed=" << seed << " a=" << a;
        }
        for (std::size_t i = 0; i < t; ++i) {
            ReciprocalSet rs =
                k_reciprocal({Modality::Video, i}, video, text, k, ReciprocalMode::Intra);
            auto expected = oracle::brute_intra_reciprocal(i, to_vecs(video), k);
            std::set<std::size_t> got;
            for (const auto& id : rs.members) got.insert(id.index);
            EXPECT_EQ(got, expected) << "intra seed=" << seed << " i=" << i;
        }
    }
}

TEST(KReciprocalTest, MutualityPropertyHolds) {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        Rng rng(seed_for(seed, "mutual"));
        std::size_t t = 2 + rng.index(31), m = 2 + rng.index(31);
        std::size_t k = 1 + rng.index(6);
        FeatureSequence video = random_sequence(rng, Modality::Video, t, 4);
        FeatureSequence text = random_sequence(rng, Modality::Text, m, 4);
        std::size_t a = rng.index(m);
        ReciprocalSet rs =
            k_reciprocal({Modality::Text, a}, video, text, k, ReciprocalMode::Cross);
        Pool vpool = make_pool(video), tpool = make_pool(text);
        for (const auto& id : rs.members) {
            NeighborSet forward = top_k(text.elements[a], vpool, k);
            NeighborSet backward = top_k(video.elements[id.index], tpool, k);
            EXPECT_TRUE(forward.contains(id));
            EXPECT_TRUE(backward.contains({Modality::Text, a}));
        }
    }
}

TEST(JaccardTest, HandCases) {
    ReciprocalSet a, b;
    a.members = {{Modality::Video, 1}, {Modality::Video, 2}};
    b.members = {{Modality::Video, 1}, {Modality::Video, 2}};
    EXPECT_DOUBLE_EQ(jaccard_distance(a, b), 0.0);

    b.members = {{Modality::Video, 3}, {Modality::Video, 4}};
    EXPECT_DOUBLE_EQ(jaccard_distance(a, b), 1.0);

    // {a,b} vs {a,c}: intersection 1, union 3
    b.members = {{Modality::Video, 1}, {Modality::Video, 3}};
    EXPECT_DOUBLE_EQ(jaccard_distance(a, b), 2.0 / 3.0);
}

TEST(JaccardTest, BothEmptyIsError) {
    ReciprocalSet a, b;
    EXPECT_MMND_ERROR(jaccard_distance(a, b), ErrorCode::BothEmpty);
}

TEST(JaccardTest, RandomPairsRangeAndSymmetry) {
    Rng rng(17);
    for (int trial = 0; trial < 1000; ++trial) {
        ReciprocalSet a, b;
        std::size_t na = rng.index(6), nb = 1 + rng.index(5);
        for (std::size_t i = 0; i < na; ++i) a.members.insert({Modality::Video, rng.index(8)});
        for (std::size_t i = 0; i < nb; ++i) b.members.insert({Modality::Video, rng.index(8)});
        double j = jaccard_distance(a, b);
        EXPECT_GE(j, 0.0);
        EXPECT_LE(j, 1.0);
        EXPECT_DOUBLE_EQ(j, jaccard_distance(b, a));
        EXPECT_DOUBLE_EQ(jaccard_distance(b, b), 0.0);
    }
}

TEST(SelectK0Test, AllCandidatesWhenK0Large) {
    Rng rng(23);
    FeatureSequence video = random_sequence(rng, Modality::Video, 8, 4);
    FeatureSequence text = random_sequence(rng, Modality::Text, 6, 4);
    ReciprocalSet cands = k_reciprocal({Modality::Text, 2}, video, text, 4, ReciprocalMode::Cross);
    NeighborSet picked = select_k0_neighbors({Modality::Text, 2}, video, text, 4, 4);
    EXPECT_EQ(picked.members.size(), cands.members.size());
    for (const auto& m : picked.members) EXPECT_EQ(cands.members.count(m.id), 1u);
}

TEST(SelectK0Test, IdenticalReciprocalSetRanksFirst) {
    FeatureSequence text = seq_of(Modality::Text, {{1.0, 0.0}});
    FeatureSequence video = seq_of(Modality::Video, {{2.0, 0.0}, {0.8, 0.6}, {0.0, 1.0}});
    NeighborSet picked = select_k0_neighbors({Modality::Text, 0}, video, text, 3, 1);
    ASSERT_FALSE(picked.members.empty());
    auto expected = oracle::brute_select_k0(0, to_vecs(text), to_vecs(video), 3, 1);
    ASSERT_EQ(picked.members.size(), expected.size());
    EXPECT_EQ(picked.members[0].id.index, expected[0]);
}

TEST(SelectK0Test, TenPointInstanceMatchesOracle) {
    Rng rng(31);
    FeatureSequence video = random_sequence(rng, Modality::Video, 10, 5);
    FeatureSequence text = random_sequence(rng, Modality::Text, 10, 5);
    for (std::size_t a = 0; a < 10; ++a) {
        NeighborSet picked = select_k0_neighbors({Modality::Text, a}, video, text, 4, 2);
        auto expected = oracle::brute_select_k0(a, to_vecs(text), to_vecs(video), 4, 2);
        ASSERT_EQ(picked.members.size(), expected.size()) << "a=" << a;
        for (std::size_t i = 0; i < expected.size(); ++i)
            EXPECT_EQ(picked.members[i].id.index, expected[i]) << "a=" << a;
    }
}

TEST(SelectK0Test, OutputSubsetOfReciprocalCandidates) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed_for(seed, "subset"));
        std::size_t t = 3 + rng.index(10), m = 3 + rng.index(10);
        FeatureSequence video = random_sequence(rng, Modality::Video, t, 4);
        FeatureSequence text = random_sequence(rng, Modality::Text, m, 4);
        std::size_t k = 2 + rng.index(3);
        std::size_t k0 = 1 + rng.index(k);
        std::size_t a = rng.index(m);
        ReciprocalSet cands =
            k_reciprocal({Modality::Text, a}, video, text, k, ReciprocalMode::Cross);
        NeighborSet picked = select_k0_neighbors({Modality::Text, a}, video, text, k, k0);
        EXPECT_LE(picked.members.size(), k0);
        for (const auto& mem : picked.members) EXPECT_EQ(cands.members.count(mem.id), 1u);
    }
}
