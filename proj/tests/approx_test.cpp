#include <gtest/gtest.h>

#include "mmnd/completion.hpp"
#include "mmnd/eval.hpp"
#include "mmnd/gradcheck.hpp"
#include "mmnd/synthetic.hpp"
#include "test_util.hpp"

using namespace mmnd;
using namespace mmnd::testutil;

namespace {

const double kE = std::exp(1.0);

PrototypeBank random_bank(Rng& rng, std::size_t dim, std::size_t np = 3, std::size_t heads = 2) {
    PrototypeBank bank = PrototypeBank::init(dim, np, heads, rng.next());
    bank.for_each_param([&rng](const char*, Matrix& p) {
        for (auto& x : p.data) x = rng.uniform(-0.6, 0.6);
    });
    return bank;
}

}  // namespace

TEST(AffinityTest, IdenticalNodes) {
    Vec u = {0.3, -0.4, 0.5};
    AffinityGraph g = build_affinity(u, {u, u, u});
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            EXPECT_NEAR(g.m1(i, j), kE, 1e-12);
            EXPECT_NEAR(g.mv(i, j), 0.25, 1e-12);
        }
    Vec approx = approximate_feature(g);
    for (std::size_t i = 0; i < u.size(); ++i) EXPECT_NEAR(approx[i], u[i], 1e-12);
}

TEST(AffinityTest, TwoOrthogonalNodesClosedForm) {
    AffinityGraph g = build_affinity(basis(2, 0), {basis(2, 1)});
    EXPECT_NEAR(g.m1(0, 0), kE, 1e-15);
    EXPECT_NEAR(g.m1(0, 1), 1.0, 1e-15);
    EXPECT_NEAR(g.m1(1, 0), 1.0, 1e-15);
    EXPECT_NEAR(g.m1(1, 1), kE, 1e-15);
    EXPECT_NEAR(g.mv(0, 0), kE / (kE + 1.0), 1e-15);
    EXPECT_NEAR(g.mv(0, 1), 1.0 / (kE + 1.0), 1e-15);

    Vec approx = approximate_feature(g);
    EXPECT_NEAR(approx[0], kE / (kE + 1.0), 1e-15);
    EXPECT_NEAR(approx[1], 1.0 / (kE + 1.0), 1e-15);
}

TEST(AffinityTest, RandomGraphsRowStochasticSymmetricBounded) {
    Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        std::size_t n_neighbors = 1 + rng.index(6);
        std::size_t dim = 2 + rng.index(5);
        Vec anchor = rng.normal_vec(dim);
        std::vector<Vec> nbrs;
        for (std::size_t i = 0; i < n_neighbors; ++i) nbrs.push_back(rng.normal_vec(dim));
        AffinityGraph g = build_affinity(anchor, nbrs);
        std::size_t n = n_neighbors + 1;
        for (std::size_t i = 0; i < n; ++i) {
            double row_sum = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                EXPECT_EQ(g.m1(i, j), g.m1(j, i));
                EXPECT_GE(g.m1(i, j), 1.0 / kE - 1e-12);
                EXPECT_LE(g.m1(i, j), kE + 1e-12);
                EXPECT_GE(g.mv(i, j), 0.0);
                row_sum += g.mv(i, j);
            }
            EXPECT_NEAR(row_sum, 1.0, 1e-9);
        }
    }
}

TEST(AffinityTest, ApproxInsideComponentwiseBoundingBox) {
    Rng rng(13);
    for (int trial = 0; trial < 1000; ++trial) {
        std::size_t n_neighbors = 1 + rng.index(5);
        std::size_t dim = 2 + rng.index(4);
        Vec anchor = rng.normal_vec(dim);
        std::vector<Vec> nbrs;
        for (std::size_t i = 0; i < n_neighbors; ++i) nbrs.push_back(rng.normal_vec(dim));
        AffinityGraph g = build_affinity(anchor, nbrs);
        Vec approx = approximate_feature(g);
        for (std::size_t j = 0; j < dim; ++j) {
            double lo = anchor[j], hi = anchor[j];
            for (const auto& nb : nbrs) {
                lo = std::min(lo, nb[j]);
                hi = std::max(hi, nb[j]);
            }
            EXPECT_GE(approx[j], lo - 1e-12);
            EXPECT_LE(approx[j], hi + 1e-12);
        }
    }
}

TEST(AffinityTest, ZeroVectorNodeRejected) {
    EXPECT_MMND_ERROR(build_affinity(Vec{0.0, 0.0}, {Vec{1.0, 0.0}}), ErrorCode::ZeroVector);
    EXPECT_MMND_ERROR(build_affinity(Vec{1.0, 0.0}, {}), ErrorCode::EmptyPool);
}

TEST(AffinityTest, BackwardMatchesFiniteDifferences) {
    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        std::size_t dim = 3 + rng.index(3);
        std::size_t n_neighbors = 1 + rng.index(4);
        Vec anchor = rng.normal_vec(dim);
        std::vector<Vec> nbrs;
        for (std::size_t i = 0; i < n_neighbors; ++i) nbrs.push_back(rng.normal_vec(dim));
        Vec d_approx = rng.normal_vec(dim);

        AffinityGraph g = build_affinity(anchor, nbrs);
        std::vector<Vec> analytic = approximate_feature_backward(g, d_approx);

        auto eval = [&] {
            AffinityGraph gg = build_affinity(anchor, nbrs);
            return dot(d_approx, approximate_feature(gg));
        };
        double worst = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            double fd = central_diff(eval, anchor[j]);
            worst = std::max(worst, grad_rel_err(analytic[0][j], fd));
        }
        for (std::size_t ni = 0; ni < n_neighbors; ++ni)
            for (std::size_t j = 0; j < dim; ++j) {
                double fd = central_diff(eval, nbrs[ni][j]);
                worst = std::max(worst, grad_rel_err(analytic[ni + 1][j], fd));
            }
        EXPECT_LT(worst, 1e-6) << "trial " << trial;
    }
}

TEST(PrototypeTest, ZeroOutputWeightsGiveIdentity) {
    Rng rng(19);
    PrototypeBank bank = PrototypeBank::init(6, 4, 2, 123);  // ffn_w2/b2 zero at init
    FeatureSequence seq = random_sequence(rng, Modality::Video, 5, 6);
    mask_slot(seq, 2);
    FeatureSequence out = reconstruct_with_prototypes(seq, bank);
    EXPECT_EQ(out.elements, seq.elements);
    EXPECT_EQ(out.mask, seq.mask);
}

TEST(PrototypeTest, SinglePresentElementSinglePrototypeClosedForm) {
    // one present element, one prototype, one head: the attention weight is 1
    // and the block reduces to x + FFN(x + x Wv Wo)
    const std::size_t d = 3;
    Rng rng(21);
    PrototypeBank bank = random_bank(rng, d, 1, 1);
    Vec x = {0.4, -0.2, 0.7};
    FeatureSequence seq = make_sequence(Modality::Video, {x});

    FeatureSequence out = reconstruct_with_prototypes(seq, bank);

    Vec v(d, 0.0), mca(d, 0.0);
    for (std::size_t j = 0; j < d; ++j)
        for (std::size_t i = 0; i < d; ++i) v[j] += x[i] * bank.wv(i, j);
    for (std::size_t j = 0; j < d; ++j)
        for (std::size_t i = 0; i < d; ++i) mca[j] += v[i] * bank.wo(i, j);
    Vec u(d), hidden(d, 0.0), expected(d);
    for (std::size_t j = 0; j < d; ++j) u[j] = x[j] + mca[j];
    for (std::size_t j = 0; j < d; ++j) {
        double a = bank.ffn_b1(0, j);
        for (std::size_t i = 0; i < d; ++i) a += u[i] * bank.ffn_w1(i, j);
        hidden[j] = std::tanh(a);
    }
    for (std::size_t j = 0; j < d; ++j) {
        double f = bank.ffn_b2(0, j);
        for (std::size_t i = 0; i < d; ++i) f += hidden[i] * bank.ffn_w2(i, j);
        expected[j] = x[j] + f;
    }
    for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(out.elements[0][j], expected[j], 1e-12);
}

TEST(PrototypeTest, GradientOfSquaredNormMatchesFiniteDifferences) {
    Rng rng(23);
    for (int trial = 0; trial < 3; ++trial) {
        const std::size_t dim = 6;
        PrototypeBank bank = random_bank(rng, dim);
        FeatureSequence seq = random_sequence(rng, Modality::Video, 4, dim);
        mask_slot(seq, 1);

        auto eval = [&] {
            FeatureSequence out = reconstruct_with_prototypes(seq, bank);
            double s = 0.0;
            for (std::size_t i = 0; i < out.size(); ++i)
                if (out.mask[i]) s += dot(out.elements[i], out.elements[i]);
            return s;
        };
        ReconstructionTrace trace;
        FeatureSequence out = reconstruct_forward(seq, bank, trace);
        Matrix d_out(trace.present.size(), dim);
        for (std::size_t r = 0; r < trace.present.size(); ++r)
            for (std::size_t j = 0; j < dim; ++j)
                d_out(r, j) = 2.0 * out.elements[trace.present[r]][j];
        PrototypeBank analytic = PrototypeBank::zeros_like(bank);
        reconstruct_backward(bank, trace, d_out, analytic);

        GradCheckReport report = check_param_gradients(bank, analytic, eval);
        EXPECT_LT(report.worst(), 1e-4) << "trial " << trial;
    }
}

TEST(PrototypeTest, DimMismatchRejected) {
    PrototypeBank bank = PrototypeBank::init(4, 2, 2, 1);
    FeatureSequence seq = make_sequence(Modality::Video, {Vec{1.0, 2.0}});
    EXPECT_MMND_ERROR(reconstruct_with_prototypes(seq, bank), ErrorCode::DimMismatch);
}

TEST(CompleteTest, FullyPresentPairPassesThrough) {
    Rng rng(29);
    PairedSample pair = random_present_pair(rng, 5, 4, 6);
    PrototypeBank bank = random_bank(rng, 6);
    CompletionResult r = complete_pair(pair, bank, 3, 2);
    EXPECT_EQ(r.completed.video.elements, pair.video.elements);
    EXPECT_EQ(r.completed.text.elements, pair.text.elements);
    EXPECT_TRUE(r.video_memory.empty());
    EXPECT_TRUE(r.text_memory.empty());
}

TEST(CompleteTest, NoiseFreeSyntheticRecoversHeldOutFrame) {
    SyntheticConfig cfg;
    cfg.num_pairs = 3;
    cfg.frames_per_video = 12;
    cfg.words_per_text = 10;
    cfg.dim = 16;
    cfg.latent_dim = 6;
    cfg.noise_std = 0.0;
    cfg.seed = 5;
    Dataset data = generate_synthetic(cfg);
    PrototypeBank bank = PrototypeBank::init(cfg.dim, 4, 2, 7);  // identity at init

    for (const auto& original : data) {
        PairedSample corrupted = original;
        mask_slot(corrupted.video, 6);
        CompletionResult r = complete_pair(corrupted, bank, 5, 3);
        ASSERT_EQ(r.video_memory.slots.size(), 1u);
        EXPECT_TRUE(r.completed.video.mask[6]);
        double c = cosine(r.completed.video.elements[6], original.video.elements[6]);
        EXPECT_GT(c, 0.99);
    }
}

TEST(CompleteTest, IdentityRefinerEqualsDefault) {
    Rng rng(31);
    PairedSample pair = random_present_pair(rng, 6, 5, 6);
    mask_slot(pair.video, 2);
    mask_slot(pair.text, 3);
    PrototypeBank bank = random_bank(rng, 6);
    CompletionResult a = complete_pair(pair, bank, 3, 2);
    CompletionResult b = complete_pair(pair, bank, 3, 2, identity_refiner());
    EXPECT_EQ(a.completed.video.elements, b.completed.video.elements);
    EXPECT_EQ(a.completed.text.elements, b.completed.text.elements);
}

TEST(CompleteTest, RefinerOutputIsApplied) {
    Rng rng(37);
    PairedSample pair = random_present_pair(rng, 6, 5, 6);
    mask_slot(pair.video, 2);
    PrototypeBank bank = random_bank(rng, 6);
    Refiner doubler = [](CompletionMemory& vm, CompletionMemory&) {
        for (auto& sc : vm.slots)
            for (auto& x : sc.approximated) x *= 2.0;
    };
    CompletionResult plain = complete_pair(pair, bank, 3, 2);
    CompletionResult refined = complete_pair(pair, bank, 3, 2, doubler);
    for (std::size_t j = 0; j < 6; ++j)
        EXPECT_DOUBLE_EQ(refined.completed.video.elements[2][j],
                         2.0 * plain.completed.video.elements[2][j]);
}

TEST(CompleteTest, RefinerShapeViolationRejected) {
    Rng rng(41);
    PairedSample pair = random_present_pair(rng, 6, 5, 6);
    mask_slot(pair.video, 2);
    PrototypeBank bank = random_bank(rng, 6);
    Refiner bad = [](CompletionMemory& vm, CompletionMemory&) {
        for (auto& sc : vm.slots) sc.approximated.push_back(0.0);
    };
    EXPECT_MMND_ERROR(complete_pair(pair, bank, 3, 2, bad), ErrorCode::DimMismatch);
}

TEST(CompleteTest, IdempotentOnCompletedPair) {
    Rng rng(43);
    PairedSample pair = random_present_pair(rng, 6, 5, 6);
    mask_slot(pair.video, 1);
    mask_slot(pair.text, 4);
    PrototypeBank bank = random_bank(rng, 6);
    CompletionResult first = complete_pair(pair, bank, 3, 2);
    CompletionResult second = complete_pair(first.completed, bank, 3, 2);
    EXPECT_EQ(second.completed.video.elements, first.completed.video.elements);
    EXPECT_EQ(second.completed.text.elements, first.completed.text.elements);
    EXPECT_TRUE(second.video_memory.empty());
}

TEST(CompleteTest, NoAnchorWhenOppositeModalityMissing) {
    Rng rng(47);
    PairedSample pair = random_present_pair(rng, 4, 3, 6);
    mask_slot(pair.video, 0);
    for (std::size_t m = 0; m < pair.text.size(); ++m) mask_slot(pair.text, m);
    PrototypeBank bank = random_bank(rng, 6);
    EXPECT_MMND_ERROR(complete_pair(pair, bank, 3, 2), ErrorCode::NoAnchor);
}

TEST(CompleteTest, VariantCountMatchesNeighborCount) {
    Rng rng(53);
    PairedSample pair = random_present_pair(rng, 8, 7, 6);
    mask_slot(pair.video, 3);
    PrototypeBank bank = random_bank(rng, 6);
    CompletionResult r = complete_pair(pair, bank, 4, 3);
    ASSERT_EQ(r.video_memory.slots.size(), 1u);
    const SlotCompletion& sc = r.video_memory.slots[0];
    EXPECT_EQ(sc.variants.size(), sc.neighbor_ids.size());
    EXPECT_LE(sc.neighbor_ids.size(), 3u);
    for (const auto& v : sc.variants) EXPECT_EQ(v.size(), 6u);
}

TEST(LossApproxTest, PerfectApproximationIsZero) {
    CompletionResult r;
    SlotCompletion sc;
    sc.anchor_vec = {1.0, 2.0};
    sc.approximated = {1.0, 2.0};
    r.video_memory.slots.push_back(sc);
    EXPECT_DOUBLE_EQ(loss_approximation({r}), 0.0);
}

TEST(LossApproxTest, SingleMissingFrameHandValue) {
    CompletionResult r;
    SlotCompletion sc;
    sc.anchor_vec = {1.0, 0.0};
    sc.approximated = {0.0, 1.0};
    r.video_memory.slots.push_back(sc);
    EXPECT_DOUBLE_EQ(loss_approximation({r}), 2.0);
}

TEST(LossApproxTest, NoMissingSlotsIsZero) {
    CompletionResult r;
    EXPECT_DOUBLE_EQ(loss_approximation({r}), 0.0);
    EXPECT_DOUBLE_EQ(loss_approximation({}), 0.0);
}

TEST(LossApproxTest, GradientFormulaMatchesFiniteDifferences) {
    Rng rng(59);
    std::vector<CompletionResult> batch(1);
    for (int s = 0; s < 4; ++s) {
        SlotCompletion sc;
        sc.anchor_vec = rng.normal_vec(5);
        sc.approximated = rng.normal_vec(5);
        if (s < 3)
            batch[0].video_memory.slots.push_back(std::move(sc));
        else
            batch[0].text_memory.slots.push_back(std::move(sc));
    }
    auto eval = [&] { return loss_approximation(batch); };
    for (auto& sc : batch[0].video_memory.slots) {
        Vec analytic = loss_approximation_grad_approx(sc, 3);
        for (std::size_t j = 0; j < 5; ++j) {
            double fd = central_diff(eval, sc.approximated[j]);
            EXPECT_LT(grad_rel_err(analytic[j], fd), 1e-6);
        }
    }
    for (auto& sc : batch[0].text_memory.slots) {
        Vec analytic = loss_approximation_grad_approx(sc, 1);
        for (std::size_t j = 0; j < 5; ++j) {
            double fd = central_diff(eval, sc.approximated[j]);
            EXPECT_LT(grad_rel_err(analytic[j], fd), 1e-6);
        }
    }
}

TEST(CompletionBackwardTest, BankGradientMatchesFiniteDifferences) {
    Rng rng(61);
    const std::size_t dim = 6;
    PrototypeBank bank = random_bank(rng, dim);
    PairedSample pair = random_present_pair(rng, 6, 5, dim);
    mask_slot(pair.video, 1);
    mask_slot(pair.text, 3);

    auto eval = [&] {
        std::vector<CompletionResult> rs = {complete_pair(pair, bank, 3, 2)};
        return loss_approximation(rs);
    };
    CompletionContext ctx;
    std::vector<CompletionResult> rs = {
        complete_pair_traced(pair, bank, 3, 2, identity_refiner(), ctx)};
    std::vector<CompletionContext> ctxs = {ctx};
    PrototypeBank analytic = PrototypeBank::zeros_like(bank);
    completion_backward(bank, rs, ctxs, analytic);

    GradCheckReport report = check_param_gradients(bank, analytic, eval);
    EXPECT_LT(report.worst(), 1e-4);
}

// completed slots beat zero-fill and mean-fill on noise-free data
TEST(CompleteTest, MseBeatsNaiveBaselinesOver50Seeds) {
    std::size_t pipeline_wins_zero = 0, pipeline_wins_mean = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        SyntheticConfig cfg;
        cfg.num_pairs = 2;
        cfg.frames_per_video = 10;
        cfg.words_per_text = 8;
        cfg.dim = 12;
        cfg.latent_dim = 5;
        cfg.noise_std = 0.0;
        cfg.seed = seed;
        Dataset clean = generate_synthetic(cfg);
        Dataset corrupted = apply_incompleteness(clean, {0.3, 0.3, seed + 1000});
        PrototypeBank bank = PrototypeBank::init(cfg.dim, 4, 2, seed);

        double mse_pipeline = 0.0, mse_zero = 0.0, mse_mean = 0.0;
        std::size_t slots = 0;
        for (std::size_t i = 0; i < clean.size(); ++i) {
            PairedSample completed = complete_pair(corrupted[i], bank, 5, 3).completed;
            PairedSample zeroed = baseline_complete(corrupted[i], CompletionStrategy::Zero);
            PairedSample meaned = baseline_complete(corrupted[i], CompletionStrategy::Mean);
            for (std::size_t t = 0; t < corrupted[i].video.size(); ++t) {
                if (corrupted[i].video.mask[t]) continue;
                auto sq = [&](const PairedSample& p) {
                    Vec diff = p.video.elements[t];
                    axpy(-1.0, clean[i].video.elements[t], diff);
                    return dot(diff, diff);
                };
                mse_pipeline += sq(completed);
                mse_zero += sq(zeroed);
                mse_mean += sq(meaned);
                ++slots;
            }
        }
        ASSERT_GT(slots, 0u);
        if (mse_pipeline < mse_zero) ++pipeline_wins_zero;
        if (mse_pipeline < mse_mean) ++pipeline_wins_mean;
    }
    EXPECT_EQ(pipeline_wins_zero, 50u);
    EXPECT_EQ(pipeline_wins_mean, 50u);
}
