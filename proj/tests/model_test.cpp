#include <gtest/gtest.h>

#include "mmnd/eval.hpp"
#include "mmnd/gradcheck.hpp"
#include "mmnd/model.hpp"
#include "test_util.hpp"

using namespace mmnd;
using namespace mmnd::testutil;

namespace {

TwoTowerModel zeroed_model(std::size_t D, std::size_t d) {
    TwoTowerModel m = TwoTowerModel::init(D, d, 0, 2, 1, 1);
    m.for_each_param([](const std::string&, Matrix& p) {
        std::fill(p.data.begin(), p.data.end(), 0.0);
    });
    return m;
}

struct Fixture {
    Dataset data;
    std::vector<const PairedSample*> ptrs;
    std::vector<Vec> teacher_fc;
    WeightMatrix w;
};

Fixture make_fixture(Rng& rng, std::size_t n, std::size_t D, std::size_t d) {
    Fixture f;
    for (std::size_t i = 0; i < n; ++i) {
        PairedSample p = random_present_pair(rng, 3 + rng.index(3), 2 + rng.index(3), D,
                                             "s" + std::to_string(i));
        p.label = static_cast<int>(i % 3);
        p.phrases = {i % 2 == 0 ? "red car" : "blue sky"};
        f.data.push_back(std::move(p));
    }
    for (const auto& s : f.data) f.ptrs.push_back(&s);
    for (std::size_t i = 0; i < n; ++i) f.teacher_fc.push_back(rng.normal_vec(d));
    std::vector<PhraseSet> sets;
    for (const auto& s : f.data) sets.push_back(s.phrases);
    f.w = matching_weights(sets);
    return f;
}

}  // namespace

TEST(EncodeTest, ZeroParametersGiveZeroFeatures) {
    Rng rng(3);
    TwoTowerModel m = zeroed_model(5, 4);
    PairedSample pair = random_present_pair(rng, 4, 3, 5);
    DecisiveFeatures f = encode(m, pair);
    for (double x : f.f_v) EXPECT_DOUBLE_EQ(x, 0.0);
    for (double x : f.f_t) EXPECT_DOUBLE_EQ(x, 0.0);
    for (double x : f.f_c) EXPECT_DOUBLE_EQ(x, 0.0);
}

TEST(EncodeTest, SingleElementIdentityAffineIsTanh) {
    TwoTowerModel m = zeroed_model(3, 3);
    for (std::size_t i = 0; i < 3; ++i) {
        m.video.w1(i, i) = 1.0;
        m.video.w2(i, i) = 1.0;
        m.text.w1(i, i) = 1.0;
        m.text.w2(i, i) = 1.0;
    }
    PairedSample pair;
    pair.id = "x";
    pair.video = make_sequence(Modality::Video, {Vec{0.3, -0.8, 1.2}});
    pair.text = make_sequence(Modality::Text, {Vec{0.1, 0.2, 0.3}});
    DecisiveFeatures f = encode(m, pair);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_DOUBLE_EQ(f.f_v[i], std::tanh(pair.video.elements[0][i]));
        EXPECT_DOUBLE_EQ(f.f_t[i], std::tanh(pair.text.elements[0][i]));
        EXPECT_DOUBLE_EQ(f.f_c[i], 0.5 * (f.f_v[i] + f.f_t[i]));
    }
}

TEST(EncodeTest, MaskUnmaskRestoresOutputBitwise) {
    Rng rng(7);
    TwoTowerModel m = TwoTowerModel::init(4, 3, 0, 2, 1, 9);
    PairedSample pair = random_present_pair(rng, 5, 4, 4);
    Vec before = encode(m, pair).f_v;

    PairedSample masked = pair;
    Vec saved = masked.video.elements[2];
    mask_slot(masked.video, 2);
    Vec while_masked = encode(m, masked).f_v;
    EXPECT_NE(while_masked, before);

    masked.video.elements[2] = saved;
    masked.video.mask[2] = true;
    Vec after = encode(m, masked).f_v;
    EXPECT_EQ(after, before);
}

TEST(EncodeTest, MaskedSlotPositionIrrelevant) {
    // moving a masked slot between present elements leaves pooling unchanged
    TwoTowerModel m = TwoTowerModel::init(3, 3, 0, 2, 1, 11);
    Vec a = {1.0, 0.0, 0.5}, b = {0.2, -0.4, 0.9};
    PairedSample p1;
    p1.id = "1";
    p1.video = make_sequence(Modality::Video, {a, Vec{0.0, 0.0, 0.0}, b});
    p1.video.mask[1] = false;
    p1.text = make_sequence(Modality::Text, {a});
    PairedSample p2 = p1;
    p2.video = make_sequence(Modality::Video, {Vec{0.0, 0.0, 0.0}, a, b});
    p2.video.mask[0] = false;
    EXPECT_EQ(encode(m, p1).f_v, encode(m, p2).f_v);
}

TEST(EncodeTest, AllMissingRejected) {
    Rng rng(13);
    TwoTowerModel m = TwoTowerModel::init(4, 3, 0, 2, 1, 9);
    PairedSample pair = random_present_pair(rng, 3, 2, 4);
    for (std::size_t i = 0; i < pair.video.size(); ++i) mask_slot(pair.video, i);
    EXPECT_MMND_ERROR(encode(m, pair), ErrorCode::AllMissing);
}

TEST(ForwardBackwardTest, AllWeightsZeroSpecGivesZeroLossAndGradients) {
    Rng rng(17);
    TwoTowerModel m = TwoTowerModel::init(4, 3, 0, 2, 1, 21);
    Fixture f = make_fixture(rng, 3, 4, 3);
    LossSpec spec;
    spec.alpha1 = 0.0;
    spec.alpha2 = 0.0;
    spec.beta = 0.0;
    spec.task = TaskKind::None;
    spec.l0 = 0.0;
    TwoTowerModel grads = TwoTowerModel::zeros_like(m);
    LossBreakdown out = forward_backward(m, f.ptrs, spec, grads);
    EXPECT_DOUBLE_EQ(out.total, 0.0);
    grads.for_each_param([](const std::string& name, Matrix& p) {
        for (double x : p.data) EXPECT_DOUBLE_EQ(x, 0.0) << name;
    });
}

TEST(ForwardBackwardTest, DeterministicAcrossCalls) {
    Rng rng(19);
    TwoTowerModel m = TwoTowerModel::init(6, 4, 3, 2, 2, 23);
    Fixture f = make_fixture(rng, 4, 6, 4);
    LossSpec spec;
    spec.task = TaskKind::Classification;
    spec.teacher_fc = &f.teacher_fc;
    spec.weights = &f.w;
    spec.l0 = 0.25;
    TwoTowerModel g1 = TwoTowerModel::zeros_like(m);
    TwoTowerModel g2 = TwoTowerModel::zeros_like(m);
    LossBreakdown a = forward_backward(m, f.ptrs, spec, g1);
    LossBreakdown b = forward_backward(m, f.ptrs, spec, g2);
    EXPECT_EQ(a.total, b.total);
    std::vector<const Matrix*> p1, p2;
    g1.for_each_param([&](const std::string&, Matrix& p) { p1.push_back(&p); });
    g2.for_each_param([&](const std::string&, Matrix& p) { p2.push_back(&p); });
    for (std::size_t i = 0; i < p1.size(); ++i) EXPECT_EQ(p1[i]->data, p2[i]->data);
}

TEST(ForwardBackwardTest, BookkeepingIdentityHolds) {
    Rng rng(23);
    TwoTowerModel m = TwoTowerModel::init(6, 4, 3, 2, 2, 29);
    Fixture f = make_fixture(rng, 4, 6, 4);
    for (TaskKind task : {TaskKind::Classification, TaskKind::Retrieval}) {
        LossSpec spec;
        spec.alpha1 = 0.7;
        spec.alpha2 = 0.4;
        spec.beta = 0.3;
        spec.task = task;
        spec.teacher_fc = &f.teacher_fc;
        spec.weights = &f.w;
        spec.l0 = 0.6;
        TwoTowerModel grads = TwoTowerModel::zeros_like(m);
        LossBreakdown out = forward_backward(m, f.ptrs, spec, grads);
        EXPECT_NEAR(out.l1, spec.beta * out.l_kd + (1.0 - spec.beta) * out.l_task, 1e-12);
        EXPECT_NEAR(out.total, out.l0 + spec.alpha1 * out.l1 + spec.alpha2 * out.l2, 1e-12);
    }
}

TEST(ForwardBackwardTest, GradientsMatchFiniteDifferencesBothTasks) {
    Rng rng(29);
    for (TaskKind task : {TaskKind::Classification, TaskKind::Retrieval}) {
        TwoTowerModel m = TwoTowerModel::init(4, 4, 3, 2, 2, rng.next());
        Fixture f = make_fixture(rng, 4, 4, 4);
        LossSpec spec;
        spec.alpha1 = 0.8;
        spec.alpha2 = 0.5;
        spec.beta = 0.35;
        spec.task = task;
        spec.teacher_fc = &f.teacher_fc;
        spec.weights = &f.w;
        spec.l0 = 0.4;
        TwoTowerModel analytic = TwoTowerModel::zeros_like(m);
        forward_backward(m, f.ptrs, spec, analytic);
        auto eval = [&] {
            TwoTowerModel scratch = TwoTowerModel::zeros_like(m);
            return forward_backward(m, f.ptrs, spec, scratch).total;
        };
        GradCheckReport report = check_param_gradients(m, analytic, eval);
        for (const auto& e : report.entries)
            if (e.name.rfind("bank.", 0) != 0)
                EXPECT_LT(e.max_rel_err, 1e-4) << e.name;
    }
}

TEST(ModelTest, OneSmallStepDecreasesLossOver20Seeds) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed_for(seed, "descent"));
        TwoTowerModel m = TwoTowerModel::init(4, 4, 3, 2, 2, rng.next());
        Fixture f = make_fixture(rng, 4, 4, 4);
        LossSpec spec;
        spec.task = seed % 2 == 0 ? TaskKind::Retrieval : TaskKind::Classification;
        spec.teacher_fc = &f.teacher_fc;
        spec.weights = &f.w;
        TwoTowerModel grads = TwoTowerModel::zeros_like(m);
        double before = forward_backward(m, f.ptrs, spec, grads).total;

        std::vector<Matrix*> mp;
        std::vector<const Matrix*> gp;
        m.for_each_param([&](const std::string&, Matrix& p) { mp.push_back(&p); });
        grads.for_each_param([&](const std::string&, Matrix& p) { gp.push_back(&p); });
        for (std::size_t i = 0; i < mp.size(); ++i)
            for (std::size_t j = 0; j < mp[i]->data.size(); ++j)
                mp[i]->data[j] -= 1e-3 * gp[i]->data[j];

        TwoTowerModel scratch = TwoTowerModel::zeros_like(m);
        double after = forward_backward(m, f.ptrs, spec, scratch).total;
        EXPECT_LT(after, before) << "seed " << seed;
    }
}

TEST(SnapshotTest, RoundTripBitwise) {
    TempDir dir("snapshot");
    TwoTowerModel m = TwoTowerModel::init(6, 4, 3, 3, 2, 77);
    std::string path = dir.file("model.bin");
    write_snapshot(m, path);
    TwoTowerModel loaded = read_snapshot(path);
    EXPECT_EQ(snapshot_bytes(m), snapshot_bytes(loaded));
    EXPECT_EQ(loaded.input_dim, 6u);
    EXPECT_EQ(loaded.embed_dim, 4u);
    EXPECT_EQ(loaded.num_classes, 3u);
    EXPECT_EQ(loaded.bank.num_prototypes, 3u);
    EXPECT_EQ(loaded.bank.heads, 2u);
}

TEST(SnapshotTest, NoHeadsRoundTrip) {
    TempDir dir("snapshot2");
    TwoTowerModel m = TwoTowerModel::init(3, 2, 0, 2, 1, 78);
    write_snapshot(m, dir.file("m.bin"));
    TwoTowerModel loaded = read_snapshot(dir.file("m.bin"));
    EXPECT_EQ(snapshot_bytes(m), snapshot_bytes(loaded));
}

TEST(SnapshotTest, BadMagicRejected) {
    TempDir dir("snapshot3");
    write_text_file(dir.file("junk.bin"), "NOPE....");
    EXPECT_MMND_ERROR(read_snapshot(dir.file("junk.bin")), ErrorCode::Format);
    EXPECT_MMND_ERROR(read_snapshot(dir.file("missing.bin")), ErrorCode::Io);
}

TEST(SnapshotTest, TruncatedRejected) {
    TempDir dir("snapshot4");
    TwoTowerModel m = TwoTowerModel::init(3, 2, 0, 2, 1, 79);
    std::string bytes = snapshot_bytes(m);
    write_text_file(dir.file("trunc.bin"), bytes.substr(0, bytes.size() / 2));
    EXPECT_MMND_ERROR(read_snapshot(dir.file("trunc.bin")), ErrorCode::Format);
}
