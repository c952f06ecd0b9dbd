#include <gtest/gtest.h>

#include <cmath>

#include "xp/model.hpp"
#include "xp/random.hpp"
#include "xp/resource.hpp"

using namespace xp;

namespace {

ModelConfig toy_config(std::uint64_t seed = 7) {
    ModelConfig c;
    c.image_size = 32;
    c.patch_size = 8;
    c.embed_dim = 64;
    c.depth = 2;
    c.num_heads = 4;
    c.mlp_ratio = 2.0;
    c.num_classes = 3;
    c.in_channels = 1;
    c.seed = seed;
    return c;
}

Tensor random_images(const ModelConfig& c, std::size_t bsz, std::uint64_t seed) {
    Rng rng(seed, "images");
    Shape s = {bsz, std::size_t(c.in_channels), std::size_t(c.image_size),
               std::size_t(c.image_size)};
    std::vector<double> v(numel(s));
    for (double& x : v) x = rng.uniform();
    return Tensor::from_data(std::move(s), std::move(v));
}

}  // namespace

TEST(BuildModel, DeterministicForFixedSeed) {
    Model a = build_model(toy_config());
    Model b = build_model(toy_config());
    EXPECT_EQ(a.weight_hash(), b.weight_hash());
    Model c = build_model(toy_config(8));
    EXPECT_NE(a.weight_hash(), c.weight_hash());
}

TEST(BuildModel, InvalidConfigsRejected) {
    ModelConfig c = toy_config();
    c.num_heads = 5;  // does not divide 64
    EXPECT_THROW(build_model(c), std::invalid_argument);
    c = toy_config();
    c.patch_size = 7;
    EXPECT_THROW(build_model(c), std::invalid_argument);
    c = toy_config();
    c.num_classes = 1;
    EXPECT_THROW(build_model(c), std::invalid_argument);
    c = toy_config();
    c.depth = 0;
    EXPECT_THROW(build_model(c), std::invalid_argument);
}

// Published DeiT-T shape: the enumerated count matches the closed form exactly
// and lands near the known 5.7M figure.
TEST(BuildModel, DeiTTinyParameterCount) {
    ModelConfig c;
    c.image_size = 224;
    c.patch_size = 16;
    c.embed_dim = 192;
    c.depth = 12;
    c.num_heads = 3;
    c.mlp_ratio = 4.0;
    c.num_classes = 1000;
    c.in_channels = 3;
    c.seed = 1;
    Model m = build_model(c);
    long long enumerated = count_params(m);
    EXPECT_EQ(enumerated, params_closed_form(c));
    EXPECT_NEAR(double(enumerated), 5.7e6, 0.05 * 5.7e6);
}

TEST(Attention, ZeroQueryKeyGivesUniformWeights) {
    Model m = build_model(toy_config());
    Block& b = m.blocks[0];
    std::fill(b.wq.data_mut().begin(), b.wq.data_mut().end(), 0.0);
    std::fill(b.wk.data_mut().begin(), b.wk.data_mut().end(), 0.0);
    std::size_t toks = 5, d = m.cfg.embed_dim;
    Rng rng(3, "attn");
    std::vector<double> xv(2 * toks * d);
    for (double& v : xv) v = rng.uniform(-1, 1);
    Tensor x = Tensor::from_data({2, toks, d}, std::move(xv));
    Tensor heads = attention_forward(m, 0, x);
    ASSERT_EQ(heads.shape(), (Shape{2, 4, toks, 16}));
    // uniform attention = plain average of the value vectors over tokens
    for (std::size_t b0 = 0; b0 < 2; ++b0) {
        Tensor v = linear(x, m.blocks[0].wv, m.blocks[0].bv);
        for (std::size_t h = 0; h < 4; ++h)
            for (std::size_t t = 0; t < toks; ++t)
                for (std::size_t e = 0; e < 16; ++e) {
                    double avg = 0.0;
                    for (std::size_t t2 = 0; t2 < toks; ++t2)
                        avg += v.data()[(b0 * toks + t2) * d + h * 16 + e];
                    avg /= double(toks);
                    EXPECT_NEAR(heads.data()[((b0 * 4 + h) * toks + t) * 16 + e], avg, 1e-12);
                }
    }
}

TEST(Attention, SingleTokenPassesValueThrough) {
    Model m = build_model(toy_config());
    Rng rng(4, "attn1");
    std::vector<double> xv(m.cfg.embed_dim);
    for (double& v : xv) v = rng.uniform(-1, 1);
    Tensor x = Tensor::from_data({1, 1, std::size_t(m.cfg.embed_dim)}, std::move(xv));
    Tensor heads = attention_forward(m, 0, x);
    Tensor v = linear(x, m.blocks[0].wv, m.blocks[0].bv);
    for (std::size_t h = 0; h < 4; ++h)
        for (std::size_t e = 0; e < 16; ++e)
            EXPECT_NEAR(heads.data()[h * 16 + e], v.data()[h * 16 + e], 1e-14);
}

// Brute-force dense recomputation of per-head attention with explicit loops.
TEST(Attention, MatchesLoopOracle) {
    Model m = build_model(toy_config());
    const std::size_t toks = 2, d = m.cfg.embed_dim, dh = 16, H = 4;
    Rng rng(5, "attn2");
    std::vector<double> xv(toks * d);
    for (double& v : xv) v = rng.uniform(-1, 1);
    Tensor x = Tensor::from_data({1, toks, d}, std::move(xv));
    Tensor got = attention_forward(m, 0, x);

    const Block& b = m.blocks[0];
    auto proj = [&](const Tensor& w, const Tensor& bias, std::size_t t, std::size_t o) {
        double s = bias.data()[o];
        for (std::size_t k = 0; k < d; ++k) s += x.data()[t * d + k] * w.data()[o * d + k];
        return s;
    };
    for (std::size_t h = 0; h < H; ++h)
        for (std::size_t t = 0; t < toks; ++t) {
            // scores over the two tokens
            double sc[2], mx = -1e300;
            for (std::size_t t2 = 0; t2 < toks; ++t2) {
                double s = 0.0;
                for (std::size_t e = 0; e < dh; ++e)
                    s += proj(b.wq, b.bq, t, h * dh + e) * proj(b.wk, b.bk, t2, h * dh + e);
                sc[t2] = s / std::sqrt(double(dh));
                mx = std::max(mx, sc[t2]);
            }
            double z = 0.0;
            for (std::size_t t2 = 0; t2 < toks; ++t2) z += std::exp(sc[t2] - mx);
            for (std::size_t e = 0; e < dh; ++e) {
                double out = 0.0;
                for (std::size_t t2 = 0; t2 < toks; ++t2)
                    out += std::exp(sc[t2] - mx) / z * proj(b.wv, b.bv, t2, h * dh + e);
                EXPECT_NEAR(got.data()[(h * toks + t) * dh + e], out, 1e-10);
            }
        }
}

TEST(Forward, ZeroBatchGivesIdenticalFiniteRows) {
    Model m = build_model(toy_config());
    Tensor images = Tensor::zeros({3, 1, 32, 32});
    Tensor logits = forward(m, images);
    ASSERT_EQ(logits.shape(), (Shape{3, 3}));
    for (std::size_t j = 0; j < 3; ++j) {
        EXPECT_TRUE(std::isfinite(logits.data()[j]));
        EXPECT_EQ(logits.data()[j], logits.data()[3 + j]);
        EXPECT_EQ(logits.data()[j], logits.data()[6 + j]);
    }
}

TEST(Forward, DeterministicAcrossRuns) {
    ModelConfig c = toy_config();
    Tensor images = random_images(c, 2, 9);
    Tensor l1 = forward(build_model(c), images);
    Tensor l2 = forward(build_model(c), images);
    EXPECT_EQ(l1.data(), l2.data());
}

TEST(Forward, WrongSpatialSizeRejected) {
    Model m = build_model(toy_config());
    EXPECT_THROW(forward(m, Tensor::zeros({1, 1, 16, 16})), std::invalid_argument);
    EXPECT_THROW(forward(m, Tensor::zeros({1, 3, 32, 32})), std::invalid_argument);
}

TEST(PrunableUnits, CountsAndWidths) {
    Model m = build_model(toy_config());
    auto units = prunable_units(m);
    ASSERT_EQ(units.size(), 2u * (4 + 128));
    long long d = 64, dh = 16;
    long long n_total = 0;
    std::vector<long long> per_layer(2, 0);
    for (const auto& u : units) {
        if (u.kind == PrunableUnit::Kind::AttentionHead)
            EXPECT_EQ(u.param_count, 3 * d * dh + dh * d);
        else
            EXPECT_EQ(u.param_count, 2 * d);
        per_layer[u.layer] += u.param_count;
        n_total += u.param_count;
    }
    // units partition each layer's prunable weights: 4 d^2 attention + 2 d*hidden MLP
    long long expect_layer = 4 * d * d + 2 * d * 128;
    EXPECT_EQ(per_layer[0], expect_layer);
    EXPECT_EQ(per_layer[1], expect_layer);

    ResourceReport r;
    count_params(m, &r);
    EXPECT_EQ(r.prunable_params, n_total);
    EXPECT_EQ(r.per_layer_prunable, per_layer);
}

TEST(StructuralPrune, KeepEverythingIsIdentity) {
    Model m = build_model(toy_config());
    std::vector<KeepSet> keep(2);
    for (auto& k : keep) {
        k.heads = {0, 1, 2, 3};
        for (int j = 0; j < 128; ++j) k.neurons.push_back(j);
    }
    Model pruned = apply_structural_prune(m, keep);
    EXPECT_EQ(count_params(pruned), count_params(m));
    Tensor images = random_images(m.cfg, 2, 11);
    Tensor l1 = forward(m, images);
    Tensor l2 = forward(pruned, images);
    EXPECT_EQ(l1.data(), l2.data());
}

TEST(StructuralPrune, DropCountsMatchClosedForm) {
    Model m = build_model(toy_config());
    std::vector<KeepSet> keep(2);
    keep[0].heads = {0, 2};
    keep[1].heads = {1, 3};
    for (auto& k : keep)
        for (int j = 0; j < 100; ++j) k.neurons.push_back(j);
    Model pruned = apply_structural_prune(m, keep);
    long long d = 64, dh = 16;
    long long dropped_weights = 2 * (2 * (3 * d * dh + dh * d)) + 2 * (28 * 2 * d);
    long long dropped_biases = 2 * (2 * 3 * dh) + 2 * 28;  // qkv bias slices + fc1 bias entries
    EXPECT_EQ(count_params(m) - count_params(pruned), dropped_weights + dropped_biases);

    ResourceReport before, after;
    count_params(m, &before);
    count_params(pruned, &after);
    EXPECT_EQ(before.prunable_params - after.prunable_params, dropped_weights);
}

TEST(StructuralPrune, EmptyKeepRejected) {
    Model m = build_model(toy_config());
    std::vector<KeepSet> keep(2);
    keep[0].heads = {};
    keep[0].neurons = {0};
    keep[1].heads = {0};
    keep[1].neurons = {0};
    EXPECT_THROW(apply_structural_prune(m, keep), std::invalid_argument);
}

TEST(StructuralPrune, NeverIncreasesParamsOrFlops) {
    Model m = build_model(toy_config());
    Rng rng(13, "mono");
    std::vector<KeepSet> keep(2);
    for (auto& k : keep) {
        for (int h = 0; h < 4; ++h)
            if (rng.uniform() < 0.7 || k.heads.empty()) k.heads.push_back(h);
        for (int j = 0; j < 128; ++j)
            if (rng.uniform() < 0.6 || k.neurons.empty()) k.neurons.push_back(j);
    }
    Model pruned = apply_structural_prune(m, keep);
    EXPECT_LE(count_params(pruned), count_params(m));
    EXPECT_LE(count_flops(pruned).flops_total, count_flops(m).flops_total);
}
