#include <gtest/gtest.h>

#include <cmath>

#include "xp/model.hpp"
#include "xp/resource.hpp"

using namespace xp;

namespace {

ModelConfig deit(int d, int depth, int heads) {
    ModelConfig c;
    c.image_size = 224;
    c.patch_size = 16;
    c.embed_dim = d;
    c.depth = depth;
    c.num_heads = heads;
    c.mlp_ratio = 4.0;
    c.num_classes = 1000;
    c.in_channels = 3;
    c.seed = 1;
    return c;
}

ModelConfig toy() {
    ModelConfig c;
    c.seed = 7;
    return c;  // defaults: 32px, patch 8, d=64, L=2, H=4, ratio 2, C=3
}

}  // namespace

TEST(CountParams, MatchesBruteEnumeration) {
    Model m = build_model(toy());
    long long brute = 0;
    m.for_each_param([&](const std::string&, const Tensor& t) { brute += (long long)t.size(); });
    EXPECT_EQ(count_params(m), brute);
    EXPECT_EQ(count_params(m), params_closed_form(m.cfg));
}

TEST(CountParams, DropOneHeadDecreasesByThatUnit) {
    Model m = build_model(toy());
    std::vector<KeepSet> keep(2);
    for (auto& k : keep) {
        k.heads = {0, 1, 2, 3};
        for (int j = 0; j < 128; ++j) k.neurons.push_back(j);
    }
    keep[1].heads = {0, 1, 2};  // drop head 3 of layer 1
    Model pruned = apply_structural_prune(m, keep);
    ResourceReport before, after;
    count_params(m, &before);
    count_params(pruned, &after);
    auto units = prunable_units(m);
    long long head_params = units.front().param_count;
    EXPECT_EQ(before.prunable_params - after.prunable_params, head_params);

    // empty prune: identical
    keep[1].heads = {0, 1, 2, 3};
    EXPECT_EQ(count_params(apply_structural_prune(m, keep)), count_params(m));
}

// Table calibration: DeiT-T -> 1.3 GFLOPs, DeiT-S -> 4.6 GFLOPs at 224x224.
TEST(CountFlops, DeiTTinyAndSmallCalibration) {
    Model tiny = build_model(deit(192, 12, 3));
    double g_tiny = double(count_flops(tiny).flops_total) / 1e9;
    EXPECT_NEAR(g_tiny, 1.3, 0.05 * 1.3) << "got " << g_tiny << "G";

    Model small = build_model(deit(384, 12, 6));
    double g_small = double(count_flops(small).flops_total) / 1e9;
    EXPECT_NEAR(g_small, 4.6, 0.05 * 4.6) << "got " << g_small << "G";
}

TEST(CountFlops, HalvingHiddenHalvesMlpFlopsExactly) {
    ModelConfig c = toy();
    Model full = build_model(c);
    c.mlp_ratio = 1.0;  // hidden 64 instead of 128
    Model half = build_model(c);
    auto mlp_flops = [](const Model& m) {
        long long t = m.cfg.tokens(), d = m.cfg.embed_dim, hd = m.blocks[0].hidden;
        return t * d * hd + t * hd + 5 * t * hd + t * hd * d + t * d;
    };
    ResourceReport rf = count_flops(full), rh = count_flops(half);
    long long diff_per_block = rf.flops_per_block[0] - rh.flops_per_block[0];
    EXPECT_EQ(diff_per_block, mlp_flops(full) - mlp_flops(half));
    // fc1+fc2 MAC terms halve exactly
    long long full_mlp_macs = (long long)full.cfg.tokens() * 64 * 128 * 2;
    long long half_mlp_macs = (long long)half.cfg.tokens() * 64 * 64 * 2;
    EXPECT_EQ(full_mlp_macs, 2 * half_mlp_macs);
}

TEST(RemainingRatio, BasicsAndTableCrossCheck) {
    Model m = build_model(toy());
    ResourceReport r = count_flops(m);
    EXPECT_DOUBLE_EQ(remaining_ratio(r, r), 1.0);

    // Table pair 2.4G / 4.6G -> 52.2% after rounding to one decimal
    double pct = 100.0 * 2.4 / 4.6;
    EXPECT_DOUBLE_EQ(std::round(pct * 10.0) / 10.0, 52.2);

    ResourceReport zero;
    EXPECT_THROW(remaining_ratio(r, zero), std::invalid_argument);
}

TEST(RemainingRatio, ToyHalfParamPruneMatchesAnalytic) {
    Model m = build_model(toy());
    std::vector<KeepSet> keep(2);
    for (auto& k : keep) {
        k.heads = {0, 1};
        for (int j = 0; j < 64; ++j) k.neurons.push_back(j);
    }
    Model pruned = apply_structural_prune(m, keep);
    ResourceReport before, after;
    count_params(m, &before);
    count_params(pruned, &after);
    EXPECT_EQ(after.prunable_params * 2, before.prunable_params);
    double ratio = remaining_ratio(count_flops(pruned), count_flops(m));
    EXPECT_GT(ratio, 0.0);
    EXPECT_LT(ratio, 1.0);
}

TEST(Invariants, CountsArePureFunctionsOfArchitecture) {
    ModelConfig c = toy();
    Model a = build_model(c);
    c.seed = 99;
    Model b = build_model(c);  // different weights, same architecture
    EXPECT_EQ(count_flops(a).flops_total, count_flops(b).flops_total);
    EXPECT_EQ(count_params(a), count_params(b));
}
