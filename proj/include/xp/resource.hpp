#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vendor_json.hpp"
#include "xp/model.hpp"

namespace xp {

// FLOP convention: one multiply-accumulate counts as one op (the convention
// behind published ViT FLOP tables); softmax, layer norm and activations count
// 5 ops per element, elementwise adds 1.
struct ResourceReport {
    long long total_params = 0;     // every stored weight, bias, norm, embedding
    long long prunable_params = 0;  // N: weight entries owned by prunable units
    std::vector<long long> per_layer_prunable;  // n^l
    long long flops_total = 0;
    std::vector<long long> flops_per_block;
    long long flops_patch_embed = 0;
    long long flops_classifier = 0;
    std::size_t input_batch = 1;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["total_params"] = total_params;
        j["prunable_params"] = prunable_params;
        j["per_layer_prunable"] = per_layer_prunable;
        j["flops_total"] = flops_total;
        j["flops_per_block"] = flops_per_block;
        j["flops_patch_embed"] = flops_patch_embed;
        j["flops_classifier"] = flops_classifier;
        j["input_batch"] = input_batch;
        return j;
    }
};

inline long long count_params(const Model& m, ResourceReport* into = nullptr) {
    long long total = 0;
    m.for_each_param([&](const std::string&, const Tensor& t) {
        total += static_cast<long long>(t.size());
    });
    if (into) {
        into->total_params = total;
        into->per_layer_prunable.assign(m.blocks.size(), 0);
        into->prunable_params = 0;
        for (const PrunableUnit& u : prunable_units(m)) {
            into->per_layer_prunable[u.layer] += u.param_count;
            into->prunable_params += u.param_count;
        }
    }
    return total;
}

// Closed-form total parameter count implied by a config (fresh, unpruned model).
inline long long params_closed_form(const ModelConfig& cfg) {
    long long d = cfg.embed_dim, hid = cfg.hidden_dim(), c = cfg.num_classes;
    long long per_block = 2 * d                 // ln1
                          + 3 * (d * d + d)     // qkv
                          + d * d + d           // output projection
                          + 2 * d               // ln2
                          + hid * d + hid       // fc1
                          + d * hid + d;        // fc2
    return d * cfg.patch_dim() + d              // patch embedding
           + d                                  // class token
           + static_cast<long long>(cfg.tokens()) * d  // positional embedding
           + cfg.depth * per_block
           + 2 * d                              // final ln
           + c * d + c;                         // classifier
}

namespace detail {

struct FlopTally {
    long long patch = 0, classifier = 0;
    std::vector<long long> blocks;
};

inline FlopTally flop_tally(const Model& m, std::size_t batch) {
    const long long b = static_cast<long long>(batch);
    const long long d = m.cfg.embed_dim, dh = m.cfg.head_dim();
    const long long t = m.cfg.tokens(), np = m.cfg.num_patches(), pd = m.cfg.patch_dim();
    FlopTally f;
    f.patch = b * (np * pd * d           // projection MACs
                   + np * d              // bias adds
                   + t * d);             // positional-embedding add
    for (const Block& blk : m.blocks) {
        long long h = blk.heads, hd = blk.hidden, hdh = h * dh;
        long long fl = 0;
        fl += 5 * t * d;                  // ln1
        fl += 3 * (t * d * hdh + t * hdh);  // qkv
        fl += t * t * hdh;                // attention scores
        fl += t * t * h;                  // 1/sqrt(dh) scaling
        fl += 5 * h * t * t;              // softmax
        fl += t * t * hdh;                // attention-weighted values
        fl += t * hdh * d + t * d;        // output projection
        fl += t * d;                      // residual add
        fl += 5 * t * d;                  // ln2
        fl += t * d * hd + t * hd;        // fc1
        fl += 5 * t * hd;                 // activation
        fl += t * hd * d + t * d;         // fc2
        fl += t * d;                      // residual add
        f.blocks.push_back(b * fl);
    }
    f.classifier = b * (5 * t * d                 // final ln
                        + d * m.cfg.num_classes + m.cfg.num_classes);
    return f;
}

}  // namespace detail

inline ResourceReport count_flops(const Model& m, std::size_t batch = 1) {
    ResourceReport r;
    count_params(m, &r);
    r.input_batch = batch;
    detail::FlopTally f = detail::flop_tally(m, batch);
    r.flops_patch_embed = f.patch;
    r.flops_classifier = f.classifier;
    r.flops_per_block = f.blocks;
    r.flops_total = f.patch + f.classifier;
    for (long long v : f.blocks) r.flops_total += v;
    return r;
}

inline double remaining_ratio(const ResourceReport& pruned, const ResourceReport& baseline) {
    if (baseline.flops_total == 0)
        throw std::invalid_argument("resource: baseline FLOP count is zero");
    return static_cast<double>(pruned.flops_total) / static_cast<double>(baseline.flops_total);
}

}  // namespace xp
