#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "xp/ops.hpp"
#include "xp/random.hpp"
#include "xp/tensor.hpp"

namespace xp {

struct ModelConfig {
    int image_size = 32;
    int patch_size = 8;
    int embed_dim = 64;
    int depth = 2;
    int num_heads = 4;
    double mlp_ratio = 2.0;
    int num_classes = 3;
    int in_channels = 1;
    std::uint64_t seed = 42;

    int head_dim() const { return embed_dim / num_heads; }
    int hidden_dim() const { return static_cast<int>(std::lround(mlp_ratio * embed_dim)); }
    int patches_per_side() const { return image_size / patch_size; }
    int num_patches() const { return patches_per_side() * patches_per_side(); }
    int tokens() const { return num_patches() + 1; }  // +1 class token
    int patch_dim() const { return in_channels * patch_size * patch_size; }

    void validate() const {
        if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
            throw std::invalid_argument("config: image_size must be a positive multiple of patch_size");
        if (embed_dim <= 0 || num_heads <= 0 || embed_dim % num_heads != 0)
            throw std::invalid_argument("config: embed_dim must be divisible by num_heads");
        if (depth < 1) throw std::invalid_argument("config: depth must be >= 1");
        if (num_classes < 2) throw std::invalid_argument("config: num_classes must be >= 2");
        if (hidden_dim() < 1) throw std::invalid_argument("config: mlp hidden dim must be >= 1");
        if (in_channels < 1) throw std::invalid_argument("config: in_channels must be >= 1");
    }

    bool operator==(const ModelConfig&) const = default;
};

// One transformer block. heads/hidden are the live sizes, which shrink under
// structural pruning while the embedding width stays fixed.
struct Block {
    int heads = 0;
    int hidden = 0;
    Tensor ln1_g, ln1_b;
    Tensor wq, bq, wk, bk, wv, bv;  // (heads*dh, d), (heads*dh)
    Tensor wo, bo;                  // (d, heads*dh), (d)
    Tensor ln2_g, ln2_b;
    Tensor w1, b1;                  // (hidden, d), (hidden)
    Tensor w2, b2;                  // (d, hidden), (d)
};

struct Model {
    ModelConfig cfg;
    Tensor patch_w, patch_b;  // (d, patch_dim), (d)
    Tensor cls_token;         // (1, 1, d)
    Tensor pos_embed;         // (1, tokens, d)
    std::vector<Block> blocks;
    Tensor ln_f_g, ln_f_b;
    Tensor head_w, head_b;  // (C, d), (C)
    bool weights_frozen = false;

    template <class F>
    void for_each_param(F&& f) {
        f("patch_w", patch_w);
        f("patch_b", patch_b);
        f("cls_token", cls_token);
        f("pos_embed", pos_embed);
        for (std::size_t l = 0; l < blocks.size(); ++l) {
            std::string p = "blk" + std::to_string(l) + ".";
            Block& b = blocks[l];
            f(p + "ln1_g", b.ln1_g);
            f(p + "ln1_b", b.ln1_b);
            f(p + "wq", b.wq);
            f(p + "bq", b.bq);
            f(p + "wk", b.wk);
            f(p + "bk", b.bk);
            f(p + "wv", b.wv);
            f(p + "bv", b.bv);
            f(p + "wo", b.wo);
            f(p + "bo", b.bo);
            f(p + "ln2_g", b.ln2_g);
            f(p + "ln2_b", b.ln2_b);
            f(p + "w1", b.w1);
            f(p + "b1", b.b1);
            f(p + "w2", b.w2);
            f(p + "b2", b.b2);
        }
        f("ln_f_g", ln_f_g);
        f("ln_f_b", ln_f_b);
        f("head_w", head_w);
        f("head_b", head_b);
    }

    template <class F>
    void for_each_param(F&& f) const {
        const_cast<Model*>(this)->for_each_param(
            [&](const std::string& name, Tensor& t) { f(name, const_cast<const Tensor&>(t)); });
    }

    std::vector<Tensor> parameters() {
        std::vector<Tensor> out;
        for_each_param([&](const std::string&, Tensor& t) { out.push_back(t); });
        return out;
    }

    void set_requires_grad(bool r) {
        for_each_param([&](const std::string&, Tensor& t) { t.set_requires_grad(r); });
    }

    void zero_grad() {
        for_each_param([&](const std::string&, Tensor& t) { t.zero_grad(); });
    }

    std::uint64_t weight_hash() const {
        std::uint64_t h = 1469598103934665603ull;
        for_each_param([&](const std::string&, const Tensor& t) {
            for (double v : t.data()) {
                std::uint64_t bits;
                static_assert(sizeof(bits) == sizeof(v));
                std::memcpy(&bits, &v, sizeof(bits));
                for (int i = 0; i < 8; ++i) {
                    h ^= (bits >> (8 * i)) & 0xff;
                    h *= 1099511628211ull;
                }
            }
        });
        return h;
    }

    Model clone() const {
        Model m;
        m.cfg = cfg;
        m.weights_frozen = weights_frozen;
        m.blocks.resize(blocks.size());
        for (std::size_t l = 0; l < blocks.size(); ++l) {
            m.blocks[l].heads = blocks[l].heads;
            m.blocks[l].hidden = blocks[l].hidden;
        }
        const_cast<Model*>(this)->for_each_param([&](const std::string& name, Tensor& t) {
            // mirror the traversal to land each copy in the right slot
            Tensor copy = t.detached_copy();
            m.assign_named(name, copy);
        });
        return m;
    }

    void assign_named(const std::string& name, const Tensor& t) {
        bool hit = false;
        for_each_param([&](const std::string& n, Tensor& slot) {
            if (n == name) {
                slot = t;
                hit = true;
            }
        });
        if (!hit) throw std::invalid_argument("model: unknown parameter " + name);
    }
};

inline Model build_model(const ModelConfig& cfg) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    Rng rng(cfg.seed, "init");
    const int d = cfg.embed_dim;
    auto tn = [&](Shape shape) {
        std::vector<double> v(numel(shape));
        for (double& x : v) x = rng.trunc_normal(0.02);
        return Tensor::from_data(std::move(shape), std::move(v));
    };
    auto nd = [](int x) { return static_cast<std::size_t>(x); };
    m.patch_w = tn({nd(d), nd(cfg.patch_dim())});
    m.patch_b = Tensor::zeros({nd(d)});
    m.cls_token = tn({1, 1, nd(d)});
    m.pos_embed = tn({1, nd(cfg.tokens()), nd(d)});
    m.blocks.resize(cfg.depth);
    for (Block& b : m.blocks) {
        b.heads = cfg.num_heads;
        b.hidden = cfg.hidden_dim();
        b.ln1_g = Tensor::ones({nd(d)});
        b.ln1_b = Tensor::zeros({nd(d)});
        b.wq = tn({nd(d), nd(d)});
        b.bq = Tensor::zeros({nd(d)});
        b.wk = tn({nd(d), nd(d)});
        b.bk = Tensor::zeros({nd(d)});
        b.wv = tn({nd(d), nd(d)});
        b.bv = Tensor::zeros({nd(d)});
        b.wo = tn({nd(d), nd(d)});
        b.bo = Tensor::zeros({nd(d)});
        b.ln2_g = Tensor::ones({nd(d)});
        b.ln2_b = Tensor::zeros({nd(d)});
        b.w1 = tn({nd(b.hidden), nd(d)});
        b.b1 = Tensor::zeros({nd(b.hidden)});
        b.w2 = tn({nd(d), nd(b.hidden)});
        b.b2 = Tensor::zeros({nd(d)});
    }
    m.ln_f_g = Tensor::ones({nd(d)});
    m.ln_f_b = Tensor::zeros({nd(d)});
    m.head_w = tn({nd(cfg.num_classes), nd(d)});
    m.head_b = Tensor::zeros({nd(cfg.num_classes)});
    return m;
}

// (B, ch, S, S) -> (B, patches, ch*ps*ps); patch content ordered (ch, py, px).
// Images never carry gradients, so this stays off the tape.
inline Tensor patchify(const Model& m, const Tensor& images) {
    const auto& cfg = m.cfg;
    if (images.ndim() != 4 || images.shape()[1] != static_cast<std::size_t>(cfg.in_channels) ||
        images.shape()[2] != static_cast<std::size_t>(cfg.image_size) ||
        images.shape()[3] != static_cast<std::size_t>(cfg.image_size))
        throw std::invalid_argument("model: expected images (batch, " +
                                    std::to_string(cfg.in_channels) + ", " +
                                    std::to_string(cfg.image_size) + ", " +
                                    std::to_string(cfg.image_size) + "), got " +
                                    shape_str(images.shape()));
    std::size_t bsz = images.shape()[0];
    std::size_t ps = cfg.patch_size, side = cfg.patches_per_side(), s = cfg.image_size;
    std::size_t ch = cfg.in_channels, pd = cfg.patch_dim(), np = cfg.num_patches();
    std::vector<double> out(bsz * np * pd);
    const double* src = images.data().data();
    for (std::size_t b = 0; b < bsz; ++b)
        for (std::size_t py = 0; py < side; ++py)
            for (std::size_t px = 0; px < side; ++px) {
                double* dst = out.data() + (b * np + py * side + px) * pd;
                for (std::size_t c = 0; c < ch; ++c)
                    for (std::size_t y = 0; y < ps; ++y)
                        for (std::size_t x = 0; x < ps; ++x)
                            *dst++ = src[((b * ch + c) * s + py * ps + y) * s + px * ps + x];
            }
    return Tensor::from_data({bsz, np, pd}, std::move(out));
}

namespace detail {

// Per-head self-attention on an embedded sequence: x (B, T, d) -> (B, H, T, dh).
inline Tensor attention_heads(const Block& b, const Tensor& x, int head_dim) {
    std::size_t bsz = x.shape()[0], toks = x.shape()[1];
    std::size_t h = b.heads, dh = head_dim;
    auto split = [&](const Tensor& t) {
        return permute(reshape(t, {bsz, toks, h, dh}), {0, 2, 1, 3});
    };
    Tensor q = split(linear(x, b.wq, b.bq));
    Tensor k = split(linear(x, b.wk, b.bk));
    Tensor v = split(linear(x, b.wv, b.bv));
    Tensor scores = scalar_mul(matmul(q, permute(k, {0, 1, 3, 2})),
                               1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor attn = softmax_lastdim(scores);
    return matmul(attn, v);
}

// Class-conditional linear: per-sample weight gate (B, out, in) applied to W
// before the product. An undefined gate falls back to the plain layer.
inline Tensor masked_linear(const Tensor& x, const Tensor& w, const Tensor& b,
                            const Tensor& gate) {
    if (!gate.defined()) return linear(x, w, b);
    Tensor wm = mul(gate, w);                       // (B, out, in)
    Tensor y = matmul(x, permute(wm, {0, 2, 1}));   // (B, T, out)
    if (b.defined()) y = add(y, b);
    return y;
}

}  // namespace detail

// Per-layer masks already gathered to the batch's class slices; any tensor may
// be undefined to mean "unmasked".
struct BlockMasks {
    Tensor head;  // (B, H, dh)
    Tensor proj;  // (B, d, d_in)
    Tensor fc1;   // (B, hidden, d)
    Tensor fc2;   // (B, d, hidden)
};

// Single forward path for the masked and unmasked model; the unmasked forward
// is literally the masks == nullptr case, so the two cannot drift apart.
inline Tensor forward_impl(const Model& m, const Tensor& images,
                           const std::vector<BlockMasks>* masks) {
    if (masks && masks->size() != m.blocks.size())
        throw std::invalid_argument("model: mask set depth does not match model depth");
    std::size_t bsz = images.shape()[0];
    std::size_t d = m.cfg.embed_dim;
    Tensor x = linear(patchify(m, images), m.patch_w, m.patch_b);  // (B, P, d)
    Tensor cls = add(m.cls_token, Tensor::zeros({bsz, 1, d}));     // broadcast to batch
    x = concat(cls, x, 1);
    x = add(x, m.pos_embed);
    for (std::size_t l = 0; l < m.blocks.size(); ++l) {
        const Block& b = m.blocks[l];
        const BlockMasks* bm = masks ? &(*masks)[l] : nullptr;
        std::size_t toks = m.cfg.tokens(), dh = m.cfg.head_dim(), h = b.heads;
        Tensor hnorm = layer_norm(x, b.ln1_g, b.ln1_b);
        Tensor heads = detail::attention_heads(b, hnorm, m.cfg.head_dim());
        if (bm && bm->head.defined())
            heads = mul(heads, reshape(bm->head, {bsz, h, 1, dh}));
        Tensor a = reshape(permute(heads, {0, 2, 1, 3}), {bsz, toks, h * dh});
        a = detail::masked_linear(a, b.wo, b.bo, bm ? bm->proj : Tensor());
        x = add(x, a);
        Tensor h2 = layer_norm(x, b.ln2_g, b.ln2_b);
        Tensor f = detail::masked_linear(h2, b.w1, b.b1, bm ? bm->fc1 : Tensor());
        f = tanh_t(f);
        f = detail::masked_linear(f, b.w2, b.b2, bm ? bm->fc2 : Tensor());
        x = add(x, f);
    }
    x = layer_norm(x, m.ln_f_g, m.ln_f_b);
    Tensor cls_out = select(x, 1, 0);  // (B, d)
    return linear(cls_out, m.head_w, m.head_b);
}

inline Tensor forward(const Model& m, const Tensor& images) {
    return forward_impl(m, images, nullptr);
}

// Per-head attention outputs of one layer on an embedded input (B, T, d);
// heads are not yet combined.
inline Tensor attention_forward(const Model& m, int layer, const Tensor& x) {
    if (layer < 0 || static_cast<std::size_t>(layer) >= m.blocks.size())
        throw std::invalid_argument("model: layer index out of range");
    if (x.ndim() != 3 || x.shape()[2] != static_cast<std::size_t>(m.cfg.embed_dim))
        throw std::invalid_argument("model: attention input must be (batch, tokens, " +
                                    std::to_string(m.cfg.embed_dim) + "), got " +
                                    shape_str(x.shape()));
    return detail::attention_heads(m.blocks[layer], x, m.cfg.head_dim());
}

// ---------------------------------------------------------------------------
// Prunable structure registry
// ---------------------------------------------------------------------------

struct PrunableUnit {
    enum class Kind { AttentionHead, MlpNeuron };
    int layer = 0;
    Kind kind = Kind::AttentionHead;
    int index = 0;          // head or neuron index within its layer
    long param_count = 0;   // weight entries removed if this unit is pruned
};

inline const char* kind_name(PrunableUnit::Kind k) {
    return k == PrunableUnit::Kind::AttentionHead ? "head" : "neuron";
}

// Enumerates every attention head and MLP hidden neuron. Heads come first
// within a layer; unit widths partition the layer's prunable weights.
inline std::vector<PrunableUnit> prunable_units(const Model& m) {
    std::vector<PrunableUnit> units;
    const long d = m.cfg.embed_dim, dh = m.cfg.head_dim();
    for (std::size_t l = 0; l < m.blocks.size(); ++l) {
        for (int h = 0; h < m.blocks[l].heads; ++h)
            units.push_back({static_cast<int>(l), PrunableUnit::Kind::AttentionHead, h,
                             3 * d * dh + dh * d});
        for (int j = 0; j < m.blocks[l].hidden; ++j)
            units.push_back({static_cast<int>(l), PrunableUnit::Kind::MlpNeuron, j, 2 * d});
    }
    return units;
}

struct KeepSet {
    std::vector<int> heads;
    std::vector<int> neurons;
};

// Physically removes dropped heads (QKV row slices + output-projection column
// slices) and dropped neurons (fc1 rows + fc2 columns), biases included.
inline Model apply_structural_prune(const Model& m, const std::vector<KeepSet>& keep) {
    if (keep.size() != m.blocks.size())
        throw std::invalid_argument("prune: keep sets must cover every layer");
    for (std::size_t l = 0; l < keep.size(); ++l) {
        if (keep[l].heads.empty() || keep[l].neurons.empty())
            throw std::invalid_argument("prune: layer " + std::to_string(l) +
                                        " would keep no " +
                                        (keep[l].heads.empty() ? "heads" : "neurons"));
        for (int h : keep[l].heads)
            if (h < 0 || h >= m.blocks[l].heads)
                throw std::invalid_argument("prune: head index out of range in layer " +
                                            std::to_string(l));
        for (int j : keep[l].neurons)
            if (j < 0 || j >= m.blocks[l].hidden)
                throw std::invalid_argument("prune: neuron index out of range in layer " +
                                            std::to_string(l));
    }
    const std::size_t d = m.cfg.embed_dim, dh = m.cfg.head_dim();
    Model out;
    out.cfg = m.cfg;
    out.weights_frozen = m.weights_frozen;
    out.patch_w = m.patch_w.detached_copy();
    out.patch_b = m.patch_b.detached_copy();
    out.cls_token = m.cls_token.detached_copy();
    out.pos_embed = m.pos_embed.detached_copy();
    out.ln_f_g = m.ln_f_g.detached_copy();
    out.ln_f_b = m.ln_f_b.detached_copy();
    out.head_w = m.head_w.detached_copy();
    out.head_b = m.head_b.detached_copy();
    out.blocks.resize(m.blocks.size());

    auto take_rows = [](const Tensor& t, const std::vector<std::size_t>& rows) {
        std::size_t cols = t.shape()[1];
        std::vector<double> v(rows.size() * cols);
        for (std::size_t i = 0; i < rows.size(); ++i)
            std::copy_n(t.data().data() + rows[i] * cols, cols, v.data() + i * cols);
        return Tensor::from_data({rows.size(), cols}, std::move(v));
    };
    auto take_cols = [](const Tensor& t, const std::vector<std::size_t>& cols) {
        std::size_t r = t.shape()[0], c = t.shape()[1];
        std::vector<double> v(r * cols.size());
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < cols.size(); ++j) v[i * cols.size() + j] = t.data()[i * c + cols[j]];
        return Tensor::from_data({r, cols.size()}, std::move(v));
    };
    auto take_entries = [](const Tensor& t, const std::vector<std::size_t>& idx) {
        std::vector<double> v(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) v[i] = t.data()[idx[i]];
        return Tensor::from_data({idx.size()}, std::move(v));
    };

    for (std::size_t l = 0; l < m.blocks.size(); ++l) {
        const Block& b = m.blocks[l];
        Block& nb = out.blocks[l];
        std::vector<int> kh = keep[l].heads, kn = keep[l].neurons;
        std::sort(kh.begin(), kh.end());
        kh.erase(std::unique(kh.begin(), kh.end()), kh.end());
        std::sort(kn.begin(), kn.end());
        kn.erase(std::unique(kn.begin(), kn.end()), kn.end());
        nb.heads = static_cast<int>(kh.size());
        nb.hidden = static_cast<int>(kn.size());
        std::vector<std::size_t> head_rows, neuron_rows;
        for (int h : kh)
            for (std::size_t r = 0; r < dh; ++r) head_rows.push_back(h * dh + r);
        for (int j : kn) neuron_rows.push_back(static_cast<std::size_t>(j));
        nb.ln1_g = b.ln1_g.detached_copy();
        nb.ln1_b = b.ln1_b.detached_copy();
        nb.wq = take_rows(b.wq, head_rows);
        nb.bq = take_entries(b.bq, head_rows);
        nb.wk = take_rows(b.wk, head_rows);
        nb.bk = take_entries(b.bk, head_rows);
        nb.wv = take_rows(b.wv, head_rows);
        nb.bv = take_entries(b.bv, head_rows);
        nb.wo = take_cols(b.wo, head_rows);
        nb.bo = b.bo.detached_copy();
        nb.ln2_g = b.ln2_g.detached_copy();
        nb.ln2_b = b.ln2_b.detached_copy();
        nb.w1 = take_rows(b.w1, neuron_rows);
        nb.b1 = take_entries(b.b1, neuron_rows);
        nb.w2 = take_cols(b.w2, neuron_rows);
        nb.b2 = b.b2.detached_copy();
    }
    (void)d;
    return out;
}

}  // namespace xp
