#include "tafe/encoder.hpp"

#include <cmath>
#include <memory>

#include "tafe/errors.hpp"
#include "tafe/parallel.hpp"

namespace tafe {

void init_encoder_block(ParamStore& store, ParamInit& init, const std::string& prefix,
                        const EncoderShape& shape) {
    if (shape.heads == 0 || shape.d % shape.heads != 0) {
        throw ConfigError("embedding width " + std::to_string(shape.d) +
                          " is not divisible by head count " + std::to_string(shape.heads));
    }
    const std::size_t d = shape.d;
    init.norm(store, prefix + ".ln1", d);
    for (const char* proj : {"q", "k", "v", "o"}) {
        init.conv(store, prefix + ".attn." + proj, d, d, 1, 1, true);
    }
    init.norm(store, prefix + ".ln2", d);
    init.conv(store, prefix + ".ffn.fc1", shape.ffn_mult * d, d, 1, 1, true);
    init.conv(store, prefix + ".ffn.fc2", d, shape.ffn_mult * d, 1, 1, true);
}

void init_positional_embedding(ParamStore& store, ParamInit& init, std::size_t d,
                               std::size_t tokens) {
    store.add("pos_embed", init.normal(Shape{1, d, tokens, 1}));
}

namespace {

struct HeadLayout {
    std::size_t n;
    std::size_t d;
    std::size_t tokens;
    std::size_t heads;
    std::size_t head_dim;
};

HeadLayout layout_of(const Shape& s, std::size_t heads) {
    if (s.w != 1) throw ShapeError("attention expects token tensors (n, d, T, 1), got " + s.str());
    if (heads == 0 || s.c % heads != 0) {
        throw ShapeError("width " + std::to_string(s.c) + " not divisible by " +
                         std::to_string(heads) + " heads");
    }
    return {s.n, s.c, s.h, heads, s.c / heads};
}

// Fills probs (T x T, row-major) for one (sample, head).
void head_scores(const HeadLayout& hl, const double* q, const double* k, double* probs) {
    const std::size_t t_n = hl.tokens;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hl.head_dim));
    std::fill(probs, probs + t_n * t_n, 0.0);
    for (std::size_t c = 0; c < hl.head_dim; ++c) {
        const double* qc = q + c * t_n;
        const double* kc = k + c * t_n;
        for (std::size_t t = 0; t < t_n; ++t) {
            const double qv = qc[t] * scale;
            double* row = probs + t * t_n;
            for (std::size_t s = 0; s < t_n; ++s) row[s] += qv * kc[s];
        }
    }
    for (std::size_t t = 0; t < t_n; ++t) {
        double* row = probs + t * t_n;
        double mx = row[0];
        for (std::size_t s = 1; s < t_n; ++s) mx = std::max(mx, row[s]);
        double total = 0.0;
        for (std::size_t s = 0; s < t_n; ++s) {
            row[s] = std::exp(row[s] - mx);
            total += row[s];
        }
        const double inv = 1.0 / total;
        for (std::size_t s = 0; s < t_n; ++s) row[s] *= inv;
    }
}

std::size_t head_offset(const HeadLayout& hl, std::size_t b, std::size_t h) {
    return (b * hl.d + h * hl.head_dim) * hl.tokens;
}

}  // namespace

Tensor attention_probabilities(const Tensor& q, const Tensor& k, std::size_t heads) {
    if (q.shape() != k.shape()) throw ShapeError("attention: q/k shape mismatch");
    const HeadLayout hl = layout_of(q.shape(), heads);
    Tensor probs(Shape{hl.n, hl.heads, hl.tokens, hl.tokens});
    const std::size_t tt = hl.tokens * hl.tokens;
    for (std::size_t b = 0; b < hl.n; ++b) {
        for (std::size_t h = 0; h < hl.heads; ++h) {
            const std::size_t off = head_offset(hl, b, h);
            head_scores(hl, q.data().data() + off, k.data().data() + off,
                        probs.data().data() + (b * hl.heads + h) * tt);
        }
    }
    return probs;
}

TokenSequence mhsa(const TokenSequence& f, const ParamStore& params, const std::string& prefix,
                   std::size_t heads) {
    ad::Graph g;
    Binding b(g, params, false);
    const ad::Var out = ad::mhsa(b, prefix, g.constant(f.tokens), heads);
    return {g.value(out), f.geometry};
}

TokenSequence encoder_block(const TokenSequence& f, const ParamStore& params,
                            const std::string& prefix, std::size_t heads) {
    ad::Graph g;
    Binding b(g, params, false);
    const ad::Var out = ad::encoder_block(b, prefix, g.constant(f.tokens), heads);
    return {g.value(out), f.geometry};
}

namespace ad {

Var multi_head_attention(Graph& g, Var q, Var k, Var v, std::size_t heads) {
    const Shape s = g.value(q).shape();
    if (g.value(k).shape() != s || g.value(v).shape() != s) {
        throw ShapeError("attention: q, k, v must share shape");
    }
    const HeadLayout hl = layout_of(s, heads);
    const std::size_t t_n = hl.tokens;
    const std::size_t tt = t_n * t_n;
    auto probs = std::make_shared<std::vector<double>>(hl.n * hl.heads * tt);
    Tensor out(s);
    {
        const double* qd = g.value(q).data().data();
        const double* kd = g.value(k).data().data();
        const double* vd = g.value(v).data().data();
        double* od = out.data().data();
        double* pd = probs->data();
        parallel_for(hl.n * hl.heads, [&](std::size_t item) {
            const std::size_t b = item / hl.heads;
            const std::size_t h = item % hl.heads;
            const std::size_t off = head_offset(hl, b, h);
            double* p = pd + item * tt;
            head_scores(hl, qd + off, kd + off, p);
            for (std::size_t c = 0; c < hl.head_dim; ++c) {
                const double* vc = vd + off + c * t_n;
                double* oc = od + off + c * t_n;
                for (std::size_t t = 0; t < t_n; ++t) {
                    const double* row = p + t * t_n;
                    double acc = 0.0;
                    for (std::size_t sidx = 0; sidx < t_n; ++sidx) acc += row[sidx] * vc[sidx];
                    oc[t] = acc;
                }
            }
        });
    }
    return g.record(std::move(out), {q, k, v}, [=](Graph& gr, const Tensor& dy) {
        const double* qd = gr.value(q).data().data();
        const double* kd = gr.value(k).data().data();
        const double* vd = gr.value(v).data().data();
        const double* gy = dy.data().data();
        const double scale = 1.0 / std::sqrt(static_cast<double>(hl.head_dim));
        Tensor dq(s);
        Tensor dk(s);
        Tensor dv(s);
        double* dqd = dq.data().data();
        double* dkd = dk.data().data();
        double* dvd = dv.data().data();
        parallel_for(hl.n * hl.heads, [&](std::size_t item) {
            const std::size_t b = item / hl.heads;
            const std::size_t h = item % hl.heads;
            const std::size_t off = head_offset(hl, b, h);
            const double* p = probs->data() + item * tt;
            std::vector<double> ds(tt, 0.0);
            // dP = dOut V^T and dV = P^T dOut.
            for (std::size_t c = 0; c < hl.head_dim; ++c) {
                const double* vc = vd + off + c * t_n;
                const double* gc = gy + off + c * t_n;
                double* dvc = dvd + off + c * t_n;
                for (std::size_t t = 0; t < t_n; ++t) {
                    const double go = gc[t];
                    const double* prow = p + t * t_n;
                    double* dsrow = ds.data() + t * t_n;
                    for (std::size_t sidx = 0; sidx < t_n; ++sidx) {
                        dsrow[sidx] += go * vc[sidx];
                        dvc[sidx] += prow[sidx] * go;
                    }
                }
            }
            // Softmax adjoint, folded with the 1/sqrt(d_h) scale.
            for (std::size_t t = 0; t < t_n; ++t) {
                const double* prow = p + t * t_n;
                double* dsrow = ds.data() + t * t_n;
                double dot = 0.0;
                for (std::size_t sidx = 0; sidx < t_n; ++sidx) dot += dsrow[sidx] * prow[sidx];
                for (std::size_t sidx = 0; sidx < t_n; ++sidx) {
                    dsrow[sidx] = prow[sidx] * (dsrow[sidx] - dot) * scale;
                }
            }
            for (std::size_t c = 0; c < hl.head_dim; ++c) {
                const double* qc = qd + off + c * t_n;
                const double* kc = kd + off + c * t_n;
                double* dqc = dqd + off + c * t_n;
                double* dkc = dkd + off + c * t_n;
                for (std::size_t t = 0; t < t_n; ++t) {
                    const double* dsrow = ds.data() + t * t_n;
                    double acc = 0.0;
                    const double qv = qc[t];
                    for (std::size_t sidx = 0; sidx < t_n; ++sidx) {
                        acc += dsrow[sidx] * kc[sidx];
                        dkc[sidx] += dsrow[sidx] * qv;
                    }
                    dqc[t] = acc;
                }
            }
        });
        gr.accumulate(q, dq);
        gr.accumulate(k, dk);
        gr.accumulate(v, dv);
    });
}

Var mhsa(Binding& b, const std::string& prefix, Var tokens, std::size_t heads) {
    Graph& g = b.graph();
    const Var x = layernorm(g, tokens, b(prefix + ".ln1.gamma"), b(prefix + ".ln1.beta"),
                            kLayerNormEps);
    const Var q = conv_layer(b, prefix + ".attn.q", x, Padding::Same);
    const Var k = conv_layer(b, prefix + ".attn.k", x, Padding::Same);
    const Var v = conv_layer(b, prefix + ".attn.v", x, Padding::Same);
    const Var attn = multi_head_attention(g, q, k, v, heads);
    return add(g, tokens, conv_layer(b, prefix + ".attn.o", attn, Padding::Same));
}

Var encoder_block(Binding& b, const std::string& prefix, Var tokens, std::size_t heads) {
    Graph& g = b.graph();
    const Var x = mhsa(b, prefix, tokens, heads);
    const Var normed = layernorm(g, x, b(prefix + ".ln2.gamma"), b(prefix + ".ln2.beta"),
                                 kLayerNormEps);
    const Var hidden = gelu(g, conv_layer(b, prefix + ".ffn.fc1", normed, Padding::Same));
    return add(g, x, conv_layer(b, prefix + ".ffn.fc2", hidden, Padding::Same));
}

}  // namespace ad

}  // namespace tafe
