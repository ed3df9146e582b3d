#include "garment/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "garment/diffusion.hpp"
#include "garment/rng.hpp"

namespace garment {

namespace {

constexpr int kGnGroups = 4;
constexpr double kGnEps = 1e-5;

void conv_fwd(const Grid& in, const double* w, const double* b, int oc, int ks, int stride, Grid& out) {
    const int ic = in.channels(), ih = in.height(), iw = in.width();
    const int pad = ks / 2;
    const int oh = (ih + 2 * pad - ks) / stride + 1;
    const int ow = (iw + 2 * pad - ks) / stride + 1;
    out = Grid(oc, oh, ow);
    for (int o = 0; o < oc; ++o) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                double acc = b[o];
                for (int i = 0; i < ic; ++i) {
                    const double* plane = in.channel(i);
                    const double* wk = w + ((std::size_t(o) * ic + i) * ks) * ks;
                    for (int ky = 0; ky < ks; ++ky) {
                        const int y = oy * stride + ky - pad;
                        if (y < 0 || y >= ih) continue;
                        for (int kx = 0; kx < ks; ++kx) {
                            const int x = ox * stride + kx - pad;
                            if (x < 0 || x >= iw) continue;
                            acc += wk[ky * ks + kx] * plane[std::size_t(y) * iw + x];
                        }
                    }
                }
                out.at(o, oy, ox) = acc;
            }
        }
    }
}

/// Accumulates into d_in, d_w and d_b.
void conv_bwd(const Grid& in, const double* w, int oc, int ks, int stride, const Grid& d_out, Grid& d_in,
              double* d_w, double* d_b) {
    const int ic = in.channels(), ih = in.height(), iw = in.width();
    const int pad = ks / 2;
    const int oh = d_out.height(), ow = d_out.width();
    for (int o = 0; o < oc; ++o) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const double g = d_out.at(o, oy, ox);
                if (g == 0.0) continue;
                d_b[o] += g;
                for (int i = 0; i < ic; ++i) {
                    const double* plane = in.channel(i);
                    double* d_plane = d_in.channel(i);
                    const std::size_t wbase = (std::size_t(o) * ic + i) * ks * ks;
                    for (int ky = 0; ky < ks; ++ky) {
                        const int y = oy * stride + ky - pad;
                        if (y < 0 || y >= ih) continue;
                        for (int kx = 0; kx < ks; ++kx) {
                            const int x = ox * stride + kx - pad;
                            if (x < 0 || x >= iw) continue;
                            d_w[wbase + ky * ks + kx] += g * plane[std::size_t(y) * iw + x];
                            d_plane[std::size_t(y) * iw + x] += g * w[wbase + ky * ks + kx];
                        }
                    }
                }
            }
        }
    }
}

void gn_fwd(const Grid& in, const double* gamma, const double* beta, Denoiser::Workspace::GnCache& c) {
    const int ch = in.channels(), h = in.height(), w = in.width();
    const int groups = std::min(kGnGroups, ch);
    const int cpg = ch / groups;
    c.in = in;
    c.mean.assign(groups, 0.0);
    c.inv_std.assign(groups, 0.0);
    c.xhat = Grid(ch, h, w);
    c.out = Grid(ch, h, w);
    const std::size_t plane = std::size_t(h) * w;
    for (int g = 0; g < groups; ++g) {
        const double n = double(cpg * plane);
        double mean = 0.0;
        for (int cc = g * cpg; cc < (g + 1) * cpg; ++cc) {
            const double* p = in.channel(cc);
            for (std::size_t i = 0; i < plane; ++i) mean += p[i];
        }
        mean /= n;
        double var = 0.0;
        for (int cc = g * cpg; cc < (g + 1) * cpg; ++cc) {
            const double* p = in.channel(cc);
            for (std::size_t i = 0; i < plane; ++i) var += (p[i] - mean) * (p[i] - mean);
        }
        var /= n;
        const double inv_std = 1.0 / std::sqrt(var + kGnEps);
        c.mean[g] = mean;
        c.inv_std[g] = inv_std;
        for (int cc = g * cpg; cc < (g + 1) * cpg; ++cc) {
            const double* p = in.channel(cc);
            double* xh = c.xhat.channel(cc);
            double* o = c.out.channel(cc);
            for (std::size_t i = 0; i < plane; ++i) {
                xh[i] = (p[i] - mean) * inv_std;
                o[i] = gamma[cc] * xh[i] + beta[cc];
            }
        }
    }
}

void gn_bwd(const Denoiser::Workspace::GnCache& c, const double* gamma, const Grid& d_out, Grid& d_in,
            double* d_gamma, double* d_beta) {
    const int ch = c.in.channels(), h = c.in.height(), w = c.in.width();
    const int groups = std::min(kGnGroups, ch);
    const int cpg = ch / groups;
    const std::size_t plane = std::size_t(h) * w;
    for (int g = 0; g < groups; ++g) {
        const double n = double(cpg * plane);
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (int cc = g * cpg; cc < (g + 1) * cpg; ++cc) {
            const double* go = d_out.channel(cc);
            const double* xh = c.xhat.channel(cc);
            for (std::size_t i = 0; i < plane; ++i) {
                d_gamma[cc] += go[i] * xh[i];
                d_beta[cc] += go[i];
                const double dxh = go[i] * gamma[cc];
                sum_dxhat += dxh;
                sum_dxhat_xhat += dxh * xh[i];
            }
        }
        const double m1 = sum_dxhat / n;
        const double m2 = sum_dxhat_xhat / n;
        for (int cc = g * cpg; cc < (g + 1) * cpg; ++cc) {
            const double* go = d_out.channel(cc);
            const double* xh = c.xhat.channel(cc);
            double* di = d_in.channel(cc);
            for (std::size_t i = 0; i < plane; ++i) {
                const double dxh = go[i] * gamma[cc];
                di[i] += c.inv_std[g] * (dxh - m1 - xh[i] * m2);
            }
        }
    }
}

void silu_fwd(const Grid& in, Grid& out) {
    out = Grid(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-in[i]));
        out[i] = in[i] * s;
    }
}

void silu_bwd(const Grid& in, const Grid& d_out, Grid& d_in) {
    for (std::size_t i = 0; i < in.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-in[i]));
        d_in[i] += d_out[i] * s * (1.0 + in[i] * (1.0 - s));
    }
}

void upsample2_fwd(const Grid& in, Grid& out) {
    const int c = in.channels(), h = in.height(), w = in.width();
    out = Grid(c, h * 2, w * 2);
    for (int cc = 0; cc < c; ++cc)
        for (int y = 0; y < 2 * h; ++y)
            for (int x = 0; x < 2 * w; ++x) out.at(cc, y, x) = in.at(cc, y / 2, x / 2);
}

void upsample2_bwd(const Grid& d_out, Grid& d_in) {
    const int c = d_in.channels(), h = d_in.height(), w = d_in.width();
    for (int cc = 0; cc < c; ++cc)
        for (int y = 0; y < 2 * h; ++y)
            for (int x = 0; x < 2 * w; ++x) d_in.at(cc, y / 2, x / 2) += d_out.at(cc, y, x);
}

std::vector<double> time_features(int t, int dim) {
    std::vector<double> f(dim);
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / half);
        f[i] = std::sin(t * freq);
        f[half + i] = std::cos(t * freq);
    }
    return f;
}

}  // namespace

void DenoiserSpec::validate() const {
    if (image_size < 16 || image_size % 4 != 0)
        throw std::invalid_argument("DenoiserSpec: image_size must be >= 16 and divisible by 4");
    if (base_channels < kGnGroups || base_channels % kGnGroups != 0)
        throw std::invalid_argument("DenoiserSpec: base_channels must be a positive multiple of 4");
    if (time_dim < 2 || time_dim % 2 != 0) throw std::invalid_argument("DenoiserSpec: time_dim must be even");
    if (attention_dim < 1 || embed_dim < 1) throw std::invalid_argument("DenoiserSpec: attention dims must be >= 1");
    if (max_quantity < 1) throw std::invalid_argument("DenoiserSpec: max_quantity must be >= 1");
    if (n_classes < 1) throw std::invalid_argument("DenoiserSpec: n_classes must be >= 1");
    if (attention_layers.empty()) throw std::invalid_argument("DenoiserSpec: at least one exposed attention layer");
    for (std::size_t i = 0; i < attention_layers.size(); ++i) {
        if (attention_layers[i] < 0 || attention_layers[i] > 1)
            throw std::invalid_argument("DenoiserSpec: attention sites are 0 (S/2) and 1 (S/4)");
        if (i > 0 && attention_layers[i] <= attention_layers[i - 1])
            throw std::invalid_argument("DenoiserSpec: attention_layers must be strictly increasing");
    }
}

Conditioning conditioning_from_caption(const ComponentVocabulary& vocab, const std::string& caption) {
    const ParseResult parsed = parse_caption(vocab, caption);
    if (parsed.warning_count > 0)
        throw std::invalid_argument("unparseable caption: " + caption + " (" + parsed.diagnostics.front() + ")");
    Conditioning cond;
    cond.clauses = parsed.clauses;
    return cond;
}

Conditioning conditioning_from_components(const std::vector<ComponentAnnotation>& components) {
    Conditioning cond;
    for (const auto& comp : components) {
        if (!comp.present()) continue;
        const auto c = comp.mean_center();
        cond.clauses.push_back(
            {comp.class_index, comp.description, comp.quantity, PositionBucket::of_point(c[0], c[1])});
    }
    return cond;
}

Denoiser::Denoiser(DenoiserSpec spec, std::uint64_t param_seed) : spec_(std::move(spec)) {
    spec_.validate();
    const int F = spec_.base_channels;
    const int Dt = spec_.time_dim;
    const int Da = spec_.attention_dim;
    const int De = spec_.embed_dim;
    const int K = spec_.n_classes;

    auto add = [&](const std::string& name, std::vector<int> shape) {
        std::size_t size = 1;
        for (int d : shape) size *= std::size_t(d);
        table_.push_back({name, std::move(shape), params_.size(), size});
        params_.resize(params_.size() + size);
    };
    auto add_res = [&](const std::string& base, int c) {
        add(base + ".gn.gamma", {c});
        add(base + ".gn.beta", {c});
        add(base + ".conv.w", {c, c, 3, 3});
        add(base + ".conv.b", {c});
        add(base + ".time.w", {c, Dt});
        add(base + ".time.b", {c});
    };
    auto add_attn = [&](const std::string& base, int c) {
        add(base + ".wq", {Da, c});
        add(base + ".bq", {Da});
        add(base + ".wk", {Da, De});
        add(base + ".bk", {Da});
        add(base + ".wv", {Da, De});
        add(base + ".bv", {Da});
        add(base + ".wo", {c, Da});
        add(base + ".bo", {c});
    };

    add("conv_in.w", {F, 3, 3, 3});
    add("conv_in.b", {F});
    add_res("rb1", F);
    add("down1.w", {2 * F, F, 3, 3});
    add("down1.b", {2 * F});
    add_res("rb2", 2 * F);
    add_attn("attn1", 2 * F);
    add("down2.w", {4 * F, 2 * F, 3, 3});
    add("down2.b", {4 * F});
    add_res("rb3", 4 * F);
    add_attn("attn2", 4 * F);
    add_res("mid", 4 * F);
    add("up1.w", {2 * F, 4 * F, 3, 3});
    add("up1.b", {2 * F});
    add_res("rb4", 2 * F);
    add("up2.w", {F, 2 * F, 3, 3});
    add("up2.b", {F});
    add_res("rb5", F);
    add("out.gn.gamma", {F});
    add("out.gn.beta", {F});
    add("v_head.w", {3, F, 3, 3});
    add("v_head.b", {3});
    if (spec_.heatmap_head) {
        add("heat_head.w", {K, F, 1, 1});
        add("heat_head.b", {K});
    }
    add("emb.null", {De});
    add("emb.class", {K, De});
    add("emb.qty", {spec_.max_quantity + 1, De});
    add("emb.bucket", {9, De});

    Rng rng(param_seed, "params");
    for (const auto& e : table_) {
        double* dst = params_.data() + e.offset;
        const bool is_weight = e.name.ends_with(".w") || e.name.ends_with(".wq") || e.name.ends_with(".wk") ||
                               e.name.ends_with(".wv") || e.name.ends_with(".wo");
        if (e.name.ends_with(".gn.gamma")) {
            std::fill(dst, dst + e.size, 1.0);
        } else if (e.name.starts_with("emb.")) {
            for (std::size_t i = 0; i < e.size; ++i) dst[i] = 0.5 * rng.gaussian();
        } else if (e.name == "heat_head.b") {
            // Sigmoid starts near zero so untrained soft counts stay small.
            std::fill(dst, dst + e.size, -4.0);
        } else if (e.name.ends_with(".wo")) {
            std::fill(dst, dst + e.size, 0.0);  // attention starts as identity
        } else if (is_weight) {
            std::size_t fan_in = e.size / std::size_t(e.shape[0]);
            double std = 1.0 / std::sqrt(double(fan_in));
            if (e.name.starts_with("v_head") || e.name.starts_with("heat_head")) std *= 0.1;
            for (std::size_t i = 0; i < e.size; ++i) dst[i] = std * rng.gaussian();
        }
        // All other tensors (biases, gn.beta) start at zero.
    }
}

std::size_t Denoiser::off(const std::string& name) const {
    for (const auto& e : table_)
        if (e.name == name) return e.offset;
    throw std::logic_error("unknown parameter tensor " + name);
}

PredictOutput Denoiser::predict(const Grid& x_t, int t, const Conditioning& cond) const {
    Workspace ws;
    return forward(x_t, t, cond, ws);
}

PredictOutput Denoiser::forward(const Grid& x_t, int t, const Conditioning& cond, Workspace& ws) const {
    const int F = spec_.base_channels;
    const int Dt = spec_.time_dim;
    const int Da = spec_.attention_dim;
    const int De = spec_.embed_dim;
    const int K = spec_.n_classes;
    if (x_t.channels() != 3 || x_t.height() != spec_.image_size || x_t.width() != spec_.image_size)
        throw std::invalid_argument("Denoiser: input must be 3 x S x S");
    for (const auto& cl : cond.clauses)
        if (cl.class_index < 0 || cl.class_index >= K)
            throw std::invalid_argument("Denoiser: conditioning class out of range");

    ws = Workspace{};
    ws.t = t;
    ws.temb = time_features(t, Dt);
    ws.clauses = cond.clauses;
    ws.n_tok = 1 + int(cond.clauses.size());
    ws.tokens.assign(std::size_t(ws.n_tok) * De, 0.0);
    {
        const double* null_tok = p("emb.null");
        std::copy(null_tok, null_tok + De, ws.tokens.begin());
        const double* ec = p("emb.class");
        const double* eq = p("emb.qty");
        const double* eb = p("emb.bucket");
        for (int j = 0; j < int(cond.clauses.size()); ++j) {
            const auto& cl = cond.clauses[j];
            const int qrow = std::min(cl.quantity, spec_.max_quantity);
            double* tok = ws.tokens.data() + std::size_t(j + 1) * De;
            for (int e = 0; e < De; ++e)
                tok[e] = ec[std::size_t(cl.class_index) * De + e] + eq[std::size_t(qrow) * De + e] +
                         eb[std::size_t(cl.bucket.index()) * De + e];
        }
    }

    auto res = [&](const std::string& base, const Grid& in, Workspace::ResCache& c, int ch) {
        gn_fwd(in, p(base + ".gn.gamma"), p(base + ".gn.beta"), c.gn);
        silu_fwd(c.gn.out, c.silu_out);
        Grid conv_out;
        conv_fwd(c.silu_out, p(base + ".conv.w"), p(base + ".conv.b"), ch, 3, 1, conv_out);
        const double* tw = p(base + ".time.w");
        const double* tb = p(base + ".time.b");
        Grid out = in;
        for (int cc = 0; cc < ch; ++cc) {
            double bias = tb[cc];
            for (int d = 0; d < Dt; ++d) bias += tw[std::size_t(cc) * Dt + d] * ws.temb[d];
            double* o = out.channel(cc);
            const double* cv = conv_out.channel(cc);
            const std::size_t plane = std::size_t(in.height()) * in.width();
            for (std::size_t i = 0; i < plane; ++i) o[i] += cv[i] + bias;
        }
        return out;
    };

    auto attn = [&](const std::string& base, const Grid& in, Workspace::AttnCache& c, int ch) {
        const int h = in.height(), w = in.width();
        const int n_pix = h * w;
        const int n_tok = ws.n_tok;
        c.in = in;
        c.n_pix = n_pix;
        c.q.assign(std::size_t(n_pix) * Da, 0.0);
        c.k.assign(std::size_t(n_tok) * Da, 0.0);
        c.v.assign(std::size_t(n_tok) * Da, 0.0);
        c.soft.assign(std::size_t(n_pix) * n_tok, 0.0);
        c.ctx.assign(std::size_t(n_pix) * Da, 0.0);

        const double* wq = p(base + ".wq");
        const double* bq = p(base + ".bq");
        const double* wk = p(base + ".wk");
        const double* bk = p(base + ".bk");
        const double* wv = p(base + ".wv");
        const double* bv = p(base + ".bv");
        const double* wo = p(base + ".wo");
        const double* bo = p(base + ".bo");

        for (int pix = 0; pix < n_pix; ++pix)
            for (int a = 0; a < Da; ++a) {
                double acc = bq[a];
                for (int cc = 0; cc < ch; ++cc) acc += wq[std::size_t(a) * ch + cc] * in[std::size_t(cc) * n_pix + pix];
                c.q[std::size_t(pix) * Da + a] = acc;
            }
        for (int j = 0; j < n_tok; ++j) {
            const double* tok = ws.tokens.data() + std::size_t(j) * De;
            for (int a = 0; a < Da; ++a) {
                double ka = bk[a], va = bv[a];
                for (int e = 0; e < De; ++e) {
                    ka += wk[std::size_t(a) * De + e] * tok[e];
                    va += wv[std::size_t(a) * De + e] * tok[e];
                }
                c.k[std::size_t(j) * Da + a] = ka;
                c.v[std::size_t(j) * Da + a] = va;
            }
        }
        const double scale = 1.0 / std::sqrt(double(Da));
        std::vector<double> logits(n_tok);
        for (int pix = 0; pix < n_pix; ++pix) {
            double mx = -1e300;
            for (int j = 0; j < n_tok; ++j) {
                double acc = 0.0;
                for (int a = 0; a < Da; ++a) acc += c.q[std::size_t(pix) * Da + a] * c.k[std::size_t(j) * Da + a];
                logits[j] = acc * scale;
                mx = std::max(mx, logits[j]);
            }
            double z = 0.0;
            for (int j = 0; j < n_tok; ++j) z += std::exp(logits[j] - mx);
            for (int j = 0; j < n_tok; ++j) c.soft[std::size_t(pix) * n_tok + j] = std::exp(logits[j] - mx) / z;
            for (int a = 0; a < Da; ++a) {
                double acc = 0.0;
                for (int j = 0; j < n_tok; ++j)
                    acc += c.soft[std::size_t(pix) * n_tok + j] * c.v[std::size_t(j) * Da + a];
                c.ctx[std::size_t(pix) * Da + a] = acc;
            }
        }
        Grid out = in;
        for (int cc = 0; cc < ch; ++cc) {
            double* o = out.channel(cc);
            for (int pix = 0; pix < n_pix; ++pix) {
                double acc = bo[cc];
                for (int a = 0; a < Da; ++a) acc += wo[std::size_t(cc) * Da + a] * c.ctx[std::size_t(pix) * Da + a];
                o[pix] += acc;
            }
        }
        return out;
    };

    ws.x_in = x_t;
    conv_fwd(x_t, p("conv_in.w"), p("conv_in.b"), F, 3, 1, ws.h0);
    ws.h1 = res("rb1", ws.h0, ws.rb1, F);
    conv_fwd(ws.h1, p("down1.w"), p("down1.b"), 2 * F, 3, 2, ws.h2);
    ws.h3 = res("rb2", ws.h2, ws.rb2, 2 * F);
    ws.h4 = attn("attn1", ws.h3, ws.at1, 2 * F);
    conv_fwd(ws.h4, p("down2.w"), p("down2.b"), 4 * F, 3, 2, ws.h5);
    ws.h6 = res("rb3", ws.h5, ws.rb3, 4 * F);
    ws.h7 = attn("attn2", ws.h6, ws.at2, 4 * F);
    ws.h8 = res("mid", ws.h7, ws.mid, 4 * F);
    upsample2_fwd(ws.h8, ws.u1);
    conv_fwd(ws.u1, p("up1.w"), p("up1.b"), 2 * F, 3, 1, ws.u2);
    ws.u3 = ws.u2;
    for (std::size_t i = 0; i < ws.u3.size(); ++i) ws.u3[i] += ws.h4[i];
    ws.u4 = res("rb4", ws.u3, ws.rb4, 2 * F);
    upsample2_fwd(ws.u4, ws.u5);
    conv_fwd(ws.u5, p("up2.w"), p("up2.b"), F, 3, 1, ws.u6);
    ws.u7 = ws.u6;
    for (std::size_t i = 0; i < ws.u7.size(); ++i) ws.u7[i] += ws.h1[i];
    ws.u8 = res("rb5", ws.u7, ws.rb5, F);
    gn_fwd(ws.u8, p("out.gn.gamma"), p("out.gn.beta"), ws.out_gn);
    silu_fwd(ws.out_gn.out, ws.out_silu);

    PredictOutput out;
    conv_fwd(ws.out_silu, p("v_head.w"), p("v_head.b"), 3, 3, 1, out.v_pred);
    if (spec_.heatmap_head) {
        Grid logits;
        conv_fwd(ws.out_silu, p("heat_head.w"), p("heat_head.b"), K, 1, 1, logits);
        ws.heat = Grid(logits.shape());
        for (std::size_t i = 0; i < logits.size(); ++i) ws.heat[i] = 1.0 / (1.0 + std::exp(-logits[i]));
        out.heatmaps = ws.heat;
    }

    out.attention.maps.assign(K, {});
    const Workspace::AttnCache* sites[2] = {&ws.at1, &ws.at2};
    for (int j = 0; j < int(ws.clauses.size()); ++j) {
        const int ci = ws.clauses[j].class_index;
        for (int site : spec_.attention_layers) {
            const auto& c = *sites[site];
            const int h = c.in.height(), w = c.in.width();
            Grid map(1, h, w);
            for (int pix = 0; pix < c.n_pix; ++pix) map[pix] = c.soft[std::size_t(pix) * ws.n_tok + (j + 1)];
            out.attention.maps[ci].push_back(std::move(map));
        }
    }
    return out;
}

Grid Denoiser::backward(const Workspace& ws, const Grid& d_v, const AttentionMapSet& d_attention,
                        const Grid& d_heatmaps, std::vector<double>& param_grad) const {
    const int F = spec_.base_channels;
    const int Dt = spec_.time_dim;
    const int Da = spec_.attention_dim;
    const int De = spec_.embed_dim;
    const int K = spec_.n_classes;
    if (param_grad.size() != params_.size())
        throw std::invalid_argument("Denoiser::backward: param_grad must be sized n_parameters");

    auto g = [&](const std::string& name) { return param_grad.data() + off(name); };

    auto res_bwd = [&](const std::string& base, const Workspace::ResCache& c, const Grid& d_out, Grid& d_in,
                       int ch) {
        // Skip path.
        for (std::size_t i = 0; i < d_out.size(); ++i) d_in[i] += d_out[i];
        // Time-bias path.
        double* d_tw = g(base + ".time.w");
        double* d_tb = g(base + ".time.b");
        const std::size_t plane = std::size_t(d_out.height()) * d_out.width();
        for (int cc = 0; cc < ch; ++cc) {
            double s = 0.0;
            const double* go = d_out.channel(cc);
            for (std::size_t i = 0; i < plane; ++i) s += go[i];
            d_tb[cc] += s;
            for (int d = 0; d < Dt; ++d) d_tw[std::size_t(cc) * Dt + d] += s * ws.temb[d];
        }
        // Conv path.
        Grid d_silu(c.silu_out.shape());
        conv_bwd(c.silu_out, p(base + ".conv.w"), ch, 3, 1, d_out, d_silu, g(base + ".conv.w"),
                 g(base + ".conv.b"));
        Grid d_gn_out(c.gn.out.shape());
        silu_bwd(c.gn.out, d_silu, d_gn_out);
        gn_bwd(c.gn, p(base + ".gn.gamma"), d_gn_out, d_in, g(base + ".gn.gamma"), g(base + ".gn.beta"));
    };

    std::vector<double> d_tokens(ws.tokens.size(), 0.0);

    auto attn_bwd = [&](const std::string& base, const Workspace::AttnCache& c, int site, const Grid& d_out,
                        Grid& d_in, int ch) {
        const int n_pix = c.n_pix;
        const int n_tok = ws.n_tok;
        const double* wq = p(base + ".wq");
        const double* wk = p(base + ".wk");
        const double* wv = p(base + ".wv");
        const double* wo = p(base + ".wo");
        double* d_wq = g(base + ".wq");
        double* d_bq = g(base + ".bq");
        double* d_wk = g(base + ".wk");
        double* d_bk = g(base + ".bk");
        double* d_wv = g(base + ".wv");
        double* d_bv = g(base + ".bv");
        double* d_wo = g(base + ".wo");
        double* d_bo = g(base + ".bo");

        // Residual.
        for (std::size_t i = 0; i < d_out.size(); ++i) d_in[i] += d_out[i];

        // Output projection.
        std::vector<double> d_ctx(std::size_t(n_pix) * Da, 0.0);
        for (int cc = 0; cc < ch; ++cc) {
            const double* go = d_out.channel(cc);
            for (int pix = 0; pix < n_pix; ++pix) {
                const double grad = go[pix];
                if (grad == 0.0) continue;
                d_bo[cc] += grad;
                for (int a = 0; a < Da; ++a) {
                    d_wo[std::size_t(cc) * Da + a] += grad * c.ctx[std::size_t(pix) * Da + a];
                    d_ctx[std::size_t(pix) * Da + a] += grad * wo[std::size_t(cc) * Da + a];
                }
            }
        }

        // Attention-weight gradients: from the context mix plus any exposed
        // supervised maps at this site.
        std::vector<double> d_soft(std::size_t(n_pix) * n_tok, 0.0);
        for (int pix = 0; pix < n_pix; ++pix)
            for (int j = 0; j < n_tok; ++j) {
                double acc = 0.0;
                for (int a = 0; a < Da; ++a) acc += d_ctx[std::size_t(pix) * Da + a] * c.v[std::size_t(j) * Da + a];
                d_soft[std::size_t(pix) * n_tok + j] = acc;
            }
        int layer_pos = -1;
        for (std::size_t i = 0; i < spec_.attention_layers.size(); ++i)
            if (spec_.attention_layers[i] == site) layer_pos = int(i);
        if (layer_pos >= 0 && !d_attention.maps.empty()) {
            for (int j = 0; j < int(ws.clauses.size()); ++j) {
                const int ci = ws.clauses[j].class_index;
                if (ci >= int(d_attention.maps.size())) continue;
                const auto& layers = d_attention.maps[ci];
                if (layer_pos >= int(layers.size()) || layers[layer_pos].empty()) continue;
                const Grid& ext = layers[layer_pos];
                for (int pix = 0; pix < n_pix; ++pix) d_soft[std::size_t(pix) * n_tok + (j + 1)] += ext[pix];
            }
        }

        std::vector<double> d_v_tok(std::size_t(n_tok) * Da, 0.0);
        for (int pix = 0; pix < n_pix; ++pix)
            for (int a = 0; a < Da; ++a) {
                const double dc = d_ctx[std::size_t(pix) * Da + a];
                if (dc == 0.0) continue;
                for (int j = 0; j < n_tok; ++j)
                    d_v_tok[std::size_t(j) * Da + a] += dc * c.soft[std::size_t(pix) * n_tok + j];
            }

        // Softmax, then the q/k bilinear form.
        const double scale = 1.0 / std::sqrt(double(Da));
        std::vector<double> d_q(std::size_t(n_pix) * Da, 0.0);
        std::vector<double> d_k_tok(std::size_t(n_tok) * Da, 0.0);
        for (int pix = 0; pix < n_pix; ++pix) {
            const double* soft = c.soft.data() + std::size_t(pix) * n_tok;
            const double* ds = d_soft.data() + std::size_t(pix) * n_tok;
            double dot = 0.0;
            for (int j = 0; j < n_tok; ++j) dot += soft[j] * ds[j];
            for (int j = 0; j < n_tok; ++j) {
                const double d_logit = soft[j] * (ds[j] - dot) * scale;
                if (d_logit == 0.0) continue;
                for (int a = 0; a < Da; ++a) {
                    d_q[std::size_t(pix) * Da + a] += d_logit * c.k[std::size_t(j) * Da + a];
                    d_k_tok[std::size_t(j) * Da + a] += d_logit * c.q[std::size_t(pix) * Da + a];
                }
            }
        }

        // Projections back to features and tokens.
        for (int pix = 0; pix < n_pix; ++pix)
            for (int a = 0; a < Da; ++a) {
                const double dq = d_q[std::size_t(pix) * Da + a];
                if (dq == 0.0) continue;
                d_bq[a] += dq;
                for (int cc = 0; cc < ch; ++cc) {
                    d_wq[std::size_t(a) * ch + cc] += dq * c.in[std::size_t(cc) * n_pix + pix];
                    d_in[std::size_t(cc) * n_pix + pix] += dq * wq[std::size_t(a) * ch + cc];
                }
            }
        for (int j = 0; j < n_tok; ++j) {
            const double* tok = ws.tokens.data() + std::size_t(j) * De;
            double* d_tok = d_tokens.data() + std::size_t(j) * De;
            for (int a = 0; a < Da; ++a) {
                const double dk = d_k_tok[std::size_t(j) * Da + a];
                const double dv = d_v_tok[std::size_t(j) * Da + a];
                d_bk[a] += dk;
                d_bv[a] += dv;
                for (int e = 0; e < De; ++e) {
                    d_wk[std::size_t(a) * De + e] += dk * tok[e];
                    d_wv[std::size_t(a) * De + e] += dv * tok[e];
                    d_tok[e] += dk * wk[std::size_t(a) * De + e] + dv * wv[std::size_t(a) * De + e];
                }
            }
        }
    };

    // Heads into the shared feature trunk. Any of the three output gradients
    // may be empty when that output received no loss.
    Grid d_out_silu(ws.out_silu.shape());
    if (!d_v.empty()) conv_bwd(ws.out_silu, p("v_head.w"), 3, 3, 1, d_v, d_out_silu, g("v_head.w"), g("v_head.b"));
    if (spec_.heatmap_head && !d_heatmaps.empty()) {
        Grid d_logits(ws.heat.shape());
        for (std::size_t i = 0; i < ws.heat.size(); ++i)
            d_logits[i] = d_heatmaps[i] * ws.heat[i] * (1.0 - ws.heat[i]);
        conv_bwd(ws.out_silu, p("heat_head.w"), K, 1, 1, d_logits, d_out_silu, g("heat_head.w"),
                 g("heat_head.b"));
    }

    Grid d_gn_out(ws.out_gn.out.shape());
    silu_bwd(ws.out_gn.out, d_out_silu, d_gn_out);
    Grid d_u8(ws.u8.shape());
    gn_bwd(ws.out_gn, p("out.gn.gamma"), d_gn_out, d_u8, g("out.gn.gamma"), g("out.gn.beta"));

    Grid d_u7(ws.u7.shape());
    res_bwd("rb5", ws.rb5, d_u8, d_u7, F);

    Grid d_h1(ws.h1.shape());
    for (std::size_t i = 0; i < d_u7.size(); ++i) d_h1[i] += d_u7[i];  // skip into u7
    Grid d_u5(ws.u5.shape());
    conv_bwd(ws.u5, p("up2.w"), F, 3, 1, d_u7, d_u5, g("up2.w"), g("up2.b"));
    Grid d_u4(ws.u4.shape());
    upsample2_bwd(d_u5, d_u4);

    Grid d_u3(ws.u3.shape());
    res_bwd("rb4", ws.rb4, d_u4, d_u3, 2 * F);

    Grid d_h4(ws.h4.shape());
    for (std::size_t i = 0; i < d_u3.size(); ++i) d_h4[i] += d_u3[i];  // skip into u3
    Grid d_u1(ws.u1.shape());
    conv_bwd(ws.u1, p("up1.w"), 2 * F, 3, 1, d_u3, d_u1, g("up1.w"), g("up1.b"));
    Grid d_h8(ws.h8.shape());
    upsample2_bwd(d_u1, d_h8);

    Grid d_h7(ws.h7.shape());
    res_bwd("mid", ws.mid, d_h8, d_h7, 4 * F);
    Grid d_h6(ws.h6.shape());
    attn_bwd("attn2", ws.at2, 1, d_h7, d_h6, 4 * F);
    Grid d_h5(ws.h5.shape());
    res_bwd("rb3", ws.rb3, d_h6, d_h5, 4 * F);
    conv_bwd(ws.h4, p("down2.w"), 4 * F, 3, 2, d_h5, d_h4, g("down2.w"), g("down2.b"));

    Grid d_h3(ws.h3.shape());
    attn_bwd("attn1", ws.at1, 0, d_h4, d_h3, 2 * F);
    Grid d_h2(ws.h2.shape());
    res_bwd("rb2", ws.rb2, d_h3, d_h2, 2 * F);
    conv_bwd(ws.h1, p("down1.w"), 2 * F, 3, 2, d_h2, d_h1, g("down1.w"), g("down1.b"));

    Grid d_h0(ws.h0.shape());
    res_bwd("rb1", ws.rb1, d_h1, d_h0, F);
    Grid d_x(ws.x_in.shape());
    conv_bwd(ws.x_in, p("conv_in.w"), F, 3, 1, d_h0, d_x, g("conv_in.w"), g("conv_in.b"));

    // Scatter token gradients into the embedding tables.
    {
        double* d_null = g("emb.null");
        double* d_class = g("emb.class");
        double* d_qty = g("emb.qty");
        double* d_bucket = g("emb.bucket");
        for (int e = 0; e < De; ++e) d_null[e] += d_tokens[e];
        for (int j = 0; j < int(ws.clauses.size()); ++j) {
            const auto& cl = ws.clauses[j];
            const int qrow = std::min(cl.quantity, spec_.max_quantity);
            const double* d_tok = d_tokens.data() + std::size_t(j + 1) * De;
            for (int e = 0; e < De; ++e) {
                d_class[std::size_t(cl.class_index) * De + e] += d_tok[e];
                d_qty[std::size_t(qrow) * De + e] += d_tok[e];
                d_bucket[std::size_t(cl.bucket.index()) * De + e] += d_tok[e];
            }
        }
    }
    return d_x;
}

namespace {

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

}  // namespace

void save_checkpoint(const Denoiser& model, const Schedule& schedule, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(kCheckpointMagic, 8);
    put<std::uint32_t>(out, kCheckpointVersion);

    const auto& spec = model.spec();
    put<std::int32_t>(out, spec.image_size);
    put<std::int32_t>(out, spec.base_channels);
    put<std::int32_t>(out, spec.time_dim);
    put<std::int32_t>(out, spec.attention_dim);
    put<std::int32_t>(out, spec.embed_dim);
    put<std::int32_t>(out, spec.max_quantity);
    put<std::int32_t>(out, spec.n_classes);
    put<std::uint8_t>(out, spec.heatmap_head ? 1 : 0);
    put<std::uint8_t>(out, std::uint8_t(spec.attention_layers.size()));
    for (int layer : spec.attention_layers) put<std::int32_t>(out, layer);

    put<std::uint8_t>(out, schedule.kind == Schedule::Kind::cosine ? 1 : 0);
    put<std::int32_t>(out, schedule.T);
    put<std::uint64_t>(out, model.training_steps);

    const auto& table = model.param_table();
    put<std::uint32_t>(out, std::uint32_t(table.size()));
    for (const auto& e : table) {
        put<std::uint16_t>(out, std::uint16_t(e.name.size()));
        out.write(e.name.data(), std::streamsize(e.name.size()));
        put<std::uint8_t>(out, std::uint8_t(e.shape.size()));
        for (int d : e.shape) put<std::int32_t>(out, d);
    }
    for (double v : model.parameters()) put<float>(out, float(v));
    if (!out) throw std::runtime_error("checkpoint write failed: " + path.string());
}

std::pair<Denoiser, Schedule> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw std::runtime_error("not a checkpoint file: " + path.string());
    const auto version = take<std::uint32_t>(in);
    if (version != kCheckpointVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));

    DenoiserSpec spec;
    spec.image_size = take<std::int32_t>(in);
    spec.base_channels = take<std::int32_t>(in);
    spec.time_dim = take<std::int32_t>(in);
    spec.attention_dim = take<std::int32_t>(in);
    spec.embed_dim = take<std::int32_t>(in);
    spec.max_quantity = take<std::int32_t>(in);
    spec.n_classes = take<std::int32_t>(in);
    spec.heatmap_head = take<std::uint8_t>(in) != 0;
    const int n_layers = take<std::uint8_t>(in);
    spec.attention_layers.clear();
    for (int i = 0; i < n_layers; ++i) spec.attention_layers.push_back(take<std::int32_t>(in));

    const bool cosine = take<std::uint8_t>(in) != 0;
    const int T = take<std::int32_t>(in);
    Schedule schedule = Schedule::make(cosine ? Schedule::Kind::cosine : Schedule::Kind::linear, T);
    const auto steps = take<std::uint64_t>(in);

    Denoiser model(spec, 0);
    model.training_steps = steps;

    const auto n_tensors = take<std::uint32_t>(in);
    const auto& table = model.param_table();
    if (n_tensors != table.size()) throw std::runtime_error("checkpoint tensor table size mismatch");
    for (const auto& e : table) {
        const auto name_len = take<std::uint16_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const int ndim = take<std::uint8_t>(in);
        std::vector<int> shape;
        for (int i = 0; i < ndim; ++i) shape.push_back(take<std::int32_t>(in));
        if (name != e.name || shape != e.shape)
            throw std::runtime_error("checkpoint tensor mismatch at " + e.name);
    }
    auto& params = model.parameters();
    for (auto& v : params) v = double(take<float>(in));
    if (!in) throw std::runtime_error("truncated checkpoint: " + path.string());
    return {std::move(model), std::move(schedule)};
}

}  // namespace garment
