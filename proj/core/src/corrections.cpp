#include "garment/corrections.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "garment/glyph.hpp"
#include "garment/oracle.hpp"

namespace garment {

namespace {

constexpr double kSmoothL1Delta = 0.01;
constexpr double kScoreFloor = 1e-3;

void require_same_shape(const Grid& a, const Grid& b, const char* who) {
    if (a.shape() != b.shape()) throw std::invalid_argument(std::string(who) + ": shape mismatch");
}

double harmonic(int k, double xn, double yn) {
    using std::numbers::pi;
    switch (k) {
        case 0: return 1.0;
        case 1: return std::cos(pi * xn);
        case 2: return std::cos(pi * yn);
        default: return std::cos(pi * xn) * std::cos(pi * yn);
    }
}

double dot12(const std::array<double, 12>& a, const std::array<double, 12>& b) {
    double s = 0.0;
    for (int i = 0; i < 12; ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

void CorrectionWeights::validate() const {
    for (double w : {omega_v, omega_s, omega_q, omega_r})
        if (!(w >= 0) || !std::isfinite(w)) throw std::invalid_argument("CorrectionWeights: weights must be finite and >= 0");
    if (!(epsilon > 0)) throw std::invalid_argument("CorrectionWeights: epsilon must be > 0");
}

double mse(const Grid& a, const Grid& b) {
    require_same_shape(a, b, "mse");
    if (a.size() == 0) throw std::invalid_argument("mse: empty grids");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        sum += d * d;
    }
    return sum / double(a.size());
}

double racl_loss(const Grid& x_hat, const Grid& positive, const Grid& negative, bool clamp_at_zero) {
    const double loss = mse(x_hat, positive) + 1.0 - mse(x_hat, negative);
    return clamp_at_zero ? std::max(0.0, loss) : loss;
}

Grid racl_grad(const Grid& x_hat, const Grid& positive, const Grid& negative, bool clamp_at_zero) {
    require_same_shape(x_hat, positive, "racl_grad");
    require_same_shape(x_hat, negative, "racl_grad");
    Grid grad(x_hat.shape());
    if (clamp_at_zero && racl_loss(x_hat, positive, negative, false) < 0.0) return grad;
    const double inv_n = 1.0 / double(x_hat.size());
    for (std::size_t i = 0; i < x_hat.size(); ++i)
        grad[i] = 2.0 * inv_n * ((x_hat[i] - positive[i]) - (x_hat[i] - negative[i]));
    return grad;
}

std::array<double, 12> CosineAlignmentScorer::embed(const Grid& image, const BinaryMask& mask) const {
    if (image.channels() != 3) throw std::invalid_argument("embed: expected 3 channels");
    if (mask.h != image.height() || mask.w != image.width())
        throw std::invalid_argument("embed: mask shape mismatch");
    std::array<double, 12> e{};
    const int h = image.height(), w = image.width();
    for (int y = 0; y < h; ++y) {
        const double yn = (y + 0.5) / h;
        for (int x = 0; x < w; ++x) {
            if (!mask.at(y, x)) continue;
            const double xn = (x + 0.5) / w;
            for (int c = 0; c < 3; ++c) {
                const double v = image.at(c, y, x);
                for (int k = 0; k < 4; ++k) e[std::size_t(c) * 4 + k] += v * harmonic(k, xn, yn);
            }
        }
    }
    return e;
}

std::array<double, 12> CosineAlignmentScorer::embed_description(const CaptionClause& clause,
                                                                int image_size) const {
    // Canonical layout: the clause's glyphs stamped around its bucket center.
    const int s = image_size;
    Grid canvas(3, s, s);
    BinaryMask mask(s, s);
    const Glyph glyph = glyph_for_class(clause.class_index, s);

    const double cx = (clause.bucket.col + 0.5) / 3.0 * s;
    const double cy = (clause.bucket.row + 0.5) / 3.0 * s;
    const int d = std::max(2, s / 8);
    static const int offsets[][2] = {{0, 0}, {-1, 0}, {1, 0}, {0, -1}, {0, 1},
                                     {-1, -1}, {1, 1}, {-1, 1}, {1, -1}};

    for (int inst = 0; inst < clause.quantity; ++inst) {
        const auto& off = offsets[inst % 9];
        const int ring = 1 + inst / 9;  // re-use directions further out past 9 glyphs
        int x0 = int(std::lround(cx + off[0] * d * ring - glyph.box_w / 2.0));
        int y0 = int(std::lround(cy + off[1] * d * ring - glyph.box_h / 2.0));
        x0 = std::clamp(x0, 0, s - glyph.box_w);
        y0 = std::clamp(y0, 0, s - glyph.box_h);
        for (const auto& [dy, dx] : glyph.pixels) {
            mask.at(y0 + dy, x0 + dx) = 1;
            for (int c = 0; c < 3; ++c) canvas.at(c, y0 + dy, x0 + dx) = glyph.color[c];
        }
    }
    return embed(canvas, mask);
}

double CosineAlignmentScorer::score(const Grid& image, const BinaryMask& mask,
                                    const std::string& description) const {
    double value = 0.0;
    Grid unused;
    score_with_grad(image, mask, description, value, unused);
    return value;
}

bool CosineAlignmentScorer::score_with_grad(const Grid& image, const BinaryMask& mask,
                                            const std::string& description, double& value, Grid& grad) const {
    const auto clause = parse_clause(vocab_, description);
    if (!clause) throw std::invalid_argument("CosineAlignmentScorer: unparseable description: " + description);

    grad = Grid(image.shape());
    const auto u = embed(image, mask);
    const auto v = embed_description(*clause, std::min(image.height(), image.width()));
    const double nu = std::sqrt(dot12(u, u));
    const double nv = std::sqrt(dot12(v, v));
    if (nu == 0.0 || nv == 0.0) {
        // No signal on one side; score bottoms out and the cosine direction is
        // undefined, so the gradient stays zero.
        value = kScoreFloor;
        return true;
    }

    const double uv = dot12(u, v);
    const double cosine = uv / (nu * nv);
    const double raw = 0.5 * (1.0 + cosine);
    value = std::max(raw, kScoreFloor);
    if (raw < kScoreFloor) return true;  // flat at the floor

    // d score / d u, then chain through the linear embedding.
    std::array<double, 12> ds_du;
    for (int i = 0; i < 12; ++i)
        ds_du[i] = 0.5 * (v[i] / (nu * nv) - uv * u[i] / (nu * nu * nu * nv));

    const int h = image.height(), w = image.width();
    for (int y = 0; y < h; ++y) {
        const double yn = (y + 0.5) / h;
        for (int x = 0; x < w; ++x) {
            if (!mask.at(y, x)) continue;
            const double xn = (x + 0.5) / w;
            for (int c = 0; c < 3; ++c) {
                double g = 0.0;
                for (int k = 0; k < 4; ++k) g += ds_du[std::size_t(c) * 4 + k] * harmonic(k, xn, yn);
                grad.at(c, y, x) = g;
            }
        }
    }
    return true;
}

double OracleAlignmentScorer::score(const Grid& image, const BinaryMask& mask,
                                    const std::string& description) const {
    return mock_alignment_score(vocab_, image, mask, description);
}

double visual_loss(const Grid& image_hat, const std::vector<ComponentAnnotation>& components,
                   const AlignmentScorer& scorer, double epsilon) {
    if (!(epsilon > 0)) throw std::invalid_argument("visual_loss: epsilon must be > 0");
    double loss = 0.0;
    for (const auto& comp : components) {
        if (!comp.present()) continue;
        loss += 1.0 / (scorer.score(image_hat, comp.mask, comp.description) + epsilon);
    }
    return loss;
}

double visual_loss_with_grad(const Grid& image_hat, const std::vector<ComponentAnnotation>& components,
                             const AlignmentScorer& scorer, Grid& grad, double epsilon) {
    if (!(epsilon > 0)) throw std::invalid_argument("visual_loss: epsilon must be > 0");
    grad = Grid(image_hat.shape());
    double loss = 0.0;
    for (const auto& comp : components) {
        if (!comp.present()) continue;
        double s = 0.0;
        Grid ds;
        if (!scorer.score_with_grad(image_hat, comp.mask, comp.description, s, ds))
            throw std::invalid_argument("visual_loss_with_grad: scorer has no gradient");
        const double denom = s + epsilon;
        loss += 1.0 / denom;
        const double outer = -1.0 / (denom * denom);
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += outer * ds[i];
    }
    return loss;
}

Grid interpolate_mask(const BinaryMask& mask, int h, int w) {
    if (h < 1 || w < 1) throw std::invalid_argument("interpolate_mask: target dims must be >= 1");
    Grid out(1, h, w);
    const double sy = double(mask.h) / h;
    const double sx = double(mask.w) / w;
    for (int Y = 0; Y < h; ++Y) {
        const double y0 = Y * sy, y1 = (Y + 1) * sy;
        for (int X = 0; X < w; ++X) {
            const double x0 = X * sx, x1 = (X + 1) * sx;
            double acc = 0.0;
            for (int y = int(std::floor(y0)); y < int(std::ceil(y1)); ++y) {
                const double cy = std::min(y1, double(y + 1)) - std::max(y0, double(y));
                if (cy <= 0) continue;
                for (int x = int(std::floor(x0)); x < int(std::ceil(x1)); ++x) {
                    const double cx = std::min(x1, double(x + 1)) - std::max(x0, double(x));
                    if (cx <= 0) continue;
                    acc += cy * cx * mask.at(y, x);
                }
            }
            out.at(0, Y, X) = acc / (sy * sx);
        }
    }
    return out;
}

namespace {

/// One layer's contribution: mse(a / max(a), target), with the gradient of
/// the max-normalization folded in when grad is non-null.
double spatial_layer_term(const Grid& a, const Grid& target, Grid* grad) {
    if (a.shape() != target.shape()) throw std::invalid_argument("spatial_loss: attention/target shape mismatch");
    const std::size_t n = a.size();
    std::size_t argmax = 0;
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        if (a[i] > m) {
            m = a[i];
            argmax = i;
        }

    double loss = 0.0;
    if (m == 0.0) {
        for (std::size_t i = 0; i < n; ++i) loss += target[i] * target[i];
        return loss / double(n);  // zero map stays zero; nothing to normalize, flat gradient
    }

    double residual_dot_a = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = a[i] / m - target[i];
        loss += r * r;
        residual_dot_a += r * a[i];
    }
    loss /= double(n);

    if (grad) {
        const double inv_nm = 2.0 / (double(n) * m);
        for (std::size_t i = 0; i < n; ++i) (*grad)[i] += inv_nm * (a[i] / m - target[i]);
        (*grad)[argmax] -= 2.0 * residual_dot_a / (double(n) * m * m);
    }
    return loss;
}

double spatial_loss_impl(const AttentionMapSet& attn, const std::vector<ComponentAnnotation>& components,
                         AttentionMapSet* grad) {
    if (attn.n_components() != int(components.size()))
        throw std::invalid_argument("spatial_loss: component arity mismatch");
    if (grad) {
        grad->maps.assign(attn.maps.size(), {});
        for (std::size_t i = 0; i < attn.maps.size(); ++i)
            for (const auto& layer : attn.maps[i]) grad->maps[i].emplace_back(layer.shape());
    }

    double loss = 0.0;
    for (int i = 0; i < int(components.size()); ++i) {
        if (!components[i].present()) continue;
        if (attn.maps[i].empty())
            throw std::invalid_argument("spatial_loss: present component without attention maps");
        for (int j = 0; j < attn.n_layers(i); ++j) {
            const Grid& a = attn.maps[i][j];
            const Grid target = interpolate_mask(components[i].mask, a.height(), a.width());
            loss += spatial_layer_term(a, target, grad ? &grad->maps[i][j] : nullptr);
        }
    }
    return loss;
}

}  // namespace

double spatial_loss(const AttentionMapSet& attn, const std::vector<ComponentAnnotation>& components) {
    return spatial_loss_impl(attn, components, nullptr);
}

double spatial_loss_with_grad(const AttentionMapSet& attn, const std::vector<ComponentAnnotation>& components,
                              AttentionMapSet& grad) {
    return spatial_loss_impl(attn, components, &grad);
}

double soft_count(const Grid& heatmap, double blob_area) {
    if (!(blob_area > 0)) throw std::invalid_argument("soft_count: blob_area must be > 0");
    double sum = 0.0;
    for (std::size_t i = 0; i < heatmap.size(); ++i) sum += heatmap[i];
    return sum / blob_area;
}

double quantitative_loss(const std::vector<double>& q_hat, const std::vector<int>& q, CountErrorMode mode) {
    if (q_hat.size() != q.size()) throw std::invalid_argument("quantitative_loss: arity mismatch");
    double loss = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        const double e = std::abs(q[i] - q_hat[i]);
        if (mode == CountErrorMode::exact || e > kSmoothL1Delta)
            loss += mode == CountErrorMode::exact ? e : e - 0.5 * kSmoothL1Delta;
        else
            loss += e * e / (2.0 * kSmoothL1Delta);
    }
    return loss;
}

std::vector<double> quantitative_loss_grad(const std::vector<double>& q_hat, const std::vector<int>& q) {
    if (q_hat.size() != q.size()) throw std::invalid_argument("quantitative_loss_grad: arity mismatch");
    std::vector<double> grad(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) {
        const double e = q_hat[i] - q[i];
        grad[i] = std::abs(e) > kSmoothL1Delta ? (e > 0 ? 1.0 : -1.0) : e / kSmoothL1Delta;
    }
    return grad;
}

LossBreakdown total_loss(double visual, double spatial, double quantitative, double racl,
                         const CorrectionWeights& w) {
    w.validate();
    for (double part : {visual, spatial, quantitative, racl})
        if (!std::isfinite(part)) throw std::invalid_argument("total_loss: non-finite part");
    LossBreakdown out;
    out.visual = visual;
    out.spatial = spatial;
    out.quantitative = quantitative;
    out.racl = racl;
    out.total = w.omega_v * visual + w.omega_s * spatial + w.omega_q * quantitative + w.omega_r * racl;
    return out;
}

}  // namespace garment
