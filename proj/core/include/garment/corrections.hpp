#pragma once

#include <array>
#include <string>
#include <vector>

#include "garment/caption.hpp"
#include "garment/grid.hpp"
#include "garment/vocabulary.hpp"

namespace garment {

struct CorrectionWeights {
    double omega_v = 0.1;
    double omega_s = 1.0;
    double omega_q = 0.1;
    double omega_r = 1.0;
    double epsilon = 1e-6;  // reciprocal guard in the visual term

    void validate() const;
};

/// Per-layer spatial attention for each component: maps[i][j] is the 1-channel
/// grid of layer j's attention to component i. Absent components carry an
/// empty layer list.
struct AttentionMapSet {
    std::vector<std::vector<Grid>> maps;

    int n_components() const { return int(maps.size()); }
    int n_layers(int i) const { return int(maps.at(i).size()); }
};

struct LossBreakdown {
    double visual = 0.0;
    double spatial = 0.0;
    double quantitative = 0.0;
    double racl = 0.0;
    double total = 0.0;
};

double mse(const Grid& a, const Grid& b);

/// Contrastive latent loss mse(x_hat, positive) + 1 - mse(x_hat, negative).
/// Negative values are legitimate; clamp_at_zero (off by default) floors the
/// result at 0.
double racl_loss(const Grid& x_hat, const Grid& positive, const Grid& negative, bool clamp_at_zero = false);

/// d racl / d x_hat. When the clamp is active at a negative loss value the
/// gradient is zero.
Grid racl_grad(const Grid& x_hat, const Grid& positive, const Grid& negative, bool clamp_at_zero = false);

/// Scores how well a masked image region matches a caption clause, in (0,1].
class AlignmentScorer {
public:
    virtual ~AlignmentScorer() = default;
    virtual double score(const Grid& image, const BinaryMask& mask, const std::string& description) const = 0;

    /// Fills d score / d image when the scorer is differentiable and returns
    /// true; the base class scores only.
    virtual bool score_with_grad(const Grid& image, const BinaryMask& mask, const std::string& description,
                                 double& value, Grid& grad) const {
        value = score(image, mask, description);
        return false;
    }
};

/// Differentiable stand-in for a text-image alignment model. Embeds the
/// masked region with fixed low-frequency color/position features, embeds the
/// clause by rendering a canonical layout of it, and maps their cosine to
/// (0,1]. Linear in the image, so the gradient is exact.
class CosineAlignmentScorer : public AlignmentScorer {
public:
    explicit CosineAlignmentScorer(ComponentVocabulary vocab) : vocab_(std::move(vocab)) {}

    double score(const Grid& image, const BinaryMask& mask, const std::string& description) const override;
    bool score_with_grad(const Grid& image, const BinaryMask& mask, const std::string& description,
                         double& value, Grid& grad) const override;

    static constexpr int kEmbedDim = 12;  // 3 channels x 4 spatial harmonics
    std::array<double, kEmbedDim> embed(const Grid& image, const BinaryMask& mask) const;
    std::array<double, kEmbedDim> embed_description(const CaptionClause& clause, int image_size) const;

private:
    ComponentVocabulary vocab_;
};

/// Detection-based scorer for evaluation; not differentiable.
class OracleAlignmentScorer : public AlignmentScorer {
public:
    explicit OracleAlignmentScorer(ComponentVocabulary vocab) : vocab_(std::move(vocab)) {}
    double score(const Grid& image, const BinaryMask& mask, const std::string& description) const override;

private:
    ComponentVocabulary vocab_;
};

/// Sum over present components of 1 / (score + epsilon).
double visual_loss(const Grid& image_hat, const std::vector<ComponentAnnotation>& components,
                   const AlignmentScorer& scorer, double epsilon = 1e-6);

/// Same sum plus d loss / d image_hat; requires a differentiable scorer.
double visual_loss_with_grad(const Grid& image_hat, const std::vector<ComponentAnnotation>& components,
                             const AlignmentScorer& scorer, Grid& grad, double epsilon = 1e-6);

/// Area-average resampling of a binary mask to (h, w); exact block means when
/// the shapes divide evenly, fractional coverage otherwise.
Grid interpolate_mask(const BinaryMask& mask, int h, int w);

/// Sum over present components and layers of
///   mse(max_normalized(attention), interpolate_mask(mask, layer shape)).
double spatial_loss(const AttentionMapSet& attn, const std::vector<ComponentAnnotation>& components);

/// Same value plus d loss / d raw attention, shaped like the input set.
double spatial_loss_with_grad(const AttentionMapSet& attn, const std::vector<ComponentAnnotation>& components,
                              AttentionMapSet& grad);

/// Differentiable count: total heatmap mass divided by one glyph's area.
double soft_count(const Grid& heatmap, double blob_area);

enum class CountErrorMode {
    smooth,  // smooth L1 near zero (delta 0.01), for gradients through soft counts
    exact,   // plain L1, for oracle counts at evaluation
};

double quantitative_loss(const std::vector<double>& q_hat, const std::vector<int>& q,
                         CountErrorMode mode = CountErrorMode::smooth);

/// d quantitative_loss / d q_hat under the smooth mode.
std::vector<double> quantitative_loss_grad(const std::vector<double>& q_hat, const std::vector<int>& q);

/// total = omega_v * visual + omega_s * spatial + omega_q * quantitative + omega_r * racl.
LossBreakdown total_loss(double visual, double spatial, double quantitative, double racl,
                         const CorrectionWeights& w);

}  // namespace garment
