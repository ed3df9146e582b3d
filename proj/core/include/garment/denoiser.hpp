#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "garment/caption.hpp"
#include "garment/corrections.hpp"
#include "garment/grid.hpp"
#include "garment/vocabulary.hpp"

namespace garment {

/// Shape of the conditional denoiser. Two cross-attention sites exist at the
/// half and quarter resolutions; attention_layers picks which of them are
/// exposed for supervision (site 0 at S/2, site 1 at S/4).
struct DenoiserSpec {
    int image_size = 32;
    int base_channels = 8;
    int time_dim = 32;
    int attention_dim = 32;
    int embed_dim = 32;
    int max_quantity = 15;
    int n_classes = 4;
    std::vector<int> attention_layers{0, 1};
    bool heatmap_head = true;

    void validate() const;
    bool operator==(const DenoiserSpec&) const = default;
};

struct ParamInfo {
    std::string name;
    std::vector<int> shape;
    std::size_t offset = 0;
    std::size_t size = 0;
};

/// Caption semantics as the model sees them: one clause per present
/// component, ascending class order. One learned token per clause plus a
/// null token.
struct Conditioning {
    std::vector<CaptionClause> clauses;
};

/// Strict parse; throws std::invalid_argument when any clause is malformed.
Conditioning conditioning_from_caption(const ComponentVocabulary& vocab, const std::string& caption);

Conditioning conditioning_from_components(const std::vector<ComponentAnnotation>& components);

struct PredictOutput {
    Grid v_pred;                // 3 x S x S
    AttentionMapSet attention;  // indexed by class; absent classes carry no maps
    Grid heatmaps;              // n_classes x S x S after sigmoid; empty when the head is off
};

class Denoiser {
public:
    Denoiser(DenoiserSpec spec, std::uint64_t param_seed);

    const DenoiserSpec& spec() const { return spec_; }
    const std::vector<ParamInfo>& param_table() const { return table_; }
    std::size_t n_parameters() const { return params_.size(); }
    std::vector<double>& parameters() { return params_; }
    const std::vector<double>& parameters() const { return params_; }

    /// Inference path; reentrant, const, safe to call from many threads.
    PredictOutput predict(const Grid& x_t, int t, const Conditioning& cond) const;

    struct Workspace;

    /// Training path: caches every intermediate in ws for the backward pass.
    PredictOutput forward(const Grid& x_t, int t, const Conditioning& cond, Workspace& ws) const;

    /// Accumulates d loss / d parameters into param_grad (sized n_parameters)
    /// given the output-side gradients; entries of d_attention may be empty
    /// grids when a map is unsupervised, and d_heatmaps may be empty when the
    /// head received no loss. Returns d loss / d x_t.
    Grid backward(const Workspace& ws, const Grid& d_v, const AttentionMapSet& d_attention,
                  const Grid& d_heatmaps, std::vector<double>& param_grad) const;

    std::uint64_t training_steps = 0;

private:
    DenoiserSpec spec_;
    std::vector<ParamInfo> table_;
    std::vector<double> params_;

    std::size_t off(const std::string& name) const;
    const double* p(const std::string& name) const { return params_.data() + off(name); }
};

/// Activation cache filled by forward() and consumed by backward().
struct Denoiser::Workspace {
    struct GnCache {
        Grid in;
        std::vector<double> mean, inv_std;  // per (group)
        Grid xhat;                          // normalized, pre-affine
        Grid out;                           // affine output
    };
    struct ResCache {
        GnCache gn;
        Grid silu_out;
    };
    struct AttnCache {
        Grid in;
        int n_pix = 0;
        std::vector<double> q;       // n_pix x Da
        std::vector<double> k, v;    // n_tok x Da
        std::vector<double> soft;    // n_pix x n_tok
        std::vector<double> ctx;     // n_pix x Da
    };

    int t = 0;
    std::vector<double> temb;
    std::vector<CaptionClause> clauses;
    std::vector<double> tokens;  // n_tok x De row-major, row 0 = null token
    int n_tok = 0;

    Grid x_in, h0, h1, h2, h3, h4, h5, h6, h7, h8;
    Grid u1, u2, u3, u4, u5, u6, u7, u8;
    ResCache rb1, rb2, rb3, mid, rb4, rb5;
    AttnCache at1, at2;
    GnCache out_gn;
    Grid out_silu;
    Grid heat;  // post-sigmoid
};

struct Schedule;

constexpr char kCheckpointMagic[9] = "GARMCKPT";
constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary container: magic, version, DenoiserSpec, Schedule recipe, step
/// counter, tensor name/shape table, then the flat little-endian float32
/// parameter block in table order.
void save_checkpoint(const Denoiser& model, const Schedule& schedule, const std::filesystem::path& path);
std::pair<Denoiser, Schedule> load_checkpoint(const std::filesystem::path& path);

}  // namespace garment
