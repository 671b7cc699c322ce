#pragma once

#include "slideseg/layers.hpp"
#include "slideseg/outputs.hpp"
#include "slideseg/prompt.hpp"
#include "slideseg/tensor.hpp"
#include "slideseg/volume.hpp"

#include <cstdint>
#include <memory>
#include <vector>

#include <json.hpp>

namespace slideseg {

struct EncoderConfig {
    int image_size = 128;
    int patch_size = 8;
    int embed_dim = 96;
    int depth = 4;
    int heads = 4;
    int lora_rank = 4;
    double lora_alpha = 4.0;
    int mlp_ratio = 4;

    int grid() const { return image_size / patch_size; }
};

struct DecoderConfig {
    int depth = 2;
    int heads = 4;
    int mlp_dim = 0;      // 0: 2 * embed_dim
    int upscale_dim = 0;  // 0: embed_dim / 4
    int branches = 3;     // 1 for the single-slice reference decoder
};

struct ModelConfig {
    EncoderConfig encoder;
    DecoderConfig decoder;
    std::uint64_t seed = 0;

    int mlp_dim() const { return decoder.mlp_dim > 0 ? decoder.mlp_dim : 2 * encoder.embed_dim; }
    int upscale_dim() const { return decoder.upscale_dim > 0 ? decoder.upscale_dim : encoder.embed_dim / 4; }
    void validate() const;  // throws ConfigError
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Image features F_im, stored token-major: tokens(r * w + c, channel).
struct ImageEmbedding {
    int channels = 0;
    int h = 0;
    int w = 0;
    Mat tokens;

    double at(int channel, int row, int col) const { return tokens(row * w + col, channel); }
};

// sparse: learned output tokens (IoU token, three mask tokens) followed by
// one token per point and two per box. dense: mask-prompt features added to
// F_im, zeros without a mask prompt.
struct PromptEmbedding {
    Mat sparse;
    Mat dense;
    static constexpr int kOutputTokens = 4;
    int prompt_tokens() const { return sparse.rows - kOutputTokens; }
};

// Per-branch logits (H*W x 3 hypotheses, row-major pixels) and IoU heads.
struct RawOutputs {
    int height = 0;
    int width = 0;
    std::vector<Mat> logits;  // [branch]
    Mat iou_logits;           // 1 x 3
    Mat iou;                  // 1 x 3, sigmoid(iou_logits)
};

struct OutputGrads {
    std::vector<Mat> logits;  // same shapes as RawOutputs::logits
    Mat iou;                  // d loss / d U
};

class SlideModel {
public:
    explicit SlideModel(const ModelConfig& config);

    const ModelConfig& config() const { return config_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }
    int branches() const { return config_.decoder.branches; }

    // Frozen sinusoid frequencies of the prompt positional encoding (2 x c/2).
    const Mat& pe_gaussian() const { return pe_gaussian_; }
    void set_pe_gaussian(const Mat& m);

    ImageEmbedding encode_image(const SliceWindow& window) const;
    PromptEmbedding encode_prompts(const Prompt& prompt) const;
    DecoderOutputs decode_masks(const ImageEmbedding& image, const PromptEmbedding& prompts,
                                const SliceWindow& window) const;
    // Window must already be image_size x image_size.
    DecoderOutputs predict(const SliceWindow& window, const Prompt& prompt) const;
    RawOutputs predict_raw(const SliceWindow& window, const Prompt& prompt) const;

    struct ForwardCache;
    struct Forward {
        RawOutputs out;
        std::shared_ptr<ForwardCache> cache;
    };
    Forward forward(const SliceWindow& window, const Prompt& prompt) const;
    void backward(const Forward& fwd, const OutputGrads& grads, Grads& param_grads) const;

    // Positional encoding of a point given in [0,1]^2 (x, y).
    std::vector<double> positional_encoding(double x, double y) const;

private:
    struct Block {
        LayerNorm ln1;
        Attention attn;
        LayerNorm ln2;
        Mlp mlp;
    };
    struct DecoderLayer {
        Attention self_attn;
        LayerNorm ln1;
        Attention cross_t2i;
        LayerNorm ln2;
        Mlp mlp;
        LayerNorm ln3;
        Attention cross_i2t;
        LayerNorm ln4;
    };
    struct Branch {
        Mlp mlp;
        Linear skip;
    };

    void build();
    Mat run_encoder(const SliceWindow& window, ForwardCache& fc) const;
    RawOutputs run_decoder(const Mat& fim, const PromptEmbedding& prompts, ForwardCache& fc) const;
    Mat pixel_matrix(const SliceWindow& window) const;
    Mat patchify(const std::array<Image2D, 3>& planes, double scale, double offset) const;
    Mat patchify_mask(const std::array<Mask2D, 3>& planes) const;
    void check_window(const SliceWindow& w) const;
    void check_prompt(const Prompt& p) const;

    ModelConfig config_;
    ParamSet params_;
    Mat pe_gaussian_;
    Mat image_pe_;

    Linear patch_embed_;
    int pos_embed_ = -1;
    std::vector<Block> blocks_;
    LayerNorm neck_;

    int point_embed_ = -1;  // rows: background, foreground, box corner tl, box corner br
    Linear mask_stem_;

    int output_tokens_ = -1;  // rows: IoU token, three mask tokens
    std::vector<DecoderLayer> layers_;
    Attention final_attn_;
    LayerNorm final_ln_;
    std::vector<Branch> branch_;
    Linear upscale_;
    std::vector<Mlp> hyper_;
    Mlp iou_head_;
};

// Copies a single-branch reference model into a three-branch model of the
// same configuration: every shared weight verbatim, branch 0 duplicated
// into all three branches. Throws ConfigError on any shape mismatch.
SlideModel init_from_reference(const SlideModel& reference);

// Converts per-branch logits to the slice x hypothesis layout. A
// single-branch model fills slice 0 only.
DecoderOutputs to_decoder_outputs(const RawOutputs& raw);

// Parameter names whose value differs between two models of equal layout.
std::vector<std::string> changed_parameters(const ParamSet& a, const ParamSet& b);

}  // namespace slideseg
