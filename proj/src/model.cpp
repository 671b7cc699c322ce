#include "slideseg/model.hpp"

#include "slideseg/error.hpp"

#include <cmath>
#include <numbers>

namespace slideseg {

Prompt rescale_prompt(const Prompt& p, int from_h, int from_w, int to_h, int to_w) {
    if (from_h == to_h && from_w == to_w) return p;
    const double sy = static_cast<double>(to_h) / from_h;
    const double sx = static_cast<double>(to_w) / from_w;
    auto map = [](int v, double s, int limit) {
        const int r = static_cast<int>(std::floor((v + 0.5) * s));
        return std::clamp(r, 0, limit - 1);
    };
    Prompt out;
    for (const auto& pt : p.points) out.points.push_back({map(pt.x, sx, to_w), map(pt.y, sy, to_h), pt.label});
    for (const auto& b : p.boxes) {
        // Inclusive box: map the covered pixel span [x0, x1+1) and round inward.
        const int x0 = std::clamp(static_cast<int>(std::floor(b.x0 * sx)), 0, to_w - 1);
        const int y0 = std::clamp(static_cast<int>(std::floor(b.y0 * sy)), 0, to_h - 1);
        const int x1 = std::clamp(static_cast<int>(std::ceil((b.x1 + 1) * sx)) - 1, x0, to_w - 1);
        const int y1 = std::clamp(static_cast<int>(std::ceil((b.y1 + 1) * sy)) - 1, y0, to_h - 1);
        out.boxes.push_back({x0, y0, x1, y1});
    }
    if (p.mask) {
        std::array<Mask2D, 3> m;
        for (int i = 0; i < 3; ++i) m[i] = resize_nearest((*p.mask)[i], to_h, to_w);
        out.mask = std::move(m);
    }
    return out;
}

void ModelConfig::validate() const {
    const auto& e = encoder;
    if (e.image_size < 16) throw ConfigError("image_size must be >= 16");
    if (e.patch_size < 1 || e.image_size % e.patch_size != 0)
        throw ConfigError("image_size must be divisible by patch_size");
    if (e.embed_dim < 2 || e.embed_dim % 2 != 0) throw ConfigError("embed_dim must be even");
    if (e.heads < 1 || e.embed_dim % e.heads != 0) throw ConfigError("embed_dim must be divisible by heads");
    if (decoder.heads < 1 || e.embed_dim % decoder.heads != 0)
        throw ConfigError("embed_dim must be divisible by decoder heads");
    if (e.lora_rank < 1) throw ConfigError("lora_rank must be >= 1");
    if (e.lora_alpha <= 0) throw ConfigError("lora_alpha must be positive");
    if (e.depth < 1 || decoder.depth < 1) throw ConfigError("depth must be >= 1");
    if (e.mlp_ratio < 1) throw ConfigError("mlp_ratio must be >= 1");
    if (decoder.branches != 1 && decoder.branches != 3) throw ConfigError("decoder branches must be 1 or 3");
    if (upscale_dim() < 1) throw ConfigError("upscale_dim must be >= 1");
}

nlohmann::json to_json(const ModelConfig& c) {
    return {{"encoder",
             {{"image_size", c.encoder.image_size},
              {"patch_size", c.encoder.patch_size},
              {"embed_dim", c.encoder.embed_dim},
              {"depth", c.encoder.depth},
              {"heads", c.encoder.heads},
              {"lora_rank", c.encoder.lora_rank},
              {"lora_alpha", c.encoder.lora_alpha},
              {"mlp_ratio", c.encoder.mlp_ratio}}},
            {"decoder",
             {{"depth", c.decoder.depth},
              {"heads", c.decoder.heads},
              {"mlp_dim", c.decoder.mlp_dim},
              {"upscale_dim", c.decoder.upscale_dim},
              {"branches", c.decoder.branches}}},
            {"seed", c.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
        if (j.contains("encoder")) {
            const auto& e = j.at("encoder");
            c.encoder.image_size = e.value("image_size", c.encoder.image_size);
            c.encoder.patch_size = e.value("patch_size", c.encoder.patch_size);
            c.encoder.embed_dim = e.value("embed_dim", c.encoder.embed_dim);
            c.encoder.depth = e.value("depth", c.encoder.depth);
            c.encoder.heads = e.value("heads", c.encoder.heads);
            c.encoder.lora_rank = e.value("lora_rank", c.encoder.lora_rank);
            c.encoder.lora_alpha = e.value("lora_alpha", c.encoder.lora_alpha);
            c.encoder.mlp_ratio = e.value("mlp_ratio", c.encoder.mlp_ratio);
        }
        if (j.contains("decoder")) {
            const auto& d = j.at("decoder");
            c.decoder.depth = d.value("depth", c.decoder.depth);
            c.decoder.heads = d.value("heads", c.decoder.heads);
            c.decoder.mlp_dim = d.value("mlp_dim", c.decoder.mlp_dim);
            c.decoder.upscale_dim = d.value("upscale_dim", c.decoder.upscale_dim);
            c.decoder.branches = d.value("branches", c.decoder.branches);
        }
        c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed model config: ") + e.what());
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------

struct SlideModel::ForwardCache {
    Mat pixels;   // H*W x 3, normalized
    Mat patches;  // N x 3p^2
    struct BlockCache {
        Mat x;
        LayerNorm::Cache ln1;
        Mat h1;
        Attention::Cache attn;
        Mat x1;
        LayerNorm::Cache ln2;
        Mlp::Cache mlp;
    };
    std::vector<BlockCache> blocks;
    LayerNorm::Cache neck;

    bool has_mask = false;
    Mat mask_patches;
    std::vector<int> token_kind;  // embed row per prompt token

    Mat tokens0;  // Nt x c
    struct LayerCache {
        Attention::Cache self_attn;
        LayerNorm::Cache ln1;
        Mat q1;
        Attention::Cache cross_t2i;
        LayerNorm::Cache ln2;
        Mat q2;
        Mlp::Cache mlp;
        LayerNorm::Cache ln3;
        Mat q3;
        Attention::Cache cross_i2t;
        LayerNorm::Cache ln4;
    };
    std::vector<LayerCache> layers;
    Attention::Cache final_attn;
    LayerNorm::Cache final_ln;
    Mat hs;  // Nt x c
    Mat fo;  // N x c

    struct BranchCache {
        Mlp::Cache mlp;
        Mat fi;
        Mat gpre;  // HW x cu
        Mat g;
    };
    std::vector<BranchCache> branches;
    std::vector<Mlp::Cache> hyper;
    Mat hs_heads;  // 3 x cu
    Mlp::Cache iou;
};

SlideModel::SlideModel(const ModelConfig& config) : config_(config) {
    config_.validate();
    build();
}

void SlideModel::build() {
    std::mt19937_64 rng(config_.seed);
    const auto& e = config_.encoder;
    const int c = e.embed_dim;
    const int n = e.grid() * e.grid();
    const int pdim = 3 * e.patch_size * e.patch_size;
    const double block_out_std = 0.5 / std::sqrt(static_cast<double>(c) * e.depth);

    patch_embed_ = Linear::create(params_, "encoder.patch_embed", pdim, c, ParamGroup::PatchEmbed, rng);
    pos_embed_ = params_.add("encoder.pos_embed", n, c, ParamGroup::PatchEmbed);
    fill_normal(params_.value(pos_embed_), rng, 0.1);
    for (int b = 0; b < e.depth; ++b) {
        const std::string name = "encoder.block" + std::to_string(b);
        Block blk;
        blk.ln1 = LayerNorm::create(params_, name + ".ln1", c, ParamGroup::Backbone);
        blk.attn = Attention::create(params_, name + ".attn", c, e.heads, ParamGroup::Backbone, e.lora_rank,
                                     e.lora_alpha, rng, block_out_std);
        blk.ln2 = LayerNorm::create(params_, name + ".ln2", c, ParamGroup::Backbone);
        blk.mlp = Mlp::create(params_, name + ".mlp", c, c * e.mlp_ratio, c, ParamGroup::Backbone, rng,
                              block_out_std);
        blocks_.push_back(blk);
    }
    neck_ = LayerNorm::create(params_, "encoder.neck", c, ParamGroup::Backbone);

    point_embed_ = params_.add("prompt.point_embed", 4, c, ParamGroup::Prompt);
    fill_normal(params_.value(point_embed_), rng, 1.0);
    mask_stem_ = Linear::create(params_, "prompt.mask_stem", pdim, c, ParamGroup::Prompt, rng);

    const int cu = config_.upscale_dim();
    output_tokens_ = params_.add("decoder.output_tokens", PromptEmbedding::kOutputTokens, c, ParamGroup::Decoder);
    fill_normal(params_.value(output_tokens_), rng, 1.0);
    for (int l = 0; l < config_.decoder.depth; ++l) {
        const std::string name = "decoder.layer" + std::to_string(l);
        const int h = config_.decoder.heads;
        DecoderLayer dl;
        dl.self_attn = Attention::create(params_, name + ".self_attn", c, h, ParamGroup::Decoder, 0, 1, rng);
        dl.ln1 = LayerNorm::create(params_, name + ".ln1", c, ParamGroup::Decoder);
        dl.cross_t2i = Attention::create(params_, name + ".cross_t2i", c, h, ParamGroup::Decoder, 0, 1, rng);
        dl.ln2 = LayerNorm::create(params_, name + ".ln2", c, ParamGroup::Decoder);
        dl.mlp = Mlp::create(params_, name + ".mlp", c, config_.mlp_dim(), c, ParamGroup::Decoder, rng);
        dl.ln3 = LayerNorm::create(params_, name + ".ln3", c, ParamGroup::Decoder);
        dl.cross_i2t = Attention::create(params_, name + ".cross_i2t", c, h, ParamGroup::Decoder, 0, 1, rng);
        dl.ln4 = LayerNorm::create(params_, name + ".ln4", c, ParamGroup::Decoder);
        layers_.push_back(dl);
    }
    final_attn_ = Attention::create(params_, "decoder.final_attn", c, config_.decoder.heads, ParamGroup::Decoder, 0,
                                    1, rng);
    final_ln_ = LayerNorm::create(params_, "decoder.final_ln", c, ParamGroup::Decoder);
    for (int b = 0; b < config_.decoder.branches; ++b) {
        const std::string name = "decoder.branch" + std::to_string(b);
        Branch br;
        br.mlp = Mlp::create(params_, name + ".mlp", c, c, c, ParamGroup::Decoder, rng,
                             0.1 / std::sqrt(static_cast<double>(c)));
        br.skip = Linear::create(params_, name + ".skip", 3, cu, ParamGroup::Decoder, rng, 1.0);
        branch_.push_back(br);
    }
    upscale_ = Linear::create(params_, "decoder.upscale", c, e.patch_size * e.patch_size * cu, ParamGroup::Decoder,
                              rng);
    for (int j = 0; j < 3; ++j)
        hyper_.push_back(Mlp::create(params_, "decoder.hyper" + std::to_string(j), c, c, cu, ParamGroup::Decoder, rng));
    iou_head_ = Mlp::create(params_, "decoder.iou_head", c, c, 3, ParamGroup::Decoder, rng);

    pe_gaussian_ = Mat(2, c / 2);
    fill_normal(pe_gaussian_, rng, 1.0);
    set_pe_gaussian(pe_gaussian_);
}

void SlideModel::set_pe_gaussian(const Mat& m) {
    const auto& e = config_.encoder;
    if (m.rows != 2 || m.cols != e.embed_dim / 2) throw ConfigError("positional encoding matrix shape mismatch");
    pe_gaussian_ = m;
    const int g = e.grid();
    image_pe_ = Mat(g * g, e.embed_dim);
    for (int r = 0; r < g; ++r)
        for (int c = 0; c < g; ++c) {
            const auto pe = positional_encoding((c + 0.5) / g, (r + 0.5) / g);
            std::copy(pe.begin(), pe.end(), image_pe_.row(r * g + c));
        }
}

std::vector<double> SlideModel::positional_encoding(double x, double y) const {
    const int half = config_.encoder.embed_dim / 2;
    std::vector<double> out(static_cast<std::size_t>(2 * half));
    const double u = 2.0 * x - 1.0, v = 2.0 * y - 1.0;
    for (int k = 0; k < half; ++k) {
        const double t = 2.0 * std::numbers::pi * (u * pe_gaussian_(0, k) + v * pe_gaussian_(1, k));
        out[static_cast<std::size_t>(k)] = std::sin(t);
        out[static_cast<std::size_t>(half + k)] = std::cos(t);
    }
    return out;
}

void SlideModel::check_window(const SliceWindow& w) const {
    const int s = config_.encoder.image_size;
    if (w.height != s || w.width != s) throw InvalidInput("window must be resized to image_size before encoding");
    for (const auto& p : w.pixels)
        if (p.height != s || p.width != s) throw InvalidInput("window slice shape mismatch");
}

void SlideModel::check_prompt(const Prompt& p) const {
    const int s = config_.encoder.image_size;
    auto inside = [s](int x, int y) { return x >= 0 && x < s && y >= 0 && y < s; };
    for (const auto& pt : p.points) {
        if (!inside(pt.x, pt.y)) throw InvalidInput("point prompt outside the image");
        if (pt.label != 0 && pt.label != 1) throw InvalidInput("point label must be 0 or 1");
    }
    for (const auto& b : p.boxes)
        if (!inside(b.x0, b.y0) || !inside(b.x1, b.y1) || b.x1 < b.x0 || b.y1 < b.y0)
            throw InvalidInput("box prompt outside the image or inverted");
    if (p.mask)
        for (const auto& m : *p.mask)
            if (m.height != s || m.width != s) throw InvalidInput("mask prompt must have 3 image-sized channels");
}

Mat SlideModel::pixel_matrix(const SliceWindow& window) const {
    const int s = config_.encoder.image_size;
    Mat px(s * s, 3);
    for (int ch = 0; ch < 3; ++ch)
        for (int i = 0; i < s * s; ++i) px(i, ch) = window.pixels[ch].data[static_cast<std::size_t>(i)] / 127.5 - 1.0;
    return px;
}

Mat SlideModel::patchify(const std::array<Image2D, 3>& planes, double scale, double offset) const {
    const auto& e = config_.encoder;
    const int p = e.patch_size, g = e.grid();
    Mat out(g * g, 3 * p * p);
    for (int pr = 0; pr < g; ++pr)
        for (int pc = 0; pc < g; ++pc) {
            double* row = out.row(pr * g + pc);
            for (int ch = 0; ch < 3; ++ch)
                for (int dy = 0; dy < p; ++dy)
                    for (int dx = 0; dx < p; ++dx)
                        row[ch * p * p + dy * p + dx] = planes[ch].at(pr * p + dy, pc * p + dx) * scale + offset;
        }
    return out;
}

Mat SlideModel::patchify_mask(const std::array<Mask2D, 3>& planes) const {
    std::array<Image2D, 3> f;
    for (int ch = 0; ch < 3; ++ch) {
        f[ch] = Image2D(planes[ch].height, planes[ch].width);
        for (std::size_t i = 0; i < planes[ch].size(); ++i) f[ch].data[i] = planes[ch].data[i] ? 1.0 : 0.0;
    }
    return patchify(f, 1.0, 0.0);
}

ImageEmbedding SlideModel::encode_image(const SliceWindow& window) const {
    check_window(window);
    ForwardCache fc;
    const auto& e = config_.encoder;
    return ImageEmbedding{e.embed_dim, e.grid(), e.grid(), run_encoder(window, fc)};
}

PromptEmbedding SlideModel::encode_prompts(const Prompt& prompt) const {
    check_prompt(prompt);
    const auto& e = config_.encoder;
    const int c = e.embed_dim, s = e.image_size;
    const Mat& emb = params_.value(point_embed_);
    auto token = [&](double px, double py, int kind) {
        Mat t(1, c);
        const auto pe = positional_encoding((px + 0.5) / s, (py + 0.5) / s);
        for (int k = 0; k < c; ++k) t.v[static_cast<std::size_t>(k)] = pe[static_cast<std::size_t>(k)] + emb(kind, k);
        return t;
    };
    PromptEmbedding out;
    out.sparse = params_.value(output_tokens_);
    for (const auto& pt : prompt.points) out.sparse = vstack(out.sparse, token(pt.x, pt.y, pt.label == 1 ? 1 : 0));
    for (const auto& b : prompt.boxes) {
        out.sparse = vstack(out.sparse, token(b.x0, b.y0, 2));
        out.sparse = vstack(out.sparse, token(b.x1, b.y1, 3));
    }
    out.dense = Mat(e.grid() * e.grid(), c);
    if (prompt.mask) out.dense = mask_stem_.forward(params_, patchify_mask(*prompt.mask));
    return out;
}

DecoderOutputs SlideModel::decode_masks(const ImageEmbedding& image, const PromptEmbedding& prompts,
                                        const SliceWindow& window) const {
    check_window(window);
    const auto& e = config_.encoder;
    if (image.channels != e.embed_dim || image.h != e.grid() || image.w != e.grid())
        throw InvalidInput("image embedding shape mismatch");
    if (prompts.sparse.cols != e.embed_dim || prompts.sparse.rows < PromptEmbedding::kOutputTokens ||
        !prompts.dense.same_shape(image.tokens))
        throw InvalidInput("prompt embedding shape mismatch");
    ForwardCache fc;
    fc.pixels = pixel_matrix(window);
    return to_decoder_outputs(run_decoder(image.tokens, prompts, fc));
}

DecoderOutputs SlideModel::predict(const SliceWindow& window, const Prompt& prompt) const {
    return to_decoder_outputs(predict_raw(window, prompt));
}

RawOutputs SlideModel::predict_raw(const SliceWindow& window, const Prompt& prompt) const {
    return forward(window, prompt).out;
}

Mat SlideModel::run_encoder(const SliceWindow& window, ForwardCache& fc) const {
    fc.pixels = pixel_matrix(window);
    fc.patches = patchify(window.pixels, 1.0 / 127.5, -1.0);
    Mat x = patch_embed_.forward(params_, fc.patches);
    add_inplace(x, params_.value(pos_embed_));
    fc.blocks.resize(blocks_.size());
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        auto& bc = fc.blocks[b];
        const auto& blk = blocks_[b];
        bc.x = x;
        bc.h1 = blk.ln1.forward(params_, x, bc.ln1);
        bc.x1 = add(x, blk.attn.forward(params_, bc.h1, bc.h1, bc.h1, bc.attn));
        const Mat h2 = blk.ln2.forward(params_, bc.x1, bc.ln2);
        x = add(bc.x1, blk.mlp.forward(params_, h2, bc.mlp));
    }
    return neck_.forward(params_, x, fc.neck);
}

RawOutputs SlideModel::run_decoder(const Mat& fim, const PromptEmbedding& prompts, ForwardCache& fc) const {
    const auto& e = config_.encoder;
    const int p = e.patch_size, g = e.grid(), s = e.image_size, cu = config_.upscale_dim();
    fc.tokens0 = prompts.sparse;
    Mat k = add(fim, prompts.dense);

    const Mat& qpe = fc.tokens0;
    Mat q = fc.tokens0;
    fc.layers.resize(layers_.size());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        auto& lc = fc.layers[l];
        const auto& dl = layers_[l];
        const Mat qa = add(q, qpe);
        lc.q1 = dl.ln1.forward(params_, add(q, dl.self_attn.forward(params_, qa, qa, q, lc.self_attn)), lc.ln1);
        lc.q2 = dl.ln2.forward(
            params_, add(lc.q1, dl.cross_t2i.forward(params_, add(lc.q1, qpe), add(k, image_pe_), k, lc.cross_t2i)),
            lc.ln2);
        lc.q3 = dl.ln3.forward(params_, add(lc.q2, dl.mlp.forward(params_, lc.q2, lc.mlp)), lc.ln3);
        k = dl.ln4.forward(
            params_, add(k, dl.cross_i2t.forward(params_, add(k, image_pe_), add(lc.q3, qpe), lc.q3, lc.cross_i2t)),
            lc.ln4);
        q = lc.q3;
    }
    fc.hs = final_ln_.forward(
        params_, add(q, final_attn_.forward(params_, add(q, qpe), add(k, image_pe_), k, fc.final_attn)),
        fc.final_ln);
    fc.fo = k;

    RawOutputs out;
    out.height = out.width = s;
    fc.hyper.resize(3);
    fc.hs_heads = Mat(3, cu);
    for (int j = 0; j < 3; ++j) {
        const Mat hj = hyper_[static_cast<std::size_t>(j)].forward(params_, rows_slice(fc.hs, 1 + j, 1),
                                                                   fc.hyper[static_cast<std::size_t>(j)]);
        std::copy(hj.v.begin(), hj.v.end(), fc.hs_heads.row(j));
    }
    fc.branches.resize(branch_.size());
    for (std::size_t b = 0; b < branch_.size(); ++b) {
        auto& bc = fc.branches[b];
        bc.fi = add(fc.fo, branch_[b].mlp.forward(params_, fc.fo, bc.mlp));
        const Mat up = upscale_.forward(params_, bc.fi);
        bc.gpre = branch_[b].skip.forward(params_, fc.pixels);
        for (int y = 0; y < s; ++y)
            for (int xx = 0; xx < s; ++xx) {
                const double* src = up.row((y / p) * g + xx / p) + ((y % p) * p + xx % p) * cu;
                double* dst = bc.gpre.row(y * s + xx);
                for (int ch = 0; ch < cu; ++ch) dst[ch] += src[ch];
            }
        bc.g = gelu(bc.gpre);
        out.logits.push_back(matmul(bc.g, fc.hs_heads, false, true));
    }
    out.iou_logits = iou_head_.forward(params_, rows_slice(fc.hs, 0, 1), fc.iou);
    out.iou = Mat(1, 3);
    for (int j = 0; j < 3; ++j)
        out.iou.v[static_cast<std::size_t>(j)] = 1.0 / (1.0 + std::exp(-out.iou_logits.v[static_cast<std::size_t>(j)]));
    return out;
}

SlideModel::Forward SlideModel::forward(const SliceWindow& window, const Prompt& prompt) const {
    check_window(window);
    const PromptEmbedding pe = encode_prompts(prompt);
    auto cache = std::make_shared<ForwardCache>();
    auto& fc = *cache;
    for (const auto& pt : prompt.points) fc.token_kind.push_back(pt.label == 1 ? 1 : 0);
    for (std::size_t i = 0; i < prompt.boxes.size(); ++i) {
        fc.token_kind.push_back(2);
        fc.token_kind.push_back(3);
    }
    fc.has_mask = prompt.mask.has_value();
    if (fc.has_mask) fc.mask_patches = patchify_mask(*prompt.mask);
    const Mat fim = run_encoder(window, fc);
    RawOutputs out = run_decoder(fim, pe, fc);
    return Forward{std::move(out), std::move(cache)};
}

void SlideModel::backward(const Forward& fwd, const OutputGrads& og, Grads& grads) const {
    const auto& fc = *fwd.cache;
    const auto& e = config_.encoder;
    const int c = e.embed_dim, p = e.patch_size, g = e.grid(), s = e.image_size, cu = config_.upscale_dim();
    if (og.logits.size() != branch_.size()) throw ConfigError("output gradient branch count mismatch");

    Mat dhs(fc.hs.rows, c);
    // IoU head through the sigmoid.
    if (!og.iou.empty()) {
        Mat dlog(1, 3);
        for (int j = 0; j < 3; ++j) {
            const double u = fwd.out.iou.v[static_cast<std::size_t>(j)];
            dlog.v[static_cast<std::size_t>(j)] = og.iou.v[static_cast<std::size_t>(j)] * u * (1.0 - u);
        }
        const Mat d0 = iou_head_.backward(params_, fc.iou, dlog, grads);
        std::copy(d0.v.begin(), d0.v.end(), dhs.row(0));
    }

    // Branches and hypernetwork heads.
    Mat dheads(3, cu);
    Mat dfo(fc.fo.rows, c);
    for (std::size_t b = 0; b < branch_.size(); ++b) {
        const auto& bc = fc.branches[b];
        const Mat& dm = og.logits[b];
        matmul_acc(dm, bc.g, dheads, true, false);
        const Mat dg = matmul(dm, fc.hs_heads);
        const Mat dgpre = gelu_backward(bc.gpre, dg);
        branch_[b].skip.backward(params_, fc.pixels, dgpre, grads);
        Mat dup(g * g, p * p * cu);
        for (int y = 0; y < s; ++y)
            for (int xx = 0; xx < s; ++xx) {
                double* dst = dup.row((y / p) * g + xx / p) + ((y % p) * p + xx % p) * cu;
                const double* src = dgpre.row(y * s + xx);
                for (int ch = 0; ch < cu; ++ch) dst[ch] += src[ch];
            }
        const Mat dfi = upscale_.backward(params_, bc.fi, dup, grads);
        add_inplace(dfo, dfi);
        add_inplace(dfo, branch_[b].mlp.backward(params_, bc.mlp, dfi, grads));
    }
    for (int j = 0; j < 3; ++j) {
        const Mat dj = hyper_[static_cast<std::size_t>(j)].backward(params_, fc.hyper[static_cast<std::size_t>(j)],
                                                                    rows_slice(dheads, j, 1), grads);
        double* dst = dhs.row(1 + j);
        for (int ch = 0; ch < c; ++ch) dst[ch] += dj.v[static_cast<std::size_t>(ch)];
    }

    // Final token-to-image attention.
    Mat dqpe(fc.tokens0.rows, c);
    Mat dk = dfo;
    Mat dq;
    {
        const Mat dr = final_ln_.backward(params_, fc.final_ln, dhs, grads);
        dq = dr;
        const auto ag = final_attn_.backward(params_, fc.final_attn, dr, grads);
        add_inplace(dq, ag.dq);
        add_inplace(dqpe, ag.dq);
        add_inplace(dk, ag.dk);
        add_inplace(dk, ag.dv);
    }
    for (std::size_t li = layers_.size(); li-- > 0;) {
        const auto& lc = fc.layers[li];
        const auto& dl = layers_[li];
        // k_out = ln4(k_in + cross_i2t(k_in + pe, q3 + qpe, q3))
        Mat dq3 = dq;
        const Mat dr4 = dl.ln4.backward(params_, lc.ln4, dk, grads);
        Mat dk_in = dr4;
        {
            const auto ag = dl.cross_i2t.backward(params_, lc.cross_i2t, dr4, grads);
            add_inplace(dk_in, ag.dq);
            add_inplace(dq3, ag.dk);
            add_inplace(dqpe, ag.dk);
            add_inplace(dq3, ag.dv);
        }
        // q3 = ln3(q2 + mlp(q2))
        const Mat dr3 = dl.ln3.backward(params_, lc.ln3, dq3, grads);
        Mat dq2 = dr3;
        add_inplace(dq2, dl.mlp.backward(params_, lc.mlp, dr3, grads));
        // q2 = ln2(q1 + cross_t2i(q1 + qpe, k_in + pe, k_in))
        const Mat dr2 = dl.ln2.backward(params_, lc.ln2, dq2, grads);
        Mat dq1 = dr2;
        {
            const auto ag = dl.cross_t2i.backward(params_, lc.cross_t2i, dr2, grads);
            add_inplace(dq1, ag.dq);
            add_inplace(dqpe, ag.dq);
            add_inplace(dk_in, ag.dk);
            add_inplace(dk_in, ag.dv);
        }
        // q1 = ln1(q_in + self_attn(q_in + qpe, q_in + qpe, q_in))
        const Mat dr1 = dl.ln1.backward(params_, lc.ln1, dq1, grads);
        Mat dq_in = dr1;
        {
            const auto ag = dl.self_attn.backward(params_, lc.self_attn, dr1, grads);
            Mat dqa = add(ag.dq, ag.dk);
            add_inplace(dq_in, dqa);
            add_inplace(dqpe, dqa);
            add_inplace(dq_in, ag.dv);
        }
        dq = std::move(dq_in);
        dk = std::move(dk_in);
    }
    // tokens0 feeds both q and qpe.
    Mat dtok = add(dq, dqpe);

    // Prompt encoder.
    if (Mat* go = grads.at(params_, output_tokens_))
        for (int r = 0; r < PromptEmbedding::kOutputTokens; ++r)
            for (int ch = 0; ch < c; ++ch) (*go)(r, ch) += dtok(r, ch);
    if (Mat* ge = grads.at(params_, point_embed_))
        for (std::size_t t = 0; t < fc.token_kind.size(); ++t) {
            const int r = PromptEmbedding::kOutputTokens + static_cast<int>(t);
            for (int ch = 0; ch < c; ++ch) (*ge)(fc.token_kind[t], ch) += dtok(r, ch);
        }
    if (fc.has_mask) mask_stem_.backward(params_, fc.mask_patches, dk, grads);

    // Image encoder.
    Mat dx = neck_.backward(params_, fc.neck, dk, grads);
    for (std::size_t b = blocks_.size(); b-- > 0;) {
        const auto& bc = fc.blocks[b];
        const auto& blk = blocks_[b];
        Mat dx1 = dx;
        add_inplace(dx1, blk.ln2.backward(params_, bc.ln2, blk.mlp.backward(params_, bc.mlp, dx, grads), grads));
        const auto ag = blk.attn.backward(params_, bc.attn, dx1, grads);
        Mat dh1 = add(ag.dq, ag.dk);
        add_inplace(dh1, ag.dv);
        dx = add(dx1, blk.ln1.backward(params_, bc.ln1, dh1, grads));
    }
    if (Mat* gp = grads.at(params_, pos_embed_)) add_inplace(*gp, dx);
    patch_embed_.backward(params_, fc.patches, dx, grads);
}

DecoderOutputs to_decoder_outputs(const RawOutputs& raw) {
    DecoderOutputs d;
    d.height = raw.height;
    d.width = raw.width;
    for (std::size_t b = 0; b < raw.logits.size() && b < 3; ++b)
        for (int j = 0; j < 3; ++j) {
            Image2D img(raw.height, raw.width);
            for (int i = 0; i < raw.height * raw.width; ++i) img.data[static_cast<std::size_t>(i)] = raw.logits[b](i, j);
            d.logits[b][static_cast<std::size_t>(j)] = std::move(img);
        }
    for (int j = 0; j < 3; ++j) d.iou[static_cast<std::size_t>(j)] = raw.iou.v[static_cast<std::size_t>(j)];
    return d;
}

SlideModel init_from_reference(const SlideModel& reference) {
    if (reference.branches() != 1) throw ConfigError("reference decoder must have exactly one branch");
    ModelConfig cfg = reference.config();
    cfg.decoder.branches = 3;
    SlideModel model(cfg);
    model.set_pe_gaussian(reference.pe_gaussian());
    const ParamSet& src = reference.params();
    ParamSet& dst = model.params();
    for (int i = 0; i < dst.size(); ++i) {
        std::string name = dst[i].name;
        const std::string prefix = "decoder.branch";
        if (name.starts_with(prefix)) name = prefix + "0" + name.substr(prefix.size() + 1);
        const int j = src.find(name);
        if (j < 0) throw ConfigError("reference is missing parameter " + name);
        if (!src.value(j).same_shape(dst.value(i))) throw ConfigError("incompatible weights for " + dst[i].name);
        dst.value(i) = src.value(j);
    }
    return model;
}

std::vector<std::string> changed_parameters(const ParamSet& a, const ParamSet& b) {
    if (a.size() != b.size()) throw ConfigError("parameter sets differ in layout");
    std::vector<std::string> out;
    for (int i = 0; i < a.size(); ++i)
        if (!(a.value(i) == b.value(i))) out.push_back(a[i].name);
    return out;
}

}  // namespace slideseg
