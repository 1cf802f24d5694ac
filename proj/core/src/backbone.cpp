#include "minivla/backbone/backbone.hpp"

#include <algorithm>
#include <cmath>

namespace minivla::backbone {

using core::AttentionBlock;
using core::AttentionMask;
using core::Tensor;

void BackboneConfig::validate() const {
  check(dim > 0 && heads > 0 && dim % heads == 0,
        "backbone: dim must be divisible by heads");
  check(depth >= 0, "backbone: negative depth");
  check(image_px % patch_size == 0,
        "backbone: image size not divisible by patch size");
  check(vocab_size >= codec::kActionBins + action_offset + 4,
        "backbone: vocabulary too small for the reserved action range");
  check(n_cameras >= 1, "backbone: at least one camera required");
  check(resampler_latents >= 0, "backbone: negative resampler_latents");
}

int64_t BackboneConfig::vision_tokens_per_frame() const {
  const int64_t raw = patches_per_image() * n_cameras;
  const int64_t vis = resampler_latents > 0 ? resampler_latents : raw;
  return vis + (proprio_token ? 1 : 0);
}

Backbone::Backbone(const BackboneConfig& cfg, core::ParamStore& ps, core::Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  const int64_t d = cfg_.dim;
  const int64_t ppc = cfg_.patch_size * cfg_.patch_size * cfg_.image_channels;
  const double g = cfg_.init_gain;

  token_embed_ = ps.add_uniform("backbone.token_embed", {cfg_.vocab_size, d}, rng, 0.1 * g);
  patch_w_ = ps.add_xavier_uniform("backbone.patch.w", {ppc, d}, rng, g);
  patch_b_ = ps.add("backbone.patch.b", {d});
  patch_pos_ = ps.add_uniform("backbone.patch_pos", {cfg_.patches_per_image(), d}, rng, 0.05 * g);
  patch_coord_w_ = ps.add_xavier_uniform("backbone.patch_coord.w", {2, d}, rng, g);
  camera_embed_ = ps.add_uniform("backbone.camera_embed", {cfg_.n_cameras, d}, rng, 0.05 * g);
  if (cfg_.proprio_token) {
    proprio_w_ = ps.add_xavier_uniform("backbone.proprio.w", {cfg_.proprio_dim, d}, rng, g);
    proprio_b_ = ps.add("backbone.proprio.b", {d});
  }
  lrn_embed_ = ps.add_uniform("backbone.lrn_embed", {1, d}, rng, 0.1 * g);
  text_pos_ = ps.add_uniform("backbone.text_pos", {cfg_.max_text, d}, rng, 0.05 * g);
  act_pos_ = ps.add_uniform("backbone.act_pos", {cfg_.max_action_tokens, d}, rng, 0.05 * g);
  frame_embed_ = ps.add_uniform("backbone.frame_embed", {cfg_.max_window, d}, rng, 0.05 * g);

  if (cfg_.resampler_latents > 0) {
    res_lat_ = ps.add_uniform("backbone.resampler.latents", {cfg_.resampler_latents, d}, rng, 0.1 * g);
    res_wq_ = ps.add_xavier_uniform("backbone.resampler.wq", {d, d}, rng, g);
    res_bq_ = ps.add("backbone.resampler.bq", {d});
    res_wk_ = ps.add_xavier_uniform("backbone.resampler.wk", {d, d}, rng, g);
    res_bk_ = ps.add("backbone.resampler.bk", {d});
    res_wv_ = ps.add_xavier_uniform("backbone.resampler.wv", {d, d}, rng, g);
    res_bv_ = ps.add("backbone.resampler.bv", {d});
    res_wo_ = ps.add_xavier_uniform("backbone.resampler.wo", {d, d}, rng, g);
    res_bo_ = ps.add("backbone.resampler.bo", {d});
    res_ln_g_ = ps.add("backbone.resampler.ln.g", {d});
    res_ln_b_ = ps.add("backbone.resampler.ln.b", {d});
    std::fill(res_ln_g_.vec().begin(), res_ln_g_.vec().end(), 1.0);
    res_w1_ = ps.add_xavier_uniform("backbone.resampler.w1", {d, cfg_.ffn_mult * d}, rng, g);
    res_b1_ = ps.add("backbone.resampler.b1", {cfg_.ffn_mult * d});
    res_w2_ = ps.add_xavier_uniform("backbone.resampler.w2", {cfg_.ffn_mult * d, d}, rng, g);
    res_b2_ = ps.add("backbone.resampler.b2", {d});
  }

  layers_.resize(static_cast<size_t>(cfg_.depth));
  for (int64_t l = 0; l < cfg_.depth; ++l) {
    auto& L = layers_[static_cast<size_t>(l)];
    const std::string p = "backbone.layer" + std::to_string(l) + ".";
    L.ln1_g = ps.add(p + "ln1.g", {d});
    L.ln1_b = ps.add(p + "ln1.b", {d});
    std::fill(L.ln1_g.vec().begin(), L.ln1_g.vec().end(), 1.0);
    L.wq = ps.add_xavier_uniform(p + "wq", {d, d}, rng, g);
    L.bq = ps.add(p + "bq", {d});
    L.wk = ps.add_xavier_uniform(p + "wk", {d, d}, rng, g);
    L.bk = ps.add(p + "bk", {d});
    L.wv = ps.add_xavier_uniform(p + "wv", {d, d}, rng, g);
    L.bv = ps.add(p + "bv", {d});
    L.wo = ps.add_xavier_uniform(p + "wo", {d, d}, rng, g);
    L.bo = ps.add(p + "bo", {d});
    if (cfg_.architecture == Arch::kEncoderDecoder) {
      L.cln_g = ps.add(p + "cross.ln.g", {d});
      L.cln_b = ps.add(p + "cross.ln.b", {d});
      std::fill(L.cln_g.vec().begin(), L.cln_g.vec().end(), 1.0);
      L.cwq = ps.add_xavier_uniform(p + "cross.wq", {d, d}, rng, g);
      L.cbq = ps.add(p + "cross.bq", {d});
      L.cwk = ps.add_xavier_uniform(p + "cross.wk", {d, d}, rng, g);
      L.cbk = ps.add(p + "cross.bk", {d});
      L.cwv = ps.add_xavier_uniform(p + "cross.wv", {d, d}, rng, g);
      L.cbv = ps.add(p + "cross.bv", {d});
      L.cwo = ps.add_xavier_uniform(p + "cross.wo", {d, d}, rng, g);
      L.cbo = ps.add(p + "cross.bo", {d});
    }
    L.ln2_g = ps.add(p + "ln2.g", {d});
    L.ln2_b = ps.add(p + "ln2.b", {d});
    std::fill(L.ln2_g.vec().begin(), L.ln2_g.vec().end(), 1.0);
    L.w1 = ps.add_xavier_uniform(p + "w1", {d, cfg_.ffn_mult * d}, rng, g);
    L.b1 = ps.add(p + "b1", {cfg_.ffn_mult * d});
    L.w2 = ps.add_xavier_uniform(p + "w2", {cfg_.ffn_mult * d, d}, rng, g);
    L.b2 = ps.add(p + "b2", {d});
  }
  if (cfg_.depth > 0) {
    fln_g_ = ps.add("backbone.final_ln.g", {d});
    fln_b_ = ps.add("backbone.final_ln.b", {d});
    std::fill(fln_g_.vec().begin(), fln_g_.vec().end(), 1.0);
  }
  if (cfg_.architecture == Arch::kEncoderDecoder &&
      cfg_.cross_role == CrossRole::kVisionQueries) {
    ro_wq_ = ps.add_xavier_uniform("backbone.readout.wq", {d, d}, rng, g);
    ro_bq_ = ps.add("backbone.readout.bq", {d});
    ro_wk_ = ps.add_xavier_uniform("backbone.readout.wk", {d, d}, rng, g);
    ro_bk_ = ps.add("backbone.readout.bk", {d});
    ro_wv_ = ps.add_xavier_uniform("backbone.readout.wv", {d, d}, rng, g);
    ro_bv_ = ps.add("backbone.readout.bv", {d});
    ro_wo_ = ps.add_xavier_uniform("backbone.readout.wo", {d, d}, rng, g);
    ro_bo_ = ps.add("backbone.readout.bo", {d});
  }
  lm_w_ = ps.add_xavier_uniform("backbone.lm_head.w", {d, cfg_.vocab_size}, rng, g);
  lm_b_ = ps.add("backbone.lm_head.b", {cfg_.vocab_size});
}

core::Tensor Backbone::patch_content_embeddings(const std::vector<double>& image) const {
  const int64_t px = cfg_.image_px, ch = cfg_.image_channels, p = cfg_.patch_size;
  check(static_cast<int64_t>(image.size()) == px * px * ch,
        "patch_tokenize: image size mismatch");
  const int64_t grid = px / p;
  const int64_t n = grid * grid;
  const int64_t ppc = p * p * ch;
  std::vector<double> mat(static_cast<size_t>(n * ppc));
  for (int64_t gy = 0; gy < grid; ++gy)
    for (int64_t gx = 0; gx < grid; ++gx) {
      double* row = mat.data() + (gy * grid + gx) * ppc;
      int64_t k = 0;
      for (int64_t py = 0; py < p; ++py)
        for (int64_t pxx = 0; pxx < p; ++pxx)
          for (int64_t c = 0; c < ch; ++c)
            row[k++] = image[static_cast<size_t>(((gy * p + py) * px + gx * p + pxx) * ch + c)];
    }
  return core::linear(Tensor::from({n, ppc}, std::move(mat)), patch_w_, patch_b_);
}

// Position pathway: the learned per-index table plus a linear map of the
// patch center in image coordinates (x right, y up), so spatial readout is
// an affine function of the token instead of something reverse-engineered
// from table entries.
core::Tensor Backbone::patch_position_embeddings(int64_t n) const {
  const int64_t grid = cfg_.image_px / cfg_.patch_size;
  std::vector<double> coords(static_cast<size_t>(n * 2));
  for (int64_t i = 0; i < n; ++i) {
    const int64_t gy = i / grid, gx = i % grid;
    coords[static_cast<size_t>(2 * i)] =
        (static_cast<double>(gx) + 0.5) / static_cast<double>(grid);
    coords[static_cast<size_t>(2 * i + 1)] =
        1.0 - (static_cast<double>(gy) + 0.5) / static_cast<double>(grid);
  }
  Tensor coord_emb = core::matmul(Tensor::from({n, 2}, std::move(coords)), patch_coord_w_);
  return core::add(core::slice_rows(patch_pos_, 0, n), coord_emb);
}

TokenSequence Backbone::patch_tokenize(const std::vector<double>& image,
                                       int64_t camera) const {
  check(camera >= 0 && camera < cfg_.n_cameras, "patch_tokenize: bad camera index");
  Tensor content = patch_content_embeddings(image);
  const int64_t n = content.rows();
  Tensor pos = patch_position_embeddings(n);
  Tensor cam = core::reshape(
      core::gather_rows(camera_embed_, std::vector<int64_t>(1, camera)), {cfg_.dim});
  Tensor emb = core::add(core::add(content, pos), cam);
  TokenSequence seq;
  seq.embeddings = emb;
  seq.kinds.assign(static_cast<size_t>(n), TokenKind::kVision);
  seq.positions.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) seq.positions[static_cast<size_t>(i)] = i;
  return seq;
}

core::Tensor Backbone::resample(const core::Tensor& vision) const {
  check(cfg_.resampler_latents > 0, "resample: resampler disabled in config");
  AttentionBlock blk;
  blk.q_start = 0;
  blk.q_len = cfg_.resampler_latents;
  blk.kv_start = 0;
  blk.kv_len = vision.rows();
  Tensor q = core::linear(res_lat_, res_wq_, res_bq_);
  Tensor k = core::linear(vision, res_wk_, res_bk_);
  Tensor v = core::linear(vision, res_wv_, res_bv_);
  Tensor a = core::block_attention(q, k, v, {blk}, static_cast<int>(cfg_.heads));
  Tensor lat = core::add(res_lat_, core::linear(a, res_wo_, res_bo_));
  Tensor h = core::layer_norm(lat, res_ln_g_, res_ln_b_);
  Tensor m = core::linear(core::gelu(core::linear(h, res_w1_, res_b1_)), res_w2_, res_b2_);
  return core::add(lat, m);
}

core::Tensor Backbone::embed_vision_rows(const FrameInput& frame) const {
  check(static_cast<int64_t>(frame.images.size()) == cfg_.n_cameras,
        "encode: camera count mismatch");
  const int64_t npat = cfg_.patches_per_image();
  std::vector<Tensor> parts;
  for (int64_t c = 0; c < cfg_.n_cameras; ++c) {
    Tensor content = patch_content_embeddings(frame.images[static_cast<size_t>(c)]);
    Tensor pos = patch_position_embeddings(npat);
    Tensor withpos = core::add(content, pos);
    // broadcast one camera embedding row over the patch rows
    Tensor cam = core::reshape(
        core::gather_rows(camera_embed_, std::vector<int64_t>(1, c)), {cfg_.dim});
    parts.push_back(core::add(withpos, cam));
  }
  Tensor vis = parts.size() == 1 ? parts[0] : core::concat_rows(parts);
  if (cfg_.resampler_latents > 0) vis = resample(vis);
  if (cfg_.proprio_token) {
    check(static_cast<int64_t>(frame.proprio.size()) == cfg_.proprio_dim,
          "encode: proprio size mismatch");
    Tensor prop = core::linear(Tensor::from({1, cfg_.proprio_dim}, frame.proprio),
                               proprio_w_, proprio_b_);
    vis = core::concat_rows({vis, prop});
  }
  return vis;
}

core::Tensor Backbone::embed_text_rows(const std::vector<int64_t>& ids) const {
  check(!ids.empty(), "encode: empty instruction token list");
  check(static_cast<int64_t>(ids.size()) <= cfg_.max_text,
        "encode: instruction longer than max_text");
  Tensor tok = core::gather_rows(token_embed_, ids);
  Tensor pos = core::slice_rows(text_pos_, 0, static_cast<int64_t>(ids.size()));
  return core::add(tok, pos);
}

core::Tensor Backbone::embed_lrn_rows(int64_t n_lrn) const {
  return core::gather_rows(lrn_embed_, std::vector<int64_t>(static_cast<size_t>(n_lrn), 0));
}

core::Tensor Backbone::run_decoder_layers(
    core::Tensor x, const std::vector<AttentionBlock>& blocks) const {
  const int heads = static_cast<int>(cfg_.heads);
  for (const auto& L : layers_) {
    Tensor h = core::layer_norm(x, L.ln1_g, L.ln1_b);
    Tensor q = core::linear(h, L.wq, L.bq);
    Tensor k = core::linear(h, L.wk, L.bk);
    Tensor v = core::linear(h, L.wv, L.bv);
    Tensor a = core::block_attention(q, k, v, blocks, heads);
    x = core::add(x, core::linear(a, L.wo, L.bo));
    Tensor h2 = core::layer_norm(x, L.ln2_g, L.ln2_b);
    Tensor m = core::linear(core::gelu(core::linear(h2, L.w1, L.b1)), L.w2, L.b2);
    x = core::add(x, m);
  }
  return x;
}

core::Tensor Backbone::final_norm(core::Tensor x) const {
  if (cfg_.depth == 0) return x;
  return core::layer_norm(x, fln_g_, fln_b_);
}

core::Tensor Backbone::lm_logits(core::Tensor rows) const {
  return core::linear(rows, lm_w_, lm_b_);
}

core::Tensor Backbone::run_encdec_layers(
    core::Tensor primary, core::Tensor vision,
    const std::vector<AttentionBlock>& self_blocks,
    const std::vector<AttentionBlock>& cross_blocks) const {
  const int heads = static_cast<int>(cfg_.heads);
  const bool text_queries = cfg_.cross_role == CrossRole::kTextQueries;
  for (const auto& L : layers_) {
    Tensor h = core::layer_norm(primary, L.ln1_g, L.ln1_b);
    Tensor q = core::linear(h, L.wq, L.bq);
    Tensor k = core::linear(h, L.wk, L.bk);
    Tensor v = core::linear(h, L.wv, L.bv);
    Tensor a = core::block_attention(q, k, v, self_blocks, heads);
    primary = core::add(primary, core::linear(a, L.wo, L.bo));
    if (text_queries) {
      Tensor hq = core::layer_norm(primary, L.cln_g, L.cln_b);
      Tensor cq = core::linear(hq, L.cwq, L.cbq);
      Tensor ck = core::linear(vision, L.cwk, L.cbk);
      Tensor cv = core::linear(vision, L.cwv, L.cbv);
      Tensor c = core::block_attention(cq, ck, cv, cross_blocks, heads);
      primary = core::add(primary, core::linear(c, L.cwo, L.cbo));
    } else {
      Tensor hv = core::layer_norm(vision, L.cln_g, L.cln_b);
      Tensor cq = core::linear(hv, L.cwq, L.cbq);
      Tensor ck = core::linear(primary, L.cwk, L.cbk);
      Tensor cv = core::linear(primary, L.cwv, L.cbv);
      Tensor c = core::block_attention(cq, ck, cv, cross_blocks, heads);
      vision = core::add(vision, core::linear(c, L.cwo, L.cbo));
    }
    Tensor h2 = core::layer_norm(primary, L.ln2_g, L.ln2_b);
    Tensor m = core::linear(core::gelu(core::linear(h2, L.w1, L.b1)), L.w2, L.b2);
    primary = core::add(primary, m);
  }
  if (!text_queries) {
    // Fused vision features read back onto the primary positions.
    std::vector<AttentionBlock> readout;
    for (const auto& cb : cross_blocks) {
      AttentionBlock r;
      r.q_start = cb.kv_start;
      r.q_len = cb.kv_len;
      r.kv_start = cb.q_start;
      r.kv_len = cb.q_len;
      readout.push_back(r);
    }
    Tensor rq = core::linear(primary, ro_wq_, ro_bq_);
    Tensor rk = core::linear(vision, ro_wk_, ro_bk_);
    Tensor rv = core::linear(vision, ro_wv_, ro_bv_);
    Tensor c = core::block_attention(rq, rk, rv, readout, heads);
    primary = core::add(primary, core::linear(c, ro_wo_, ro_bo_));
  }
  return primary;
}

TokenSequence Backbone::assemble_frame_sequence(const FrameInput& frame,
                                                int64_t n_lrn) const {
  Tensor vis = embed_vision_rows(frame);
  Tensor txt = embed_text_rows(frame.text_ids);
  Tensor lrn = embed_lrn_rows(n_lrn);
  TokenSequence seq;
  seq.embeddings = core::concat_rows({vis, txt, lrn});
  const int64_t tv = vis.rows(), tt = txt.rows();
  for (int64_t i = 0; i < tv; ++i) seq.kinds.push_back(TokenKind::kVision);
  for (int64_t i = 0; i < tt; ++i) seq.kinds.push_back(TokenKind::kText);
  for (int64_t i = 0; i < n_lrn; ++i) seq.kinds.push_back(TokenKind::kLearnable);
  seq.positions.resize(seq.kinds.size());
  for (size_t i = 0; i < seq.positions.size(); ++i)
    seq.positions[i] = static_cast<int64_t>(i);
  return seq;
}

core::Tensor Backbone::encode_decoder_only(const TokenSequence& seq) const {
  check(cfg_.architecture == Arch::kDecoderOnly,
        "encode_decoder_only: backbone is encoder-decoder");
  AttentionBlock blk;
  blk.q_start = 0;
  blk.q_len = seq.size();
  blk.kv_start = 0;
  blk.kv_len = seq.size();
  blk.mask = seq.mask;
  return final_norm(run_decoder_layers(seq.embeddings, {blk}));
}

core::Tensor Backbone::encode_encoder_decoder(const TokenSequence& vision,
                                              const TokenSequence& primary) const {
  check(cfg_.architecture == Arch::kEncoderDecoder,
        "encode_encoder_decoder: backbone is decoder-only");
  check(vision.size() > 0 && primary.size() > 0,
        "encode_encoder_decoder: both streams must be non-empty");
  AttentionBlock self_blk;
  self_blk.q_start = 0;
  self_blk.q_len = primary.size();
  self_blk.kv_start = 0;
  self_blk.kv_len = primary.size();
  self_blk.mask = primary.mask;
  AttentionBlock cross_blk;
  if (cfg_.cross_role == CrossRole::kTextQueries) {
    cross_blk.q_start = 0;
    cross_blk.q_len = primary.size();
    cross_blk.kv_start = 0;
    cross_blk.kv_len = vision.size();
  } else {
    cross_blk.q_start = 0;
    cross_blk.q_len = vision.size();
    cross_blk.kv_start = 0;
    cross_blk.kv_len = primary.size();
  }
  cross_blk.mask = vision.mask;  // optional cross-visibility mask
  return final_norm(
      run_encdec_layers(primary.embeddings, vision.embeddings, {self_blk}, {cross_blk}));
}

core::Tensor Backbone::encode_frames(const std::vector<const FrameInput*>& frames,
                                     int64_t n_lrn) const {
  check(!frames.empty(), "encode_frames: no frames");
  if (cfg_.architecture == Arch::kDecoderOnly) {
    std::vector<Tensor> parts;
    std::vector<AttentionBlock> blocks;
    std::vector<int64_t> lrn_rows;
    int64_t off = 0;
    for (const FrameInput* f : frames) {
      Tensor vis = embed_vision_rows(*f);
      Tensor txt = embed_text_rows(f->text_ids);
      Tensor lrn = embed_lrn_rows(n_lrn);
      const int64_t t = vis.rows() + txt.rows() + lrn.rows();
      parts.push_back(vis);
      parts.push_back(txt);
      parts.push_back(lrn);
      AttentionBlock blk;  // full visibility inside the frame
      blk.q_start = off;
      blk.q_len = t;
      blk.kv_start = off;
      blk.kv_len = t;
      blocks.push_back(blk);
      for (int64_t i = 0; i < n_lrn; ++i) lrn_rows.push_back(off + t - n_lrn + i);
      off += t;
    }
    Tensor x = core::concat_rows(parts);
    x = final_norm(run_decoder_layers(x, blocks));
    return core::gather_rows(x, lrn_rows);
  }

  // Encoder-decoder: vision rows form the encoder stream, text+learnable rows
  // the primary stream.
  std::vector<Tensor> vis_parts, pri_parts;
  std::vector<AttentionBlock> self_blocks, cross_blocks;
  std::vector<int64_t> lrn_rows;
  int64_t voff = 0, poff = 0;
  const bool text_queries = cfg_.cross_role == CrossRole::kTextQueries;
  for (const FrameInput* f : frames) {
    Tensor vis = embed_vision_rows(*f);
    Tensor txt = embed_text_rows(f->text_ids);
    Tensor lrn = embed_lrn_rows(n_lrn);
    Tensor pri = core::concat_rows({txt, lrn});
    const int64_t tv = vis.rows(), tp = pri.rows();
    vis_parts.push_back(vis);
    pri_parts.push_back(pri);
    AttentionBlock sb;
    sb.q_start = poff;
    sb.q_len = tp;
    sb.kv_start = poff;
    sb.kv_len = tp;
    self_blocks.push_back(sb);
    AttentionBlock cb;
    if (text_queries) {
      cb.q_start = poff;
      cb.q_len = tp;
      cb.kv_start = voff;
      cb.kv_len = tv;
    } else {
      cb.q_start = voff;
      cb.q_len = tv;
      cb.kv_start = poff;
      cb.kv_len = tp;
    }
    cross_blocks.push_back(cb);
    for (int64_t i = 0; i < n_lrn; ++i) lrn_rows.push_back(poff + tp - n_lrn + i);
    voff += tv;
    poff += tp;
  }
  Tensor primary = core::concat_rows(pri_parts);
  Tensor vision = core::concat_rows(vis_parts);
  primary = final_norm(run_encdec_layers(primary, vision, self_blocks, cross_blocks));
  return core::gather_rows(primary, lrn_rows);
}

core::Tensor Backbone::encode_interleaved(
    const std::vector<std::vector<const FrameInput*>>& windows) const {
  check(cfg_.architecture == Arch::kDecoderOnly,
        "interleaved encoding requires a decoder-only backbone");
  check(!windows.empty(), "encode_interleaved: no windows");
  std::vector<Tensor> parts;
  std::vector<AttentionBlock> blocks;
  std::vector<int64_t> lrn_rows;
  int64_t off = 0;
  for (const auto& window : windows) {
    const int64_t h = static_cast<int64_t>(window.size());
    check(h >= 1, "encode_interleaved: empty window");
    check(h <= cfg_.max_window, "encode_interleaved: window longer than max_window");
    // Prompt text (current instruction), then (observation group, slot) pairs.
    Tensor txt = embed_text_rows(window.back()->text_ids);
    std::vector<int64_t> group_of_token(static_cast<size_t>(txt.rows()), 0);
    std::vector<Tensor> wparts{txt};
    std::vector<int64_t> wlrn;
    int64_t t = txt.rows();
    for (int64_t s = 0; s < h; ++s) {
      Tensor fe = core::reshape(
          core::gather_rows(frame_embed_, std::vector<int64_t>(1, s)), {cfg_.dim});
      Tensor vis = core::add(embed_vision_rows(*window[static_cast<size_t>(s)]), fe);
      Tensor lrn = core::add(embed_lrn_rows(1), fe);
      wparts.push_back(vis);
      wparts.push_back(lrn);
      for (int64_t i = 0; i < vis.rows(); ++i) group_of_token.push_back(s + 1);
      group_of_token.push_back(s + 1);
      t += vis.rows() + 1;
      wlrn.push_back(t - 1);
    }
    // Group-causal mask: a token sees everything in its own and earlier
    // groups, so each slot sees the prompt, observations up to its own step
    // and the earlier slots.
    auto mask = std::make_shared<AttentionMask>(t, t, false);
    for (int64_t i = 0; i < t; ++i)
      for (int64_t j = 0; j < t; ++j)
        if (group_of_token[static_cast<size_t>(j)] <= group_of_token[static_cast<size_t>(i)])
          mask->set(i, j, true);
    AttentionBlock blk;
    blk.q_start = off;
    blk.q_len = t;
    blk.kv_start = off;
    blk.kv_len = t;
    blk.mask = mask;
    blocks.push_back(blk);
    for (int64_t r : wlrn) lrn_rows.push_back(off + r);
    for (auto& p : wparts) parts.push_back(p);
    off += t;
  }
  Tensor x = core::concat_rows(parts);
  x = final_norm(run_decoder_layers(x, blocks));
  return core::gather_rows(x, lrn_rows);
}

core::Tensor Backbone::discrete_logits(
    const std::vector<const FrameInput*>& frames,
    const std::vector<std::vector<int64_t>>& target_tokens) const {
  check(frames.size() == target_tokens.size(),
        "discrete_logits: frames/targets size mismatch");
  const codec::TokenLayout layout = token_layout();
  std::vector<Tensor> parts;
  std::vector<AttentionBlock> blocks;
  std::vector<int64_t> pred_rows;
  int64_t off = 0;

  for (size_t i = 0; i < frames.size(); ++i) {
    const auto& toks = target_tokens[i];
    const int64_t n_act = static_cast<int64_t>(toks.size());
    check(n_act >= 1, "discrete_logits: empty target token string");
    check(n_act <= cfg_.max_action_tokens, "discrete_logits: too many action tokens");
    for (int64_t tk : toks)
      check(layout.in_range(tk), "discrete_logits: target token outside reserved range");
    Tensor vis = embed_vision_rows(*frames[i]);
    Tensor txt = embed_text_rows(frames[i]->text_ids);
    std::vector<Tensor> sparts{vis, txt};
    int64_t t = vis.rows() + txt.rows();
    const int64_t prefix_len = t;
    if (n_act > 1) {
      // Teacher forcing: inputs are the target string shifted right by one.
      std::vector<int64_t> in_tokens(toks.begin(), toks.end() - 1);
      Tensor act = core::add(core::gather_rows(token_embed_, in_tokens),
                             core::slice_rows(act_pos_, 0, n_act - 1));
      sparts.push_back(act);
      t += n_act - 1;
    }
    if (cfg_.architecture == Arch::kDecoderOnly) {
      auto mask = std::make_shared<AttentionMask>(AttentionMask::causal(t));
      AttentionBlock blk;
      blk.q_start = off;
      blk.q_len = t;
      blk.kv_start = off;
      blk.kv_len = t;
      blk.mask = mask;
      blocks.push_back(blk);
    }
    for (int64_t r = 0; r < n_act; ++r) pred_rows.push_back(off + prefix_len - 1 + r);
    for (auto& p : sparts) parts.push_back(p);
    off += t;
  }

  if (cfg_.architecture == Arch::kDecoderOnly) {
    Tensor x = core::concat_rows(parts);
    x = final_norm(run_decoder_layers(x, blocks));
    return lm_logits(core::gather_rows(x, pred_rows));
  }

  // Encoder-decoder: text+action tokens are the causal primary stream, the
  // vision rows are cross attended. Rebuild per-sample streams.
  std::vector<Tensor> vis_parts, pri_parts;
  std::vector<AttentionBlock> self_blocks, cross_blocks;
  std::vector<int64_t> pri_pred_rows;
  int64_t voff = 0, poff = 0;
  const bool text_queries = cfg_.cross_role == CrossRole::kTextQueries;
  for (size_t i = 0; i < frames.size(); ++i) {
    const auto& toks = target_tokens[i];
    const int64_t n_act = static_cast<int64_t>(toks.size());
    Tensor vis = embed_vision_rows(*frames[i]);
    Tensor txt = embed_text_rows(frames[i]->text_ids);
    Tensor pri = txt;
    if (n_act > 1) {
      std::vector<int64_t> in_tokens(toks.begin(), toks.end() - 1);
      Tensor act = core::add(core::gather_rows(token_embed_, in_tokens),
                             core::slice_rows(act_pos_, 0, n_act - 1));
      pri = core::concat_rows({txt, act});
    }
    const int64_t tp = pri.rows(), tv = vis.rows();
    auto mask = std::make_shared<AttentionMask>(AttentionMask::causal(tp));
    AttentionBlock sb;
    sb.q_start = poff;
    sb.q_len = tp;
    sb.kv_start = poff;
    sb.kv_len = tp;
    sb.mask = mask;
    self_blocks.push_back(sb);
    AttentionBlock cb;
    if (text_queries) {
      cb.q_start = poff;
      cb.q_len = tp;
      cb.kv_start = voff;
      cb.kv_len = tv;
    } else {
      cb.q_start = voff;
      cb.q_len = tv;
      cb.kv_start = poff;
      cb.kv_len = tp;
    }
    cross_blocks.push_back(cb);
    for (int64_t r = 0; r < n_act; ++r)
      pri_pred_rows.push_back(poff + txt.rows() - 1 + r);
    vis_parts.push_back(vis);
    pri_parts.push_back(pri);
    voff += tv;
    poff += tp;
  }
  Tensor primary = core::concat_rows(pri_parts);
  Tensor vision = core::concat_rows(vis_parts);
  primary = final_norm(run_encdec_layers(primary, vision, self_blocks, cross_blocks));
  return lm_logits(core::gather_rows(primary, pri_pred_rows));
}

namespace {

void row_layer_norm(const double* x, int64_t n, const double* g, const double* b,
                    double* out) {
  double mu = 0.0;
  for (int64_t c = 0; c < n; ++c) mu += x[c];
  mu /= static_cast<double>(n);
  double var = 0.0;
  for (int64_t c = 0; c < n; ++c) {
    const double d = x[c] - mu;
    var += d * d;
  }
  var /= static_cast<double>(n);
  const double is = 1.0 / std::sqrt(var + 1e-5);
  for (int64_t c = 0; c < n; ++c) out[c] = (x[c] - mu) * is * g[c] + b[c];
}

void row_linear(const double* x, const double* w, const double* b, int64_t k,
                int64_t n, double* out) {
  for (int64_t j = 0; j < n; ++j) out[j] = b[j];
  for (int64_t p = 0; p < k; ++p) {
    const double xv = x[p];
    if (xv == 0.0) continue;
    const double* wrow = w + p * n;
    for (int64_t j = 0; j < n; ++j) out[j] += xv * wrow[j];
  }
}

double gelu_scalar(double x) {
  return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
}

}  // namespace

std::vector<int64_t> Backbone::decode_action_tokens(const FrameInput& frame,
                                                    int64_t n_tokens,
                                                    bool masked) const {
  core::NoGradGuard ng;
  const codec::TokenLayout layout = token_layout();

  if (cfg_.architecture == Arch::kEncoderDecoder) {
    // Re-encode per decoded token; fine at unit-test scale.
    std::vector<int64_t> out;
    for (int64_t step = 0; step < n_tokens; ++step) {
      std::vector<int64_t> toks = out;
      toks.push_back(layout.first());  // placeholder for the position being predicted
      Tensor logits = discrete_logits({&frame}, {toks});
      const double* row = logits.data() + (logits.rows() - 1) * logits.cols();
      int64_t best = -1;
      double bestv = -std::numeric_limits<double>::infinity();
      const int64_t lo = masked ? layout.first() : 0;
      const int64_t hi = masked ? layout.last() + 1 : cfg_.vocab_size;
      for (int64_t c = lo; c < hi; ++c)
        if (row[c] > bestv) {
          bestv = row[c];
          best = c;
        }
      if (!masked && !layout.in_range(best))
        throw Error("decode: non-action token " + std::to_string(best) +
                    " emitted at position " + std::to_string(step));
      out.push_back(best);
    }
    return out;
  }

  // Decoder-only: incremental decode with per-layer K/V caches. Matches the
  // teacher-forced forward bit for bit (same kernels, same accumulation
  // order, causal visibility).
  const int64_t d = cfg_.dim;
  const int64_t ffn = cfg_.ffn_mult * d;
  const int heads = static_cast<int>(cfg_.heads);

  Tensor vis = embed_vision_rows(frame);
  Tensor txt = embed_text_rows(frame.text_ids);
  Tensor prefix = core::concat_rows({vis, txt});
  const int64_t prefix_len = prefix.rows();

  std::vector<std::vector<double>> kcache(layers_.size()), vcache(layers_.size());
  for (auto& c : kcache) c.reserve(static_cast<size_t>((prefix_len + n_tokens) * d));
  for (auto& c : vcache) c.reserve(static_cast<size_t>((prefix_len + n_tokens) * d));

  std::vector<double> x(static_cast<size_t>(d)), h(static_cast<size_t>(d)),
      qrow(static_cast<size_t>(d)), krow(static_cast<size_t>(d)),
      vrow(static_cast<size_t>(d)), attn(static_cast<size_t>(d)),
      proj(static_cast<size_t>(d)), mid(static_cast<size_t>(ffn)),
      logits(static_cast<size_t>(cfg_.vocab_size));

  auto feed_row = [&](const double* row_in, bool want_logits) -> const double* {
    std::copy(row_in, row_in + d, x.begin());
    for (size_t l = 0; l < layers_.size(); ++l) {
      const auto& L = layers_[l];
      row_layer_norm(x.data(), d, L.ln1_g.data(), L.ln1_b.data(), h.data());
      row_linear(h.data(), L.wq.data(), L.bq.data(), d, d, qrow.data());
      row_linear(h.data(), L.wk.data(), L.bk.data(), d, d, krow.data());
      row_linear(h.data(), L.wv.data(), L.bv.data(), d, d, vrow.data());
      kcache[l].insert(kcache[l].end(), krow.begin(), krow.end());
      vcache[l].insert(vcache[l].end(), vrow.begin(), vrow.end());
      const int64_t t = static_cast<int64_t>(kcache[l].size()) / d;
      core::attention_row_nograd(qrow.data(), kcache[l].data(), vcache[l].data(), t,
                                 d, heads, attn.data());
      row_linear(attn.data(), L.wo.data(), L.bo.data(), d, d, proj.data());
      for (int64_t c = 0; c < d; ++c) x[static_cast<size_t>(c)] += proj[static_cast<size_t>(c)];
      row_layer_norm(x.data(), d, L.ln2_g.data(), L.ln2_b.data(), h.data());
      row_linear(h.data(), L.w1.data(), L.b1.data(), d, ffn, mid.data());
      for (int64_t c = 0; c < ffn; ++c) mid[static_cast<size_t>(c)] = gelu_scalar(mid[static_cast<size_t>(c)]);
      row_linear(mid.data(), L.w2.data(), L.b2.data(), ffn, d, proj.data());
      for (int64_t c = 0; c < d; ++c) x[static_cast<size_t>(c)] += proj[static_cast<size_t>(c)];
    }
    if (!want_logits) return nullptr;
    if (cfg_.depth > 0) {
      row_layer_norm(x.data(), d, fln_g_.data(), fln_b_.data(), h.data());
    } else {
      std::copy(x.begin(), x.end(), h.begin());
    }
    row_linear(h.data(), lm_w_.data(), lm_b_.data(), d, cfg_.vocab_size, logits.data());
    return logits.data();
  };

  const double* last_logits = nullptr;
  for (int64_t r = 0; r < prefix_len; ++r)
    last_logits = feed_row(prefix.data() + r * d, r == prefix_len - 1);

  std::vector<int64_t> out;
  std::vector<double> emb(static_cast<size_t>(d));
  for (int64_t step = 0; step < n_tokens; ++step) {
    int64_t best = -1;
    double bestv = -std::numeric_limits<double>::infinity();
    const int64_t lo = masked ? layout.first() : 0;
    const int64_t hi = masked ? layout.last() + 1 : cfg_.vocab_size;
    for (int64_t c = lo; c < hi; ++c)
      if (last_logits[c] > bestv) {
        bestv = last_logits[c];
        best = c;
      }
    if (!masked && !layout.in_range(best))
      throw Error("decode: non-action token " + std::to_string(best) +
                  " emitted at position " + std::to_string(step));
    out.push_back(best);
    if (step + 1 == n_tokens) break;
    const double* te = token_embed_.data() + best * d;
    const double* pe = act_pos_.data() + step * d;
    for (int64_t c = 0; c < d; ++c) emb[static_cast<size_t>(c)] = te[c] + pe[c];
    last_logits = feed_row(emb.data(), true);
  }
  return out;
}

}  // namespace minivla::backbone
