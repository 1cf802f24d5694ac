#pragma once

#include <memory>
#include <string>
#include <vector>

#include "minivla/codec/action_codec.hpp"
#include "minivla/core/ops.hpp"
#include "minivla/core/optim.hpp"
#include "minivla/core/rng.hpp"

namespace minivla::backbone {

enum class Arch { kDecoderOnly, kEncoderDecoder };

// Role assignment for the encoder-decoder cross attention. kTextQueries is
// the conventional form (text+learnable stream queries the vision tokens).
// kVisionQueries flips it: the fusion layers update a vision stream that
// queries the text+learnable stream, and a final readout attention maps the
// fused vision features back onto the text+learnable positions.
enum class CrossRole { kTextQueries, kVisionQueries };

enum class TokenKind { kVision, kText, kLearnable, kAction };

struct BackboneConfig {
  Arch architecture = Arch::kDecoderOnly;
  int64_t dim = 128;
  int64_t depth = 4;
  int64_t heads = 4;
  int64_t ffn_mult = 4;
  int64_t vocab_size = 1024;
  int64_t action_offset = 10;  // reserved ids above the action range
  int64_t patch_size = 8;
  int64_t image_px = 32;
  int64_t image_channels = 3;
  int64_t n_cameras = 1;
  int64_t resampler_latents = 0;  // 0 = off
  bool proprio_token = true;      // proprio enters as one extra vision-kind token
  int64_t proprio_dim = 7;
  int64_t max_text = 16;
  int64_t max_window = 32;
  int64_t max_action_tokens = 128;
  CrossRole cross_role = CrossRole::kTextQueries;
  double init_gain = 1.0;

  void validate() const;
  int64_t patches_per_image() const {
    const int64_t g = image_px / patch_size;
    return g * g;
  }
  // Vision-kind tokens per frame after the optional resampler, incl. proprio.
  int64_t vision_tokens_per_frame() const;
};

struct TokenSequence {
  core::Tensor embeddings;  // [T, D]
  std::vector<TokenKind> kinds;
  std::vector<int64_t> positions;
  std::shared_ptr<core::AttentionMask> mask;

  int64_t size() const { return static_cast<int64_t>(kinds.size()); }
};

// Raw per-step model input, independent of where it came from.
struct FrameInput {
  std::vector<std::vector<double>> images;  // per camera, row-major (H, W, C)
  std::vector<double> proprio;
  std::vector<int64_t> text_ids;  // tokenized instruction incl. BOS/EOS
};

// Toy vision-language backbone: patch tokenizer, optional token resampler,
// word embeddings, and a transformer stack in either a decoder-only or an
// encoder-decoder arrangement. Both architectures satisfy the same contract:
// (observation, instruction, n learnable slots) -> n learnable-slot
// embeddings.
class Backbone {
 public:
  Backbone(const BackboneConfig& cfg, core::ParamStore& ps, core::Rng& rng);

  const BackboneConfig& config() const { return cfg_; }
  codec::TokenLayout token_layout() const {
    return codec::TokenLayout{cfg_.vocab_size, cfg_.action_offset};
  }

  // Batched per-frame encode; returns [frames * n_lrn, D] learnable slots.
  core::Tensor encode_frames(const std::vector<const FrameInput*>& frames,
                             int64_t n_lrn = 1) const;

  // Fused history windows (decoder-only): every window contributes one
  // learnable slot per step; returns [windows * H, D].
  core::Tensor encode_interleaved(
      const std::vector<std::vector<const FrameInput*>>& windows) const;

  // Teacher-forced logits for discrete action prediction. target_tokens[i]
  // is sample i's full token string; row k of the result carries the logits
  // that predict token k (first row conditioned on the prefix only).
  core::Tensor discrete_logits(const std::vector<const FrameInput*>& frames,
                               const std::vector<std::vector<int64_t>>& target_tokens) const;

  // Greedy autoregressive decode of n_tokens action tokens. With masked=true
  // the argmax is restricted to the reserved action range; with masked=false
  // a decoded non-action token raises an error naming the position.
  std::vector<int64_t> decode_action_tokens(const FrameInput& frame, int64_t n_tokens,
                                            bool masked = true) const;

  // ---- building blocks, exposed for direct testing ----
  TokenSequence patch_tokenize(const std::vector<double>& image, int64_t camera) const;
  // Patch projections before any position/camera embedding.
  core::Tensor patch_content_embeddings(const std::vector<double>& image) const;
  core::Tensor resample(const core::Tensor& vision) const;
  // Decoder-only stack over an assembled sequence (mask from seq.mask; full
  // visibility when absent).
  core::Tensor encode_decoder_only(const TokenSequence& seq) const;
  // Encoder-decoder fuse returning the primary (text+learnable) rows.
  core::Tensor encode_encoder_decoder(const TokenSequence& vision,
                                      const TokenSequence& primary) const;
  // Per-frame assembled sequence (vision [+proprio], text, n_lrn slots).
  TokenSequence assemble_frame_sequence(const FrameInput& frame, int64_t n_lrn) const;

 private:
  struct Layer {
    core::Tensor ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
    core::Tensor cln_g, cln_b, cwq, cbq, cwk, cbk, cwv, cbv, cwo, cbo;  // enc-dec
    core::Tensor ln2_g, ln2_b, w1, b1, w2, b2;
  };

  core::Tensor embed_vision_rows(const FrameInput& frame) const;  // incl. proprio
  core::Tensor patch_position_embeddings(int64_t n) const;
  core::Tensor embed_text_rows(const std::vector<int64_t>& ids) const;
  core::Tensor embed_lrn_rows(int64_t n_lrn) const;
  core::Tensor run_decoder_layers(core::Tensor x,
                                  const std::vector<core::AttentionBlock>& blocks) const;
  core::Tensor run_encdec_layers(core::Tensor primary, core::Tensor vision,
                                 const std::vector<core::AttentionBlock>& self_blocks,
                                 const std::vector<core::AttentionBlock>& cross_blocks) const;
  core::Tensor final_norm(core::Tensor x) const;
  core::Tensor lm_logits(core::Tensor rows) const;

  BackboneConfig cfg_;
  core::Tensor token_embed_, patch_w_, patch_b_, patch_pos_, patch_coord_w_, camera_embed_;
  core::Tensor proprio_w_, proprio_b_, lrn_embed_, text_pos_, act_pos_, frame_embed_;
  core::Tensor res_lat_, res_wq_, res_bq_, res_wk_, res_bk_, res_wv_, res_bv_,
      res_wo_, res_bo_, res_ln_g_, res_ln_b_, res_w1_, res_b1_, res_w2_, res_b2_;
  std::vector<Layer> layers_;
  core::Tensor fln_g_, fln_b_;
  core::Tensor ro_wq_, ro_bq_, ro_wk_, ro_bk_, ro_wv_, ro_bv_, ro_wo_, ro_bo_;  // mode B readout
  core::Tensor lm_w_, lm_b_;
};

}  // namespace minivla::backbone
