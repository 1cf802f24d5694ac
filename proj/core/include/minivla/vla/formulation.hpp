#pragma once

#include <array>
#include <deque>
#include <memory>
#include <string>
#include <vector>

#include "minivla/backbone/backbone.hpp"
#include "minivla/backbone/vocab.hpp"
#include "minivla/codec/action_codec.hpp"
#include "minivla/vla/observation.hpp"

namespace minivla::vla {

enum class FormulationKind {
  kOneStepDiscrete,
  kOneStepContinuous,
  kInterleavedContinuous,
  kPolicyHeadContinuous,
};

enum class HeadKind { kMlp, kRnn, kTransformer };

FormulationKind formulation_kind_from_string(const std::string& s);
std::string to_string(FormulationKind k);
HeadKind head_kind_from_string(const std::string& s);
std::string to_string(HeadKind k);

struct FormulationConfig {
  FormulationKind kind = FormulationKind::kPolicyHeadContinuous;
  int64_t window = 16;  // H; one-step kinds force 1
  int64_t chunk = 10;   // L
  HeadKind head = HeadKind::kRnn;
  int64_t head_hidden = 128;
  int64_t head_depth = 2;  // transformer head layers
  double lambda = 0.01;    // gripper BCE weight
  int64_t execute_k = 1;   // receding-horizon actions executed per prediction

  void validate(const backbone::BackboneConfig& bcfg) const;
};

// One training window: H frames (left-padded with the first real frame) and
// L normalized action targets with a validity mask for padded tail steps.
struct TrainSample {
  std::vector<backbone::FrameInput> frames;
  std::vector<std::array<double, codec::kActionDims>> target_norm;
  std::vector<uint8_t> target_valid;
};

// Mean-over-valid-steps, mean-over-pose-dims MSE plus lambda * BCE on the
// gripper logit. pred rows are [B*L, 7]: six pose values and one raw gripper
// logit z whose probability is sigmoid(2z) == (tanh(z)+1)/2. Targets use the
// normalized convention (gripper in {-1,+1}). Masked steps contribute
// exactly zero; a fully masked batch is an error.
core::Tensor continuous_chunk_loss(
    const core::Tensor& pred,
    const std::vector<std::array<double, codec::kActionDims>>& target,
    const std::vector<uint8_t>& valid, double lambda);

// Cross entropy against target bins, summed over chunk steps and the 7
// action dims, averaged over batch samples. logits rows cover exactly the
// 256 bin classes.
core::Tensor discrete_chunk_loss(const core::Tensor& logits,
                                 const std::vector<int>& target_bins,
                                 const std::vector<uint8_t>& valid,
                                 int64_t n_samples);

// A backbone plus one of the four action-prediction structures.
class VlaModel {
 public:
  VlaModel(const backbone::BackboneConfig& bcfg, const FormulationConfig& fcfg,
           uint64_t seed);

  const backbone::Backbone& bb() const { return *backbone_; }
  const backbone::BackboneConfig& backbone_config() const { return bcfg_; }
  const FormulationConfig& formulation() const { return fcfg_; }
  core::ParamStore& params() { return params_; }
  const core::ParamStore& params() const { return params_; }

  // Training forward + loss over a batch of windows.
  core::Tensor loss(const std::vector<const TrainSample*>& batch);

  // Continuous kinds: raw head output rows [B*L, 7] (pose values + gripper
  // logit), before clipping/squashing.
  core::Tensor forward_continuous(const std::vector<const TrainSample*>& batch);

  // Discrete kind: logits over the 256 bins, rows = B*L*7, step-major then
  // dim-major inside each sample.
  core::Tensor forward_discrete(const std::vector<const TrainSample*>& batch);

  // Inference: normalized chunk from one window of frames. Pose dims clipped
  // to [-1,1]; gripper squashed by tanh into (-1,1).
  codec::NormalizedChunk predict(const std::vector<backbone::FrameInput>& frames) const;

  // Policy-head slot pipeline, exposed so rollouts can cache per-frame slots.
  std::vector<double> encode_slot(const backbone::FrameInput& frame) const;
  codec::NormalizedChunk chunk_from_slots(
      const std::vector<std::vector<double>>& slots) const;

  void save(const std::string& path, const core::AdamW* opt = nullptr) const;
  void load(const std::string& path, core::AdamW* opt = nullptr);

 private:
  struct HeadLayer {
    core::Tensor ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
    core::Tensor ln2_g, ln2_b, w1, b1, w2, b2;
  };

  // Head forward over per-frame slots laid out [B*H, D] -> [B, L*7].
  core::Tensor head_forward(const core::Tensor& slots, int64_t b, int64_t h) const;
  codec::NormalizedChunk chunk_from_rows(const core::Tensor& rows) const;

  backbone::BackboneConfig bcfg_;
  FormulationConfig fcfg_;
  core::ParamStore params_;
  std::unique_ptr<backbone::Backbone> backbone_;

  core::Tensor mlp_w1_, mlp_b1_, mlp_w2_, mlp_b2_;
  core::Tensor rnn_wx_, rnn_wh_, rnn_b_, rnn_out_w_, rnn_out_b_;
  std::vector<HeadLayer> tf_layers_;
  core::Tensor tf_pos_, tf_ln_g_, tf_ln_b_, tf_out_w_, tf_out_b_;
};

// Receding-horizon execution driver: keeps the rolling window of the last H
// observations (left-padded at episode start), predicts a chunk when the
// pending queue is empty, denormalizes and hands out one action per step.
class RolloutPolicy {
 public:
  RolloutPolicy(VlaModel& model, const codec::NormStats& stats,
                const backbone::Vocabulary& vocab);

  void reset();
  codec::RawAction act(const Observation& obs);

  // Number of backbone frame encodes performed so far (cache effectiveness).
  int64_t frame_encodes() const { return frame_encodes_; }

 private:
  backbone::FrameInput make_frame(const Observation& obs) const;

  VlaModel& model_;
  codec::NormStats stats_;
  const backbone::Vocabulary& vocab_;
  std::deque<backbone::FrameInput> window_;
  std::deque<std::vector<double>> slot_cache_;
  std::deque<codec::RawAction> pending_;
  int64_t frame_encodes_ = 0;
};

}  // namespace minivla::vla
