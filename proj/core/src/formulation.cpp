#include "minivla/vla/formulation.hpp"

#include <algorithm>
#include <cmath>

#include "minivla/core/checkpoint.hpp"

namespace minivla::vla {

using backbone::FrameInput;
using core::Tensor;

FormulationKind formulation_kind_from_string(const std::string& s) {
  if (s == "one_step_disc") return FormulationKind::kOneStepDiscrete;
  if (s == "one_step_cont") return FormulationKind::kOneStepContinuous;
  if (s == "interleaved_cont") return FormulationKind::kInterleavedContinuous;
  if (s == "policy_head_cont") return FormulationKind::kPolicyHeadContinuous;
  throw Error("unknown formulation kind: " + s);
}

std::string to_string(FormulationKind k) {
  switch (k) {
    case FormulationKind::kOneStepDiscrete: return "one_step_disc";
    case FormulationKind::kOneStepContinuous: return "one_step_cont";
    case FormulationKind::kInterleavedContinuous: return "interleaved_cont";
    case FormulationKind::kPolicyHeadContinuous: return "policy_head_cont";
  }
  return "?";
}

HeadKind head_kind_from_string(const std::string& s) {
  if (s == "mlp") return HeadKind::kMlp;
  if (s == "rnn") return HeadKind::kRnn;
  if (s == "transformer") return HeadKind::kTransformer;
  throw Error("unknown head kind: " + s);
}

std::string to_string(HeadKind k) {
  switch (k) {
    case HeadKind::kMlp: return "mlp";
    case HeadKind::kRnn: return "rnn";
    case HeadKind::kTransformer: return "transformer";
  }
  return "?";
}

void FormulationConfig::validate(const backbone::BackboneConfig& bcfg) const {
  check(window >= 1 && chunk >= 1, "formulation: window and chunk must be >= 1");
  check(execute_k >= 1 && execute_k <= chunk,
        "formulation: execute_k must be in [1, chunk]");
  check(lambda >= 0.0, "formulation: lambda must be >= 0");
  const bool one_step = kind == FormulationKind::kOneStepDiscrete ||
                        kind == FormulationKind::kOneStepContinuous;
  if (one_step)
    check(window == 1, "formulation: one-step kinds require window == 1");
  if (kind == FormulationKind::kInterleavedContinuous) {
    check(bcfg.architecture == backbone::Arch::kDecoderOnly,
          "formulation: interleaved requires a decoder-only backbone");
    check(head == HeadKind::kMlp,
          "formulation: interleaved reads its chunk through the MLP readout");
  }
  if (kind == FormulationKind::kOneStepContinuous)
    check(head == HeadKind::kMlp, "formulation: one-step continuous uses an MLP");
  if (kind == FormulationKind::kOneStepDiscrete) {
    check(head == HeadKind::kMlp, "formulation: discrete kind forbids non-trivial heads");
    check(chunk * codec::kActionDims <= bcfg.max_action_tokens,
          "formulation: chunk too long for max_action_tokens");
  }
  check(window <= bcfg.max_window, "formulation: window exceeds max_window");
}

namespace {

double softplus_stable(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

core::Tensor continuous_chunk_loss(
    const core::Tensor& pred,
    const std::vector<std::array<double, codec::kActionDims>>& target,
    const std::vector<uint8_t>& valid, double lambda) {
  const int64_t rows = pred.rows();
  check(pred.rank() == 2 && pred.cols() == codec::kActionDims,
        "continuous_chunk_loss: pred must be [*,7]");
  check(static_cast<int64_t>(target.size()) == rows &&
            static_cast<int64_t>(valid.size()) == rows,
        "continuous_chunk_loss: target/valid size mismatch");
  int64_t n_valid = 0;
  for (uint8_t v : valid) n_valid += v ? 1 : 0;
  check(n_valid >= 1, "continuous_chunk_loss: all steps masked");
  const double inv_n = 1.0 / static_cast<double>(n_valid);

  Tensor y = core::make_op({1}, {pred}, [pred, target, valid, lambda, inv_n](core::Node& self) {
    double* gp = Tensor(pred).grad();
    if (!gp) return;
    const double g = self.grad[0];
    const double* pp = pred.data();
    for (size_t r = 0; r < valid.size(); ++r) {
      if (!valid[r]) continue;
      const double* prow = pp + r * codec::kActionDims;
      double* grow = gp + r * codec::kActionDims;
      for (int d = 0; d < 6; ++d)
        grow[d] += g * 2.0 * (prow[d] - target[r][static_cast<size_t>(d)]) / 6.0 * inv_n;
      const double u = 2.0 * prow[6];
      const double p = 1.0 / (1.0 + std::exp(-u));
      const double yy = (target[r][6] + 1.0) * 0.5;
      grow[6] += g * lambda * 2.0 * (p - yy) * inv_n;
    }
  });

  const double* pp = pred.data();
  double pose_acc = 0.0, bce_acc = 0.0;
  for (size_t r = 0; r < valid.size(); ++r) {
    if (!valid[r]) continue;
    const double* prow = pp + r * codec::kActionDims;
    double se = 0.0;
    for (int d = 0; d < 6; ++d) {
      const double e = prow[d] - target[r][static_cast<size_t>(d)];
      se += e * e;
    }
    pose_acc += se / 6.0;
    const double u = 2.0 * prow[6];
    const double yy = (target[r][6] + 1.0) * 0.5;
    bce_acc += softplus_stable(-u) + (1.0 - yy) * u;
  }
  y.data()[0] = (pose_acc + lambda * bce_acc) * inv_n;
  return y;
}

core::Tensor discrete_chunk_loss(const core::Tensor& logits,
                                 const std::vector<int>& target_bins,
                                 const std::vector<uint8_t>& valid,
                                 int64_t n_samples) {
  const int64_t rows = logits.rows(), cols = logits.cols();
  check(cols == codec::kActionBins, "discrete_chunk_loss: logits must cover 256 bins");
  check(static_cast<int64_t>(target_bins.size()) == rows &&
            static_cast<int64_t>(valid.size()) == rows,
        "discrete_chunk_loss: target/valid size mismatch");
  check(n_samples >= 1, "discrete_chunk_loss: need at least one sample");
  int64_t n_valid = 0;
  for (uint8_t v : valid) n_valid += v ? 1 : 0;
  check(n_valid >= 1, "discrete_chunk_loss: all steps masked");
  for (size_t r = 0; r < target_bins.size(); ++r)
    check(target_bins[r] >= 0 && target_bins[r] < codec::kActionBins,
          "discrete_chunk_loss: target bin out of range");
  const double inv_b = 1.0 / static_cast<double>(n_samples);

  auto soft = std::make_shared<std::vector<double>>(static_cast<size_t>(rows * cols));
  Tensor y = core::make_op({1}, {logits},
                           [logits, target_bins, valid, soft, rows, cols, inv_b](core::Node& self) {
    double* gl = Tensor(logits).grad();
    if (!gl) return;
    const double g = self.grad[0] * inv_b;
    for (int64_t r = 0; r < rows; ++r) {
      if (!valid[static_cast<size_t>(r)]) continue;
      const double* sr = soft->data() + r * cols;
      double* gr = gl + r * cols;
      for (int64_t c = 0; c < cols; ++c) gr[c] += g * sr[c];
      gr[target_bins[static_cast<size_t>(r)]] -= g;
    }
  });

  const double* pl = logits.data();
  double acc = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    const double* lr = pl + r * cols;
    double* sr = soft->data() + r * cols;
    double mx = lr[0];
    for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, lr[c]);
    double z = 0.0;
    for (int64_t c = 0; c < cols; ++c) {
      sr[c] = std::exp(lr[c] - mx);
      z += sr[c];
    }
    const double invz = 1.0 / z;
    for (int64_t c = 0; c < cols; ++c) sr[c] *= invz;
    if (valid[static_cast<size_t>(r)])
      acc += std::log(z) + mx - lr[target_bins[static_cast<size_t>(r)]];
  }
  y.data()[0] = acc * inv_b;
  return y;
}

VlaModel::VlaModel(const backbone::BackboneConfig& bcfg, const FormulationConfig& fcfg,
                   uint64_t seed)
    : bcfg_(bcfg), fcfg_(fcfg) {
  fcfg_.validate(bcfg_);
  core::Rng rng(seed);
  backbone_ = std::make_unique<backbone::Backbone>(bcfg_, params_, rng);

  const int64_t d = bcfg_.dim;
  const int64_t out = fcfg_.chunk * codec::kActionDims;
  const double g = bcfg_.init_gain;
  const bool needs_mlp = fcfg_.kind == FormulationKind::kOneStepContinuous ||
                         fcfg_.kind == FormulationKind::kInterleavedContinuous ||
                         (fcfg_.kind == FormulationKind::kPolicyHeadContinuous &&
                          fcfg_.head == HeadKind::kMlp);
  if (needs_mlp) {
    mlp_w1_ = params_.add_xavier_uniform("head.mlp.w1", {d, fcfg_.head_hidden}, rng, g);
    mlp_b1_ = params_.add("head.mlp.b1", {fcfg_.head_hidden});
    mlp_w2_ = params_.add_xavier_uniform("head.mlp.w2", {fcfg_.head_hidden, out}, rng, g);
    mlp_b2_ = params_.add("head.mlp.b2", {out});
  } else if (fcfg_.kind == FormulationKind::kPolicyHeadContinuous &&
             fcfg_.head == HeadKind::kRnn) {
    const int64_t hh = fcfg_.head_hidden;
    rnn_wx_ = params_.add_xavier_uniform("head.rnn.wx", {d, 4 * hh}, rng, g);
    rnn_wh_ = params_.add_xavier_uniform("head.rnn.wh", {hh, 4 * hh}, rng, g);
    rnn_b_ = params_.add("head.rnn.b", {4 * hh});
    rnn_out_w_ = params_.add_xavier_uniform("head.rnn.out.w", {hh, out}, rng, g);
    rnn_out_b_ = params_.add("head.rnn.out.b", {out});
  } else if (fcfg_.kind == FormulationKind::kPolicyHeadContinuous &&
             fcfg_.head == HeadKind::kTransformer) {
    tf_pos_ = params_.add_uniform("head.tf.pos", {fcfg_.window, d}, rng, 0.05 * g);
    tf_layers_.resize(static_cast<size_t>(fcfg_.head_depth));
    for (int64_t l = 0; l < fcfg_.head_depth; ++l) {
      auto& L = tf_layers_[static_cast<size_t>(l)];
      const std::string p = "head.tf.layer" + std::to_string(l) + ".";
      L.ln1_g = params_.add(p + "ln1.g", {d});
      L.ln1_b = params_.add(p + "ln1.b", {d});
      std::fill(L.ln1_g.vec().begin(), L.ln1_g.vec().end(), 1.0);
      L.wq = params_.add_xavier_uniform(p + "wq", {d, d}, rng, g);
      L.bq = params_.add(p + "bq", {d});
      L.wk = params_.add_xavier_uniform(p + "wk", {d, d}, rng, g);
      L.bk = params_.add(p + "bk", {d});
      L.wv = params_.add_xavier_uniform(p + "wv", {d, d}, rng, g);
      L.bv = params_.add(p + "bv", {d});
      L.wo = params_.add_xavier_uniform(p + "wo", {d, d}, rng, g);
      L.bo = params_.add(p + "bo", {d});
      L.ln2_g = params_.add(p + "ln2.g", {d});
      L.ln2_b = params_.add(p + "ln2.b", {d});
      std::fill(L.ln2_g.vec().begin(), L.ln2_g.vec().end(), 1.0);
      L.w1 = params_.add_xavier_uniform(p + "w1", {d, bcfg_.ffn_mult * d}, rng, g);
      L.b1 = params_.add(p + "b1", {bcfg_.ffn_mult * d});
      L.w2 = params_.add_xavier_uniform(p + "w2", {bcfg_.ffn_mult * d, d}, rng, g);
      L.b2 = params_.add(p + "b2", {d});
    }
    tf_ln_g_ = params_.add("head.tf.ln.g", {d});
    tf_ln_b_ = params_.add("head.tf.ln.b", {d});
    std::fill(tf_ln_g_.vec().begin(), tf_ln_g_.vec().end(), 1.0);
    tf_out_w_ = params_.add_xavier_uniform("head.tf.out.w", {d, out}, rng, g);
    tf_out_b_ = params_.add("head.tf.out.b", {out});
  }
}

core::Tensor VlaModel::head_forward(const core::Tensor& slots, int64_t b,
                                    int64_t h) const {
  check(slots.rows() == b * h, "head_forward: slot row count mismatch");
  const bool use_mlp = fcfg_.kind != FormulationKind::kPolicyHeadContinuous ||
                       fcfg_.head == HeadKind::kMlp;
  if (use_mlp) {
    std::vector<int64_t> last_ids;
    for (int64_t w = 0; w < b; ++w) last_ids.push_back(w * h + h - 1);
    Tensor x = core::gather_rows(slots, last_ids);
    return core::linear(core::gelu(core::linear(x, mlp_w1_, mlp_b1_)), mlp_w2_, mlp_b2_);
  }
  if (fcfg_.head == HeadKind::kRnn) {
    const int64_t hh = fcfg_.head_hidden;
    Tensor hs = Tensor::zeros({b, hh});
    Tensor cs = Tensor::zeros({b, hh});
    for (int64_t t = 0; t < h; ++t) {
      std::vector<int64_t> ids;
      for (int64_t w = 0; w < b; ++w) ids.push_back(w * h + t);
      Tensor xt = core::gather_rows(slots, ids);
      Tensor gates = core::add(core::linear(xt, rnn_wx_, rnn_b_), core::matmul(hs, rnn_wh_));
      Tensor gi = core::sigmoid(core::slice_cols(gates, 0, hh));
      Tensor gf = core::sigmoid(core::slice_cols(gates, hh, hh));
      Tensor gg = core::tanh(core::slice_cols(gates, 2 * hh, hh));
      Tensor go = core::sigmoid(core::slice_cols(gates, 3 * hh, hh));
      cs = core::add(core::mul(gf, cs), core::mul(gi, gg));
      hs = core::mul(go, core::tanh(cs));
    }
    return core::linear(hs, rnn_out_w_, rnn_out_b_);
  }
  // Causal transformer over the H slots.
  std::vector<int64_t> pos_ids;
  pos_ids.reserve(static_cast<size_t>(b * h));
  for (int64_t w = 0; w < b; ++w)
    for (int64_t t = 0; t < h; ++t) pos_ids.push_back(t);
  Tensor x = core::add(slots, core::gather_rows(tf_pos_, pos_ids));
  auto mask = std::make_shared<core::AttentionMask>(core::AttentionMask::causal(h));
  std::vector<core::AttentionBlock> blocks;
  for (int64_t w = 0; w < b; ++w) {
    core::AttentionBlock blk;
    blk.q_start = w * h;
    blk.q_len = h;
    blk.kv_start = w * h;
    blk.kv_len = h;
    blk.mask = mask;
    blocks.push_back(blk);
  }
  const int heads = static_cast<int>(bcfg_.heads);
  for (const auto& L : tf_layers_) {
    Tensor hh = core::layer_norm(x, L.ln1_g, L.ln1_b);
    Tensor q = core::linear(hh, L.wq, L.bq);
    Tensor k = core::linear(hh, L.wk, L.bk);
    Tensor v = core::linear(hh, L.wv, L.bv);
    Tensor a = core::block_attention(q, k, v, blocks, heads);
    x = core::add(x, core::linear(a, L.wo, L.bo));
    Tensor h2 = core::layer_norm(x, L.ln2_g, L.ln2_b);
    x = core::add(x, core::linear(core::gelu(core::linear(h2, L.w1, L.b1)), L.w2, L.b2));
  }
  x = core::layer_norm(x, tf_ln_g_, tf_ln_b_);
  std::vector<int64_t> last_ids;
  for (int64_t w = 0; w < b; ++w) last_ids.push_back(w * h + h - 1);
  return core::linear(core::gather_rows(x, last_ids), tf_out_w_, tf_out_b_);
}

core::Tensor VlaModel::forward_continuous(const std::vector<const TrainSample*>& batch) {
  check(!batch.empty(), "forward_continuous: empty batch");
  const int64_t b = static_cast<int64_t>(batch.size());
  const int64_t h = fcfg_.window;
  Tensor slots;
  if (fcfg_.kind == FormulationKind::kInterleavedContinuous) {
    std::vector<std::vector<const FrameInput*>> windows;
    for (const TrainSample* s : batch) {
      check(static_cast<int64_t>(s->frames.size()) == h,
            "forward: window length mismatch");
      std::vector<const FrameInput*> w;
      for (const auto& f : s->frames) w.push_back(&f);
      windows.push_back(std::move(w));
    }
    slots = backbone_->encode_interleaved(windows);
  } else {
    std::vector<const FrameInput*> frames;
    for (const TrainSample* s : batch) {
      check(static_cast<int64_t>(s->frames.size()) == h,
            "forward: window length mismatch");
      for (const auto& f : s->frames) frames.push_back(&f);
    }
    slots = backbone_->encode_frames(frames, 1);
  }
  Tensor out = head_forward(slots, b, h);  // [B, L*7]
  return core::reshape(out, {b * fcfg_.chunk, codec::kActionDims});
}

core::Tensor VlaModel::forward_discrete(const std::vector<const TrainSample*>& batch) {
  check(fcfg_.kind == FormulationKind::kOneStepDiscrete,
        "forward_discrete: not a discrete model");
  const codec::TokenLayout layout = backbone_->token_layout();
  std::vector<const FrameInput*> frames;
  std::vector<std::vector<int64_t>> tokens;
  for (const TrainSample* s : batch) {
    frames.push_back(&s->frames.back());
    std::vector<int64_t> ts;
    for (size_t l = 0; l < s->target_norm.size(); ++l) {
      codec::NormalizedAction n;
      n.v = s->target_norm[l];
      const auto bins = codec::discretize(n);
      for (int d = 0; d < codec::kActionDims; ++d)
        ts.push_back(layout.token_for_bin(bins[static_cast<size_t>(d)]));
    }
    tokens.push_back(std::move(ts));
  }
  Tensor logits = backbone_->discrete_logits(frames, tokens);
  return core::slice_cols(logits, layout.first(), codec::kActionBins);
}

core::Tensor VlaModel::loss(const std::vector<const TrainSample*>& batch) {
  if (fcfg_.kind == FormulationKind::kOneStepDiscrete) {
    Tensor logits = forward_discrete(batch);
    std::vector<int> bins;
    std::vector<uint8_t> valid;
    for (const TrainSample* s : batch) {
      for (size_t l = 0; l < s->target_norm.size(); ++l) {
        codec::NormalizedAction n;
        n.v = s->target_norm[l];
        const auto bb = codec::discretize(n);
        for (int d = 0; d < codec::kActionDims; ++d) {
          bins.push_back(bb[static_cast<size_t>(d)]);
          valid.push_back(s->target_valid[l]);
        }
      }
    }
    return discrete_chunk_loss(logits, bins, valid, static_cast<int64_t>(batch.size()));
  }
  Tensor pred = forward_continuous(batch);
  std::vector<std::array<double, codec::kActionDims>> targets;
  std::vector<uint8_t> valid;
  for (const TrainSample* s : batch) {
    check(static_cast<int64_t>(s->target_norm.size()) == fcfg_.chunk,
          "loss: target chunk length mismatch");
    for (size_t l = 0; l < s->target_norm.size(); ++l) {
      targets.push_back(s->target_norm[l]);
      valid.push_back(s->target_valid[l]);
    }
  }
  return continuous_chunk_loss(pred, targets, valid, fcfg_.lambda);
}

codec::NormalizedChunk VlaModel::chunk_from_rows(const core::Tensor& rows) const {
  codec::NormalizedChunk chunk;
  const double* p = rows.data();
  for (int64_t l = 0; l < fcfg_.chunk; ++l) {
    codec::NormalizedAction a;
    for (int d = 0; d < 6; ++d)
      a[static_cast<size_t>(d)] =
          std::clamp(p[l * codec::kActionDims + d], -1.0, 1.0);
    a[6] = std::tanh(p[l * codec::kActionDims + 6]);
    chunk.actions.push_back(a);
    chunk.valid.push_back(1);
  }
  return chunk;
}

codec::NormalizedChunk VlaModel::predict(
    const std::vector<backbone::FrameInput>& frames) const {
  core::NoGradGuard ng;
  check(static_cast<int64_t>(frames.size()) == fcfg_.window,
        "predict: window length mismatch");
  auto* self = const_cast<VlaModel*>(this);
  if (fcfg_.kind == FormulationKind::kOneStepDiscrete) {
    const codec::TokenLayout layout = backbone_->token_layout();
    const auto tokens = backbone_->decode_action_tokens(
        frames.back(), fcfg_.chunk * codec::kActionDims, /*masked=*/true);
    codec::NormalizedChunk chunk;
    for (int64_t l = 0; l < fcfg_.chunk; ++l) {
      std::array<int64_t, codec::kActionDims> step{};
      for (int d = 0; d < codec::kActionDims; ++d)
        step[static_cast<size_t>(d)] = tokens[static_cast<size_t>(l * codec::kActionDims + d)];
      chunk.actions.push_back(codec::detokenize(step, layout));
      chunk.valid.push_back(1);
    }
    return chunk;
  }
  Tensor slots;
  if (fcfg_.kind == FormulationKind::kInterleavedContinuous) {
    std::vector<const FrameInput*> w;
    for (const auto& f : frames) w.push_back(&f);
    slots = backbone_->encode_interleaved({w});
  } else {
    std::vector<const FrameInput*> fs;
    for (const auto& f : frames) fs.push_back(&f);
    slots = backbone_->encode_frames(fs, 1);
  }
  Tensor out = self->head_forward(slots, 1, fcfg_.window);
  return chunk_from_rows(out);
}

std::vector<double> VlaModel::encode_slot(const backbone::FrameInput& frame) const {
  core::NoGradGuard ng;
  Tensor s = backbone_->encode_frames({&frame}, 1);
  return std::vector<double>(s.data(), s.data() + s.numel());
}

codec::NormalizedChunk VlaModel::chunk_from_slots(
    const std::vector<std::vector<double>>& slots) const {
  core::NoGradGuard ng;
  check(static_cast<int64_t>(slots.size()) == fcfg_.window,
        "chunk_from_slots: slot count mismatch");
  std::vector<double> flat;
  flat.reserve(slots.size() * static_cast<size_t>(bcfg_.dim));
  for (const auto& s : slots) {
    check(static_cast<int64_t>(s.size()) == bcfg_.dim, "chunk_from_slots: slot width");
    flat.insert(flat.end(), s.begin(), s.end());
  }
  Tensor t = Tensor::from({fcfg_.window, bcfg_.dim}, std::move(flat));
  auto* self = const_cast<VlaModel*>(this);
  Tensor out = self->head_forward(t, 1, fcfg_.window);
  return chunk_from_rows(out);
}

void VlaModel::save(const std::string& path, const core::AdamW* opt) const {
  core::save_checkpoint(path, params_, opt);
}

void VlaModel::load(const std::string& path, core::AdamW* opt) {
  core::load_checkpoint(path, params_, opt);
}

RolloutPolicy::RolloutPolicy(VlaModel& model, const codec::NormStats& stats,
                             const backbone::Vocabulary& vocab)
    : model_(model), stats_(stats), vocab_(vocab) {}

void RolloutPolicy::reset() {
  window_.clear();
  slot_cache_.clear();
  pending_.clear();
}

backbone::FrameInput RolloutPolicy::make_frame(const Observation& obs) const {
  const size_t n_cams = static_cast<size_t>(model_.backbone_config().n_cameras);
  check(obs.images.size() >= n_cams, "act: observation is missing cameras");
  backbone::FrameInput f;
  f.images.assign(obs.images.begin(), obs.images.begin() + static_cast<long>(n_cams));
  f.proprio = obs.proprio;
  f.text_ids = vocab_.encode(obs.instruction);
  return f;
}

codec::RawAction RolloutPolicy::act(const Observation& obs) {
  const auto& fc = model_.formulation();
  const bool use_slot_cache = fc.kind == FormulationKind::kPolicyHeadContinuous ||
                              fc.kind == FormulationKind::kOneStepContinuous;
  backbone::FrameInput frame = make_frame(obs);
  if (window_.empty()) {
    // Episode start: the spec'd padding rule, first observation repeated H
    // times. Padded copies share one slot encode.
    std::vector<double> slot;
    if (use_slot_cache) {
      slot = model_.encode_slot(frame);
      ++frame_encodes_;
    }
    for (int64_t i = 0; i < fc.window; ++i) {
      window_.push_back(frame);
      if (use_slot_cache) slot_cache_.push_back(slot);
    }
  } else {
    window_.push_back(frame);
    window_.pop_front();
    if (use_slot_cache) {
      slot_cache_.push_back(model_.encode_slot(frame));
      ++frame_encodes_;
      slot_cache_.pop_front();
    }
  }

  if (pending_.empty()) {
    codec::NormalizedChunk chunk;
    if (use_slot_cache) {
      std::vector<std::vector<double>> slots(slot_cache_.begin(), slot_cache_.end());
      chunk = model_.chunk_from_slots(slots);
    } else {
      std::vector<backbone::FrameInput> frames(window_.begin(), window_.end());
      chunk = model_.predict(frames);
    }
    const int64_t k = std::min<int64_t>(fc.execute_k, fc.chunk);
    for (int64_t i = 0; i < k; ++i)
      pending_.push_back(codec::denormalize(chunk.actions[static_cast<size_t>(i)], stats_));
  }
  codec::RawAction a = pending_.front();
  pending_.pop_front();
  return a;
}

}  // namespace minivla::vla
