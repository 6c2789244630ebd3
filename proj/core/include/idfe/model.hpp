#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "idfe/corpus.hpp"
#include "idfe/tape.hpp"

namespace idfe {

// Factorized multi-head attentive pooling over a layered feature stack.
struct MhfaConfig {
  int num_layers = 3;    // L: stacked encoder layers
  int frame_dim = 16;    // D: per-frame feature width
  int num_heads = 4;     // H
  int value_dim = 16;    // d_v per head; H*value_dim is the concat width
  int embedding_dim = 64;  // E

  void validate() const;
};

// One classifier head: Linear -> batch norm -> ReLU -> dropout -> Linear.
struct HeadConfig {
  int hidden_dim = 128;
  double dropout_rate = 0.2;
  int num_outputs = 2;

  void validate() const;
};

struct ModelConfig {
  bool frame_encoder = true;  // per-frame linear+relu ahead of pooling
  MhfaConfig mhfa;
  HeadConfig spoof;   // num_outputs fixed at 2
  HeadConfig domain;  // num_outputs = number of training domains; 1 = no head

  bool has_domain_head() const { return domain.num_outputs >= 2; }
  void validate() const;
};

// Named parameter tensors (trainable weights plus batch-norm running stats).
template <class T>
struct ModelParamsT {
  std::map<std::string, TensorT<T>> tensors;

  TensorT<T>& at(const std::string& name);
  const TensorT<T>& at(const std::string& name) const;

  template <class U>
  ModelParamsT<U> cast() const {
    ModelParamsT<U> out;
    for (const auto& [name, t] : tensors) out.tensors.emplace(name, t.template cast<U>());
    return out;
  }
};

using ModelParams = ModelParamsT<double>;
using ModelParamsF = ModelParamsT<float>;

// Batch-norm running statistics are not gradient-updated.
bool is_trainable(const std::string& name);

// Fresh parameters for a config; draws are double-precision and seeded per
// tensor name, so the float cast of an init equals the float init.
ModelParams init_model_params(const ModelConfig& cfg, std::uint64_t seed);

// Reads the topology back out of a named tensor map (a loaded checkpoint):
// the shapes pin every dimension. Dropout rates come back as 0; they are a
// training-time setting the tensors do not record.
ModelConfig infer_model_config(const std::map<std::string, TensorF>& tensors);

// How the gradient-reversal layer participates in a forward pass. `bypass`
// omits the layer entirely (identity forward AND backward) — used by tests
// that need the lambda-free reference gradient.
enum class GrlMode { active, bypass };

template <class T>
struct ModelOut {
  ValueT<T> embedding;      // [B, E]
  ValueT<T> spoof_logits;   // [B, 2]
  ValueT<T> domain_logits;  // [B, D]; unset when the domain head is off
  bool has_domain = false;
};

// Interior pooling quantities, exposed for diagnostics and invariant checks.
template <class T>
struct PoolDetailT {
  ValueT<T> alpha_k;    // [L] softmax layer weights, key path
  ValueT<T> alpha_v;    // [L] softmax layer weights, value path
  ValueT<T> attention;  // [T, H] per-head frame attention, columns sum to 1
};

// Builds the network graph on a tape: frame encoder (optional), attentive
// pooling per utterance, then the two heads. Registers every trainable tensor
// as a named tape parameter; train mode updates the running stats in params.
template <class T>
class ModelGraphT {
 public:
  ModelGraphT(TapeT<T>& tape, ModelParamsT<T>& params, const ModelConfig& cfg);

  // Casts a stored stack to working precision and records it as a constant.
  ValueT<T> leaf_stack(const TensorF& stack);

  // Per-frame linear + ReLU, shape-preserving on [L,T,D]; identity when the
  // encoder is disabled.
  ValueT<T> frame_encode(ValueT<T> stack);

  // Attentive pooling of an (encoded) [L,T,D] stack down to a [1,E] embedding:
  // softmax layer mixtures for the key and value paths, per-head attention
  // over frames, concat of head contexts, output projection.
  ValueT<T> mhfa_pool(ValueT<T> stack, PoolDetailT<T>* detail = nullptr);

  // Classifier heads over [B,E] embeddings. The domain head routes its input
  // through the gradient-reversal layer (unless bypassed) and needs >= 2
  // domain outputs configured.
  ValueT<T> spoof_head(ValueT<T> embedding, bool training, std::mt19937_64& rng);
  ValueT<T> domain_head(ValueT<T> embedding, T lambda, bool training, std::mt19937_64& rng,
                        GrlMode grl_mode = GrlMode::active);

  // Whole-network pass over a batch of stacks.
  ModelOut<T> forward(const std::vector<const TensorF*>& stacks, bool training, T lambda,
                      bool with_domain, std::mt19937_64& spoof_rng, std::mt19937_64& domain_rng,
                      GrlMode grl_mode = GrlMode::active);

  ValueT<T> param(const std::string& name);

 private:
  ValueT<T> head(const char* prefix, const HeadConfig& hc, ValueT<T> x, bool training,
                 std::mt19937_64& rng);
  void check_stack_dims(const Shape& shape) const;

  TapeT<T>& tape_;
  ModelParamsT<T>& params_;
  const ModelConfig& cfg_;
  std::map<std::string, ValueT<T>> handles_;
};

using ModelGraph = ModelGraphT<double>;
using ModelGraphF = ModelGraphT<float>;

// Score convention: bona fide logit minus spoof logit, higher = more bona
// fide. Shift-invariant by construction.
double detection_score(const Tensor& logits);

// Deterministic double-precision eval-mode passes over materialized records
// (no dropout, batch norm in affine mode). Parallel across utterances.
std::vector<std::vector<double>> embed_records(const ModelParams& params, const ModelConfig& cfg,
                                               const std::vector<const UtteranceRecord*>& records);
std::vector<double> score_records(const ModelParams& params, const ModelConfig& cfg,
                                  const std::vector<const UtteranceRecord*>& records);

}  // namespace idfe
