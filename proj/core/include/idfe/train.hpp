#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "idfe/corpus.hpp"
#include "idfe/model.hpp"

namespace idfe {

enum class Precision { f32, f64 };
enum class ClassWeightMode { ratio, none };

const char* precision_name(Precision p);
Precision parse_precision(const std::string& s);
const char* class_weight_mode_name(ClassWeightMode m);
ClassWeightMode parse_class_weight_mode(const std::string& s);

struct TrainConfig {
  double alpha = 0.1;  // weight of the domain loss in the joint objective
  double lr = 1e-3;
  int batch_size = 32;
  int epochs = 10;
  double gamma = 10.0;  // reversal-strength schedule steepness
  ClassWeightMode class_weight_mode = ClassWeightMode::ratio;
  std::uint64_t seed = 0;
  // Carried for the audio-prep stage; training itself consumes ready stacks.
  double segment_seconds = 4.0;
  Precision precision = Precision::f32;
  std::string checkpoint_dir;  // empty: keep everything in memory

  void validate() const;
};

// Reversal-strength schedule over training progress p in [0,1]:
// lambda(p) = 2/(1+exp(-gamma*p)) - 1. Monotone, lambda(0) = 0.
double lambda_at(double p, double gamma);

// Inverse-frequency class weights: w_c = (n_bona + n_spoof) / (2 n_c),
// index 0 = bona fide, index 1 = spoof. Balanced counts give [1, 1].
std::array<double, 2> class_weights(std::int64_t n_bona, std::int64_t n_spoof);

// Adam with bias correction. Moment tensors are keyed like the parameters
// and created lazily on the first update that sees a gradient for them.
template <class T>
struct AdamStateT {
  std::map<std::string, TensorT<T>> m;
  std::map<std::string, TensorT<T>> v;
  std::int64_t step = 0;
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
};

using AdamState = AdamStateT<double>;
using AdamStateF = AdamStateT<float>;

template <class T>
void adam_update(ModelParamsT<T>& params, const std::map<std::string, TensorT<T>>& grads,
                 AdamStateT<T>& state, T lr);

struct StepResult {
  double loss_s = 0.0;
  double loss_d = 0.0;  // 0 when no domain head is configured
  double spoof_acc = 0.0;
  double domain_acc = 0.0;
};

// One optimizer step on a batch: forward both heads, joint loss
// L_s + alpha * L_d (domain loss routed through the reversal layer at the
// given lambda), one backward pass, one Adam update. Dropout streams are
// derived per head from step_seed. A non-finite loss raises DivergedError
// naming step_index.
template <class T>
StepResult train_step(const Batch& batch, ModelParamsT<T>& params, const ModelConfig& mcfg,
                      AdamStateT<T>& opt, double alpha, double lambda, T lr,
                      const std::array<double, 2>& spoof_weights, std::uint64_t step_seed,
                      std::int64_t step_index);

struct EpochStats {
  int epoch = 0;  // 1-based
  double loss_s = 0.0;  // mean over the epoch's steps
  double loss_d = 0.0;
  double lambda = 0.0;  // schedule value at the epoch's last step
  double domain_acc = 0.0;
  double spoof_acc = 0.0;       // kept in memory; not a column of the log file
  double median_loss_s = 0.0;   // robust to straggler steps; not a log column
};

struct TrainResult {
  ModelParams params;  // final weights, double precision for the eval helpers
  std::vector<EpochStats> log;
  std::vector<std::string> checkpoint_paths;  // one per epoch when dir set
};

// Full training loop: epoch-seeded shuffling into full batches, a
// reversal-strength schedule driven by completed_steps/total_steps, per-epoch
// checkpointing and a TSV epoch log (epoch, loss_s, loss_d, lambda,
// domain_acc) written as train_log.tsv next to the checkpoints. Training a
// single-domain set with alpha > 0 is a config error.
TrainResult train(const CorpusSet& data, const ModelConfig& mcfg, const TrainConfig& tcfg);

}  // namespace idfe
