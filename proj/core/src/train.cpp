#include "idfe/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "idfe/checkpoint.hpp"
#include "idfe/rng.hpp"

namespace idfe {

const char* precision_name(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::f32;
  if (s == "f64") return Precision::f64;
  throw ConfigError("precision must be f32 or f64, got '" + s + "'");
}

const char* class_weight_mode_name(ClassWeightMode m) {
  return m == ClassWeightMode::ratio ? "ratio" : "none";
}

ClassWeightMode parse_class_weight_mode(const std::string& s) {
  if (s == "ratio") return ClassWeightMode::ratio;
  if (s == "none") return ClassWeightMode::none;
  throw ConfigError("class_weight_mode must be ratio or none, got '" + s + "'");
}

void TrainConfig::validate() const {
  if (alpha < 0.0) throw ConfigError("train: alpha must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("train: lr must be > 0");
  if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2 (batch norm)");
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (gamma < 0.0) throw ConfigError("train: gamma must be >= 0");
  if (!(segment_seconds > 0.0)) throw ConfigError("train: segment_seconds must be > 0");
}

double lambda_at(double p, double gamma) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ParameterError("lambda_at: progress " + std::to_string(p) + " outside [0, 1]");
  }
  return 2.0 / (1.0 + std::exp(-gamma * p)) - 1.0;
}

std::array<double, 2> class_weights(std::int64_t n_bona, std::int64_t n_spoof) {
  if (n_bona <= 0 || n_spoof <= 0) {
    throw ConfigError("class weights need both classes present, got bona=" +
                      std::to_string(n_bona) + " spoof=" + std::to_string(n_spoof));
  }
  const double total = static_cast<double>(n_bona + n_spoof);
  return {total / (2.0 * static_cast<double>(n_bona)),
          total / (2.0 * static_cast<double>(n_spoof))};
}

template <class T>
void adam_update(ModelParamsT<T>& params, const std::map<std::string, TensorT<T>>& grads,
                 AdamStateT<T>& state, T lr) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const T bc1 = static_cast<T>(1.0 - std::pow(static_cast<double>(state.beta1), t));
  const T bc2 = static_cast<T>(1.0 - std::pow(static_cast<double>(state.beta2), t));

  for (const auto& [name, g] : grads) {
    TensorT<T>& p = params.at(name);
    if (p.shape != g.shape) {
      throw DimensionError("adam: gradient shape " + shape_str(g.shape) + " for parameter '" +
                           name + "' of shape " + shape_str(p.shape));
    }
    auto& m = state.m.try_emplace(name, TensorT<T>(g.shape)).first->second;
    auto& v = state.v.try_emplace(name, TensorT<T>(g.shape)).first->second;
    if (m.shape != g.shape || v.shape != g.shape) {
      throw DimensionError("adam: stale moment shape for parameter '" + name + "'");
    }
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      const T gi = g.at(i);
      m.at(i) = state.beta1 * m.at(i) + (T(1) - state.beta1) * gi;
      v.at(i) = state.beta2 * v.at(i) + (T(1) - state.beta2) * gi * gi;
      const T mhat = m.at(i) / bc1;
      const T vhat = v.at(i) / bc2;
      p.at(i) -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

template void adam_update<float>(ModelParamsT<float>&, const std::map<std::string, TensorF>&,
                                 AdamStateT<float>&, float);
template void adam_update<double>(ModelParamsT<double>&, const std::map<std::string, Tensor>&,
                                  AdamStateT<double>&, double);

namespace {

template <class T>
double argmax_accuracy(const TensorT<T>& logits, const std::vector<int>& labels) {
  const std::int64_t rows = logits.dim(0), cols = logits.dim(1);
  std::int64_t hits = 0;
  for (std::int64_t r = 0; r < rows; ++r) {
    std::int64_t best = 0;
    for (std::int64_t c = 1; c < cols; ++c) {
      if (logits.at(r, c) > logits.at(r, best)) best = c;
    }
    if (best == labels[static_cast<std::size_t>(r)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(rows);
}

std::string fmt9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

template <class T>
StepResult train_step(const Batch& batch, ModelParamsT<T>& params, const ModelConfig& mcfg,
                      AdamStateT<T>& opt, double alpha, double lambda, T lr,
                      const std::array<double, 2>& spoof_weights, std::uint64_t step_seed,
                      std::int64_t step_index) {
  if (batch.records.empty()) throw ParameterError("train_step: empty batch");

  std::vector<const TensorF*> stacks;
  std::vector<int> ys, yd;
  stacks.reserve(batch.records.size());
  for (const UtteranceRecord* r : batch.records) {
    if (r->stack.rank() != 3) {
      throw StateError("train_step: record '" + r->utt_id + "' has no materialized feature stack");
    }
    stacks.push_back(&r->stack);
    ys.push_back(r->y_s);
    yd.push_back(r->y_d);
  }

  TapeT<T> tape;
  ModelGraphT<T> graph(tape, params, mcfg);
  auto spoof_rng = make_engine(derive_seed(step_seed, {1}));
  auto domain_rng = make_engine(derive_seed(step_seed, {2}));
  const bool with_domain = mcfg.has_domain_head();
  auto out = graph.forward(stacks, true, static_cast<T>(lambda), with_domain, spoof_rng,
                           domain_rng);

  auto ls = tape.cross_entropy(out.spoof_logits, ys,
                               {static_cast<T>(spoof_weights[0]), static_cast<T>(spoof_weights[1])});
  auto total = ls;
  StepResult res;
  res.loss_s = static_cast<double>(ls.data().at(0));
  if (with_domain) {
    auto ld = tape.cross_entropy(
        out.domain_logits, yd,
        std::vector<T>(static_cast<std::size_t>(mcfg.domain.num_outputs), T(1)));
    total = tape.add(ls, tape.scale(ld, static_cast<T>(alpha)));
    res.loss_d = static_cast<double>(ld.data().at(0));
    res.domain_acc = argmax_accuracy(out.domain_logits.data(), yd);
  }
  res.spoof_acc = argmax_accuracy(out.spoof_logits.data(), ys);

  if (!std::isfinite(res.loss_s) || !std::isfinite(res.loss_d)) {
    throw DivergedError("training diverged at step " + std::to_string(step_index) +
                        " (loss_s=" + std::to_string(res.loss_s) +
                        ", loss_d=" + std::to_string(res.loss_d) + ")");
  }

  tape.backward(total);
  adam_update(params, tape.gradients(), opt, lr);
  return res;
}

template StepResult train_step<float>(const Batch&, ModelParamsT<float>&, const ModelConfig&,
                                      AdamStateT<float>&, double, double, float,
                                      const std::array<double, 2>&, std::uint64_t, std::int64_t);
template StepResult train_step<double>(const Batch&, ModelParamsT<double>&, const ModelConfig&,
                                       AdamStateT<double>&, double, double, double,
                                       const std::array<double, 2>&, std::uint64_t, std::int64_t);

namespace {

template <class T>
std::map<std::string, TensorF> to_f32_map(const ModelParamsT<T>& params) {
  std::map<std::string, TensorF> out;
  for (const auto& [name, t] : params.tensors) out.emplace(name, t.template cast<float>());
  return out;
}

template <class T>
TrainResult run_train(const CorpusSet& data, const ModelConfig& mcfg, const TrainConfig& tcfg,
                      const std::array<double, 2>& weights, std::int64_t steps_per_epoch) {
  ModelParamsT<T> params =
      init_model_params(mcfg, derive_seed(tcfg.seed, {0x696e6974ULL})).cast<T>();
  AdamStateT<T> opt;

  const std::int64_t total_steps = steps_per_epoch * tcfg.epochs;
  std::int64_t global_step = 0;

  TrainResult result;
  if (!tcfg.checkpoint_dir.empty()) {
    std::filesystem::create_directories(tcfg.checkpoint_dir);
  }

  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    const auto batches = make_batches(data, tcfg.batch_size, tcfg.seed, epoch);
    double sum_ls = 0.0, sum_ld = 0.0, sum_sacc = 0.0, sum_dacc = 0.0, last_lambda = 0.0;
    std::vector<double> step_ls;
    step_ls.reserve(batches.size());
    for (std::size_t i = 0; i < batches.size(); ++i) {
      const double p = static_cast<double>(global_step) / static_cast<double>(total_steps);
      last_lambda = lambda_at(p, tcfg.gamma);
      const std::uint64_t step_seed = derive_seed(
          tcfg.seed, {0x73746570ULL, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(i)});
      const StepResult r =
          train_step(batches[i], params, mcfg, opt, tcfg.alpha, last_lambda,
                     static_cast<T>(tcfg.lr), weights, step_seed, global_step + 1);
      sum_ls += r.loss_s;
      sum_ld += r.loss_d;
      sum_sacc += r.spoof_acc;
      sum_dacc += r.domain_acc;
      step_ls.push_back(r.loss_s);
      ++global_step;
    }
    const double n = static_cast<double>(batches.size());
    std::sort(step_ls.begin(), step_ls.end());
    const std::size_t mid = step_ls.size() / 2;
    EpochStats st;
    st.epoch = epoch + 1;
    st.loss_s = sum_ls / n;
    st.loss_d = sum_ld / n;
    st.lambda = last_lambda;
    st.domain_acc = sum_dacc / n;
    st.spoof_acc = sum_sacc / n;
    st.median_loss_s = step_ls.size() % 2 == 1 ? step_ls[mid]
                                               : 0.5 * (step_ls[mid - 1] + step_ls[mid]);
    result.log.push_back(st);

    if (!tcfg.checkpoint_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%03d.idfc", st.epoch);
      const auto path = (std::filesystem::path(tcfg.checkpoint_dir) / name).string();
      save_checkpoint(path, to_f32_map(params));
      result.checkpoint_paths.push_back(path);
    }
  }

  if (!tcfg.checkpoint_dir.empty()) {
    const auto path = std::filesystem::path(tcfg.checkpoint_dir) / "train_log.tsv";
    std::ofstream out(path);
    if (!out) throw AssetError("train: cannot open " + path.string() + " for writing");
    out << "epoch\tloss_s\tloss_d\tlambda\tdomain_acc\n";
    for (const auto& st : result.log) {
      out << st.epoch << '\t' << fmt9(st.loss_s) << '\t' << fmt9(st.loss_d) << '\t'
          << fmt9(st.lambda) << '\t' << fmt9(st.domain_acc) << '\n';
    }
  }

  result.params = params.template cast<double>();
  return result;
}

}  // namespace

TrainResult train(const CorpusSet& data, const ModelConfig& mcfg, const TrainConfig& tcfg) {
  tcfg.validate();
  mcfg.validate();
  data.validate();

  const int domains = static_cast<int>(data.corpora.size());
  if (data.total_records() == 0) throw ConfigError("train: dataset is empty");
  if (domains < 2 && tcfg.alpha > 0.0) {
    throw ConfigError("domain adversarial objective requires D >= 2");
  }
  if (mcfg.domain.num_outputs != std::max(domains, 1)) {
    throw ConfigError("train: domain head has " + std::to_string(mcfg.domain.num_outputs) +
                      " outputs but the dataset has " + std::to_string(domains) + " domains");
  }

  std::int64_t n_bona = 0, n_spoof = 0;
  for (const auto& counts : data.class_counts()) {
    n_bona += counts[0];
    n_spoof += counts[1];
  }
  const std::array<double, 2> weights = tcfg.class_weight_mode == ClassWeightMode::ratio
                                            ? class_weights(n_bona, n_spoof)
                                            : std::array<double, 2>{1.0, 1.0};

  const std::int64_t steps_per_epoch = data.total_records() / tcfg.batch_size;
  if (steps_per_epoch == 0) {
    throw ConfigError("train: batch_size " + std::to_string(tcfg.batch_size) +
                      " exceeds the dataset size " + std::to_string(data.total_records()));
  }

  return tcfg.precision == Precision::f32
             ? run_train<float>(data, mcfg, tcfg, weights, steps_per_epoch)
             : run_train<double>(data, mcfg, tcfg, weights, steps_per_epoch);
}

}  // namespace idfe
