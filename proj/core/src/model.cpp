#include "idfe/model.hpp"

#include <cmath>
#include <cstdint>
#include <utility>

#include "idfe/rng.hpp"
#include "idfe/threads.hpp"

namespace idfe {

void MhfaConfig::validate() const {
  if (num_layers < 1) throw ConfigError("mhfa: num_layers must be >= 1");
  if (frame_dim < 1) throw ConfigError("mhfa: frame_dim must be >= 1");
  if (num_heads < 1) throw ConfigError("mhfa: num_heads must be >= 1");
  if (value_dim < 1) throw ConfigError("mhfa: value_dim must be >= 1");
  if (embedding_dim < 1) throw ConfigError("mhfa: embedding_dim must be >= 1");
}

void HeadConfig::validate() const {
  if (hidden_dim < 1) throw ConfigError("head: hidden_dim must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("head: dropout_rate must be in [0, 1)");
  }
  if (num_outputs < 1) throw ConfigError("head: num_outputs must be >= 1");
}

void ModelConfig::validate() const {
  mhfa.validate();
  spoof.validate();
  domain.validate();
  if (spoof.num_outputs != 2) throw ConfigError("model: spoof head must have exactly 2 outputs");
}

template <class T>
TensorT<T>& ModelParamsT<T>::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ParameterError("model params: no tensor named '" + name + "'");
  return it->second;
}

template <class T>
const TensorT<T>& ModelParamsT<T>::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ParameterError("model params: no tensor named '" + name + "'");
  return it->second;
}

template struct ModelParamsT<float>;
template struct ModelParamsT<double>;

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Expected tensor shapes for a config; also the authoritative name list.
std::map<std::string, Shape> expected_shapes(const ModelConfig& cfg) {
  const auto L = static_cast<std::int64_t>(cfg.mhfa.num_layers);
  const auto D = static_cast<std::int64_t>(cfg.mhfa.frame_dim);
  const auto H = static_cast<std::int64_t>(cfg.mhfa.num_heads);
  const auto dv = static_cast<std::int64_t>(cfg.mhfa.value_dim);
  const auto E = static_cast<std::int64_t>(cfg.mhfa.embedding_dim);

  std::map<std::string, Shape> out;
  if (cfg.frame_encoder) {
    out["enc.W"] = {D, D};
    out["enc.b"] = {D};
  }
  out["mhfa.a_k"] = {L};
  out["mhfa.a_v"] = {L};
  out["mhfa.W_k"] = {D, H};
  out["mhfa.W_v"] = {D, dv};
  out["mhfa.W_o"] = {H * dv, E};
  out["mhfa.b_o"] = {E};

  auto add_head = [&](const std::string& prefix, const HeadConfig& hc) {
    const auto h1 = static_cast<std::int64_t>(hc.hidden_dim);
    const auto C = static_cast<std::int64_t>(hc.num_outputs);
    out[prefix + ".W1"] = {E, h1};
    out[prefix + ".b1"] = {h1};
    out[prefix + ".bn_gamma"] = {h1};
    out[prefix + ".bn_beta"] = {h1};
    out[prefix + ".bn_rmean"] = {h1};
    out[prefix + ".bn_rvar"] = {h1};
    out[prefix + ".W2"] = {h1, C};
    out[prefix + ".b2"] = {C};
  };
  add_head("spoof", cfg.spoof);
  if (cfg.has_domain_head()) add_head("domain", cfg.domain);
  return out;
}

template <class T>
void check_tensor_map(const std::map<std::string, TensorT<T>>& tensors, const ModelConfig& cfg) {
  auto want = expected_shapes(cfg);
  for (const auto& [name, shape] : want) {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
      throw ConfigError("model params: missing tensor '" + name + "'");
    }
    if (it->second.shape != shape) {
      throw DimensionError("model params: tensor '" + name + "' has shape " +
                           shape_str(it->second.shape) + ", expected " + shape_str(shape));
    }
  }
  for (const auto& [name, t] : tensors) {
    (void)t;
    if (!want.count(name)) throw ConfigError("model params: unexpected tensor '" + name + "'");
  }
}

template <class T>
void check_params(const ModelParamsT<T>& params, const ModelConfig& cfg) {
  check_tensor_map(params.tensors, cfg);
}

Tensor gaussian(Shape s, double stddev, std::uint64_t seed) {
  Tensor t(std::move(s));
  auto eng = make_engine(seed);
  std::normal_distribution<double> nd(0.0, stddev);
  for (auto& x : t.data) x = nd(eng);
  return t;
}

// Init scale per tensor: He for weights feeding a ReLU, Xavier elsewhere,
// zeros for biases and attention logits, identity stats for batch norm.
Tensor init_tensor(const std::string& name, const Shape& shape, std::uint64_t seed) {
  const std::uint64_t s = derive_seed(seed, {fnv1a64(name)});
  auto fan_pair = [&]() { return static_cast<double>(shape[0] + shape[1]); };

  if (ends_with(name, ".bn_gamma") || ends_with(name, ".bn_rvar")) return Tensor::full(shape, 1.0);
  if (name == "enc.W" || ends_with(name, ".W1")) {
    return gaussian(shape, std::sqrt(2.0 / static_cast<double>(shape[0])), s);
  }
  if (name == "mhfa.W_k" || name == "mhfa.W_v" || name == "mhfa.W_o" || ends_with(name, ".W2")) {
    return gaussian(shape, std::sqrt(2.0 / fan_pair()), s);
  }
  // a_k, a_v, every bias, bn_beta, bn_rmean: zero.
  return Tensor(shape);
}

}  // namespace

bool is_trainable(const std::string& name) {
  return !ends_with(name, ".bn_rmean") && !ends_with(name, ".bn_rvar");
}

ModelParams init_model_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams params;
  for (const auto& [name, shape] : expected_shapes(cfg)) {
    params.tensors.emplace(name, init_tensor(name, shape, seed));
  }
  return params;
}

ModelConfig infer_model_config(const std::map<std::string, TensorF>& tensors) {
  auto need = [&](const std::string& name) -> const TensorF& {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ConfigError("model params: missing tensor '" + name + "'");
    return it->second;
  };

  const TensorF& a_k = need("mhfa.a_k");
  const TensorF& w_k = need("mhfa.W_k");
  const TensorF& w_v = need("mhfa.W_v");
  const TensorF& w_o = need("mhfa.W_o");
  if (a_k.rank() != 1 || w_k.rank() != 2 || w_v.rank() != 2 || w_o.rank() != 2) {
    throw DimensionError("model params: pooling tensors have unexpected ranks");
  }

  ModelConfig cfg;
  cfg.frame_encoder = tensors.count("enc.W") > 0;
  cfg.mhfa.num_layers = static_cast<int>(a_k.dim(0));
  cfg.mhfa.frame_dim = static_cast<int>(w_k.dim(0));
  cfg.mhfa.num_heads = static_cast<int>(w_k.dim(1));
  cfg.mhfa.value_dim = static_cast<int>(w_v.dim(1));
  cfg.mhfa.embedding_dim = static_cast<int>(w_o.dim(1));

  auto head = [&](const std::string& prefix) {
    const TensorF& w1 = need(prefix + ".W1");
    const TensorF& w2 = need(prefix + ".W2");
    if (w1.rank() != 2 || w2.rank() != 2) {
      throw DimensionError("model params: head '" + prefix + "' tensors have unexpected ranks");
    }
    HeadConfig hc;
    hc.hidden_dim = static_cast<int>(w1.dim(1));
    hc.num_outputs = static_cast<int>(w2.dim(1));
    hc.dropout_rate = 0.0;  // a training-time property the tensors do not record
    return hc;
  };
  cfg.spoof = head("spoof");
  if (tensors.count("domain.W1")) {
    cfg.domain = head("domain");
  } else {
    cfg.domain.dropout_rate = 0.0;
    cfg.domain.num_outputs = 1;  // no adversarial head stored
  }

  cfg.validate();
  // With the dimensions pinned, any leftover mismatch (stray tensors, missing
  // ones, inconsistent widths) means the map was not produced by this model.
  check_tensor_map(tensors, cfg);
  return cfg;
}

template <class T>
ModelGraphT<T>::ModelGraphT(TapeT<T>& tape, ModelParamsT<T>& params, const ModelConfig& cfg)
    : tape_(tape), params_(params), cfg_(cfg) {
  cfg_.validate();
  check_params(params_, cfg_);
  // Sorted map order keeps node ids deterministic across runs.
  for (const auto& [name, t] : params_.tensors) {
    if (is_trainable(name)) handles_.emplace(name, tape_.param(name, t));
  }
}

template <class T>
ValueT<T> ModelGraphT<T>::param(const std::string& name) {
  auto it = handles_.find(name);
  if (it == handles_.end()) throw ParameterError("model: no trainable parameter '" + name + "'");
  return it->second;
}

template <class T>
void ModelGraphT<T>::check_stack_dims(const Shape& shape) const {
  const auto L = static_cast<std::int64_t>(cfg_.mhfa.num_layers);
  const auto D = static_cast<std::int64_t>(cfg_.mhfa.frame_dim);
  if (shape.size() != 3 || shape[0] != L || shape[2] != D) {
    throw DimensionError("model: stack shape " + shape_str(shape) + ", expected [" +
                         std::to_string(L) + ",T," + std::to_string(D) + "]");
  }
}

template <class T>
ValueT<T> ModelGraphT<T>::leaf_stack(const TensorF& stack) {
  check_stack_dims(stack.shape);
  return tape_.leaf(stack.template cast<T>());
}

template <class T>
ValueT<T> ModelGraphT<T>::frame_encode(ValueT<T> stack) {
  check_stack_dims(stack.shape());
  if (!cfg_.frame_encoder) return stack;
  const Shape s = stack.shape();
  auto flat = tape_.reshape(stack, {s[0] * s[1], s[2]});
  auto enc = tape_.relu(tape_.add(tape_.matmul(flat, param("enc.W")), param("enc.b")));
  return tape_.reshape(enc, s);
}

template <class T>
ValueT<T> ModelGraphT<T>::mhfa_pool(ValueT<T> stack, PoolDetailT<T>* detail) {
  check_stack_dims(stack.shape());
  const auto L = static_cast<std::int64_t>(cfg_.mhfa.num_layers);
  const auto D = static_cast<std::int64_t>(cfg_.mhfa.frame_dim);
  const auto H = static_cast<std::int64_t>(cfg_.mhfa.num_heads);
  const auto dv = static_cast<std::int64_t>(cfg_.mhfa.value_dim);
  const std::int64_t frames = stack.shape()[1];
  if (frames == 0) throw EmptyUtteranceError("mhfa: utterance has no frames");

  auto layers = tape_.reshape(stack, {L, frames * D});

  // Layer mixtures: two softmax-weighted sums over the stack, one feeding the
  // attention logits and one feeding the values.
  auto alpha_k = tape_.softmax(param("mhfa.a_k"), 0);
  auto alpha_v = tape_.softmax(param("mhfa.a_v"), 0);
  auto keys = tape_.reshape(tape_.matmul(tape_.reshape(alpha_k, {1, L}), layers), {frames, D});
  auto values = tape_.reshape(tape_.matmul(tape_.reshape(alpha_v, {1, L}), layers), {frames, D});

  // Per-head attention over frames, then per-head context vectors.
  auto attn = tape_.softmax(tape_.matmul(keys, param("mhfa.W_k")), 0);  // [T,H]
  auto proj = tape_.matmul(values, param("mhfa.W_v"));                  // [T,dv]
  auto contexts = tape_.matmul(tape_.transpose(attn), proj);            // [H,dv]

  if (detail) {
    detail->alpha_k = alpha_k;
    detail->alpha_v = alpha_v;
    detail->attention = attn;
  }
  auto flat = tape_.reshape(contexts, {1, H * dv});
  return tape_.add(tape_.matmul(flat, param("mhfa.W_o")), param("mhfa.b_o"));
}

template <class T>
ValueT<T> ModelGraphT<T>::head(const char* prefix, const HeadConfig& hc, ValueT<T> x, bool training,
                               std::mt19937_64& rng) {
  const std::string p(prefix);
  auto h = tape_.add(tape_.matmul(x, param(p + ".W1")), param(p + ".b1"));
  h = tape_.batch_norm(h, param(p + ".bn_gamma"), param(p + ".bn_beta"),
                       params_.at(p + ".bn_rmean"), params_.at(p + ".bn_rvar"), training);
  h = tape_.relu(h);
  if (training && hc.dropout_rate > 0.0) h = tape_.dropout(h, hc.dropout_rate, rng);
  return tape_.add(tape_.matmul(h, param(p + ".W2")), param(p + ".b2"));
}

template <class T>
ValueT<T> ModelGraphT<T>::spoof_head(ValueT<T> embedding, bool training, std::mt19937_64& rng) {
  return head("spoof", cfg_.spoof, embedding, training, rng);
}

template <class T>
ValueT<T> ModelGraphT<T>::domain_head(ValueT<T> embedding, T lambda, bool training,
                                      std::mt19937_64& rng, GrlMode grl_mode) {
  if (!cfg_.has_domain_head()) {
    throw ConfigError("model: domain head requires at least 2 domains");
  }
  auto g = grl_mode == GrlMode::active ? tape_.grl(embedding, lambda) : embedding;
  return head("domain", cfg_.domain, g, training, rng);
}

template <class T>
ModelOut<T> ModelGraphT<T>::forward(const std::vector<const TensorF*>& stacks, bool training,
                                    T lambda, bool with_domain, std::mt19937_64& spoof_rng,
                                    std::mt19937_64& domain_rng, GrlMode grl_mode) {
  if (stacks.empty()) throw ParameterError("model: forward needs at least one utterance");

  std::vector<ValueT<T>> rows;
  rows.reserve(stacks.size());
  for (const auto* s : stacks) rows.push_back(mhfa_pool(frame_encode(leaf_stack(*s))));

  ModelOut<T> out;
  out.embedding = rows.size() == 1 ? rows[0] : tape_.concat(rows, 0);
  out.spoof_logits = spoof_head(out.embedding, training, spoof_rng);
  if (with_domain) {
    out.domain_logits = domain_head(out.embedding, lambda, training, domain_rng, grl_mode);
    out.has_domain = true;
  }
  return out;
}

template class ModelGraphT<float>;
template class ModelGraphT<double>;

double detection_score(const Tensor& logits) {
  if (logits.numel() != 2) {
    throw DimensionError("detection_score: expected 2 logits, got shape " +
                         shape_str(logits.shape));
  }
  return logits.at(0) - logits.at(1);
}

namespace {

// One eval-mode forward per record; nothing is mutated, so a shared params
// copy is safe across workers.
void eval_records(const ModelParams& params, const ModelConfig& cfg,
                  const std::vector<const UtteranceRecord*>& records,
                  std::vector<std::vector<double>>* embeddings, std::vector<double>* scores) {
  ModelParams local = params;
  check_params(local, cfg);
  const auto n = static_cast<std::int64_t>(records.size());
  if (embeddings) embeddings->assign(records.size(), {});
  if (scores) scores->assign(records.size(), 0.0);

  parallel_for(n, max_threads(), [&](std::int64_t i) {
    const UtteranceRecord* r = records[static_cast<std::size_t>(i)];
    if (r->stack.rank() != 3) {
      throw StateError("eval: record '" + r->utt_id + "' has no materialized feature stack");
    }
    Tape tape;
    ModelGraph graph(tape, local, cfg);
    auto rng = make_engine(0);  // eval mode draws nothing
    auto out = graph.forward({&r->stack}, false, 0.0, false, rng, rng);
    if (embeddings) {
      const Tensor& e = out.embedding.data();
      (*embeddings)[static_cast<std::size_t>(i)] = e.data;
    }
    if (scores) {
      const Tensor& l = out.spoof_logits.data();
      (*scores)[static_cast<std::size_t>(i)] = l.at(0, 0) - l.at(0, 1);
    }
  });
}

}  // namespace

std::vector<std::vector<double>> embed_records(const ModelParams& params, const ModelConfig& cfg,
                                               const std::vector<const UtteranceRecord*>& records) {
  std::vector<std::vector<double>> out;
  eval_records(params, cfg, records, &out, nullptr);
  return out;
}

std::vector<double> score_records(const ModelParams& params, const ModelConfig& cfg,
                                  const std::vector<const UtteranceRecord*>& records) {
  std::vector<double> out;
  eval_records(params, cfg, records, nullptr, &out);
  return out;
}

}  // namespace idfe
