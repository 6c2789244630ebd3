#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "idfe/errors.hpp"
#include "idfe/tensor.hpp"

namespace idfe {

// One utterance: class label y_s (0 bona fide, 1 spoof), domain id y_d, and
// the layered feature stack [L, T, D] either materialized or referenced by
// an embedding-file path.
struct UtteranceRecord {
  std::string utt_id;
  int y_s = 0;
  int y_d = 0;
  std::filesystem::path path;  // empty when the stack is materialized
  TensorF stack;               // [L, T, D]; empty until materialized
};

struct Corpus {
  std::string name;
  std::vector<UtteranceRecord> records;
};

// An ordered list of corpora; the position of a corpus is its domain id.
struct CorpusSet {
  std::vector<Corpus> corpora;

  int domains() const { return static_cast<int>(corpora.size()); }
  std::int64_t total_records() const;
  std::vector<const UtteranceRecord*> all() const;
  // bona fide / spoof counts per corpus, in corpus order
  std::vector<std::array<std::int64_t, 2>> class_counts() const;
  // dense domain ids, in-range labels, unique utt_ids per corpus
  void validate() const;
};

// Manifest TSV: utt_id<TAB>label<TAB>domain<TAB>path per line, label one of
// bonafide|spoof, domain a dense 0-based integer. '#' lines are comments.
// Stack paths are resolved relative to the manifest directory but are not
// loaded here; call materialize() before batching.
CorpusSet load_manifest(const std::filesystem::path& path);

// Loads every record's stack from its path (records already materialized are
// left alone).
void materialize(CorpusSet& set);

// Layered-embedding binary format:
//   magic "IDF1" (5 bytes, NUL-terminated), version u32 = 1,
//   L u32, T u32, D u32, then L*T*D little-endian f32, layer-major.
// Round trips are bit-exact.
void write_embedding(const std::filesystem::path& path, const TensorF& stack);
TensorF read_embedding(const std::filesystem::path& path);

// Controls for the synthetic biased-corpus generator. Every utterance's
// frames are drawn as mu + noise with mu = s * u_class + beta * b_domain, so
// beta dials how much corpus identity leaks into the features.
struct SynthSpec {
  int num_domains = 3;
  int feature_dim = 16;
  int layers = 3;
  int frames_min = 8;
  int frames_max = 16;
  double beta = 2.0;       // domain bias magnitude
  double class_sep = 1.0;  // class signal magnitude s
  double sigma = 1.0;      // frame noise
  std::vector<double> u_bona;             // unit norm, feature_dim
  std::vector<double> u_spoof;            // unit norm, feature_dim
  std::vector<std::vector<double>> bias;  // num_domains unit-norm directions

  void validate() const;
};

// Draws the direction vectors for a spec deterministically from a seed.
SynthSpec make_synth_spec(int num_domains, int feature_dim, int layers, int frames_min,
                          int frames_max, double beta, double class_sep, double sigma,
                          std::uint64_t seed);

// Materialized synthetic corpora, one per domain, balanced classes, named
// synth0..synthN. Deterministic per (spec, seed).
CorpusSet synth_generate(const SynthSpec& spec, int n_per_domain_per_class, std::uint64_t seed);

// The four training compositions over the listed sources:
//   1 -> first corpus alone, 2 -> second alone, 3 -> first two, 4 -> first three.
// Domain ids are re-stamped densely in listed order.
CorpusSet compose_case(int case_id, const std::vector<Corpus>& sources);

struct Batch {
  std::vector<const UtteranceRecord*> records;
};

// Epoch-seeded uniform shuffle over the whole set, cut into full batches;
// the final short batch is dropped.
std::vector<Batch> make_batches(const CorpusSet& set, int batch_size, std::uint64_t seed,
                                int epoch);

}  // namespace idfe
