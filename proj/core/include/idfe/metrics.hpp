#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "idfe/errors.hpp"

namespace idfe {

// One scored trial. label: 0 = bona fide, 1 = spoof. Scores are oriented so
// that higher means more bona-fide-like (detection_score convention).
struct ScoreEntry {
  std::string utt_id;
  std::string domain;
  int label = 0;
  double score = 0.0;
};

struct ScoreSet {
  std::vector<ScoreEntry> entries;

  std::map<std::string, ScoreSet> by_domain() const;
};

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

struct DetPoint {
  double threshold = 0.0;
  double apcer = 0.0;  // fraction of spoof trials with score >= threshold
  double bpcer = 0.0;  // fraction of bona fide trials with score < threshold
};

// Equal error rate of a single score group. Sweeps the distinct scores in
// ascending order plus the all-rejected endpoint and linearly interpolates
// between the two operating points that straddle APCER == BPCER.
EerResult eer(const std::vector<double>& bona, const std::vector<double>& spoof);
EerResult eer(const ScoreSet& group);

// Unweighted mean over per-domain EERs.
double pooled_eer(const std::map<std::string, double>& per_domain);

// Full operating curve: one point per distinct score (ascending) plus the
// (APCER 0, BPCER 1) endpoint. APCER is non-increasing, BPCER non-decreasing.
std::vector<DetPoint> det_points(const std::vector<double>& bona, const std::vector<double>& spoof);
std::vector<DetPoint> det_points(const ScoreSet& group);

// One embedded utterance. label: 0 bona fide / 1 spoof; domain: corpus id.
struct EmbeddingRow {
  std::string utt_id;
  int label = 0;
  int domain = 0;
  std::vector<double> emb;
};

struct EmbeddingDump {
  std::vector<EmbeddingRow> rows;

  std::int64_t dim() const;  // uniform width of all rows (0 when empty)
};

struct ProbeResult {
  double accuracy = 0.0;
  double chance = 0.0;
};

// How much linearly decodable domain identity the embeddings carry: fits a
// multinomial linear classifier (own autodiff, 200 full-batch steps, lr 0.1)
// on a stratified train split and reports held-out accuracy next to the 1/D
// chance level. Deterministic given the seed.
ProbeResult domain_probe(const EmbeddingDump& dump, double train_frac = 0.8,
                         std::uint64_t seed = 0);

// TSV exporters/readers. Both formats carry a version header comment and
// print values with 9 significant digits; reading back an exported file
// reproduces the values within the last printed digit.
void export_scores(const ScoreSet& scores, const std::filesystem::path& path);
ScoreSet read_scores(const std::filesystem::path& path);
void export_embeddings(const EmbeddingDump& dump, const std::filesystem::path& path);
EmbeddingDump read_embeddings(const std::filesystem::path& path);

}  // namespace idfe
