#include "idfe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "idfe/rng.hpp"
#include "idfe/tape.hpp"

namespace idfe {

namespace {

std::string fmt9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find('\t', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

double parse_double(const std::string& s, const std::filesystem::path& path, int lineno) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') {
    throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad number '" + s + "'");
  }
  return v;
}

long parse_int(const std::string& s, const std::filesystem::path& path, int lineno) {
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0') {
    throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad integer '" + s + "'");
  }
  return v;
}

int parse_label(const std::string& s, const std::filesystem::path& path, int lineno) {
  if (s == "bonafide") return 0;
  if (s == "spoof") return 1;
  throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad label '" + s +
                    "' (want bonafide|spoof)");
}

const char* label_name(int label) { return label == 0 ? "bonafide" : "spoof"; }

}  // namespace

std::map<std::string, ScoreSet> ScoreSet::by_domain() const {
  std::map<std::string, ScoreSet> out;
  for (const auto& e : entries) out[e.domain].entries.push_back(e);
  return out;
}

std::vector<DetPoint> det_points(const std::vector<double>& bona, const std::vector<double>& spoof) {
  if (bona.empty() || spoof.empty()) {
    throw MetricError("det_points: need both classes, got " + std::to_string(bona.size()) +
                      " bona fide and " + std::to_string(spoof.size()) + " spoof trials");
  }
  std::vector<double> sb = bona, ss = spoof;
  std::sort(sb.begin(), sb.end());
  std::sort(ss.begin(), ss.end());
  std::vector<double> thresholds;
  thresholds.reserve(sb.size() + ss.size());
  thresholds.insert(thresholds.end(), sb.begin(), sb.end());
  thresholds.insert(thresholds.end(), ss.begin(), ss.end());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  std::vector<DetPoint> out;
  out.reserve(thresholds.size() + 1);
  // two monotone cursors over the sorted class scores: ib counts bona < tau,
  // is counts spoof < tau
  std::size_t ib = 0, is = 0;
  for (const double tau : thresholds) {
    while (ib < sb.size() && sb[ib] < tau) ++ib;
    while (is < ss.size() && ss[is] < tau) ++is;
    DetPoint p;
    p.threshold = tau;
    p.apcer = static_cast<double>(ss.size() - is) / static_cast<double>(ss.size());
    p.bpcer = static_cast<double>(ib) / static_cast<double>(sb.size());
    out.push_back(p);
  }
  // threshold above every score: everything rejected as spoof
  out.push_back(DetPoint{thresholds.back(), 0.0, 1.0});
  return out;
}

std::vector<DetPoint> det_points(const ScoreSet& group) {
  std::vector<double> bona, spoof;
  for (const auto& e : group.entries) (e.label == 0 ? bona : spoof).push_back(e.score);
  return det_points(bona, spoof);
}

EerResult eer(const std::vector<double>& bona, const std::vector<double>& spoof) {
  const std::vector<DetPoint> pts = det_points(bona, spoof);
  // APCER - BPCER starts at +1 and falls to -1; find where it crosses zero
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double d1 = pts[i].apcer - pts[i].bpcer;
    const double d2 = pts[i + 1].apcer - pts[i + 1].bpcer;
    if (d1 == 0.0) return {pts[i].apcer, pts[i].threshold};
    if (d1 > 0.0 && d2 <= 0.0) {
      const double t = d1 / (d1 - d2);
      return {pts[i].apcer + t * (pts[i + 1].apcer - pts[i].apcer),
              pts[i].threshold + t * (pts[i + 1].threshold - pts[i].threshold)};
    }
  }
  const DetPoint& last = pts.back();  // unreachable for well-formed curves
  return {last.apcer, last.threshold};
}

EerResult eer(const ScoreSet& group) {
  std::vector<double> bona, spoof;
  for (const auto& e : group.entries) (e.label == 0 ? bona : spoof).push_back(e.score);
  return eer(bona, spoof);
}

double pooled_eer(const std::map<std::string, double>& per_domain) {
  if (per_domain.empty()) throw MetricError("pooled_eer: no per-domain values");
  double s = 0.0;
  for (const auto& [name, v] : per_domain) s += v;
  return s / static_cast<double>(per_domain.size());
}

std::int64_t EmbeddingDump::dim() const {
  return rows.empty() ? 0 : static_cast<std::int64_t>(rows[0].emb.size());
}

ProbeResult domain_probe(const EmbeddingDump& dump, double train_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) {
    throw ParameterError("domain_probe: train_frac must be in (0,1), got " +
                         std::to_string(train_frac));
  }
  const std::int64_t E = dump.dim();
  if (E < 1) throw MetricError("domain_probe: empty embedding dump");
  std::map<int, std::vector<std::size_t>> by_dom;
  for (std::size_t i = 0; i < dump.rows.size(); ++i) {
    if (static_cast<std::int64_t>(dump.rows[i].emb.size()) != E) {
      throw MetricError("domain_probe: row " + std::to_string(i) + " has dimension " +
                        std::to_string(dump.rows[i].emb.size()) + ", expected " + std::to_string(E));
    }
    by_dom[dump.rows[i].domain].push_back(i);
  }
  if (by_dom.size() < 2) {
    throw MetricError("domain_probe: need at least 2 domains, got " + std::to_string(by_dom.size()));
  }
  for (const auto& [d, idx] : by_dom) {
    if (idx.size() < 10) {
      throw MetricError("domain_probe: domain " + std::to_string(d) + " has " +
                        std::to_string(idx.size()) + " rows, need at least 10");
    }
  }
  const int D = static_cast<int>(by_dom.size());
  std::map<int, int> dense;  // raw domain id -> 0..D-1
  for (const auto& [d, idx] : by_dom) dense.emplace(d, static_cast<int>(dense.size()));

  // stratified split so every domain appears on both sides
  std::vector<std::size_t> train_rows, test_rows;
  for (const auto& [d, idx] : by_dom) {
    std::vector<std::size_t> shuffled = idx;
    auto eng = make_engine(derive_seed(seed, {0x70726f6265u, static_cast<std::uint64_t>(dense[d])}));
    std::shuffle(shuffled.begin(), shuffled.end(), eng);
    const auto n = static_cast<std::int64_t>(shuffled.size());
    std::int64_t n_train = std::llround(train_frac * static_cast<double>(n));
    n_train = std::clamp<std::int64_t>(n_train, 1, n - 1);
    train_rows.insert(train_rows.end(), shuffled.begin(), shuffled.begin() + n_train);
    test_rows.insert(test_rows.end(), shuffled.begin() + n_train, shuffled.end());
  }

  // per-dimension standardization fitted on the train split only
  std::vector<double> mean(static_cast<std::size_t>(E), 0.0), sd(static_cast<std::size_t>(E), 0.0);
  for (const std::size_t r : train_rows)
    for (std::int64_t e = 0; e < E; ++e) mean[static_cast<std::size_t>(e)] += dump.rows[r].emb[static_cast<std::size_t>(e)];
  for (auto& m : mean) m /= static_cast<double>(train_rows.size());
  for (const std::size_t r : train_rows)
    for (std::int64_t e = 0; e < E; ++e) {
      const double d = dump.rows[r].emb[static_cast<std::size_t>(e)] - mean[static_cast<std::size_t>(e)];
      sd[static_cast<std::size_t>(e)] += d * d;
    }
  for (auto& s : sd) s = std::max(std::sqrt(s / static_cast<double>(train_rows.size())), 1e-8);

  const auto standardized = [&](const std::vector<std::size_t>& rows) {
    Tensor x(Shape{static_cast<std::int64_t>(rows.size()), E});
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::int64_t e = 0; e < E; ++e)
        x.at(static_cast<std::int64_t>(i), e) =
            (dump.rows[rows[i]].emb[static_cast<std::size_t>(e)] - mean[static_cast<std::size_t>(e)]) /
            sd[static_cast<std::size_t>(e)];
    return x;
  };
  const Tensor xtr = standardized(train_rows);
  const Tensor xte = standardized(test_rows);
  std::vector<int> ytr;
  ytr.reserve(train_rows.size());
  for (const std::size_t r : train_rows) ytr.push_back(dense[dump.rows[r].domain]);

  // multinomial linear classifier, plain full-batch gradient descent
  Tensor W(Shape{E, D});
  Tensor b(Shape{D});
  const std::vector<double> unit(static_cast<std::size_t>(D), 1.0);
  const double lr = 0.1;
  for (int step = 0; step < 200; ++step) {
    Tape t;
    Value wv = t.leaf(W);
    Value bv = t.leaf(b);
    Value logits = t.add(t.matmul(t.leaf(xtr), wv), bv);
    Value loss = t.cross_entropy(logits, ytr, unit);
    t.backward(loss);
    const Tensor& gw = t.grad(wv.id);
    const Tensor& gb = t.grad(bv.id);
    for (std::int64_t i = 0; i < W.numel(); ++i) W.at(i) -= lr * gw.at(i);
    for (std::int64_t i = 0; i < b.numel(); ++i) b.at(i) -= lr * gb.at(i);
  }

  std::int64_t correct = 0;
  for (std::size_t i = 0; i < test_rows.size(); ++i) {
    int best = 0;
    double best_v = -1e300;
    for (int d = 0; d < D; ++d) {
      double v = b.at(d);
      for (std::int64_t e = 0; e < E; ++e) v += xte.at(static_cast<std::int64_t>(i), e) * W.at(e, d);
      if (v > best_v) {
        best_v = v;
        best = d;
      }
    }
    if (best == dense[dump.rows[test_rows[i]].domain]) ++correct;
  }
  return {static_cast<double>(correct) / static_cast<double>(test_rows.size()),
          1.0 / static_cast<double>(D)};
}

void export_scores(const ScoreSet& scores, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw AssetError("export_scores: cannot open " + path.string() + " for writing");
  out << "# idfe-scores v1\n";
  for (const auto& e : scores.entries) {
    out << e.utt_id << '\t' << e.domain << '\t' << label_name(e.label) << '\t' << fmt9(e.score)
        << '\n';
  }
  if (!out.flush()) throw AssetError("export_scores: write failed for " + path.string());
}

ScoreSet read_scores(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw AssetError("read_scores: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "# idfe-scores v1") {
    throw FormatError(path.string() + ": missing '# idfe-scores v1' header");
  }
  ScoreSet out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto f = split_tabs(line);
    if (f.size() != 4) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 4 columns, got " +
                        std::to_string(f.size()));
    }
    ScoreEntry e;
    e.utt_id = f[0];
    e.domain = f[1];
    e.label = parse_label(f[2], path, lineno);
    e.score = parse_double(f[3], path, lineno);
    out.entries.push_back(std::move(e));
  }
  return out;
}

void export_embeddings(const EmbeddingDump& dump, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw AssetError("export_embeddings: cannot open " + path.string() + " for writing");
  out << "# idfe-emb v1\n";
  for (const auto& r : dump.rows) {
    out << r.utt_id << '\t' << label_name(r.label) << '\t' << r.domain;
    for (const double v : r.emb) out << '\t' << fmt9(v);
    out << '\n';
  }
  if (!out.flush()) throw AssetError("export_embeddings: write failed for " + path.string());
}

EmbeddingDump read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw AssetError("read_embeddings: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "# idfe-emb v1") {
    throw FormatError(path.string() + ": missing '# idfe-emb v1' header");
  }
  EmbeddingDump out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto f = split_tabs(line);
    if (f.size() < 4) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) +
                        ": expected utt, label, domain and at least one value");
    }
    EmbeddingRow r;
    r.utt_id = f[0];
    r.label = parse_label(f[1], path, lineno);
    r.domain = static_cast<int>(parse_int(f[2], path, lineno));
    r.emb.reserve(f.size() - 3);
    for (std::size_t i = 3; i < f.size(); ++i) r.emb.push_back(parse_double(f[i], path, lineno));
    if (!out.rows.empty() && r.emb.size() != out.rows[0].emb.size()) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": row has " +
                        std::to_string(r.emb.size()) + " values, expected " +
                        std::to_string(out.rows[0].emb.size()));
    }
    out.rows.push_back(std::move(r));
  }
  return out;
}

}  // namespace idfe
