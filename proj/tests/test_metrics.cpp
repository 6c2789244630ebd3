#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "idfe/metrics.hpp"
#include "idfe/rng.hpp"

using idfe::EmbeddingDump;
using idfe::EmbeddingRow;
using idfe::ScoreEntry;
using idfe::ScoreSet;

namespace {

// Exhaustive oracle: tries every score, every midpoint between consecutive
// distinct scores and sentinels outside the range, counting both error rates
// from scratch at each candidate threshold. O(n^2), no shared code with the
// production sweep.
double eer_oracle(const std::vector<double>& bona, const std::vector<double>& spoof) {
  std::vector<double> all = bona;
  all.insert(all.end(), spoof.begin(), spoof.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  std::vector<double> cands;
  cands.push_back(all.front() - 1.0);
  for (std::size_t i = 0; i < all.size(); ++i) {
    cands.push_back(all[i]);
    if (i + 1 < all.size()) cands.push_back(0.5 * (all[i] + all[i + 1]));
  }
  cands.push_back(all.back() + 1.0);

  struct Pt {
    double a, b;
  };
  std::vector<Pt> pts;
  for (const double tau : cands) {
    int fa = 0, fr = 0;
    for (const double s : spoof) {
      if (s >= tau) ++fa;
    }
    for (const double s : bona) {
      if (s < tau) ++fr;
    }
    Pt p{static_cast<double>(fa) / static_cast<double>(spoof.size()),
         static_cast<double>(fr) / static_cast<double>(bona.size())};
    if (pts.empty() || pts.back().a != p.a || pts.back().b != p.b) pts.push_back(p);
  }
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double d1 = pts[i].a - pts[i].b;
    const double d2 = pts[i + 1].a - pts[i + 1].b;
    if (d1 == 0.0) return pts[i].a;
    if (d1 > 0.0 && d2 <= 0.0) {
      const double t = d1 / (d1 - d2);
      return pts[i].a + t * (pts[i + 1].a - pts[i].a);
    }
  }
  return pts.back().a;
}

std::filesystem::path temp_file(const char* stem) {
  return std::filesystem::temp_directory_path() / stem;
}

}  // namespace

TEST_CASE("perfectly separated scores have zero eer") {
  const auto r = idfe::eer({0.9, 0.8}, {0.1, 0.2});
  CHECK(r.eer == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("half-interleaved scores give eer one half") {
  const auto r = idfe::eer({0.6, 0.2}, {0.8, 0.4});
  CHECK(r.eer == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("eer matches the exhaustive threshold oracle on random score sets") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    CAPTURE(seed);
    auto eng = idfe::make_engine(idfe::derive_seed(9000, {seed}));
    std::uniform_int_distribution<int> nsz(1, 1000);
    std::uniform_real_distribution<double> uni(-2.0, 2.0);
    const int nb = nsz(eng), ns = nsz(eng);
    std::vector<double> bona, spoof;
    const bool quantize = seed % 3 == 0;  // force ties every third set
    for (int i = 0; i < nb; ++i) {
      double v = uni(eng) + 0.4;
      if (quantize) v = std::round(v * 8.0) / 8.0;
      bona.push_back(v);
    }
    for (int i = 0; i < ns; ++i) {
      double v = uni(eng) - 0.4;
      if (quantize) v = std::round(v * 8.0) / 8.0;
      spoof.push_back(v);
    }
    const double got = idfe::eer(bona, spoof).eer;
    const double want = eer_oracle(bona, spoof);
    CHECK(std::abs(got - want) < 1e-9);
  }
}

TEST_CASE("eer is invariant under strictly monotone score transforms") {
  auto eng = idfe::make_engine(77);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> bona, spoof;
  for (int i = 0; i < 200; ++i) bona.push_back(nd(eng) + 0.8);
  for (int i = 0; i < 150; ++i) spoof.push_back(nd(eng) - 0.8);
  const double base = idfe::eer(bona, spoof).eer;

  auto mapped = [&](auto f) {
    std::vector<double> b2, s2;
    for (double v : bona) b2.push_back(f(v));
    for (double v : spoof) s2.push_back(f(v));
    return idfe::eer(b2, s2).eer;
  };
  CHECK(mapped([](double x) { return 2.0 * x + 1.0; }) == doctest::Approx(base).epsilon(1e-12));
  CHECK(mapped([](double x) { return std::tanh(x); }) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("eer requires both classes") {
  CHECK_THROWS_AS(idfe::eer({0.5, 0.7}, {}), idfe::MetricError);
  CHECK_THROWS_AS(idfe::eer({}, {0.5}), idfe::MetricError);
  CHECK_THROWS_AS(idfe::det_points({}, {0.1}), idfe::MetricError);
}

TEST_CASE("pooled eer is the unweighted mean of per-domain rates") {
  const double p1 = idfe::pooled_eer(
      {{"a", 4.31}, {"b", 4.64}, {"c", 12.14}, {"d", 8.58}});
  CHECK(p1 == doctest::Approx(7.4175).epsilon(1e-12));
  CHECK(std::abs(p1 - 7.41) <= 0.01);

  const double p2 = idfe::pooled_eer(
      {{"a", 2.67}, {"b", 12.68}, {"c", 9.33}, {"d", 7.27}});
  CHECK(p2 == doctest::Approx(7.9875).epsilon(1e-12));
  CHECK(std::abs(p2 - 7.98) <= 0.01);

  CHECK(idfe::pooled_eer({{"only", 0.123}}) == doctest::Approx(0.123));
  CHECK(idfe::pooled_eer({{"x", 0.2}, {"y", 0.2}, {"z", 0.2}}) == doctest::Approx(0.2));
  CHECK_THROWS_AS(idfe::pooled_eer({}), idfe::MetricError);
}

TEST_CASE("det curve spans the extremes and stays monotone") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    CAPTURE(seed);
    auto eng = idfe::make_engine(idfe::derive_seed(8100, {seed}));
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    std::uniform_int_distribution<int> nsz(1, 40);
    std::vector<double> bona, spoof;
    for (int i = 0, n = nsz(eng); i < n; ++i) bona.push_back(std::round(uni(eng) * 4.0) / 4.0);
    for (int i = 0, n = nsz(eng); i < n; ++i) spoof.push_back(std::round(uni(eng) * 4.0) / 4.0);
    const auto pts = idfe::det_points(bona, spoof);
    REQUIRE(pts.size() >= 2);
    CHECK(pts.front().apcer == doctest::Approx(1.0));  // threshold below everything
    CHECK(pts.front().bpcer == doctest::Approx(0.0));
    CHECK(pts.back().apcer == doctest::Approx(0.0));  // threshold above everything
    CHECK(pts.back().bpcer == doctest::Approx(1.0));
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
      CHECK(pts[i + 1].apcer <= pts[i].apcer + 1e-15);
      CHECK(pts[i + 1].bpcer >= pts[i].bpcer - 1e-15);
    }
  }
}

TEST_CASE("det curve crossing reproduces the eer value") {
  auto eng = idfe::make_engine(4141);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> bona, spoof;
  for (int i = 0; i < 120; ++i) bona.push_back(nd(eng) + 0.5);
  for (int i = 0; i < 90; ++i) spoof.push_back(nd(eng) - 0.5);
  const auto pts = idfe::det_points(bona, spoof);
  const double want = idfe::eer(bona, spoof).eer;
  double got = -1.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double d1 = pts[i].apcer - pts[i].bpcer;
    const double d2 = pts[i + 1].apcer - pts[i + 1].bpcer;
    if (d1 == 0.0) {
      got = pts[i].apcer;
      break;
    }
    if (d1 > 0.0 && d2 <= 0.0) {
      const double t = d1 / (d1 - d2);
      got = pts[i].apcer + t * (pts[i + 1].apcer - pts[i].apcer);
      break;
    }
  }
  CHECK(got == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("domain probe decodes one-hot domain embeddings") {
  EmbeddingDump dump;
  for (int d = 0; d < 3; ++d) {
    for (int i = 0; i < 30; ++i) {
      EmbeddingRow r;
      r.utt_id = "u" + std::to_string(d) + "_" + std::to_string(i);
      r.label = i % 2;
      r.domain = d;
      r.emb = {0.0, 0.0, 0.0};
      r.emb[static_cast<std::size_t>(d)] = 1.0;
      dump.rows.push_back(std::move(r));
    }
  }
  const auto res = idfe::domain_probe(dump, 0.8, 5);
  CHECK(res.accuracy >= 0.99);
  CHECK(res.chance == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("domain probe stays near chance on pure noise") {
  EmbeddingDump dump;
  auto eng = idfe::make_engine(606);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int d = 0; d < 3; ++d) {
    for (int i = 0; i < 100; ++i) {
      EmbeddingRow r;
      r.utt_id = "n" + std::to_string(d) + "_" + std::to_string(i);
      r.label = 0;
      r.domain = d;
      for (int e = 0; e < 8; ++e) r.emb.push_back(nd(eng));
      dump.rows.push_back(std::move(r));
    }
  }
  const auto res = idfe::domain_probe(dump, 0.8, 3);
  CHECK(res.chance == doctest::Approx(1.0 / 3.0));
  CHECK(res.accuracy <= res.chance + 0.10);
}

TEST_CASE("domain probe on identical embeddings collapses to the prior") {
  EmbeddingDump dump;
  const std::vector<int> counts = {20, 10, 10};
  for (int d = 0; d < 3; ++d) {
    for (int i = 0; i < counts[static_cast<std::size_t>(d)]; ++i) {
      EmbeddingRow r;
      r.utt_id = "c" + std::to_string(d) + "_" + std::to_string(i);
      r.domain = d;
      r.emb = {0.7, -0.3, 1.1, 0.0};
      dump.rows.push_back(std::move(r));
    }
  }
  const auto res = idfe::domain_probe(dump, 0.8, 11);
  CHECK(res.accuracy <= 0.5 + 0.05);  // majority share of the 3 domains
}

TEST_CASE("domain probe is deterministic given the seed") {
  EmbeddingDump dump;
  auto eng = idfe::make_engine(252);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int d = 0; d < 2; ++d) {
    for (int i = 0; i < 25; ++i) {
      EmbeddingRow r;
      r.utt_id = "s" + std::to_string(d) + std::to_string(i);
      r.domain = d * 7;  // sparse raw ids must be fine
      for (int e = 0; e < 5; ++e) r.emb.push_back(nd(eng) + 0.3 * d * e);
      dump.rows.push_back(std::move(r));
    }
  }
  const auto a = idfe::domain_probe(dump, 0.8, 42);
  const auto b = idfe::domain_probe(dump, 0.8, 42);
  CHECK(a.accuracy == b.accuracy);
  CHECK(a.chance == doctest::Approx(0.5));
}

TEST_CASE("domain probe validates its inputs") {
  EmbeddingDump dump;
  for (int i = 0; i < 30; ++i) {
    EmbeddingRow r;
    r.domain = 0;
    r.emb = {1.0};
    dump.rows.push_back(r);
  }
  CHECK_THROWS_AS(idfe::domain_probe(dump, 0.8, 1), idfe::MetricError);  // one domain
  for (int i = 0; i < 5; ++i) {
    EmbeddingRow r;
    r.domain = 1;
    r.emb = {0.0};
    dump.rows.push_back(r);
  }
  CHECK_THROWS_AS(idfe::domain_probe(dump, 0.8, 1), idfe::MetricError);  // 5 < 10 rows
  for (int i = 0; i < 5; ++i) {
    EmbeddingRow r;
    r.domain = 1;
    r.emb = {0.0, 1.0};  // ragged width
    dump.rows.push_back(r);
  }
  CHECK_THROWS_AS(idfe::domain_probe(dump, 0.8, 1), idfe::MetricError);
  CHECK_THROWS_AS(idfe::domain_probe(dump, 0.0, 1), idfe::ParameterError);
  CHECK_THROWS_AS(idfe::domain_probe(dump, 1.0, 1), idfe::ParameterError);
  CHECK_THROWS_AS(idfe::domain_probe(EmbeddingDump{}, 0.8, 1), idfe::MetricError);
}

TEST_CASE("score export round-trips through the tsv format") {
  ScoreSet s;
  s.entries.push_back({"utt1", "corpusA", 0, 1.23456789012345});
  s.entries.push_back({"utt2", "corpusA", 1, -0.000123456789});
  s.entries.push_back({"utt3", "corpusB", 1, 3.0e17});
  const auto path = temp_file("idfe_scores_rt.tsv");
  idfe::export_scores(s, path);
  const ScoreSet back = idfe::read_scores(path);
  REQUIRE(back.entries.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.entries[i].utt_id == s.entries[i].utt_id);
    CHECK(back.entries[i].domain == s.entries[i].domain);
    CHECK(back.entries[i].label == s.entries[i].label);
    const double rel = std::abs(back.entries[i].score - s.entries[i].score) /
                       std::max(1.0, std::abs(s.entries[i].score));
    CHECK(rel < 1e-8);
  }
  std::filesystem::remove(path);
}

TEST_CASE("empty score export writes just the header") {
  const auto path = temp_file("idfe_scores_empty.tsv");
  idfe::export_scores(ScoreSet{}, path);
  std::ifstream in(path);
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "# idfe-scores v1");
  CHECK_FALSE(std::getline(in, line));
  in.close();
  CHECK(idfe::read_scores(path).entries.empty());
  std::filesystem::remove(path);
}

TEST_CASE("score reader rejects malformed files") {
  const auto path = temp_file("idfe_scores_bad.tsv");
  {
    std::ofstream out(path);
    out << "no header\n";
  }
  CHECK_THROWS_AS(idfe::read_scores(path), idfe::FormatError);
  {
    std::ofstream out(path);
    out << "# idfe-scores v1\nu1\tdom\tmaybe\t0.5\n";
  }
  CHECK_THROWS_AS(idfe::read_scores(path), idfe::FormatError);
  {
    std::ofstream out(path);
    out << "# idfe-scores v1\nu1\tdom\tspoof\tnot_a_number\n";
  }
  CHECK_THROWS_AS(idfe::read_scores(path), idfe::FormatError);
  {
    std::ofstream out(path);
    out << "# idfe-scores v1\nu1\tdom\tspoof\n";
  }
  CHECK_THROWS_AS(idfe::read_scores(path), idfe::FormatError);
  CHECK_THROWS_AS(idfe::read_scores(temp_file("idfe_scores_missing.tsv")), idfe::AssetError);
  std::filesystem::remove(path);
}

TEST_CASE("embedding export round-trips and enforces uniform width") {
  EmbeddingDump d;
  d.rows.push_back({"e1", 0, 2, {0.1, -0.25, 3.5}});
  d.rows.push_back({"e2", 1, 0, {1e-9, 123456.789, -42.0}});
  const auto path = temp_file("idfe_emb_rt.tsv");
  idfe::export_embeddings(d, path);
  const EmbeddingDump back = idfe::read_embeddings(path);
  REQUIRE(back.rows.size() == 2);
  CHECK(back.dim() == 3);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back.rows[i].utt_id == d.rows[i].utt_id);
    CHECK(back.rows[i].label == d.rows[i].label);
    CHECK(back.rows[i].domain == d.rows[i].domain);
    for (std::size_t e = 0; e < 3; ++e) {
      const double rel = std::abs(back.rows[i].emb[e] - d.rows[i].emb[e]) /
                         std::max(1.0, std::abs(d.rows[i].emb[e]));
      CHECK(rel < 1e-8);
    }
  }
  {
    std::ofstream out(path);
    out << "# idfe-emb v1\nu1\tspoof\t0\t0.5\t0.25\nu2\tspoof\t0\t0.5\n";
  }
  CHECK_THROWS_AS(idfe::read_embeddings(path), idfe::FormatError);
  std::filesystem::remove(path);
}

TEST_CASE("score sets group by domain preserving order") {
  ScoreSet s;
  s.entries.push_back({"a", "x", 0, 1.0});
  s.entries.push_back({"b", "y", 1, 2.0});
  s.entries.push_back({"c", "x", 1, 3.0});
  const auto groups = s.by_domain();
  REQUIRE(groups.size() == 2);
  REQUIRE(groups.at("x").entries.size() == 2);
  CHECK(groups.at("x").entries[0].utt_id == "a");
  CHECK(groups.at("x").entries[1].utt_id == "c");
  CHECK(groups.at("y").entries[0].utt_id == "b");
}
