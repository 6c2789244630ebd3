#include "idfe/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "idfe/rng.hpp"
#include "idfe/threads.hpp"

namespace idfe {

namespace {

constexpr char kMagic[5] = {'I', 'D', 'F', '1', '\0'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8 & 0xff));
  out.push_back(static_cast<char>(v >> 16 & 0xff));
  out.push_back(static_cast<char>(v >> 24 & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
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

std::vector<double> unit_direction(int dim, std::mt19937_64& eng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(dim));
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& x : v) {
      x = nd(eng);
      norm += x * x;
    }
    norm = std::sqrt(norm);
  } while (norm < 1e-9);
  for (auto& x : v) x /= norm;
  return v;
}

}  // namespace

std::int64_t CorpusSet::total_records() const {
  std::int64_t n = 0;
  for (const auto& c : corpora) n += static_cast<std::int64_t>(c.records.size());
  return n;
}

std::vector<const UtteranceRecord*> CorpusSet::all() const {
  std::vector<const UtteranceRecord*> out;
  out.reserve(static_cast<std::size_t>(total_records()));
  for (const auto& c : corpora)
    for (const auto& r : c.records) out.push_back(&r);
  return out;
}

std::vector<std::array<std::int64_t, 2>> CorpusSet::class_counts() const {
  std::vector<std::array<std::int64_t, 2>> out;
  for (const auto& c : corpora) {
    std::array<std::int64_t, 2> n{0, 0};
    for (const auto& r : c.records) ++n[static_cast<std::size_t>(r.y_s)];
    out.push_back(n);
  }
  return out;
}

void CorpusSet::validate() const {
  std::vector<std::string> problems;
  for (std::size_t d = 0; d < corpora.size(); ++d) {
    std::set<std::string> seen;
    for (const auto& r : corpora[d].records) {
      if (r.utt_id.empty()) problems.push_back("corpus " + corpora[d].name + ": empty utt_id");
      if (!seen.insert(r.utt_id).second) {
        problems.push_back("corpus " + corpora[d].name + ": duplicate utt_id '" + r.utt_id + "'");
      }
      if (r.y_s != 0 && r.y_s != 1) {
        problems.push_back("utt '" + r.utt_id + "': label " + std::to_string(r.y_s) +
                           " not in {0,1}");
      }
      if (r.y_d != static_cast<int>(d)) {
        problems.push_back("utt '" + r.utt_id + "': domain " + std::to_string(r.y_d) +
                           " but corpus position is " + std::to_string(d));
      }
    }
  }
  if (!problems.empty()) {
    std::string msg = "corpus validation failed:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ValidationError(msg);
  }
}

CorpusSet load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw AssetError("load_manifest: cannot open " + path.string());
  const std::filesystem::path base = path.parent_path();

  struct Row {
    std::string utt_id;
    int y_s;
    long domain;
    std::filesystem::path p;
  };
  std::vector<Row> rows;
  std::vector<std::string> offenders;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto f = split_tabs(line);
    if (f.size() != 4) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) +
                        ": expected 4 columns (utt_id, label, domain, path), got " +
                        std::to_string(f.size()));
    }
    Row r;
    r.utt_id = f[0];
    if (f[1] == "bonafide") {
      r.y_s = 0;
    } else if (f[1] == "spoof") {
      r.y_s = 1;
    } else {
      offenders.push_back("line " + std::to_string(lineno) + ": unknown label '" + f[1] +
                          "' (accepted: bonafide, spoof)");
      continue;
    }
    char* end = nullptr;
    r.domain = std::strtol(f[2].c_str(), &end, 10);
    if (end == f[2].c_str() || *end != '\0' || r.domain < 0) {
      offenders.push_back("line " + std::to_string(lineno) + ": bad domain '" + f[2] + "'");
      continue;
    }
    r.p = base / f[3];
    rows.push_back(std::move(r));
  }
  if (!offenders.empty()) {
    std::string msg = path.string() + ": invalid manifest:";
    for (const auto& o : offenders) msg += "\n  " + o;
    throw ValidationError(msg);
  }
  if (rows.empty()) throw ValidationError(path.string() + ": manifest has no records");

  std::set<long> domains;
  for (const auto& r : rows) domains.insert(r.domain);
  const long max_domain = *domains.rbegin();
  if (static_cast<long>(domains.size()) != max_domain + 1) {
    std::string have;
    for (const long d : domains) have += (have.empty() ? "" : ", ") + std::to_string(d);
    throw ValidationError(path.string() + ": domain ids must be dense 0.." +
                          std::to_string(domains.size() - 1) + ", got {" + have + "}");
  }

  CorpusSet set;
  set.corpora.resize(static_cast<std::size_t>(max_domain + 1));
  for (long d = 0; d <= max_domain; ++d) set.corpora[static_cast<std::size_t>(d)].name = "d" + std::to_string(d);
  for (auto& r : rows) {
    UtteranceRecord rec;
    rec.utt_id = std::move(r.utt_id);
    rec.y_s = r.y_s;
    rec.y_d = static_cast<int>(r.domain);
    rec.path = std::move(r.p);
    set.corpora[static_cast<std::size_t>(r.domain)].records.push_back(std::move(rec));
  }
  set.validate();
  return set;
}

void materialize(CorpusSet& set) {
  for (auto& c : set.corpora) {
    for (auto& r : c.records) {
      if (r.stack.numel() > 0) continue;
      if (r.path.empty()) {
        throw ValidationError("materialize: utt '" + r.utt_id +
                              "' has neither a stack nor a path");
      }
      r.stack = read_embedding(r.path);
    }
  }
}

void write_embedding(const std::filesystem::path& path, const TensorF& stack) {
  if (stack.rank() != 3) {
    throw DimensionError("write_embedding: stack must be [L,T,D], got " + shape_str(stack.shape));
  }
  for (int i = 0; i < 3; ++i) {
    if (stack.shape[static_cast<std::size_t>(i)] < 1 ||
        stack.shape[static_cast<std::size_t>(i)] > 0xffffffffLL) {
      throw ValidationError("write_embedding: extent " + std::to_string(i) + " out of range in " +
                            shape_str(stack.shape));
    }
  }
  for (std::int64_t i = 0; i < stack.numel(); ++i) {
    if (!std::isfinite(stack.at(i))) {
      throw ValidationError("write_embedding: non-finite value at flat index " + std::to_string(i));
    }
  }
  std::string buf;
  buf.reserve(21 + static_cast<std::size_t>(stack.numel()) * 4);
  buf.append(kMagic, 5);
  put_u32(buf, kVersion);
  put_u32(buf, static_cast<std::uint32_t>(stack.shape[0]));
  put_u32(buf, static_cast<std::uint32_t>(stack.shape[1]));
  put_u32(buf, static_cast<std::uint32_t>(stack.shape[2]));
  for (std::int64_t i = 0; i < stack.numel(); ++i) {
    put_u32(buf, std::bit_cast<std::uint32_t>(stack.at(i)));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw AssetError("write_embedding: cannot open " + path.string() + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out.flush()) throw AssetError("write_embedding: write failed for " + path.string());
}

TensorF read_embedding(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw AssetError("read_embedding: cannot open " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 5 || std::memcmp(buf.data(), kMagic, 5) != 0) {
    throw FormatError(path.string() + ": bad magic (byte 0)");
  }
  if (buf.size() < 21) {
    throw FormatError(path.string() + ": truncated header: " + std::to_string(buf.size()) +
                      " bytes, need 21 (byte " + std::to_string(buf.size()) + ")");
  }
  const std::uint32_t version = get_u32(buf.data() + 5);
  if (version != kVersion) {
    throw FormatError(path.string() + ": unsupported version " + std::to_string(version) +
                      " (byte 5)");
  }
  const std::uint32_t L = get_u32(buf.data() + 9);
  const std::uint32_t T = get_u32(buf.data() + 13);
  const std::uint32_t D = get_u32(buf.data() + 17);
  if (L == 0) throw FormatError(path.string() + ": zero layer count (byte 9)");
  if (T == 0) throw FormatError(path.string() + ": zero frame count (byte 13)");
  if (D == 0) throw FormatError(path.string() + ": zero feature dim (byte 17)");
  const std::uint64_t n = static_cast<std::uint64_t>(L) * T * D;
  const std::uint64_t expect = 21 + n * 4;
  if (buf.size() < expect) {
    throw FormatError(path.string() + ": truncated payload: expected " + std::to_string(expect) +
                      " bytes, got " + std::to_string(buf.size()) + " (byte " +
                      std::to_string(buf.size()) + ")");
  }
  if (buf.size() > expect) {
    throw FormatError(path.string() + ": trailing data after payload (byte " +
                      std::to_string(expect) + ")");
  }
  TensorF stack(Shape{static_cast<std::int64_t>(L), static_cast<std::int64_t>(T),
                      static_cast<std::int64_t>(D)});
  for (std::uint64_t i = 0; i < n; ++i) {
    stack.at(static_cast<std::int64_t>(i)) =
        std::bit_cast<float>(get_u32(buf.data() + 21 + i * 4));
  }
  return stack;
}

void SynthSpec::validate() const {
  if (num_domains < 1 || feature_dim < 1 || layers < 1) {
    throw ParameterError("synth spec: num_domains, feature_dim and layers must be >= 1");
  }
  if (frames_min < 1 || frames_max < frames_min) {
    throw ParameterError("synth spec: need 1 <= frames_min <= frames_max, got [" +
                         std::to_string(frames_min) + ", " + std::to_string(frames_max) + "]");
  }
  if (beta < 0.0 || class_sep < 0.0 || sigma < 0.0) {
    throw ParameterError("synth spec: beta, class_sep and sigma must be non-negative");
  }
  const auto check_unit = [&](const std::vector<double>& v, const std::string& what) {
    if (static_cast<int>(v.size()) != feature_dim) {
      throw ValidationError("synth spec: " + what + " has dimension " + std::to_string(v.size()) +
                            ", expected " + std::to_string(feature_dim));
    }
    double norm = 0.0;
    for (const double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (std::abs(norm - 1.0) > 1e-6) {
      throw ValidationError("synth spec: " + what + " is not unit-norm (|v| = " +
                            std::to_string(norm) + ")");
    }
  };
  check_unit(u_bona, "u_bona");
  check_unit(u_spoof, "u_spoof");
  if (static_cast<int>(bias.size()) != num_domains) {
    throw ValidationError("synth spec: " + std::to_string(bias.size()) + " bias directions for " +
                          std::to_string(num_domains) + " domains");
  }
  for (std::size_t d = 0; d < bias.size(); ++d) {
    check_unit(bias[d], "bias[" + std::to_string(d) + "]");
  }
}

SynthSpec make_synth_spec(int num_domains, int feature_dim, int layers, int frames_min,
                          int frames_max, double beta, double class_sep, double sigma,
                          std::uint64_t seed) {
  SynthSpec spec;
  spec.num_domains = num_domains;
  spec.feature_dim = feature_dim;
  spec.layers = layers;
  spec.frames_min = frames_min;
  spec.frames_max = frames_max;
  spec.beta = beta;
  spec.class_sep = class_sep;
  spec.sigma = sigma;
  {
    auto eng = make_engine(derive_seed(seed, {1}));
    spec.u_bona = unit_direction(feature_dim, eng);
  }
  {
    auto eng = make_engine(derive_seed(seed, {2}));
    spec.u_spoof = unit_direction(feature_dim, eng);
  }
  for (int d = 0; d < num_domains; ++d) {
    auto eng = make_engine(derive_seed(seed, {3, static_cast<std::uint64_t>(d)}));
    spec.bias.push_back(unit_direction(feature_dim, eng));
  }
  spec.validate();
  return spec;
}

CorpusSet synth_generate(const SynthSpec& spec, int n_per_domain_per_class, std::uint64_t seed) {
  spec.validate();
  if (n_per_domain_per_class < 1) {
    throw ParameterError("synth_generate: n_per_domain_per_class must be >= 1, got " +
                         std::to_string(n_per_domain_per_class));
  }
  CorpusSet set;
  for (int d = 0; d < spec.num_domains; ++d) {
    Corpus corpus;
    corpus.name = "synth" + std::to_string(d);
    for (int cls = 0; cls < 2; ++cls) {
      for (int k = 0; k < n_per_domain_per_class; ++k) {
        UtteranceRecord rec;
        rec.utt_id = corpus.name + (cls == 0 ? "_bona_" : "_spoof_") + std::to_string(k);
        rec.y_s = cls;
        rec.y_d = d;
        corpus.records.push_back(std::move(rec));
      }
    }
    // per-record derived seeds keep generation order-independent
    parallel_for(static_cast<std::int64_t>(corpus.records.size()), max_threads(),
                 [&](std::int64_t i) {
                   UtteranceRecord& rec = corpus.records[static_cast<std::size_t>(i)];
                   auto eng = make_engine(derive_seed(
                       seed, {static_cast<std::uint64_t>(d), static_cast<std::uint64_t>(rec.y_s),
                              static_cast<std::uint64_t>(i)}));
                   std::uniform_int_distribution<int> frames(spec.frames_min, spec.frames_max);
                   const int t_frames = frames(eng);
                   std::normal_distribution<double> noise(0.0, 1.0);
                   const std::vector<double>& u = rec.y_s == 0 ? spec.u_bona : spec.u_spoof;
                   const std::vector<double>& b = spec.bias[static_cast<std::size_t>(d)];
                   rec.stack = TensorF(Shape{spec.layers, t_frames, spec.feature_dim});
                   for (std::int64_t l = 0; l < spec.layers; ++l) {
                     for (std::int64_t t = 0; t < t_frames; ++t) {
                       for (std::int64_t e = 0; e < spec.feature_dim; ++e) {
                         const double mu = spec.class_sep * u[static_cast<std::size_t>(e)] +
                                           spec.beta * b[static_cast<std::size_t>(e)];
                         rec.stack.at(l, t, e) =
                             static_cast<float>(mu + spec.sigma * noise(eng));
                       }
                     }
                   }
                 });
    set.corpora.push_back(std::move(corpus));
  }
  return set;
}

CorpusSet compose_case(int case_id, const std::vector<Corpus>& sources) {
  std::vector<std::size_t> picks;
  switch (case_id) {
    case 1: picks = {0}; break;
    case 2: picks = {1}; break;
    case 3: picks = {0, 1}; break;
    case 4: picks = {0, 1, 2}; break;
    default:
      throw ConfigError("compose_case: training case must be 1..4, got " +
                        std::to_string(case_id));
  }
  const std::size_t need = *std::max_element(picks.begin(), picks.end()) + 1;
  if (sources.size() < need) {
    throw ConfigError("compose_case: case " + std::to_string(case_id) + " needs " +
                      std::to_string(need) + " source corpora, got " +
                      std::to_string(sources.size()));
  }
  CorpusSet set;
  for (const std::size_t p : picks) {
    Corpus c = sources[p];
    const int d = static_cast<int>(set.corpora.size());
    for (auto& r : c.records) r.y_d = d;
    set.corpora.push_back(std::move(c));
  }
  set.validate();
  return set;
}

std::vector<Batch> make_batches(const CorpusSet& set, int batch_size, std::uint64_t seed,
                                int epoch) {
  if (batch_size < 2) {
    throw ParameterError("make_batches: batch_size must be >= 2, got " +
                         std::to_string(batch_size));
  }
  std::vector<const UtteranceRecord*> order = set.all();
  auto eng = make_engine(derive_seed(seed, {0x62617463u, static_cast<std::uint64_t>(epoch)}));
  std::shuffle(order.begin(), order.end(), eng);
  std::vector<Batch> out;
  const std::size_t bs = static_cast<std::size_t>(batch_size);
  for (std::size_t i = 0; i + bs <= order.size(); i += bs) {
    Batch b;
    b.records.assign(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(i + bs));
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace idfe
