#include "idfe/audio.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>

#include "idfe/wav_io.hpp"

namespace idfe {

namespace {

// In-place iterative radix-2 FFT (inverse = conjugate trick). Size must be a
// power of two; callers pad.
void fft(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = (inverse ? 2.0 : -2.0) * std::numbers::pi / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse) {
    for (auto& x : a) x /= static_cast<double>(n);
  }
}

// Crops (random offset) or cyclically wraps a waveform to exactly n samples.
std::vector<double> fit_length(const std::vector<double>& in, std::int64_t n,
                               std::mt19937_64& rng) {
  const auto len = static_cast<std::int64_t>(in.size());
  std::vector<double> out(static_cast<std::size_t>(n));
  if (len >= n) {
    std::uniform_int_distribution<std::int64_t> offs(0, len - n);
    const std::int64_t start = offs(rng);
    std::copy(in.begin() + start, in.begin() + start + n, out.begin());
  } else {
    for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = in[static_cast<std::size_t>(i % len)];
  }
  return out;
}

void check_rates(const char* op, const Waveform& a, const Waveform& b) {
  if (a.sample_rate != b.sample_rate) {
    throw ParameterError(std::string(op) + ": sample rate mismatch " +
                         std::to_string(a.sample_rate) + " vs " + std::to_string(b.sample_rate));
  }
}

}  // namespace

double rms(const std::vector<double>& samples) {
  if (samples.empty()) return 0.0;
  double acc = 0.0;
  for (const double s : samples) acc += s * s;
  return std::sqrt(acc / static_cast<double>(samples.size()));
}

Waveform trim_edges(const Waveform& w, double top_db, std::int64_t frame, std::int64_t hop) {
  if (top_db <= 0.0) {
    throw ParameterError("trim_edges: top_db must be positive, got " + std::to_string(top_db));
  }
  if (frame <= 0 || hop <= 0) {
    throw ParameterError("trim_edges: frame and hop must be positive");
  }
  const std::int64_t len = w.size();
  if (len == 0) throw EmptyAudioError("trim_edges: empty input");

  // per-frame power; frames start at multiples of hop, partial tail allowed
  std::vector<double> power;
  for (std::int64_t start = 0; start < len; start += hop) {
    const std::int64_t stop = std::min(len, start + frame);
    double acc = 0.0;
    for (std::int64_t i = start; i < stop; ++i) {
      acc += w.samples[static_cast<std::size_t>(i)] * w.samples[static_cast<std::size_t>(i)];
    }
    power.push_back(acc / static_cast<double>(stop - start));
  }
  const double max_power = *std::max_element(power.begin(), power.end());
  if (max_power <= 0.0) throw EmptyAudioError("trim_edges: signal is silent");

  // keep frames within top_db of the loudest one
  const double floor_power = max_power * std::pow(10.0, -top_db / 10.0);
  std::int64_t first = -1, last = -1;
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(power.size()); ++i) {
    if (power[static_cast<std::size_t>(i)] >= floor_power) {
      if (first < 0) first = i;
      last = i;
    }
  }
  if (first < 0) throw EmptyAudioError("trim_edges: every frame is below the threshold");

  const std::int64_t begin = first * hop;
  const std::int64_t end = std::min(len, last * hop + frame);
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.assign(w.samples.begin() + begin, w.samples.begin() + end);
  return out;
}

Waveform segment(const Waveform& w, double seconds, std::mt19937_64& rng) {
  if (seconds <= 0.0) {
    throw ParameterError("segment: seconds must be positive, got " + std::to_string(seconds));
  }
  if (w.samples.empty()) throw EmptyAudioError("segment: empty input");
  const auto target = static_cast<std::int64_t>(std::llround(seconds * w.sample_rate));
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples = fit_length(w.samples, target, rng);
  return out;
}

Waveform mix_at_snr(const Waveform& signal, const Waveform& noise, double snr_db,
                    std::mt19937_64& rng) {
  check_rates("mix_at_snr", signal, noise);
  if (signal.samples.empty()) throw EmptyAudioError("mix_at_snr: empty signal");
  if (noise.samples.empty()) throw DegenerateNoiseError("mix_at_snr: empty noise");
  const std::vector<double> fitted = fit_length(noise.samples, signal.size(), rng);
  const double rs = rms(signal.samples);
  const double rn = rms(fitted);
  if (rs <= 0.0) throw EmptyAudioError("mix_at_snr: silent signal");
  if (rn <= 0.0) throw DegenerateNoiseError("mix_at_snr: silent noise");
  const double gain = rs / rn * std::pow(10.0, -snr_db / 20.0);
  Waveform out;
  out.sample_rate = signal.sample_rate;
  out.samples.resize(signal.samples.size());
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    out.samples[i] = signal.samples[i] + gain * fitted[i];
  }
  return out;
}

Waveform convolve_ir(const Waveform& signal, const Waveform& ir) {
  check_rates("convolve_ir", signal, ir);
  if (ir.samples.empty()) throw ParameterError("convolve_ir: empty impulse response");
  Waveform out;
  out.sample_rate = signal.sample_rate;
  const std::size_t n = signal.samples.size();
  if (n == 0) return out;

  std::size_t size = 1;
  while (size < n + ir.samples.size() - 1) size <<= 1;
  std::vector<std::complex<double>> fa(size), fb(size);
  for (std::size_t i = 0; i < n; ++i) fa[i] = signal.samples[i];
  for (std::size_t i = 0; i < ir.samples.size(); ++i) fb[i] = ir.samples[i];
  fft(fa, false);
  fft(fb, false);
  for (std::size_t i = 0; i < size; ++i) fa[i] *= fb[i];
  fft(fa, true);

  out.samples.resize(n);
  double peak = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out.samples[i] = fa[i].real();
    peak = std::max(peak, std::abs(out.samples[i]));
  }
  if (peak > 1.0) {
    for (auto& s : out.samples) s /= peak;
  }
  return out;
}

const char* augment_policy_name(AugmentPolicy p) {
  switch (p) {
    case AugmentPolicy::reverb: return "reverb";
    case AugmentPolicy::speech: return "speech";
    case AugmentPolicy::music: return "music";
    case AugmentPolicy::noise: return "noise";
  }
  return "?";
}

AugmentPolicy parse_augment_policy(const std::string& name) {
  if (name == "reverb") return AugmentPolicy::reverb;
  if (name == "speech") return AugmentPolicy::speech;
  if (name == "music") return AugmentPolicy::music;
  if (name == "noise") return AugmentPolicy::noise;
  throw ParameterError("unknown augment policy '" + name + "' (want reverb|speech|music|noise)");
}

Waveform augment(const Waveform& signal, AugmentPolicy policy, const AssetPools& assets,
                 std::mt19937_64& rng) {
  switch (policy) {
    case AugmentPolicy::reverb: {
      if (assets.irs.empty()) throw AssetError("augment: no impulse responses loaded");
      std::uniform_int_distribution<std::size_t> pick(0, assets.irs.size() - 1);
      return convolve_ir(signal, assets.irs[pick(rng)]);
    }
    case AugmentPolicy::speech: {
      if (assets.speech.size() < 3) {
        throw AssetError("augment: speech pool has " + std::to_string(assets.speech.size()) +
                         " utterances, need at least 3");
      }
      const std::size_t hi = std::min<std::size_t>(8, assets.speech.size());
      std::uniform_int_distribution<std::size_t> count(3, hi);
      const std::size_t k = count(rng);
      std::vector<std::size_t> order(assets.speech.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::shuffle(order.begin(), order.end(), rng);

      // every interferer's SNR is measured against the clean input
      const double clean_rms = rms(signal.samples);
      if (clean_rms <= 0.0) throw EmptyAudioError("augment: silent input");
      Waveform out = signal;
      std::uniform_real_distribution<double> snr(13.0, 20.0);
      for (std::size_t i = 0; i < k; ++i) {
        const Waveform& utt = assets.speech[order[i]];
        check_rates("augment", signal, utt);
        if (utt.samples.empty()) throw DegenerateNoiseError("augment: empty speech asset");
        const std::vector<double> fitted = fit_length(utt.samples, signal.size(), rng);
        const double rn = rms(fitted);
        if (rn <= 0.0) throw DegenerateNoiseError("augment: silent speech asset");
        const double gain = clean_rms / rn * std::pow(10.0, -snr(rng) / 20.0);
        for (std::size_t j = 0; j < out.samples.size(); ++j) out.samples[j] += gain * fitted[j];
      }
      return out;
    }
    case AugmentPolicy::music: {
      if (assets.music.empty()) throw AssetError("augment: no music assets loaded");
      std::uniform_int_distribution<std::size_t> pick(0, assets.music.size() - 1);
      std::uniform_real_distribution<double> snr(5.0, 15.0);
      const std::size_t which = pick(rng);
      const double db = snr(rng);
      return mix_at_snr(signal, assets.music[which], db, rng);
    }
    case AugmentPolicy::noise: {
      if (assets.noise.empty()) throw AssetError("augment: no noise assets loaded");
      std::uniform_int_distribution<std::size_t> pick(0, assets.noise.size() - 1);
      std::uniform_real_distribution<double> snr(0.0, 15.0);
      const std::size_t which = pick(rng);
      const double db = snr(rng);
      return mix_at_snr(signal, assets.noise[which], db, rng);
    }
  }
  throw ParameterError("augment: unknown policy");
}

AssetPools load_asset_pools(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw AssetError("load_asset_pools: cannot open " + manifest.string());
  const std::filesystem::path base = manifest.parent_path();
  AssetPools pools;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw FormatError(manifest.string() + ":" + std::to_string(lineno) +
                        ": expected path<TAB>category");
    }
    const std::string rel = line.substr(0, tab);
    const std::string category = line.substr(tab + 1);
    const Waveform w = read_wav(base / rel);
    if (category == "ir") {
      pools.irs.push_back(w);
    } else if (category == "speech") {
      pools.speech.push_back(w);
    } else if (category == "music") {
      pools.music.push_back(w);
    } else if (category == "noise") {
      pools.noise.push_back(w);
    } else {
      throw FormatError(manifest.string() + ":" + std::to_string(lineno) + ": unknown category '" +
                        category + "' (want ir|speech|music|noise)");
    }
  }
  return pools;
}

}  // namespace idfe
