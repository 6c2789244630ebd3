#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "idfe/errors.hpp"

namespace idfe {

// Mono waveform; samples are nominally in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  std::int64_t size() const { return static_cast<std::int64_t>(samples.size()); }
  double seconds() const { return static_cast<double>(size()) / sample_rate; }
};

double rms(const std::vector<double>& samples);

// Removes leading/trailing frames whose RMS level falls more than top_db
// below the loudest frame. Frames start at multiples of hop (no centering);
// a partial tail frame is measured over the samples it actually covers.
// Throws EmptyAudioError when every frame is below the threshold.
Waveform trim_edges(const Waveform& w, double top_db = 40.0, std::int64_t frame = 2048,
                    std::int64_t hop = 512);

// Fixed-length training crop: a uniformly random contiguous window when the
// input is long enough, otherwise cyclic wrapping until the target length.
// Output is always round(seconds * sample_rate) samples.
Waveform segment(const Waveform& w, double seconds, std::mt19937_64& rng);

// Adds noise at the requested signal-to-noise ratio. The noise is first
// cropped (random offset) or cyclically wrapped to the signal length, then
// scaled by (rms(signal)/rms(noise)) * 10^(-snr_db/20).
Waveform mix_at_snr(const Waveform& signal, const Waveform& noise, double snr_db,
                    std::mt19937_64& rng);

// Full linear convolution with an impulse response, truncated to the signal
// length and peak-normalized only if the result exceeds [-1, 1].
Waveform convolve_ir(const Waveform& signal, const Waveform& ir);

enum class AugmentPolicy { reverb, speech, music, noise };

const char* augment_policy_name(AugmentPolicy p);
AugmentPolicy parse_augment_policy(const std::string& name);

struct AssetPools {
  std::vector<Waveform> irs;
  std::vector<Waveform> speech;
  std::vector<Waveform> music;
  std::vector<Waveform> noise;
};

// One-of-four waveform augmentation:
//   reverb: convolve with a random impulse response
//   speech: 3-8 distinct utterances, each at its own SNR in [13, 20] dB
//   music:  one recording at [5, 15] dB
//   noise:  one recording at [0, 15] dB
// Speech/music/noise SNRs are measured against the unaugmented input.
Waveform augment(const Waveform& signal, AugmentPolicy policy, const AssetPools& assets,
                 std::mt19937_64& rng);

// Loads the asset pools named by a manifest of `path<TAB>category` lines,
// category one of ir|speech|music|noise. Paths are resolved relative to the
// manifest's directory. '#' lines are comments.
AssetPools load_asset_pools(const std::filesystem::path& manifest);

}  // namespace idfe
