#pragma once

#include <filesystem>

#include "idfe/audio.hpp"

namespace idfe {

// 16-bit PCM mono WAV. Reading rejects other encodings with a FormatError
// naming the file and offending chunk; writing clamps samples to [-1, 1].
Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Waveform& w);

}  // namespace idfe
