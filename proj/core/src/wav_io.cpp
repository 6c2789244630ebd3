#include "idfe/wav_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace idfe {

namespace {

std::uint32_t rd_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::uint16_t rd_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

void wr_u32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8 & 0xff),
                     static_cast<char>(v >> 16 & 0xff), static_cast<char>(v >> 24 & 0xff)};
  out.write(b, 4);
}

void wr_u16(std::ofstream& out, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8 & 0xff)};
  out.write(b, 2);
}

[[noreturn]] void bad(const std::filesystem::path& path, std::size_t offset, const std::string& what) {
  throw FormatError(path.string() + ": " + what + " (byte " + std::to_string(offset) + ")");
}

}  // namespace

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw AssetError("read_wav: cannot open " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0) {
    bad(path, 0, "not a RIFF/WAVE file");
  }

  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0;
  std::uint32_t sample_rate = 0;
  Waveform w;
  bool have_data = false;

  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const char* tag = reinterpret_cast<const char*>(buf.data() + pos);
    const std::uint32_t chunk = rd_u32(buf.data() + pos + 4);
    const std::size_t body = pos + 8;
    if (body + chunk > buf.size()) bad(path, pos, "chunk overruns file");
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      if (chunk < 16) bad(path, pos, "fmt chunk too short");
      const std::uint16_t format = rd_u16(buf.data() + body);
      channels = rd_u16(buf.data() + body + 2);
      sample_rate = rd_u32(buf.data() + body + 4);
      bits = rd_u16(buf.data() + body + 14);
      if (format != 1) bad(path, body, "only PCM (format 1) supported, got format " + std::to_string(format));
      if (channels != 1) bad(path, body + 2, "only mono supported, got " + std::to_string(channels) + " channels");
      if (bits != 16) bad(path, body + 14, "only 16-bit supported, got " + std::to_string(bits));
      if (sample_rate == 0) bad(path, body + 4, "sample rate is zero");
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!have_fmt) bad(path, pos, "data chunk before fmt chunk");
      const std::size_t n = chunk / 2;
      w.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto raw = static_cast<std::int16_t>(rd_u16(buf.data() + body + 2 * i));
        w.samples[i] = static_cast<double>(raw) / 32768.0;
      }
      have_data = true;
    }
    pos = body + chunk + (chunk & 1);  // chunks are word-aligned
  }
  if (!have_fmt) bad(path, buf.size(), "missing fmt chunk");
  if (!have_data) bad(path, buf.size(), "missing data chunk");
  w.sample_rate = static_cast<int>(sample_rate);
  return w;
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  if (w.sample_rate <= 0) {
    throw ParameterError("write_wav: sample rate must be positive, got " +
                         std::to_string(w.sample_rate));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw AssetError("write_wav: cannot open " + path.string() + " for writing");
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  out.write("RIFF", 4);
  wr_u32(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  wr_u32(out, 16);
  wr_u16(out, 1);  // PCM
  wr_u16(out, 1);  // mono
  wr_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  wr_u32(out, static_cast<std::uint32_t>(w.sample_rate) * 2);  // byte rate
  wr_u16(out, 2);                                              // block align
  wr_u16(out, 16);                                             // bits per sample
  out.write("data", 4);
  wr_u32(out, data_bytes);
  for (const double s : w.samples) {
    const long q = std::clamp<long>(std::lround(s * 32768.0), -32768, 32767);
    wr_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  if (!out.flush()) throw AssetError("write_wav: write failed for " + path.string());
}

}  // namespace idfe
