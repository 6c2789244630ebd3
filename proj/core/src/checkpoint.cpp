#include "idfe/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "idfe/errors.hpp"

namespace idfe {

namespace {

constexpr char kMagic[5] = {'I', 'D', 'F', 'C', '\0'};
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

}  // namespace

void save_checkpoint(const std::string& path, const std::map<std::string, TensorF>& tensors) {
  if (tensors.empty()) throw ValidationError("save_checkpoint: no tensors to write");
  std::string buf;
  buf.append(kMagic, 5);
  put_u32(buf, kVersion);
  // std::map iterates in ascending name order, which is the record order the
  // format requires.
  for (const auto& [name, t] : tensors) {
    if (name.empty()) throw ValidationError("save_checkpoint: empty tensor name");
    if (name.size() > 0xffffffffULL) {
      throw ValidationError("save_checkpoint: tensor name too long");
    }
    for (auto e : t.shape) {
      if (e < 1 || e > 0xffffffffLL) {
        throw ValidationError("save_checkpoint: tensor '" + name + "' has extent out of range in " +
                              shape_str(t.shape));
      }
    }
    put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf.append(name);
    put_u32(buf, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape) put_u32(buf, static_cast<std::uint32_t>(e));
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      put_u32(buf, std::bit_cast<std::uint32_t>(t.at(i)));
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw AssetError("save_checkpoint: cannot open " + path + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out.flush()) throw AssetError("save_checkpoint: write failed for " + path);
}

std::map<std::string, TensorF> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw AssetError("load_checkpoint: cannot open " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 5 || std::memcmp(buf.data(), kMagic, 5) != 0) {
    throw FormatError(path + ": bad magic (byte 0)");
  }
  if (buf.size() < 9) {
    throw FormatError(path + ": truncated header (byte " + std::to_string(buf.size()) + ")");
  }
  const std::uint32_t version = get_u32(buf.data() + 5);
  if (version != kVersion) {
    throw FormatError(path + ": unsupported version " + std::to_string(version) + " (byte 5)");
  }

  std::map<std::string, TensorF> out;
  std::size_t pos = 9;
  std::string prev_name;
  const auto need = [&](std::size_t bytes, const char* what) {
    if (buf.size() - pos < bytes) {
      throw FormatError(path + ": truncated " + what + " (byte " + std::to_string(buf.size()) +
                        ")");
    }
  };
  while (pos < buf.size()) {
    const std::size_t record_at = pos;
    need(4, "record header");
    const std::uint32_t name_len = get_u32(buf.data() + pos);
    pos += 4;
    if (name_len == 0) {
      throw FormatError(path + ": empty tensor name (byte " + std::to_string(record_at) + ")");
    }
    need(name_len, "tensor name");
    std::string name(reinterpret_cast<const char*>(buf.data() + pos), name_len);
    pos += name_len;
    if (!prev_name.empty() && !(prev_name < name)) {
      throw FormatError(path + ": tensor '" + name + "' out of order after '" + prev_name +
                        "' (byte " + std::to_string(record_at) + ")");
    }
    prev_name = name;

    need(4, "tensor rank");
    const std::uint32_t rank = get_u32(buf.data() + pos);
    pos += 4;
    Shape shape;
    std::uint64_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      need(4, "tensor extent");
      const std::uint32_t e = get_u32(buf.data() + pos);
      pos += 4;
      if (e == 0) {
        throw FormatError(path + ": zero extent in tensor '" + name + "' (byte " +
                          std::to_string(pos - 4) + ")");
      }
      shape.push_back(static_cast<std::int64_t>(e));
      n *= e;
    }
    need(n * 4, "tensor payload");
    TensorF t(shape);
    for (std::uint64_t i = 0; i < n; ++i) {
      t.at(static_cast<std::int64_t>(i)) = std::bit_cast<float>(get_u32(buf.data() + pos));
      pos += 4;
    }
    out.emplace(std::move(name), std::move(t));
  }
  if (out.empty()) throw FormatError(path + ": no tensor records (byte 9)");
  return out;
}

}  // namespace idfe
