#include "d3pcqa/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "d3pcqa/errors.hpp"

namespace d3pcqa {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'D', '3', 'P', 'C', 'Q', 'A', 'C', 'K'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(std::string_view bytes, std::size_t offset) {
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof(T));
  return v;
}

std::uint32_t crc(std::string_view bytes) {
  uLong c = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in bounded slices
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
    c = crc32(c, reinterpret_cast<const Bytef*>(bytes.data() + pos), static_cast<uInt>(n));
    pos += n;
  }
  return static_cast<std::uint32_t>(c);
}

}  // namespace

std::string encode_checkpoint(const CheckpointData& data) {
  nlohmann::json header;
  header["meta"] = data.meta;
  header["tensors"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : data.tensors) {
    header["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size();
  }
  const std::string header_text = header.dump();

  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, header_text.size());
  const std::size_t body_start = out.size();
  out += header_text;
  for (const auto& [name, t] : data.tensors) {
    out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
  }
  put<std::uint32_t>(out, crc(std::string_view(out).substr(body_start)));
  return out;
}

CheckpointData decode_checkpoint(std::string_view bytes) {
  constexpr std::size_t prefix = sizeof kMagic + 4 + 8;
  if (bytes.size() < prefix + 4) throw CheckpointError("checkpoint: file too short");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError("checkpoint: corrupt payload (bad magic)");
  }
  const auto version = get<std::uint32_t>(bytes, sizeof kMagic);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: version mismatch (file " + std::to_string(version) +
                          ", expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto header_len = get<std::uint64_t>(bytes, sizeof kMagic + 4);
  if (header_len > bytes.size() - prefix - 4) throw CheckpointError("checkpoint: truncated header");

  const std::string_view body = bytes.substr(prefix, bytes.size() - prefix - 4);
  const auto stored_crc = get<std::uint32_t>(bytes, bytes.size() - 4);
  if (crc(body) != stored_crc) throw CheckpointError("checkpoint: checksum mismatch");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(body.substr(0, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: corrupt header: ") + e.what());
  }
  const std::string_view payload = body.substr(header_len);

  CheckpointData data;
  data.meta = header.value("meta", nlohmann::json::object());
  try {
    for (const auto& entry : header.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<net::Shape>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const std::size_t count = net::shape_size(shape);
      if ((offset + count) * sizeof(double) > payload.size()) {
        throw CheckpointError("checkpoint: tensor '" + name + "' exceeds payload");
      }
      std::vector<double> values(count);
      std::memcpy(values.data(), payload.data() + offset * sizeof(double), count * sizeof(double));
      data.tensors.emplace(name, net::Tensor(shape, std::move(values)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: corrupt tensor table: ") + e.what());
  }
  return data;
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  const std::string bytes = encode_checkpoint(data);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

}  // namespace d3pcqa
