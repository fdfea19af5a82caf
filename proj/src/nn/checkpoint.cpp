#include "btr/nn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "btr/common/error.hpp"

namespace btr::nn {

namespace {

constexpr const char* kFormat = "btr-checkpoint";
constexpr int kVersion = 1;

void put_le(std::string& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params, const nlohmann::json& meta) {
  nlohmann::json manifest;
  manifest["format"] = kFormat;
  manifest["version"] = kVersion;
  manifest["dtype"] = "float64";
  manifest["byte_order"] = "little";
  manifest["meta"] = meta;
  manifest["adam_step"] = params.step;
  auto& tensors = manifest["tensors"] = nlohmann::json::array();
  std::string payload;
  payload.reserve(params.num_parameters() * 8);
  for (const auto& [name, e] : params) {
    tensors.push_back({{"name", name},
                       {"shape", e.value.shape()},
                       {"offset", payload.size()},
                       {"trainable", e.trainable}});
    for (double v : e.value.data()) put_le(payload, v);
  }
  manifest["payload_bytes"] = payload.size();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open '" + path.string() + "' for writing");
  out << manifest.dump() << '\n';
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw CheckpointError("write to '" + path.string() + "' failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  std::string header;
  if (!std::getline(in, header)) throw CheckpointError("'" + path.string() + "': missing manifest line");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("'" + path.string() + "': manifest is not JSON (" + e.what() + ")");
  }
  if (manifest.value("format", "") != kFormat || manifest.value("version", 0) != kVersion) {
    throw CheckpointError("'" + path.string() + "': not a version-1 btr checkpoint");
  }
  const std::size_t bytes = manifest.at("payload_bytes").get<std::size_t>();
  std::string payload(bytes, '\0');
  in.read(payload.data(), static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(in.gcount()) != bytes) {
    throw CheckpointError("'" + path.string() + "': payload truncated");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError("'" + path.string() + "': trailing bytes");

  Checkpoint ck;
  ck.meta = manifest.value("meta", nlohmann::json::object());
  ck.params.step = manifest.value("adam_step", 0L);
  const auto* base = reinterpret_cast<const unsigned char*>(payload.data());
  for (const auto& t : manifest.at("tensors")) {
    Shape shape = t.at("shape").get<Shape>();
    const std::size_t offset = t.at("offset").get<std::size_t>();
    const std::size_t n = shape_size(shape);
    if (offset + 8 * n > bytes) throw CheckpointError("tensor '" + t.at("name").get<std::string>() + "' overruns payload");
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = get_le(base + offset + 8 * i);
    ck.params.add(t.at("name").get<std::string>(), Tensor(std::move(shape), std::move(data)),
                  t.value("trainable", true));
  }
  return ck;
}

}  // namespace btr::nn
