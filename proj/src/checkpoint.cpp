#include "shmt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include "shmt/error.hpp"

namespace shmt::checkpoint {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::pair<std::string, torch::Tensor>> named_tensors(const torch::nn::Module& module) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : module.named_parameters(true)) out.emplace_back(item.key(), item.value());
  for (const auto& item : module.named_buffers(true)) out.emplace_back(item.key(), item.value());
  return out;
}

std::vector<float> as_floats(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat32).contiguous();
  std::vector<float> values(static_cast<std::size_t>(c.numel()));
  if (!values.empty()) std::memcpy(values.data(), c.data_ptr<float>(), values.size() * sizeof(float));
  return values;
}

void to_little_endian(std::vector<float>& values) {
  if constexpr (std::endian::native != std::endian::little) {
    for (auto& v : values) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      bits = ((bits & 0xffu) << 24) | ((bits & 0xff00u) << 8) | ((bits >> 8) & 0xff00u) | (bits >> 24);
      v = std::bit_cast<float>(bits);
    }
  }
}

}  // namespace

void save_module(const torch::nn::Module& module, const fs::path& dir, const std::string& name) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::kIo, "cannot create checkpoint directory " + dir.string());

  json index = {{"dtype", "float32"}, {"byte_order", "little"}, {"tensors", json::array()}};
  const auto bin_path = dir / (name + ".bin");
  std::ofstream bin(bin_path, std::ios::binary | std::ios::trunc);
  if (!bin) fail(ErrorKind::kIo, "cannot write " + bin_path.string());
  std::uint64_t offset = 0;
  for (const auto& [key, tensor] : named_tensors(module)) {
    auto values = as_floats(tensor);
    to_little_endian(values);
    bin.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(float)));
    index["tensors"].push_back({{"name", key},
                                {"shape", tensor.sizes().vec()},
                                {"offset", offset},
                                {"count", values.size()}});
    offset += values.size() * sizeof(float);
  }
  bin.close();
  if (!bin) fail(ErrorKind::kIo, "failed writing " + bin_path.string());
  write_json_atomic(dir / (name + ".json"), index);
}

void load_module(torch::nn::Module& module, const fs::path& dir, const std::string& name) {
  const auto index_path = dir / (name + ".json");
  const auto bin_path = dir / (name + ".bin");
  const json index = read_json(index_path);
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) fail(ErrorKind::kNotFound, "missing checkpoint blob " + bin_path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  std::map<std::string, json> entries;
  for (const auto& entry : index.at("tensors")) entries[entry.at("name").get<std::string>()] = entry;

  torch::NoGradGuard no_grad;
  for (auto& [key, tensor] : named_tensors(module)) {
    auto it = entries.find(key);
    if (it == entries.end()) {
      fail(ErrorKind::kValidation, "checkpoint " + index_path.string() + " lacks tensor " + key);
    }
    const auto shape = it->second.at("shape").get<std::vector<std::int64_t>>();
    if (shape != tensor.sizes().vec()) {
      fail(ErrorKind::kValidation, "checkpoint tensor " + key + " has a different shape in " +
                                       index_path.string());
    }
    const auto offset = it->second.at("offset").get<std::uint64_t>();
    const auto count = it->second.at("count").get<std::uint64_t>();
    if (count != static_cast<std::uint64_t>(tensor.numel()) ||
        offset + count * sizeof(float) > bytes.size()) {
      fail(ErrorKind::kValidation, "checkpoint blob " + bin_path.string() + " is truncated");
    }
    std::vector<float> values(count);
    std::memcpy(values.data(), bytes.data() + offset, count * sizeof(float));
    to_little_endian(values);
    auto src = torch::from_blob(values.data(), shape, torch::kFloat32).clone();
    tensor.copy_(src.to(tensor.dtype()));
  }
}

std::uint64_t weights_hash(const torch::nn::Module& module) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [key, tensor] : named_tensors(module)) {
    feed(key.data(), key.size());
    for (auto d : tensor.sizes()) feed(&d, sizeof d);
    const auto values = as_floats(tensor);
    feed(values.data(), values.size() * sizeof(float));
  }
  return h;
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex(std::uint64_t value) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << value;
  return os.str();
}

std::uint64_t parameter_count(const torch::nn::Module& module) {
  std::uint64_t n = 0;
  for (const auto& p : module.parameters(true)) n += static_cast<std::uint64_t>(p.numel());
  return n;
}

void write_json_atomic(const fs::path& path, const json& value) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) fail(ErrorKind::kIo, "cannot write " + tmp.string());
    out << value.dump(2) << '\n';
    out.flush();
    if (!out) fail(ErrorKind::kIo, "failed writing " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::kIo, "cannot rename " + tmp.string() + ": " + ec.message());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kNotFound, "missing file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::kValidation, "malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace shmt::checkpoint
