#include "sdmim/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sdmim/error.hpp"

namespace sdmim {
namespace {

constexpr const char* kMagic = "SDMIM-CHECKPOINT";

struct Entry {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
  std::size_t count = 0;
};

std::string dims_str(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(s[i]);
  }
  return s.empty() ? "scalar" : out;
}

Shape parse_dims(const std::string& text) {
  Shape s;
  if (text == "scalar") return s;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) s.push_back(std::stoul(part));
  return s;
}

void write_floats(std::ostream& out, std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * 4));
  } else {
    for (float f : values) {
      auto u = std::bit_cast<std::uint32_t>(f);
      unsigned char b[4] = {static_cast<unsigned char>(u), static_cast<unsigned char>(u >> 8),
                            static_cast<unsigned char>(u >> 16), static_cast<unsigned char>(u >> 24)};
      out.write(reinterpret_cast<const char*>(b), 4);
    }
  }
}

float read_le_float(const unsigned char* p) {
  const std::uint32_t u = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                          (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(u);
}

struct RawCheckpoint {
  RunConfig config;
  std::size_t epochs_completed = 0;
  std::uint64_t optimizer_step = 0;
  std::map<std::string, std::pair<Shape, std::vector<float>>> tensors;
};

RawCheckpoint read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string where = path.string() + ": ";
  std::string line;
  auto next_line = [&]() -> std::string& {
    if (!std::getline(in, line)) throw CheckpointError(where + "truncated header");
    return line;
  };
  if (next_line() != kMagic) throw CheckpointError(where + "bad magic, not a checkpoint file");

  auto keyed = [&](const std::string& key) -> std::string {
    const std::string& l = next_line();
    if (l.rfind(key + " ", 0) != 0) throw CheckpointError(where + "expected '" + key + "' in header");
    return l.substr(key.size() + 1);
  };
  RawCheckpoint raw;
  try {
    const int version = std::stoi(keyed("version"));
    if (version != kCheckpointVersion) {
      throw CheckpointError(where + "unsupported checkpoint version " + std::to_string(version) + " (expected " +
                            std::to_string(kCheckpointVersion) + ")");
    }
    raw.epochs_completed = std::stoul(keyed("epochs_completed"));
    raw.optimizer_step = std::stoull(keyed("optimizer_step"));
    const std::size_t config_lines = std::stoul(keyed("config"));
    std::string cfg_text;
    for (std::size_t i = 0; i < config_lines; ++i) cfg_text += next_line() + "\n";
    raw.config = parse_config(cfg_text);
    const std::size_t n = std::stoul(keyed("tensors"));
    std::vector<Entry> entries(n);
    std::size_t total = 0;
    for (auto& e : entries) {
      std::stringstream ss(next_line());
      std::string dims;
      if (!(ss >> e.name >> dims >> e.offset >> e.count)) throw CheckpointError(where + "malformed tensor entry");
      e.shape = parse_dims(dims);
      if (numel(e.shape) != e.count) throw CheckpointError(where + "tensor '" + e.name + "' count disagrees with shape");
      total = std::max(total, e.offset + e.count);
    }
    if (next_line() != "end") throw CheckpointError(where + "missing end of header");
    std::vector<unsigned char> bytes(total * 4);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<std::size_t>(in.gcount()) != bytes.size()) throw CheckpointError(where + "truncated tensor data");
    for (const auto& e : entries) {
      std::vector<float> values(e.count);
      for (std::size_t i = 0; i < e.count; ++i) values[i] = read_le_float(bytes.data() + (e.offset + i) * 4);
      raw.tensors[e.name] = {e.shape, std::move(values)};
    }
  } catch (const ConfigError& e) {
    throw CheckpointError(where + "stored config is invalid: " + e.what());
  } catch (const std::logic_error&) {
    throw CheckpointError(where + "malformed header");
  }
  return raw;
}

const std::pair<Shape, std::vector<float>>& find_tensor(const RawCheckpoint& raw, const std::string& name,
                                                        const Shape& expected) {
  auto it = raw.tensors.find(name);
  if (it == raw.tensors.end()) throw CheckpointError("checkpoint is missing tensor '" + name + "'");
  if (it->second.first != expected) {
    throw CheckpointError("shape mismatch for tensor '" + name + "': checkpoint " + shape_str(it->second.first) +
                          " vs model " + shape_str(expected));
  }
  return it->second;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, ModelParams<float>& params,
                     const OptimizerState<float>& optimizer, const RunConfig& config,
                     std::size_t epochs_completed) {
  auto named = params.named();
  if (optimizer.m.size() != named.size() || optimizer.v.size() != named.size()) {
    throw ContractError("save_checkpoint: optimizer state does not match the parameter list");
  }
  std::vector<Entry> entries;
  std::vector<std::span<const float>> blobs;
  std::size_t offset = 0;
  auto push = [&](const std::string& name, const Shape& shape, std::span<const float> data) {
    entries.push_back({name, shape, offset, data.size()});
    blobs.push_back(data);
    offset += data.size();
  };
  for (const auto& p : named) push("param/" + p.name, p.tensor.shape(), p.tensor.data());
  for (std::size_t i = 0; i < named.size(); ++i) push("adam_m/" + named[i].name, named[i].tensor.shape(), optimizer.m[i]);
  for (std::size_t i = 0; i < named.size(); ++i) push("adam_v/" + named[i].name, named[i].tensor.shape(), optimizer.v[i]);

  const std::string echo = config_echo(config);
  std::size_t config_lines = 0;
  for (char c : echo) config_lines += c == '\n';

  std::ostringstream header;
  header << kMagic << "\n"
         << "version " << kCheckpointVersion << "\n"
         << "epochs_completed " << epochs_completed << "\n"
         << "optimizer_step " << optimizer.step << "\n"
         << "config " << config_lines << "\n"
         << echo << "tensors " << entries.size() << "\n";
  for (const auto& e : entries) header << e.name << " " << dims_str(e.shape) << " " << e.offset << " " << e.count << "\n";
  header << "end\n";

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  const std::string h = header.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (auto b : blobs) write_floats(out, b);
  out.flush();
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto raw = read_raw(path);
  Checkpoint ckpt;
  ckpt.config = raw.config;
  ckpt.epochs_completed = raw.epochs_completed;
  ckpt.params = zero_model<float>(model_config(raw.config));
  auto named = ckpt.params.named();
  ckpt.optimizer.hyper = {raw.config.beta1, raw.config.beta2, raw.config.adam_eps, raw.config.weight_decay};
  ckpt.optimizer.step = raw.optimizer_step;
  for (auto& p : named) {
    const auto& param = find_tensor(raw, "param/" + p.name, p.tensor.shape());
    std::copy(param.second.begin(), param.second.end(), p.tensor.data().begin());
    ckpt.optimizer.m.push_back(find_tensor(raw, "adam_m/" + p.name, p.tensor.shape()).second);
    ckpt.optimizer.v.push_back(find_tensor(raw, "adam_v/" + p.name, p.tensor.shape()).second);
  }
  return ckpt;
}

void load_params_into(const Checkpoint& ckpt, ModelParams<float>& params) {
  auto src = ckpt.params.named();
  std::map<std::string, Tensor<float>> by_name;
  for (auto& p : src) by_name.emplace(p.name, p.tensor);
  for (auto& p : params.named()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw CheckpointError("checkpoint is missing tensor '" + p.name + "'");
    if (it->second.shape() != p.tensor.shape()) {
      throw CheckpointError("shape mismatch for tensor '" + p.name + "': checkpoint " +
                            shape_str(it->second.shape()) + " vs model " + shape_str(p.tensor.shape()));
    }
  }
  if (by_name.size() != params.named().size()) {
    throw CheckpointError("checkpoint has " + std::to_string(by_name.size()) + " tensors, model expects " +
                          std::to_string(params.named().size()));
  }
  for (auto& p : params.named()) {
    auto d = by_name.at(p.name).data();
    std::copy(d.begin(), d.end(), p.tensor.data().begin());
  }
}

}  // namespace sdmim
