#include "fundus/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "fundus/errors.hpp"

namespace fundus {

namespace {

constexpr char kMagic[8] = {'F', 'U', 'N', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

nlohmann::json encode_loss(double v) {
  if (std::isfinite(v)) return v;
  return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
}

double decode_loss(const nlohmann::json& j) {
  if (!j.is_string()) return j.get<double>();
  const auto s = j.get<std::string>();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  return s == "inf" ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
}

}  // namespace

Checkpoint snapshot(MultiTaskNet<float>& model) {
  Checkpoint ck;
  ck.architecture = model.config();
  for (auto* p : model.parameters()) ck.tensors.push_back({p->name, p->value});
  for (auto& [name, t] : model.buffers()) ck.tensors.push_back({name, *t});
  return ck;
}

void restore(MultiTaskNet<float>& model, const Checkpoint& ckpt) {
  if (!(model.config() == ckpt.architecture)) throw ArchitectureMismatch("checkpoint architecture differs from model");
  std::map<std::string, const nn::Tensor<float>*> by_name;
  for (const auto& t : ckpt.tensors) by_name[t.name] = &t.tensor;
  auto fetch = [&](const std::string& name, nn::Tensor<float>& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks tensor " + name);
    if (!it->second->same_shape(dst)) throw CheckpointError("shape mismatch for tensor " + name);
    dst.data = it->second->data;
  };
  for (auto* p : model.parameters()) fetch(p->name, p->value);
  for (auto& [name, t] : model.buffers()) fetch(name, *t);
}

MultiTaskNet<float> instantiate(const Checkpoint& ckpt) {
  MultiTaskNet<float> model(ckpt.architecture);
  restore(model, ckpt);
  model.set_training(false);
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header = {{"architecture", ckpt.architecture},
                           {"best_val_loss", encode_loss(ckpt.best_val_loss)},
                           {"epoch", ckpt.epoch},
                           {"train_config_digest", ckpt.train_config_digest},
                           {"fold_id", ckpt.fold_id}};
  auto& dir = header["tensors"] = nlohmann::json::array();
  for (const auto& t : ckpt.tensors)
    dir.push_back({{"name", t.name}, {"shape", {t.tensor.n, t.tensor.c, t.tensor.h, t.tensor.w}}});
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path.string());
  const std::uint64_t len = text.size();
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(len));
  for (const auto& t : ckpt.tensors)
    out.write(reinterpret_cast<const char*>(t.tensor.data.data()),
              static_cast<std::streamsize>(t.tensor.size() * sizeof(float)));
  if (!out) throw CheckpointError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw CheckpointError(path.string() + " is not a checkpoint");
  if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  if (len > (1u << 26)) throw CheckpointError("implausible header length in " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw CheckpointError("truncated header in " + path.string());

  Checkpoint ck;
  try {
    const auto header = nlohmann::json::parse(text);
    ck.architecture = header.at("architecture").get<ArchitectureConfig>();
    ck.best_val_loss = decode_loss(header.at("best_val_loss"));
    ck.epoch = header.at("epoch").get<int>();
    ck.train_config_digest = header.at("train_config_digest").get<std::string>();
    ck.fold_id = header.at("fold_id").get<int>();
    for (const auto& e : header.at("tensors")) {
      const auto s = e.at("shape").get<std::vector<int>>();
      if (s.size() != 4) throw CheckpointError("bad tensor shape in header");
      ck.tensors.push_back({e.at("name").get<std::string>(), nn::Tensor<float>(s[0], s[1], s[2], s[3])});
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("corrupt checkpoint header: " + std::string(e.what()));
  }
  for (auto& t : ck.tensors) {
    in.read(reinterpret_cast<char*>(t.tensor.data.data()), static_cast<std::streamsize>(t.tensor.size() * sizeof(float)));
    if (!in) throw CheckpointError("truncated tensor data for " + t.name);
  }
  return ck;
}

}  // namespace fundus
