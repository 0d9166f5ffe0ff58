#pragma once

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "fundus/network.hpp"

namespace fundus {

struct NamedTensor {
  std::string name;
  nn::Tensor<float> tensor;
};

/// Trained weights plus the running batch-norm statistics and training provenance.
struct Checkpoint {
  ArchitectureConfig architecture;
  std::vector<NamedTensor> tensors;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int epoch = -1;
  std::string train_config_digest;
  int fold_id = -1;
};

/// Copies every parameter and buffer of the model.
Checkpoint snapshot(MultiTaskNet<float>& model);
/// Throws ArchitectureMismatch when the configs differ, CheckpointError on missing or misshapen tensors.
void restore(MultiTaskNet<float>& model, const Checkpoint& ckpt);
MultiTaskNet<float> instantiate(const Checkpoint& ckpt);

/// Layout: "FUNDCKPT", u32 version, u64 header length, JSON header, then raw little-endian float32
/// tensor data in header order.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fundus
