#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fundus/image.hpp"
#include "fundus/random.hpp"

namespace fundus {

enum class Label : std::uint8_t { normal = 0, glaucoma = 1 };

[[nodiscard]] inline int to_int(Label l) { return static_cast<int>(l); }

/// One fundus photograph with optional ground truth.
struct FundusSample {
  std::string id;
  RgbImage image;
  std::optional<Mask> od_mask;
  std::optional<Mask> oc_mask;
  std::optional<Label> label;

  [[nodiscard]] bool has_masks() const { return od_mask.has_value() && oc_mask.has_value(); }
};

/// Gray values used for cup, disc and background in indexed mask files.
struct LabelEncoding {
  std::uint8_t cup_value = 0;
  std::uint8_t disc_value = 128;
  std::uint8_t background_value = 255;

  /// Throws ConfigError unless the three values are pairwise distinct.
  void validate() const;
};

struct FoldSplit {
  int fold_id = 0;
  std::vector<std::size_t> train;  ///< indices into the labels passed to stratified_kfold
  std::vector<std::size_t> val;
};

struct SynthParams {
  int image_size = 256;
  /// Disc vertical semi-axis as a fraction of image_size.
  double disc_radius_min = 0.06;
  double disc_radius_max = 0.09;
  double cdr_min = 0.3;
  double cdr_max = 0.85;
  double glaucoma_cdr_threshold = 0.6;
  /// Gaussian noise standard deviation in 8-bit units.
  double noise_level = 6.0;
  /// Maximum offset of the disc center from the image center, as a fraction of image_size.
  double max_center_offset = 0.25;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

/// Ground-truth generator record kept next to a synthetic sample.
struct SynthTruth {
  double center_x = 0;
  double center_y = 0;
  double disc_semi_major = 0;
  double disc_semi_minor = 0;
  double theta = 0;
  double cdr = 0;
};

struct SynthResult {
  FundusSample sample;
  SynthTruth truth;
};

struct DatasetOptions {
  LabelEncoding encoding;
  /// Require masks and labels for every image.
  bool supervised = false;
};

std::pair<Mask, Mask> decode_mask(const Plane<std::uint8_t>& indexed, const LabelEncoding& enc);
Plane<std::uint8_t> encode_mask(const Mask& od, const Mask& oc, const LabelEncoding& enc);

std::vector<FundusSample> load_dataset(const std::filesystem::path& root, const DatasetOptions& opts = {});
/// Writes samples in the images/ masks/ labels.csv layout read by load_dataset.
void save_dataset(const std::filesystem::path& root, std::span<const FundusSample> samples,
                  const LabelEncoding& enc = {});

std::vector<FoldSplit> stratified_kfold(std::span<const Label> labels, int k, std::uint64_t seed);

struct RepeatEntry {
  std::size_t index;
  int repeat_count;
};
/// Repeat counts that raise the minority class to at least target_minority_fraction of the multiset.
std::vector<RepeatEntry> oversample_plan(std::span<const Label> labels, double target_minority_fraction);

/// Draws a fundus-like image with a bright elliptical disc and brighter cup.
SynthResult synth_sample(const SynthParams& params, Rng& rng, std::string id = "synth");
/// Like synth_sample with the CDR drawn from [lo, hi].
SynthResult synth_sample_with_cdr_range(const SynthParams& params, double cdr_lo, double cdr_hi, Rng& rng,
                                        std::string id);

/// Exactly n_normal normal and n_glaucoma glaucoma samples. CDRs are drawn away from the
/// decision threshold by `margin` on each side; order is shuffled deterministically.
std::vector<SynthResult> synth_dataset(const SynthParams& params, int n_normal, int n_glaucoma, double margin = 0.05);

}  // namespace fundus
