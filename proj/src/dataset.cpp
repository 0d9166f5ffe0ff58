#include "fundus/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "fundus/ellipse.hpp"
#include "fundus/errors.hpp"
#include "fundus/image_io.hpp"

namespace fs = std::filesystem;

namespace fundus {

void LabelEncoding::validate() const {
  if (cup_value == disc_value || cup_value == background_value || disc_value == background_value)
    throw ConfigError("label encoding values must be pairwise distinct");
}

void SynthParams::validate() const {
  if (image_size < 16) throw ConfigError("synthetic image_size must be >= 16");
  if (!(cdr_min > 0 && cdr_max < 1 && cdr_min <= cdr_max)) throw ConfigError("cdr range must lie inside (0,1)");
  if (!(disc_radius_min > 0 && disc_radius_min <= disc_radius_max))
    throw ConfigError("disc radius range must be positive and ordered");
  if (disc_radius_max + max_center_offset >= 0.5) throw ConfigError("disc does not fit inside the image");
  if (noise_level < 0) throw ConfigError("noise_level must be >= 0");
}

std::pair<Mask, Mask> decode_mask(const Plane<std::uint8_t>& indexed, const LabelEncoding& enc) {
  enc.validate();
  Mask od(indexed.height, indexed.width, 0), oc(indexed.height, indexed.width, 0);
  for (std::size_t i = 0; i < indexed.size(); ++i) {
    const auto v = indexed.data[i];
    if (v == enc.cup_value) {
      od.data[i] = 1;
      oc.data[i] = 1;
    } else if (v == enc.disc_value) {
      od.data[i] = 1;
    } else if (v != enc.background_value) {
      throw UnknownLabelValue("mask value " + std::to_string(v) + " matches no label");
    }
  }
  return {std::move(od), std::move(oc)};
}

Plane<std::uint8_t> encode_mask(const Mask& od, const Mask& oc, const LabelEncoding& enc) {
  enc.validate();
  if (!od.same_shape(oc)) throw ShapeMismatch("disc and cup masks differ in shape");
  Plane<std::uint8_t> out(od.height, od.width, enc.background_value);
  for (std::size_t i = 0; i < od.size(); ++i) {
    if (oc.data[i]) {
      if (!od.data[i]) throw CupOutsideDisc("cup pixel outside disc");
      out.data[i] = enc.cup_value;
    } else if (od.data[i]) {
      out.data[i] = enc.disc_value;
    }
  }
  return out;
}

namespace {

std::string lower(std::string s) {
  std::ranges::transform(s, s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

bool is_image_file(const fs::path& p) {
  const auto ext = lower(p.extension().string());
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::map<std::string, Label> read_labels(const fs::path& csv) {
  std::map<std::string, Label> out;
  std::ifstream in(csv);
  if (!in) return out;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (lower(line).starts_with("id")) continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw Error("malformed labels.csv line: " + line);
    const auto id = trim(line.substr(0, comma));
    const auto value = trim(line.substr(comma + 1));
    if (value != "0" && value != "1") throw Error("label must be 0 or 1 in labels.csv line: " + line);
    out[id] = value == "1" ? Label::glaucoma : Label::normal;
  }
  return out;
}

}  // namespace

std::vector<FundusSample> load_dataset(const fs::path& root, const DatasetOptions& opts) {
  std::vector<FundusSample> samples;
  const auto image_dir = root / "images";
  if (!fs::is_directory(image_dir)) return samples;

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(image_dir))
    if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
  std::ranges::sort(files, [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });

  const auto labels = read_labels(root / "labels.csv");
  for (const auto& file : files) {
    FundusSample s;
    s.id = file.stem().string();
    s.image = io::read_rgb(file);
    const auto mask_path = root / "masks" / (s.id + ".png");
    if (fs::exists(mask_path)) {
      auto [od, oc] = decode_mask(io::read_gray8(mask_path), opts.encoding);
      if (od.height != s.image.height || od.width != s.image.width)
        throw ShapeMismatch("mask size differs from image for " + s.id);
      s.od_mask = std::move(od);
      s.oc_mask = std::move(oc);
    } else if (opts.supervised) {
      throw MissingMask("no mask for " + s.id);
    }
    if (auto it = labels.find(s.id); it != labels.end()) {
      s.label = it->second;
    } else if (opts.supervised) {
      throw MissingLabel("no label for " + s.id);
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

void save_dataset(const fs::path& root, std::span<const FundusSample> samples, const LabelEncoding& enc) {
  fs::create_directories(root / "images");
  bool any_label = false;
  for (const auto& s : samples) {
    io::write_rgb(root / "images" / (s.id + ".png"), s.image);
    if (s.has_masks()) io::write_gray8(root / "masks" / (s.id + ".png"), encode_mask(*s.od_mask, *s.oc_mask, enc));
    any_label = any_label || s.label.has_value();
  }
  if (any_label) {
    std::ofstream out(root / "labels.csv");
    out << "id,label\n";
    for (const auto& s : samples)
      if (s.label) out << s.id << ',' << to_int(*s.label) << '\n';
  }
}

std::vector<FoldSplit> stratified_kfold(std::span<const Label> labels, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("k must be >= 2");
  std::array<std::vector<std::size_t>, 2> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[to_int(labels[i])].push_back(i);
  for (const auto& members : by_class)
    if (!members.empty() && members.size() < static_cast<std::size_t>(k))
      throw TooFewSamples("a class has fewer members than folds");

  std::vector<int> fold_of(labels.size(), 0);
  Rng rng(seed);
  // Dealing continues across classes so fold sizes stay within one of each other.
  std::size_t next = 0;
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    for (auto idx : members) fold_of[idx] = static_cast<int>(next++ % k);
  }

  std::vector<FoldSplit> folds(k);
  for (int f = 0; f < k; ++f) folds[f].fold_id = f;
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (int f = 0; f < k; ++f) (fold_of[i] == f ? folds[f].val : folds[f].train).push_back(i);
  return folds;
}

std::vector<RepeatEntry> oversample_plan(std::span<const Label> labels, double target_minority_fraction) {
  if (!(target_minority_fraction > 0 && target_minority_fraction <= 0.5))
    throw ConfigError("target minority fraction must lie in (0, 0.5]");
  std::size_t n_glaucoma = 0;
  for (auto l : labels) n_glaucoma += l == Label::glaucoma;
  const std::size_t n_normal = labels.size() - n_glaucoma;
  if (n_glaucoma == 0 || n_normal == 0) throw SingleClass("oversampling needs both classes");

  std::vector<RepeatEntry> plan;
  plan.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) plan.push_back({i, 1});
  if (n_glaucoma == n_normal) return plan;

  const Label minority = n_glaucoma < n_normal ? Label::glaucoma : Label::normal;
  const double n_min = static_cast<double>(std::min(n_glaucoma, n_normal));
  const double n_maj = static_cast<double>(std::max(n_glaucoma, n_normal));
  const double t = target_minority_fraction;
  // Smallest minority total M with M / (M + n_maj) >= t.
  auto needed = static_cast<std::size_t>(std::ceil(t * n_maj / (1.0 - t) - 1e-9));
  needed = std::max(needed, static_cast<std::size_t>(n_min));
  const std::size_t base = needed / static_cast<std::size_t>(n_min);
  std::size_t extra = needed % static_cast<std::size_t>(n_min);
  for (auto& e : plan) {
    if (labels[e.index] != minority) continue;
    e.repeat_count = static_cast<int>(base + (extra > 0 ? 1 : 0));
    if (extra > 0) --extra;
  }
  return plan;
}

namespace {

double smoothstep_inside(double implicit_value, double semi_axis, double edge_px) {
  // Signed distance approximated through the implicit radius.
  const double rho = std::sqrt(std::max(implicit_value, 0.0));
  const double dist = (1.0 - rho) * semi_axis;
  return 1.0 / (1.0 + std::exp(-dist / edge_px));
}

struct Vessel {
  double angle;
  double curvature;
  double phase;
  double width;
};

}  // namespace

SynthResult synth_sample_with_cdr_range(const SynthParams& params, double cdr_lo, double cdr_hi, Rng& rng,
                                        std::string id) {
  params.validate();
  const int n = params.image_size;
  const double size = n;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  SynthTruth truth;
  truth.cdr = uniform(cdr_lo, cdr_hi);
  const double vertical = uniform(params.disc_radius_min, params.disc_radius_max) * size;
  const double horizontal = vertical * uniform(0.85, 1.0);
  const double rot = uniform(-0.2, 0.2);
  truth.center_x = size / 2 + uniform(-params.max_center_offset, params.max_center_offset) * size;
  truth.center_y = size / 2 + uniform(-params.max_center_offset, params.max_center_offset) * size;
  const Ellipse disc = Ellipse{truth.center_x, truth.center_y, horizontal, vertical, rot}.normalized();
  const Ellipse cup{disc.cx, disc.cy, disc.a * truth.cdr, disc.b * truth.cdr, disc.theta};
  truth.disc_semi_major = disc.a;
  truth.disc_semi_minor = disc.b;
  truth.theta = disc.theta;

  const std::array<double, 3> bg{uniform(150, 185), uniform(60, 95), uniform(25, 50)};
  const std::array<double, 3> disc_rgb{uniform(220, 240), uniform(150, 185), uniform(90, 125)};
  const std::array<double, 3> cup_rgb{uniform(246, 255), uniform(210, 235), uniform(160, 195)};
  const double field_radius = 0.47 * size;
  const double gradient_angle = uniform(0, 2 * std::numbers::pi);
  const double edge_px = std::max(0.8, 0.006 * size);

  std::vector<Vessel> vessels(4 + static_cast<int>(unit(rng) * 3));
  for (auto& v : vessels)
    v = {uniform(0, 2 * std::numbers::pi), uniform(-0.6, 0.6), uniform(0, 6.28), uniform(0.004, 0.008) * size};

  std::normal_distribution<double> noise(0.0, params.noise_level);
  FundusSample s;
  s.id = std::move(id);
  s.image = RgbImage(n, n);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const double dx = c - size / 2, dy = r - size / 2;
      const double field_dist = std::sqrt(dx * dx + dy * dy);
      const double field_w = 1.0 / (1.0 + std::exp((field_dist - field_radius) / 1.5));
      const double vignette = 1.0 - 0.25 * (field_dist / field_radius) * (field_dist / field_radius);
      const double shade = 1.0 + 0.08 * (dx * std::cos(gradient_angle) + dy * std::sin(gradient_angle)) / size;
      const double wd = smoothstep_inside(disc.implicit_value(c, r), disc.b, edge_px);
      const double wc = smoothstep_inside(cup.implicit_value(c, r), cup.b, edge_px * 1.5);

      // Vessels radiate from the disc center with a gentle bend.
      double vessel = 0.0;
      const double vx = c - disc.cx, vy = r - disc.cy;
      const double rad = std::sqrt(vx * vx + vy * vy);
      if (rad > 0.3 * disc.b) {
        const double ang = std::atan2(vy, vx);
        for (const auto& v : vessels) {
          const double target = v.angle + v.curvature * std::sin(rad / size * 6.0 + v.phase);
          double d_ang = std::remainder(ang - target, 2 * std::numbers::pi);
          const double dist = std::abs(d_ang) * rad;
          vessel = std::max(vessel, std::exp(-(dist * dist) / (v.width * v.width)));
        }
      }

      for (int ch = 0; ch < 3; ++ch) {
        double v = bg[ch] * vignette * shade;
        v = v * (1 - wd) + disc_rgb[ch] * wd;
        v = v * (1 - wc) + cup_rgb[ch] * wc;
        v *= 1.0 - vessel * (ch == 0 ? 0.25 : 0.45);
        v = v * field_w + 4.0 * (1 - field_w);
        v += noise(rng);
        s.image(r, c, ch) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }

  Mask od = rasterize_ellipse(disc, n, n);
  Mask oc = rasterize_ellipse(cup, n, n);
  for (std::size_t i = 0; i < oc.size(); ++i) oc.data[i] &= od.data[i];
  s.od_mask = std::move(od);
  s.oc_mask = std::move(oc);
  s.label = truth.cdr > params.glaucoma_cdr_threshold ? Label::glaucoma : Label::normal;
  return {std::move(s), truth};
}

SynthResult synth_sample(const SynthParams& params, Rng& rng, std::string id) {
  return synth_sample_with_cdr_range(params, params.cdr_min, params.cdr_max, rng, std::move(id));
}

std::vector<SynthResult> synth_dataset(const SynthParams& params, int n_normal, int n_glaucoma, double margin) {
  params.validate();
  const double thr = params.glaucoma_cdr_threshold;
  if (thr - margin <= params.cdr_min || thr + margin >= params.cdr_max)
    throw ConfigError("cdr range cannot accommodate the class margin");
  std::vector<Label> labels(n_normal, Label::normal);
  labels.insert(labels.end(), n_glaucoma, Label::glaucoma);
  Rng order_rng(derive_seed({params.rng_seed, 0xda7a}));
  std::shuffle(labels.begin(), labels.end(), order_rng);

  std::vector<SynthResult> out;
  out.reserve(labels.size());
  const int width = static_cast<int>(std::to_string(labels.size()).size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    Rng rng(derive_seed({params.rng_seed, i}));
    std::string index = std::to_string(i);
    std::string id = "synth_" + std::string(std::max(0, width - static_cast<int>(index.size())), '0') + index;
    if (labels[i] == Label::glaucoma)
      out.push_back(synth_sample_with_cdr_range(params, thr + margin, params.cdr_max, rng, std::move(id)));
    else
      out.push_back(synth_sample_with_cdr_range(params, params.cdr_min, thr - margin, rng, std::move(id)));
  }
  return out;
}

}  // namespace fundus
