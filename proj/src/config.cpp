#include "fundus/config.hpp"

#include <cstdio>
#include <fstream>

#include "fundus/errors.hpp"
#include "fundus/random.hpp"

namespace fundus {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (patience_epochs < 1) throw ConfigError("patience must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (early_stop_term != "total" && early_stop_term != "od" && early_stop_term != "cp" && early_stop_term != "cls")
    throw ConfigError("early_stop_term must be total, od, cp or cls");
  if (!(oversample_target > 0 && oversample_target <= 0.5)) throw ConfigError("oversample target must lie in (0, 0.5]");
  if (inner_val_folds < 2) throw ConfigError("inner_val_folds must be >= 2");
  loss_weights.validate();
  augment.validate();
}

std::string TrainConfig::digest() const {
  const nlohmann::json j = *this;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

namespace loss {
void to_json(nlohmann::json& j, const LossWeights& w) { j = {{"od", w.od}, {"cp", w.cp}, {"cls", w.cls}}; }
void from_json(const nlohmann::json& j, LossWeights& w) {
  const LossWeights d;
  w.od = j.value("od", d.od);
  w.cp = j.value("cp", d.cp);
  w.cls = j.value("cls", d.cls);
}
}  // namespace loss

namespace {

nlohmann::json priors_to_json(const std::array<GaussianPrior, 3>& p) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& g : p) a.push_back({{"mean", g.mean}, {"std", g.std}});
  return a;
}

std::array<GaussianPrior, 3> priors_from_json(const nlohmann::json& j, const std::array<GaussianPrior, 3>& fallback) {
  if (!j.is_array() || j.size() != 3) return fallback;
  std::array<GaussianPrior, 3> out;
  for (int i = 0; i < 3; ++i) out[i] = {j[i].value("mean", fallback[i].mean), j[i].value("std", fallback[i].std)};
  return out;
}

}  // namespace

void to_json(nlohmann::json& j, const AugmentConfig& c) {
  j = {{"max_shift", c.max_shift},
       {"max_rotation", c.max_rotation},
       {"color_mean_prior", priors_to_json(c.color_mean_prior)},
       {"color_std_prior", priors_to_json(c.color_std_prior)},
       {"pca_scale", c.pca_scale},
       {"enable_geometric", c.enable_geometric},
       {"enable_color_transfer", c.enable_color_transfer},
       {"enable_pca", c.enable_pca}};
}

void from_json(const nlohmann::json& j, AugmentConfig& c) {
  const AugmentConfig d;
  c.max_shift = j.value("max_shift", d.max_shift);
  c.max_rotation = j.value("max_rotation", d.max_rotation);
  c.color_mean_prior = priors_from_json(j.value("color_mean_prior", nlohmann::json()), d.color_mean_prior);
  c.color_std_prior = priors_from_json(j.value("color_std_prior", nlohmann::json()), d.color_std_prior);
  c.pca_scale = j.value("pca_scale", d.pca_scale);
  c.enable_geometric = j.value("enable_geometric", d.enable_geometric);
  c.enable_color_transfer = j.value("enable_color_transfer", d.enable_color_transfer);
  c.enable_pca = j.value("enable_pca", d.enable_pca);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"adam_beta1", c.adam_beta1},
       {"adam_beta2", c.adam_beta2},
       {"adam_eps", c.adam_eps},
       {"patience_epochs", c.patience_epochs},
       {"max_epochs", c.max_epochs},
       {"early_stop_term", c.early_stop_term},
       {"loss_weights", c.loss_weights},
       {"augment", c.augment},
       {"priors_from_data", c.priors_from_data},
       {"pca_max_pixels", c.pca_max_pixels},
       {"oversample_target", c.oversample_target},
       {"inner_val_folds", c.inner_val_folds},
       {"seed", c.seed},
       {"deterministic", c.deterministic}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.patience_epochs = j.value("patience_epochs", d.patience_epochs);
  c.max_epochs = j.value("max_epochs", d.max_epochs);
  c.early_stop_term = j.value("early_stop_term", d.early_stop_term);
  c.loss_weights = j.value("loss_weights", d.loss_weights);
  c.augment = j.value("augment", d.augment);
  c.priors_from_data = j.value("priors_from_data", d.priors_from_data);
  c.pca_max_pixels = j.value("pca_max_pixels", d.pca_max_pixels);
  c.oversample_target = j.value("oversample_target", d.oversample_target);
  c.inner_val_folds = j.value("inner_val_folds", d.inner_val_folds);
  c.seed = j.value("seed", d.seed);
  c.deterministic = j.value("deterministic", d.deterministic);
}

void to_json(nlohmann::json& j, const PostprocessParams& c) {
  j = {{"threshold", c.threshold},
       {"opening_radius", c.opening_radius},
       {"reference_size", c.reference_size},
       {"connectivity", c.connectivity},
       {"fit_ellipse_od", c.fit_ellipse_od},
       {"enforce_cup_in_disc", c.enforce_cup_in_disc}};
}

void from_json(const nlohmann::json& j, PostprocessParams& c) {
  const PostprocessParams d;
  c.threshold = j.value("threshold", d.threshold);
  c.opening_radius = j.value("opening_radius", d.opening_radius);
  c.reference_size = j.value("reference_size", d.reference_size);
  c.connectivity = j.value("connectivity", d.connectivity);
  c.fit_ellipse_od = j.value("fit_ellipse_od", d.fit_ellipse_od);
  c.enforce_cup_in_disc = j.value("enforce_cup_in_disc", d.enforce_cup_in_disc);
}

void to_json(nlohmann::json& j, const LocateParams& c) {
  j = {{"margin_factor", c.margin_factor},
       {"percentile", c.percentile},
       {"radius_min_fraction", c.radius_min_fraction},
       {"radius_max_fraction", c.radius_max_fraction},
       {"working_width", c.working_width},
       {"blur_sigma", c.blur_sigma},
       {"closing_fraction", c.closing_fraction},
       {"accumulator_floor", c.accumulator_floor}};
}

void from_json(const nlohmann::json& j, LocateParams& c) {
  const LocateParams d;
  c.margin_factor = j.value("margin_factor", d.margin_factor);
  c.percentile = j.value("percentile", d.percentile);
  c.radius_min_fraction = j.value("radius_min_fraction", d.radius_min_fraction);
  c.radius_max_fraction = j.value("radius_max_fraction", d.radius_max_fraction);
  c.working_width = j.value("working_width", d.working_width);
  c.blur_sigma = j.value("blur_sigma", d.blur_sigma);
  c.closing_fraction = j.value("closing_fraction", d.closing_fraction);
  c.accumulator_floor = j.value("accumulator_floor", d.accumulator_floor);
}

void to_json(nlohmann::json& j, const LabelEncoding& c) {
  j = {{"cup_value", c.cup_value}, {"disc_value", c.disc_value}, {"background_value", c.background_value}};
}

void from_json(const nlohmann::json& j, LabelEncoding& c) {
  const LabelEncoding d;
  c.cup_value = j.value("cup_value", d.cup_value);
  c.disc_value = j.value("disc_value", d.disc_value);
  c.background_value = j.value("background_value", d.background_value);
}

void to_json(nlohmann::json& j, const PipelineConfig& c) {
  j = {{"architecture", c.architecture},
       {"train", c.train},
       {"postprocess", c.postprocess},
       {"locate", c.locate},
       {"encoding", c.encoding}};
}

void from_json(const nlohmann::json& j, PipelineConfig& c) {
  const PipelineConfig d;
  c.architecture = j.value("architecture", d.architecture);
  c.train = j.value("train", d.train);
  c.postprocess = j.value("postprocess", d.postprocess);
  c.locate = j.value("locate", d.locate);
  c.encoding = j.value("encoding", d.encoding);
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return nlohmann::json::parse(in).get<PipelineConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid config " + path.string() + ": " + e.what());
  }
}

}  // namespace fundus
