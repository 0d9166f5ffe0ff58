#include "fundus/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "fundus/random.hpp"

namespace fundus {

// --- TrainLog ---------------------------------------------------------------

std::string TrainLog::to_csv() const {
  std::ostringstream out;
  out << "epoch,l_od,l_cp,l_cls,total,val_total\n";
  char buf[256];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", e.epoch, e.train.l_od, e.train.l_cp,
                  e.train.l_cls, e.train.total, e.val.total);
    out << buf;
  }
  return out.str();
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << to_csv();
}

// --- EarlyStopping ----------------------------------------------------------

EarlyStopping::EarlyStopping(int patience) : patience_(patience), best_(std::numeric_limits<double>::infinity()) {
  if (patience < 1) throw ConfigError("patience must be >= 1");
}

bool EarlyStopping::update(double value) {
  const int index = seen_++;
  if (value < best_) {
    best_ = value;
    best_index_ = index;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

// --- Adam -------------------------------------------------------------------

Adam::Adam(std::vector<nn::Param<float>*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
  for (auto* p : params_) {
    m_.emplace_back(p->value.size(), 0.0);
    v_.emplace_back(p->value.size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& value = params_[k]->value.data;
    const auto& grad = params_[k]->grad.data;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      m[i] = b1_ * m[i] + (1 - b1_) * g;
      v[i] = b2_ * v[i] + (1 - b2_) * g * g;
      value[i] = static_cast<float>(value[i] - lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_));
    }
  }
}

// --- tensors ----------------------------------------------------------------

nn::Tensor<float> to_input_tensor(std::span<const RgbImage> images) {
  if (images.empty()) throw ShapeError("no images");
  const int h = images.front().height, w = images.front().width;
  nn::Tensor<float> t(static_cast<int>(images.size()), 3, h, w);
  for (int i = 0; i < t.n; ++i) {
    const auto& img = images[i];
    if (img.height != h || img.width != w) throw ShapeError("images in a batch must share one size");
    for (int ch = 0; ch < 3; ++ch) {
      float* dst = t.channel(i, ch);
      for (std::size_t p = 0; p < t.plane_size(); ++p) dst[p] = img.data[p * 3 + ch] / 255.0f;
    }
  }
  return t;
}

namespace {

void require_ground_truth(std::span<const FundusSample> samples, const char* what) {
  for (const auto& s : samples)
    if (!s.has_masks() || !s.label)
      throw MissingGroundTruth(std::string(what) + " sample " + s.id + " lacks masks or label");
}

void require_side(std::span<const FundusSample> samples, int side) {
  for (const auto& s : samples)
    if (s.image.height != side || s.image.width != side)
      throw ShapeError("sample " + s.id + " is " + std::to_string(s.image.height) + "x" +
                       std::to_string(s.image.width) + ", network expects " + std::to_string(side));
}

nn::Tensor<float> mask_tensor(const std::vector<const Mask*>& masks) {
  const int h = masks.front()->height, w = masks.front()->width;
  nn::Tensor<float> t(static_cast<int>(masks.size()), 1, h, w);
  for (int i = 0; i < t.n; ++i) {
    float* dst = t.sample(i);
    const auto& src = masks[i]->data;
    for (std::size_t p = 0; p < src.size(); ++p) dst[p] = src[p] ? 1.0f : 0.0f;
  }
  return t;
}

/// Input and ground-truth tensors for a list of samples with full ground truth.
std::pair<nn::Tensor<float>, loss::GroundTruth<float>> make_batch(const std::vector<const FundusSample*>& batch) {
  std::vector<RgbImage> images;
  std::vector<const Mask*> od, oc;
  loss::GroundTruth<float> gt;
  images.reserve(batch.size());
  for (const auto* s : batch) {
    images.push_back(s->image);
    od.push_back(&*s->od_mask);
    oc.push_back(&*s->oc_mask);
    gt.labels.push_back(to_int(*s->label));
  }
  gt.od = mask_tensor(od);
  gt.oc = mask_tensor(oc);
  return {to_input_tensor(images), std::move(gt)};
}

void accumulate(loss::LossBreakdown& acc, const loss::LossBreakdown& l, double weight) {
  acc.l_od += weight * l.l_od;
  acc.l_cp += weight * l.l_cp;
  acc.l_cls += weight * l.l_cls;
  acc.total += weight * l.total;
}

void scale(loss::LossBreakdown& acc, double factor) {
  acc.l_od *= factor;
  acc.l_cp *= factor;
  acc.l_cls *= factor;
  acc.total *= factor;
}

bool finite(const loss::LossBreakdown& l) {
  return std::isfinite(l.l_od) && std::isfinite(l.l_cp) && std::isfinite(l.l_cls) && std::isfinite(l.total);
}

double monitored(const loss::LossBreakdown& l, const std::string& term) {
  if (term == "od") return l.l_od;
  if (term == "cp") return l.l_cp;
  if (term == "cls") return l.l_cls;
  return l.total;
}

}  // namespace

loss::LossBreakdown evaluate_loss(MultiTaskNet<float>& model, std::span<const FundusSample> samples,
                                  const loss::LossWeights& weights, int batch_size) {
  require_ground_truth(samples, "validation");
  const bool was_training = model.training();
  model.set_training(false);
  loss::LossBreakdown acc;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const FundusSample*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&samples[i]);
    auto [x, gt] = make_batch(batch);
    const auto out = model.forward(x);
    accumulate(acc, loss::total_loss(out, gt, weights), static_cast<double>(end - start));
  }
  scale(acc, 1.0 / static_cast<double>(samples.size()));
  model.set_training(was_training);
  return acc;
}

// --- train ------------------------------------------------------------------

TrainResult train(std::span<const FundusSample> train_samples, std::span<const FundusSample> val_samples,
                  const ArchitectureConfig& arch, const TrainConfig& cfg, int fold_id, const EpochCallback& on_epoch) {
  cfg.validate();
  arch.validate();
  if (train_samples.empty() || val_samples.empty()) throw TooFewSamples("training needs nonempty train and validation sets");
  require_ground_truth(train_samples, "training");
  require_ground_truth(val_samples, "validation");
  require_side(train_samples, arch.input_side);
  require_side(val_samples, arch.input_side);

  const std::uint64_t seed = cfg.seed;
  MultiTaskNet<float> model(arch, derive_seed({seed, 1}));

  std::vector<RgbImage> images;
  std::vector<Label> labels;
  for (const auto& s : train_samples) {
    images.push_back(s.image);
    labels.push_back(*s.label);
  }
  AugmentConfig aug = cfg.augment;
  aug.max_shift *= arch.input_side / 400.0;
  if (cfg.priors_from_data) set_priors_from_data(aug, images);
  PcaBasis basis;
  if (aug.enable_pca) {
    Rng rng(derive_seed({seed, 2}));
    basis = fit_pca_basis(sample_pixels(images, cfg.pca_max_pixels, rng));
  }
  images.clear();

  std::vector<RepeatEntry> plan;
  const bool both = std::count(labels.begin(), labels.end(), Label::glaucoma) > 0 &&
                    std::count(labels.begin(), labels.end(), Label::normal) > 0;
  if (both) {
    plan = oversample_plan(labels, cfg.oversample_target);
  } else {
    for (std::size_t i = 0; i < labels.size(); ++i) plan.push_back({i, 1});
  }
  std::vector<std::pair<std::size_t, int>> multiset;
  for (const auto& e : plan)
    for (int r = 0; r < e.repeat_count; ++r) multiset.emplace_back(e.index, r);

  Adam adam(model.parameters(), cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  EarlyStopping stopper(cfg.patience_epochs);
  TrainResult result;
  bool have_best = false;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    auto order = multiset;
    Rng shuffle_rng(derive_seed({seed, 3, static_cast<std::uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    model.set_training(true);
    loss::LossBreakdown epoch_loss;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<FundusSample> augmented;
      augmented.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const auto [index, rep] = order[i];
        Rng rng(derive_seed({seed, 4, static_cast<std::uint64_t>(epoch), index, static_cast<std::uint64_t>(rep)}));
        augmented.push_back(augment_sample(train_samples[index], aug, basis, rng));
      }
      std::vector<const FundusSample*> batch;
      for (const auto& s : augmented) batch.push_back(&s);
      auto [x, gt] = make_batch(batch);

      model.zero_grad();
      const auto out = model.forward(x);
      OutputGrads<float> grads;
      const auto l = loss::total_loss(out, gt, cfg.loss_weights, &grads);
      if (!finite(l))
        throw DivergedLoss("non-finite training loss at epoch " + std::to_string(epoch), result.log);
      model.backward(grads);
      adam.step();
      accumulate(epoch_loss, l, static_cast<double>(end - start));
    }
    scale(epoch_loss, 1.0 / static_cast<double>(order.size()));

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train = epoch_loss;
    rec.val = evaluate_loss(model, val_samples, cfg.loss_weights, cfg.batch_size);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.epochs.push_back(rec);
    if (!finite(rec.val))
      throw DivergedLoss("non-finite validation loss at epoch " + std::to_string(epoch), result.log);
    if (on_epoch) on_epoch(rec);

    const double watched = monitored(rec.val, cfg.early_stop_term);
    if (stopper.update(watched)) {
      result.checkpoint = snapshot(model);
      result.checkpoint.epoch = epoch;
      result.checkpoint.best_val_loss = watched;
      have_best = true;
    }
    if (stopper.should_stop()) break;
  }
  if (!have_best) throw DivergedLoss("validation loss never improved", result.log);
  result.checkpoint.fold_id = fold_id;
  result.checkpoint.train_config_digest = cfg.digest();
  return result;
}

// --- ROI preparation ----------------------------------------------------------

RoiSample prepare_roi(const FundusSample& sample, const LocateParams& locate, int out_size) {
  RoiSample out;
  RoiBox box;
  try {
    box = locate_disc(sample.image, locate);
  } catch (const NoDiscFound&) {
    if (!sample.od_mask || count_ones(*sample.od_mask) == 0) throw;
    const auto& m = *sample.od_mask;
    int r0 = m.height, r1 = -1, c0 = m.width, c1 = -1;
    for (int r = 0; r < m.height; ++r)
      for (int c = 0; c < m.width; ++c)
        if (m(r, c)) {
          r0 = std::min(r0, r);
          r1 = std::max(r1, r);
          c0 = std::min(c0, c);
          c1 = std::max(c1, c);
        }
    box.center_x = (c0 + c1 + 1) / 2.0;
    box.center_y = (r0 + r1 + 1) / 2.0;
    box.side = locate.margin_factor * std::max(r1 - r0 + 1, c1 - c0 + 1);
    out.used_fallback = true;
  }
  out.crop = crop_roi(sample.image, box, out_size);
  out.roi.id = sample.id;
  out.roi.image = out.crop.image;
  out.roi.label = sample.label;
  if (sample.od_mask) out.roi.od_mask = crop_mask(*sample.od_mask, box, out_size);
  if (sample.oc_mask) out.roi.oc_mask = crop_mask(*sample.oc_mask, box, out_size);
  return out;
}

// --- ensemble -----------------------------------------------------------------

namespace {

void add_to(nn::Tensor<double>& acc, const nn::Tensor<float>& x) {
  if (acc.size() == 0) acc = nn::Tensor<double>(x.n, x.c, x.h, x.w);
  for (std::size_t i = 0; i < x.size(); ++i) acc.data[i] += static_cast<double>(x.data[i]);
}

EnsembleOutputs average(std::span<MultiTaskNet<float>* const> models, const nn::Tensor<float>& input) {
  if (models.empty()) throw ConfigError("ensemble needs at least one model");
  for (const auto* m : models)
    if (!(m->config() == models.front()->config())) throw ArchitectureMismatch("ensemble members differ in architecture");
  EnsembleOutputs acc;
  for (auto* m : models) {
    m->set_training(false);
    const auto out = m->forward(input);
    add_to(acc.od, out.od);
    add_to(acc.oc, out.oc);
    if (acc.p.empty()) acc.p.assign(out.p.size(), 0.0);
    for (std::size_t i = 0; i < out.p.size(); ++i) acc.p[i] += static_cast<double>(out.p[i]);
  }
  const double k = static_cast<double>(models.size());
  for (auto& v : acc.od.data) v /= k;
  for (auto& v : acc.oc.data) v /= k;
  for (auto& v : acc.p) v /= k;
  return acc;
}

}  // namespace

EnsembleOutputs ensemble_predict(std::span<MultiTaskNet<float>* const> models, const nn::Tensor<float>& input) {
  return average(models, input);
}

EnsembleOutputs ensemble_predict(std::span<const Checkpoint> checkpoints, const nn::Tensor<float>& input) {
  Ensemble e(checkpoints);
  return e.predict(input);
}

Ensemble::Ensemble(std::span<const Checkpoint> checkpoints) {
  if (checkpoints.empty()) throw ConfigError("ensemble needs at least one checkpoint");
  for (const auto& c : checkpoints)
    if (!(c.architecture == checkpoints.front().architecture))
      throw ArchitectureMismatch("ensemble checkpoints differ in architecture");
  models_.reserve(checkpoints.size());
  for (const auto& c : checkpoints) models_.push_back(instantiate(c));
}

EnsembleOutputs Ensemble::predict(const nn::Tensor<float>& input) {
  std::vector<MultiTaskNet<float>*> ptrs;
  for (auto& m : models_) ptrs.push_back(&m);
  return average(ptrs, input);
}

SoftMap soft_map(const nn::Tensor<double>& t, int index) {
  SoftMap m(t.h, t.w);
  const double* src = t.channel(index, 0);
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = static_cast<float>(src[i]);
  return m;
}

// --- inference ----------------------------------------------------------------

InferenceResult infer_end_to_end(const RgbImage& image, Ensemble& ensemble, const PostprocessParams& post,
                                 const LocateParams& locate) {
  InferenceResult r;
  r.box = locate_disc(image, locate);
  const auto crop = crop_roi(image, r.box, ensemble.architecture().input_side);
  const auto out = ensemble.predict(to_input_tensor(std::span(&crop.image, 1)));
  r.p_glaucoma = out.p.front();
  r.od_soft = soft_map(out.od, 0);
  r.oc_soft = soft_map(out.oc, 0);
  auto pp = postprocess_pair(r.od_soft, r.oc_soft, post);
  r.warnings = std::move(pp.warnings);
  r.od_roi = std::move(pp.od);
  r.oc_roi = std::move(pp.oc);
  r.od_full = map_mask_back(r.od_roi, crop, image.height, image.width);
  r.oc_full = map_mask_back(r.oc_roi, crop, image.height, image.width);
  try {
    r.cdr = vertical_cdr(r.od_full, r.oc_full);
  } catch (const EmptyDisc&) {
    r.cdr = 0;
    r.warnings.push_back("empty disc after post-processing; cdr set to 0");
  }
  return r;
}

// --- cross-validation -----------------------------------------------------------

std::optional<FoldSplit> inner_validation_split(std::span<const Label> labels, int k, std::uint64_t seed) {
  std::size_t smallest = labels.size();
  for (auto l : {Label::normal, Label::glaucoma}) {
    const auto n = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), l));
    if (n > 0) smallest = std::min(smallest, n);
  }
  const int inner_k = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(std::max(k, 0)), smallest));
  if (inner_k < 2) return std::nullopt;
  return stratified_kfold(labels, inner_k, seed).front();
}

std::vector<FoldResult> cross_validate(std::span<const FundusSample> dataset, int k, const PipelineConfig& cfg,
                                       const EpochCallback& on_epoch) {
  cfg.train.validate();
  cfg.architecture.validate();
  cfg.postprocess.validate();
  require_ground_truth(dataset, "cross-validation");
  const int side = cfg.architecture.input_side;
  const std::uint64_t seed = cfg.train.seed;

  std::vector<RoiSample> rois;
  rois.reserve(dataset.size());
  int fallbacks = 0;
  for (const auto& s : dataset) {
    rois.push_back(prepare_roi(s, cfg.locate, side));
    fallbacks += rois.back().used_fallback;
  }
  std::vector<Label> labels;
  for (const auto& s : dataset) labels.push_back(*s.label);
  const auto folds = stratified_kfold(labels, k, seed);
  const std::string digest = cfg.train.digest();

  std::vector<FoldResult> results;
  for (const auto& fold : folds) {
    // Early stopping watches a stratified slice of the training part, never the held-out fold.
    std::vector<Label> train_labels;
    for (auto i : fold.train) train_labels.push_back(labels[i]);
    std::vector<FundusSample> inner_train, inner_val;
    if (const auto inner = inner_validation_split(
            train_labels, cfg.train.inner_val_folds, derive_seed({seed, 5, static_cast<std::uint64_t>(fold.fold_id)}))) {
      for (auto j : inner->train) inner_train.push_back(rois[fold.train[j]].roi);
      for (auto j : inner->val) inner_val.push_back(rois[fold.train[j]].roi);
    } else {
      for (auto i : fold.train) inner_train.push_back(rois[i].roi);
      inner_val = inner_train;
    }

    TrainConfig tc = cfg.train;
    tc.seed = derive_seed({seed, 6, static_cast<std::uint64_t>(fold.fold_id)});
    auto trained = train(inner_train, inner_val, cfg.architecture, tc, fold.fold_id, on_epoch);
    trained.checkpoint.train_config_digest = digest;

    auto model = instantiate(trained.checkpoint);
    std::map<std::string, Prediction> pred_roi, pred_full;
    std::map<std::string, Truth> gt_roi, gt_full;
    const int batch = cfg.train.batch_size;
    for (std::size_t start = 0; start < fold.val.size(); start += batch) {
      const std::size_t end = std::min(fold.val.size(), start + static_cast<std::size_t>(batch));
      std::vector<RgbImage> images;
      for (std::size_t i = start; i < end; ++i) images.push_back(rois[fold.val[i]].roi.image);
      const auto out = model.forward(to_input_tensor(images));
      for (std::size_t i = start; i < end; ++i) {
        const auto b = static_cast<int>(i - start);
        const auto& rs = rois[fold.val[i]];
        const auto& src = dataset[fold.val[i]];
        SoftMap od(side, side), oc(side, side);
        std::copy_n(out.od.channel(b, 0), od.data.size(), od.data.begin());
        std::copy_n(out.oc.channel(b, 0), oc.data.size(), oc.data.begin());
        auto pp = postprocess_pair(od, oc, cfg.postprocess);
        const double p = out.p[b];
        const int label = to_int(*src.label);
        Mask od_full = map_mask_back(pp.od, rs.crop, src.image.height, src.image.width);
        Mask oc_full = map_mask_back(pp.oc, rs.crop, src.image.height, src.image.width);
        pred_roi[src.id] = {std::move(pp.od), std::move(pp.oc), p};
        gt_roi[src.id] = {*rs.roi.od_mask, *rs.roi.oc_mask, label};
        pred_full[src.id] = {std::move(od_full), std::move(oc_full), p};
        gt_full[src.id] = {*src.od_mask, *src.oc_mask, label};
      }
    }
    FoldResult fr;
    fr.report = evaluate_dataset(pred_roi, gt_roi);
    fr.report.segmentation_fullres = score_segmentation(pred_full, gt_full);
    fr.report.metadata = {seed, digest, fold.fold_id};
    fr.checkpoint = std::move(trained.checkpoint);
    fr.log = std::move(trained.log);
    fr.roi_fallbacks = fallbacks;
    results.push_back(std::move(fr));
  }
  return results;
}

}  // namespace fundus
