// Acceptance run: one PASS/FAIL line per criterion. Exit status is nonzero if any criterion fails.
//
//   acceptance --workdir DIR [--cli PATH] [--only 1,2,5]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fundus/checkpoint.hpp"
#include "fundus/config.hpp"
#include "fundus/errors.hpp"
#include "fundus/losses.hpp"
#include "fundus/metrics.hpp"
#include "fundus/network.hpp"
#include "fundus/pipeline.hpp"
#include "fundus/postprocess.hpp"
#include "helpers.hpp"

using namespace fundus;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    notes.push_back((ok ? "" : "!") + what);
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double rel_err(double a, double b, double floor = 1e-12) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

template <typename T>
nn::Tensor<T> random_tensor(int n, int c, int h, int w, Rng& rng, double lo, double hi) {
  nn::Tensor<T> t(n, c, h, w);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data) v = static_cast<T>(u(rng));
  return t;
}

double dot(const nn::Tensor<double>& a, const nn::Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

// ---------------------------------------------------------------------------------------------

Outcome shape_ledger() {
  Outcome o;
  const ArchitectureConfig cfg;
  const auto plan = plan_shapes(cfg);
  MultiTaskNet<float> net(cfg, 0);
  net.set_training(false);
  Rng rng(1);
  const auto out = net.forward(random_tensor<float>(1, 3, 400, 400, rng, 0, 1));
  const auto& seen = net.observed_shapes();
  for (const auto* l : {&plan, &seen}) {
    const std::string tag = l == &plan ? "planned " : "observed ";
    o.require(l->bottleneck == MapShape{25, 128}, tag + "bottleneck 25x25x128");
    o.require(l->appearance == MapShape{12, 5}, tag + "appearance 12x12x5");
    o.require(l->structural == MapShape{12, 48}, tag + "structural 12x12x48");
    o.require(l->pooled_features == 53, tag + "pooled 53");
    o.require(l->outputs == 1, tag + "one sigmoid output");
  }
  o.require(out.p.size() == 1 && out.p[0] > 0 && out.p[0] < 1, "p in (0,1)");
  o.require(out.od.h == 400 && out.oc.h == 400, "maps 400x400");
  return o;
}

Outcome parameter_budget() {
  Outcome o;
  const MultiTaskNet<float> net(ArchitectureConfig{}, 0);
  const auto n = net.count_parameters();
  o.require(n <= 700000, "params " + std::to_string(n) + " (published 609170) <= 700000");
  o.require(net.classifier_parameter_count() == 54,
            "classifier " + std::to_string(net.classifier_parameter_count()) + " == 54");
  return o;
}

Outcome loss_oracle() {
  Outcome o;
  double worst = 0;
  std::vector<double> a(9), b(9);
  for (int ma = 0; ma < 512; ++ma) {
    for (int i = 0; i < 9; ++i) a[i] = (ma >> i) & 1;
    for (int mb = 0; mb < 512; ++mb) {
      int inter = 0, na = 0, nb = 0;
      for (int i = 0; i < 9; ++i) {
        b[i] = (mb >> i) & 1;
        const int x = (ma >> i) & 1, y = (mb >> i) & 1;
        inter += x & y;
        na += x;
        nb += y;
      }
      const double set_dice = na + nb == 0 ? 1.0 : 2.0 * inter / (na + nb);
      worst = std::max(worst, std::abs(loss::soft_dice<double>(a, b) - set_dice));
    }
  }
  o.require(worst <= 1e-6, "max |soft - set| " + fmt("%.3g", worst) + " over 262144 pairs");
  return o;
}

Outcome gradient_checks() {
  Outcome o;
  Rng rng(404);
  std::uniform_real_distribution<double> u(0.02, 0.98);
  double w_dice = 0, w_bce = 0, w_total = 0;
  const double h = 1e-6;
  for (int t = 0; t < 100; ++t) {
    std::vector<double> r(64), y(64), g(64);
    for (auto& v : r) v = u(rng);
    for (auto& v : y) v = u(rng) < 0.5;
    loss::dice_loss_grad<double>(r, y, g);
    for (std::size_t i = 0; i < r.size(); ++i) {
      const double keep = r[i];
      r[i] = keep + h;
      const double up = loss::dice_loss<double>(r, y);
      r[i] = keep - h;
      const double down = loss::dice_loss<double>(r, y);
      r[i] = keep;
      w_dice = std::max(w_dice, rel_err((up - down) / (2 * h), g[i]));
    }

    const double p = u(rng);
    const int label = u(rng) < 0.5;
    const double fd_bce = (loss::bce(p + h, label) - loss::bce(p - h, label)) / (2 * h);
    w_bce = std::max(w_bce, rel_err(fd_bce, loss::bce_grad(p, label)));

    const int b = 2;
    ModelOutputs<double> out{nn::Tensor<double>(b, 1, 8, 8), nn::Tensor<double>(b, 1, 8, 8), {u(rng), u(rng)}};
    loss::GroundTruth<double> gt{nn::Tensor<double>(b, 1, 8, 8), nn::Tensor<double>(b, 1, 8, 8), {0, 1}};
    for (auto& v : out.od.data) v = u(rng);
    for (auto& v : out.oc.data) v = u(rng);
    for (auto& v : gt.od.data) v = u(rng) < 0.5;
    for (auto& v : gt.oc.data) v = u(rng) < 0.3;
    OutputGrads<double> grads;
    loss::total_loss(out, gt, loss::LossWeights{}, &grads);
    auto fd = [&](double& x) {
      const double keep = x;
      x = keep + h;
      const double up = loss::total_loss<double>(out, gt, {}).total;
      x = keep - h;
      const double down = loss::total_loss<double>(out, gt, {}).total;
      x = keep;
      return (up - down) / (2 * h);
    };
    for (std::size_t i = 0; i < out.od.size(); ++i) {
      w_total = std::max(w_total, rel_err(fd(out.od.data[i]), grads.od.data[i]));
      w_total = std::max(w_total, rel_err(fd(out.oc.data[i]), grads.oc.data[i]));
    }
    for (int i = 0; i < b; ++i) w_total = std::max(w_total, rel_err(fd(out.p[i]), grads.p[i]));
  }
  o.require(w_dice < 1e-4, "dice_loss rel " + fmt("%.2g", w_dice));
  o.require(w_bce < 1e-4, "bce rel " + fmt("%.2g", w_bce));
  o.require(w_total < 1e-4, "total_loss rel " + fmt("%.2g", w_total));

  // Full model in double precision. A probe whose step straddles a ReLU or max-pool switch is
  // not differentiable there; two step sizes disagreeing is how such probes are recognized.
  MultiTaskNet<double> net(ArchitectureConfig::reduced(64, true), 9);
  const auto x = random_tensor<double>(2, 3, 64, 64, rng, 0, 1);
  const auto probe_od = random_tensor<double>(2, 1, 64, 64, rng, -1, 1);
  const auto probe_oc = random_tensor<double>(2, 1, 64, 64, rng, -1, 1);
  const std::vector<double> probe_p{0.7, -1.3};
  auto objective = [&] {
    const auto out = net.forward(x);
    return dot(out.od, probe_od) + dot(out.oc, probe_oc) + out.p[0] * probe_p[0] + out.p[1] * probe_p[1];
  };
  net.zero_grad();
  objective();
  net.backward({probe_od, probe_oc, probe_p});
  auto params = net.parameters();
  std::uniform_int_distribution<std::size_t> which(0, params.size() - 1);
  auto central = [&](double& w, double step) {
    const double keep = w;
    w = keep + step;
    const double up = objective();
    w = keep - step;
    const double down = objective();
    w = keep;
    return (up - down) / (2 * step);
  };
  int checked = 0, kinks = 0, bad = 0;
  double worst = 0;
  for (int t = 0; t < 40; ++t) {
    auto* prm = params[which(rng)];
    std::uniform_int_distribution<std::size_t> idx(0, prm->value.size() - 1);
    const auto i = idx(rng);
    const double fd = central(prm->value.data[i], 1e-7), fd_half = central(prm->value.data[i], 2.5e-8);
    if (std::abs(fd - fd_half) > 1e-4 * std::max(1.0, std::abs(fd))) {
      ++kinks;
      continue;
    }
    ++checked;
    const double g = prm->grad.data[i];
    // Near-zero gradients are compared absolutely; relative error is meaningless at roundoff.
    const double e = std::abs(fd - g) < 1e-6 ? 0.0 : rel_err(fd, g);
    worst = std::max(worst, e);
    bad += e >= 1e-3;
  }
  o.require(bad == 0 && checked >= 30,
            "full model rel " + fmt("%.2g", worst) + " on " + std::to_string(checked) + " probes (" +
                std::to_string(kinks) + " at kinks)");
  return o;
}

Outcome overfit() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  SynthParams sp;
  sp.rng_seed = 5;
  const int side = 128;
  std::vector<FundusSample> rois;
  for (auto& r : synth_dataset(sp, 4, 4)) rois.push_back(prepare_roi(r.sample, {}, side).roi);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.max_epochs = 200;
  cfg.patience_epochs = 200;
  cfg.learning_rate = 5e-3;
  cfg.augment.enable_geometric = cfg.augment.enable_color_transfer = cfg.augment.enable_pca = false;
  cfg.seed = 1;
  const auto res = train(rois, rois, ArchitectureConfig::reduced(side, true), cfg);

  auto model = instantiate(res.checkpoint);
  std::vector<RgbImage> images;
  for (const auto& s : rois) images.push_back(s.image);
  const auto out = model.forward(to_input_tensor(images));
  double od = 0, oc = 0;
  int correct = 0;
  const std::size_t n = out.od.sample_size();
  for (int i = 0; i < 8; ++i) {
    std::vector<float> gt_od(rois[i].od_mask->data.begin(), rois[i].od_mask->data.end());
    std::vector<float> gt_oc(rois[i].oc_mask->data.begin(), rois[i].oc_mask->data.end());
    od += loss::soft_dice<float>({out.od.sample(i), n}, gt_od) / 8;
    oc += loss::soft_dice<float>({out.oc.sample(i), n}, gt_oc) / 8;
    correct += (out.p[i] >= 0.5) == (*rois[i].label == Label::glaucoma);
  }
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60;
  o.require(od >= 0.95, "OD soft dice " + fmt("%.4f", od));
  o.require(oc >= 0.85, "OC soft dice " + fmt("%.4f", oc));
  o.require(correct == 8, "accuracy " + std::to_string(correct) + "/8");
  o.require(minutes <= 15, "best epoch " + std::to_string(res.checkpoint.epoch) + ", " + fmt("%.1f", minutes) + " min");
  return o;
}

Outcome postprocess_oracle() {
  Outcome o;
  Rng rng(606);
  std::uniform_real_distribution<double> u(0, 1);

  // Ground-truth maps at the 400-pixel ROI scale, each with 50 speckle pixels of value 0.9.
  SynthParams sp;
  sp.image_size = 400;
  sp.disc_radius_min = 0.2;
  sp.disc_radius_max = 0.28;
  sp.max_center_offset = 0.1;
  std::uniform_int_distribution<int> pos(0, 399);
  double worst_od = 1, worst_oc = 1;
  for (int t = 0; t < 20; ++t) {
    const auto r = synth_sample(sp, rng);
    const Mask& god = *r.sample.od_mask;
    const Mask& goc = *r.sample.oc_mask;
    SoftMap od(god.height, god.width), oc(goc.height, goc.width);
    for (std::size_t i = 0; i < od.data.size(); ++i) {
      od.data[i] = god.data[i];
      oc.data[i] = goc.data[i];
    }
    for (int k = 0; k < 50; ++k) {
      od(pos(rng), pos(rng)) = 0.9f;
      oc(pos(rng), pos(rng)) = 0.9f;
    }
    const auto res = postprocess_pair(od, oc, PostprocessParams{});
    worst_od = std::min(worst_od, hard_dice(res.od, god));
    worst_oc = std::min(worst_oc, hard_dice(res.oc, goc));
  }
  o.require(std::min(worst_od, worst_oc) >= 0.98,
            "restored dice min od " + fmt("%.4f", worst_od) + " oc " + fmt("%.4f", worst_oc));

  bool idem = true, lcc = true;
  for (int t = 0; t < 50; ++t) {
    const Mask m = testing::random_mask(48, 64, 0.5 + 0.2 * u(rng), rng);
    for (int rad : {1, 2, 3}) {
      const auto once = morphological_opening(m, rad);
      idem &= morphological_opening(once, rad) == once;
    }
    for (int conn : {4, 8}) {
      const auto a = largest_component(m, conn), b = largest_component(m, conn);
      lcc &= a == b && largest_component(a, conn) == a;
    }
  }
  // Equal-size blobs: the first in raster order wins, every time.
  Mask tie(6, 6, 0);
  tie(4, 0) = tie(4, 1) = tie(0, 4) = tie(0, 5) = 1;
  lcc &= largest_component(tie)(0, 4) == 1 && largest_component(tie)(4, 0) == 0;
  o.require(idem, "opening idempotent");
  o.require(lcc, "largest component deterministic");

  double e_center = 0, e_axis = 0, e_angle = 0;
  for (int t = 0; t < 100; ++t) {
    Ellipse e;
    e.cx = 150 + 20 * (u(rng) - 0.5);
    e.cy = 150 + 20 * (u(rng) - 0.5);
    e.a = 50 + 40 * u(rng);
    e.b = e.a * (0.6 + 0.3 * u(rng));
    e.theta = std::numbers::pi * u(rng);
    const auto f = fit_ellipse(rasterize_ellipse(e, 300, 300));
    e_center = std::max({e_center, std::abs(f.cx - e.cx), std::abs(f.cy - e.cy)});
    e_axis = std::max({e_axis, std::abs(f.a - e.a) / e.a, std::abs(f.b - e.b) / e.b});
    double d = std::fmod(std::abs(f.theta - e.theta), std::numbers::pi);
    e_angle = std::max(e_angle, std::min(d, std::numbers::pi - d));
  }
  o.require(e_axis <= 0.02, "ellipse axes " + fmt("%.4f", e_axis));
  o.require(e_center <= 1.0, "center " + fmt("%.3f", e_center) + " px");
  o.require(e_angle <= 0.05, "angle " + fmt("%.4f", e_angle) + " rad");
  return o;
}

Outcome metric_oracles() {
  Outcome o;
  Rng rng(707);
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<int> coarse(0, 7);
  double worst = 0;
  bool youden = true;
  for (int t = 0; t < 100; ++t) {
    std::vector<double> s(50);
    std::vector<int> y(50);
    do {
      for (int i = 0; i < 50; ++i) {
        s[i] = t % 2 ? coarse(rng) / 7.0 : u(rng);
        y[i] = u(rng) < 0.3;
      }
    } while (std::count(y.begin(), y.end(), 1) == 0 || std::count(y.begin(), y.end(), 0) == 0);
    double pairs = 0, wins = 0;
    for (int i = 0; i < 50; ++i)
      for (int j = 0; j < 50; ++j)
        if (y[i] == 1 && y[j] == 0) {
          pairs += 1;
          wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
        }
    worst = std::max(worst, std::abs(roc_auc(s, y).auc - wins / pairs));

    // Exhaustive Youden over every candidate cutoff.
    std::vector<double> cands(s.begin(), s.end());
    cands.push_back(2.0);
    double best = -2;
    for (double c : cands) {
      const auto ss = sens_spec(s, y, c);
      best = std::max(best, ss.sensitivity + ss.specificity - 1);
    }
    const auto ss = sens_spec(s, y, youden_cutoff(s, y));
    youden &= ss.sensitivity + ss.specificity - 1 == best;
  }
  o.require(worst <= 1e-9, "AUC vs pairwise " + fmt("%.2g", worst));
  o.require(youden, "youden cutoff optimal in 100/100");

  SynthParams sp;
  sp.image_size = 320;
  int within = 0;
  for (int t = 0; t < 100; ++t) {
    const auto r = synth_sample(sp, rng);
    const double disc_h = vertical_extent(*r.sample.od_mask);
    within += std::abs(vertical_cdr(*r.sample.od_mask, *r.sample.oc_mask) - r.truth.cdr) <= 2.0 / disc_h;
  }
  o.require(within == 100, "vertical cdr within 2/disc_height in " + std::to_string(within) + "/100");
  return o;
}

Outcome protocol() {
  Outcome o;
  SynthParams sp;
  sp.image_size = 64;
  std::vector<Label> labels;
  for (const auto& r : synth_dataset(sp, 360, 40)) labels.push_back(*r.sample.label);
  const auto folds = stratified_kfold(labels, 4, 11);
  bool exact = folds.size() == 4;
  std::set<std::size_t> seen;
  for (const auto& f : folds) {
    int pos = 0;
    for (auto i : f.val) {
      pos += labels[i] == Label::glaucoma;
      seen.insert(i);
    }
    exact &= f.val.size() == 100 && pos == 10 && f.train.size() == 300;
  }
  o.require(exact && seen.size() == 400, "4 folds of 90+10");

  const auto arch = ArchitectureConfig::reduced(64, true);
  std::vector<Checkpoint> cks;
  for (int i = 0; i < 4; ++i) {
    MultiTaskNet<float> m(arch, 30 + i);
    cks.push_back(snapshot(m));
  }
  Rng rng(8);
  const auto x = random_tensor<float>(3, 3, 64, 64, rng, 0, 1);
  const auto e = ensemble_predict(cks, x);
  std::vector<ModelOutputs<float>> outs;
  for (const auto& c : cks) {
    auto m = instantiate(c);
    outs.push_back(m.forward(x));
  }
  double worst = 0;
  for (std::size_t i = 0; i < e.od.size(); ++i) {
    double od = 0, oc = 0;
    for (const auto& out : outs) {
      od += out.od.data[i];
      oc += out.oc.data[i];
    }
    worst = std::max({worst, std::abs(e.od.data[i] - od / 4), std::abs(e.oc.data[i] - oc / 4)});
  }
  for (int b = 0; b < 3; ++b) {
    double p = 0;
    for (const auto& out : outs) p += out.p[b];
    worst = std::max(worst, std::abs(e.p[b] - p / 4));
  }
  o.require(worst <= 1e-12, "ensemble vs mean " + fmt("%.2g", worst));

  // Last strict improvement at index 7; patience 5 stops at index 12.
  const std::vector<double> seq{5, 4, 3, 3.5, 3, 3.2, 3.1, 2.9, 3, 3, 2.9, 3, 3, 1, 1};
  EarlyStopping es(5);
  int stopped = -1;
  for (std::size_t i = 0; i < seq.size() && stopped < 0; ++i) {
    es.update(seq[i]);
    if (es.should_stop()) stopped = static_cast<int>(i);
  }
  o.require(stopped == 12 && es.best_index() == 7, "early stop at " + std::to_string(stopped) + " (expected 12)");
  return o;
}

Outcome benchmark(const fs::path& work) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  SynthParams sp;
  sp.rng_seed = 2024;
  std::vector<FundusSample> data;
  for (auto& r : synth_dataset(sp, 360, 40)) data.push_back(std::move(r.sample));

  PipelineConfig cfg;
  cfg.architecture = ArchitectureConfig::reduced(128, true);
  cfg.train.max_epochs = 35;
  cfg.train.patience_epochs = 10;
  cfg.train.learning_rate = 2e-3;
  cfg.train.seed = 1;
  std::ofstream log(work / "benchmark_epochs.txt");
  const auto folds = cross_validate(data, 4, cfg, [&](const EpochRecord& e) {
    log << e.epoch << ' ' << e.train.total << ' ' << e.val.total << ' ' << e.seconds << std::endl;
  });
  std::vector<double> od, oc, auc;
  for (const auto& f : folds) {
    od.push_back(f.report.segmentation.dice_od.mean);
    oc.push_back(f.report.segmentation.dice_oc.mean);
    auc.push_back(f.report.roc ? f.report.roc->auc : 0.0);
    nlohmann::json j = f.report;
    std::ofstream(work / ("benchmark_fold" + std::to_string(f.report.metadata.fold_id) + ".json")) << j.dump(1);
  }
  const double m_od = summarize(od).mean, m_oc = summarize(oc).mean, m_auc = summarize(auc).mean;
  const double hours = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 3600;
  o.require(m_od >= 0.90, "OD dice " + fmt("%.4f", m_od));
  o.require(m_oc >= 0.80, "OC dice " + fmt("%.4f", m_oc));
  o.require(m_auc >= 0.90, "AUC " + fmt("%.4f", m_auc));
  o.require(hours <= 2, fmt("%.2f", hours) + " h");
  return o;
}

int run(const std::string& cmd) {
  const std::string full = cmd + " > /dev/null 2>&1";
  return std::system(full.c_str());
}

Outcome determinism(const fs::path& work, const std::string& cli) {
  Outcome o;
  const auto data = work / "det_data";
  fs::remove_all(data);
  {
    SynthParams sp;
    sp.rng_seed = 77;
    std::vector<FundusSample> samples;
    for (auto& r : synth_dataset(sp, 10, 6)) samples.push_back(std::move(r.sample));
    save_dataset(data, samples);
  }
  const auto cfg_path = work / "det_config.json";
  PipelineConfig cfg;
  cfg.architecture = ArchitectureConfig::reduced(64, true);
  cfg.train.max_epochs = 3;
  cfg.train.batch_size = 4;
  std::ofstream(cfg_path) << nlohmann::json(cfg).dump(1);

  std::string runs[2];
  for (int i = 0; i < 2; ++i) {
    const auto out = work / ("det_run" + std::to_string(i));
    fs::remove_all(out);
    if (!cli.empty()) {
      const int rc = run(cli + " --config " + cfg_path.string() + " --seed 13 --deterministic train --data " +
                         data.string() + " --extract-roi --out " + out.string());
      o.require(rc == 0, "cli run " + std::to_string(i) + " exit " + std::to_string(rc));
    } else {
      fs::create_directories(out);
      std::vector<FundusSample> rois;
      for (const auto& s : load_dataset(data, {.supervised = true}))
        rois.push_back(prepare_roi(s, cfg.locate, 64).roi);
      cfg.train.seed = 13;
      const auto res = train(rois, rois, cfg.architecture, cfg.train);
      res.log.write_csv(out / "train_log.csv");
      save_checkpoint(out / "checkpoint.bin", res.checkpoint);
    }
    runs[i] = out.string();
  }
  const auto log_a = slurp(fs::path(runs[0]) / "train_log.csv"), log_b = slurp(fs::path(runs[1]) / "train_log.csv");
  const auto ck_a = slurp(fs::path(runs[0]) / "checkpoint.bin"), ck_b = slurp(fs::path(runs[1]) / "checkpoint.bin");
  o.require(!log_a.empty() && log_a == log_b, "train_log.csv identical (" + std::to_string(log_a.size()) + " bytes)");
  o.require(!ck_a.empty() && ck_a == ck_b, "checkpoint.bin identical (" + std::to_string(ck_a.size()) + " bytes)");
  o.notes.push_back(cli.empty() ? "via library" : "via cli");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string workdir = "acceptance_work", cli, only;
  app.add_option("--workdir", workdir);
  app.add_option("--cli", cli, "fundus executable used for the determinism criterion");
  app.add_option("--only", only, "comma-separated criterion numbers");
  CLI11_PARSE(app, argc, argv);
  const fs::path work(workdir);
  fs::create_directories(work);

  std::set<int> wanted;
  std::stringstream ss(only);
  for (std::string tok; std::getline(ss, tok, ',');)
    if (!tok.empty()) wanted.insert(std::stoi(tok));

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"architecture shape ledger", shape_ledger},
      {"parameter budget", parameter_budget},
      {"soft dice oracle", loss_oracle},
      {"gradient checks", gradient_checks},
      {"overfit sanity", overfit},
      {"post-processing oracle", postprocess_oracle},
      {"metric oracles", metric_oracles},
      {"protocol fidelity", protocol},
      {"synthetic 4-fold benchmark", [&] { return benchmark(work); }},
      {"determinism", [&] { return determinism(work, cli); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!wanted.empty() && !wanted.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.notes = {std::string("!exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string detail;
    for (const auto& n : o.notes) detail += (detail.empty() ? "" : "; ") + n;
    std::printf("criterion %2d %s  %s  [%s] (%.1fs)\n", id, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
