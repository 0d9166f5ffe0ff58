// Command-line front end: synthetic data, ROI extraction, training, cross-validation,
// inference, post-processing, evaluation and ROC plotting.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fundus/config.hpp"
#include "fundus/dataset.hpp"
#include "fundus/image_io.hpp"
#include "fundus/metrics.hpp"
#include "fundus/pipeline.hpp"
#include "fundus/postprocess.hpp"
#include "fundus/roi.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace fundus;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
};

PipelineConfig resolve_config(const Globals& g) {
  PipelineConfig cfg;
  if (!g.config_path.empty()) cfg = load_pipeline_config(g.config_path);
  if (g.seed) cfg.train.seed = *g.seed;
  if (g.deterministic) cfg.train.deterministic = true;
  return cfg;
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  return json::parse(in);
}

void print_epoch(const EpochRecord& r) {
  std::fprintf(stderr, "epoch %3d  train %.4f (od %.4f cp %.4f cls %.4f)  val %.4f  %.1fs\n", r.epoch, r.train.total,
               r.train.l_od, r.train.l_cp, r.train.l_cls, r.val.total, r.seconds);
}

void write_timing(const fs::path& path, const TrainLog& log) {
  std::ofstream out(path);
  out << "epoch,seconds,val_l_od,val_l_cp,val_l_cls\n";
  for (const auto& e : log.epochs)
    out << e.epoch << ',' << e.seconds << ',' << e.val.l_od << ',' << e.val.l_cp << ',' << e.val.l_cls << '\n';
}

/// Indexed mask files cannot hold cup pixels outside the disc, so those are dropped on write.
Plane<std::uint8_t> encode_prediction(const Mask& od, Mask oc, const LabelEncoding& enc) {
  for (std::size_t i = 0; i < oc.size(); ++i) oc.data[i] &= od.data[i];
  return encode_mask(od, oc, enc);
}

/// Loads a dataset and, unless it already matches the network input, crops ROIs around the disc.
std::vector<FundusSample> load_for_training(const fs::path& dir, const PipelineConfig& cfg, bool extract) {
  auto samples = load_dataset(dir, {cfg.encoding, true});
  if (!extract) return samples;
  std::vector<FundusSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(prepare_roi(s, cfg.locate, cfg.architecture.input_side).roi);
  return out;
}

std::vector<Checkpoint> gather_checkpoints(const std::vector<std::string>& paths, const std::string& model_dir,
                                           int fold) {
  std::vector<fs::path> files(paths.begin(), paths.end());
  if (!model_dir.empty()) {
    for (const auto& entry : fs::directory_iterator(model_dir)) {
      const auto ck = entry.path() / "checkpoint.bin";
      if (entry.is_directory() && fs::exists(ck)) files.push_back(ck);
    }
    if (fs::exists(fs::path(model_dir) / "checkpoint.bin")) files.push_back(fs::path(model_dir) / "checkpoint.bin");
  }
  std::sort(files.begin(), files.end());
  std::vector<Checkpoint> out;
  for (const auto& f : files) {
    auto ck = load_checkpoint(f);
    if (fold >= 0 && ck.fold_id != fold) continue;
    out.push_back(std::move(ck));
  }
  if (out.empty()) throw Error("no checkpoints selected");
  return out;
}

// --- subcommands ------------------------------------------------------------------

int run_synth(const Globals& g, const fs::path& out, int n_normal, int n_glaucoma, int size, double margin) {
  const auto cfg = resolve_config(g);
  SynthParams params;
  params.image_size = size;
  params.rng_seed = cfg.train.seed;
  const auto data = synth_dataset(params, n_normal, n_glaucoma, margin);
  std::vector<FundusSample> samples;
  std::ofstream truth((fs::create_directories(out), out / "truth.csv"));
  truth << "id,cdr,center_x,center_y,semi_major,semi_minor,theta\n";
  for (const auto& d : data) {
    samples.push_back(d.sample);
    truth << d.sample.id << ',' << d.truth.cdr << ',' << d.truth.center_x << ',' << d.truth.center_y << ','
          << d.truth.disc_semi_major << ',' << d.truth.disc_semi_minor << ',' << d.truth.theta << '\n';
  }
  save_dataset(out, samples, cfg.encoding);
  std::cerr << "wrote " << samples.size() << " samples to " << out << '\n';
  return 0;
}

int run_extract(const Globals& g, const fs::path& in, const fs::path& out, int size) {
  const auto cfg = resolve_config(g);
  if (size <= 0) size = cfg.architecture.input_side;
  const auto samples = load_dataset(in, {cfg.encoding, false});
  std::vector<FundusSample> crops;
  int failures = 0;
  for (const auto& s : samples) {
    try {
      const auto r = prepare_roi(s, cfg.locate, size);
      crops.push_back(r.roi);
      write_json(out / "roi" / (s.id + ".json"), {{"center", {r.crop.box.center_x, r.crop.box.center_y}},
                                                  {"side", r.crop.box.side},
                                                  {"scale", r.crop.scale},
                                                  {"fallback", r.used_fallback}});
    } catch (const NoDiscFound& e) {
      ++failures;
      std::cerr << s.id << ": " << e.what() << '\n';
    }
  }
  save_dataset(out, crops, cfg.encoding);
  std::cerr << "extracted " << crops.size() << " ROIs, " << failures << " failures\n";
  return failures == 0 ? 0 : 2;
}

int run_train(const Globals& g, const fs::path& data, const std::string& val_dir, const fs::path& out, bool extract,
              int fold) {
  const auto cfg = resolve_config(g);
  auto samples = load_for_training(data, cfg, extract);
  std::vector<FundusSample> train_set, val_set;
  if (!val_dir.empty()) {
    train_set = std::move(samples);
    val_set = load_for_training(val_dir, cfg, extract);
  } else {
    std::vector<Label> labels;
    for (const auto& s : samples) labels.push_back(*s.label);
    if (const auto split = inner_validation_split(labels, cfg.train.inner_val_folds, cfg.train.seed)) {
      for (auto i : split->train) train_set.push_back(samples[i]);
      for (auto i : split->val) val_set.push_back(samples[i]);
    } else {
      train_set = samples;
      val_set = std::move(samples);
    }
  }
  std::cerr << "training on " << train_set.size() << " samples, validating on " << val_set.size() << '\n';
  TrainResult result;
  try {
    result = train(train_set, val_set, cfg.architecture, cfg.train, fold, print_epoch);
  } catch (const DivergedLoss& e) {
    e.log().write_csv(out / "train_log.csv");
    throw;
  }
  result.log.write_csv(out / "train_log.csv");
  write_timing(out / "train_timing.csv", result.log);
  save_checkpoint(out / "checkpoint.bin", result.checkpoint);
  std::cerr << "best epoch " << result.checkpoint.epoch << " val " << result.checkpoint.best_val_loss << '\n';
  return 0;
}

int run_cv(const Globals& g, const fs::path& data, const fs::path& out, int k) {
  const auto cfg = resolve_config(g);
  const auto samples = load_dataset(data, {cfg.encoding, true});
  int fold_seen = -1;
  const auto results = cross_validate(samples, k, cfg, [&](const EpochRecord& r) {
    if (r.epoch == 0) std::cerr << "fold " << ++fold_seen << '\n';
    print_epoch(r);
  });
  json summary = json::array();
  for (const auto& fr : results) {
    const auto dir = out / ("fold" + std::to_string(fr.report.metadata.fold_id));
    save_checkpoint(dir / "checkpoint.bin", fr.checkpoint);
    fr.log.write_csv(dir / "train_log.csv");
    write_timing(dir / "train_timing.csv", fr.log);
    write_json(dir / "report.json", fr.report);
    summary.push_back({{"fold", fr.report.metadata.fold_id},
                       {"dice_od", fr.report.segmentation.dice_od.mean},
                       {"dice_oc", fr.report.segmentation.dice_oc.mean},
                       {"cdr_error", fr.report.segmentation.cdr_error.mean},
                       {"auc", fr.report.roc ? fr.report.roc->auc : 0.0},
                       {"best_epoch", fr.checkpoint.epoch}});
    std::cerr << summary.back().dump() << '\n';
  }
  write_json(out / "summary.json", summary);
  write_json(out / "config.json", cfg);
  return 0;
}

int run_predict(const Globals& g, const fs::path& in, const fs::path& out, const std::vector<std::string>& ckpts,
                const std::string& model_dir, int fold, bool roi_input) {
  const auto cfg = resolve_config(g);
  Ensemble ensemble(gather_checkpoints(ckpts, model_dir, fold));
  const auto samples = load_dataset(in, {cfg.encoding, false});
  int failures = 0;
  for (const auto& s : samples) {
    InferenceResult r;
    try {
      if (roi_input) {
        const auto o = ensemble.predict(to_input_tensor(std::span(&s.image, 1)));
        r.p_glaucoma = o.p.front();
        r.od_soft = soft_map(o.od, 0);
        r.oc_soft = soft_map(o.oc, 0);
        auto pp = postprocess_pair(r.od_soft, r.oc_soft, cfg.postprocess);
        r.od_full = r.od_roi = pp.od;
        r.oc_full = r.oc_roi = pp.oc;
        r.warnings = pp.warnings;
        r.cdr = count_ones(r.od_full) ? vertical_cdr(r.od_full, r.oc_full) : 0.0;
      } else {
        r = infer_end_to_end(s.image, ensemble, cfg.postprocess, cfg.locate);
      }
    } catch (const NoDiscFound& e) {
      ++failures;
      std::cerr << s.id << ": " << e.what() << '\n';
      continue;
    }
    write_json(out / (s.id + ".json"), {{"id", s.id},
                                        {"p_glaucoma", r.p_glaucoma},
                                        {"cdr", r.cdr},
                                        {"warnings", r.warnings}});
    io::write_gray8(out / "masks" / (s.id + ".png"), encode_prediction(r.od_full, r.oc_full, cfg.encoding));
    io::write_softmap(out / "soft" / (s.id + "_od.png"), r.od_soft);
    io::write_softmap(out / "soft" / (s.id + "_oc.png"), r.oc_soft);
  }
  std::cerr << "predicted " << samples.size() - failures << " images, " << failures << " failures\n";
  return failures == 0 ? 0 : 2;
}

int run_postprocess(const Globals& g, const fs::path& in, const fs::path& out) {
  const auto cfg = resolve_config(g);
  int n = 0;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(in)) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& p : files) {
    const std::string name = p.filename().string();
    if (!name.ends_with("_od.png")) continue;
    const std::string id = name.substr(0, name.size() - 7);
    const auto oc_path = in / (id + "_oc.png");
    if (!fs::exists(oc_path)) throw MissingMask("no cup map for " + id);
    const auto r = postprocess_pair(io::read_softmap(p), io::read_softmap(oc_path), cfg.postprocess);
    io::write_gray8(out / (id + ".png"), encode_prediction(r.od, r.oc, cfg.encoding));
    if (!r.warnings.empty()) write_json(out / (id + ".warnings.json"), r.warnings);
    ++n;
  }
  std::cerr << "post-processed " << n << " map pairs\n";
  return 0;
}

int run_evaluate(const Globals& g, const fs::path& pred_dir, const fs::path& gt_dir, const fs::path& out,
                 std::optional<double> cutoff) {
  const auto cfg = resolve_config(g);
  const auto truth = load_dataset(gt_dir, {cfg.encoding, false});
  std::map<std::string, Prediction> pred;
  std::map<std::string, Truth> gt;
  for (const auto& s : truth) {
    if (!s.has_masks()) throw MissingMask("ground truth for " + s.id + " lacks masks");
    Truth t{*s.od_mask, *s.oc_mask, std::nullopt};
    if (s.label) t.label = to_int(*s.label);
    gt[s.id] = std::move(t);
  }
  for (const auto& e : fs::directory_iterator(pred_dir)) {
    if (e.path().extension() != ".json") continue;
    const auto j = read_json(e.path());
    if (!j.contains("id")) continue;
    const auto id = j.at("id").get<std::string>();
    const auto [od, oc] = decode_mask(io::read_gray8(pred_dir / "masks" / (id + ".png")), cfg.encoding);
    pred[id] = {od, oc, j.at("p_glaucoma").get<double>()};
  }
  auto report = evaluate_dataset(pred, gt, cutoff);
  report.metadata = {cfg.train.seed, cfg.train.digest(), -1};
  write_json(out, report);
  std::cerr << "OD Dice " << report.segmentation.dice_od.mean << "  OC Dice " << report.segmentation.dice_oc.mean
            << "  CDR error " << report.segmentation.cdr_error.mean;
  if (report.roc) std::cerr << "  AUC " << report.roc->auc;
  std::cerr << '\n';
  return 0;
}

int run_plot(const fs::path& report_path, const fs::path& out, const std::string& title) {
  const auto report = read_json(report_path).get<EvalReport>();
  if (!report.roc) throw SingleClass("report has no ROC curve (single-class labels)");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream(out) << roc_svg(*report.roc, title);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Optic disc/cup segmentation and glaucoma classification"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed overriding the config");
  app.add_flag("--deterministic", g.deterministic, "Force deterministic execution");

  fs::path out, in, data;
  int n_normal = 360, n_glaucoma = 40, size = 256, folds = 4, fold = -1, roi_size = 0;
  double margin = 0.05;
  auto* synth = app.add_subcommand("synth-data", "Generate a labeled synthetic dataset");
  synth->add_option("--out", out)->required();
  synth->add_option("--n-normal", n_normal);
  synth->add_option("--n-glaucoma", n_glaucoma);
  synth->add_option("--size", size, "Image side in pixels");
  synth->add_option("--margin", margin, "CDR gap kept on each side of the class threshold");

  auto* extract = app.add_subcommand("extract-roi", "Crop square ROIs around the optic disc");
  extract->add_option("--in", in)->required();
  extract->add_option("--out", out)->required();
  extract->add_option("--size", roi_size, "Crop side (default: architecture input side)");

  std::string val_dir;
  bool do_extract = false;
  auto* train_cmd = app.add_subcommand("train", "Train one model");
  train_cmd->add_option("--data", data)->required();
  train_cmd->add_option("--val", val_dir, "Validation dataset (default: stratified split of --data)");
  train_cmd->add_option("--out", out)->required();
  train_cmd->add_flag("--extract-roi", do_extract, "Inputs are full images; crop ROIs first");
  train_cmd->add_option("--fold", fold, "Fold id recorded in the checkpoint");

  auto* cv = app.add_subcommand("cross-validate", "Stratified k-fold training and evaluation");
  cv->add_option("--data", data)->required();
  cv->add_option("--out", out)->required();
  cv->add_option("--folds", folds);

  std::vector<std::string> ckpts;
  std::string model_dir;
  bool roi_input = false;
  auto* predict = app.add_subcommand("predict", "Ensemble inference on full images");
  predict->add_option("--in", in)->required();
  predict->add_option("--out", out)->required();
  predict->add_option("--checkpoint", ckpts, "Checkpoint file (repeatable)");
  predict->add_option("--models", model_dir, "Directory holding fold*/checkpoint.bin");
  predict->add_option("--fold", fold, "Use only the model of this fold");
  predict->add_flag("--roi-input", roi_input, "Inputs are already ROI crops");

  auto* post = app.add_subcommand("postprocess", "Refine <id>_od.png/<id>_oc.png soft maps");
  post->add_option("--in", in)->required();
  post->add_option("--out", out)->required();

  fs::path gt_dir;
  std::optional<double> cutoff;
  auto* evaluate = app.add_subcommand("evaluate", "Score predictions against ground truth");
  evaluate->add_option("--pred", in)->required();
  evaluate->add_option("--gt", gt_dir)->required();
  evaluate->add_option("--out", out)->required();
  evaluate->add_option("--cutoff", cutoff, "Fixed probability cutoff (default: Youden-optimal)");

  std::string title = "ROC";
  auto* plot = app.add_subcommand("plot-roc", "Render the ROC curve of a report as SVG");
  plot->add_option("--report", in)->required();
  plot->add_option("--out", out)->required();
  plot->add_option("--title", title);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*synth) return run_synth(g, out, n_normal, n_glaucoma, size, margin);
    if (*extract) return run_extract(g, in, out, roi_size);
    if (*train_cmd) return run_train(g, data, val_dir, out, do_extract, fold);
    if (*cv) return run_cv(g, data, out, folds);
    if (*predict) return run_predict(g, in, out, ckpts, model_dir, fold, roi_input);
    if (*post) return run_postprocess(g, in, out);
    if (*evaluate) return run_evaluate(g, in, gt_dir, out, cutoff);
    if (*plot) return run_plot(in, out, title);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
