#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "fundus/checkpoint.hpp"
#include "fundus/config.hpp"
#include "fundus/pipeline.hpp"

using namespace fundus;
namespace fs = std::filesystem;

namespace {

// Whole synthetic images used directly as 64x64 network inputs.
std::vector<FundusSample> tiny_set(int n_normal, int n_glaucoma, std::uint64_t seed, int size = 64) {
  SynthParams p;
  p.image_size = size;
  p.disc_radius_min = 0.15;
  p.disc_radius_max = 0.2;
  p.max_center_offset = 0.1;
  p.rng_seed = seed;
  std::vector<FundusSample> out;
  for (auto& r : synth_dataset(p, n_normal, n_glaucoma)) out.push_back(std::move(r.sample));
  return out;
}

TrainConfig quick_config(int epochs) {
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.max_epochs = epochs;
  cfg.patience_epochs = 50;
  cfg.pca_max_pixels = 10000;
  cfg.seed = 3;
  return cfg;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("fundus_test_pipeline_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

nn::Tensor<float> random_input(int n, int side, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<float> u(0, 1);
  nn::Tensor<float> x(n, 3, side, side);
  for (auto& v : x.data) v = u(rng);
  return x;
}

}  // namespace

TEST_CASE("early stopping on scripted sequences") {
  SUBCASE("halts exactly patience updates after the last strict improvement") {
    const std::vector<double> seq{5, 4, 3, 3.5, 3, 3.2, 3.1, 2.9, 3, 3, 3, 3, 3};
    EarlyStopping es(5);
    int stopped_at = -1;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      es.update(seq[i]);
      if (es.should_stop()) {
        stopped_at = static_cast<int>(i);
        break;
      }
    }
    CHECK(es.best_index() == 7);
    CHECK(es.best() == 2.9);
    CHECK(stopped_at == 7 + 5);
  }
  SUBCASE("an equal value is not an improvement") {
    EarlyStopping es(2);
    CHECK(es.update(1.0));
    CHECK_FALSE(es.update(1.0));
    CHECK_FALSE(es.should_stop());
    CHECK_FALSE(es.update(1.0));
    CHECK(es.should_stop());
  }
  SUBCASE("steady improvement never stops") {
    EarlyStopping es(20);
    for (int i = 0; i < 300; ++i) {
      CHECK(es.update(1.0 / (i + 1)));
      CHECK_FALSE(es.should_stop());
    }
  }
}

TEST_CASE("train log CSV layout") {
  TrainLog log;
  EpochRecord r;
  r.epoch = 0;
  r.train = {0.5, 0.25, 0.125, 0.875};
  r.val.total = 1.5;
  r.seconds = 12.3;
  log.epochs.push_back(r);
  r.epoch = 1;
  r.val.total = 0.1;
  log.epochs.push_back(r);
  const auto csv = log.to_csv();
  CHECK(csv.rfind("epoch,l_od,l_cp,l_cls,total,val_total\n", 0) == 0);
  CHECK(csv.find("0,0.5,0.25,0.125,0.875,1.5\n") != std::string::npos);
  CHECK(csv.find("1,0.5,0.25,0.125,0.875,0.10000000000000001\n") != std::string::npos);
  CHECK(csv.find("12.3") == std::string::npos);
}

TEST_CASE("one small Adam step decreases the loss of its sample") {
  const auto cfg = ArchitectureConfig::reduced(64, true);
  const auto data = tiny_set(10, 10, 17);
  int failures = 0;
  for (int t = 0; t < 20; ++t) {
    MultiTaskNet<float> net(cfg, 100 + t);
    const auto& s = data[t];
    const std::array<RgbImage, 1> img{s.image};
    const auto x = to_input_tensor(img);
    loss::GroundTruth<float> gt{nn::Tensor<float>(1, 1, 64, 64), nn::Tensor<float>(1, 1, 64, 64), {to_int(*s.label)}};
    std::copy(s.od_mask->data.begin(), s.od_mask->data.end(), gt.od.data.begin());
    std::copy(s.oc_mask->data.begin(), s.oc_mask->data.end(), gt.oc.data.begin());
    Adam adam(net.parameters(), 1e-5, 0.9, 0.999, 1e-8);
    net.zero_grad();
    OutputGrads<float> g;
    const double before = loss::total_loss(net.forward(x), gt, {}, &g).total;
    net.backward(g);
    adam.step();
    const double after = loss::total_loss(net.forward(x), gt, {}).total;
    failures += !(after < before);
  }
  CHECK(failures <= 2);
}

TEST_CASE("checkpoint save, load and forward are bit-identical") {
  MultiTaskNet<float> net(ArchitectureConfig::reduced(64, true), 4);
  const auto x = random_input(2, 64, 1);
  net.forward(x);  // move the running statistics
  net.set_training(false);
  const auto before = net.forward(x);

  auto ck = snapshot(net);
  ck.best_val_loss = 0.125;
  ck.epoch = 7;
  ck.train_config_digest = "deadbeef";
  ck.fold_id = 2;
  const auto dir = scratch("ckpt");
  save_checkpoint(dir / "a.bin", ck);
  const auto back = load_checkpoint(dir / "a.bin");
  CHECK(back.architecture == ck.architecture);
  CHECK(back.epoch == 7);
  CHECK(back.fold_id == 2);
  CHECK(back.best_val_loss == 0.125);
  CHECK(back.train_config_digest == "deadbeef");
  REQUIRE(back.tensors.size() == ck.tensors.size());

  auto clone = instantiate(back);
  CHECK_FALSE(clone.training());
  const auto after = clone.forward(x);
  CHECK(after.od.data == before.od.data);
  CHECK(after.oc.data == before.oc.data);
  CHECK(after.p == before.p);

  save_checkpoint(dir / "b.bin", back);
  std::ifstream fa(dir / "a.bin", std::ios::binary), fb(dir / "b.bin", std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
  CHECK(sa == sb);

  SUBCASE("infinite best loss survives the round trip") {
    Checkpoint fresh = snapshot(net);
    save_checkpoint(dir / "c.bin", fresh);
    CHECK(std::isinf(load_checkpoint(dir / "c.bin").best_val_loss));
  }
  SUBCASE("corrupt and mismatched checkpoints") {
    std::ofstream(dir / "bad.bin", std::ios::binary) << "FUNDCKPT garbage";
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.bin"), CheckpointError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.bin"), CheckpointError);
    MultiTaskNet<float> other(ArchitectureConfig::reduced(64, false), 0);
    CHECK_THROWS_AS(restore(other, ck), ArchitectureMismatch);
    auto broken = ck;
    broken.tensors.pop_back();
    CHECK_THROWS_AS(restore(net, broken), CheckpointError);
  }
}

TEST_CASE("ensemble averaging") {
  const auto cfg = ArchitectureConfig::reduced(64, true);
  std::vector<Checkpoint> cks;
  for (int i = 0; i < 3; ++i) {
    MultiTaskNet<float> m(cfg, 50 + i);
    cks.push_back(snapshot(m));
  }
  const auto x = random_input(2, 64, 9);

  SUBCASE("a single model is its own forward pass") {
    auto m = instantiate(cks[0]);
    const auto ref = m.forward(x);
    const auto e = ensemble_predict(std::span<const Checkpoint>(cks.data(), 1), x);
    for (std::size_t i = 0; i < ref.od.size(); ++i) REQUIRE(e.od.data[i] == static_cast<double>(ref.od.data[i]));
    CHECK(e.p[0] == static_cast<double>(ref.p[0]));
  }
  SUBCASE("element-wise mean of the individual outputs") {
    const auto e = ensemble_predict(cks, x);
    std::vector<ModelOutputs<float>> outs;
    for (const auto& c : cks) {
      auto m = instantiate(c);
      outs.push_back(m.forward(x));
    }
    double worst = 0;
    for (std::size_t i = 0; i < e.od.size(); ++i) {
      double od = 0, oc = 0;
      for (const auto& o : outs) {
        od += o.od.data[i];
        oc += o.oc.data[i];
      }
      worst = std::max({worst, std::abs(e.od.data[i] - od / 3), std::abs(e.oc.data[i] - oc / 3)});
    }
    for (std::size_t b = 0; b < 2; ++b) {
      double p = 0;
      for (const auto& o : outs) p += o.p[b];
      worst = std::max(worst, std::abs(e.p[b] - p / 3));
    }
    CHECK(worst < 1e-12);

    Ensemble held(cks);
    CHECK(held.size() == 3);
    const auto again = held.predict(x);
    CHECK(again.od.data == e.od.data);
    CHECK(again.p == e.p);
  }
  SUBCASE("probabilities 0.2 and 0.8 average to 0.5") {
    std::vector<Checkpoint> pair;
    for (double target : {0.2, 0.8}) {
      MultiTaskNet<float> m(cfg, 1);
      for (auto* p : m.parameters())
        if (p->name.rfind("cls.fc", 0) == 0) p->value.zero();
      for (auto* p : m.parameters())
        if (p->name == "cls.fc.bias") p->value.data[0] = static_cast<float>(std::log(target / (1 - target)));
      pair.push_back(snapshot(m));
    }
    const auto e = ensemble_predict(pair, x);
    CHECK(e.p[0] == doctest::Approx(0.5).epsilon(1e-6));
  }
  SUBCASE("mixed architectures are rejected") {
    MultiTaskNet<float> wide(ArchitectureConfig::reduced(64, false), 0);
    cks.push_back(snapshot(wide));
    CHECK_THROWS_AS(ensemble_predict(cks, x), ArchitectureMismatch);
    CHECK_THROWS_AS(Ensemble{cks}, ArchitectureMismatch);
  }
}

TEST_CASE("train rejects missing ground truth and wrong sizes") {
  const auto arch = ArchitectureConfig::reduced(64, true);
  auto data = tiny_set(3, 1, 5);
  auto no_mask = data;
  no_mask[1].oc_mask.reset();
  CHECK_THROWS_AS(train(no_mask, data, arch, quick_config(1)), MissingGroundTruth);
  auto no_label = data;
  no_label[0].label.reset();
  CHECK_THROWS_AS(train(data, no_label, arch, quick_config(1)), MissingGroundTruth);
  const auto big = tiny_set(2, 1, 5, 96);
  CHECK_THROWS_AS(train(big, big, arch, quick_config(1)), ShapeError);
}

TEST_CASE("a runaway learning rate raises DivergedLoss with the log kept") {
  const auto arch = ArchitectureConfig::reduced(64, true);
  const auto data = tiny_set(3, 1, 8);
  auto cfg = quick_config(40);
  cfg.learning_rate = 1e30;
  cfg.batch_size = 2;
  try {
    train(data, data, arch, cfg);
    FAIL("expected DivergedLoss");
  } catch (const DivergedLoss& e) {
    for (const auto& rec : e.log().epochs) CHECK(std::isfinite(rec.train.total));
  }
}

TEST_CASE("short training: determinism, best checkpoint and log bookkeeping") {
  const auto arch = ArchitectureConfig::reduced(64, true);
  const auto train_set = tiny_set(6, 2, 21), val_set = tiny_set(3, 1, 22);
  auto cfg = quick_config(3);
  std::vector<int> seen;
  const auto a = train(train_set, val_set, arch, cfg, 1, [&](const EpochRecord& r) { seen.push_back(r.epoch); });
  const auto b = train(train_set, val_set, arch, cfg, 1);
  CHECK(seen == std::vector<int>{0, 1, 2});
  CHECK(a.log.to_csv() == b.log.to_csv());
  REQUIRE(a.checkpoint.tensors.size() == b.checkpoint.tensors.size());
  for (std::size_t i = 0; i < a.checkpoint.tensors.size(); ++i)
    REQUIRE(a.checkpoint.tensors[i].tensor.data == b.checkpoint.tensors[i].tensor.data);

  double best = std::numeric_limits<double>::infinity();
  for (const auto& r : a.log.epochs) best = std::min(best, r.val.total);
  CHECK(a.checkpoint.best_val_loss == best);
  CHECK(a.log.epochs[a.checkpoint.epoch].val.total == best);
  CHECK(a.checkpoint.fold_id == 1);
  CHECK(a.checkpoint.train_config_digest == cfg.digest());

  cfg.seed = 4;
  const auto c = train(train_set, val_set, arch, cfg, 1);
  CHECK(c.log.to_csv() != a.log.to_csv());
}

TEST_CASE("cross-validation fold mechanics") {
  PipelineConfig cfg;
  cfg.architecture = ArchitectureConfig::reduced(64, true);
  cfg.train = quick_config(1);
  cfg.train.inner_val_folds = 2;
  const auto data = tiny_set(4, 4, 31, 128);
  const auto folds = cross_validate(data, 2, cfg);
  REQUIRE(folds.size() == 2);
  std::set<std::string> all;
  for (const auto& f : folds) {
    CHECK(f.report.segmentation.per_image.size() == 4);
    CHECK(f.report.metadata.fold_id == f.checkpoint.fold_id);
    for (const auto& s : f.report.segmentation.per_image) CHECK(all.insert(s.id).second);
  }
  CHECK(all.size() == 8);
}

TEST_CASE("end-to-end inference") {
  MultiTaskNet<float> net(ArchitectureConfig::reduced(64, true), 2);
  const std::array<Checkpoint, 1> cks{snapshot(net)};
  Ensemble ens(cks);
  const auto img = tiny_set(1, 0, 3, 200).front().image;
  const auto a = infer_end_to_end(img, ens, {});
  const auto b = infer_end_to_end(img, ens, {});
  CHECK(a.od_full == b.od_full);
  CHECK(a.p_glaucoma == b.p_glaucoma);
  CHECK(a.cdr == b.cdr);
  CHECK(a.od_full.height == 200);
  CHECK(a.od_soft.height == 64);
  RgbImage gray(120, 120, 90);
  CHECK_THROWS_AS(infer_end_to_end(gray, ens, {}), NoDiscFound);
}

TEST_CASE("configuration") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.early_stop_term = "accuracy";
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.learning_rate = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  PipelineConfig p;
  p.train.seed = 99;
  p.train.augment.max_rotation = 7;
  p.postprocess.opening_radius = 3;
  p.architecture = ArchitectureConfig::reduced(128, true);
  const nlohmann::json j = p;
  const auto back = j.get<PipelineConfig>();
  CHECK(nlohmann::json(back) == j);
  CHECK(back.train.digest() == p.train.digest());
  p.train.seed = 100;
  CHECK(p.train.digest() != back.train.digest());

  const auto dir = scratch("config");
  std::ofstream(dir / "partial.json") << R"({"train": {"max_epochs": 12}})";
  const auto loaded = load_pipeline_config(dir / "partial.json");
  CHECK(loaded.train.max_epochs == 12);
  CHECK(loaded.train.batch_size == 32);
  CHECK(loaded.architecture == ArchitectureConfig{});
  CHECK_THROWS_AS(load_pipeline_config(dir / "absent.json"), ConfigError);
  std::ofstream(dir / "broken.json") << "{ not json";
  CHECK_THROWS_AS(load_pipeline_config(dir / "broken.json"), ConfigError);
}

TEST_CASE("inner validation split clamps its part count to the smallest class") {
  std::vector<Label> labels(20, Label::normal);
  for (int i = 0; i < 3; ++i) labels[i * 5] = Label::glaucoma;
  const auto split = inner_validation_split(labels, 8, 1);
  REQUIRE(split.has_value());
  // Three parts: the held-out part has one glaucoma image and a third of the normals, rounded.
  int pos = 0;
  for (auto i : split->val) pos += labels[i] == Label::glaucoma;
  CHECK(pos == 1);
  CHECK(split->train.size() + split->val.size() == 20);
  std::set<std::size_t> all(split->train.begin(), split->train.end());
  all.insert(split->val.begin(), split->val.end());
  CHECK(all.size() == 20);

  labels[5] = labels[10] = Label::normal;
  CHECK_FALSE(inner_validation_split(labels, 8, 1).has_value());
  CHECK_FALSE(inner_validation_split(labels, 1, 1).has_value());
  CHECK(inner_validation_split(std::vector<Label>(10, Label::normal), 4, 0).has_value());
}
