#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "fundus/errors.hpp"
#include "fundus/network.hpp"
#include "fundus/nn/layers.hpp"

using namespace fundus;
using nn::Tensor;

namespace {

template <typename T>
Tensor<T> random_tensor(int n, int c, int h, int w, Rng& rng, double lo = -1, double hi = 1) {
  Tensor<T> t(n, c, h, w);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data) v = static_cast<T>(u(rng));
  return t;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

// Checks d<probe, f(x)>/dx against central differences at a handful of coordinates.
void check_input_grad(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                      const std::function<Tensor<double>(const Tensor<double>&)>& backward, Tensor<double> x,
                      const Tensor<double>& probe, Rng& rng, int coords = 12) {
  const auto y = f(x);
  REQUIRE(y.same_shape(probe));
  const auto dx = backward(probe);
  REQUIRE(dx.same_shape(x));
  std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
  const double h = 1e-6;
  for (int t = 0; t < coords; ++t) {
    const auto i = pick(rng);
    const double keep = x.data[i];
    x.data[i] = keep + h;
    const double up = dot(f(x), probe);
    x.data[i] = keep - h;
    const double down = dot(f(x), probe);
    x.data[i] = keep;
    const double fd = (up - down) / (2 * h);
    if (std::abs(fd) < 1e-7 && std::abs(dx.data[i]) < 1e-7) continue;
    CHECK(rel_err(fd, dx.data[i]) < 1e-5);
  }
}

}  // namespace

TEST_CASE("default architecture shape ledger") {
  const ArchitectureConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  const auto s = plan_shapes(cfg);
  CHECK(s.encoder_sides == std::vector<int>{400, 200, 100, 50, 25});
  CHECK(s.bottleneck == MapShape{25, 128});
  CHECK(s.appearance == MapShape{12, 5});
  CHECK(s.structural == MapShape{12, 48});
  CHECK(s.pooled_features == 53);
  CHECK(s.outputs == 1);
}

TEST_CASE("default model fits the parameter budget and has a 54-parameter classifier") {
  MultiTaskNet<float> net(ArchitectureConfig{}, 1);
  CHECK(net.count_parameters() <= 700000);
  CHECK(net.classifier_parameter_count() == 54);
  std::size_t manual = 0;
  for (auto* p : net.parameters()) manual += p->value.size();
  CHECK(manual == net.count_parameters());
}

TEST_CASE("reduced configurations validate and keep the classifier size") {
  for (int side : {64, 128, 200}) {
    for (bool narrow : {false, true}) {
      const auto cfg = ArchitectureConfig::reduced(side, narrow);
      CHECK_NOTHROW(cfg.validate());
      const auto s = plan_shapes(cfg);
      CHECK(s.appearance.side == s.structural.side);
      CHECK(s.pooled_features == 53);
      MultiTaskNet<float> net(cfg, 0);
      CHECK(net.classifier_parameter_count() == 54);
    }
  }
}

TEST_CASE("invalid architectures throw ConfigShapeError") {
  auto bad = ArchitectureConfig{};
  bad.structural_widths.pop_back();
  CHECK_THROWS_AS(bad.validate(), ConfigShapeError);
  bad = {};
  bad.decoder_widths = {64, 32};
  CHECK_THROWS_AS(bad.validate(), ConfigShapeError);
  bad = {};
  bad.bottleneck_channels = 96;
  CHECK_THROWS_AS(bad.validate(), ConfigShapeError);
  bad = {};
  bad.encoder_widths = {64, 128, 256, 512};
  bad.bottleneck_channels = 512;
  CHECK_THROWS_AS(bad.validate(), ConfigShapeError);
  bad = ArchitectureConfig::reduced(16, true);
  CHECK_THROWS_AS(bad.validate(), ConfigShapeError);
  CHECK_THROWS_AS(MultiTaskNet<float>(bad, 0), ConfigShapeError);
}

TEST_CASE("forward at 64x64: output shapes, ranges and the observed ledger") {
  const auto cfg = ArchitectureConfig::reduced(64, true);
  MultiTaskNet<float> net(cfg, 3);
  Rng rng(1);
  const auto x = random_tensor<float>(2, 3, 64, 64, rng, 0, 1);
  const auto out = net.forward(x);
  CHECK(out.od.shape() == std::array<int, 4>{2, 1, 64, 64});
  CHECK(out.oc.shape() == std::array<int, 4>{2, 1, 64, 64});
  REQUIRE(out.p.size() == 2);
  for (float v : out.od.data) CHECK((v >= 0 && v <= 1));
  for (float v : out.p) CHECK((v > 0 && v < 1));
  CHECK(net.observed_shapes().bottleneck == plan_shapes(cfg).bottleneck);
  CHECK(net.observed_shapes().appearance == plan_shapes(cfg).appearance);
  CHECK(net.observed_shapes().structural == plan_shapes(cfg).structural);
  CHECK(net.observed_shapes().pooled_features == 53);
}

TEST_CASE("wrong input size throws ShapeError") {
  MultiTaskNet<float> net(ArchitectureConfig::reduced(64, true), 0);
  Tensor<float> x(1, 3, 32, 32);
  CHECK_THROWS_AS(net.forward(x), ShapeError);
  Tensor<float> y(1, 1, 64, 64);
  CHECK_THROWS_AS(net.forward(y), ShapeError);
}

TEST_CASE("initialization is a function of the seed") {
  const auto cfg = ArchitectureConfig::reduced(64, true);
  MultiTaskNet<float> a(cfg, 5), b(cfg, 5), c(cfg, 6);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool same_ab = true, same_ac = true;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    same_ab = same_ab && pa[i]->value.data == pb[i]->value.data;
    same_ac = same_ac && pa[i]->value.data == pc[i]->value.data;
  }
  CHECK(same_ab);
  CHECK_FALSE(same_ac);
}

TEST_CASE("eval mode makes each sample independent of its batch") {
  MultiTaskNet<double> net(ArchitectureConfig::reduced(64, true), 2);
  Rng rng(8);
  const auto x = random_tensor<double>(3, 3, 64, 64, rng, 0, 1);
  // A couple of training passes so running statistics move away from their initial values.
  for (int i = 0; i < 2; ++i) net.forward(x);
  net.set_training(false);
  const auto batch = net.forward(x);
  Tensor<double> one(1, 3, 64, 64);
  std::copy(x.sample(1), x.sample(1) + x.sample_size(), one.data.begin());
  const auto single = net.forward(one);
  CHECK(single.p[0] == doctest::Approx(batch.p[1]).epsilon(1e-12));
  for (std::size_t i = 0; i < single.od.size(); ++i)
    REQUIRE(single.od.data[i] == doctest::Approx(batch.od.sample(1)[i]).epsilon(1e-12));
}

TEST_CASE("layer gradients agree with central differences") {
  Rng rng(21);
  SUBCASE("conv stride 1 pad 1") {
    nn::Conv2d<double> conv("c", 3, 4, 1, 1);
    conv.init(rng, 2.0);
    auto x = random_tensor<double>(2, 3, 7, 6, rng);
    auto probe = random_tensor<double>(2, 4, 7, 6, rng);
    check_input_grad([&](const Tensor<double>& in) { return conv.forward(in); },
                     [&](const Tensor<double>& dy) { return conv.backward(dy); }, x, probe, rng);
  }
  SUBCASE("conv stride 2 pad 0 on an odd side") {
    nn::Conv2d<double> conv("c", 2, 3, 2, 0);
    conv.init(rng, 1.0);
    auto x = random_tensor<double>(1, 2, 9, 9, rng);
    auto probe = random_tensor<double>(1, 3, 4, 4, rng);
    check_input_grad([&](const Tensor<double>& in) { return conv.forward(in); },
                     [&](const Tensor<double>& dy) { return conv.backward(dy); }, x, probe, rng);
  }
  SUBCASE("batch norm in training mode") {
    nn::BatchNorm2d<double> bn("bn", 3);
    auto x = random_tensor<double>(4, 3, 3, 3, rng);
    auto probe = random_tensor<double>(4, 3, 3, 3, rng);
    check_input_grad([&](const Tensor<double>& in) { return bn.forward(in, true); },
                     [&](const Tensor<double>& dy) { return bn.backward(dy); }, x, probe, rng, 20);
  }
  SUBCASE("max pool with odd side") {
    nn::MaxPool2<double> pool;
    auto x = random_tensor<double>(1, 2, 5, 5, rng);
    auto probe = random_tensor<double>(1, 2, 3, 3, rng);
    check_input_grad([&](const Tensor<double>& in) { return pool.forward(in); },
                     [&](const Tensor<double>& dy) { return pool.backward(dy); }, x, probe, rng);
  }
  SUBCASE("upsample to an odd target") {
    nn::Upsample2<double> up;
    auto x = random_tensor<double>(1, 2, 3, 3, rng);
    auto probe = random_tensor<double>(1, 2, 5, 5, rng);
    check_input_grad([&](const Tensor<double>& in) { return up.forward(in, 5, 5); },
                     [&](const Tensor<double>& dy) { return up.backward(dy); }, x, probe, rng);
  }
  SUBCASE("linear") {
    nn::Linear<double> fc("fc", 6, 2);
    fc.init(rng, 1.0);
    auto x = random_tensor<double>(3, 6, 1, 1, rng);
    auto probe = random_tensor<double>(3, 2, 1, 1, rng);
    check_input_grad([&](const Tensor<double>& in) { return fc.forward(in); },
                     [&](const Tensor<double>& dy) { return fc.backward(dy); }, x, probe, rng);
  }
}

TEST_CASE("conv weight gradient agrees with central differences") {
  Rng rng(4);
  nn::Conv2d<double> conv("c", 2, 3, 2, 1);
  conv.init(rng, 2.0);
  const auto x = random_tensor<double>(2, 2, 6, 6, rng);
  const auto probe = random_tensor<double>(2, 3, 3, 3, rng);
  for (auto* p : std::vector<nn::Param<double>*>{&conv.weight, &conv.bias}) p->grad.zero();
  conv.forward(x);
  conv.backward(probe, false);
  for (auto* p : std::vector<nn::Param<double>*>{&conv.weight, &conv.bias}) {
    for (std::size_t i = 0; i < p->value.size(); i += 3) {
      const double keep = p->value.data[i], h = 1e-6;
      p->value.data[i] = keep + h;
      const double up = dot(conv.forward(x), probe);
      p->value.data[i] = keep - h;
      const double down = dot(conv.forward(x), probe);
      p->value.data[i] = keep;
      CHECK(rel_err((up - down) / (2 * h), p->grad.data[i]) < 1e-6);
    }
  }
}

TEST_CASE("full model parameter gradient on a few coordinates") {
  MultiTaskNet<double> net(ArchitectureConfig::reduced(64, true), 9);
  Rng rng(2);
  const auto x = random_tensor<double>(2, 3, 64, 64, rng, 0, 1);
  auto probe_od = random_tensor<double>(2, 1, 64, 64, rng);
  auto probe_oc = random_tensor<double>(2, 1, 64, 64, rng);
  const std::vector<double> probe_p{0.7, -1.3};
  auto objective = [&]() {
    const auto out = net.forward(x);
    return dot(out.od, probe_od) + dot(out.oc, probe_oc) + out.p[0] * probe_p[0] + out.p[1] * probe_p[1];
  };
  net.zero_grad();
  objective();
  net.backward({probe_od, probe_oc, probe_p});
  auto params = net.parameters();
  std::uniform_int_distribution<std::size_t> which(0, params.size() - 1);
  auto central = [&](double& w, double h) {
    const double keep = w;
    w = keep + h;
    const double up = objective();
    w = keep - h;
    const double down = objective();
    w = keep;
    return (up - down) / (2 * h);
  };
  int checked = 0, kinks = 0;
  for (int t = 0; t < 25; ++t) {
    auto* p = params[which(rng)];
    std::uniform_int_distribution<std::size_t> idx(0, p->value.size() - 1);
    const auto i = idx(rng);
    const double fd = central(p->value.data[i], 1e-7), fd_half = central(p->value.data[i], 2.5e-8);
    // A ReLU or max-pool switch inside the step makes the two estimates disagree.
    if (std::abs(fd - fd_half) > 1e-4 * std::max(1.0, std::abs(fd))) {
      ++kinks;
      continue;
    }
    ++checked;
    const double g = p->grad.data[i];
    CHECK_MESSAGE((std::abs(fd - g) < 1e-6 || rel_err(fd, g) < 1e-3), p->name);
  }
  CHECK(kinks <= 5);
  CHECK(checked >= 20);
}
