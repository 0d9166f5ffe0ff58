#include "fundus/losses.hpp"

#include <algorithm>
#include <cmath>

#include "fundus/errors.hpp"

namespace fundus::loss {

void LossWeights::validate() const {
  if (od < 0 || cp < 0 || cls < 0) throw ConfigError("loss weights must be non-negative");
  if (od == 0 && cp == 0 && cls == 0) throw ConfigError("at least one loss weight must be positive");
}

namespace {

template <typename T>
void dice_sums(std::span<const T> r, std::span<const T> y, double& inter, double& total) {
  if (r.size() != y.size()) throw ShapeMismatch("dice: prediction and target differ in size");
  inter = 0;
  total = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    inter += static_cast<double>(r[i]) * y[i];
    total += static_cast<double>(r[i]) + y[i];
  }
}

}  // namespace

template <typename T>
double soft_dice(std::span<const T> r, std::span<const T> y) {
  double inter, total;
  dice_sums(r, y, inter, total);
  return (2 * inter + kDiceEps) / (total + kDiceEps);
}

double soft_dice(const SoftMap& r, const Mask& y) {
  if (!r.same_shape(y)) throw ShapeMismatch("dice: prediction and target differ in shape");
  std::vector<float> yf(y.data.begin(), y.data.end());
  return soft_dice<float>(r.data, yf);
}

template <typename T>
double dice_loss(std::span<const T> r, std::span<const T> y) {
  return 1.0 - soft_dice(r, y);
}

template <typename T>
double dice_loss_grad(std::span<const T> r, std::span<const T> y, std::span<T> grad) {
  double inter, total;
  dice_sums(r, y, inter, total);
  if (grad.size() != r.size()) throw ShapeMismatch("dice: gradient buffer size");
  const double num = 2 * inter + kDiceEps, den = total + kDiceEps;
  // d(num/den)/dr_i = (2 y_i den - num) / den^2
  const double inv_den2 = 1.0 / (den * den);
  for (std::size_t i = 0; i < r.size(); ++i) grad[i] = static_cast<T>(-(2.0 * y[i] * den - num) * inv_den2);
  return 1.0 - num / den;
}

double bce(double p, int label) {
  const double q = std::clamp(p, kBceDelta, 1.0 - kBceDelta);
  return label ? -std::log(q) : -std::log(1.0 - q);
}

double bce_grad(double p, int label) {
  if (p < kBceDelta || p > 1.0 - kBceDelta) return 0.0;
  return label ? -1.0 / p : 1.0 / (1.0 - p);
}

template <typename T>
LossBreakdown total_loss(const ModelOutputs<T>& out, const GroundTruth<T>& gt, const LossWeights& w,
                         OutputGrads<T>* grads) {
  const int batch = static_cast<int>(out.p.size());
  if (batch == 0) throw MissingGroundTruth("empty batch");
  if (!gt.od.same_shape(out.od) || !gt.oc.same_shape(out.oc))
    throw MissingGroundTruth("ground-truth masks missing or misaligned with predictions");
  if (static_cast<int>(gt.labels.size()) != batch) throw MissingGroundTruth("labels missing for the batch");

  if (grads) {
    grads->od = nn::Tensor<T>(out.od.n, out.od.c, out.od.h, out.od.w);
    grads->oc = nn::Tensor<T>(out.oc.n, out.oc.c, out.oc.h, out.oc.w);
    grads->p.assign(batch, T(0));
  }
  LossBreakdown b;
  const std::size_t n = out.od.sample_size();
  for (int i = 0; i < batch; ++i) {
    std::span<const T> r_od(out.od.sample(i), n), y_od(gt.od.sample(i), n);
    std::span<const T> r_oc(out.oc.sample(i), n), y_oc(gt.oc.sample(i), n);
    if (grads) {
      b.l_od += dice_loss_grad<T>(r_od, y_od, std::span<T>(grads->od.sample(i), n));
      b.l_cp += dice_loss_grad<T>(r_oc, y_oc, std::span<T>(grads->oc.sample(i), n));
      grads->p[i] = static_cast<T>(w.cls / batch * bce_grad(out.p[i], gt.labels[i]));
    } else {
      b.l_od += dice_loss<T>(r_od, y_od);
      b.l_cp += dice_loss<T>(r_oc, y_oc);
    }
    b.l_cls += bce(out.p[i], gt.labels[i]);
  }
  b.l_od /= batch;
  b.l_cp /= batch;
  b.l_cls /= batch;
  b.total = w.od * b.l_od + w.cp * b.l_cp + w.cls * b.l_cls;
  if (grads) {
    const T s_od = static_cast<T>(w.od / batch), s_cp = static_cast<T>(w.cp / batch);
    for (auto& g : grads->od.data) g *= s_od;
    for (auto& g : grads->oc.data) g *= s_cp;
  }
  return b;
}

#define FUNDUS_INSTANTIATE(T)                                                                            \
  template double soft_dice<T>(std::span<const T>, std::span<const T>);                                  \
  template double dice_loss<T>(std::span<const T>, std::span<const T>);                                  \
  template double dice_loss_grad<T>(std::span<const T>, std::span<const T>, std::span<T>);               \
  template LossBreakdown total_loss<T>(const ModelOutputs<T>&, const GroundTruth<T>&, const LossWeights&, \
                                       OutputGrads<T>*);

FUNDUS_INSTANTIATE(float)
FUNDUS_INSTANTIATE(double)

#undef FUNDUS_INSTANTIATE

}  // namespace fundus::loss
