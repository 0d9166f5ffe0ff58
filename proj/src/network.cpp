#include "fundus/network.hpp"

#include <numeric>

#include "fundus/errors.hpp"

namespace fundus {

namespace {

std::int64_t conv_params(int in, int out, bool bn) { return static_cast<std::int64_t>(in) * out * 9 + out + (bn ? 2 * out : 0); }

std::int64_t analytic_parameter_count(const ArchitectureConfig& c) {
  std::int64_t total = 0;
  int in = c.in_channels;
  for (int w : c.encoder_widths) {
    total += conv_params(in, w, c.batch_norm) + conv_params(w, w, c.batch_norm);
    in = w;
  }
  const std::size_t stages = c.encoder_widths.size();
  for (std::size_t j = 0; j < stages; ++j) {
    const int skip = c.encoder_widths[stages - 1 - j];
    const int w = c.decoder_widths[j];
    total += conv_params(in, w, c.batch_norm) + conv_params(w + skip, w, c.batch_norm) + conv_params(w, w, c.batch_norm);
    in = w;
  }
  total += 2 * conv_params(in, 1, false);
  total += conv_params(c.bottleneck_channels, c.appearance_filters, c.batch_norm);
  in = 2;
  for (int w : c.structural_widths) {
    total += conv_params(in, w, c.batch_norm);
    in = w;
  }
  total += c.appearance_filters + c.structural_widths.back() + 1;
  return total;
}

}  // namespace

void ArchitectureConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigShapeError(msg); };
  if (input_side < 8 || in_channels < 1) fail("input side and channel count too small");
  if (encoder_widths.empty()) fail("encoder needs at least one stage");
  if (decoder_widths.size() != encoder_widths.size()) fail("decoder must mirror the encoder stage count");
  if (structural_widths.size() != encoder_widths.size() + 1)
    fail("structural path needs one stride-2 convolution per encoder stage plus one unpadded reduction");
  if (encoder_widths.back() != bottleneck_channels) fail("last encoder width must equal bottleneck_channels");
  if (appearance_filters < 1) fail("appearance_filters must be positive");
  for (const auto* list : {&encoder_widths, &decoder_widths, &structural_widths})
    for (int w : *list)
      if (w < 1) fail("channel widths must be positive");
  const ShapeLedger shapes = plan_shapes(*this);
  if (shapes.bottleneck.side < 3) fail("bottleneck smaller than the 3x3 appearance kernel");
  if (shapes.appearance.side != shapes.structural.side) fail("appearance and structural maps differ in size");
  if (analytic_parameter_count(*this) > parameter_budget) fail("parameter count exceeds the budget");
}

ArchitectureConfig ArchitectureConfig::reduced(int side, bool narrow) {
  ArchitectureConfig c;
  c.input_side = side;
  if (narrow) {
    c.encoder_widths = {8, 16, 32, 64};
    c.decoder_widths = {32, 16, 8, 8};
    c.structural_widths = {4, 8, 16, 24, 48};
    c.bottleneck_channels = 64;
  }
  return c;
}

void to_json(nlohmann::json& j, const ArchitectureConfig& c) {
  j = nlohmann::json{{"input_side", c.input_side},
                     {"in_channels", c.in_channels},
                     {"encoder_widths", c.encoder_widths},
                     {"decoder_widths", c.decoder_widths},
                     {"appearance_filters", c.appearance_filters},
                     {"structural_widths", c.structural_widths},
                     {"bottleneck_channels", c.bottleneck_channels},
                     {"batch_norm", c.batch_norm},
                     {"parameter_budget", c.parameter_budget}};
}

void from_json(const nlohmann::json& j, ArchitectureConfig& c) {
  ArchitectureConfig d;
  c.input_side = j.value("input_side", d.input_side);
  c.in_channels = j.value("in_channels", d.in_channels);
  c.encoder_widths = j.value("encoder_widths", d.encoder_widths);
  c.decoder_widths = j.value("decoder_widths", d.decoder_widths);
  c.appearance_filters = j.value("appearance_filters", d.appearance_filters);
  c.structural_widths = j.value("structural_widths", d.structural_widths);
  c.bottleneck_channels = j.value("bottleneck_channels", d.bottleneck_channels);
  c.batch_norm = j.value("batch_norm", d.batch_norm);
  c.parameter_budget = j.value("parameter_budget", d.parameter_budget);
}

ShapeLedger plan_shapes(const ArchitectureConfig& cfg) {
  ShapeLedger s;
  int side = cfg.input_side;
  s.encoder_sides.push_back(side);
  for (std::size_t i = 0; i < cfg.encoder_widths.size(); ++i) {
    side = (side + 1) / 2;
    s.encoder_sides.push_back(side);
  }
  s.bottleneck = {side, cfg.encoder_widths.empty() ? 0 : cfg.encoder_widths.back()};
  s.appearance = {(side - 3) / 2 + 1, cfg.appearance_filters};
  int st = cfg.input_side;
  for (std::size_t i = 0; i + 1 < cfg.structural_widths.size(); ++i) st = (st + 1) / 2;
  s.structural = {(st - 3) / 2 + 1, cfg.structural_widths.empty() ? 0 : cfg.structural_widths.back()};
  s.pooled_features = cfg.appearance_filters + s.structural.channels;
  s.outputs = 1;
  return s;
}

template <typename T>
MultiTaskNet<T>::MultiTaskNet(ArchitectureConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const bool bn = cfg_.batch_norm;
  const std::size_t stages = cfg_.encoder_widths.size();
  int in = cfg_.in_channels;
  for (std::size_t i = 0; i < stages; ++i) {
    const int w = cfg_.encoder_widths[i];
    const std::string prefix = "enc" + std::to_string(i + 1);
    encoder_.push_back({nn::ConvBlock<T>(prefix + ".conv1", in, w, 1, 1, bn, true),
                        nn::ConvBlock<T>(prefix + ".conv2", w, w, 1, 1, bn, true), {}});
    in = w;
  }
  for (std::size_t j = 0; j < stages; ++j) {
    const int skip = cfg_.encoder_widths[stages - 1 - j];
    const int w = cfg_.decoder_widths[j];
    const std::string prefix = "dec" + std::to_string(j + 1);
    DecoderStage d;
    d.conv0 = nn::ConvBlock<T>(prefix + ".conv0", in, w, 1, 1, bn, true);
    d.conv1 = nn::ConvBlock<T>(prefix + ".conv1", w + skip, w, 1, 1, bn, true);
    d.conv2 = nn::ConvBlock<T>(prefix + ".conv2", w, w, 1, 1, bn, true);
    d.up_channels = w;
    decoder_.push_back(std::move(d));
    in = w;
  }
  head_od_ = nn::ConvBlock<T>("head.od", in, 1, 1, 1, false, false);
  head_oc_ = nn::ConvBlock<T>("head.oc", in, 1, 1, 1, false, false);
  appear_ = nn::ConvBlock<T>("appear.conv", cfg_.bottleneck_channels, cfg_.appearance_filters, 2, 0, bn, true);
  in = 2;
  for (std::size_t i = 0; i < cfg_.structural_widths.size(); ++i) {
    const bool last = i + 1 == cfg_.structural_widths.size();
    structural_.emplace_back("struct.conv" + std::to_string(i + 1), in, cfg_.structural_widths[i], 2, last ? 0 : 1,
                             bn, true);
    in = cfg_.structural_widths[i];
  }
  classifier_ = nn::Linear<T>("cls.fc", cfg_.appearance_filters + in, 1);

  Rng rng(seed);
  for (auto& e : encoder_) {
    e.conv1.init(rng);
    e.conv2.init(rng);
  }
  for (auto& d : decoder_) {
    d.conv0.init(rng);
    d.conv1.init(rng);
    d.conv2.init(rng);
  }
  head_od_.init(rng);
  head_oc_.init(rng);
  appear_.init(rng);
  for (auto& s : structural_) s.init(rng);
  classifier_.init(rng, 1.0);
}

template <typename T>
ModelOutputs<T> MultiTaskNet<T>::forward(const nn::Tensor<T>& input) {
  if (input.c != cfg_.in_channels || input.h != cfg_.input_side || input.w != cfg_.input_side || input.n < 1)
    throw ShapeError("model input must be B x " + std::to_string(cfg_.in_channels) + " x " +
                     std::to_string(cfg_.input_side) + " x " + std::to_string(cfg_.input_side));
  observed_ = {};
  observed_.encoder_sides.push_back(input.h);

  std::vector<nn::Tensor<T>> skips;
  nn::Tensor<T> x = input;
  for (auto& stage : encoder_) {
    x = stage.conv1.forward(x, training_);
    x = stage.conv2.forward(x, training_);
    skips.push_back(x);
    x = stage.pool.forward(x);
    observed_.encoder_sides.push_back(x.h);
  }
  const nn::Tensor<T> bottleneck = std::move(x);
  observed_.bottleneck = {bottleneck.h, bottleneck.c};

  nn::Tensor<T> d = bottleneck;
  for (std::size_t j = 0; j < decoder_.size(); ++j) {
    auto& stage = decoder_[j];
    const auto& skip = skips[skips.size() - 1 - j];
    d = stage.up.forward(d, skip.h, skip.w);
    d = stage.conv0.forward(d, training_);
    d = nn::concat_channels(d, skip);
    d = stage.conv1.forward(d, training_);
    d = stage.conv2.forward(d, training_);
  }
  skips.clear();

  out_.od = nn::sigmoid(head_od_.forward(d, training_));
  out_.oc = nn::sigmoid(head_oc_.forward(d, training_));

  // The classifier sees the raw soft masks, not post-processed ones.
  nn::Tensor<T> st = nn::concat_channels(out_.od, out_.oc);
  for (auto& block : structural_) st = block.forward(st, training_);
  observed_.structural = {st.h, st.c};
  nn::Tensor<T> ap = appear_.forward(bottleneck, training_);
  observed_.appearance = {ap.h, ap.c};
  if (ap.h != st.h || ap.w != st.w) throw ShapeError("appearance and structural maps differ in size");

  const nn::Tensor<T> features = nn::concat_channels(ap, st);
  feature_h_ = features.h;
  feature_w_ = features.w;
  const nn::Tensor<T> pooled = nn::global_average_pool(features);
  observed_.pooled_features = pooled.c;
  const nn::Tensor<T> logit = classifier_.forward(pooled);
  observed_.outputs = logit.c;
  out_.p.resize(logit.n);
  for (int i = 0; i < logit.n; ++i) out_.p[i] = T(1) / (T(1) + std::exp(-logit.data[i]));
  return out_;
}

template <typename T>
void MultiTaskNet<T>::backward(const OutputGrads<T>& grads) {
  const int batch = out_.od.n;
  nn::Tensor<T> dlogit(batch, 1, 1, 1);
  if (!grads.p.empty())
    for (int i = 0; i < batch; ++i) dlogit.data[i] = grads.p[i] * out_.p[i] * (T(1) - out_.p[i]);

  const nn::Tensor<T> dpooled = classifier_.backward(dlogit);
  const nn::Tensor<T> dfeatures = nn::global_average_pool_backward(dpooled, feature_h_, feature_w_);
  auto [dap, dst] = nn::split_channels(dfeatures, cfg_.appearance_filters);
  nn::Tensor<T> dbottleneck = appear_.backward(dap);
  for (auto it = structural_.rbegin(); it != structural_.rend(); ++it) dst = it->backward(dst);
  auto [dod, doc] = nn::split_channels(dst, 1);
  if (!grads.od.data.empty()) nn::add_inplace(dod, grads.od);
  if (!grads.oc.data.empty()) nn::add_inplace(doc, grads.oc);

  nn::Tensor<T> dd = head_od_.backward(nn::sigmoid_backward(dod, out_.od));
  nn::add_inplace(dd, head_oc_.backward(nn::sigmoid_backward(doc, out_.oc)));

  std::vector<nn::Tensor<T>> dskips(decoder_.size());
  for (std::size_t j = decoder_.size(); j-- > 0;) {
    auto& stage = decoder_[j];
    dd = stage.conv2.backward(dd);
    dd = stage.conv1.backward(dd);
    auto [dup, dskip] = nn::split_channels(dd, stage.up_channels);
    dskips[j] = std::move(dskip);
    dd = stage.up.backward(stage.conv0.backward(dup));
  }
  nn::add_inplace(dd, dbottleneck);

  for (std::size_t i = encoder_.size(); i-- > 0;) {
    auto& stage = encoder_[i];
    dd = stage.pool.backward(dd);
    nn::add_inplace(dd, dskips[encoder_.size() - 1 - i]);
    dd = stage.conv2.backward(dd);
    dd = stage.conv1.backward(dd, i > 0);
  }
}

template <typename T>
void MultiTaskNet<T>::zero_grad() {
  for (auto* p : parameters()) p->grad.zero();
}

template <typename T>
std::vector<nn::Param<T>*> MultiTaskNet<T>::parameters() {
  std::vector<nn::Param<T>*> out;
  for (auto& e : encoder_) {
    e.conv1.collect(out);
    e.conv2.collect(out);
  }
  for (auto& d : decoder_) {
    d.conv0.collect(out);
    d.conv1.collect(out);
    d.conv2.collect(out);
  }
  head_od_.collect(out);
  head_oc_.collect(out);
  appear_.collect(out);
  for (auto& s : structural_) s.collect(out);
  classifier_.collect(out);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, nn::Tensor<T>*>> MultiTaskNet<T>::buffers() {
  std::vector<std::pair<std::string, nn::Tensor<T>*>> out;
  for (auto& e : encoder_) {
    e.conv1.collect_buffers(out);
    e.conv2.collect_buffers(out);
  }
  for (auto& d : decoder_) {
    d.conv0.collect_buffers(out);
    d.conv1.collect_buffers(out);
    d.conv2.collect_buffers(out);
  }
  appear_.collect_buffers(out);
  for (auto& s : structural_) s.collect_buffers(out);
  return out;
}

template <typename T>
std::size_t MultiTaskNet<T>::count_parameters() const {
  std::size_t n = 0;
  for (const auto* p : const_cast<MultiTaskNet*>(this)->parameters()) n += p->value.size();
  return n;
}

template <typename T>
std::size_t MultiTaskNet<T>::classifier_parameter_count() const {
  return classifier_.weight.value.size() + classifier_.bias.value.size();
}

template class MultiTaskNet<float>;
template class MultiTaskNet<double>;

}  // namespace fundus
