// Thin numpy-facing wrapper over the C++ core. Arrays are copied in and out; nothing is shared.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "fundus/checkpoint.hpp"
#include "fundus/dataset.hpp"
#include "fundus/errors.hpp"
#include "fundus/losses.hpp"
#include "fundus/metrics.hpp"
#include "fundus/network.hpp"
#include "fundus/pipeline.hpp"
#include "fundus/postprocess.hpp"
#include "fundus/roi.hpp"

namespace py = pybind11;
using namespace fundus;

namespace {

using U8 = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using F32 = py::array_t<float, py::array::c_style | py::array::forcecast>;
using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;

Mask to_mask(const U8& a) {
  if (a.ndim() != 2) throw py::value_error("mask must be 2-D");
  Mask m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  const auto* p = a.data();
  for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = p[i] != 0;
  return m;
}

SoftMap to_soft(const F32& a) {
  if (a.ndim() != 2) throw py::value_error("soft map must be 2-D");
  SoftMap m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::memcpy(m.data.data(), a.data(), m.size() * sizeof(float));
  return m;
}

RgbImage to_rgb(const U8& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw py::value_error("image must be H x W x 3");
  RgbImage img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::memcpy(img.data.data(), a.data(), img.data.size());
  return img;
}

template <typename T>
py::array_t<T> from_plane(const Plane<T>& p) {
  py::array_t<T> out({p.height, p.width});
  std::memcpy(out.mutable_data(), p.data.data(), p.size() * sizeof(T));
  return out;
}

py::array_t<std::uint8_t> from_rgb(const RgbImage& img) {
  py::array_t<std::uint8_t> out({img.height, img.width, 3});
  std::memcpy(out.mutable_data(), img.data.data(), img.data.size());
  return out;
}

py::dict ellipse_dict(const Ellipse& e) {
  py::dict d;
  d["cx"] = e.cx;
  d["cy"] = e.cy;
  d["a"] = e.a;
  d["b"] = e.b;
  d["theta"] = e.theta;
  return d;
}

std::vector<double> as_vector(const F64& a) { return {a.data(), a.data() + a.size()}; }

std::vector<int> as_labels(const py::array_t<int, py::array::c_style | py::array::forcecast>& a) {
  return {a.data(), a.data() + a.size()};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Optic disc/cup segmentation and glaucoma classification core";

  py::register_exception<Error>(m, "FundusError", PyExc_RuntimeError);

  m.def(
      "synth_dataset",
      [](int n_normal, int n_glaucoma, int image_size, std::uint64_t seed) {
        SynthParams p;
        p.image_size = image_size;
        p.rng_seed = seed;
        py::list out;
        for (const auto& r : synth_dataset(p, n_normal, n_glaucoma)) {
          py::dict d;
          d["id"] = r.sample.id;
          d["image"] = from_rgb(r.sample.image);
          d["od"] = from_plane(*r.sample.od_mask);
          d["oc"] = from_plane(*r.sample.oc_mask);
          d["label"] = to_int(*r.sample.label);
          d["cdr"] = r.truth.cdr;
          out.append(d);
        }
        return out;
      },
      py::arg("n_normal"), py::arg("n_glaucoma"), py::arg("image_size") = 256, py::arg("seed") = 0);

  m.def(
      "locate_disc",
      [](const U8& image) {
        const auto box = locate_disc(to_rgb(image));
        return py::make_tuple(box.center_x, box.center_y, box.side);
      },
      "ROI box (center_x, center_y, side) around the detected optic disc", py::arg("image"));

  m.def(
      "crop_roi",
      [](const U8& image, double cx, double cy, double side, int out_size) {
        return from_rgb(crop_roi(to_rgb(image), RoiBox{cx, cy, side}, out_size).image);
      },
      py::arg("image"), py::arg("center_x"), py::arg("center_y"), py::arg("side"), py::arg("out_size") = 400);

  m.def(
      "soft_dice",
      [](const F64& r, const F64& y) { return loss::soft_dice<double>(as_vector(r), as_vector(y)); },
      py::arg("r"), py::arg("y"));
  m.def(
      "hard_dice", [](const U8& a, const U8& b) { return hard_dice(to_mask(a), to_mask(b)); }, py::arg("a"),
      py::arg("b"));
  m.def(
      "vertical_cdr", [](const U8& od, const U8& oc) { return vertical_cdr(to_mask(od), to_mask(oc)); }, py::arg("od"),
      py::arg("oc"));

  m.def(
      "roc_auc",
      [](const F64& scores, const py::array_t<int, py::array::c_style | py::array::forcecast>& labels) {
        const auto s = as_vector(scores);
        const auto y = as_labels(labels);
        const auto roc = roc_auc(s, y);
        py::dict d;
        d["auc"] = roc.auc;
        d["fpr"] = roc.fpr;
        d["tpr"] = roc.tpr;
        d["thresholds"] = roc.thresholds;
        return d;
      },
      py::arg("scores"), py::arg("labels"));
  m.def(
      "youden_cutoff",
      [](const F64& scores, const py::array_t<int, py::array::c_style | py::array::forcecast>& labels) {
        const auto s = as_vector(scores);
        const auto y = as_labels(labels);
        return youden_cutoff(s, y);
      },
      py::arg("scores"), py::arg("labels"));

  m.def(
      "stratified_kfold",
      [](const std::vector<int>& labels, int k, std::uint64_t seed) {
        std::vector<Label> ls;
        for (int l : labels) ls.push_back(l ? Label::glaucoma : Label::normal);
        py::list out;
        for (const auto& f : stratified_kfold(ls, k, seed)) out.append(py::make_tuple(f.train, f.val));
        return out;
      },
      "List of (train_indices, val_indices) per fold", py::arg("labels"), py::arg("k"), py::arg("seed") = 0);

  m.def(
      "fit_ellipse", [](const U8& mask) { return ellipse_dict(fit_ellipse(to_mask(mask))); }, py::arg("mask"));
  m.def(
      "rasterize_ellipse",
      [](double cx, double cy, double a, double b, double theta, int h, int w) {
        return from_plane(rasterize_ellipse(Ellipse{cx, cy, a, b, theta}, h, w));
      },
      py::arg("cx"), py::arg("cy"), py::arg("a"), py::arg("b"), py::arg("theta"), py::arg("height"),
      py::arg("width"));
  m.def(
      "postprocess_pair",
      [](const F32& od, const F32& oc, bool fit_ellipse_od) {
        PostprocessParams p;
        p.fit_ellipse_od = fit_ellipse_od;
        const auto r = postprocess_pair(to_soft(od), to_soft(oc), p);
        return py::make_tuple(from_plane(r.od), from_plane(r.oc), r.warnings);
      },
      "Binarize, open, keep the largest component and fit the disc ellipse", py::arg("od"), py::arg("oc"),
      py::arg("fit_ellipse_od") = true);

  m.def(
      "architecture_summary",
      [](int input_side, bool narrow) {
        const auto cfg = input_side == 400 && !narrow ? ArchitectureConfig{} : ArchitectureConfig::reduced(input_side, narrow);
        const auto s = plan_shapes(cfg);
        const MultiTaskNet<float> net(cfg, 0);
        py::dict d;
        d["encoder_sides"] = s.encoder_sides;
        d["bottleneck"] = py::make_tuple(s.bottleneck.side, s.bottleneck.side, s.bottleneck.channels);
        d["appearance"] = py::make_tuple(s.appearance.side, s.appearance.side, s.appearance.channels);
        d["structural"] = py::make_tuple(s.structural.side, s.structural.side, s.structural.channels);
        d["pooled_features"] = s.pooled_features;
        d["parameters"] = net.count_parameters();
        d["classifier_parameters"] = net.classifier_parameter_count();
        return d;
      },
      py::arg("input_side") = 400, py::arg("narrow") = false);

  py::class_<Ensemble>(m, "Ensemble", "Averaged models loaded from checkpoint files")
      .def(py::init([](const std::vector<std::string>& paths) {
             std::vector<Checkpoint> cks;
             for (const auto& p : paths) cks.push_back(load_checkpoint(p));
             return std::make_unique<Ensemble>(cks);
           }),
           py::arg("checkpoints"))
      .def_property_readonly("input_side", [](const Ensemble& e) { return e.architecture().input_side; })
      .def("__len__", &Ensemble::size)
      .def(
          "predict_roi",
          [](Ensemble& e, const U8& roi) {
            const auto img = to_rgb(roi);
            const auto out = e.predict(to_input_tensor(std::span(&img, 1)));
            return py::make_tuple(out.p.front(), from_plane(soft_map(out.od, 0)), from_plane(soft_map(out.oc, 0)));
          },
          "(p_glaucoma, od_soft, oc_soft) for one ROI crop", py::arg("roi"))
      .def(
          "infer",
          [](Ensemble& e, const U8& image) {
            const auto r = infer_end_to_end(to_rgb(image), e, PostprocessParams{});
            py::dict d;
            d["p_glaucoma"] = r.p_glaucoma;
            d["cdr"] = r.cdr;
            d["od"] = from_plane(r.od_full);
            d["oc"] = from_plane(r.oc_full);
            d["box"] = py::make_tuple(r.box.center_x, r.box.center_y, r.box.side);
            d["warnings"] = r.warnings;
            return d;
          },
          "Full-image inference: locate, crop, predict, refine, map back", py::arg("image"));
}
