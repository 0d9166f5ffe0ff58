#include "fundus/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "fundus/errors.hpp"

namespace fundus {

double hard_dice(const Mask& a, const Mask& b) {
  if (!a.same_shape(b)) throw ShapeMismatch("dice: masks differ in shape");
  std::size_t inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a.data[i] != 0, y = b.data[i] != 0;
    inter += x && y;
    na += x;
    nb += y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

int vertical_extent(const Mask& m) {
  int lo = -1, hi = -1;
  for (int r = 0; r < m.height; ++r) {
    const auto* row = &m.data[static_cast<std::size_t>(r) * m.width];
    if (std::any_of(row, row + m.width, [](std::uint8_t v) { return v != 0; })) {
      if (lo < 0) lo = r;
      hi = r;
    }
  }
  return lo < 0 ? 0 : hi - lo + 1;
}

double vertical_cdr(const Mask& od, const Mask& oc) {
  const int disc = vertical_extent(od);
  if (disc == 0) throw EmptyDisc("vertical CDR needs a nonempty disc");
  return static_cast<double>(vertical_extent(oc)) / disc;
}

namespace {

void count_classes(std::span<const double> scores, std::span<const int> labels, std::size_t& pos, std::size_t& neg) {
  if (scores.size() != labels.size()) throw ShapeMismatch("scores and labels differ in length");
  pos = 0;
  for (int l : labels) pos += l != 0;
  neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw SingleClass("both classes are required");
}

}  // namespace

RocCurve roc_auc(std::span<const double> scores, std::span<const int> labels) {
  std::size_t pos, neg;
  count_classes(scores, labels, pos, neg);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::ranges::sort(order, [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve roc;
  roc.thresholds.push_back(std::numeric_limits<double>::infinity());
  roc.fpr.push_back(0);
  roc.tpr.push_back(0);
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) (labels[order[i]] ? tp : fp) += 1;
    roc.thresholds.push_back(s);
    roc.fpr.push_back(static_cast<double>(fp) / neg);
    roc.tpr.push_back(static_cast<double>(tp) / pos);
  }
  double area = 0;
  for (std::size_t k = 1; k < roc.fpr.size(); ++k)
    area += (roc.fpr[k] - roc.fpr[k - 1]) * (roc.tpr[k] + roc.tpr[k - 1]) / 2;
  roc.auc = area;
  return roc;
}

double auc_mann_whitney(std::span<const double> scores, std::span<const int> labels) {
  std::size_t pos, neg;
  count_classes(scores, labels, pos, neg);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::ranges::sort(order, [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Midranks for tied groups.
  double rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2;
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) rank_sum += midrank;
    i = j;
  }
  const double p = static_cast<double>(pos), n = static_cast<double>(neg);
  return (rank_sum - p * (p + 1) / 2) / (p * n);
}

SensSpec sens_spec(std::span<const double> scores, std::span<const int> labels, double cutoff) {
  std::size_t pos, neg;
  count_classes(scores, labels, pos, neg);
  std::size_t tp = 0, tn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= cutoff;
    if (labels[i] && predicted) ++tp;
    if (!labels[i] && !predicted) ++tn;
  }
  return {static_cast<double>(tp) / pos, static_cast<double>(tn) / neg};
}

double youden_cutoff(std::span<const double> scores, std::span<const int> labels) {
  std::size_t pos, neg;
  count_classes(scores, labels, pos, neg);
  std::vector<double> distinct(scores.begin(), scores.end());
  std::ranges::sort(distinct);
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  // Candidate k classifies every score >= distinct[k] as positive; k == size means none.
  std::vector<double> candidates;
  candidates.push_back(distinct.front());
  for (std::size_t k = 1; k < distinct.size(); ++k) candidates.push_back((distinct[k - 1] + distinct[k]) / 2);
  candidates.push_back(std::nextafter(distinct.back(), std::numeric_limits<double>::infinity()));

  double best_cutoff = candidates.back();
  double best_j = -std::numeric_limits<double>::infinity();
  for (std::size_t k = candidates.size(); k-- > 0;) {
    const auto ss = sens_spec(scores, labels, candidates[k]);
    const double j = ss.sensitivity + ss.specificity - 1;
    if (j > best_j) {
      best_j = j;
      best_cutoff = candidates[k];
    }
  }
  return best_cutoff;
}

SummaryStat summarize(std::span<const double> values) {
  SummaryStat s;
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double sq = 0;
  for (double v : values) sq += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(sq / n);
  return s;
}

SegScores score_segmentation(const std::map<std::string, Prediction>& pred, const std::map<std::string, Truth>& gt) {
  SegScores seg;
  std::vector<double> d_od, d_oc, err;
  for (const auto& [id, p] : pred) {
    const auto it = gt.find(id);
    if (it == gt.end()) throw IdMismatch("prediction without ground truth: " + id);
    const Truth& t = it->second;
    ImageScores s;
    s.id = id;
    s.dice_od = hard_dice(p.od, t.od);
    s.dice_oc = hard_dice(p.oc, t.oc);
    s.cdr_pred = vertical_extent(p.od) > 0 ? vertical_cdr(p.od, p.oc) : 0.0;
    s.cdr_gt = vertical_cdr(t.od, t.oc);
    s.cdr_error = std::abs(s.cdr_pred - s.cdr_gt);
    d_od.push_back(s.dice_od);
    d_oc.push_back(s.dice_oc);
    err.push_back(s.cdr_error);
    seg.per_image.push_back(std::move(s));
  }
  seg.dice_od = summarize(d_od);
  seg.dice_oc = summarize(d_oc);
  seg.cdr_error = summarize(err);
  return seg;
}

EvalReport evaluate_dataset(const std::map<std::string, Prediction>& pred, const std::map<std::string, Truth>& gt,
                            std::optional<double> cutoff) {
  if (pred.size() != gt.size()) throw IdMismatch("prediction and ground-truth id sets differ");
  for (const auto& [id, t] : gt)
    if (!pred.contains(id)) throw IdMismatch("ground truth without prediction: " + id);

  EvalReport report;
  report.segmentation = score_segmentation(pred, gt);
  for (const auto& [id, p] : pred) {
    const auto& t = gt.at(id);
    if (!t.label) continue;
    report.score_ids.push_back(id);
    report.scores.push_back(p.p_glaucoma);
    report.labels.push_back(*t.label);
  }
  const auto positives = std::count(report.labels.begin(), report.labels.end(), 1);
  if (positives > 0 && positives < static_cast<std::ptrdiff_t>(report.labels.size())) {
    report.roc = roc_auc(report.scores, report.labels);
    report.cutoff = cutoff ? *cutoff : youden_cutoff(report.scores, report.labels);
    const auto ss = sens_spec(report.scores, report.labels, report.cutoff);
    report.sensitivity = ss.sensitivity;
    report.specificity = ss.specificity;
  }
  return report;
}

// --- serialization ----------------------------------------------------------

namespace {

nlohmann::json encode_threshold(double t) {
  if (std::isinf(t)) return t > 0 ? "inf" : "-inf";
  return t;
}

double decode_threshold(const nlohmann::json& j) {
  if (j.is_string()) return j.get<std::string>() == "inf" ? std::numeric_limits<double>::infinity()
                                                           : -std::numeric_limits<double>::infinity();
  return j.get<double>();
}

nlohmann::json seg_to_json(const SegScores& s) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& p : s.per_image)
    per.push_back({{"id", p.id},
                   {"dice_od", p.dice_od},
                   {"dice_oc", p.dice_oc},
                   {"cdr_pred", p.cdr_pred},
                   {"cdr_gt", p.cdr_gt},
                   {"cdr_error", p.cdr_error}});
  auto stat = [](const SummaryStat& st) { return nlohmann::json{{"mean", st.mean}, {"std", st.std}}; };
  return {{"per_image", per}, {"dice_od", stat(s.dice_od)}, {"dice_oc", stat(s.dice_oc)}, {"cdr_error", stat(s.cdr_error)}};
}

SegScores seg_from_json(const nlohmann::json& j) {
  SegScores s;
  for (const auto& p : j.at("per_image"))
    s.per_image.push_back({p.at("id"), p.at("dice_od"), p.at("dice_oc"), p.at("cdr_pred"), p.at("cdr_gt"),
                           p.at("cdr_error")});
  auto stat = [](const nlohmann::json& st) { return SummaryStat{st.at("mean"), st.at("std")}; };
  s.dice_od = stat(j.at("dice_od"));
  s.dice_oc = stat(j.at("dice_oc"));
  s.cdr_error = stat(j.at("cdr_error"));
  return s;
}

}  // namespace

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = nlohmann::json{{"segmentation", seg_to_json(r.segmentation)},
                     {"cutoff", r.cutoff},
                     {"sensitivity", r.sensitivity},
                     {"specificity", r.specificity},
                     {"score_ids", r.score_ids},
                     {"scores", r.scores},
                     {"labels", r.labels},
                     {"metadata",
                      {{"seed", r.metadata.seed}, {"config_digest", r.metadata.config_digest}, {"fold_id", r.metadata.fold_id}}}};
  if (r.segmentation_fullres) j["segmentation_fullres"] = seg_to_json(*r.segmentation_fullres);
  if (r.roc) {
    nlohmann::json th = nlohmann::json::array();
    for (double t : r.roc->thresholds) th.push_back(encode_threshold(t));
    j["roc"] = {{"thresholds", th}, {"fpr", r.roc->fpr}, {"tpr", r.roc->tpr}, {"auc", r.roc->auc}};
  }
}

void from_json(const nlohmann::json& j, EvalReport& r) {
  r = EvalReport{};
  r.segmentation = seg_from_json(j.at("segmentation"));
  if (j.contains("segmentation_fullres")) r.segmentation_fullres = seg_from_json(j.at("segmentation_fullres"));
  r.cutoff = j.at("cutoff");
  r.sensitivity = j.at("sensitivity");
  r.specificity = j.at("specificity");
  r.score_ids = j.value("score_ids", std::vector<std::string>{});
  r.scores = j.value("scores", std::vector<double>{});
  r.labels = j.value("labels", std::vector<int>{});
  if (j.contains("metadata")) {
    const auto& m = j.at("metadata");
    r.metadata.seed = m.value("seed", std::uint64_t{0});
    r.metadata.config_digest = m.value("config_digest", std::string{});
    r.metadata.fold_id = m.value("fold_id", -1);
  }
  if (j.contains("roc")) {
    RocCurve roc;
    for (const auto& t : j.at("roc").at("thresholds")) roc.thresholds.push_back(decode_threshold(t));
    roc.fpr = j.at("roc").at("fpr").get<std::vector<double>>();
    roc.tpr = j.at("roc").at("tpr").get<std::vector<double>>();
    roc.auc = j.at("roc").at("auc");
    r.roc = std::move(roc);
  }
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string roc_svg(const RocCurve& roc, const std::string& title) {
  constexpr double kSize = 400, kMargin = 50;
  auto px = [&](double f) { return kMargin + f * kSize; };
  auto py = [&](double t) { return kMargin + (1 - t) * kSize; };
  std::ostringstream svg;
  svg.precision(6);
  svg << R"(<svg xmlns="http://www.w3.org/2000/svg" width=")" << kSize + 2 * kMargin << R"(" height=")"
      << kSize + 2 * kMargin << R"(" font-family="sans-serif" font-size="12">)" << '\n';
  svg << R"(<rect x="0" y="0" width="100%" height="100%" fill="white"/>)" << '\n';
  svg << "<rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << kSize << "\" height=\"" << kSize
      << R"(" fill="none" stroke="black"/>)" << '\n';
  for (int i = 0; i <= 10; ++i) {
    const double f = i / 10.0;
    svg << "<line x1=\"" << px(f) << "\" y1=\"" << py(0) << "\" x2=\"" << px(f) << "\" y2=\"" << py(0) + 5
        << R"(" stroke="black"/><text x=")" << px(f) << "\" y=\"" << py(0) + 18 << R"(" text-anchor="middle">)" << f
        << "</text>\n";
    svg << "<line x1=\"" << px(0) - 5 << "\" y1=\"" << py(f) << "\" x2=\"" << px(0) << "\" y2=\"" << py(f)
        << R"(" stroke="black"/><text x=")" << px(0) - 8 << "\" y=\"" << py(f) + 4 << R"(" text-anchor="end">)" << f
        << "</text>\n";
  }
  svg << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(1) << "\" y2=\"" << py(1)
      << R"(" stroke="gray" stroke-dasharray="4,4"/>)" << '\n';
  svg << R"(<polyline fill="none" stroke="#1f77b4" stroke-width="2" points=")";
  for (std::size_t i = 0; i < roc.fpr.size(); ++i) svg << px(roc.fpr[i]) << ',' << py(roc.tpr[i]) << ' ';
  svg << "\"/>\n";
  svg << "<text x=\"" << kMargin + kSize / 2 << "\" y=\"" << kMargin - 20 << R"(" text-anchor="middle" font-size="14">)"
      << xml_escape(title) << " (AUC = " << roc.auc << ")</text>\n";
  svg << "<text x=\"" << kMargin + kSize / 2 << "\" y=\"" << kSize + kMargin + 40
      << R"(" text-anchor="middle">False positive rate</text>)" << '\n';
  svg << "<text x=\"15\" y=\"" << kMargin + kSize / 2 << R"(" text-anchor="middle" transform="rotate(-90 15 )"
      << kMargin + kSize / 2 << ")\">True positive rate</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace fundus
