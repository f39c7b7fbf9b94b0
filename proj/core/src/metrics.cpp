#include "rdcnet/metrics.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "rdcnet/errors.hpp"

namespace rdc {

double Overlap::iou(std::size_t i, std::size_t j) const {
  const auto u = union_area(i, j);
  return u > 0 ? static_cast<double>(intersection(i, j)) / static_cast<double>(u) : 0.0;
}

Overlap compute_overlap(const LabelMap& pred, const LabelMap& gt) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw UsageError("metrics: prediction " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                     " vs ground truth " + std::to_string(gt.height) + "x" + std::to_string(gt.width));
  }
  Overlap o;
  std::vector<bool> pred_seen(65536, false), gt_seen(65536, false);
  for (std::size_t u = 0; u < gt.ids.size(); ++u) {
    const auto g = gt.ids[u];
    if (g == kUndefinedLabel) continue;
    const auto p = pred.ids[u];
    if (p != kBackgroundLabel && p != kUndefinedLabel) pred_seen[p] = true;
    if (g != kBackgroundLabel) gt_seen[g] = true;
  }
  std::vector<int> pred_index(65536, -1), gt_index(65536, -1);
  for (int id = 1; id < 65535; ++id) {
    if (pred_seen[id]) {
      pred_index[id] = static_cast<int>(o.pred_ids.size());
      o.pred_ids.push_back(static_cast<std::uint16_t>(id));
    }
    if (gt_seen[id]) {
      gt_index[id] = static_cast<int>(o.gt_ids.size());
      o.gt_ids.push_back(static_cast<std::uint16_t>(id));
    }
  }
  const std::size_t np = o.pred_ids.size();
  const std::size_t ng = o.gt_ids.size();
  o.pred_area.assign(np, 0);
  o.gt_area.assign(ng, 0);
  o.intersections.assign(np * ng, 0);
  for (std::size_t u = 0; u < gt.ids.size(); ++u) {
    const auto g = gt.ids[u];
    if (g == kUndefinedLabel) continue;
    const auto p = pred.ids[u];
    const int pi = (p != kBackgroundLabel && p != kUndefinedLabel) ? pred_index[p] : -1;
    const int gi = g != kBackgroundLabel ? gt_index[g] : -1;
    if (pi >= 0) ++o.pred_area[static_cast<std::size_t>(pi)];
    if (gi >= 0) ++o.gt_area[static_cast<std::size_t>(gi)];
    if (pi >= 0 && gi >= 0) ++o.intersections[static_cast<std::size_t>(pi) * ng + static_cast<std::size_t>(gi)];
  }
  return o;
}

IouMatrix iou_matrix(const LabelMap& pred, const LabelMap& gt) {
  const Overlap o = compute_overlap(pred, gt);
  IouMatrix m{o.pred_ids.size(), o.gt_ids.size(), {}};
  m.values.resize(m.rows * m.cols);
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) m.values[i * m.cols + j] = o.iou(i, j);
  }
  return m;
}

std::vector<Match> match_at_threshold(const IouMatrix& ious, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw UsageError("match_at_threshold: threshold must lie in (0, 1]");
  std::vector<Match> candidates;
  for (std::size_t i = 0; i < ious.rows; ++i) {
    for (std::size_t j = 0; j < ious.cols; ++j) {
      if (ious.at(i, j) > threshold) candidates.push_back({i, j, ious.at(i, j)});
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(), [](const Match& a, const Match& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (a.pred != b.pred) return a.pred < b.pred;
    return a.gt < b.gt;
  });
  std::vector<bool> pred_used(ious.rows, false), gt_used(ious.cols, false);
  std::vector<Match> matches;
  for (const auto& c : candidates) {
    if (pred_used[c.pred] || gt_used[c.gt]) continue;
    pred_used[c.pred] = gt_used[c.gt] = true;
    matches.push_back(c);
  }
  return matches;
}

Prf1 prf1(std::size_t tp, std::size_t n_pred, std::size_t n_gt) {
  if (tp > n_pred || tp > n_gt) throw UsageError("prf1: more matches than instances");
  Prf1 r;
  r.precision = n_pred == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(n_pred);
  r.recall = n_gt == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(n_gt);
  const double s = r.precision + r.recall;
  r.f1 = s > 0.0 ? 2.0 * r.precision * r.recall / s : 0.0;
  return r;
}

namespace {

double dice(const Overlap& o, std::size_t i, std::size_t j) {
  const auto denom = o.pred_area[i] + o.gt_area[j];
  return denom > 0 ? 2.0 * static_cast<double>(o.intersection(i, j)) / static_cast<double>(denom) : 0.0;
}

}  // namespace

double sbd(const LabelMap& pred, const LabelMap& gt) {
  const Overlap o = compute_overlap(pred, gt);
  const std::size_t np = o.pred_ids.size();
  const std::size_t ng = o.gt_ids.size();
  if (np == 0 && ng == 0) return 1.0;
  if (np == 0 || ng == 0) return 0.0;
  double pred_given_gt = 0.0;
  for (std::size_t i = 0; i < np; ++i) {
    double best = 0.0;
    for (std::size_t j = 0; j < ng; ++j) best = std::max(best, dice(o, i, j));
    pred_given_gt += best;
  }
  double gt_given_pred = 0.0;
  for (std::size_t j = 0; j < ng; ++j) {
    double best = 0.0;
    for (std::size_t i = 0; i < np; ++i) best = std::max(best, dice(o, i, j));
    gt_given_pred += best;
  }
  return std::min(pred_given_gt / static_cast<double>(np), gt_given_pred / static_cast<double>(ng));
}

double aji(const LabelMap& pred, const LabelMap& gt) {
  const Overlap o = compute_overlap(pred, gt);
  const std::size_t np = o.pred_ids.size();
  const std::size_t ng = o.gt_ids.size();
  if (np == 0 && ng == 0) return 1.0;
  std::int64_t inter = 0;
  std::int64_t uni = 0;
  std::vector<bool> used(np, false);
  for (std::size_t j = 0; j < ng; ++j) {
    double best_iou = 0.0;
    std::size_t best = np;
    for (std::size_t i = 0; i < np; ++i) {
      if (used[i]) continue;
      const double v = o.iou(i, j);
      if (v > best_iou) {
        best_iou = v;
        best = i;
      }
    }
    if (best == np) {
      uni += o.gt_area[j];
      continue;
    }
    used[best] = true;
    inter += o.intersection(best, j);
    uni += o.union_area(best, j);
  }
  for (std::size_t i = 0; i < np; ++i) {
    if (!used[i]) uni += o.pred_area[i];
  }
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
}

ImageScores score_image(const LabelMap& pred, const LabelMap& gt, double iou_threshold, std::string name) {
  const IouMatrix ious = iou_matrix(pred, gt);
  const auto matches = match_at_threshold(ious, iou_threshold);
  ImageScores s;
  s.name = std::move(name);
  s.tp = matches.size();
  s.fp = ious.rows - s.tp;
  s.fn = ious.cols - s.tp;
  const Prf1 p = prf1(s.tp, ious.rows, ious.cols);
  s.precision = p.precision;
  s.recall = p.recall;
  s.f1 = p.f1;
  s.sbd = sbd(pred, gt);
  s.aji = aji(pred, gt);
  return s;
}

std::vector<double> default_iou_sweep() {
  std::vector<double> out;
  for (int k = 0; k <= 8; ++k) out.push_back(0.5 + 0.05 * k);
  return out;
}

EvalReport evaluate(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts,
                    const std::vector<std::string>& names, double iou_threshold, const std::vector<double>& sweep) {
  if (preds.size() != gts.size() || names.size() != gts.size()) {
    throw UsageError("evaluate: predictions, ground truths and names differ in count");
  }
  EvalReport report;
  report.iou_threshold = iou_threshold;
  report.mean.name = "mean";
  report.mean.precision = report.mean.recall = report.mean.f1 = report.mean.sbd = report.mean.aji = 0.0;
  for (std::size_t k = 0; k < gts.size(); ++k) {
    report.images.push_back(score_image(preds[k], gts[k], iou_threshold, names[k]));
    const auto& s = report.images.back();
    report.mean.tp += s.tp;
    report.mean.fp += s.fp;
    report.mean.fn += s.fn;
    report.mean.precision += s.precision;
    report.mean.recall += s.recall;
    report.mean.f1 += s.f1;
    report.mean.sbd += s.sbd;
    report.mean.aji += s.aji;
  }
  if (!gts.empty()) {
    const double n = static_cast<double>(gts.size());
    report.mean.precision /= n;
    report.mean.recall /= n;
    report.mean.f1 /= n;
    report.mean.sbd /= n;
    report.mean.aji /= n;
  }
  for (double t : sweep) {
    double f1 = 0.0;
    for (std::size_t k = 0; k < gts.size(); ++k) {
      const IouMatrix ious = iou_matrix(preds[k], gts[k]);
      f1 += prf1(match_at_threshold(ious, t).size(), ious.rows, ious.cols).f1;
    }
    report.f1_curve.emplace_back(t, gts.empty() ? 0.0 : f1 / static_cast<double>(gts.size()));
  }
  return report;
}

std::string format_report(const EvalReport& report) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6);
  os << "# rdcnet evaluation report\n";
  os << "iou_threshold\t" << report.iou_threshold << "\n\n";
  os << "[per_image]\n";
  os << "image\ttp\tfp\tfn\tprecision\trecall\tf1\tsbd\taji\n";
  for (const auto& s : report.images) {
    os << s.name << '\t' << s.tp << '\t' << s.fp << '\t' << s.fn << '\t' << s.precision << '\t' << s.recall << '\t'
       << s.f1 << '\t' << s.sbd << '\t' << s.aji << '\n';
  }
  os << "\n[aggregate]\n";
  os << "images\t" << report.images.size() << '\n';
  os << "tp\t" << report.mean.tp << '\n';
  os << "fp\t" << report.mean.fp << '\n';
  os << "fn\t" << report.mean.fn << '\n';
  os << "precision\t" << report.mean.precision << '\n';
  os << "recall\t" << report.mean.recall << '\n';
  os << "f1\t" << report.mean.f1 << '\n';
  os << "sbd\t" << report.mean.sbd << '\n';
  os << "aji\t" << report.mean.aji << '\n';
  os << "\n[f1_curve]\n";
  os << "iou_threshold\tf1\n";
  for (const auto& [t, f1] : report.f1_curve) os << t << '\t' << f1 << '\n';
  return os.str();
}

}  // namespace rdc
