#include "pcb_sentinel/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "pcb_sentinel/errors.hpp"
#include "pcb_sentinel/pipeline.hpp"

namespace pcb_sentinel {

using nlohmann::json;

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  fp += o.fp;
  tn += o.tn;
  fn += o.fn;
  return *this;
}

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& truth) {
  if (pred.height() != truth.height() || pred.width() != truth.width()) {
    throw ShapeMismatchError("prediction and truth masks differ in size");
  }
  ConfusionCounts c;
  const auto p = pred.values();
  const auto t = truth.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i]) {
      t[i] ? ++c.tp : ++c.fp;
    } else {
      t[i] ? ++c.fn : ++c.tn;
    }
  }
  return c;
}

namespace {

double ratio(std::uint64_t num, std::uint64_t den, const char* what) {
  if (den == 0) throw UndefinedMetricError(std::string(what) + " is undefined (zero denominator)");
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

double precision(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fp, "precision"); }
double recall(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fn, "recall"); }
double fpr(const ConfusionCounts& c) { return ratio(c.fp, c.fp + c.tn, "false positive rate"); }
double iou(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fp + c.fn, "IoU"); }

double f_score(double p, double r) {
  if (!(p + r > 0.0)) throw UndefinedMetricError("F-score is undefined when precision + recall = 0");
  return 2.0 * p * r / (p + r);
}

double f_score(const ConfusionCounts& c) { return f_score(precision(c), recall(c)); }

MetricSet metrics(const ConfusionCounts& c) {
  MetricSet m;
  const bool truth_empty = c.tp + c.fn == 0;
  const bool pred_empty = c.tp + c.fp == 0;
  m.precision = pred_empty ? (truth_empty ? 1.0 : 0.0) : precision(c);
  m.recall = truth_empty ? (pred_empty ? 1.0 : 0.0) : recall(c);
  m.f_score = m.precision + m.recall > 0.0 ? f_score(m.precision, m.recall) : 0.0;
  m.fpr = c.fp + c.tn == 0 ? 0.0 : fpr(c);
  m.iou = c.tp + c.fp + c.fn == 0 ? 1.0 : iou(c);
  return m;
}

RocResult roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw ShapeMismatchError("scores and labels differ in length");
  std::uint64_t pos = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 1) throw ArgumentError("labels must be 0 or 1");
    if (std::isnan(scores[i])) throw ArgumentError("NaN score");
    pos += labels[i];
  }
  const std::uint64_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw SingleClassError("ROC needs both positive and negative samples");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocResult r;
  r.curve.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::uint64_t tp = 0, fp = 0;
  // Twice the area in units of one positive x one negative; exact in integers.
  std::uint64_t area2 = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    std::uint64_t dtp = 0, dfp = 0;
    for (; i < order.size() && scores[order[i]] == s; ++i) labels[order[i]] ? ++dtp : ++dfp;
    area2 += dfp * (2 * tp + dtp);
    tp += dtp;
    fp += dfp;
    r.curve.push_back({s, static_cast<double>(fp) / neg, static_cast<double>(tp) / pos});
  }
  r.curve.push_back({-std::numeric_limits<double>::infinity(), 1.0, 1.0});
  r.auc = static_cast<double>(area2) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
  return r;
}

// --- threshold sweeps ----------------------------------------------------------------------

std::vector<float> even_thresholds(int n) {
  if (n < 2) throw ArgumentError("need at least two thresholds");
  std::vector<float> t(n);
  for (int k = 0; k < n; ++k) t[k] = static_cast<float>(k) / static_cast<float>(n - 1);
  return t;
}

namespace {

void check_pairs(std::span<const FloatMap> maps, std::span<const BinaryMask> truths) {
  if (maps.size() != truths.size()) throw ShapeMismatchError("one truth mask per map is required");
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (maps[i].height() != truths[i].height() || maps[i].width() != truths[i].width()) {
      throw ShapeMismatchError("map " + std::to_string(i) + " and its truth mask differ in size");
    }
  }
}

}  // namespace

SweepResult best_iou_sweep(std::span<const FloatMap> maps, std::span<const BinaryMask> truths,
                           std::span<const float> thresholds) {
  check_pairs(maps, truths);
  if (thresholds.empty()) throw ArgumentError("no thresholds to sweep");
  if (!std::is_sorted(thresholds.begin(), thresholds.end())) throw ArgumentError("thresholds must be ascending");
  const std::size_t n = thresholds.size();
  // passes[k] = number of thresholds a value clears, i.e. it is predicted
  // positive for threshold indices 0 .. passes-1.
  std::vector<std::uint64_t> pos_hist(n + 1, 0), neg_hist(n + 1, 0);
  std::uint64_t positives = 0, negatives = 0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const auto v = maps[i].values();
    const auto t = truths[i].values();
    for (std::size_t p = 0; p < v.size(); ++p) {
      const auto passes = static_cast<std::size_t>(std::upper_bound(thresholds.begin(), thresholds.end(), v[p]) -
                                                   thresholds.begin());
      if (t[p]) {
        ++pos_hist[passes];
        ++positives;
      } else {
        ++neg_hist[passes];
        ++negatives;
      }
    }
  }
  if (positives == 0) throw NoPositivesError("no positive ground-truth pixels in the evaluation set");

  SweepResult r;
  r.thresholds.assign(thresholds.begin(), thresholds.end());
  r.ious.resize(n);
  // Values with passes > k are positive at threshold k.
  std::uint64_t tp = positives - pos_hist[0], fp = negatives - neg_hist[0];
  r.best_iou = -1.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (k > 0) {
      tp -= pos_hist[k];
      fp -= neg_hist[k];
    }
    ConfusionCounts c{tp, fp, negatives - fp, positives - tp};
    r.ious[k] = iou(c);
    if (r.ious[k] > r.best_iou) {
      r.best_iou = r.ious[k];
      r.best_threshold = thresholds[k];
      r.counts = c;
    }
  }
  r.at_best = metrics(r.counts);
  return r;
}

SweepResult best_iou_sweep(std::span<const FloatMap> maps, std::span<const BinaryMask> truths, int n_thresholds) {
  const auto t = even_thresholds(n_thresholds);
  return best_iou_sweep(maps, truths, t);
}

ConfusionCounts pooled_confusion(std::span<const FloatMap> maps, std::span<const BinaryMask> truths,
                                 float threshold) {
  check_pairs(maps, truths);
  ConfusionCounts c;
  for (std::size_t i = 0; i < maps.size(); ++i) c += confusion(binarize(maps[i], threshold), truths[i]);
  return c;
}

double detection_accuracy(std::span<const FloatMap> maps, std::span<const BinaryMask> truths, float threshold) {
  check_pairs(maps, truths);
  if (maps.empty()) throw ArgumentError("no images");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const bool detected = binarize(maps[i], threshold).popcount() >= kDetectionMinPixels;
    const bool anomalous = truths[i].popcount() > 0;
    correct += detected == anomalous;
  }
  return static_cast<double>(correct) / static_cast<double>(maps.size());
}

// --- reports -------------------------------------------------------------------------------

RegionMetrics evaluate_region(const RegionEvalInput& input, int n_thresholds) {
  check_pairs(input.maps, input.truths);
  RegionMetrics m;
  m.region_id = input.region_id;
  m.images = input.maps.size();
  for (const auto& t : input.truths) m.anomalous_images += t.popcount() > 0;
  if (m.images == 0) return m;

  try {
    const auto sweep = best_iou_sweep(input.maps, input.truths, n_thresholds);
    m.best_iou = sweep.best_iou;
    m.best_threshold = sweep.best_threshold;
    m.precision = sweep.at_best.precision;
    m.recall = sweep.at_best.recall;
    m.f_score = sweep.at_best.f_score;
    m.det_accuracy = detection_accuracy(input.maps, input.truths, sweep.best_threshold);
  } catch (const NoPositivesError&) {
  }

  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  for (std::size_t i = 0; i < input.maps.size(); ++i) {
    const auto v = input.maps[i].values();
    const auto t = input.truths[i].values();
    scores.insert(scores.end(), v.begin(), v.end());
    labels.insert(labels.end(), t.begin(), t.end());
  }
  try {
    m.seg_roc = roc_auc(scores, labels);
    m.seg_auc = m.seg_roc.auc;
  } catch (const SingleClassError&) {
  }

  scores.clear();
  labels.clear();
  for (std::size_t i = 0; i < input.maps.size(); ++i) {
    scores.push_back(detection_score(input.maps[i]));
    labels.push_back(input.truths[i].popcount() > 0);
  }
  try {
    m.det_roc = roc_auc(scores, labels);
    m.det_auc = m.det_roc.auc;
  } catch (const SingleClassError&) {
  }
  return m;
}

namespace {

template <typename Get>
std::optional<double> mean_of(const std::vector<RegionMetrics>& rs, Get get) {
  double sum = 0.0;
  int n = 0;
  for (const auto& r : rs) {
    if (const auto v = get(r)) {
      sum += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string cell(const std::optional<double>& v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", *v);
  return buf;
}

}  // namespace

EvalReport evaluate_regions(std::span<const RegionEvalInput> inputs, int n_thresholds) {
  EvalReport r;
  for (const auto& in : inputs) r.regions.push_back(evaluate_region(in, n_thresholds));
  r.mean_iou = mean_of(r.regions, [](const RegionMetrics& m) { return m.best_iou; });
  r.mean_precision = mean_of(r.regions, [](const RegionMetrics& m) { return m.precision; });
  r.mean_recall = mean_of(r.regions, [](const RegionMetrics& m) { return m.recall; });
  r.mean_f_score = mean_of(r.regions, [](const RegionMetrics& m) { return m.f_score; });
  r.mean_seg_auc = mean_of(r.regions, [](const RegionMetrics& m) { return m.seg_auc; });
  r.mean_det_auc = mean_of(r.regions, [](const RegionMetrics& m) { return m.det_auc; });
  r.mean_det_accuracy = mean_of(r.regions, [](const RegionMetrics& m) { return m.det_accuracy; });
  return r;
}

json to_json(const EvalReport& report) {
  json regions = json::array();
  for (const auto& m : report.regions) {
    regions.push_back({{"region_id", m.region_id},
                       {"images", m.images},
                       {"anomalous_images", m.anomalous_images},
                       {"best_iou", opt(m.best_iou)},
                       {"best_iou_threshold", m.best_threshold ? json(*m.best_threshold) : json(nullptr)},
                       {"precision", opt(m.precision)},
                       {"recall", opt(m.recall)},
                       {"f_score", opt(m.f_score)},
                       {"seg_auc", opt(m.seg_auc)},
                       {"det_auc", opt(m.det_auc)},
                       {"det_accuracy", opt(m.det_accuracy)}});
  }
  return json{{"regions", regions},
              {"average",
               {{"best_iou", opt(report.mean_iou)},
                {"precision", opt(report.mean_precision)},
                {"recall", opt(report.mean_recall)},
                {"f_score", opt(report.mean_f_score)},
                {"seg_auc", opt(report.mean_seg_auc)},
                {"det_auc", opt(report.mean_det_auc)},
                {"det_accuracy", opt(report.mean_det_accuracy)}}}};
}

std::string render_table(const EvalReport& report) {
  std::ostringstream out;
  char line[256];
  const char* fmt = "%-10s %8s %10s %8s %8s %8s %8s %8s\n";
  std::snprintf(line, sizeof line, fmt, "Region", "IoU", "Precision", "Recall", "F-score", "Seg-AUC", "Det-AUC",
                "Det-Acc");
  out << line;
  auto row = [&](const std::string& name, const std::optional<double>& a, const std::optional<double>& b,
                 const std::optional<double>& c, const std::optional<double>& d, const std::optional<double>& e,
                 const std::optional<double>& f, const std::optional<double>& g) {
    std::snprintf(line, sizeof line, fmt, name.c_str(), cell(a).c_str(), cell(b).c_str(), cell(c).c_str(),
                  cell(d).c_str(), cell(e).c_str(), cell(f).c_str(), cell(g).c_str());
    out << line;
  };
  for (const auto& m : report.regions) {
    row(m.region_id, m.best_iou, m.precision, m.recall, m.f_score, m.seg_auc, m.det_auc, m.det_accuracy);
  }
  row("Average", report.mean_iou, report.mean_precision, report.mean_recall, report.mean_f_score,
      report.mean_seg_auc, report.mean_det_auc, report.mean_det_accuracy);
  return out.str();
}

std::string roc_csv(const RocResult& roc) {
  std::ostringstream out;
  out.precision(17);
  out << "threshold,fpr,tpr\n";
  for (const auto& p : roc.curve) {
    if (std::isinf(p.threshold)) {
      out << (p.threshold > 0 ? "inf" : "-inf");
    } else {
      out << p.threshold;
    }
    out << ',' << p.fpr << ',' << p.tpr << '\n';
  }
  return out.str();
}

void write_report(const EvalReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write = [&dir](const std::string& name, const std::string& text) {
    std::ofstream out(dir / name);
    if (!out) throw IOError("cannot write " + (dir / name).string());
    out << text;
  };
  write("report.json", to_json(report).dump(2) + "\n");
  write("report.txt", render_table(report));
  for (const auto& m : report.regions) {
    if (m.seg_auc) write("roc_seg_" + m.region_id + ".csv", roc_csv(m.seg_roc));
    if (m.det_auc) write("roc_det_" + m.region_id + ".csv", roc_csv(m.det_roc));
  }
}

}  // namespace pcb_sentinel
