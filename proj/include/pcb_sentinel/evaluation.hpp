#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pcb_sentinel/imaging.hpp"

namespace pcb_sentinel {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& truth);

// Strict forms: UndefinedMetricError when the denominator is zero.
double precision(const ConfusionCounts& c);
double recall(const ConfusionCounts& c);
double f_score(const ConfusionCounts& c);
double f_score(double precision, double recall);
double fpr(const ConfusionCounts& c);
double iou(const ConfusionCounts& c);

/// All five metrics with the zero-denominator conventions applied: an empty
/// prediction has precision 1 if the truth is empty too, else 0 (recall
/// mirrors this for an empty truth); F is 0 when P + R = 0; FPR is 0 without
/// negatives; IoU of empty vs empty is 1.
struct MetricSet {
  double precision = 0.0;
  double recall = 0.0;
  double f_score = 0.0;
  double fpr = 0.0;
  double iou = 0.0;
};
MetricSet metrics(const ConfusionCounts& c);

struct RocPoint {
  double threshold;  // scores >= threshold count as positive
  double fpr;
  double tpr;
};

struct RocResult {
  std::vector<RocPoint> curve;  // from (0,0) at +inf down to (1,1) at -inf
  double auc = 0.0;
};

/// Sweeps every distinct score; tied scores move together, so the trapezoid
/// area equals the Mann-Whitney statistic with ties counted one half.
RocResult roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct SweepResult {
  double best_iou = 0.0;
  float best_threshold = 0.0f;
  ConfusionCounts counts;      // pooled, at the best threshold
  MetricSet at_best;
  std::vector<float> thresholds;
  std::vector<double> ious;    // per threshold
};

/// Evenly spaced thresholds k / (n - 1), k = 0 .. n-1.
std::vector<float> even_thresholds(int n);

/// IoU from confusion counts pooled over all images at each threshold
/// (prediction = value >= t); ties go to the lowest threshold.
SweepResult best_iou_sweep(std::span<const FloatMap> maps, std::span<const BinaryMask> truths,
                           std::span<const float> thresholds);
SweepResult best_iou_sweep(std::span<const FloatMap> maps, std::span<const BinaryMask> truths, int n_thresholds = 256);

/// Pooled counts at a single threshold.
ConfusionCounts pooled_confusion(std::span<const FloatMap> maps, std::span<const BinaryMask> truths, float threshold);

/// Fraction of images whose verdict (>= 10 pixels at t) matches whether the truth mask is non-empty.
double detection_accuracy(std::span<const FloatMap> maps, std::span<const BinaryMask> truths, float threshold);

struct RegionEvalInput {
  std::string region_id;
  std::vector<FloatMap> maps;     // normalized to [0, 1]
  std::vector<BinaryMask> truths;
};

struct RegionMetrics {
  std::string region_id;
  std::size_t images = 0;
  std::size_t anomalous_images = 0;
  std::optional<double> best_iou;
  std::optional<float> best_threshold;
  std::optional<double> precision, recall, f_score;
  std::optional<double> seg_auc, det_auc;
  std::optional<double> det_accuracy;
  RocResult seg_roc, det_roc;
};

struct EvalReport {
  std::vector<RegionMetrics> regions;
  // Means over regions where the metric is defined.
  std::optional<double> mean_iou, mean_precision, mean_recall, mean_f_score, mean_seg_auc, mean_det_auc,
      mean_det_accuracy;
};

RegionMetrics evaluate_region(const RegionEvalInput& input, int n_thresholds = 256);
EvalReport evaluate_regions(std::span<const RegionEvalInput> inputs, int n_thresholds = 256);

nlohmann::json to_json(const EvalReport& report);
/// Text table: one row per region plus the average.
std::string render_table(const EvalReport& report);
/// "threshold,fpr,tpr" rows.
std::string roc_csv(const RocResult& roc);
/// Writes report.json, report.txt and roc_{seg,det}_<region>.csv into `dir`.
void write_report(const EvalReport& report, const std::filesystem::path& dir);

}  // namespace pcb_sentinel
