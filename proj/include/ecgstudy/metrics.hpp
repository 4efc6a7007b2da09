#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ecgstudy {

/// Reference-class rows x predicted-class columns. The predicted label set may
/// extend the reference set (NOT-SURE, NOISE); extra columns never count as hits.
struct ConfusionMatrix {
  std::vector<std::string> reference_classes;
  std::vector<std::string> predicted_classes;
  std::vector<std::size_t> counts;  // row-major |ref| x |pred|

  std::size_t rows() const { return reference_classes.size(); }
  std::size_t cols() const { return predicted_classes.size(); }
  std::size_t at(std::size_t r, std::size_t p) const { return counts[r * cols() + p]; }
  std::size_t& at(std::size_t r, std::size_t p) { return counts[r * cols() + p]; }
  std::size_t total() const;
  std::size_t row_sum(std::size_t r) const;
  /// Column sum over reference rows.
  std::size_t col_sum(std::size_t p) const;
  std::optional<std::size_t> reference_index(std::string_view label) const;
  std::optional<std::size_t> predicted_index(std::string_view label) const;
};

ConfusionMatrix confusion(std::span<const std::string> ref_labels,
                          std::span<const std::string> pred_labels,
                          const std::vector<std::string>& ref_order,
                          const std::vector<std::string>& pred_order);

/// Undefined (0/0) metrics are empty optionals.
struct ClassMetrics {
  std::string name;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
  std::size_t support = 0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

std::optional<double> f1_score(double precision, double recall);
ClassMetrics metrics_from_counts(std::string name, std::size_t tp, std::size_t fp, std::size_t fn);
ClassMetrics class_metrics(const ConfusionMatrix& matrix, std::string_view cls);
/// One entry per reference class, in row order.
std::vector<ClassMetrics> all_class_metrics(const ConfusionMatrix& matrix);

enum class MetricKind { precision, recall, f1 };

// Support-weighted mean over classes with nonzero support. An undefined value on
// a class that has support contributes 0.
double weighted_avg(std::span<const ClassMetrics> per_class, MetricKind which);

double accuracy(const ConfusionMatrix& matrix);

enum class KappaBand { none, slight, fair, moderate, substantial, almost_perfect };

std::string_view to_string(KappaBand band);
/// Bands are closed on the upper end: 0.80 is substantial, 0.81 almost perfect.
KappaBand interpret_kappa(double kappa);

struct KappaResult {
  double kappa = 0.0;
  double pr_a = 0.0;
  double pr_e = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  KappaBand band = KappaBand::none;
  std::size_t n = 0;
};

inline constexpr double kZ95 = 1.96;

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

/// kappa -/+ 1.96 se, clamped to [-1, 1].
Interval kappa_interval(double kappa, double se);

/// Kappa over a square agreement matrix (rows rater A, columns rater B).
KappaResult kappa_from_counts(std::span<const std::size_t> square_counts, std::size_t n_labels);
/// Kappa on the square matrix over the sorted union of both label sets.
KappaResult cohen_kappa(std::span<const std::string> a, std::span<const std::string> b);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocCurve {
  std::string label;  // class name or "micro"
  std::vector<RocPoint> points;
  double auc = 0.0;
};

/// Tied scores are grouped into one threshold step; the trapezoid then gives
/// each tied positive/negative pair half credit.
RocCurve roc_binary(std::span<const double> scores, const std::vector<bool>& positive,
                    std::string label);

/// Per-item score rows whose columns follow `classes`.
struct ScoreTable {
  std::vector<std::string> classes;
  std::vector<std::vector<double>> rows;
};

inline constexpr std::string_view kMicro = "micro";

// One-vs-rest curve for `target`, or with target "micro" the pooled curve over
// every (item, column) decision of the table.
RocCurve roc_auc(const ScoreTable& scores, std::span<const std::string> ref_labels,
                 std::string_view target);

struct RaterLabels {
  std::string rater_id;
  std::vector<std::string> labels;  // aligned by item
};

struct PairAgreement {
  std::string rater_a;
  std::string rater_b;
  ConfusionMatrix matrix;              // rater_a as rows
  std::optional<KappaResult> kappa;    // empty when agreement is degenerate
};

std::vector<PairAgreement> pairwise_agreement(std::span<const RaterLabels> raters);

}  // namespace ecgstudy
