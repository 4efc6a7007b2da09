#include "ecgstudy/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "ecgstudy/errors.hpp"
#include "ecgstudy/labels.hpp"

namespace ecgstudy {

namespace {

std::optional<std::size_t> index_of(const std::vector<std::string>& v, std::string_view s) {
  const auto it = std::find(v.begin(), v.end(), s);
  if (it == v.end()) return std::nullopt;
  return static_cast<std::size_t>(it - v.begin());
}

std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

void check_empty(const ConfusionMatrix& m) {
  if (m.total() == 0) fail(ErrorCode::empty_matrix, "confusion matrix has no items");
}

}  // namespace

std::size_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

std::size_t ConfusionMatrix::row_sum(std::size_t r) const {
  std::size_t s = 0;
  for (std::size_t p = 0; p < cols(); ++p) s += at(r, p);
  return s;
}

std::size_t ConfusionMatrix::col_sum(std::size_t p) const {
  std::size_t s = 0;
  for (std::size_t r = 0; r < rows(); ++r) s += at(r, p);
  return s;
}

std::optional<std::size_t> ConfusionMatrix::reference_index(std::string_view label) const {
  return index_of(reference_classes, label);
}

std::optional<std::size_t> ConfusionMatrix::predicted_index(std::string_view label) const {
  return index_of(predicted_classes, label);
}

ConfusionMatrix confusion(std::span<const std::string> ref_labels,
                          std::span<const std::string> pred_labels,
                          const std::vector<std::string>& ref_order,
                          const std::vector<std::string>& pred_order) {
  if (ref_labels.size() != pred_labels.size()) {
    fail(ErrorCode::argument, fmt::format("{} reference labels vs {} predictions",
                                          ref_labels.size(), pred_labels.size()));
  }
  for (const auto& r : ref_order) {
    if (!index_of(pred_order, r)) {
      fail(ErrorCode::argument, fmt::format("predicted classes lack reference class '{}'", r));
    }
  }
  ConfusionMatrix m{ref_order, pred_order,
                    std::vector<std::size_t>(ref_order.size() * pred_order.size(), 0)};
  for (std::size_t i = 0; i < ref_labels.size(); ++i) {
    const auto r = m.reference_index(ref_labels[i]);
    if (!r) fail(ErrorCode::argument, fmt::format("item {}: unknown reference label '{}'", i, ref_labels[i]));
    const auto p = m.predicted_index(pred_labels[i]);
    if (!p) fail(ErrorCode::argument, fmt::format("item {}: unknown predicted label '{}'", i, pred_labels[i]));
    ++m.at(*r, *p);
  }
  return m;
}

std::optional<double> f1_score(double precision, double recall) {
  if (!(precision + recall > 0.0)) return std::nullopt;
  return 2.0 * precision * recall / (precision + recall);
}

ClassMetrics metrics_from_counts(std::string name, std::size_t tp, std::size_t fp, std::size_t fn) {
  ClassMetrics c;
  c.name = std::move(name);
  c.tp = tp;
  c.fp = fp;
  c.fn = fn;
  c.support = tp + fn;
  c.precision = ratio(tp, tp + fp);
  c.recall = ratio(tp, tp + fn);
  if (c.precision && c.recall) c.f1 = f1_score(*c.precision, *c.recall);
  return c;
}

ClassMetrics class_metrics(const ConfusionMatrix& matrix, std::string_view cls) {
  check_empty(matrix);
  const auto r = matrix.reference_index(cls);
  if (!r) fail(ErrorCode::argument, fmt::format("'{}' is not a reference class", cls));
  const std::size_t p = *matrix.predicted_index(cls);
  const std::size_t tp = matrix.at(*r, p);
  return metrics_from_counts(std::string(cls), tp, matrix.col_sum(p) - tp,
                             matrix.row_sum(*r) - tp);
}

std::vector<ClassMetrics> all_class_metrics(const ConfusionMatrix& matrix) {
  std::vector<ClassMetrics> out;
  for (const auto& cls : matrix.reference_classes) out.push_back(class_metrics(matrix, cls));
  return out;
}

double weighted_avg(std::span<const ClassMetrics> per_class, MetricKind which) {
  double num = 0.0;
  std::size_t den = 0;
  for (const auto& c : per_class) {
    if (c.support == 0) continue;
    const auto& v = which == MetricKind::precision ? c.precision
                    : which == MetricKind::recall  ? c.recall
                                                   : c.f1;
    num += static_cast<double>(c.support) * v.value_or(0.0);
    den += c.support;
  }
  if (den == 0) fail(ErrorCode::argument, "weighted average needs a class with nonzero support");
  return num / static_cast<double>(den);
}

double accuracy(const ConfusionMatrix& matrix) {
  check_empty(matrix);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < matrix.rows(); ++r) {
    hits += matrix.at(r, *matrix.predicted_index(matrix.reference_classes[r]));
  }
  return static_cast<double>(hits) / static_cast<double>(matrix.total());
}

std::string_view to_string(KappaBand band) {
  switch (band) {
    case KappaBand::none: return "none";
    case KappaBand::slight: return "slight";
    case KappaBand::fair: return "fair";
    case KappaBand::moderate: return "moderate";
    case KappaBand::substantial: return "substantial";
    case KappaBand::almost_perfect: return "almost-perfect";
  }
  return "none";
}

KappaBand interpret_kappa(double kappa) {
  if (kappa <= 0.0) return KappaBand::none;
  if (kappa <= 0.20) return KappaBand::slight;
  if (kappa <= 0.40) return KappaBand::fair;
  if (kappa <= 0.60) return KappaBand::moderate;
  if (kappa <= 0.80) return KappaBand::substantial;
  return KappaBand::almost_perfect;
}

Interval kappa_interval(double kappa, double se) {
  return {std::clamp(kappa - kZ95 * se, -1.0, 1.0), std::clamp(kappa + kZ95 * se, -1.0, 1.0)};
}

KappaResult kappa_from_counts(std::span<const std::size_t> counts, std::size_t k) {
  if (counts.size() != k * k) fail(ErrorCode::argument, "agreement matrix must be square");
  const std::size_t n = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  if (n == 0) fail(ErrorCode::empty_matrix, "agreement matrix has no items");
  const double total = static_cast<double>(n);
  std::size_t diag = 0;
  double pr_e = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    diag += counts[i * k + i];
    std::size_t row = 0, col = 0;
    for (std::size_t j = 0; j < k; ++j) {
      row += counts[i * k + j];
      col += counts[j * k + i];
    }
    pr_e += (static_cast<double>(row) / total) * (static_cast<double>(col) / total);
  }
  if (pr_e >= 1.0) {
    fail(ErrorCode::degenerate_agreement, "chance agreement is 1; kappa undefined");
  }
  KappaResult res;
  res.n = n;
  res.pr_a = static_cast<double>(diag) / total;
  res.pr_e = pr_e;
  res.kappa = (res.pr_a - pr_e) / (1.0 - pr_e);
  res.se = std::sqrt(res.pr_a * (1.0 - res.pr_a) / (total * (1.0 - pr_e) * (1.0 - pr_e)));
  const auto ci = kappa_interval(res.kappa, res.se);
  res.ci_low = ci.low;
  res.ci_high = ci.high;
  res.band = interpret_kappa(res.kappa);
  return res;
}

KappaResult cohen_kappa(std::span<const std::string> a, std::span<const std::string> b) {
  if (a.size() != b.size()) {
    fail(ErrorCode::argument, fmt::format("{} vs {} labels", a.size(), b.size()));
  }
  if (a.empty()) fail(ErrorCode::empty_matrix, "no items to compare");
  std::set<std::string> labels(a.begin(), a.end());
  labels.insert(b.begin(), b.end());
  const std::vector<std::string> order(labels.begin(), labels.end());
  const std::size_t k = order.size();
  std::vector<std::size_t> counts(k * k, 0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++counts[*index_of(order, a[i]) * k + *index_of(order, b[i])];
  }
  return kappa_from_counts(counts, k);
}

RocCurve roc_binary(std::span<const double> scores, const std::vector<bool>& positive,
                    std::string label) {
  if (scores.size() != positive.size()) fail(ErrorCode::argument, "scores and labels misaligned");
  std::size_t pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) fail(ErrorCode::argument, fmt::format("score {} not finite", i));
    if (positive[i]) ++pos;
  }
  const std::size_t neg = scores.size() - pos;
  if (pos == 0 || neg == 0) {
    fail(ErrorCode::undefined_auc,
         fmt::format("AUC for '{}' needs positives and negatives ({} / {})", label, pos, neg));
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return scores[x] > scores[y]; });

  RocCurve curve;
  curve.label = std::move(label);
  curve.points.push_back({0.0, 0.0});
  // Twice the area in units of (1 / pos) x (1 / neg), accumulated exactly.
  std::size_t tp = 0, fp = 0;
  double doubled_area = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    const double threshold = scores[order[i]];
    const std::size_t tp_before = tp, fp_before = fp;
    for (; i < order.size() && scores[order[i]] == threshold; ++i) {
      if (positive[order[i]]) {
        ++tp;
      } else {
        ++fp;
      }
    }
    doubled_area += static_cast<double>(fp - fp_before) * static_cast<double>(tp + tp_before);
    curve.points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                            static_cast<double>(tp) / static_cast<double>(pos)});
  }
  curve.auc = doubled_area / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
  return curve;
}

RocCurve roc_auc(const ScoreTable& scores, std::span<const std::string> ref_labels,
                 std::string_view target) {
  if (scores.rows.size() != ref_labels.size()) {
    fail(ErrorCode::argument, fmt::format("{} score rows for {} labels", scores.rows.size(),
                                          ref_labels.size()));
  }
  for (std::size_t i = 0; i < scores.rows.size(); ++i) {
    if (scores.rows[i].size() != scores.classes.size()) {
      fail(ErrorCode::argument, fmt::format("score row {} has {} columns, expected {}", i,
                                            scores.rows[i].size(), scores.classes.size()));
    }
  }
  std::vector<double> s;
  std::vector<bool> is_pos;
  if (target == kMicro) {
    for (std::size_t i = 0; i < scores.rows.size(); ++i) {
      for (std::size_t c = 0; c < scores.classes.size(); ++c) {
        s.push_back(scores.rows[i][c]);
        is_pos.push_back(scores.classes[c] == ref_labels[i]);
      }
    }
  } else {
    const auto c = index_of(scores.classes, target);
    if (!c) fail(ErrorCode::argument, fmt::format("no score column for '{}'", target));
    for (std::size_t i = 0; i < scores.rows.size(); ++i) {
      s.push_back(scores.rows[i][*c]);
      is_pos.push_back(ref_labels[i] == target);
    }
  }
  return roc_binary(s, is_pos, std::string(target));
}

std::vector<PairAgreement> pairwise_agreement(std::span<const RaterLabels> raters) {
  if (raters.size() < 2) fail(ErrorCode::argument, "pairwise agreement needs at least 2 raters");
  for (const auto& r : raters) {
    if (r.labels.size() != raters.front().labels.size()) {
      fail(ErrorCode::argument,
           fmt::format("rater '{}' has {} items, rater '{}' has {}", r.rater_id, r.labels.size(),
                       raters.front().rater_id, raters.front().labels.size()));
    }
  }
  // Shared axis: known choices in their usual order, then anything else sorted.
  std::set<std::string> seen;
  for (const auto& r : raters) seen.insert(r.labels.begin(), r.labels.end());
  std::vector<std::string> order;
  for (const auto& group : {rater_choices(), model_labels()}) {
    for (const auto& l : group) {
      if (seen.contains(l) && !index_of(order, l)) order.push_back(l);
    }
  }
  for (const auto& l : seen) {
    if (!index_of(order, l)) order.push_back(l);
  }

  std::vector<PairAgreement> out;
  for (std::size_t i = 0; i < raters.size(); ++i) {
    for (std::size_t j = i + 1; j < raters.size(); ++j) {
      PairAgreement pa;
      pa.rater_a = raters[i].rater_id;
      pa.rater_b = raters[j].rater_id;
      pa.matrix = confusion(raters[i].labels, raters[j].labels, order, order);
      try {
        pa.kappa = kappa_from_counts(pa.matrix.counts, order.size());
      } catch (const Error& e) {
        if (e.code() != ErrorCode::degenerate_agreement && e.code() != ErrorCode::empty_matrix) throw;
      }
      out.push_back(std::move(pa));
    }
  }
  return out;
}

}  // namespace ecgstudy
