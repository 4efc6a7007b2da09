#include <algorithm>

#include <fmt/format.h>

#include "ecgstudy/errors.hpp"
#include "ecgstudy/study.hpp"

namespace ecgstudy {

namespace {

std::vector<std::string> with_extra(std::string_view extra) {
  auto order = reference_class_order();
  order.emplace_back(extra);
  return order;
}

RaterRow make_row(std::string id, AnnotationSource source, const std::vector<std::string>& refs,
                  const std::vector<std::string>& preds, const std::vector<std::string>& pred_order) {
  RaterRow row;
  row.rater_id = std::move(id);
  row.source = source;
  row.matrix = confusion(refs, preds, reference_class_order(), pred_order);
  row.per_class = all_class_metrics(row.matrix);
  row.weighted_precision = weighted_avg(row.per_class, MetricKind::precision);
  row.weighted_recall = weighted_avg(row.per_class, MetricKind::recall);
  row.weighted_f1 = weighted_avg(row.per_class, MetricKind::f1);
  row.accuracy = accuracy(row.matrix);
  try {
    row.kappa = cohen_kappa(refs, preds);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::degenerate_agreement) throw;
  }
  return row;
}

nlohmann::json opt(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

nlohmann::json matrix_json(const ConfusionMatrix& m) {
  nlohmann::json counts = nlohmann::json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t p = 0; p < m.cols(); ++p) row.push_back(m.at(r, p));
    counts.push_back(std::move(row));
  }
  return {{"reference_classes", m.reference_classes},
          {"predicted_classes", m.predicted_classes},
          {"counts", std::move(counts)},
          {"n", m.total()}};
}

nlohmann::json kappa_json(const std::optional<KappaResult>& k) {
  if (!k) return nullptr;
  return {{"kappa", k->kappa}, {"pr_a", k->pr_a},       {"pr_e", k->pr_e},
          {"se", k->se},       {"ci_low", k->ci_low},   {"ci_high", k->ci_high},
          {"band", std::string(to_string(k->band))},    {"n", k->n}};
}

nlohmann::json row_json(const RaterRow& row) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : row.per_class) {
    classes.push_back({{"class", c.name},
                       {"precision", opt(c.precision)},
                       {"recall", opt(c.recall)},
                       {"f1", opt(c.f1)},
                       {"support", c.support},
                       {"tp", c.tp},
                       {"fp", c.fp},
                       {"fn", c.fn}});
  }
  return {{"rater_id", row.rater_id},
          {"source", row.source == AnnotationSource::human ? "human" : "model"},
          {"confusion", matrix_json(row.matrix)},
          {"per_class", std::move(classes)},
          {"weighted_precision", row.weighted_precision},
          {"weighted_recall", row.weighted_recall},
          {"weighted_f1", row.weighted_f1},
          {"accuracy", row.accuracy},
          {"kappa", kappa_json(row.kappa)}};
}

std::string pct(double v) { return fmt::format("{:.1f}", 100.0 * v); }
std::string pct(const std::optional<double>& v) { return v ? pct(*v) : "n/a"; }

std::optional<double> f1_of(const RaterRow& row, std::size_t cls) { return row.per_class[cls].f1; }

void render_matrix(std::string& out, const ConfusionMatrix& m, std::string_view corner) {
  out += fmt::format("| {} |", corner);
  for (const auto& p : m.predicted_classes) out += fmt::format(" {} |", p);
  out += "\n|---|";
  for (std::size_t p = 0; p < m.cols(); ++p) out += "---:|";
  out += "\n";
  for (std::size_t r = 0; r < m.rows(); ++r) {
    out += fmt::format("| {} |", m.reference_classes[r]);
    for (std::size_t p = 0; p < m.cols(); ++p) out += fmt::format(" {} |", m.at(r, p));
    out += "\n";
  }
  out += "\n";
}

}  // namespace

AgreementReport build_report(const Study& study) {
  AgreementReport rep;
  rep.study_id = study.study_id;
  rep.n_items = study.items.size();
  rep.reference_classes = reference_class_order();

  std::vector<std::string> refs;
  for (const auto& item : study.items) refs.emplace_back(to_string(item.reference_label));

  std::vector<std::string> incomplete;
  std::vector<RaterLabels> included;
  for (const auto& rater : study.raters) {
    if (study.partial_raters.contains(rater.rater_id)) {
      rep.excluded_partial.push_back(rater.rater_id);
      continue;
    }
    if (study.answered(rater.rater_id) != study.items.size()) {
      incomplete.push_back(fmt::format("{} ({}/{})", rater.rater_id, study.answered(rater.rater_id),
                                       study.items.size()));
      continue;
    }
    const auto& answers = study.annotations.at(rater.rater_id);
    RaterLabels labels{rater.rater_id, {}};
    for (const auto& item : study.items) labels.labels.push_back(answers.at(item.item_id).label);
    included.push_back(std::move(labels));
  }
  if (!incomplete.empty()) {
    std::string list;
    for (const auto& s : incomplete) list += (list.empty() ? "" : ", ") + s;
    fail(ErrorCode::conflict,
         fmt::format("raters still in progress: {}; finish or mark them partial", list));
  }

  const auto human_order = rater_choices();
  for (const auto& r : included) {
    rep.raters.push_back(make_row(r.rater_id, AnnotationSource::human, refs, r.labels, human_order));
  }
  if (!rep.raters.empty()) {
    AverageRow avg;
    const double n = static_cast<double>(rep.raters.size());
    for (const auto& row : rep.raters) {
      avg.weighted_precision += row.weighted_precision / n;
      avg.weighted_recall += row.weighted_recall / n;
      avg.weighted_f1 += row.weighted_f1 / n;
      avg.accuracy += row.accuracy / n;
    }
    for (std::size_t c = 0; c < rep.reference_classes.size(); ++c) {
      double sum = 0.0;
      std::size_t defined = 0;
      for (const auto& row : rep.raters) {
        if (const auto f = f1_of(row, c)) {
          sum += *f;
          ++defined;
        }
      }
      avg.f1_per_class.push_back(defined ? std::optional(sum / static_cast<double>(defined))
                                         : std::nullopt);
    }
    rep.rater_average = std::move(avg);
  }
  if (included.size() >= 2) rep.pairwise = pairwise_agreement(included);

  if (study.model_run) {
    const auto& run = *study.model_run;
    rep.model_version = run.model_version;
    std::vector<std::string> model_refs, model_preds;
    ScoreTable scores{reference_class_order(), {}};
    for (const auto& r : run.results) {
      if (!r.label || !r.probabilities) {
        rep.model_failures.emplace_back(r.item_id, r.error.value_or("no prediction"));
        continue;
      }
      const auto idx = study.item_index(r.item_id);
      if (!idx) fail(ErrorCode::validation, fmt::format("model result for unknown item '{}'", r.item_id));
      model_refs.push_back(refs[*idx]);
      model_preds.push_back(*r.label);
      std::vector<double> row;
      for (const auto& cls : scores.classes) {
        row.push_back((*r.probabilities)[static_cast<std::size_t>(*parse_rhythm(cls))]);
      }
      scores.rows.push_back(std::move(row));
    }
    if (!model_refs.empty()) {
      rep.model = make_row("model", AnnotationSource::model, model_refs, model_preds,
                           with_extra(to_string(Rhythm::noise)));
      std::vector<std::string> targets = reference_class_order();
      targets.emplace_back(kMicro);
      for (const auto& t : targets) {
        try {
          rep.model_roc.push_back(roc_auc(scores, model_refs, t));
        } catch (const Error& e) {
          if (e.code() != ErrorCode::undefined_auc) throw;
          rep.undefined_roc.push_back(t);
        }
      }
    }
  }
  if (rep.raters.empty() && !rep.model) {
    fail(ErrorCode::empty_report, "no completed raters and no model run to report on");
  }
  return rep;
}

nlohmann::json report_to_json(const AgreementReport& rep) {
  nlohmann::json raters = nlohmann::json::array();
  for (const auto& row : rep.raters) raters.push_back(row_json(row));

  nlohmann::json average = nullptr;
  if (rep.rater_average) {
    const auto& a = *rep.rater_average;
    nlohmann::json f1 = nlohmann::json::object();
    for (std::size_t c = 0; c < rep.reference_classes.size(); ++c) {
      f1[rep.reference_classes[c]] = opt(a.f1_per_class[c]);
    }
    average = {{"weighted_precision", a.weighted_precision},
               {"weighted_recall", a.weighted_recall},
               {"weighted_f1", a.weighted_f1},
               {"f1_per_class", std::move(f1)},
               {"accuracy", a.accuracy}};
  }

  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : rep.pairwise) {
    pairs.push_back({{"rater_a", p.rater_a},
                     {"rater_b", p.rater_b},
                     {"confusion", matrix_json(p.matrix)},
                     {"kappa", kappa_json(p.kappa)}});
  }

  nlohmann::json roc = nlohmann::json::array();
  for (const auto& c : rep.model_roc) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& pt : c.points) pts.push_back({pt.fpr, pt.tpr});
    roc.push_back({{"label", c.label}, {"auc", c.auc}, {"points", std::move(pts)}});
  }

  nlohmann::json failures = nlohmann::json::array();
  for (const auto& [item, msg] : rep.model_failures) {
    failures.push_back({{"item_id", item}, {"error", msg}});
  }

  return {{"study_id", rep.study_id},
          {"n_items", rep.n_items},
          {"reference_classes", rep.reference_classes},
          {"raters", std::move(raters)},
          {"rater_average", std::move(average)},
          {"model", rep.model ? row_json(*rep.model) : nlohmann::json(nullptr)},
          {"model_version", rep.model_version},
          {"excluded_partial_raters", rep.excluded_partial},
          {"pairwise", std::move(pairs)},
          {"model_roc", std::move(roc)},
          {"undefined_roc", rep.undefined_roc},
          {"model_failures", std::move(failures)}};
}

std::string render_markdown(const AgreementReport& rep) {
  std::string out = fmt::format("# Agreement report: {}\n\n{} items, reference from 12-lead interpretations.\n\n",
                                rep.study_id, rep.n_items);
  std::vector<const RaterRow*> rows;
  for (const auto& r : rep.raters) rows.push_back(&r);

  out += "## Weighted performance metrics (%)\n\n";
  out += "| | Weighted Avg. Precision | Weighted Avg. Recall | Weighted Avg. F1-Score |\n";
  out += "|---|---:|---:|---:|\n";
  for (const auto* r : rows) {
    out += fmt::format("| {} | {} | {} | {} |\n", r->rater_id, pct(r->weighted_precision),
                       pct(r->weighted_recall), pct(r->weighted_f1));
  }
  if (rep.rater_average) {
    const auto& a = *rep.rater_average;
    out += fmt::format("| Rater Avg. | {} | {} | {} |\n", pct(a.weighted_precision),
                       pct(a.weighted_recall), pct(a.weighted_f1));
  }
  if (rep.model) {
    out += fmt::format("| Model | {} | {} | {} |\n", pct(rep.model->weighted_precision),
                       pct(rep.model->weighted_recall), pct(rep.model->weighted_f1));
  }

  out += "\n## F1-score per class and accuracy (%)\n\n|";
  for (const auto& c : rep.reference_classes) out += fmt::format(" | F1-Score ({})", c);
  out += " | Accuracy |\n|---|";
  for (std::size_t c = 0; c <= rep.reference_classes.size(); ++c) out += "---:|";
  out += "\n";
  auto table2 = [&](std::string_view name, const RaterRow& r) {
    out += fmt::format("| {} |", name);
    for (std::size_t c = 0; c < rep.reference_classes.size(); ++c) out += fmt::format(" {} |", pct(f1_of(r, c)));
    out += fmt::format(" {} |\n", pct(r.accuracy));
  };
  for (const auto* r : rows) table2(r->rater_id, *r);
  if (rep.rater_average) {
    out += "| Rater Avg. |";
    for (const auto& f : rep.rater_average->f1_per_class) out += fmt::format(" {} |", pct(f));
    out += fmt::format(" {} |\n", pct(rep.rater_average->accuracy));
  }
  if (rep.model) table2("Model", *rep.model);

  out += "\n## Agreement with reference (Cohen's kappa)\n\n";
  out += "| | κ Value | Standard Error | 95% CI | Band |\n|---|---:|---:|---|---|\n";
  auto table3 = [&](std::string_view name, const RaterRow& r) {
    if (!r.kappa) {
      out += fmt::format("| {} | n/a | n/a | n/a | undefined |\n", name);
      return;
    }
    const auto& k = *r.kappa;
    out += fmt::format("| {} | {:.2f} | {:.3f} | {:.2f} to {:.2f} | {} |\n", name, k.kappa, k.se,
                       k.ci_low, k.ci_high, to_string(k.band));
  };
  for (const auto* r : rows) table3(r->rater_id, *r);
  if (rep.model) table3("Model", *rep.model);

  out += "\n## Confusion matrices (rows: reference)\n\n";
  for (const auto* r : rows) {
    out += fmt::format("### {}\n\n", r->rater_id);
    render_matrix(out, r->matrix, "ref \\ pred");
  }
  if (rep.model) {
    out += fmt::format("### Model ({})\n\n", rep.model_version);
    render_matrix(out, rep.model->matrix, "ref \\ pred");
  }

  if (!rep.pairwise.empty()) {
    out += "## Pairwise rater agreement\n\n";
    for (const auto& p : rep.pairwise) {
      out += fmt::format("### {} vs {}\n\n", p.rater_a, p.rater_b);
      render_matrix(out, p.matrix, fmt::format("{} \\ {}", p.rater_a, p.rater_b));
      if (p.kappa) {
        out += fmt::format("κ = {:.2f} (SE {:.3f}, 95% CI {:.2f} to {:.2f}, {})\n\n", p.kappa->kappa,
                           p.kappa->se, p.kappa->ci_low, p.kappa->ci_high, to_string(p.kappa->band));
      } else {
        out += "κ undefined (chance agreement is 1)\n\n";
      }
    }
  }

  if (!rep.model_roc.empty() || !rep.undefined_roc.empty()) {
    out += "## Model ROC\n\n| Class | AUC |\n|---|---:|\n";
    for (const auto& c : rep.model_roc) out += fmt::format("| {} | {:.2f} |\n", c.label, c.auc);
    for (const auto& c : rep.undefined_roc) out += fmt::format("| {} | undefined |\n", c);
    out += "\n";
  }

  out += "## Notes\n\n";
  out += "- NOT-SURE and NOISE answers are never correct: they add a false negative to the "
         "reference class and a false positive to no class.\n";
  out += "- Weighted averages are support-weighted over AFIB, NSR and OTHER; macro averages are not reported.\n";
  if (rep.rater_average) out += "- Rater Avg. is the unweighted mean of the rater rows.\n";
  if (!rep.excluded_partial.empty()) {
    std::string list;
    for (const auto& r : rep.excluded_partial) list += (list.empty() ? "" : ", ") + r;
    out += fmt::format("- Excluded partial raters: {}.\n", list);
  }
  if (!rep.model_failures.empty()) {
    out += fmt::format("- Model failed on {} item(s):\n", rep.model_failures.size());
    for (const auto& [item, msg] : rep.model_failures) out += fmt::format("  - {}: {}\n", item, msg);
  }
  return out;
}

}  // namespace ecgstudy
