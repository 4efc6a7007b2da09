#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "ecgstudy/densenet.hpp"
#include "ecgstudy/ecg_io.hpp"
#include "ecgstudy/event_log.hpp"
#include "ecgstudy/labels.hpp"
#include "ecgstudy/metrics.hpp"
#include "ecgstudy/preprocess.hpp"

namespace ecgstudy {

/// One lead-I segment shown to raters. Reference label and provenance stay server-side.
struct StudyItem {
  std::string item_id;
  std::string parent_id;
  std::size_t segment_index = 0;
  std::string lead_name = "I";
  double start_s = 0.0;
  double sampling_rate_hz = 0.0;
  std::vector<double> samples_uv;
  Rhythm reference_label = Rhythm::nsr;
  std::string dataset_name;

  Segment as_segment() const;
};

struct RaterSlot {
  std::string rater_id;
  std::string token;
  std::vector<std::size_t> order;  // item indices in presentation order
};

enum class AnnotationSource { human, model };

struct Annotation {
  std::string rater_id;
  std::string item_id;
  std::string label;
  std::string submitted_at;
  AnnotationSource source = AnnotationSource::human;
};

struct ModelItemResult {
  std::string item_id;
  std::optional<std::string> label;
  std::optional<std::array<double, kNumRhythms>> probabilities;  // NSR, AFIB, OTHER, NOISE
  std::optional<std::string> error;
};

struct ModelRun {
  std::string model_version;
  std::string run_at;
  std::vector<ModelItemResult> results;
};

struct Study {
  std::string study_id;
  std::uint64_t seed = 0;
  std::string created_at;
  std::string dataset_name;
  std::vector<std::string> choices;
  std::vector<StudyItem> items;
  std::vector<RaterSlot> raters;
  std::map<std::string, std::map<std::string, Annotation>> annotations;  // rater -> item -> answer
  std::set<std::string> partial_raters;
  std::optional<ModelRun> model_run;

  std::size_t answered(const std::string& rater_id) const;
  const RaterSlot* rater_by_token(const std::string& token) const;
  std::optional<std::size_t> item_index(const std::string& item_id) const;
};

/// Rater-facing view of an item: samples and progress only.
struct BlindedItem {
  std::string item_id;
  double sampling_rate_hz = 0.0;
  std::vector<double> samples_uv;
  std::size_t position = 0;
  std::size_t total = 0;
};

nlohmann::json to_json(const BlindedItem& item);

/// Empty when the rater has answered every item.
using NextItem = std::optional<BlindedItem>;

struct StudyDefinition {
  std::optional<std::string> study_id;
  std::uint64_t seed = 0;
  std::string dataset_name;
  std::vector<StudyItem> items;  // item_id filled in by create_study
  std::vector<std::string> rater_ids;
};

/// Lead-I segments of every manifest record, labeled with the record's reference label.
std::vector<StudyItem> items_from_manifest(const DatasetManifest& manifest);

/// Presentation order for one rater, fixed by (study seed, rater id).
std::vector<std::size_t> rater_order(std::uint64_t study_seed, const std::string& rater_id,
                                     std::size_t n_items);

struct CreatedStudy {
  std::string study_id;
  std::vector<std::pair<std::string, std::string>> rater_tokens;  // (rater id, token)
};

struct ModelRunSummary {
  std::size_t items = 0;
  std::size_t succeeded = 0;
  std::vector<std::pair<std::string, std::string>> failures;  // (item id, message)
};

// ---------------------------------------------------------------------------
// Report

struct RaterRow {
  std::string rater_id;
  AnnotationSource source = AnnotationSource::human;
  ConfusionMatrix matrix;
  std::vector<ClassMetrics> per_class;
  double weighted_precision = 0.0;
  double weighted_recall = 0.0;
  double weighted_f1 = 0.0;
  double accuracy = 0.0;
  std::optional<KappaResult> kappa;
};

/// Unweighted mean of each table cell over the included human raters.
struct AverageRow {
  double weighted_precision = 0.0;
  double weighted_recall = 0.0;
  double weighted_f1 = 0.0;
  std::vector<std::optional<double>> f1_per_class;  // reference class order
  double accuracy = 0.0;
};

struct AgreementReport {
  std::string study_id;
  std::size_t n_items = 0;
  std::vector<std::string> reference_classes;
  std::vector<RaterRow> raters;
  std::optional<AverageRow> rater_average;
  std::optional<RaterRow> model;
  std::string model_version;
  std::vector<std::string> excluded_partial;
  std::vector<PairAgreement> pairwise;
  std::vector<RocCurve> model_roc;
  std::vector<std::string> undefined_roc;
  std::vector<std::pair<std::string, std::string>> model_failures;
};

AgreementReport build_report(const Study& study);
nlohmann::json report_to_json(const AgreementReport& report);
std::string render_markdown(const AgreementReport& report);

// ---------------------------------------------------------------------------
// Service

using TokenSource = std::function<std::string()>;
using Clock = std::function<std::string()>;

/// 128-bit hex tokens from std::random_device.
std::string random_token();
/// Current UTC time, ISO 8601.
std::string utc_now();

using WarningSink = std::function<void(const std::string&)>;

// Studies persist as one append-only log each under <data_dir>/studies. Writes to a
// study are serialized under that study's lock; state changes only after the
// record is on disk.
class StudyService {
 public:
  struct Options {
    std::filesystem::path data_dir;
    TokenSource tokens = random_token;
    Clock clock = utc_now;
    WarningSink warn;  // defaults to stderr
  };

  explicit StudyService(Options options);
  ~StudyService();

  CreatedStudy create_study(StudyDefinition definition);
  NextItem next_item(const std::string& study_id, const std::string& rater_token);
  Annotation submit_annotation(const std::string& study_id, const std::string& rater_token,
                               const std::string& item_id, const std::string& label);
  /// Admin correction: removes a committed answer so the rater can decide again.
  void unlock(const std::string& study_id, const std::string& rater_id, const std::string& item_id);
  void mark_partial(const std::string& study_id, const std::string& rater_id);
  ModelRunSummary run_model(const std::string& study_id, const Params& params);
  AgreementReport report(const std::string& study_id);

  /// Copy of the committed state.
  Study snapshot(const std::string& study_id);
  std::vector<std::string> study_ids();
  const std::vector<std::string>& recovery_warnings() const { return warnings_; }

  static std::filesystem::path log_path(const std::filesystem::path& data_dir,
                                        const std::string& study_id);

 private:
  struct Entry;
  Entry& entry(const std::string& study_id);
  void load_existing();

  Options options_;
  std::shared_mutex map_mutex_;
  std::map<std::string, std::unique_ptr<Entry>> studies_;
  std::vector<std::string> warnings_;
};

/// Rebuilds a study from its log records alone.
Study replay(const std::vector<LogRecord>& records);

}  // namespace ecgstudy
