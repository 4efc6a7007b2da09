#include "ecgstudy/study.hpp"

#include <algorithm>
#include <chrono>
#include <random>

#include <fmt/chrono.h>
#include <fmt/format.h>

#include "ecgstudy/errors.hpp"

namespace ecgstudy {

namespace {

constexpr std::string_view kStudyCreated = "study_created";
constexpr std::string_view kAnnotation = "annotation";
constexpr std::string_view kUnlock = "unlock";
constexpr std::string_view kRaterPartial = "rater_partial";
constexpr std::string_view kModelRun = "model_run";

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool valid_identifier(std::string_view id) {
  if (id.empty() || id.size() > 128) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
           c == '-' || c == '_' || c == '.';
  }) && id.front() != '.';
}

Rhythm rhythm_from(const std::string& token) {
  const auto r = parse_rhythm(token);
  if (!r) fail(ErrorCode::validation, fmt::format("unknown rhythm '{}' in study log", token));
  return *r;
}

nlohmann::json item_to_json(const StudyItem& item) {
  return {{"item_id", item.item_id},
          {"parent_id", item.parent_id},
          {"segment_index", item.segment_index},
          {"lead_name", item.lead_name},
          {"start_s", item.start_s},
          {"sampling_rate_hz", item.sampling_rate_hz},
          {"samples_uv", item.samples_uv},
          {"reference_label", std::string(to_string(item.reference_label))},
          {"dataset_name", item.dataset_name}};
}

StudyItem item_from_json(const nlohmann::json& j) {
  StudyItem item;
  item.item_id = j.at("item_id").get<std::string>();
  item.parent_id = j.at("parent_id").get<std::string>();
  item.segment_index = j.at("segment_index").get<std::size_t>();
  item.lead_name = j.at("lead_name").get<std::string>();
  item.start_s = j.at("start_s").get<double>();
  item.sampling_rate_hz = j.at("sampling_rate_hz").get<double>();
  item.samples_uv = j.at("samples_uv").get<std::vector<double>>();
  item.reference_label = rhythm_from(j.at("reference_label").get<std::string>());
  item.dataset_name = j.at("dataset_name").get<std::string>();
  return item;
}

void apply(Study& study, const LogRecord& record) {
  const auto& p = record.payload;
  if (record.kind == kStudyCreated) {
    study.study_id = p.at("study_id").get<std::string>();
    study.seed = p.at("seed").get<std::uint64_t>();
    study.created_at = p.at("created_at").get<std::string>();
    study.dataset_name = p.at("dataset_name").get<std::string>();
    study.choices = p.at("choices").get<std::vector<std::string>>();
    for (const auto& j : p.at("items")) study.items.push_back(item_from_json(j));
    for (const auto& j : p.at("raters")) {
      study.raters.push_back({j.at("rater_id").get<std::string>(), j.at("token").get<std::string>(),
                              j.at("order").get<std::vector<std::size_t>>()});
    }
  } else if (record.kind == kAnnotation) {
    Annotation a{p.at("rater_id").get<std::string>(), p.at("item_id").get<std::string>(),
                 p.at("label").get<std::string>(), p.at("submitted_at").get<std::string>(),
                 AnnotationSource::human};
    study.annotations[a.rater_id][a.item_id] = a;
  } else if (record.kind == kUnlock) {
    study.annotations[p.at("rater_id").get<std::string>()].erase(p.at("item_id").get<std::string>());
  } else if (record.kind == kRaterPartial) {
    study.partial_raters.insert(p.at("rater_id").get<std::string>());
  } else if (record.kind == kModelRun) {
    ModelRun run;
    run.model_version = p.at("model_version").get<std::string>();
    run.run_at = p.at("run_at").get<std::string>();
    for (const auto& j : p.at("results")) {
      ModelItemResult r;
      r.item_id = j.at("item_id").get<std::string>();
      if (j.contains("label")) r.label = j["label"].get<std::string>();
      if (j.contains("probabilities")) {
        r.probabilities = j["probabilities"].get<std::array<double, kNumRhythms>>();
      }
      if (j.contains("error")) r.error = j["error"].get<std::string>();
      run.results.push_back(std::move(r));
    }
    study.model_run = std::move(run);
  } else {
    fail(ErrorCode::validation, fmt::format("unknown log record kind '{}'", record.kind));
  }
}

}  // namespace

Segment StudyItem::as_segment() const {
  Segment s;
  s.parent_id = item_id;
  s.segment_index = segment_index;
  s.lead_name = lead_name;
  s.samples = samples_uv;
  s.sampling_rate_hz = sampling_rate_hz;
  s.start_s = start_s;
  s.duration_s = static_cast<double>(samples_uv.size()) / sampling_rate_hz;
  return s;
}

std::size_t Study::answered(const std::string& rater_id) const {
  const auto it = annotations.find(rater_id);
  return it == annotations.end() ? 0 : it->second.size();
}

const RaterSlot* Study::rater_by_token(const std::string& token) const {
  if (token.empty()) return nullptr;
  for (const auto& r : raters) {
    if (r.token == token) return &r;
  }
  return nullptr;
}

std::optional<std::size_t> Study::item_index(const std::string& item_id) const {
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].item_id == item_id) return i;
  }
  return std::nullopt;
}

nlohmann::json to_json(const BlindedItem& item) {
  return {{"item_id", item.item_id},
          {"sampling_rate_hz", item.sampling_rate_hz},
          {"samples_uv", item.samples_uv},
          {"position", item.position},
          {"total", item.total}};
}

std::vector<StudyItem> items_from_manifest(const DatasetManifest& manifest) {
  std::vector<StudyItem> items;
  for (const auto& entry : manifest.entries) {
    const EcgRecord record = load_record(entry);
    for (const auto& seg : split_segments(extract_lead(record, "I"))) {
      StudyItem item;
      item.parent_id = record.record_id;
      item.segment_index = seg.segment_index;
      item.lead_name = seg.lead_name;
      item.start_s = seg.start_s;
      item.sampling_rate_hz = seg.sampling_rate_hz;
      item.samples_uv = seg.samples;
      item.reference_label = entry.label;
      item.dataset_name = manifest.dataset_name;
      items.push_back(std::move(item));
    }
  }
  return items;
}

std::vector<std::size_t> rater_order(std::uint64_t study_seed, const std::string& rater_id,
                                     std::size_t n_items) {
  std::vector<std::size_t> order(n_items);
  for (std::size_t i = 0; i < n_items; ++i) order[i] = i;
  std::mt19937_64 rng(splitmix64(study_seed ^ fnv1a(rater_id)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::string random_token() {
  std::random_device rd;
  std::string out;
  for (int i = 0; i < 4; ++i) out += fmt::format("{:08x}", static_cast<std::uint32_t>(rd()));
  return out;
}

std::string utc_now() {
  const auto now = std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", now);
}

Study replay(const std::vector<LogRecord>& records) {
  Study study;
  for (const auto& r : records) {
    if ((r.kind == kStudyCreated) != (r.seq == 0)) {
      fail(ErrorCode::validation, fmt::format("log record {} ('{}') out of place", r.seq, r.kind));
    }
    try {
      apply(study, r);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::validation, fmt::format("log record {} malformed: {}", r.seq, e.what()));
    }
  }
  return study;
}

// ---------------------------------------------------------------------------
// Service

struct StudyService::Entry {
  std::mutex mutex;
  Study study;
  std::unique_ptr<EventLog> log;

  void commit(std::string_view kind, nlohmann::json payload) {
    const auto record = log->append(std::string(kind), std::move(payload));
    apply(study, record);
  }
};

StudyService::StudyService(Options options) : options_(std::move(options)) {
  if (!options_.tokens) options_.tokens = random_token;
  if (!options_.clock) options_.clock = utc_now;
  if (!options_.warn) {
    options_.warn = [](const std::string& msg) { fmt::print(stderr, "warning: {}\n", msg); };
  }
  load_existing();
}

StudyService::~StudyService() = default;

std::filesystem::path StudyService::log_path(const std::filesystem::path& data_dir,
                                             const std::string& study_id) {
  return data_dir / "studies" / (study_id + ".ndjson");
}

void StudyService::load_existing() {
  const auto dir = options_.data_dir / "studies";
  if (!std::filesystem::is_directory(dir)) return;
  std::vector<std::filesystem::path> paths;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".ndjson") paths.push_back(e.path());
  }
  std::sort(paths.begin(), paths.end());
  for (const auto& path : paths) {
    std::vector<LogRecord> records;
    RecoveryReport recovery;
    auto entry = std::make_unique<Entry>();
    entry->log = std::make_unique<EventLog>(path, records, recovery);
    for (const auto& w : recovery.warnings) {
      warnings_.push_back(w);
      options_.warn(w);
    }
    if (records.empty()) {
      const auto w = fmt::format("{}: no committed records, ignored", path.string());
      warnings_.push_back(w);
      options_.warn(w);
      continue;
    }
    entry->study = replay(records);
    if (entry->study.study_id != path.stem().string()) {
      fail(ErrorCode::validation, fmt::format("{} holds study '{}'", path.string(),
                                              entry->study.study_id));
    }
    studies_[entry->study.study_id] = std::move(entry);
  }
}

StudyService::Entry& StudyService::entry(const std::string& study_id) {
  std::shared_lock lock(map_mutex_);
  const auto it = studies_.find(study_id);
  if (it == studies_.end()) fail(ErrorCode::not_found, fmt::format("no study '{}'", study_id));
  return *it->second;
}

CreatedStudy StudyService::create_study(StudyDefinition def) {
  if (def.items.empty()) fail(ErrorCode::argument, "a study needs at least one item");
  if (def.rater_ids.empty()) fail(ErrorCode::argument, "a study needs at least one rater");
  std::set<std::string> seen;
  for (const auto& r : def.rater_ids) {
    if (!valid_identifier(r)) fail(ErrorCode::argument, fmt::format("invalid rater id '{}'", r));
    if (!seen.insert(r).second) fail(ErrorCode::argument, fmt::format("duplicate rater id '{}'", r));
  }
  const std::string study_id =
      def.study_id.value_or(fmt::format("study-{}", options_.tokens().substr(0, 12)));
  if (!valid_identifier(study_id)) {
    fail(ErrorCode::argument, fmt::format("invalid study id '{}'", study_id));
  }

  std::set<std::string> item_ids;
  for (std::size_t i = 0; i < def.items.size(); ++i) {
    auto& item = def.items[i];
    if (!is_reference_class(item.reference_label)) {
      fail(ErrorCode::argument, fmt::format("item {} has no reference-class label", i));
    }
    if (item.samples_uv.empty() || !(item.sampling_rate_hz > 0.0)) {
      fail(ErrorCode::argument, fmt::format("item {} has no samples", i));
    }
    // Opaque ids: nothing about the source record or its position leaks to raters.
    item.item_id = fmt::format("{:012x}", splitmix64(def.seed ^ splitmix64(i)) >> 16);
    if (!item_ids.insert(item.item_id).second) {
      fail(ErrorCode::argument, "item id collision; choose another seed");
    }
  }

  nlohmann::json items = nlohmann::json::array();
  for (const auto& item : def.items) items.push_back(item_to_json(item));
  nlohmann::json raters = nlohmann::json::array();
  CreatedStudy created{study_id, {}};
  for (const auto& r : def.rater_ids) {
    const std::string token = options_.tokens();
    created.rater_tokens.emplace_back(r, token);
    raters.push_back(
        {{"rater_id", r}, {"token", token}, {"order", rater_order(def.seed, r, def.items.size())}});
  }
  nlohmann::json payload = {{"study_id", study_id},
                            {"seed", def.seed},
                            {"created_at", options_.clock()},
                            {"dataset_name", def.dataset_name},
                            {"choices", rater_choices()},
                            {"items", std::move(items)},
                            {"raters", std::move(raters)}};

  std::unique_lock lock(map_mutex_);
  if (studies_.contains(study_id)) fail(ErrorCode::conflict, fmt::format("study '{}' exists", study_id));
  const auto path = log_path(options_.data_dir, study_id);
  if (std::filesystem::exists(path)) {
    fail(ErrorCode::conflict, fmt::format("log for study '{}' already on disk", study_id));
  }
  auto entry = std::make_unique<Entry>();
  std::vector<LogRecord> none;
  RecoveryReport recovery;
  entry->log = std::make_unique<EventLog>(path, none, recovery);
  entry->commit(kStudyCreated, std::move(payload));
  studies_[study_id] = std::move(entry);
  return created;
}

NextItem StudyService::next_item(const std::string& study_id, const std::string& token) {
  auto& e = entry(study_id);
  std::lock_guard lock(e.mutex);
  const auto* rater = e.study.rater_by_token(token);
  if (!rater) fail(ErrorCode::auth, "unknown rater token");
  const auto it = e.study.annotations.find(rater->rater_id);
  for (std::size_t pos = 0; pos < rater->order.size(); ++pos) {
    const auto& item = e.study.items[rater->order[pos]];
    if (it != e.study.annotations.end() && it->second.contains(item.item_id)) continue;
    return BlindedItem{item.item_id, item.sampling_rate_hz, item.samples_uv, pos,
                       rater->order.size()};
  }
  return std::nullopt;
}

Annotation StudyService::submit_annotation(const std::string& study_id, const std::string& token,
                                           const std::string& item_id, const std::string& label) {
  auto& e = entry(study_id);
  std::lock_guard lock(e.mutex);
  const auto* rater = e.study.rater_by_token(token);
  if (!rater) fail(ErrorCode::auth, "unknown rater token");
  if (std::find(e.study.choices.begin(), e.study.choices.end(), label) == e.study.choices.end()) {
    fail(ErrorCode::argument, fmt::format("label '{}' is not one of the study choices", label));
  }
  if (!e.study.item_index(item_id)) fail(ErrorCode::not_found, fmt::format("no item '{}'", item_id));
  const auto it = e.study.annotations.find(rater->rater_id);
  if (it != e.study.annotations.end() && it->second.contains(item_id)) {
    fail(ErrorCode::conflict, fmt::format("item '{}' already answered", item_id));
  }
  const std::string rater_id = rater->rater_id;
  e.commit(kAnnotation, {{"rater_id", rater_id},
                         {"item_id", item_id},
                         {"label", label},
                         {"submitted_at", options_.clock()}});
  return e.study.annotations.at(rater_id).at(item_id);
}

void StudyService::unlock(const std::string& study_id, const std::string& rater_id,
                          const std::string& item_id) {
  auto& e = entry(study_id);
  std::lock_guard lock(e.mutex);
  const auto it = e.study.annotations.find(rater_id);
  if (it == e.study.annotations.end() || !it->second.contains(item_id)) {
    fail(ErrorCode::not_found, fmt::format("no answer by '{}' on '{}'", rater_id, item_id));
  }
  e.commit(kUnlock, {{"rater_id", rater_id}, {"item_id", item_id}, {"at", options_.clock()}});
}

void StudyService::mark_partial(const std::string& study_id, const std::string& rater_id) {
  auto& e = entry(study_id);
  std::lock_guard lock(e.mutex);
  const bool known = std::any_of(e.study.raters.begin(), e.study.raters.end(),
                                 [&](const RaterSlot& r) { return r.rater_id == rater_id; });
  if (!known) fail(ErrorCode::not_found, fmt::format("no rater '{}'", rater_id));
  e.commit(kRaterPartial, {{"rater_id", rater_id}, {"at", options_.clock()}});
}

ModelRunSummary StudyService::run_model(const std::string& study_id, const Params& params) {
  auto& e = entry(study_id);
  std::vector<StudyItem> items;
  {
    std::lock_guard lock(e.mutex);
    items = e.study.items;
  }
  ModelRunSummary summary;
  summary.items = items.size();
  nlohmann::json results = nlohmann::json::array();
  for (const auto& item : items) {
    nlohmann::json r = {{"item_id", item.item_id}};
    try {
      const auto pred = predict_pipeline(params, item.as_segment());
      r["label"] = std::string(to_string(pred.predicted_class));
      r["probabilities"] = pred.probabilities;
      ++summary.succeeded;
    } catch (const Error& err) {
      r["error"] = err.what();
      summary.failures.emplace_back(item.item_id, err.what());
    }
    results.push_back(std::move(r));
  }
  std::lock_guard lock(e.mutex);
  e.commit(kModelRun, {{"model_version", params.model_version},
                       {"run_at", options_.clock()},
                       {"results", std::move(results)}});
  return summary;
}

AgreementReport StudyService::report(const std::string& study_id) {
  return build_report(snapshot(study_id));
}

Study StudyService::snapshot(const std::string& study_id) {
  auto& e = entry(study_id);
  std::lock_guard lock(e.mutex);
  return e.study;
}

std::vector<std::string> StudyService::study_ids() {
  std::shared_lock lock(map_mutex_);
  std::vector<std::string> ids;
  for (const auto& [id, _] : studies_) ids.push_back(id);
  return ids;
}

}  // namespace ecgstudy
