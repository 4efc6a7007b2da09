#include "ecgstudy/cli.hpp"

#include <csignal>
#include <map>
#include <ostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "ecgstudy/densenet.hpp"
#include "ecgstudy/ecg_io.hpp"
#include "ecgstudy/errors.hpp"
#include "ecgstudy/http_server.hpp"
#include "ecgstudy/metrics.hpp"
#include "ecgstudy/preprocess.hpp"
#include "ecgstudy/study.hpp"

namespace ecgstudy::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct Globals {
  std::uint64_t seed = 1;
  std::string data_dir = "ecgstudy-data";
  bool verbose = false;
  bool json = false;
};

struct Io {
  std::ostream& out;
  std::ostream& err;
  const Globals& g;

  template <typename... Args>
  void say(fmt::format_string<Args...> f, Args&&... args) const {
    if (!g.json) out << fmt::format(f, std::forward<Args>(args)...);
  }
  template <typename... Args>
  void log(fmt::format_string<Args...> f, Args&&... args) const {
    if (g.verbose) err << fmt::format(f, std::forward<Args>(args)...) << std::flush;
  }
  void emit(const json& doc) const {
    if (g.json) out << doc.dump(2) << '\n';
  }
};

ManifestKind parse_kind(const std::string& kind) {
  if (kind == "reference") return ManifestKind::reference;
  if (kind == "training") return ManifestKind::training;
  fail(ErrorCode::argument, fmt::format("unknown manifest kind '{}'", kind));
}

std::string plural(std::size_t n, std::string_view word) {
  return fmt::format("{} {}{}", n, word, n == 1 ? "" : "s");
}

// Held-out records are the last `holdout` entries of each class, in manifest order.
std::vector<ManifestEntry> select_subset(const DatasetManifest& m, std::size_t holdout,
                                         const std::string& subset) {
  if (subset == "all" || holdout == 0) {
    if (subset == "holdout") fail(ErrorCode::argument, "--subset holdout needs --holdout-per-class");
    return m.entries;
  }
  std::map<Rhythm, std::size_t> per_class;
  for (const auto& e : m.entries) ++per_class[e.label];
  std::map<Rhythm, std::size_t> seen;
  std::vector<ManifestEntry> out;
  for (const auto& e : m.entries) {
    const bool held = seen[e.label]++ >= per_class[e.label] - std::min(holdout, per_class[e.label]);
    if (held == (subset == "holdout")) out.push_back(e);
  }
  if (subset != "train" && subset != "holdout") {
    fail(ErrorCode::argument, fmt::format("unknown subset '{}'", subset));
  }
  return out;
}

struct Sample {
  std::string id;
  LabeledImage image;
};

std::vector<Sample> build_samples(std::span<const ManifestEntry> entries, const Io& io) {
  std::vector<Sample> out;
  for (const auto& entry : entries) {
    const auto record = load_record(entry);
    for (const auto& seg : split_segments(extract_lead(record, "I"))) {
      out.push_back({fmt::format("{}#{}", record.record_id, seg.segment_index),
                     {segment_to_image(seg), static_cast<std::size_t>(entry.label)}});
    }
  }
  io.log("{} from {}\n", plural(out.size(), "segment"), plural(entries.size(), "record"));
  return out;
}

std::vector<Prediction> predict_all(const Params& params, std::span<const Sample> samples) {
  constexpr std::size_t kChunk = 32;
  std::vector<Prediction> out;
  std::vector<ModelImage> batch;
  for (std::size_t i = 0; i < samples.size(); i += kChunk) {
    batch.clear();
    for (std::size_t j = i; j < std::min(samples.size(), i + kChunk); ++j) {
      batch.push_back(samples[j].image.image);
    }
    const auto preds = forward(params, batch, Mode::eval);
    out.insert(out.end(), preds.begin(), preds.end());
  }
  return out;
}

json metrics_json(const ClassMetrics& c) {
  auto o = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return {{"class", c.name},         {"precision", o(c.precision)}, {"recall", o(c.recall)},
          {"f1", o(c.f1)},           {"support", c.support}};
}

std::string pct(const std::optional<double>& v) {
  return v ? fmt::format("{:5.1f}", 100.0 * *v) : "  n/a";
}

json prediction_json(const Prediction& p) {
  json probs = json::object();
  for (std::size_t c = 0; c < kNumRhythms; ++c) {
    probs[std::string(to_string(kModelClasses[c]))] = p.probabilities[c];
  }
  return {{"class", std::string(to_string(p.predicted_class))},
          {"probabilities", std::move(probs)},
          {"model_version", p.model_version}};
}

// ---------------------------------------------------------------------------

void cmd_import(const Io& io, const std::string& manifest_path, const std::string& kind,
                const std::string& out_dir) {
  const auto manifest = load_manifest(manifest_path, parse_kind(kind));
  std::map<std::string, std::size_t> labels;
  double total_s = 0.0;
  DatasetManifest copy{manifest.dataset_name, {}};
  for (const auto& entry : manifest.entries) {
    const auto record = load_record(entry);
    extract_lead(record, "I");
    ++labels[std::string(to_string(entry.label))];
    total_s += record.duration_s();
    if (!out_dir.empty()) {
      save_wfdb_record(record, 1000.0, fs::path(out_dir) / "records");
      ManifestEntry e = entry;
      e.path = fmt::format("records/{}.hea", record.record_id);
      e.sampling_rate_hz.reset();
      copy.entries.push_back(std::move(e));
    }
  }
  if (!out_dir.empty()) write_text_file(fs::path(out_dir) / "manifest.csv", write_manifest(copy));
  io.say("{}: {} validated, {:.1f} s total\n", manifest.dataset_name,
         plural(manifest.entries.size(), "record"), total_s);
  for (const auto& [label, n] : labels) io.say("  {:<6} {}\n", label, n);
  io.emit({{"dataset", manifest.dataset_name},
           {"records", manifest.entries.size()},
           {"labels", labels},
           {"total_seconds", total_s},
           {"output", out_dir.empty() ? json(nullptr) : json(out_dir)}});
}

void cmd_synth(const Io& io, std::size_t per_class, double fs_hz, const std::string& out_dir) {
  const auto specs = balanced_specs(per_class, io.g.seed, fs_hz);
  const fs::path dir = out_dir;
  DatasetManifest manifest{"synthetic", {}};
  for (const auto& spec : specs) {
    const auto record = synthesize(spec);
    save_wfdb_record(record, 1000.0, dir / "records");
    ManifestEntry e;
    e.record_id = record.record_id;
    e.path = fmt::format("records/{}.hea", record.record_id);
    e.label = spec.rhythm;
    manifest.entries.push_back(std::move(e));
  }
  const auto manifest_path = dir / "manifest.csv";
  write_text_file(manifest_path, write_manifest(manifest));
  io.say("wrote {} ({} per class) to {}\n", plural(specs.size(), "record"), per_class, dir.string());
  io.emit({{"records", specs.size()}, {"per_class", per_class}, {"manifest", manifest_path.string()}});
}

void cmd_split(const Io& io, const std::string& manifest_path, const std::string& kind) {
  const auto manifest = load_manifest(manifest_path, parse_kind(kind));
  std::size_t segments = 0;
  json per_record = json::array();
  std::vector<std::string> skipped;
  for (const auto& entry : manifest.entries) {
    const auto record = load_record(entry);
    try {
      const auto segs = split_segments(extract_lead(record, "I"));
      segments += segs.size();
      io.log("{}: {:.2f} s -> {}\n", record.record_id, record.duration_s(), segs.size());
      per_record.push_back({{"record_id", record.record_id}, {"segments", segs.size()}});
    } catch (const Error& e) {
      if (e.code() != ErrorCode::too_short) throw;
      skipped.push_back(record.record_id);
      io.say("skipped {}: {}\n", record.record_id, e.what());
    }
  }
  const std::size_t kept = manifest.entries.size() - skipped.size();
  io.say("{} → {}\n", plural(kept, "record"), plural(segments, "segment"));
  io.emit({{"records", kept}, {"segments", segments}, {"skipped", skipped}, {"per_record", per_record}});
}

struct TrainOptions {
  std::string manifest;
  std::string kind = "training";
  std::string checkpoint;
  std::string history;
  std::size_t holdout = 0;
  TrainConfig config;
};

void cmd_train(const Io& io, TrainOptions opt) {
  const auto manifest = load_manifest(opt.manifest, parse_kind(opt.kind));
  const auto entries = select_subset(manifest, opt.holdout, opt.holdout ? "train" : "all");
  const auto samples = build_samples(entries, io);
  std::vector<LabeledImage> data;
  for (const auto& s : samples) data.push_back(s.image);
  opt.config.seed = io.g.seed;
  const auto init = init_params(ModelConfig{}, io.g.seed);
  const auto result = train(init, data, opt.config, [&](const EpochStats& s, const Params&) {
    io.log("epoch {:3d}  loss {:.4f}  accuracy {:.3f}\n", s.epoch + 1, s.loss, s.accuracy);
  });
  save_checkpoint(result.params, opt.checkpoint);
  std::string csv = "epoch,loss,accuracy\n";
  json history = json::array();
  for (const auto& h : result.history) {
    csv += fmt::format("{},{},{}\n", h.epoch + 1, h.loss, h.accuracy);
    history.push_back({{"epoch", h.epoch + 1}, {"loss", h.loss}, {"accuracy", h.accuracy}});
  }
  if (!opt.history.empty()) write_text_file(opt.history, csv);
  const auto& last = result.history.back();
  io.say("trained on {} for {}: loss {:.4f}, train accuracy {:.3f}\ncheckpoint: {}\n",
         plural(data.size(), "segment"), plural(result.history.size(), "epoch"), last.loss,
         last.accuracy, opt.checkpoint);
  io.emit({{"segments", data.size()}, {"checkpoint", opt.checkpoint}, {"history", history}});
}

void cmd_predict(const Io& io, const std::string& checkpoint, const std::string& record_path,
                 double fs_hz, const std::string& lead) {
  const auto params = load_checkpoint(checkpoint);
  EcgRecord record;
  if (fs::path(record_path).extension() == ".csv") {
    if (!(fs_hz > 0.0)) fail(ErrorCode::argument, "--fs is required for CSV records");
    record = parse_csv_record(read_text_file(record_path), fs_hz, fs::path(record_path).stem().string());
  } else {
    record = load_wfdb_record(record_path);
  }
  json out = json::array();
  for (const auto& seg : split_segments(extract_lead(record, lead))) {
    const auto pred = predict_pipeline(params, seg);
    io.say("{} [{:.1f}-{:.1f} s]  {:<5}  NSR {:.3f}  AFIB {:.3f}  OTHER {:.3f}  NOISE {:.3f}\n",
           record.record_id, seg.start_s, seg.start_s + seg.duration_s,
           to_string(pred.predicted_class), pred.probabilities[0], pred.probabilities[1],
           pred.probabilities[2], pred.probabilities[3]);
    auto j = prediction_json(pred);
    j["segment_index"] = seg.segment_index;
    j["start_s"] = seg.start_s;
    j["duration_s"] = seg.duration_s;
    out.push_back(std::move(j));
  }
  io.emit({{"record_id", record.record_id}, {"segments", out}});
}

void cmd_eval(const Io& io, const std::string& checkpoint, const std::string& manifest_path,
              const std::string& kind, std::size_t holdout, const std::string& subset) {
  const auto params = load_checkpoint(checkpoint);
  const auto manifest = load_manifest(manifest_path, parse_kind(kind));
  const auto samples = build_samples(select_subset(manifest, holdout, subset), io);
  if (samples.empty()) fail(ErrorCode::argument, "nothing to evaluate");
  const auto preds = predict_all(params, samples);

  std::vector<std::string> refs, outs;
  ScoreTable scores{{}, {}};
  for (Rhythm r : {Rhythm::afib, Rhythm::nsr, Rhythm::other, Rhythm::noise}) {
    scores.classes.emplace_back(to_string(r));
  }
  std::vector<std::string> ref_order = reference_class_order();
  bool has_noise = false;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto label = static_cast<Rhythm>(samples[i].image.label);
    has_noise |= label == Rhythm::noise;
    refs.emplace_back(to_string(label));
    outs.emplace_back(to_string(preds[i].predicted_class));
    std::vector<double> row;
    for (Rhythm r : {Rhythm::afib, Rhythm::nsr, Rhythm::other, Rhythm::noise}) {
      row.push_back(preds[i].probabilities[static_cast<std::size_t>(r)]);
    }
    scores.rows.push_back(std::move(row));
  }
  if (has_noise) ref_order.emplace_back(to_string(Rhythm::noise));
  auto pred_order = ref_order;
  if (!has_noise) pred_order.emplace_back(to_string(Rhythm::noise));

  const auto matrix = confusion(refs, outs, ref_order, pred_order);
  const auto per_class = all_class_metrics(matrix);
  const double acc = accuracy(matrix);
  std::optional<KappaResult> kappa;
  try {
    kappa = cohen_kappa(refs, outs);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::degenerate_agreement) throw;
  }
  std::vector<RocCurve> roc;
  auto targets = ref_order;
  targets.emplace_back(kMicro);
  if (!has_noise) scores.classes.pop_back();
  if (!has_noise) {
    for (auto& row : scores.rows) row.pop_back();
  }
  json auc = json::object();
  for (const auto& t : targets) {
    try {
      const auto curve = roc_auc(scores, refs, t);
      auc[t] = curve.auc;
      roc.push_back(curve);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::undefined_auc) throw;
      auc[t] = nullptr;
    }
  }

  io.say("{} evaluated\n\n  class   precision  recall     f1  support\n", plural(samples.size(), "segment"));
  for (const auto& c : per_class) {
    io.say("  {:<6}      {}   {}  {}  {:7}\n", c.name, pct(c.precision), pct(c.recall), pct(c.f1),
           c.support);
  }
  io.say("  weighted    {}   {}  {}\n", pct(weighted_avg(per_class, MetricKind::precision)),
         pct(weighted_avg(per_class, MetricKind::recall)), pct(weighted_avg(per_class, MetricKind::f1)));
  io.say("\naccuracy: {:.4f}\n", acc);
  if (kappa) {
    io.say("kappa:    {:.3f} (SE {:.3f}, 95% CI {:.2f} to {:.2f}, {})\n", kappa->kappa, kappa->se,
           kappa->ci_low, kappa->ci_high, to_string(kappa->band));
  }
  for (const auto& c : roc) io.say("AUC {:<6} {:.4f}\n", c.label, c.auc);

  json classes = json::array();
  for (const auto& c : per_class) classes.push_back(metrics_json(c));
  json counts = json::array();
  for (std::size_t r = 0; r < matrix.rows(); ++r) {
    json row = json::array();
    for (std::size_t p = 0; p < matrix.cols(); ++p) row.push_back(matrix.at(r, p));
    counts.push_back(std::move(row));
  }
  io.emit({{"segments", samples.size()},
           {"accuracy", acc},
           {"per_class", classes},
           {"weighted_precision", weighted_avg(per_class, MetricKind::precision)},
           {"weighted_recall", weighted_avg(per_class, MetricKind::recall)},
           {"weighted_f1", weighted_avg(per_class, MetricKind::f1)},
           {"kappa", kappa ? json(kappa->kappa) : json(nullptr)},
           {"auc", auc},
           {"confusion", {{"reference_classes", matrix.reference_classes},
                          {"predicted_classes", matrix.predicted_classes},
                          {"counts", counts}}}});
}

StudyService make_service(const Globals& g) { return StudyService({g.data_dir, {}, {}, {}}); }

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const auto comma = s.find(',', pos);
    const auto part = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    if (!part.empty()) out.push_back(part);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

void cmd_study_create(const Io& io, const std::string& manifest_path, const std::string& raters,
                      const std::string& study_id) {
  const auto manifest = load_manifest(manifest_path, ManifestKind::reference);
  StudyDefinition def;
  def.seed = io.g.seed;
  def.dataset_name = manifest.dataset_name;
  def.items = items_from_manifest(manifest);
  def.rater_ids = split_list(raters);
  if (!study_id.empty()) def.study_id = study_id;
  const std::size_t n_items = def.items.size();
  auto service = make_service(io.g);
  const auto created = service.create_study(std::move(def));
  io.say("study {}: {} from {}\n", created.study_id, plural(n_items, "item"),
         plural(manifest.entries.size(), "record"));
  json tokens = json::object();
  for (const auto& [rater, token] : created.rater_tokens) {
    io.say("  {}  {}\n", rater, token);
    tokens[rater] = token;
  }
  io.emit({{"study_id", created.study_id}, {"items", n_items}, {"rater_tokens", tokens}});
}

void cmd_study_model_run(const Io& io, const std::string& study_id, const std::string& checkpoint) {
  const auto params = load_checkpoint(checkpoint);
  auto service = make_service(io.g);
  const auto summary = service.run_model(study_id, params);
  io.say("model {} on {}: {} succeeded\n", params.model_version, plural(summary.items, "item"),
         summary.succeeded);
  json failures = json::array();
  for (const auto& [item, msg] : summary.failures) {
    io.say("  failed {}: {}\n", item, msg);
    failures.push_back({{"item_id", item}, {"error", msg}});
  }
  io.emit({{"items", summary.items}, {"succeeded", summary.succeeded}, {"failures", failures}});
}

void cmd_study_report(const Io& io, const std::string& study_id, const std::string& format,
                      const std::string& out_path) {
  auto service = make_service(io.g);
  const auto rep = service.report(study_id);
  std::string text;
  if (format == "markdown") {
    text = render_markdown(rep);
  } else if (format == "json") {
    text = report_to_json(rep).dump(2) + "\n";
  } else {
    fail(ErrorCode::argument, fmt::format("unknown report format '{}'", format));
  }
  if (!out_path.empty()) {
    write_text_file(out_path, text);
    io.say("report written to {}\n", out_path);
    io.emit({{"study_id", study_id}, {"output", out_path}});
  } else {
    io.out << text;
  }
}

HttpServer* g_server = nullptr;

void cmd_serve(const Io& io, const std::string& host, int port, std::string admin_token,
               const std::string& analyze_token, const std::string& checkpoint) {
  ServerConfig config;
  if (admin_token.empty()) {
    admin_token = random_token();
    io.err << "admin token: " << admin_token << '\n';
  }
  config.admin_token = admin_token;
  config.analyze_token = analyze_token;
  if (!checkpoint.empty()) config.model = load_checkpoint(checkpoint);
  auto service = make_service(io.g);
  HttpServer server(service, std::move(config));
  const int bound = server.bind(host, port);
  io.err << fmt::format("listening on http://{}:{}\n", host, bound) << std::flush;
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  server.serve();
  g_server = nullptr;
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::numeric:
    case ErrorCode::degenerate_agreement:
    case ErrorCode::undefined_auc:
      return kExitNumeric;
    default:
      return kExitData;
  }
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  Globals g;
  CLI::App app{"ECG rhythm classification and reader-study toolkit", "ecgstudy"};
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->always_capture_default();
  app.add_option("--seed", g.seed, "Seed for every random choice");
  app.add_option("--data-dir", g.data_dir, "Directory for study logs and default outputs");
  app.add_flag("-v,--verbose", g.verbose, "Progress on stderr");
  app.add_flag("--json", g.json, "Machine-readable output");

  std::function<void(const Io&)> action;

  auto* import = app.add_subcommand("import", "Validate a dataset manifest and its records");
  std::string manifest, kind = "reference", out_dir;
  import->add_option("--manifest", manifest)->required();
  import->add_option("--kind", kind)->check(CLI::IsMember({"reference", "training"}));
  import->add_option("--out", out_dir, "Write a WFDB copy and manifest here");
  import->callback([&] { action = [&](const Io& io) { cmd_import(io, manifest, kind, out_dir); }; });

  auto* synth = app.add_subcommand("synth", "Generate a labeled synthetic corpus");
  std::size_t per_class = 0;
  double fs_hz = kModelSamplingRateHz;
  synth->add_option("--per-class", per_class)->required()->check(CLI::PositiveNumber);
  synth->add_option("--fs", fs_hz)->check(CLI::PositiveNumber);
  synth->add_option("--out", out_dir, "Output directory (default <data-dir>/synth)");
  synth->callback([&] {
    action = [&](const Io& io) {
      cmd_synth(io, per_class, fs_hz, out_dir.empty() ? (fs::path(g.data_dir) / "synth").string() : out_dir);
    };
  });

  auto* split = app.add_subcommand("split", "Count 10-30 s segments per record");
  std::string split_kind = "training";
  split->add_option("--manifest", manifest)->required();
  split->add_option("--kind", split_kind)->check(CLI::IsMember({"reference", "training"}));
  split->callback([&] { action = [&](const Io& io) { cmd_split(io, manifest, split_kind); }; });

  auto* train_cmd = app.add_subcommand("train", "Train the classifier and write a checkpoint");
  TrainOptions topt;
  train_cmd->add_option("--manifest", topt.manifest)->required();
  train_cmd->add_option("--kind", topt.kind)->check(CLI::IsMember({"reference", "training"}));
  train_cmd->add_option("--out", topt.checkpoint, "Checkpoint path")->required();
  train_cmd->add_option("--history", topt.history, "Per-epoch CSV");
  train_cmd->add_option("--holdout-per-class", topt.holdout, "Leave the last K records of each class out");
  train_cmd->add_option("--epochs", topt.config.epochs);
  train_cmd->add_option("--lr", topt.config.learning_rate);
  train_cmd->add_option("--momentum", topt.config.momentum);
  train_cmd->add_option("--batch-size", topt.config.batch_size)->check(CLI::PositiveNumber);
  train_cmd->callback([&] { action = [&](const Io& io) { cmd_train(io, topt); }; });

  auto* predict = app.add_subcommand("predict", "Classify every segment of one record");
  std::string checkpoint, record_path, lead = "I";
  double record_fs = 0.0;
  predict->add_option("--checkpoint", checkpoint)->required();
  predict->add_option("--record", record_path, ".hea or .csv record")->required();
  predict->add_option("--fs", record_fs, "Sampling rate for CSV records");
  predict->add_option("--lead", lead);
  predict->callback([&] {
    action = [&](const Io& io) { cmd_predict(io, checkpoint, record_path, record_fs, lead); };
  });

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a labeled corpus");
  std::string eval_kind = "training", subset = "all";
  std::size_t holdout = 0;
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--manifest", manifest)->required();
  eval->add_option("--kind", eval_kind)->check(CLI::IsMember({"reference", "training"}));
  eval->add_option("--holdout-per-class", holdout);
  eval->add_option("--subset", subset)->check(CLI::IsMember({"all", "train", "holdout"}));
  eval->callback([&] {
    action = [&](const Io& io) { cmd_eval(io, checkpoint, manifest, eval_kind, holdout, subset); };
  });

  auto* study = app.add_subcommand("study", "Reader-study lifecycle");
  study->require_subcommand(1);
  study->fallthrough();
  std::string study_id, raters, format = "markdown", report_out;
  auto* create = study->add_subcommand("create", "Create a blinded study from a reference manifest");
  create->add_option("--manifest", manifest)->required();
  create->add_option("--raters", raters, "Comma-separated rater ids")->required();
  create->add_option("--id", study_id);
  create->callback([&] { action = [&](const Io& io) { cmd_study_create(io, manifest, raters, study_id); }; });
  auto* model_run = study->add_subcommand("model-run", "Record model answers for every item");
  model_run->add_option("--id", study_id)->required();
  model_run->add_option("--checkpoint", checkpoint)->required();
  model_run->callback([&] { action = [&](const Io& io) { cmd_study_model_run(io, study_id, checkpoint); }; });
  std::string rater_id;
  auto* partial = study->add_subcommand("partial", "Exclude an unfinished rater from the report");
  partial->add_option("--id", study_id)->required();
  partial->add_option("--rater", rater_id)->required();
  partial->callback([&] {
    action = [&](const Io& io) {
      auto service = make_service(io.g);
      service.mark_partial(study_id, rater_id);
      io.say("rater {} marked partial in {}\n", rater_id, study_id);
      io.emit({{"study_id", study_id}, {"partial", rater_id}});
    };
  });
  auto* report = study->add_subcommand("report", "Render the agreement tables");
  report->add_option("--id", study_id)->required();
  report->add_option("--format", format)->check(CLI::IsMember({"markdown", "json"}));
  report->add_option("--out", report_out);
  report->callback([&] { action = [&](const Io& io) { cmd_study_report(io, study_id, format, report_out); }; });

  auto* serve = app.add_subcommand("serve", "Start the HTTP service");
  std::string host = "127.0.0.1", admin_token, analyze_token;
  int port = 8080;
  serve->add_option("--host", host);
  serve->add_option("--port", port)->check(CLI::Range(0, 65535));
  serve->add_option("--admin-token", admin_token, "Random when omitted (printed on stderr)");
  serve->add_option("--analyze-token", analyze_token, "Defaults to the admin token");
  serve->add_option("--checkpoint", checkpoint);
  serve->callback([&] {
    action = [&](const Io& io) { cmd_serve(io, host, port, admin_token, analyze_token, checkpoint); };
  });

  std::vector<std::string> argv_storage{"ecgstudy"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_storage) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  const Io io{out, err, g};
  try {
    action(io);
  } catch (const Error& e) {
    err << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}

}  // namespace ecgstudy::cli
