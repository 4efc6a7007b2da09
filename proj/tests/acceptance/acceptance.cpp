// Acceptance criteria 1-10. Run with criterion numbers as arguments (none = all);
// prints one PASS/FAIL line per criterion and exits nonzero if any failed.

#include <chrono>
#include <csignal>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <sys/wait.h>
#include <unistd.h>

#include "ecgstudy/densenet.hpp"
#include "ecgstudy/ecg_io.hpp"
#include "ecgstudy/errors.hpp"
#include "ecgstudy/metrics.hpp"
#include "ecgstudy/preprocess.hpp"
#include "ecgstudy/scalogram.hpp"
#include "ecgstudy/study.hpp"
#include "oracles.hpp"
#include "toy_study.hpp"

using namespace ecgstudy;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void check(bool ok, std::string what) {
    if (!ok) pass = false;
    notes.push_back(fmt::format("{} {}", ok ? "ok  " : "FAIL", what));
  }
  void info(std::string what) { notes.push_back("     " + std::move(what)); }
};

// ---------------------------------------------------------------------------

Outcome f1_fixture() {
  Outcome o;
  const auto f1 = f1_score(1.000, 0.961);
  o.check(f1 && std::abs(*f1 - 0.980) <= 0.0005, fmt::format("f1_score(1.000, 0.961) = {:.6f}", f1.value_or(-1)));

  const std::vector<std::string> refs = [] {
    std::vector<std::string> r(1000, "AFIB");
    return r;
  }();
  std::vector<std::string> preds(1000, "AFIB");
  for (std::size_t i = 961; i < 1000; ++i) preds[i] = "NSR";
  const auto m = confusion(refs, preds, reference_class_order(), rater_choices());
  const auto c = class_metrics(m, "AFIB");
  o.check(c.precision == 1.0 && std::abs(*c.recall - 0.961) < 1e-15,
          fmt::format("class_metrics precision {:.3f}, recall {:.3f}", *c.precision, *c.recall));
  o.check(c.f1 && std::abs(*c.f1 - 0.980) <= 0.0005, fmt::format("class_metrics f1 = {:.6f}", *c.f1));
  return o;
}

Outcome kappa_ci() {
  Outcome o;
  struct Row {
    const char* name;
    double kappa, se;
    const char* printed;
  };
  const Row rows[] = {{"row 1", 0.47, 0.039, "0.39 to 0.55"},
                      {"row 2", 0.24, 0.029, "0.18 to 0.30"},
                      {"row 3", 0.35, 0.033, "0.29 to 0.41"},
                      {"row 4", 0.87, 0.028, "0.81 to 0.92"}};
  for (const auto& r : rows) {
    const auto ci = kappa_interval(r.kappa, r.se);
    const auto text = fmt::format("{:.2f} to {:.2f}", ci.low, ci.high);
    o.check(text == r.printed, fmt::format("{}: {:.2f} +/- 1.96 x {:.3f} = [{:.5f}, {:.5f}] -> \"{}\", printed \"{}\"",
                                           r.name, r.kappa, r.se, ci.low, ci.high, text, r.printed));
    if (text != r.printed) {
      // Range of unrounded kappa that would reproduce the printed interval at this SE.
      const double half = kZ95 * r.se;
      double lo = 1.0, hi = -1.0;
      for (int i = -100; i <= 100; ++i) {
        const double k = r.kappa + i * 1e-4;
        if (fmt::format("{:.2f} to {:.2f}", k - half, k + half) == r.printed) {
          lo = std::min(lo, k);
          hi = std::max(hi, k);
        }
      }
      if (lo <= hi) {
        o.info(fmt::format("printed interval follows from an unrounded kappa in [{:.4f}, {:.4f}]", lo, hi));
      }
    }
  }
  return o;
}

Outcome accuracy_identity() {
  Outcome o;
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> support(0, 10000);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    ConfusionMatrix m{reference_class_order(), rater_choices(), std::vector<std::size_t>(12, 0)};
    for (std::size_t r = 0; r < 3; ++r) {
      std::size_t n = support(rng);
      if (trial % 7 == 0 && r == 1) n = 0;
      if (r == 0 && n == 0) n = 1;
      std::uniform_int_distribution<std::size_t> col(0, 3);
      std::vector<double> w(4);
      for (auto& x : w) x = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
      for (std::size_t k = 0; k < n; ++k) ++m.at(r, pick(rng));
    }
    const auto per = all_class_metrics(m);
    worst = std::max(worst, std::abs(weighted_avg(per, MetricKind::recall) - accuracy(m)));
  }
  o.check(worst <= 1e-12, fmt::format("max |weighted recall - accuracy| over 1000 matrices = {:.3e}", worst));
  return o;
}

Outcome auc_oracle() {
  Outcome o;
  std::mt19937_64 rng(4);
  double worst = 0.0;
  std::size_t with_ties = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 2 + rng() % 49;
    const int levels = 1 + static_cast<int>(rng() % 10);
    std::vector<double> scores(n);
    std::vector<bool> pos(n);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = static_cast<double>(rng() % static_cast<unsigned>(levels)) / levels;
      pos[i] = rng() % 2;
    }
    pos[0] = true;
    pos[1] = false;
    std::set<double> distinct(scores.begin(), scores.end());
    with_ties += distinct.size() < n;
    const double auc = roc_binary(scores, pos, "x").auc;
    worst = std::max(worst, std::abs(auc - oracle::pairwise_auc(scores, pos)));
  }
  o.check(worst <= 1e-12, fmt::format("max |trapezoid - pairwise| over 500 instances = {:.3e}", worst));
  o.check(with_ties > 0, fmt::format("{} instances contained tied scores", with_ties));
  return o;
}

Outcome gradient_check() {
  Outcome o;
  const auto cfg = reduced_config();
  o.check(cfg.n_blocks == 1 && cfg.layers_per_block == 2 && cfg.height == 8 && cfg.width == 16,
          "reduced config is 1 block x 2 layers on 8x16 input");
  auto p = init_params(cfg, 11);
  std::mt19937_64 rng(12);
  std::normal_distribution<double> d(0.0, 0.3);
  for (auto& v : p.tensor("head.fc.weight")) v = d(rng);
  for (auto& v : p.tensor("head.fc.bias")) v = d(rng);
  std::vector<ModelImage> images(4, ModelImage{8, 16, std::vector<double>(128)});
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& im : images) {
    for (auto& x : im.pixels) x = u(rng);
  }
  const std::vector<std::size_t> labels{0, 1, 2, 3};
  const auto g = grad(p, images, labels);

  std::vector<std::size_t> coords(p.values.size());
  std::iota(coords.begin(), coords.end(), 0);
  std::shuffle(coords.begin(), coords.end(), rng);
  coords.resize(std::min<std::size_t>(coords.size(), 400));
  double worst = 0.0;
  for (std::size_t k : coords) {
    auto q = p;
    const double h = 1e-5 * std::max(1.0, std::abs(p.values[k]));
    q.values[k] = p.values[k] + h;
    const double up = cross_entropy(forward(q, images, Mode::train), labels);
    q.values[k] = p.values[k] - h;
    const double down = cross_entropy(forward(q, images, Mode::train), labels);
    const double numeric = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(g.gradient[k] - numeric) /
                                std::max(std::abs(g.gradient[k]) + std::abs(numeric), 1e-8));
  }
  o.check(coords.size() >= 200, fmt::format("{} of {} coordinates checked", coords.size(), p.values.size()));
  o.check(worst < 1e-4, fmt::format("max relative error {:.3e}", worst));
  return o;
}

std::string capture(const std::string& command) {
  std::string out;
  FILE* pipe = ::popen(command.c_str(), "r");
  if (!pipe) fail(ErrorCode::io, "cannot run " + command);
  char buf[4096];
  while (const auto n = std::fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
  const int status = ::pclose(pipe);
  if (status != 0) fail(ErrorCode::io, fmt::format("'{}' exited with status {}", command, status));
  return out;
}

Outcome desk_run() {
  Outcome o;
  oracle::TempDir dir;
  const std::string cli = ECGSTUDY_CLI_PATH;
  const auto corpus = (dir / "corpus").string();
  const auto ckpt = (dir / "model.ckpt").string();
  const auto manifest = corpus + "/manifest.csv";
  const auto start = std::chrono::steady_clock::now();

  capture(fmt::format("{} --seed 1 synth --per-class 125 --out {}", cli, corpus));
  const auto trained = nlohmann::json::parse(capture(fmt::format(
      "{} --seed 1 --json train --manifest {} --holdout-per-class 25 --out {}", cli, manifest, ckpt)));
  const auto eval = nlohmann::json::parse(capture(fmt::format(
      "{} --json eval --checkpoint {} --manifest {} --holdout-per-class 25 --subset holdout", cli, ckpt, manifest)));
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;

  o.check(trained["segments"] == 400, fmt::format("{} training segments", trained["segments"].dump()));
  o.check(eval["segments"] == 100, fmt::format("{} held-out segments", eval["segments"].dump()));
  const double acc = eval["accuracy"];
  const double auc_afib = eval["auc"]["AFIB"].is_number() ? eval["auc"]["AFIB"].get<double>() : -1.0;
  o.check(acc >= 0.90, fmt::format("held-out accuracy {:.4f} (>= 0.90)", acc));
  o.check(auc_afib >= 0.95, fmt::format("held-out AUC(AFIB) {:.4f} (>= 0.95)", auc_afib));
  o.check(minutes < 10.0, fmt::format("synth + train + eval took {:.2f} min (< 10)", minutes));

  // Held-out AFIB records, one by one through the prediction pipeline.
  const auto params = load_checkpoint(ckpt);
  const auto m = load_manifest(manifest, ManifestKind::training);
  std::vector<ManifestEntry> afib;
  for (const auto& e : m.entries) {
    if (e.label == Rhythm::afib) afib.push_back(e);
  }
  std::size_t confident = 0, total = 0;
  for (std::size_t i = afib.size() - 25; i < afib.size(); ++i) {
    for (const auto& seg : split_segments(extract_lead(load_record(afib[i]), "I"))) {
      const auto pred = predict_pipeline(params, seg);
      ++total;
      confident += pred.predicted_class == Rhythm::afib && pred.probabilities[1] > 0.5;
    }
  }
  o.check(confident >= 0.9 * static_cast<double>(total),
          fmt::format("{}/{} held-out AFIB segments predicted AFIB with p > 0.5", confident, total));
  return o;
}

double rel_diff(const CwtCoefficients& a, const CwtCoefficients& b) {
  double d = 0.0, m = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    d = std::max(d, std::abs(a.values[i] - b.values[i]));
    m = std::max(m, std::abs(b.values[i]));
  }
  return d / m;
}

Outcome cwt_properties() {
  Outcome o;
  const double fs = 250.0;
  const auto grid = scale_grid();

  const auto zero = cwt_coefficients(std::vector<double>(2500, 0.0), fs, grid);
  o.check(std::all_of(zero.values.begin(), zero.values.end(), [](auto v) { return v == 0.0; }),
          "zero input -> zero coefficients");

  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd;
  std::vector<double> x(2500), y(2500), mix(2500);
  for (auto& v : x) v = nd(rng);
  for (auto& v : y) v = nd(rng);
  const double a = 1.7, b = -0.4;
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x[i] + b * y[i];
  const auto cx = cwt_coefficients(x, fs, grid);
  const auto cy = cwt_coefficients(y, fs, grid);
  auto expected = cx;
  for (std::size_t i = 0; i < expected.values.size(); ++i) expected.values[i] = a * cx.values[i] + b * cy.values[i];
  const double lin = rel_diff(cwt_coefficients(mix, fs, grid), expected);
  o.check(lin <= 1e-9, fmt::format("linearity relative error {:.3e}", lin));

  const auto sine = oracle::sine(8.0, fs, 10.0);
  const auto mag = cwt(sine, fs, grid).magnitude;
  const double step = std::log(grid.f_max_hz / grid.f_min_hz) / static_cast<double>(grid.size() - 1);
  double worst_steps = 0.0;
  const auto edge = static_cast<std::size_t>(3.0 * fs);
  for (std::size_t t = edge; t + edge < sine.size(); ++t) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < grid.size(); ++k) {
      if (mag.at(k, t) > mag.at(best, t)) best = k;
    }
    worst_steps = std::max(worst_steps, std::abs(std::log(grid.pseudo_frequency(best) / 8.0)) / step);
  }
  o.check(worst_steps <= 1.0, fmt::format("8 Hz sine argmax within {:.3f} grid steps of 8 Hz", worst_steps));
  const double dense = oracle::dense_sweep_peak(sine, fs, sine.size() / 2);
  o.info(fmt::format("512-scale sweep peak at {:.3f} Hz", dense));

  std::vector<double> short_x(x.begin(), x.begin() + 1000);
  const double conv = rel_diff(cwt_coefficients(short_x, fs, grid), cwt_coefficients_direct(short_x, fs, grid));
  o.check(conv <= 1e-9, fmt::format("frequency-domain vs direct relative error {:.3e}", conv));
  return o;
}

Outcome parser_round_trip() {
  Outcome o;
  std::mt19937_64 rng(8);
  std::size_t identical = 0;
  for (int i = 0; i < 100; ++i) {
    const double gain = (i % 3 == 0) ? 200.0 : 1000.0;
    const auto rec = oracle::random_record(rng, gain, 12, 2000);
    const auto files = write_wfdb_subset(rec, gain);
    const auto back = parse_wfdb_subset(files.header_text, files.dat_bytes);
    identical += quantize(back, gain) == quantize(rec, gain) && back.lead_names == rec.lead_names &&
                 back.sampling_rate_hz == rec.sampling_rate_hz && back.record_id == rec.record_id &&
                 write_wfdb_subset(back, gain).dat_bytes == files.dat_bytes;
  }
  o.check(identical == 100, fmt::format("{}/100 records round-trip bit-identically", identical));

  const auto rec = oracle::random_record(rng, 200.0, 2, 50);
  const auto files = write_wfdb_subset(rec, 200.0);
  const auto expect_error = [&](const char* what, ErrorCode code, const std::string& header,
                                std::vector<std::uint8_t> dat) {
    try {
      const auto partial = parse_wfdb_subset(header, dat);
      o.check(false, fmt::format("{}: returned a record with {} samples", what, partial.sample_count()));
    } catch (const Error& e) {
      o.check(e.code() == code, fmt::format("{}: {} error ({})", what, to_string(e.code()), e.what()));
    }
  };
  auto short_dat = files.dat_bytes;
  short_dat.resize(short_dat.size() - 2);
  expect_error("truncated dat", ErrorCode::truncation, files.header_text, short_dat);
  auto bad_header = files.header_text;
  bad_header.replace(bad_header.find(" 16 "), 4, " 16 x");
  expect_error("malformed signal line", ErrorCode::parse, bad_header, files.dat_bytes);
  auto fmt212 = files.header_text;
  fmt212.replace(fmt212.find(" 16 "), 4, " 212 ");
  expect_error("format 212", ErrorCode::unsupported_format, fmt212, files.dat_bytes);
  return o;
}

Outcome segmentation() {
  Outcome o;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> dur(10.0, 300.0);
  std::size_t records = 0, segments = 0, bad_length = 0, uncovered = 0;
  for (int i = 0; i < 1000; ++i) {
    const double fs = (i % 2) ? 250.0 : 500.0;
    Signal s{"r", "I", std::vector<double>(static_cast<std::size_t>(std::ceil(dur(rng) * fs))), fs};
    for (std::size_t k = 0; k < s.samples.size(); ++k) s.samples[k] = static_cast<double>(k);
    const auto segs = split_segments(s);
    ++records;
    segments += segs.size();
    std::vector<bool> covered(s.samples.size(), false);
    for (const auto& seg : segs) {
      bad_length += seg.duration_s < 10.0 || seg.duration_s > 30.0;
      for (std::size_t k = 0; k < seg.samples.size(); ++k) covered[static_cast<std::size_t>(seg.samples[k])] = true;
    }
    uncovered += std::count(covered.begin(), covered.end(), false);
  }
  o.check(bad_length == 0, fmt::format("{} of {} segments outside [10, 30] s", bad_length, segments));
  o.check(uncovered == 0, fmt::format("{} samples left uncovered", uncovered));
  o.check(segments >= records, fmt::format("{} records -> {} segments", records, segments));

  const auto bounds = [](double seconds) {
    Signal s{"r", "I", std::vector<double>(static_cast<std::size_t>(seconds * 250.0)), 250.0};
    std::string out;
    for (const auto& seg : split_segments(s)) {
      out += fmt::format("[{:g},{:g}) ", seg.start_s, seg.start_s + seg.duration_s);
    }
    return out;
  };
  o.check(bounds(70) == "[0,30) [30,60) [60,70) ", "70 s -> " + bounds(70));
  o.check(bounds(65) == "[0,30) [30,60) [55,65) ", "65 s -> " + bounds(65));
  return o;
}

StudyService::Options fixed_options(const std::filesystem::path& dir) {
  StudyService::Options opt;
  opt.data_dir = dir;
  opt.clock = [] { return std::string("2026-01-01T00:00:00Z"); };
  opt.warn = [](const std::string& w) { std::cerr << "     recovery: " << w << '\n'; };
  return opt;
}

std::string token_for(const CreatedStudy& c, const std::string& rater) {
  for (const auto& [r, t] : c.rater_tokens) {
    if (r == rater) return t;
  }
  fail(ErrorCode::not_found, "no rater " + rater);
}

struct Rendered {
  std::string markdown;
  std::string json;
};

Rendered render(const AgreementReport& rep) { return {render_markdown(rep), report_to_json(rep).dump()}; }

void answer_rest(StudyService& svc, const std::string& token, const std::map<std::string, std::string>& key) {
  while (const auto next = svc.next_item("toy", token)) {
    svc.submit_annotation("toy", token, next->item_id, key.at(next->item_id));
  }
}

Outcome study_replay() {
  Outcome o;
  const auto model = toy::constant_model();

  // Uninterrupted run: the hand-computed tables.
  oracle::TempDir clean;
  Rendered reference;
  {
    StudyService svc(fixed_options(clean.path()));
    const auto created = svc.create_study(toy::definition());
    const auto study = svc.snapshot("toy");
    answer_rest(svc, token_for(created, "a"), toy::answer_key(study, toy::kRaterA));
    answer_rest(svc, token_for(created, "b"), toy::answer_key(study, toy::kRaterB));
    svc.run_model("toy", model);
    const auto rep = svc.report("toy");
    reference = render(rep);

    const auto close = [](double a, double b) { return std::abs(a - b) <= 1e-12; };
    const auto row_ok = [&](const RaterRow& row, const toy::Row& want) {
      return close(row.weighted_precision, want.precision) && close(row.weighted_recall, want.recall) &&
             close(row.weighted_f1, want.f1) && close(row.accuracy, want.accuracy) && row.kappa &&
             close(row.kappa->kappa, want.kappa) && close(row.kappa->se, want.se);
    };
    o.check(rep.raters.size() == 2 && row_ok(rep.raters[0], toy::kExpectedA),
            "rater a row: P 0.875 R 0.750 F1 0.750 acc 0.750 kappa 7/11");
    o.check(rep.raters.size() == 2 && row_ok(rep.raters[1], toy::kExpectedB),
            "rater b row: P 0.500 R 0.500 F1 0.500 acc 0.500 kappa 3/11");
    o.check(rep.model && row_ok(*rep.model, toy::kExpectedModel),
            "model row: P 0.250 R 0.500 F1 0.333 acc 0.500 kappa 0");
    o.check(rep.raters.size() == 2 &&
                rep.raters[0].matrix.counts == std::vector<std::size_t>{1, 1, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0} &&
                rep.raters[1].matrix.counts == std::vector<std::size_t>{2, 0, 0, 0, 0, 0, 0, 1, 0, 1, 0, 0},
            "confusion matrices equal hand counts");
    const auto& avg = rep.rater_average;
    o.check(avg && close(avg->weighted_precision, 0.6875) && close(avg->weighted_recall, 0.625) &&
                close(avg->weighted_f1, 0.625) && close(avg->accuracy, 0.625) &&
                close(*avg->f1_per_class[0], 5.0 / 6.0) && close(*avg->f1_per_class[1], 2.0 / 3.0) &&
                close(*avg->f1_per_class[2], 1.0),
            "rater average row");
    o.check(rep.pairwise.size() == 1 && rep.pairwise[0].kappa && close(rep.pairwise[0].kappa->kappa, 0.0),
            "pairwise kappa(a, b) = 0");
    o.check(rep.model_roc.size() == 4 && close(rep.model_roc[0].auc, 0.5) && close(rep.model_roc[3].auc, 0.625),
            "model AUC(AFIB) 0.5, micro AUC 0.625");
  }

  // Interrupted run: a child process answers slowly and is killed mid-study.
  oracle::TempDir crashed;
  CreatedStudy created;
  Study study;
  {
    StudyService svc(fixed_options(crashed.path()));
    created = svc.create_study(toy::definition());
    study = svc.snapshot("toy");
  }
  const auto key_a = toy::answer_key(study, toy::kRaterA);
  const auto key_b = toy::answer_key(study, toy::kRaterB);
  int fds[2];
  if (::pipe(fds) != 0) fail(ErrorCode::io, "pipe failed");
  const pid_t child = ::fork();
  if (child == 0) {
    ::close(fds[0]);
    StudyService svc(fixed_options(crashed.path()));
    for (const auto& [rater, key] : {std::pair{"a", &key_a}, std::pair{"b", &key_b}}) {
      const auto token = token_for(created, rater);
      while (const auto next = svc.next_item("toy", token)) {
        const auto ack = svc.submit_annotation("toy", token, next->item_id, key->at(next->item_id));
        const auto line = fmt::format("{} {} {}\n", rater, ack.item_id, ack.label);
        if (::write(fds[1], line.data(), line.size()) < 0) ::_exit(3);
        ::usleep(200000);
      }
    }
    ::pause();
    ::_exit(0);
  }
  ::close(fds[1]);
  std::vector<std::array<std::string, 3>> acked;
  std::string buffer;
  char c;
  while (acked.size() < 5 && ::read(fds[0], &c, 1) == 1) {
    if (c != '\n') {
      buffer += c;
      continue;
    }
    std::array<std::string, 3> parts;
    std::istringstream(buffer) >> parts[0] >> parts[1] >> parts[2];
    acked.push_back(parts);
    buffer.clear();
  }
  ::kill(child, SIGKILL);
  int status = 0;
  ::waitpid(child, &status, 0);
  ::close(fds[0]);
  o.check(WIFSIGNALED(status) && WTERMSIG(status) == SIGKILL && acked.size() == 5,
          fmt::format("child killed after {} acknowledged annotations", acked.size()));

  Rendered after_crash, after_restart;
  {
    StudyService svc(fixed_options(crashed.path()));
    const auto snap = svc.snapshot("toy");
    std::size_t kept = 0;
    for (const auto& [rater, item, label] : acked) {
      const auto r = snap.annotations.find(rater);
      kept += r != snap.annotations.end() && r->second.contains(item) && r->second.at(item).label == label;
    }
    o.check(kept == acked.size(), fmt::format("{}/{} acknowledged annotations survived the kill", kept, acked.size()));
    answer_rest(svc, token_for(created, "a"), key_a);
    answer_rest(svc, token_for(created, "b"), key_b);
    svc.run_model("toy", model);
    after_crash = render(svc.report("toy"));
  }
  {
    StudyService svc(fixed_options(crashed.path()));
    after_restart = render(svc.report("toy"));
  }
  o.check(after_restart.markdown == after_crash.markdown && after_restart.json == after_crash.json,
          "report regenerated after restart is byte-identical");
  o.check(after_crash.markdown == reference.markdown && after_crash.json == reference.json,
          "interrupted study reports the same bytes as the uninterrupted one");
  return o;
}

struct Criterion {
  int number;
  const char* name;
  std::function<Outcome()> run;
};

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all = {
      {1, "F1 fixture", f1_fixture},
      {2, "kappa CI reproduction", kappa_ci},
      {3, "accuracy equals weighted recall", accuracy_identity},
      {4, "AUC oracle equivalence", auc_oracle},
      {5, "gradient check", gradient_check},
      {6, "end-to-end desk run", desk_run},
      {7, "CWT properties", cwt_properties},
      {8, "parser round-trip", parser_round_trip},
      {9, "segmentation", segmentation},
      {10, "study replay", study_replay},
  };
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));
  int failures = 0;
  for (const auto& c : criteria()) {
    if (!selected.empty() && !selected.contains(c.number)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out.check(false, fmt::format("exception: {}", e.what()));
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    for (const auto& n : out.notes) std::cout << "     " << n << '\n';
    std::cout << fmt::format("{} criterion {:>2}: {} ({:.1f} s)\n", out.pass ? "PASS" : "FAIL", c.number,
                             c.name, secs)
              << std::flush;
    failures += !out.pass;
  }
  return failures == 0 ? 0 : 1;
}
