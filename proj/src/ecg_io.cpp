#include "ecgstudy/ecg_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_set>

#include <fmt/format.h>

#include "ecgstudy/errors.hpp"

namespace ecgstudy {

namespace {

namespace fs = std::filesystem;

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) {
      if (start < text.size()) lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) tokens.push_back(line.substr(start, i - start));
  }
  return tokens;
}

std::vector<std::string_view> split_char(std::string_view line, char delim) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t end = line.find(delim, start);
    if (end == std::string_view::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, end - start));
    start = end + 1;
  }
  return cells;
}

std::optional<double> to_double(std::string_view token) {
  token = trim(token);
  if (token.empty()) return std::nullopt;
  if (token.front() == '+') token.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size() || !std::isfinite(value)) {
    return std::nullopt;
  }
  return value;
}

template <typename Int>
std::optional<Int> to_int(std::string_view token) {
  token = trim(token);
  Int value{};
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size() || token.empty()) return std::nullopt;
  return value;
}

bool skippable(std::string_view line) {
  const auto t = trim(line);
  return t.empty() || t.front() == '#';
}

std::string lower_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

}  // namespace

void validate(const EcgRecord& record) {
  if (!(record.sampling_rate_hz > 0.0) || !std::isfinite(record.sampling_rate_hz)) {
    fail(ErrorCode::validation,
         fmt::format("record '{}': sampling rate must be positive and finite", record.record_id));
  }
  if (record.lead_names.empty()) {
    fail(ErrorCode::validation, fmt::format("record '{}': no leads", record.record_id));
  }
  if (record.samples.size() != record.lead_names.size()) {
    fail(ErrorCode::validation,
         fmt::format("record '{}': {} lead names but {} sample arrays", record.record_id,
                     record.lead_names.size(), record.samples.size()));
  }
  std::unordered_set<std::string> seen;
  for (const auto& name : record.lead_names) {
    if (!seen.insert(name).second) {
      fail(ErrorCode::validation,
           fmt::format("record '{}': duplicate lead name '{}'", record.record_id, name));
    }
  }
  const std::size_t n = record.samples.front().size();
  if (n == 0) {
    fail(ErrorCode::validation, fmt::format("record '{}': no samples", record.record_id));
  }
  for (std::size_t i = 0; i < record.samples.size(); ++i) {
    if (record.samples[i].size() != n) {
      fail(ErrorCode::validation,
           fmt::format("record '{}': lead '{}' has {} samples, expected {}", record.record_id,
                       record.lead_names[i], record.samples[i].size(), n));
    }
  }
}

EcgRecord parse_wfdb_subset(std::string_view header_text, std::span<const std::uint8_t> dat_bytes) {
  const auto lines = split_lines(header_text);
  std::size_t line_no = 0;
  std::size_t i = 0;
  auto next_line = [&]() -> std::optional<std::string_view> {
    while (i < lines.size()) {
      line_no = i + 1;
      const auto line = lines[i++];
      if (!skippable(line)) return line;
    }
    return std::nullopt;
  };

  const auto record_line = next_line();
  if (!record_line) throw ParseError("missing record line", lines.size() + 1);
  const auto head = split_ws(*record_line);
  if (head.size() != 4) {
    throw ParseError(
        fmt::format("record line needs 'name n_leads fs n_samples', got {} fields", head.size()),
        line_no);
  }
  const auto n_leads = to_int<std::size_t>(head[1]);
  if (!n_leads || *n_leads == 0) throw ParseError("invalid lead count", line_no, 2);
  const auto fs = to_double(head[2]);
  if (!fs || *fs <= 0.0) throw ParseError("invalid sampling frequency", line_no, 3);
  const auto n_samples = to_int<std::size_t>(head[3]);
  if (!n_samples) throw ParseError("invalid sample count", line_no, 4);

  EcgRecord record;
  record.record_id = std::string(head[0]);
  record.sampling_rate_hz = *fs;

  std::vector<double> gains;
  std::vector<long> baselines;
  std::string data_file;
  for (std::size_t lead = 0; lead < *n_leads; ++lead) {
    const auto line = next_line();
    if (!line) {
      throw ParseError(fmt::format("expected {} signal lines, found {}", *n_leads, lead),
                       lines.size() + 1);
    }
    const auto fields = split_ws(*line);
    if (fields.size() != 5) {
      throw ParseError(
          fmt::format("signal line needs 'file format gain baseline lead_name', got {} fields",
                      fields.size()),
          line_no);
    }
    if (fields[1] != "16") {
      throw Error(ErrorCode::unsupported_format,
                  fmt::format("line {}: unsupported signal format '{}' (only 16)", line_no,
                              fields[1]));
    }
    if (lead == 0) {
      data_file = std::string(fields[0]);
    } else if (fields[0] != data_file) {
      throw Error(ErrorCode::unsupported_format,
                  fmt::format("line {}: leads split across files ('{}' vs '{}')", line_no,
                              fields[0], data_file));
    }
    const auto gain = to_double(fields[2]);
    if (!gain || *gain <= 0.0) throw ParseError("gain must be a positive number", line_no, 3);
    const auto baseline = to_int<long>(fields[3]);
    if (!baseline) throw ParseError("baseline must be an integer", line_no, 4);
    gains.push_back(*gain);
    baselines.push_back(*baseline);
    record.lead_names.emplace_back(fields[4]);
  }
  if (const auto extra = next_line()) {
    throw ParseError("unexpected content after signal lines", line_no);
  }

  const std::size_t expected = 2 * *n_leads * *n_samples;
  if (dat_bytes.size() != expected) {
    throw Error(ErrorCode::truncation,
                fmt::format("dat holds {} bytes, header implies {} ({} leads x {} samples x 2)",
                            dat_bytes.size(), expected, *n_leads, *n_samples));
  }

  record.samples.assign(*n_leads, std::vector<double>(*n_samples));
  std::size_t offset = 0;
  for (std::size_t s = 0; s < *n_samples; ++s) {
    for (std::size_t lead = 0; lead < *n_leads; ++lead) {
      const auto raw = static_cast<std::int16_t>(
          static_cast<std::uint16_t>(dat_bytes[offset]) |
          static_cast<std::uint16_t>(static_cast<std::uint16_t>(dat_bytes[offset + 1]) << 8));
      offset += 2;
      record.samples[lead][s] =
          (static_cast<double>(raw) - static_cast<double>(baselines[lead])) / gains[lead] * 1000.0;
    }
  }
  validate(record);
  return record;
}

std::vector<std::vector<std::int16_t>> quantize(const EcgRecord& record, double gain) {
  if (!(gain > 0.0) || !std::isfinite(gain)) {
    fail(ErrorCode::argument, fmt::format("gain must be positive, got {}", gain));
  }
  validate(record);
  std::vector<std::vector<std::int16_t>> raw(record.lead_count());
  for (std::size_t lead = 0; lead < record.lead_count(); ++lead) {
    raw[lead].resize(record.sample_count());
    for (std::size_t s = 0; s < record.sample_count(); ++s) {
      const double value = std::round(record.samples[lead][s] * gain / 1000.0);
      if (!std::isfinite(value) || value < std::numeric_limits<std::int16_t>::min() ||
          value > std::numeric_limits<std::int16_t>::max()) {
        fail(ErrorCode::range,
             fmt::format("lead '{}' sample {}: {} uV does not fit in 16 bits at gain {}",
                         record.lead_names[lead], s, record.samples[lead][s], gain));
      }
      raw[lead][s] = static_cast<std::int16_t>(value);
    }
  }
  return raw;
}

WfdbFiles write_wfdb_subset(const EcgRecord& record, double gain) {
  const auto raw = quantize(record, gain);
  for (const auto& name : record.lead_names) {
    if (name.empty() || name.find_first_of(" \t\r\n") != std::string::npos) {
      fail(ErrorCode::argument, fmt::format("lead name '{}' cannot be written to a header", name));
    }
  }
  if (record.record_id.empty() || record.record_id.find_first_of(" \t\r\n") != std::string::npos) {
    fail(ErrorCode::argument, fmt::format("record id '{}' cannot be written to a header",
                                          record.record_id));
  }

  WfdbFiles out;
  out.header_text = fmt::format("{} {} {} {}\n", record.record_id, record.lead_count(),
                                record.sampling_rate_hz, record.sample_count());
  for (const auto& name : record.lead_names) {
    out.header_text += fmt::format("{}.dat 16 {} 0 {}\n", record.record_id, gain, name);
  }
  out.dat_bytes.reserve(2 * record.lead_count() * record.sample_count());
  for (std::size_t s = 0; s < record.sample_count(); ++s) {
    for (std::size_t lead = 0; lead < record.lead_count(); ++lead) {
      const auto bits = static_cast<std::uint16_t>(raw[lead][s]);
      out.dat_bytes.push_back(static_cast<std::uint8_t>(bits & 0xFF));
      out.dat_bytes.push_back(static_cast<std::uint8_t>(bits >> 8));
    }
  }
  return out;
}

EcgRecord load_wfdb_record(const std::filesystem::path& header_path) {
  const std::string header = read_text_file(header_path);
  // Locate the data file named on the first signal line.
  std::string data_file;
  for (const auto line : split_lines(header)) {
    if (skippable(line)) continue;
    const auto fields = split_ws(line);
    if (fields.size() == 5) {
      data_file = std::string(fields[0]);
      break;
    }
  }
  if (data_file.empty()) {
    // Let the parser produce the structured error.
    return parse_wfdb_subset(header, {});
  }
  const auto dat = read_binary_file(header_path.parent_path() / data_file);
  return parse_wfdb_subset(header, dat);
}

std::filesystem::path save_wfdb_record(const EcgRecord& record, double gain,
                                       const std::filesystem::path& dir) {
  const auto files = write_wfdb_subset(record, gain);
  fs::create_directories(dir);
  const auto header_path = dir / (record.record_id + ".hea");
  write_text_file(header_path, files.header_text);
  write_binary_file(dir / (record.record_id + ".dat"), files.dat_bytes);
  return header_path;
}

EcgRecord parse_csv_record(std::string_view text, double sampling_rate_hz, std::string record_id) {
  if (!(sampling_rate_hz > 0.0) || !std::isfinite(sampling_rate_hz)) {
    fail(ErrorCode::argument, "CSV sampling rate must be positive");
  }
  const auto lines = split_lines(text);
  std::size_t i = 0;
  while (i < lines.size() && trim(lines[i]).empty()) ++i;
  if (i == lines.size()) throw ParseError("missing header row", 1);

  EcgRecord record;
  record.record_id = std::move(record_id);
  record.sampling_rate_hz = sampling_rate_hz;
  for (const auto cell : split_char(lines[i], ',')) {
    const auto name = trim(cell);
    if (name.empty()) throw ParseError("empty lead name in header", i + 1);
    record.lead_names.emplace_back(name);
  }
  const std::size_t n_leads = record.lead_names.size();
  record.samples.assign(n_leads, {});

  for (++i; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const auto cells = split_char(lines[i], ',');
    if (cells.size() != n_leads) {
      throw ParseError(fmt::format("ragged row: {} cells, header has {}", cells.size(), n_leads),
                       i + 1);
    }
    for (std::size_t c = 0; c < n_leads; ++c) {
      const auto value = to_double(cells[c]);
      if (!value) {
        throw ParseError(fmt::format("non-numeric cell '{}'", trim(cells[c])), i + 1, c + 1);
      }
      record.samples[c].push_back(*value);
    }
  }
  validate(record);
  return record;
}

std::string write_csv_record(const EcgRecord& record) {
  validate(record);
  std::string out;
  for (std::size_t lead = 0; lead < record.lead_count(); ++lead) {
    if (lead) out += ',';
    out += record.lead_names[lead];
  }
  out += '\n';
  for (std::size_t s = 0; s < record.sample_count(); ++s) {
    for (std::size_t lead = 0; lead < record.lead_count(); ++lead) {
      if (lead) out += ',';
      out += fmt::format("{}", record.samples[lead][s]);
    }
    out += '\n';
  }
  return out;
}

DatasetManifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir,
                               std::string dataset_name, ManifestKind kind) {
  const auto lines = split_lines(text);
  std::size_t i = 0;
  while (i < lines.size() && trim(lines[i]).empty()) ++i;
  if (i == lines.size()) throw ParseError("missing manifest header", 1);

  std::vector<std::string> header;
  for (const auto cell : split_char(lines[i], ',')) header.emplace_back(trim(cell));
  const bool has_fs = header.size() == 4 && header[3] == "sampling_rate_hz";
  if (header.size() < 3 || header[0] != "record_id" || header[1] != "path" || header[2] != "label" ||
      (header.size() == 4 && !has_fs) || header.size() > 4) {
    throw ParseError("manifest header must be 'record_id,path,label[,sampling_rate_hz]'", i + 1);
  }

  DatasetManifest manifest;
  manifest.dataset_name = std::move(dataset_name);
  std::set<std::string> ids;
  for (++i; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const auto cells = split_char(lines[i], ',');
    if (cells.size() != header.size()) {
      throw ParseError(fmt::format("expected {} columns, got {}", header.size(), cells.size()),
                       i + 1);
    }
    ManifestEntry entry;
    entry.record_id = std::string(trim(cells[0]));
    entry.path = std::string(trim(cells[1]));
    if (entry.record_id.empty()) throw ParseError("empty record_id", i + 1, 1);
    if (entry.path.empty()) throw ParseError("empty path", i + 1, 2);
    const auto label_token = trim(cells[2]);
    const auto label = parse_rhythm(label_token);
    if (!label || (kind == ManifestKind::reference && !is_reference_class(*label))) {
      fail(ErrorCode::validation,
           fmt::format("line {}: label '{}' is not a {} class", i + 1, label_token,
                       kind == ManifestKind::reference ? "reference (AFIB, NSR, OTHER)"
                                                       : "rhythm (NSR, AFIB, OTHER, NOISE)"));
    }
    entry.label = *label;
    if (has_fs && !trim(cells[3]).empty()) {
      const auto rate = to_double(cells[3]);
      if (!rate || *rate <= 0.0) throw ParseError("invalid sampling_rate_hz", i + 1, 4);
      entry.sampling_rate_hz = *rate;
    }
    if (!ids.insert(entry.record_id).second) {
      fail(ErrorCode::validation,
           fmt::format("line {}: duplicate record_id '{}'", i + 1, entry.record_id));
    }
    entry.resolved_path = base_dir / entry.path;
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

DatasetManifest load_manifest(const std::filesystem::path& path, ManifestKind kind) {
  auto manifest = parse_manifest(read_text_file(path), path.parent_path(),
                                 path.parent_path().filename().string(), kind);
  for (const auto& entry : manifest.entries) {
    if (!fs::is_regular_file(entry.resolved_path)) {
      fail(ErrorCode::validation, fmt::format("record '{}': file '{}' not found", entry.record_id,
                                              entry.resolved_path.string()));
    }
    const auto ext = lower_extension(entry.resolved_path);
    if (ext != ".hea" && ext != ".csv") {
      fail(ErrorCode::validation, fmt::format("record '{}': unsupported file type '{}'",
                                              entry.record_id, ext));
    }
    if (ext == ".csv" && !entry.sampling_rate_hz) {
      fail(ErrorCode::validation,
           fmt::format("record '{}': CSV records need a sampling_rate_hz column", entry.record_id));
    }
  }
  return manifest;
}

std::string write_manifest(const DatasetManifest& manifest) {
  const bool any_fs = std::any_of(manifest.entries.begin(), manifest.entries.end(),
                                  [](const ManifestEntry& e) { return e.sampling_rate_hz.has_value(); });
  std::string out = any_fs ? "record_id,path,label,sampling_rate_hz\n" : "record_id,path,label\n";
  for (const auto& e : manifest.entries) {
    out += fmt::format("{},{},{}", e.record_id, e.path, to_string(e.label));
    if (any_fs) {
      out += ',';
      if (e.sampling_rate_hz) out += fmt::format("{}", *e.sampling_rate_hz);
    }
    out += '\n';
  }
  return out;
}

EcgRecord load_record(const ManifestEntry& entry) {
  EcgRecord record;
  const auto ext = lower_extension(entry.resolved_path);
  if (ext == ".hea") {
    record = load_wfdb_record(entry.resolved_path);
    if (entry.sampling_rate_hz && *entry.sampling_rate_hz != record.sampling_rate_hz) {
      fail(ErrorCode::validation,
           fmt::format("record '{}': manifest says {} Hz, header says {} Hz", entry.record_id,
                       *entry.sampling_rate_hz, record.sampling_rate_hz));
    }
  } else if (ext == ".csv") {
    if (!entry.sampling_rate_hz) {
      fail(ErrorCode::validation,
           fmt::format("record '{}': CSV records need a sampling rate", entry.record_id));
    }
    record = parse_csv_record(read_text_file(entry.resolved_path), *entry.sampling_rate_hz);
  } else {
    fail(ErrorCode::validation,
         fmt::format("record '{}': unsupported file type '{}'", entry.record_id, ext));
  }
  record.record_id = entry.record_id;
  record.reference_label = entry.label;
  return record;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, fmt::format("cannot open '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, fmt::format("cannot open '{}'", path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io, fmt::format("cannot write '{}'", path.string()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) fail(ErrorCode::io, fmt::format("write failed for '{}'", path.string()));
}

void write_binary_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io, fmt::format("cannot write '{}'", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::io, fmt::format("write failed for '{}'", path.string()));
}

}  // namespace ecgstudy
