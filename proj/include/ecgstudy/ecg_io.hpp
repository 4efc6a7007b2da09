#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ecgstudy/labels.hpp"

namespace ecgstudy {

/// Multi-lead sampled waveform. Amplitudes are microvolts.
struct EcgRecord {
  std::string record_id;
  double sampling_rate_hz = 0.0;
  std::vector<std::string> lead_names;
  std::vector<std::vector<double>> samples;  // one array per lead
  std::optional<Rhythm> reference_label;

  std::size_t lead_count() const { return lead_names.size(); }
  std::size_t sample_count() const { return samples.empty() ? 0 : samples.front().size(); }
  double duration_s() const { return static_cast<double>(sample_count()) / sampling_rate_hz; }
};

/// Throws Error(validation) unless the record satisfies every structural invariant.
void validate(const EcgRecord& record);

struct WfdbFiles {
  std::string header_text;
  std::vector<std::uint8_t> dat_bytes;
};

// WFDB format-16 subset:
//   line 1:        name n_leads fs n_samples
//   per lead line: file 16 gain baseline lead_name
// '#' comment lines and blank lines are ignored.
EcgRecord parse_wfdb_subset(std::string_view header_text, std::span<const std::uint8_t> dat_bytes);
WfdbFiles write_wfdb_subset(const EcgRecord& record, double gain);

/// Raw integer samples the writer would emit for `record` at `gain` (baseline 0).
std::vector<std::vector<std::int16_t>> quantize(const EcgRecord& record, double gain);

/// Reads `<stem>.hea` and the .dat file it names (resolved next to the header).
EcgRecord load_wfdb_record(const std::filesystem::path& header_path);
/// Writes `<dir>/<record_id>.hea` and `.dat`; returns the header path.
std::filesystem::path save_wfdb_record(const EcgRecord& record, double gain,
                                       const std::filesystem::path& dir);

EcgRecord parse_csv_record(std::string_view text, double sampling_rate_hz,
                           std::string record_id = "csv");
std::string write_csv_record(const EcgRecord& record);

enum class ManifestKind {
  reference,  // AFIB, NSR, OTHER only
  training,   // additionally admits NOISE
};

struct ManifestEntry {
  std::string record_id;
  std::string path;                       // as written in the manifest
  std::filesystem::path resolved_path;    // relative to the manifest's directory
  Rhythm label = Rhythm::nsr;
  std::optional<double> sampling_rate_hz;  // required for CSV records
};

struct DatasetManifest {
  std::string dataset_name;
  std::vector<ManifestEntry> entries;
};

// Columns: record_id,path,label[,sampling_rate_hz]; header row required.
DatasetManifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir,
                               std::string dataset_name,
                               ManifestKind kind = ManifestKind::reference);
/// Parses the manifest and checks that every referenced file exists.
DatasetManifest load_manifest(const std::filesystem::path& path,
                              ManifestKind kind = ManifestKind::reference);
std::string write_manifest(const DatasetManifest& manifest);

/// Loads the record an entry points at (.hea → WFDB, .csv → CSV) and applies the entry's label.
EcgRecord load_record(const ManifestEntry& entry);

std::string read_text_file(const std::filesystem::path& path);
std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);
void write_binary_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace ecgstudy
