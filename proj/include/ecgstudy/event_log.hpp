#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace ecgstudy {

struct LogRecord {
  std::uint64_t seq = 0;
  std::string kind;
  nlohmann::json payload;
};

/// What recovery found when a log was opened.
struct RecoveryReport {
  std::size_t records = 0;
  std::size_t truncated_lines = 0;
  std::uintmax_t truncated_bytes = 0;
  std::vector<std::string> warnings;
};

// Newline-delimited JSON, one record per line:
//   {"seq":N,"kind":"...","payload":{...},"checksum":"crc32 hex"}
// Appends are flushed to disk before returning. A damaged tail (bad JSON,
// bad checksum, out-of-order seq, or a torn final line) is cut off on open;
// damage followed by an intact record is refused as corruption.
class EventLog {
 public:
  EventLog(const std::filesystem::path& path, std::vector<LogRecord>& replayed,
           RecoveryReport& report);
  ~EventLog();
  EventLog(const EventLog&) = delete;
  EventLog& operator=(const EventLog&) = delete;

  LogRecord append(std::string kind, nlohmann::json payload);

  const std::filesystem::path& path() const { return path_; }
  std::uint64_t next_seq() const { return next_seq_; }

  static std::string checksum(std::uint64_t seq, const std::string& kind,
                              const nlohmann::json& payload);
  static std::string encode(const LogRecord& record);

 private:
  std::filesystem::path path_;
  int fd_ = -1;
  std::uint64_t next_seq_ = 0;
};

}  // namespace ecgstudy
