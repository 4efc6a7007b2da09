#include "ecgstudy/event_log.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <optional>

#include <fmt/format.h>
#include <zlib.h>

#include "ecgstudy/ecg_io.hpp"
#include "ecgstudy/errors.hpp"

namespace ecgstudy {

namespace {

[[noreturn]] void fail_errno(const std::string& what, const std::filesystem::path& path) {
  fail(ErrorCode::io, fmt::format("{} '{}': {}", what, path.string(), std::strerror(errno)));
}

std::optional<LogRecord> decode(const std::string& line, std::uint64_t expected_seq,
                                std::string& why) {
  nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    why = "not a JSON object";
    return std::nullopt;
  }
  if (!j.contains("seq") || !j["seq"].is_number_unsigned() || !j.contains("kind") ||
      !j["kind"].is_string() || !j.contains("payload") || !j.contains("checksum") ||
      !j["checksum"].is_string()) {
    why = "missing fields";
    return std::nullopt;
  }
  LogRecord r{j["seq"].get<std::uint64_t>(), j["kind"].get<std::string>(), j["payload"]};
  if (r.seq != expected_seq) {
    why = fmt::format("seq {} where {} expected", r.seq, expected_seq);
    return std::nullopt;
  }
  if (j["checksum"].get<std::string>() != EventLog::checksum(r.seq, r.kind, r.payload)) {
    why = "checksum mismatch";
    return std::nullopt;
  }
  return r;
}

void sync_directory(const std::filesystem::path& dir) {
  const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd < 0) return;
  ::fsync(fd);
  ::close(fd);
}

}  // namespace

std::string EventLog::checksum(std::uint64_t seq, const std::string& kind,
                               const nlohmann::json& payload) {
  const std::string text = fmt::format("{}|{}|{}", seq, kind, payload.dump());
  const auto crc = ::crc32(::crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(text.data()),
                           static_cast<uInt>(text.size()));
  return fmt::format("{:08x}", static_cast<std::uint32_t>(crc));
}

std::string EventLog::encode(const LogRecord& r) {
  nlohmann::json j;
  j["seq"] = r.seq;
  j["kind"] = r.kind;
  j["payload"] = r.payload;
  j["checksum"] = checksum(r.seq, r.kind, r.payload);
  return j.dump() + "\n";
}

EventLog::EventLog(const std::filesystem::path& path, std::vector<LogRecord>& replayed,
                   RecoveryReport& report)
    : path_(path) {
  std::error_code ec;
  std::filesystem::create_directories(path.parent_path(), ec);
  const bool existed = std::filesystem::exists(path);

  if (existed) {
    const std::string text = read_text_file(path);
    std::size_t pos = 0;
    std::size_t line_no = 0;
    std::optional<std::size_t> damage_at;  // byte offset of first bad line
    std::string damage_why;
    std::size_t damage_line = 0;
    while (pos < text.size()) {
      const std::size_t eol = text.find('\n', pos);
      ++line_no;
      const bool torn = eol == std::string::npos;
      const std::string line = text.substr(pos, torn ? std::string::npos : eol - pos);
      std::string why;
      std::optional<LogRecord> rec;
      if (torn) {
        why = "incomplete final line";
      } else {
        rec = decode(line, next_seq_, why);
      }
      if (!rec) {
        if (!damage_at) {
          damage_at = pos;
          damage_why = why;
          damage_line = line_no;
        } else {
          ++report.truncated_lines;
        }
      } else if (damage_at) {
        fail(ErrorCode::validation,
             fmt::format("{}: corrupt record at line {} ({}) precedes intact records",
                         path.string(), damage_line, damage_why));
      } else {
        replayed.push_back(std::move(*rec));
        ++next_seq_;
      }
      pos = torn ? text.size() : eol + 1;
    }
    if (damage_at) {
      ++report.truncated_lines;
      report.truncated_bytes = text.size() - *damage_at;
      report.warnings.push_back(fmt::format(
          "{}: dropped {} damaged tail line(s) from line {} ({}), {} bytes", path.string(),
          report.truncated_lines, damage_line, damage_why, report.truncated_bytes));
      std::filesystem::resize_file(path, *damage_at);
    }
  }
  report.records = replayed.size();

  fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) fail_errno("cannot open log", path);
  if (!existed) sync_directory(path.parent_path());
}

EventLog::~EventLog() {
  if (fd_ >= 0) ::close(fd_);
}

LogRecord EventLog::append(std::string kind, nlohmann::json payload) {
  LogRecord r{next_seq_, std::move(kind), std::move(payload)};
  const std::string line = encode(r);
  std::size_t written = 0;
  while (written < line.size()) {
    const ssize_t n = ::write(fd_, line.data() + written, line.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      fail_errno("cannot append to log", path_);
    }
    written += static_cast<std::size_t>(n);
  }
  if (::fsync(fd_) != 0) fail_errno("cannot sync log", path_);
  ++next_seq_;
  return r;
}

}  // namespace ecgstudy
