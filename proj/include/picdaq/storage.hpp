#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "picdaq/acquisition.hpp"

namespace picdaq::storage {

using acquisition::Sample;

inline constexpr std::string_view kHeader = "timestamp,seq,ch1,ch2,ch3,ch4";
inline constexpr std::string_view kRowEnd = "\r\n";

class StorageError : public std::runtime_error {
 public:
  explicit StorageError(const std::string& what, std::optional<std::size_t> line = std::nullopt)
      : std::runtime_error(line ? "line " + std::to_string(*line) + ": " + what : what),
        line_(line) {}

  std::optional<std::size_t> line() const noexcept { return line_; }

 private:
  std::optional<std::size_t> line_;
};

/// `<iso8601>,<seq>,<c1>,<c2>,<c3>,<c4>` without terminator.
std::string format_row(const Sample& s);

/// Append-only CSV recording. The header goes out at construction; each
/// append writes and flushes one CRLF-terminated row.
class RecordingWriter {
 public:
  explicit RecordingWriter(std::filesystem::path path);
  ~RecordingWriter();
  RecordingWriter(const RecordingWriter&) = delete;
  RecordingWriter& operator=(const RecordingWriter&) = delete;

  /// Throws StorageError on I/O failure or if seq does not increase.
  void append(const Sample& s);
  /// Flushes and closes; returns the number of data rows. Idempotent.
  std::uint64_t close();

  std::uint64_t rows() const noexcept { return rows_; }
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::uint64_t rows_ = 0;
  std::optional<std::uint64_t> last_seq_;
};

/// Reads a recording back. Accepts LF or CRLF; blank lines are skipped.
/// Errors name the 1-based line number.
std::vector<Sample> load_recording(const std::filesystem::path& path);
std::vector<Sample> parse_recording(std::string_view text);

enum class ChannelTransform { raw_counts, volts, lm35_celsius };

/// Accepts `raw`, `volts`, `lm35`.
ChannelTransform parse_transform(std::string_view name);
std::string_view transform_name(ChannelTransform t);

double apply_transform(std::uint16_t code, ChannelTransform t);

struct SeriesPoint {
  Timestamp timestamp;
  double value;
};

/// `channel` is 0-based. Throws std::out_of_range for channel > 3.
std::vector<SeriesPoint> transform_series(std::span<const Sample> samples, std::size_t channel,
                                          ChannelTransform t);

/// Derived series as `timestamp,value` CSV (CRLF rows).
std::string format_series_csv(std::span<const SeriesPoint> series);

struct PlotOptions {
  int width = 800;
  int height = 300;
  int margin = 40;
  std::string title;
};

/// Value padding applied above and below a constant series.
inline constexpr double kFlatPadding = 1.0;

/// SVG document with a single polyline over the time axis. Throws
/// StorageError for an empty series.
std::string render_svg(std::span<const SeriesPoint> series, const PlotOptions& opts = {});
void render_plot(std::span<const SeriesPoint> series, const std::filesystem::path& out,
                 const PlotOptions& opts = {});

}  // namespace picdaq::storage
