#include "picdaq/storage.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace picdaq::storage {

std::string format_row(const Sample& s) {
  std::string row = format_iso8601(s.timestamp);
  row += ',';
  row += std::to_string(s.seq);
  for (auto code : s.codes) {
    row += ',';
    row += std::to_string(code);
  }
  return row;
}

RecordingWriter::RecordingWriter(std::filesystem::path path) : path_(std::move(path)) {
  out_.open(path_, std::ios::binary | std::ios::trunc);
  if (!out_) throw StorageError("cannot open " + path_.string() + " for writing");
  out_ << kHeader << kRowEnd;
  out_.flush();
  if (!out_) throw StorageError("write failed: " + path_.string());
}

RecordingWriter::~RecordingWriter() {
  if (out_.is_open()) out_.close();
}

void RecordingWriter::append(const Sample& s) {
  if (!out_.is_open()) throw StorageError("recording closed: " + path_.string());
  if (last_seq_ && s.seq <= *last_seq_) {
    throw StorageError("out-of-order seq " + std::to_string(s.seq) + " after " +
                       std::to_string(*last_seq_));
  }
  out_ << format_row(s) << kRowEnd;
  out_.flush();
  if (!out_) throw StorageError("write failed: " + path_.string());
  last_seq_ = s.seq;
  ++rows_;
}

std::uint64_t RecordingWriter::close() {
  if (out_.is_open()) {
    out_.flush();
    const bool ok = static_cast<bool>(out_);
    out_.close();
    if (!ok) throw StorageError("flush failed: " + path_.string());
  }
  return rows_;
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  for (;;) {
    const auto comma = line.find(',');
    fields.push_back(line.substr(0, comma));
    if (comma == std::string_view::npos) break;
    line.remove_prefix(comma + 1);
  }
  return fields;
}

template <typename T>
bool parse_uint(std::string_view s, T& out) {
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size();
}

}  // namespace

std::vector<Sample> parse_recording(std::string_view text) {
  std::vector<Sample> samples;
  std::size_t line_no = 0;
  bool have_header = false;
  std::optional<std::uint64_t> last_seq;

  while (!text.empty()) {
    const auto lf = text.find('\n');
    std::string_view line = text.substr(0, lf);
    text = lf == std::string_view::npos ? std::string_view{} : text.substr(lf + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    if (!have_header) {
      if (line != kHeader) throw StorageError("missing header '" + std::string(kHeader) + "'", line_no);
      have_header = true;
      continue;
    }
    if (line.empty()) continue;

    const auto fields = split_fields(line);
    if (fields.size() != 6) {
      throw StorageError("expected 6 fields, got " + std::to_string(fields.size()), line_no);
    }
    const auto ts = parse_iso8601(fields[0]);
    if (!ts) throw StorageError("bad timestamp '" + std::string(fields[0]) + "'", line_no);
    std::uint64_t seq = 0;
    if (!parse_uint(fields[1], seq)) {
      throw StorageError("bad seq '" + std::string(fields[1]) + "'", line_no);
    }
    if (last_seq && seq <= *last_seq) {
      throw StorageError("seq " + std::to_string(seq) + " not increasing", line_no);
    }
    std::array<std::uint16_t, acquisition::kChannels> codes{};
    for (std::size_t ch = 0; ch < acquisition::kChannels; ++ch) {
      unsigned v = 0;
      if (!parse_uint(fields[2 + ch], v)) {
        throw StorageError("bad code '" + std::string(fields[2 + ch]) + "'", line_no);
      }
      if (v > protocol::kMaxCode) {
        throw StorageError("code " + std::to_string(v) + " out of range 0..1023", line_no);
      }
      codes[ch] = static_cast<std::uint16_t>(v);
    }
    last_seq = seq;
    samples.push_back(Sample::from_codes(seq, *ts, codes));
  }
  if (!have_header) throw StorageError("missing header '" + std::string(kHeader) + "'", 1);
  return samples;
}

std::vector<Sample> load_recording(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError("cannot open " + path.string() + ": file not found or unreadable");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_recording(ss.str());
}

ChannelTransform parse_transform(std::string_view name) {
  if (name == "raw") return ChannelTransform::raw_counts;
  if (name == "volts") return ChannelTransform::volts;
  if (name == "lm35") return ChannelTransform::lm35_celsius;
  throw std::invalid_argument("unknown transform '" + std::string(name) + "' (raw|volts|lm35)");
}

std::string_view transform_name(ChannelTransform t) {
  switch (t) {
    case ChannelTransform::raw_counts: return "raw";
    case ChannelTransform::volts: return "volts";
    case ChannelTransform::lm35_celsius: return "lm35";
  }
  return "?";
}

double apply_transform(std::uint16_t code, ChannelTransform t) {
  switch (t) {
    case ChannelTransform::raw_counts: return code;
    case ChannelTransform::volts: return acquisition::scale_counts(code);
    case ChannelTransform::lm35_celsius: return acquisition::scale_counts(code) / 0.01;
  }
  return 0.0;
}

std::vector<SeriesPoint> transform_series(std::span<const Sample> samples, std::size_t channel,
                                          ChannelTransform t) {
  if (channel >= acquisition::kChannels) {
    throw std::out_of_range("channel " + std::to_string(channel) + " outside 0..3");
  }
  std::vector<SeriesPoint> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({s.timestamp, apply_transform(s.codes[channel], t)});
  return out;
}

std::string format_series_csv(std::span<const SeriesPoint> series) {
  std::string out = "timestamp,value\r\n";
  char buf[64];
  for (const auto& p : series) {
    std::snprintf(buf, sizeof buf, "%.6g", p.value);
    out += format_iso8601(p.timestamp);
    out += ',';
    out += buf;
    out += kRowEnd;
  }
  return out;
}

namespace {

std::string xml_escape(std::string_view text) {
  std::string out;
  for (const char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_svg(std::span<const SeriesPoint> series, const PlotOptions& opts) {
  if (series.empty()) throw StorageError("render_plot: empty series");

  const auto [lo_it, hi_it] = std::minmax_element(
      series.begin(), series.end(), [](const auto& a, const auto& b) { return a.value < b.value; });
  double y_lo = lo_it->value;
  double y_hi = hi_it->value;
  if (y_hi - y_lo < 1e-12) {
    y_lo -= kFlatPadding;
    y_hi += kFlatPadding;
  }
  const double t0 = std::chrono::duration<double>(series.front().timestamp.time_since_epoch()).count();
  double t_span = std::chrono::duration<double>(series.back().timestamp - series.front().timestamp).count();
  if (t_span <= 0.0) t_span = 1.0;

  const double plot_w = opts.width - 2.0 * opts.margin;
  const double plot_h = opts.height - 2.0 * opts.margin;
  auto px = [&](const SeriesPoint& p) {
    const double t = std::chrono::duration<double>(p.timestamp.time_since_epoch()).count() - t0;
    return opts.margin + plot_w * (t / t_span);
  };
  auto py = [&](double v) { return opts.margin + plot_h * (1.0 - (v - y_lo) / (y_hi - y_lo)); };

  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << opts.width << "\" height=\""
     << opts.height << "\" viewBox=\"0 0 " << opts.width << ' ' << opts.height << "\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << opts.width << "\" height=\"" << opts.height
     << "\" fill=\"white\"/>\n";
  os << "<rect x=\"" << opts.margin << "\" y=\"" << opts.margin << "\" width=\"" << plot_w
     << "\" height=\"" << plot_h << "\" fill=\"none\" stroke=\"#888\"/>\n";
  if (!opts.title.empty()) {
    os << "<text x=\"" << opts.margin << "\" y=\"" << opts.margin / 2 << "\" font-size=\"12\">"
       << xml_escape(opts.title) << "</text>\n";
  }
  os.precision(6);
  os << "<text x=\"2\" y=\"" << opts.margin + 4 << "\" font-size=\"10\">" << y_hi << "</text>\n";
  os << "<text x=\"2\" y=\"" << opts.height - opts.margin << "\" font-size=\"10\">" << y_lo
     << "</text>\n";
  os << "<text x=\"" << opts.margin << "\" y=\"" << opts.height - opts.margin / 3
     << "\" font-size=\"10\">" << format_iso8601(series.front().timestamp) << "</text>\n";
  os.precision(2);
  os << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (i) os << ' ';
    os << px(series[i]) << ',' << py(series[i].value);
  }
  os << "\"/>\n</svg>\n";
  return os.str();
}

void render_plot(std::span<const SeriesPoint> series, const std::filesystem::path& out,
                 const PlotOptions& opts) {
  const std::string svg = render_svg(series, opts);
  std::ofstream f(out, std::ios::binary | std::ios::trunc);
  if (!f) throw StorageError("cannot open " + out.string() + " for writing");
  f << svg;
  f.flush();
  if (!f) throw StorageError("write failed: " + out.string());
}

}  // namespace picdaq::storage
