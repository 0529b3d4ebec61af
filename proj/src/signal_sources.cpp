#include "picdaq/signal_sources.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <sstream>
#include <vector>

namespace picdaq::signal {

namespace {

double frac(double x) { return x - std::floor(x); }

bool is_periodic(Shape shape) {
  return shape == Shape::sine || shape == Shape::square || shape == Shape::triangle;
}

double raw_voltage(const WaveformSpec& s, double t) {
  switch (s.shape) {
    case Shape::sine:
      return s.offset_v + s.amplitude_v * std::sin(2.0 * std::numbers::pi * s.frequency_hz * t);
    case Shape::square:
      return frac(s.frequency_hz * t) < 0.5 ? s.offset_v + s.amplitude_v
                                            : s.offset_v - s.amplitude_v;
    case Shape::triangle: {
      // Starts at the trough, peaks at half period.
      const double p = frac(s.frequency_hz * t);
      const double unit = p < 0.5 ? 4.0 * p - 1.0 : 3.0 - 4.0 * p;
      return s.offset_v + s.amplitude_v * unit;
    }
    case Shape::dc:
      return s.offset_v;
    case Shape::lm35_ramp:
      return kLm35VoltsPerCelsius * (s.temp_start_c + s.temp_slope_c_per_s * t);
  }
  return 0.0;
}

double parse_number(std::string_view key, std::string_view text) {
  double value = 0.0;
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last || text.empty()) {
    throw WaveformError("waveform: bad number for '" + std::string(key) + "': '" +
                        std::string(text) + "'");
  }
  return value;
}

std::string format_number(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string_view shape_name(Shape shape) {
  switch (shape) {
    case Shape::sine: return "sine";
    case Shape::square: return "square";
    case Shape::triangle: return "triangle";
    case Shape::dc: return "dc";
    case Shape::lm35_ramp: return "lm35";
  }
  return "?";
}

void validate(const WaveformSpec& s) {
  for (double v : {s.frequency_hz, s.amplitude_v, s.offset_v, s.temp_start_c,
                   s.temp_slope_c_per_s}) {
    if (!std::isfinite(v)) throw WaveformError("waveform: non-finite parameter");
  }
  if (is_periodic(s.shape)) {
    if (s.frequency_hz < 0.0) throw WaveformError("waveform: frequency must be >= 0");
    if (s.amplitude_v < 0.0) throw WaveformError("waveform: amplitude must be >= 0");
  }
}

double sample_waveform(const WaveformSpec& spec, double t) {
  return std::clamp(raw_voltage(spec, t), kMinVolts, kMaxVolts);
}

WaveformSpec parse_waveform(std::string_view text) {
  const auto colon = text.find(':');
  const std::string_view name = text.substr(0, colon);
  WaveformSpec spec;
  if (name == "sine") {
    spec.shape = Shape::sine;
  } else if (name == "square") {
    spec.shape = Shape::square;
  } else if (name == "triangle") {
    spec.shape = Shape::triangle;
  } else if (name == "dc") {
    spec.shape = Shape::dc;
  } else if (name == "lm35") {
    spec.shape = Shape::lm35_ramp;
  } else {
    throw WaveformError("waveform: unknown shape '" + std::string(name) + "'");
  }

  std::string_view rest = colon == std::string_view::npos ? std::string_view{}
                                                          : text.substr(colon + 1);
  std::vector<std::string_view> seen;
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    const std::string_view item = rest.substr(0, comma);
    rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);

    const auto eq = item.find('=');
    if (eq == std::string_view::npos) {
      throw WaveformError("waveform: expected key=value, got '" + std::string(item) + "'");
    }
    const std::string_view key = item.substr(0, eq);
    const double value = parse_number(key, item.substr(eq + 1));
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) {
      throw WaveformError("waveform: duplicate key '" + std::string(key) + "'");
    }
    seen.push_back(key);

    const bool periodic = is_periodic(spec.shape);
    if (periodic && key == "f") {
      spec.frequency_hz = value;
    } else if (periodic && key == "amp") {
      spec.amplitude_v = value;
    } else if ((periodic || spec.shape == Shape::dc) && key == "offset") {
      spec.offset_v = value;
    } else if (spec.shape == Shape::lm35_ramp && key == "start") {
      spec.temp_start_c = value;
    } else if (spec.shape == Shape::lm35_ramp && key == "slope") {
      spec.temp_slope_c_per_s = value;
    } else {
      throw WaveformError("waveform: unknown key '" + std::string(key) + "' for shape '" +
                          std::string(name) + "'");
    }
  }
  validate(spec);
  return spec;
}

std::string to_string(const WaveformSpec& s) {
  std::string out(shape_name(s.shape));
  switch (s.shape) {
    case Shape::sine:
    case Shape::square:
    case Shape::triangle:
      out += ":f=" + format_number(s.frequency_hz) + ",amp=" + format_number(s.amplitude_v) +
             ",offset=" + format_number(s.offset_v);
      break;
    case Shape::dc:
      out += ":offset=" + format_number(s.offset_v);
      break;
    case Shape::lm35_ramp:
      out += ":start=" + format_number(s.temp_start_c) +
             ",slope=" + format_number(s.temp_slope_c_per_s);
      break;
  }
  return out;
}

}  // namespace picdaq::signal
