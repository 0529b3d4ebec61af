#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace picdaq::signal {

/// Input range accepted by every analog channel.
inline constexpr double kMinVolts = 0.0;
inline constexpr double kMaxVolts = 5.0;

/// LM35 output scale, volts per degree Celsius.
inline constexpr double kLm35VoltsPerCelsius = 0.01;

enum class Shape { sine, square, triangle, dc, lm35_ramp };

/// Synthetic analog source. Periodic shapes use frequency/amplitude/offset,
/// dc uses offset only, lm35_ramp uses the temperature fields only.
struct WaveformSpec {
  Shape shape = Shape::dc;
  double frequency_hz = 0.0;
  double amplitude_v = 0.0;
  double offset_v = 0.0;
  double temp_start_c = 0.0;
  double temp_slope_c_per_s = 0.0;

  static WaveformSpec sine(double f, double amp, double offset) {
    return {Shape::sine, f, amp, offset, 0.0, 0.0};
  }
  static WaveformSpec square(double f, double amp, double offset) {
    return {Shape::square, f, amp, offset, 0.0, 0.0};
  }
  static WaveformSpec triangle(double f, double amp, double offset) {
    return {Shape::triangle, f, amp, offset, 0.0, 0.0};
  }
  static WaveformSpec dc(double offset) { return {Shape::dc, 0.0, 0.0, offset, 0.0, 0.0}; }
  static WaveformSpec lm35(double start_c, double slope_c_per_s) {
    return {Shape::lm35_ramp, 0.0, 0.0, 0.0, start_c, slope_c_per_s};
  }

  bool operator==(const WaveformSpec&) const = default;
};

class WaveformError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Throws WaveformError if a field is non-finite or a periodic shape has a
/// negative frequency or amplitude.
void validate(const WaveformSpec& spec);

/// Voltage of the source at time `t` seconds, clamped to [0, 5] V.
double sample_waveform(const WaveformSpec& spec, double t);

/// Parses `shape:key=value,...`, e.g. `sine:f=0.25,amp=2.5,offset=2.5`,
/// `lm35:start=25,slope=0.1`, `dc:offset=1.0`. Keys the shape does not use
/// are rejected.
WaveformSpec parse_waveform(std::string_view text);

/// Canonical text form, accepted by parse_waveform.
std::string to_string(const WaveformSpec& spec);

std::string_view shape_name(Shape shape);

}  // namespace picdaq::signal
