#include <doctest.h>

#include <cmath>
#include <random>

#include "picdaq/signal_sources.hpp"

using namespace picdaq::signal;

TEST_CASE("sample_waveform examples") {
  const auto sine = WaveformSpec::sine(0.25, 2.5, 2.5);
  CHECK(sample_waveform(sine, 0.0) == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(sample_waveform(sine, 1.0) == 5.0);
  CHECK(sample_waveform(WaveformSpec::lm35(25.0, 0.0), 7.0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(sample_waveform(WaveformSpec::sine(1.0, 4.0, 4.0), 0.25) == 5.0);
}

TEST_CASE("square is high for the first half period") {
  const auto sq = WaveformSpec::square(1.0, 1.0, 2.0);
  CHECK(sample_waveform(sq, 0.0) == 3.0);
  CHECK(sample_waveform(sq, 0.49) == 3.0);
  CHECK(sample_waveform(sq, 0.5) == 1.0);
  CHECK(sample_waveform(sq, 0.99) == 1.0);
  CHECK(sample_waveform(sq, 1.0) == 3.0);
}

TEST_CASE("triangle ramps between offset - amp and offset + amp") {
  const auto tri = WaveformSpec::triangle(1.0, 2.0, 2.5);
  CHECK(sample_waveform(tri, 0.0) == doctest::Approx(0.5));
  CHECK(sample_waveform(tri, 0.25) == doctest::Approx(2.5));
  CHECK(sample_waveform(tri, 0.5) == doctest::Approx(4.5));
  CHECK(sample_waveform(tri, 0.75) == doctest::Approx(2.5));
}

TEST_CASE("lm35 ramp ignores periodic fields") {
  auto spec = WaveformSpec::lm35(20.0, 1.0);
  spec.frequency_hz = 100.0;
  spec.amplitude_v = 3.0;
  CHECK(sample_waveform(spec, 10.0) == doctest::Approx(0.30));
  CHECK(sample_waveform(WaveformSpec::lm35(-10.0, 0.0), 0.0) == 0.0);
}

TEST_CASE("clamp totality over random specs") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> shape(0, 4);
  std::uniform_real_distribution<double> f(0.0, 100.0), amp(0.0, 20.0), off(-20.0, 20.0),
      temp(-100.0, 1000.0), slope(-50.0, 50.0), t(0.0, 1e4);
  for (int i = 0; i < 1'000'000; ++i) {
    WaveformSpec s{static_cast<Shape>(shape(rng)), f(rng), amp(rng), off(rng), temp(rng), slope(rng)};
    const double v = sample_waveform(s, t(rng));
    if (!(v >= 0.0 && v <= 5.0)) FAIL("out of range: " << v);
  }
}

TEST_CASE("periodic shapes repeat after 1/f") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> f(0.01, 10.0), amp(0.0, 2.5), t(0.0, 1000.0);
  for (Shape shape : {Shape::sine, Shape::square, Shape::triangle}) {
    for (int i = 0; i < 20'000; ++i) {
      WaveformSpec s{shape, f(rng), amp(rng), 2.5, 0.0, 0.0};
      const double t0 = t(rng);
      const double a = sample_waveform(s, t0);
      const double b = sample_waveform(s, t0 + 1.0 / s.frequency_hz);
      if (std::abs(a - b) >= 1e-9) FAIL(shape_name(shape) << " f=" << s.frequency_hz << " t=" << t0);
    }
  }
}

TEST_CASE("dc is constant") {
  const auto dc = WaveformSpec::dc(1.234);
  CHECK(sample_waveform(dc, 0.0) == sample_waveform(dc, 12345.678));
}

TEST_CASE("parse_waveform grammar") {
  CHECK(parse_waveform("sine:f=0.25,amp=2.5,offset=2.5") == WaveformSpec::sine(0.25, 2.5, 2.5));
  CHECK(parse_waveform("lm35:start=25,slope=0.1") == WaveformSpec::lm35(25.0, 0.1));
  CHECK(parse_waveform("dc:offset=1.0") == WaveformSpec::dc(1.0));
  CHECK(parse_waveform("dc") == WaveformSpec::dc(0.0));
  CHECK(parse_waveform("square:f=1") == WaveformSpec::square(1.0, 0.0, 0.0));

  CHECK_THROWS_AS(parse_waveform("sine:f=1,bogus=2"), WaveformError);
  CHECK_THROWS_AS(parse_waveform("dc:f=1"), WaveformError);
  CHECK_THROWS_AS(parse_waveform("lm35:amp=1"), WaveformError);
  CHECK_THROWS_AS(parse_waveform("sawtooth:f=1"), WaveformError);
  CHECK_THROWS_AS(parse_waveform("sine:f=abc"), WaveformError);
  CHECK_THROWS_AS(parse_waveform("sine:f"), WaveformError);
  CHECK_THROWS_AS(parse_waveform("sine:f=1,f=2"), WaveformError);
  CHECK_THROWS_AS(parse_waveform("sine:f=-1"), WaveformError);
  CHECK_THROWS_AS(parse_waveform("sine:amp=-1"), WaveformError);
}

TEST_CASE("to_string output parses back to the same spec") {
  for (const auto& s : {WaveformSpec::sine(0.1, 2.0, 2.5), WaveformSpec::square(0.2, 2.5, 2.5),
                        WaveformSpec::triangle(1.0 / 3.0, 1.5, 2.0), WaveformSpec::dc(4.2),
                        WaveformSpec::lm35(20.0, 1.0 / 6.0)}) {
    CHECK(parse_waveform(to_string(s)) == s);
  }
}
