#pragma once

// Seeded synthetic sensor datasets whose target is a function of visual
// patterns in the grid rather than of raw cell sums.
//
// Each sensor row i of a sample carries a smooth seasonal baseline plus one
// Gaussian bump with amplitude a_i, centre p_i and width w_i (all in
// normalized units / time steps). The target is
//
//   y = kBase + kAmplitudeGain * sum_i a_i
//         + kInteractionGain * sum_i a_i a_{i+1} exp(-(p_i - p_{i+1})^2 / (2 (w_i^2 + w_{i+1}^2)))
//
// i.e. peak heights plus a bonus when bumps in neighbouring rows line up in
// time. Bump widths vary independently, so the target is not a linear
// function of the cell values.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "pbmr/ingest.hpp"
#include "pbmr/rng.hpp"

namespace pbmr {

struct SynthSpec {
  std::size_t sensors = 7;
  std::size_t time_steps = 214;
  std::size_t samples = 2000;
  double missing_rate = 0.02;
  /// Target noise std is noise * kTargetNoiseGain; sensor noise std is
  /// noise * kSensorNoiseGain in normalized units.
  double noise = 0.05;

  void validate() const {
    if (sensors == 0) throw ValidationError("synth: sensor count must be positive");
    if (samples == 0) throw ValidationError("synth: sample count must be positive");
    if (time_steps == 0) throw ValidationError("synth: time_steps must be positive");
    if (!(missing_rate >= 0.0 && missing_rate < 1.0)) throw ValidationError("synth: missing rate must be in [0, 1)");
    if (!(noise >= 0.0) || !std::isfinite(noise)) throw ValidationError("synth: noise must be >= 0");
  }
};

struct BumpLatent {
  double amplitude = 0; ///< normalized units
  double centre = 0;    ///< time steps
  double width = 0;     ///< time steps (Gaussian sigma)
  double phase = 0;     ///< baseline phase, radians
};

struct SampleLatents {
  std::vector<BumpLatent> rows;
  double clean_target = 0;
};

struct SyntheticDataset {
  Dataset dataset;
  std::vector<SampleLatents> latents;
};

namespace synth {

inline constexpr double kBase = 0.0;
inline constexpr double kAmplitudeGain = 10.0;
inline constexpr double kInteractionGain = 10.0;
inline constexpr double kTargetNoiseGain = 10.0;
inline constexpr double kSensorNoiseGain = 0.1;
inline constexpr double kBaselineLevel = 0.3;
inline constexpr double kBaselineSwing = 0.03;

inline double pattern_target(const std::vector<BumpLatent>& rows) {
  double y = kBase;
  for (const auto& r : rows) y += kAmplitudeGain * r.amplitude;
  for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
    const auto& a = rows[i];
    const auto& b = rows[i + 1];
    const double d = a.centre - b.centre;
    const double overlap = std::exp(-d * d / (2.0 * (a.width * a.width + b.width * b.width)));
    y += kInteractionGain * a.amplitude * b.amplitude * overlap;
  }
  return y;
}

/// Normalized (pre-noise) level of a row at time step j.
inline double row_level(const BumpLatent& r, std::size_t j, std::size_t time_steps) {
  const double t = static_cast<double>(j);
  const double season = kBaselineLevel + kBaselineSwing * std::sin(2.0 * 3.14159265358979323846 * t /
                                                                       static_cast<double>(time_steps) + r.phase);
  const double d = (t - r.centre) / r.width;
  return season + r.amplitude * std::exp(-0.5 * d * d);
}

/// Weather-style channels for the first seven rows, generic ones after.
inline std::vector<SensorChannel> default_sensors(std::size_t count) {
  static const SensorChannel named[] = {
      {"avg_dni", 0.0, 1000.0, SensorKind::measured},     {"avg_precip", 0.0, 250.0, SensorKind::measured},
      {"avg_rel_humidity", 0.0, 100.0, SensorKind::measured}, {"max_dni", 0.0, 1200.0, SensorKind::measured},
      {"max_surface_temp", -25.0, 55.0, SensorKind::measured}, {"min_surface_temp", -40.0, 45.0, SensorKind::measured},
      {"avg_surface_temp", -30.0, 50.0, SensorKind::measured},
  };
  std::vector<SensorChannel> out;
  for (std::size_t i = 0; i < count; ++i) {
    if (i < std::size(named)) {
      out.push_back(named[i]);
    } else {
      const double k = static_cast<double>(i + 1);
      out.push_back({"sensor_" + std::to_string(i), -k, 10.0 * k, SensorKind::measured});
    }
  }
  return out;
}

} // namespace synth

/// Deterministic for a fixed (spec, seed): each sample draws from its own
/// seed-derived stream.
inline SyntheticDataset generate_synthetic(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  SyntheticDataset out;
  auto& m = out.dataset.manifest;
  m.sensors = synth::default_sensors(spec.sensors);
  m.time_steps = spec.time_steps;
  m.target_name = "yield";
  const double steps = static_cast<double>(spec.time_steps);

  out.dataset.frames.reserve(spec.samples);
  out.latents.reserve(spec.samples);
  for (std::size_t s = 0; s < spec.samples; ++s) {
    Rng rng(derive_seed(seed, {s}));
    char id[32];
    std::snprintf(id, sizeof(id), "s%06zu", s);
    SampleFrame f(id, spec.sensors, spec.time_steps);
    SampleLatents lat;
    for (std::size_t i = 0; i < spec.sensors; ++i) {
      BumpLatent r;
      r.amplitude = rng.uniform(0.05, 0.55);
      r.centre = rng.uniform(0.15 * steps, 0.85 * steps);
      r.width = std::max(1.0, rng.uniform(0.03 * steps, 0.045 * steps));
      r.phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
      lat.rows.push_back(r);
    }
    for (std::size_t i = 0; i < spec.sensors; ++i) {
      const auto& sensor = m.sensors[i];
      for (std::size_t j = 0; j < spec.time_steps; ++j) {
        double level = synth::row_level(lat.rows[i], j, spec.time_steps);
        if (spec.noise > 0) level += spec.noise * synth::kSensorNoiseGain * rng.normal();
        level = std::clamp(level, 0.0, 1.0);
        f.at(i, j) = sensor.sigma + level * sensor.width();
      }
    }
    if (spec.missing_rate > 0) {
      for (std::size_t i = 0; i < spec.sensors; ++i) {
        const std::size_t row = i * spec.time_steps;
        std::size_t row_missing = 0;
        for (std::size_t j = 0; j < spec.time_steps; ++j) {
          if (rng.uniform() < spec.missing_rate) {
            f.missing[row + j] = true;
            ++row_missing;
          }
        }
        // Keep one observation so the row can be filled.
        if (row_missing == spec.time_steps) f.missing[row + rng.below(spec.time_steps)] = false;
      }
      for (std::size_t c = 0; c < f.values.size(); ++c)
        if (f.missing[c]) f.values[c] = 0.0;
    }
    lat.clean_target = synth::pattern_target(lat.rows);
    double y = lat.clean_target;
    if (spec.noise > 0) y += spec.noise * synth::kTargetNoiseGain * rng.normal();
    f.target = y;
    out.dataset.frames.push_back(std::move(f));
    out.latents.push_back(std::move(lat));
  }
  return out;
}

} // namespace pbmr
