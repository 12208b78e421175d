#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "rirl/common.hpp"

namespace rirl {

// One microphone reading: intensity at time t (seconds, epoch-local).
struct IntensitySample {
    double t = 0.0;
    double intensity = 0.0;
};

// Constant-velocity motion within one epoch: position(t) = p0 + v * (t - t0).
struct MotionSegment {
    Vec2 p0;
    Vec2 v;
    double t0 = 0.0;
};

// Quadratic fit of reciprocal intensity over one epoch:
// 1/I(t) ~= a t^2 + b t + c. With an inverse-square source of strength k the
// reciprocal of the intensity of any constant-velocity pass is exactly such a
// quadratic, so the fit preserves the evidence instead of a raw sample dump.
struct EpochObservation {
    double a = 0.0;
    double b = 0.0;
    double c = 0.0;
    double fit_residual = 0.0; // rms in reciprocal-intensity units
    int sample_count = 0;
    int rejected = 0;       // samples with non-positive intensity, excluded
    bool low_rank = false;  // fewer than 3 distinct sample times; degraded fit
    bool clamped = false;   // some sample hit the intensity ceiling
};

// Identified sighting: the observed state-action pair of the watched agent.
struct RangeReading {
    int state = 0;
    int action = 0;
};

// Everything sensed during one epoch. The sound fit is always present; the
// sighting only when the watched agent crossed the observer's field of view.
struct StepObservation {
    EpochObservation sound;
    std::optional<RangeReading> vision;
};

enum class SensorKind { SoundOnly, VisionOnly, Fused };

const char* sensor_kind_name(SensorKind k);

// Immutable description of the observer. `segment_of` maps a state-action
// pair to the constant-velocity motion the observer would expect during that
// epoch; it is wired up by the world builder so this module stays free of
// grid geometry.
struct ObservationModel {
    SensorKind kind = SensorKind::SoundOnly;
    Vec2 listener;
    double sigma = 1.0;          // likelihood bandwidth in reciprocal-intensity units
    double epoch_duration = 1.0; // seconds
    double source_strength = 1.0;
    int num_states = 0;
    int num_actions = 0;
    std::vector<uint8_t> view_mask; // per state: 1 when visible to the observer
    std::function<MotionSegment(int s, int a)> segment_of;
    double vision_correct_prob = 0.95;
};

// Coefficients (a,b,c) of 1/I(t) = (a t^2 + b t + c) for the given segment:
// a = |v|^2 / k, b = 2 v.(p0 - v t0 - listener) / k,
// c = |p0 - v t0 - listener|^2 / k.
// Throws SingularityError when the path passes through the listener within
// [0, epoch_duration].
std::array<double, 3> predicted_coeffs(const MotionSegment& seg, Vec2 listener, double k,
                                       double epoch_duration);

// Direct geometric evaluation k / r(t)^2; the independent counterpart of the
// quadratic expansion above. Throws SingularityError at r = 0.
double intensity_at(const MotionSegment& seg, Vec2 listener, double k, double t);

// Least-squares fit of reciprocal intensity against (t^2, t, 1). Non-positive
// intensities are rejected (counted); fewer than 3 distinct times degrade to
// a linear or constant fit and set low_rank.
EpochObservation fit_epoch(std::span<const IntensitySample> samples);

// Gaussian noise on raw intensities, clamped below at 1e-6 so reciprocals
// stay finite. sigma_noise = 0 returns the input unchanged.
std::vector<IntensitySample> add_noise(std::span<const IntensitySample> samples,
                                       double sigma_noise, uint64_t seed);

// Noiseless samples of a segment on [t_begin, t_end) at `rate` per second.
std::vector<IntensitySample> sample_intensity(const MotionSegment& seg, Vec2 listener, double k,
                                              double t_begin, double t_end, double rate,
                                              double intensity_ceiling, bool* clamped = nullptr);

// Per-step likelihood vector over all (s,a) pairs, in log space and
// normalized (logsumexp = 0). Entry index is s * num_actions + a.
//
// Sound: log lik proportional to -D^2 / (2 sigma^2) where D^2 is the mean
// squared difference between the observed and predicted reciprocal curves on
// a fixed 16-point grid over the epoch. A singular predicted curve gets zero
// likelihood.
//
// Vision: with a sighting, the reported pair has probability
// vision_correct_prob and the remainder spreads uniformly over the other
// in-view pairs, while out-of-view pairs keep the uniform floor 1/(S*A);
// without a sighting the vector is exactly uniform.
//
// Fused: the vision vector on epochs with a sighting, the sound vector
// otherwise.
std::vector<double> step_log_likelihood(const StepObservation& o, const ObservationModel& model);

// Single-pair conveniences over the normalized vector above.
double sound_likelihood(const StepObservation& o, int s, int a, const ObservationModel& model);
double vision_likelihood(const StepObservation& o, int s, int a, const ObservationModel& model);
double fused_likelihood(const StepObservation& o, int s, int a, const ObservationModel& model);

} // namespace rirl
