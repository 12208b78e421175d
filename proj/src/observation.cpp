#include "rirl/observation.hpp"

#include <algorithm>
#include <cmath>

namespace rirl {

const char* sensor_kind_name(SensorKind k) {
    switch (k) {
    case SensorKind::SoundOnly: return "sound_only";
    case SensorKind::VisionOnly: return "vision_only";
    default: return "fused";
    }
}

namespace {

constexpr int CURVE_GRID = 16;       // fixed comparison grid per epoch
constexpr double INTENSITY_FLOOR = 1e-6;

double quad(const std::array<double, 3>& q, double t) { return (q[0] * t + q[1]) * t + q[2]; }

// minimum of a t^2 + b t + c over [0, hi]
double quad_min(double a, double b, double c, double hi) {
    double m = std::min(c, (a * hi + b) * hi + c);
    if (a > 0.0) {
        double tstar = -b / (2.0 * a);
        if (tstar > 0.0 && tstar < hi) m = std::min(m, (a * tstar + b) * tstar + c);
    }
    return m;
}

} // namespace

std::array<double, 3> predicted_coeffs(const MotionSegment& seg, Vec2 listener, double k,
                                       double epoch_duration) {
    if (k <= 0.0) throw ConfigError("predicted_coeffs: source strength must be positive");
    if (epoch_duration <= 0.0) throw ConfigError("predicted_coeffs: epoch duration must be positive");
    Vec2 u = seg.p0 - seg.t0 * seg.v - listener; // offset at t = 0
    double a = norm2(seg.v) / k;
    double b = 2.0 * dot(seg.v, u) / k;
    double c = norm2(u) / k;
    if (quad_min(a, b, c, epoch_duration) <= 1e-12)
        throw SingularityError("predicted_coeffs: path passes through the listener");
    return {a, b, c};
}

double intensity_at(const MotionSegment& seg, Vec2 listener, double k, double t) {
    if (k <= 0.0) throw ConfigError("intensity_at: source strength must be positive");
    Vec2 p = seg.p0 + (t - seg.t0) * seg.v;
    double r2 = norm2(p - listener);
    if (r2 <= 1e-18) throw SingularityError("intensity_at: source coincides with the listener");
    return k / r2;
}

namespace {

// Householder QR least squares for a tall n x 3 design matrix. The quadratic
// basis is evaluated on scaled times so the fit stays well conditioned even
// for long epochs; normal equations would square the condition number.
std::array<double, 3> lsq3(const std::vector<std::array<double, 3>>& rows,
                           std::vector<double> rhs) {
    const int n = (int)rows.size();
    std::vector<std::array<double, 3>> R(rows);
    for (int j = 0; j < 3; ++j) {
        double nrm = 0.0;
        for (int i = j; i < n; ++i) nrm += R[i][j] * R[i][j];
        nrm = std::sqrt(nrm);
        if (nrm == 0.0) throw SingularityError("fit_epoch: rank-deficient design matrix");
        double alpha = R[j][j] > 0.0 ? -nrm : nrm;
        std::vector<double> hv(n, 0.0); // Householder vector for rows j..n-1

        for (int i = j; i < n; ++i) hv[i] = R[i][j];
        hv[j] -= alpha;
        double vnorm2 = 0.0;
        for (int i = j; i < n; ++i) vnorm2 += hv[i] * hv[i];
        if (vnorm2 == 0.0) continue;
        for (int col = j; col < 3; ++col) {
            double s = 0.0;
            for (int i = j; i < n; ++i) s += hv[i] * R[i][col];
            s = 2.0 * s / vnorm2;
            for (int i = j; i < n; ++i) R[i][col] -= s * hv[i];
        }
        double s = 0.0;
        for (int i = j; i < n; ++i) s += hv[i] * rhs[i];
        s = 2.0 * s / vnorm2;
        for (int i = j; i < n; ++i) rhs[i] -= s * hv[i];
    }
    std::array<double, 3> x{};
    for (int j = 2; j >= 0; --j) {
        double s = rhs[j];
        for (int col = j + 1; col < 3; ++col) s -= R[j][col] * x[col];
        if (R[j][j] == 0.0) throw SingularityError("fit_epoch: singular triangular factor");
        x[j] = s / R[j][j];
    }
    return x;
}

} // namespace

EpochObservation fit_epoch(std::span<const IntensitySample> samples) {
    EpochObservation out;
    std::vector<double> ts, ys;
    ts.reserve(samples.size());
    ys.reserve(samples.size());
    for (const auto& s : samples) {
        if (s.intensity <= 0.0) {
            ++out.rejected;
            continue;
        }
        ts.push_back(s.t);
        ys.push_back(1.0 / s.intensity);
    }
    if (ts.empty()) throw ValidationError("fit_epoch: no usable samples");
    out.sample_count = (int)ts.size();

    std::vector<double> distinct(ts);
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end(),
                               [](double a, double b) { return std::abs(a - b) < 1e-12; }),
                   distinct.end());

    double tau = 0.0;
    for (double t : ts) tau = std::max(tau, std::abs(t));
    if (tau == 0.0) tau = 1.0;

    if (distinct.size() == 1) {
        // constant fit: only the offset is identifiable
        out.low_rank = true;
        double mean = 0.0;
        for (double y : ys) mean += y;
        out.c = mean / (double)ys.size();
    } else if (distinct.size() == 2) {
        // linear fit: slope and offset, curvature pinned at zero
        out.low_rank = true;
        double st = 0.0, sy = 0.0, stt = 0.0, sty = 0.0;
        double n = (double)ts.size();
        for (size_t i = 0; i < ts.size(); ++i) {
            st += ts[i];
            sy += ys[i];
            stt += ts[i] * ts[i];
            sty += ts[i] * ys[i];
        }
        double det = n * stt - st * st;
        out.b = (n * sty - st * sy) / det;
        out.c = (sy - out.b * st) / n;
    } else {
        std::vector<std::array<double, 3>> rows(ts.size());
        for (size_t i = 0; i < ts.size(); ++i) {
            double s = ts[i] / tau;
            rows[i] = {s * s, s, 1.0};
        }
        auto x = lsq3(rows, ys);
        out.a = x[0] / (tau * tau);
        out.b = x[1] / tau;
        out.c = x[2];
    }

    double sse = 0.0;
    for (size_t i = 0; i < ts.size(); ++i) {
        double d = ys[i] - quad({out.a, out.b, out.c}, ts[i]);
        sse += d * d;
    }
    out.fit_residual = std::sqrt(sse / (double)ts.size());
    return out;
}

std::vector<IntensitySample> add_noise(std::span<const IntensitySample> samples,
                                       double sigma_noise, uint64_t seed) {
    if (sigma_noise < 0.0) throw ConfigError("add_noise: negative noise level");
    std::vector<IntensitySample> out(samples.begin(), samples.end());
    if (sigma_noise == 0.0) return out;
    Rng rng(seed);
    for (auto& s : out)
        s.intensity = std::max(s.intensity + sigma_noise * rng.gaussian(), INTENSITY_FLOOR);
    return out;
}

std::vector<IntensitySample> sample_intensity(const MotionSegment& seg, Vec2 listener, double k,
                                              double t_begin, double t_end, double rate,
                                              double intensity_ceiling, bool* clamped) {
    if (t_end <= t_begin) throw ConfigError("sample_intensity: empty window");
    if (rate <= 0.0) throw ConfigError("sample_intensity: rate must be positive");
    std::vector<double> times;
    for (int i = 0;; ++i) {
        double t = t_begin + (i + 0.5) / rate;
        if (t >= t_end) break;
        times.push_back(t);
    }
    if (times.size() < 3) { // defensive: a fit needs three points
        times.clear();
        double w = t_end - t_begin;
        for (int i = 0; i < 3; ++i) times.push_back(t_begin + w * (i + 0.5) / 3.0);
    }
    std::vector<IntensitySample> out;
    out.reserve(times.size());
    for (double t : times) {
        double val;
        try {
            val = intensity_at(seg, listener, k, t);
        } catch (const SingularityError&) {
            val = intensity_ceiling;
        }
        if (val > intensity_ceiling) {
            val = intensity_ceiling;
            if (clamped) *clamped = true;
        }
        out.push_back({t, val});
    }
    return out;
}

namespace {

void check_model(const ObservationModel& m) {
    if (m.num_states <= 0 || m.num_actions <= 0)
        throw ConfigError("observation model: empty state or action space");
    if (m.sigma <= 0.0) throw ConfigError("observation model: bandwidth must be positive");
    if (!m.segment_of && m.kind != SensorKind::VisionOnly)
        throw ConfigError("observation model: missing segment geometry");
    if ((int)m.view_mask.size() != m.num_states && m.kind != SensorKind::SoundOnly)
        throw ConfigError("observation model: view mask size mismatch");
}

std::vector<double> sound_log_vector(const EpochObservation& o, const ObservationModel& m) {
    const int S = m.num_states, A = m.num_actions;
    const double D = m.epoch_duration;
    std::vector<double> lw((size_t)S * A, NEG_INF);
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) {
            std::array<double, 3> pred;
            try {
                pred = predicted_coeffs(m.segment_of(s, a), m.listener, m.source_strength, D);
            } catch (const SingularityError&) {
                continue; // zero likelihood for a singular predicted curve
            }
            double d2 = 0.0;
            for (int j = 0; j < CURVE_GRID; ++j) {
                double t = (j + 0.5) * D / CURVE_GRID;
                double diff = quad({o.a, o.b, o.c}, t) - quad(pred, t);
                d2 += diff * diff;
            }
            d2 /= CURVE_GRID;
            lw[(size_t)s * A + a] = -d2 / (2.0 * m.sigma * m.sigma);
        }
    return lw;
}

std::vector<double> vision_log_vector(const std::optional<RangeReading>& reading,
                                      const ObservationModel& m) {
    const int S = m.num_states, A = m.num_actions;
    const double uniform = -std::log((double)S * A);
    std::vector<double> lw((size_t)S * A, uniform);
    if (!reading) return lw; // nothing sighted: exactly uniform
    int in_view = 0;
    for (int s = 0; s < S; ++s)
        if (m.view_mask[s]) in_view += A;
    for (int s = 0; s < S; ++s) {
        if (!m.view_mask[s]) continue;
        for (int a = 0; a < A; ++a) {
            bool is_reported = (s == reading->state && a == reading->action);
            double p;
            if (in_view <= 1)
                p = is_reported ? 1.0 : 1e-12;
            else
                p = is_reported ? m.vision_correct_prob
                                : (1.0 - m.vision_correct_prob) / (double)(in_view - 1);
            lw[(size_t)s * A + a] = std::log(p);
        }
    }
    return lw;
}

} // namespace

std::vector<double> step_log_likelihood(const StepObservation& o, const ObservationModel& model) {
    check_model(model);
    std::vector<double> lw;
    switch (model.kind) {
    case SensorKind::SoundOnly: lw = sound_log_vector(o.sound, model); break;
    case SensorKind::VisionOnly: lw = vision_log_vector(o.vision, model); break;
    case SensorKind::Fused:
        // sighted epochs carry the identified pair; unsighted epochs fall
        // back on what the microphone heard
        lw = o.vision ? vision_log_vector(o.vision, model) : sound_log_vector(o.sound, model);
        break;
    }
    double lz = logsumexp(lw);
    if (lz == NEG_INF)
        throw DegenerateEvidenceError("step likelihood: zero mass on every pair", -1);
    for (double& x : lw) x -= lz;
    return lw;
}

namespace {

double pair_likelihood(const StepObservation& o, int s, int a, ObservationModel m,
                       SensorKind kind) {
    m.kind = kind;
    auto lw = step_log_likelihood(o, m);
    if (s < 0 || s >= m.num_states || a < 0 || a >= m.num_actions)
        throw ConfigError("likelihood: state-action index out of range");
    return std::exp(lw[(size_t)s * m.num_actions + a]);
}

} // namespace

double sound_likelihood(const StepObservation& o, int s, int a, const ObservationModel& model) {
    return pair_likelihood(o, s, a, model, SensorKind::SoundOnly);
}

double vision_likelihood(const StepObservation& o, int s, int a, const ObservationModel& model) {
    return pair_likelihood(o, s, a, model, SensorKind::VisionOnly);
}

double fused_likelihood(const StepObservation& o, int s, int a, const ObservationModel& model) {
    return pair_likelihood(o, s, a, model, SensorKind::Fused);
}

} // namespace rirl
