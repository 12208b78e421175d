#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "rirl/maxent.hpp"
#include "rirl/observation.hpp"

namespace rirl {

// An MDP whose trajectories are never seen directly; evidence arrives through
// the observation model only.
struct HiddenMdp {
    Mdp mdp;
    FeatureSet feats;
    ObservationModel obs;
};

// One evidence sequence: L+1 per-epoch observations aligned with the hidden
// trajectory's steps.
struct ObservationSequence {
    std::vector<StepObservation> epochs;
};

// Per-epoch normalized log-likelihood vectors over (s,a); the working
// representation every inference routine consumes.
using StepLogLik = std::vector<std::vector<double>>;

StepLogLik loglik_table(const ObservationSequence& omega, const ObservationModel& model);

// log Pr(T) = log Pr(s0) + sum_t log Pr(a_t|s_t) + sum_{t<L} log Pr(s_{t+1}|s_t,a_t).
// Every action, including the final one, carries a policy factor.
double log_traj_prior(const Trajectory& T, const Mdp& mdp, const Policy& pi);
double traj_prior(const Trajectory& T, const HiddenMdp& hm, const Policy& pi);

// log Pr(omega|T) = sum_t log lik_t(s_t, a_t).
double log_obs_given_traj(const ObservationSequence& omega, const Trajectory& T,
                          const HiddenMdp& hm);
double obs_given_traj(const ObservationSequence& omega, const Trajectory& T, const HiddenMdp& hm);

// Pr(T|omega) by full enumeration of the feasible trajectory set. Throws
// CapacityError over the enumeration cap and DegenerateEvidenceError when no
// trajectory carries positive mass.
double posterior(const Trajectory& T, const ObservationSequence& omega, const HiddenMdp& hm,
                 const Policy& pi, double enumeration_cap = 1e6);

enum class EstepMethod { Exact, Gibbs };

const char* estep_method_name(EstepMethod m);

// Posterior expectation of the trajectory feature counts, averaged uniformly
// over the evidence sequences.
struct EstepResult {
    std::vector<double> phi;
    EstepMethod method = EstepMethod::Exact;
    int effective_samples = 0;     // recorded sweeps summed over chains (Gibbs)
    double convergence_delta = 0.0;
    bool converged = true;
};

EstepResult exact_estep(std::span<const ObservationSequence> omegas, const HiddenMdp& hm,
                        const Policy& pi, double enumeration_cap = 1e6);

struct GibbsOptions {
    double epsilon = 0.01;   // stop when the running mean moves less than this
    int burn_in_sweeps = 500;
    int thinning = 5;        // sweeps between recorded samples
    int block_samples = 200; // records per convergence checkpoint
    long max_sweeps = 200000;
    uint64_t seed = 0;
};

// Single-site Gibbs sampling of the hidden trajectories: one sweep resamples
// every step once, in random scan order, from its conditional
//   Pr(s_t,a_t | rest) ~ Pr(s_t|s_{t-1},a_{t-1}) Pr(a_t|s_t)
//                        Pr(s_{t+1}|s_t,a_t) Pr(o_t|s_t,a_t),
// with the boundary steps dropping the factors they lack. One chain per
// evidence sequence; all chains advance in lockstep and convergence is judged
// on the aggregated running mean between successive blocks.
EstepResult gibbs_estep(std::span<const ObservationSequence> omegas, const HiddenMdp& hm,
                        const Policy& pi, const GibbsOptions& opts);

// Overloads on precomputed likelihood tables, for callers that reuse them.
EstepResult exact_estep(std::span<const StepLogLik> tables, const Mdp& mdp,
                        const FeatureSet& feats, const Policy& pi, double enumeration_cap);
EstepResult gibbs_estep(std::span<const StepLogLik> tables, const Mdp& mdp,
                        const FeatureSet& feats, const Policy& pi, const GibbsOptions& opts);

// The M step is the plain maximum-entropy solve with the posterior
// expectation standing in for the empirical one.
MaxEntSolution mstep(std::span<const double> phi, const HiddenMdp& hm,
                     const MaxEntOptions& opts = {});

// Observed-data log-likelihood (1/|Omega|) sum_omega log sum_T Pr(omega|T) Pr(T),
// by enumeration; the EM ascent diagnostic on small instances.
double observed_loglik(std::span<const ObservationSequence> omegas, const HiddenMdp& hm,
                       const Policy& pi, double enumeration_cap = 1e6);

struct EmOptions {
    double em_epsilon = 0.01; // inf-norm motion of phi between iterations
    int max_iterations = 100;
    double beta = 5.0;        // Boltzmann sharpness of the policy at current theta
    uint64_t seed = 0;        // drives the theta init and the sampler chains
    std::optional<EstepMethod> force_method; // default: exact under the cap, else Gibbs
    double enumeration_cap = 1e6;
    GibbsOptions gibbs;
    MaxEntOptions solver;
    bool track_loglik = false; // record observed_loglik per iteration (small instances)
};

struct EmIterationRecord {
    int iteration = 0;
    std::vector<double> theta; // after this iteration's M step
    std::vector<double> phi;   // this iteration's posterior expectation
    double dual_value = 0.0;
    EstepMethod estep_method = EstepMethod::Exact;
    bool estep_converged = true;
    double observed_loglik = std::numeric_limits<double>::quiet_NaN();
    double elapsed_seconds = 0.0;
};

struct EmTrace {
    std::vector<EmIterationRecord> records;
    int loglik_decreases = 0; // ascent violations beyond tolerance, logged not fatal
};

struct EmResult {
    RewardWeights theta;
    Policy policy;
    EmTrace trace;
    bool converged = false;
    int iterations = 0;
};

// Full EM learner: theta drawn uniformly from [-1,1]^K under opts.seed, then
// alternate the posterior E step with the maximum-entropy M step until the
// expectation vector settles or the iteration cap is hit.
EmResult robust_irl(std::span<const ObservationSequence> omegas, const HiddenMdp& hm,
                    const EmOptions& opts);

void write_trace_csv(std::ostream& os, const EmTrace& trace);

} // namespace rirl
