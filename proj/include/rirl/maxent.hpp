#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "rirl/mdp.hpp"

namespace rirl {

struct Step {
    int state = 0;
    int action = 0;
    bool operator==(const Step&) const = default;
};

// L+1 state-action pairs, indexed 0..L.
struct Trajectory {
    std::vector<Step> steps;
    bool operator==(const Trajectory&) const = default;
};

// Sum of phi(s,a) over the steps of T.
std::vector<double> feature_count(const Trajectory& T, const FeatureSet& feats);

// Mean of feature_count over a demonstration set. Throws ConfigError when empty.
std::vector<double> empirical_feature_expectation(std::span<const Trajectory> demos,
                                                  const FeatureSet& feats);

// ---------------------------------------------------------------------------
// The trajectory distribution is the exponential family
//     Pr(T) = exp(theta . feature_count(T)) / n(theta)
// supported on dynamics-feasible trajectories: start states with positive
// start probability and transitions with positive probability. Actions are
// otherwise unconstrained, including the final one.
// ---------------------------------------------------------------------------

// Worst-case number of joint assignments, (|S|*|A|)^(L+1), in log10.
// The exact methods refuse to run above `cap` assignments.
double log10_assignment_bound(const Mdp& mdp);

void check_enumeration_cap(const Mdp& mdp, double cap, const char* advice);

// Visits every feasible trajectory once. Intended for small instances and
// for the exact E-step; the cap must be checked by the caller.
void for_each_feasible_trajectory(const Mdp& mdp,
                                  const std::function<void(const Trajectory&)>& fn);

enum class ExpectationMethod { Enumerate, VisitationFrequency };

// log n(theta). VisitationFrequency runs the soft backward recursion over the
// finite horizon; Enumerate literally sums over trajectories.
double log_partition(const Mdp& mdp, const RewardWeights& theta, const FeatureSet& feats,
                     ExpectationMethod method, double enumeration_cap = 1e6);

// exp(theta . feature_count(T) - log_partition).
double trajectory_prob(const Trajectory& T, const RewardWeights& theta, const FeatureSet& feats,
                       double log_partition_value);

// E_T[feature_count] under the model at theta. Both methods are exact; the
// recursion is the production path and enumeration the independent check.
std::vector<double> model_feature_expectation(const Mdp& mdp, const RewardWeights& theta,
                                              const FeatureSet& feats, ExpectationMethod method,
                                              double enumeration_cap = 1e6);

// Gradient of the dual log n(theta) - theta . phi_hat, i.e. model expectation
// minus target.
std::vector<double> dual_gradient(const Mdp& mdp, const RewardWeights& theta,
                                  const FeatureSet& feats, std::span<const double> phi_hat,
                                  ExpectationMethod method, double enumeration_cap = 1e6);

struct MaxEntOptions {
    double tolerance = 1e-4;       // convergence threshold on ||gradient||_inf
    int max_iterations = 5000;
    double step_start = 0.5;       // adaptive step: halve on any dual increase
    double step_floor = 1e-6;
    ExpectationMethod method = ExpectationMethod::VisitationFrequency;
    double enumeration_cap = 1e6;
    std::optional<std::vector<double>> initial_theta; // default: zeros
};

struct MaxEntSolution {
    RewardWeights theta;
    double dual_value = 0.0;
    double grad_norm = 0.0;
    int iterations = 0;
    bool converged = false;
};

// Minimizes the convex dual by exponentiated gradient descent in the signed
// (two-weight) form theta = u - w, u_k <- u_k exp(-eta g_k),
// w_k <- w_k exp(+eta g_k), so weights of either sign are reachable. A step
// that raises the dual is rejected and the step size halved, down to the floor.
MaxEntSolution solve_maxent(std::span<const double> phi_hat, const Mdp& mdp,
                            const FeatureSet& feats, const MaxEntOptions& opts = {});

} // namespace rirl
