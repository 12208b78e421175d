#pragma once

#include <functional>
#include <span>
#include <vector>

#include "rirl/common.hpp"

namespace rirl {

enum class Heading { North = 0, East = 1, South = 2, West = 3 };

inline Vec2 heading_vec(Heading h) {
    switch (h) {
    case Heading::North: return {0.0, -1.0}; // rows grow downward
    case Heading::East: return {1.0, 0.0};
    case Heading::South: return {0.0, 1.0};
    default: return {-1.0, 0.0};
    }
}

// Semantic description of one state index: which grid cell the agent occupies
// and which way it faces.
struct State {
    int cell = 0;
    Heading heading = Heading::East;
};

// Finite MDP over an indexed state list. `transition` is dense row-major
// [s][a][s']; `horizon` is the number of decision epochs L (a trajectory
// carries L+1 state-action pairs, indexed 0..L); `discount` is used only by
// the infinite-horizon value computations.
struct Mdp {
    std::vector<State> states;
    int num_actions = 0;
    std::vector<double> transition;
    std::vector<double> start;
    int horizon = 1;
    double discount = 0.95;

    int num_states() const { return (int)states.size(); }
    size_t tindex(int s, int a, int t) const {
        return ((size_t)s * num_actions + a) * states.size() + t;
    }
    double trans(int s, int a, int t) const { return transition[tindex(s, a, t)]; }
};

// Throws ValidationError on malformed dimensions, non-stochastic transition
// rows, a non-normalized start distribution, or a non-positive horizon.
void validate_mdp(const Mdp& mdp);

// Sparse transition support: successors(s,a) lists every s' with positive
// probability. The samplers and the trajectory enumerators run on this.
std::vector<std::vector<int>> successor_table(const Mdp& mdp);

// Binary feature map phi(s,a) -> {0,1}^K, materialized as a dense table at
// construction time since the spaces are finite and every consumer iterates
// over all pairs anyway.
class FeatureSet {
  public:
    using Evaluator = std::function<void(const State&, int action, double* out)>;

    FeatureSet() = default;
    // Evaluates `fn` on every (state, action) pair and checks each component
    // is exactly 0 or 1.
    FeatureSet(const Mdp& mdp, int count, const Evaluator& fn);

    int count() const { return count_; }
    int num_states() const { return num_states_; }
    int num_actions() const { return num_actions_; }
    std::span<const double> at(int s, int a) const {
        return {table_.data() + ((size_t)s * num_actions_ + a) * count_, (size_t)count_};
    }

  private:
    int count_ = 0;
    int num_states_ = 0;
    int num_actions_ = 0;
    std::vector<double> table_;
};

struct RewardWeights {
    std::vector<double> theta;
};

// Row-stochastic action distribution per state.
struct Policy {
    int num_states = 0;
    int num_actions = 0;
    std::vector<double> probs;

    double prob(int s, int a) const { return probs[(size_t)s * num_actions + a]; }
    std::span<const double> row(int s) const {
        return {probs.data() + (size_t)s * num_actions, (size_t)num_actions};
    }
};

void validate_policy(const Policy& pi, const Mdp& mdp);

using ValueFunction = std::vector<double>;

// Linear reward r(s,a) = theta . phi(s,a).
double reward(const FeatureSet& feats, int s, int a, const RewardWeights& theta);

// Dense S*A table of the same, indexed [s*A + a].
std::vector<double> reward_table(const Mdp& mdp, const FeatureSet& feats,
                                 const RewardWeights& theta);

struct PlanResult {
    ValueFunction values;
    Policy policy; // deterministic greedy, ties to the lowest action index
};

// Discounted infinite-horizon optimal values by value iteration, run until
// the result is within `tolerance` of the fixed point in sup norm.
PlanResult value_iteration(const Mdp& mdp, std::span<const double> reward_sa,
                           double tolerance = 1e-8);

// Fixed-point evaluation of a fixed stochastic policy, same tolerance contract.
ValueFunction evaluate_policy(const Mdp& mdp, const Policy& pi,
                              std::span<const double> reward_sa, double tolerance = 1e-8);

// Q(s,a) = r(s,a) + discount * sum_s' P(s'|s,a) V(s').
std::vector<double> q_from_values(const Mdp& mdp, std::span<const double> reward_sa,
                                  const ValueFunction& values);

// Pr(a|s) proportional to exp(beta * Q*(s,a)), with Q* from value_iteration.
// beta = 0 gives the uniform policy; large beta approaches the greedy one.
Policy boltzmann_policy(const Mdp& mdp, std::span<const double> reward_sa, double beta);

enum class Norm { L1, L2, LInf };

const char* norm_name(Norm n);

// Inverse learning error: ||v_learned - v_expert|| under the chosen norm.
double ile(std::span<const double> v_learned, std::span<const double> v_expert,
           Norm n = Norm::L2);

} // namespace rirl
