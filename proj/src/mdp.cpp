#include "rirl/mdp.hpp"

#include <algorithm>
#include <cmath>

namespace rirl {

void validate_mdp(const Mdp& mdp) {
    const int S = mdp.num_states();
    const int A = mdp.num_actions;
    if (S <= 0 || A <= 0) throw ValidationError("mdp: empty state or action set");
    if (mdp.horizon < 1) throw ValidationError("mdp: horizon must be >= 1");
    if (!(mdp.discount > 0.0 && mdp.discount < 1.0))
        throw ValidationError("mdp: discount must lie in (0,1)");
    if (mdp.transition.size() != (size_t)S * A * S)
        throw ValidationError("mdp: transition table has wrong size");
    if (mdp.start.size() != (size_t)S) throw ValidationError("mdp: start vector has wrong size");

    for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) {
            double row = 0.0;
            for (int t = 0; t < S; ++t) {
                double p = mdp.trans(s, a, t);
                if (p < 0.0) throw ValidationError("mdp: negative transition probability");
                row += p;
            }
            if (std::abs(row - 1.0) > 1e-9)
                throw ValidationError("mdp: transition row (" + std::to_string(s) + "," +
                                      std::to_string(a) + ") sums to " + std::to_string(row));
        }

    double total = 0.0;
    for (double p : mdp.start) {
        if (p < 0.0) throw ValidationError("mdp: negative start probability");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ValidationError("mdp: start distribution not normalized");
}

std::vector<std::vector<int>> successor_table(const Mdp& mdp) {
    const int S = mdp.num_states();
    const int A = mdp.num_actions;
    std::vector<std::vector<int>> succ((size_t)S * A);
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) {
            auto& list = succ[(size_t)s * A + a];
            for (int t = 0; t < S; ++t)
                if (mdp.trans(s, a, t) > 0.0) list.push_back(t);
        }
    return succ;
}

FeatureSet::FeatureSet(const Mdp& mdp, int count, const Evaluator& fn)
    : count_(count), num_states_(mdp.num_states()), num_actions_(mdp.num_actions) {
    if (count < 0) throw ConfigError("features: negative count");
    table_.assign((size_t)num_states_ * num_actions_ * count_, 0.0);
    std::vector<double> buf(count_, 0.0);
    for (int s = 0; s < num_states_; ++s)
        for (int a = 0; a < num_actions_; ++a) {
            std::fill(buf.begin(), buf.end(), 0.0);
            fn(mdp.states[s], a, buf.data());
            for (int k = 0; k < count_; ++k) {
                if (buf[k] != 0.0 && buf[k] != 1.0)
                    throw ValidationError("features: component not binary at (" +
                                          std::to_string(s) + "," + std::to_string(a) + ")");
                table_[((size_t)s * num_actions_ + a) * count_ + k] = buf[k];
            }
        }
}

void validate_policy(const Policy& pi, const Mdp& mdp) {
    if (pi.num_states != mdp.num_states() || pi.num_actions != mdp.num_actions)
        throw ValidationError("policy: dimensions do not match the mdp");
    if (pi.probs.size() != (size_t)pi.num_states * pi.num_actions)
        throw ValidationError("policy: probability table has wrong size");
    for (int s = 0; s < pi.num_states; ++s) {
        double row = 0.0;
        for (int a = 0; a < pi.num_actions; ++a) {
            double p = pi.prob(s, a);
            if (p < 0.0) throw ValidationError("policy: negative probability");
            row += p;
        }
        if (std::abs(row - 1.0) > 1e-9)
            throw ValidationError("policy: row " + std::to_string(s) + " sums to " +
                                  std::to_string(row));
    }
}

double reward(const FeatureSet& feats, int s, int a, const RewardWeights& theta) {
    if ((int)theta.theta.size() != feats.count())
        throw ConfigError("reward: theta dimension does not match feature count");
    auto phi = feats.at(s, a);
    double r = 0.0;
    for (int k = 0; k < feats.count(); ++k) r += theta.theta[k] * phi[k];
    return r;
}

std::vector<double> reward_table(const Mdp& mdp, const FeatureSet& feats,
                                 const RewardWeights& theta) {
    if (feats.num_states() != mdp.num_states() || feats.num_actions() != mdp.num_actions)
        throw ConfigError("reward_table: feature table does not match the mdp");
    std::vector<double> r((size_t)mdp.num_states() * mdp.num_actions);
    for (int s = 0; s < mdp.num_states(); ++s)
        for (int a = 0; a < mdp.num_actions; ++a)
            r[(size_t)s * mdp.num_actions + a] = reward(feats, s, a, theta);
    return r;
}

namespace {

void check_reward_size(const Mdp& mdp, std::span<const double> reward_sa) {
    if (reward_sa.size() != (size_t)mdp.num_states() * mdp.num_actions)
        throw ConfigError("reward table size does not match the mdp");
}

// Residual threshold that guarantees sup-norm distance `tol` to the true
// fixed point of a discount-contraction: ||V_k - V*|| <= gamma/(1-gamma) * residual.
double residual_bound(double tol, double gamma) { return tol * (1.0 - gamma) / gamma; }

} // namespace

PlanResult value_iteration(const Mdp& mdp, std::span<const double> reward_sa, double tolerance) {
    validate_mdp(mdp);
    check_reward_size(mdp, reward_sa);
    const int S = mdp.num_states();
    const int A = mdp.num_actions;
    const double gamma = mdp.discount;
    const double stop = residual_bound(tolerance, gamma);

    ValueFunction v(S, 0.0), nv(S, 0.0);
    for (;;) {
        double residual = 0.0;
        for (int s = 0; s < S; ++s) {
            double best = NEG_INF;
            for (int a = 0; a < A; ++a) {
                double q = reward_sa[(size_t)s * A + a];
                for (int t = 0; t < S; ++t) {
                    double p = mdp.trans(s, a, t);
                    if (p > 0.0) q += gamma * p * v[t];
                }
                if (q > best) best = q;
            }
            nv[s] = best;
            residual = std::max(residual, std::abs(nv[s] - v[s]));
        }
        v.swap(nv);
        if (residual <= stop) break;
    }

    Policy greedy{S, A, std::vector<double>((size_t)S * A, 0.0)};
    for (int s = 0; s < S; ++s) {
        int best_a = 0;
        double best = NEG_INF;
        for (int a = 0; a < A; ++a) {
            double q = reward_sa[(size_t)s * A + a];
            for (int t = 0; t < S; ++t) {
                double p = mdp.trans(s, a, t);
                if (p > 0.0) q += gamma * p * v[t];
            }
            if (q > best + 1e-12) { // strict improvement keeps the lowest index on ties
                best = q;
                best_a = a;
            }
        }
        greedy.probs[(size_t)s * A + best_a] = 1.0;
    }
    return {std::move(v), std::move(greedy)};
}

ValueFunction evaluate_policy(const Mdp& mdp, const Policy& pi, std::span<const double> reward_sa,
                              double tolerance) {
    validate_mdp(mdp);
    validate_policy(pi, mdp);
    check_reward_size(mdp, reward_sa);
    const int S = mdp.num_states();
    const int A = mdp.num_actions;
    const double gamma = mdp.discount;
    const double stop = residual_bound(tolerance, gamma);

    ValueFunction v(S, 0.0), nv(S, 0.0);
    for (;;) {
        double residual = 0.0;
        for (int s = 0; s < S; ++s) {
            double val = 0.0;
            for (int a = 0; a < A; ++a) {
                double pa = pi.prob(s, a);
                if (pa == 0.0) continue;
                double q = reward_sa[(size_t)s * A + a];
                for (int t = 0; t < S; ++t) {
                    double p = mdp.trans(s, a, t);
                    if (p > 0.0) q += gamma * p * v[t];
                }
                val += pa * q;
            }
            nv[s] = val;
            residual = std::max(residual, std::abs(nv[s] - v[s]));
        }
        v.swap(nv);
        if (residual <= stop) break;
    }
    return v;
}

std::vector<double> q_from_values(const Mdp& mdp, std::span<const double> reward_sa,
                                  const ValueFunction& values) {
    check_reward_size(mdp, reward_sa);
    const int S = mdp.num_states();
    const int A = mdp.num_actions;
    std::vector<double> q((size_t)S * A, 0.0);
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) {
            double x = reward_sa[(size_t)s * A + a];
            for (int t = 0; t < S; ++t) {
                double p = mdp.trans(s, a, t);
                if (p > 0.0) x += mdp.discount * p * values[t];
            }
            q[(size_t)s * A + a] = x;
        }
    return q;
}

Policy boltzmann_policy(const Mdp& mdp, std::span<const double> reward_sa, double beta) {
    if (beta < 0.0) throw ConfigError("boltzmann_policy: beta must be nonnegative");
    auto plan = value_iteration(mdp, reward_sa);
    auto q = q_from_values(mdp, reward_sa, plan.values);
    const int S = mdp.num_states();
    const int A = mdp.num_actions;
    Policy pi{S, A, std::vector<double>((size_t)S * A, 0.0)};
    std::vector<double> lw(A);
    for (int s = 0; s < S; ++s) {
        for (int a = 0; a < A; ++a) lw[a] = beta * q[(size_t)s * A + a];
        double lz = logsumexp(lw);
        for (int a = 0; a < A; ++a) pi.probs[(size_t)s * A + a] = std::exp(lw[a] - lz);
    }
    return pi;
}

const char* norm_name(Norm n) {
    switch (n) {
    case Norm::L1: return "L1";
    case Norm::L2: return "L2";
    default: return "Linf";
    }
}

double ile(std::span<const double> v_learned, std::span<const double> v_expert, Norm n) {
    if (v_learned.size() != v_expert.size())
        throw ConfigError("ile: value function lengths differ");
    double acc = 0.0;
    for (size_t i = 0; i < v_learned.size(); ++i) {
        double d = std::abs(v_learned[i] - v_expert[i]);
        switch (n) {
        case Norm::L1: acc += d; break;
        case Norm::L2: acc += d * d; break;
        case Norm::LInf: acc = std::max(acc, d); break;
        }
    }
    return n == Norm::L2 ? std::sqrt(acc) : acc;
}

} // namespace rirl
