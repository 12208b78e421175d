#include "rirl/maxent.hpp"

#include <algorithm>
#include <cmath>

namespace rirl {

std::vector<double> feature_count(const Trajectory& T, const FeatureSet& feats) {
    std::vector<double> counts(feats.count(), 0.0);
    for (const Step& st : T.steps) {
        auto phi = feats.at(st.state, st.action);
        for (int k = 0; k < feats.count(); ++k) counts[k] += phi[k];
    }
    return counts;
}

std::vector<double> empirical_feature_expectation(std::span<const Trajectory> demos,
                                                  const FeatureSet& feats) {
    if (demos.empty()) throw ConfigError("empirical_feature_expectation: no demonstrations");
    std::vector<double> acc(feats.count(), 0.0);
    for (const Trajectory& T : demos) {
        auto c = feature_count(T, feats);
        for (int k = 0; k < feats.count(); ++k) acc[k] += c[k];
    }
    for (double& x : acc) x /= (double)demos.size();
    return acc;
}

double log10_assignment_bound(const Mdp& mdp) {
    return (mdp.horizon + 1) *
           (std::log10((double)mdp.num_states()) + std::log10((double)mdp.num_actions));
}

void check_enumeration_cap(const Mdp& mdp, double cap, const char* advice) {
    if (cap <= 0.0) throw ConfigError("enumeration cap must be positive");
    if (log10_assignment_bound(mdp) > std::log10(cap))
        throw CapacityError(std::string("trajectory space exceeds the enumeration cap; ") +
                            advice);
}

void for_each_feasible_trajectory(const Mdp& mdp,
                                  const std::function<void(const Trajectory&)>& fn) {
    validate_mdp(mdp);
    const int A = mdp.num_actions;
    const int L = mdp.horizon;
    auto succ = successor_table(mdp);

    Trajectory T;
    T.steps.resize(L + 1);

    // depth-first over start support, actions, and transition support
    std::function<void(int, int)> rec = [&](int t, int s) {
        for (int a = 0; a < A; ++a) {
            T.steps[t] = {s, a};
            if (t == L) {
                fn(T);
            } else {
                for (int nxt : succ[(size_t)s * A + a]) rec(t + 1, nxt);
            }
        }
    };
    for (int s0 = 0; s0 < mdp.num_states(); ++s0)
        if (mdp.start[s0] > 0.0) rec(0, s0);
}

namespace {

struct SoftStats {
    double log_z = NEG_INF;
    std::vector<double> expectation; // empty unless requested
};

// Soft forward-backward over the horizon. Every feasible trajectory carries
// weight exp(theta . counts); transitions and the start distribution only
// define the support, they do not weight it.
SoftStats recursion_stats(const Mdp& mdp, const RewardWeights& theta, const FeatureSet& feats,
                          bool want_expectation) {
    validate_mdp(mdp);
    const int S = mdp.num_states();
    const int A = mdp.num_actions;
    const int L = mdp.horizon;
    const int K = feats.count();
    if ((int)theta.theta.size() != K)
        throw ConfigError("model_feature_expectation: theta dimension mismatch");
    auto succ = successor_table(mdp);

    std::vector<double> logw((size_t)S * A);
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) {
            auto phi = feats.at(s, a);
            double x = 0.0;
            for (int k = 0; k < K; ++k) x += theta.theta[k] * phi[k];
            logw[(size_t)s * A + a] = x;
        }

    // beta[t][s]: log sum of weights of all completions starting at state s
    // at step t, inclusive of step t's own factor.
    std::vector<std::vector<double>> beta(L + 1, std::vector<double>(S, NEG_INF));
    std::vector<double> tmp(A);
    for (int s = 0; s < S; ++s) {
        for (int a = 0; a < A; ++a) tmp[a] = logw[(size_t)s * A + a];
        beta[L][s] = logsumexp(tmp);
    }
    for (int t = L - 1; t >= 0; --t) {
        for (int s = 0; s < S; ++s) {
            for (int a = 0; a < A; ++a) {
                double tail = NEG_INF;
                for (int nxt : succ[(size_t)s * A + a]) tail = log_add(tail, beta[t + 1][nxt]);
                tmp[a] = logw[(size_t)s * A + a] + tail;
            }
            beta[t][s] = logsumexp(tmp);
        }
    }

    double log_z = NEG_INF;
    for (int s = 0; s < S; ++s)
        if (mdp.start[s] > 0.0) log_z = log_add(log_z, beta[0][s]);

    SoftStats out;
    out.log_z = log_z;
    if (!want_expectation) return out;

    // alpha[s]: log sum of prefix weights arriving at state s before step t's
    // factor is applied.
    std::vector<double> alpha(S, NEG_INF), nalpha(S);
    for (int s = 0; s < S; ++s)
        if (mdp.start[s] > 0.0) alpha[s] = 0.0;

    out.expectation.assign(K, 0.0);
    for (int t = 0; t <= L; ++t) {
        std::fill(nalpha.begin(), nalpha.end(), NEG_INF);
        for (int s = 0; s < S; ++s) {
            if (alpha[s] == NEG_INF) continue;
            for (int a = 0; a < A; ++a) {
                double head = alpha[s] + logw[(size_t)s * A + a];
                double tail = 0.0;
                if (t < L) {
                    tail = NEG_INF;
                    for (int nxt : succ[(size_t)s * A + a]) tail = log_add(tail, beta[t + 1][nxt]);
                }
                double marginal = std::exp(head + tail - log_z);
                if (marginal > 0.0) {
                    auto phi = feats.at(s, a);
                    for (int k = 0; k < K; ++k) out.expectation[k] += marginal * phi[k];
                }
                if (t < L)
                    for (int nxt : succ[(size_t)s * A + a]) nalpha[nxt] = log_add(nalpha[nxt], head);
            }
        }
        alpha.swap(nalpha);
    }
    return out;
}

SoftStats enumeration_stats(const Mdp& mdp, const RewardWeights& theta, const FeatureSet& feats,
                            double cap, bool want_expectation) {
    check_enumeration_cap(mdp, cap, "use ExpectationMethod::VisitationFrequency");
    const int K = feats.count();
    if ((int)theta.theta.size() != K)
        throw ConfigError("model_feature_expectation: theta dimension mismatch");

    // online logsumexp with rescaling so weights never overflow
    double max_lw = NEG_INF, denom = 0.0;
    std::vector<double> numer(K, 0.0);
    for_each_feasible_trajectory(mdp, [&](const Trajectory& T) {
        auto counts = feature_count(T, feats);
        double lw = 0.0;
        for (int k = 0; k < K; ++k) lw += theta.theta[k] * counts[k];
        if (lw > max_lw) {
            double scale = (max_lw == NEG_INF) ? 0.0 : std::exp(max_lw - lw);
            denom *= scale;
            for (double& n : numer) n *= scale;
            max_lw = lw;
        }
        double w = std::exp(lw - max_lw);
        denom += w;
        for (int k = 0; k < K; ++k) numer[k] += w * counts[k];
    });
    if (denom == 0.0) throw ValidationError("model: no feasible trajectory has positive weight");

    SoftStats out;
    out.log_z = max_lw + std::log(denom);
    if (want_expectation) {
        out.expectation.resize(K);
        for (int k = 0; k < K; ++k) out.expectation[k] = numer[k] / denom;
    }
    return out;
}

SoftStats stats(const Mdp& mdp, const RewardWeights& theta, const FeatureSet& feats,
                ExpectationMethod method, double cap, bool want_expectation) {
    return method == ExpectationMethod::Enumerate
               ? enumeration_stats(mdp, theta, feats, cap, want_expectation)
               : recursion_stats(mdp, theta, feats, want_expectation);
}

} // namespace

double log_partition(const Mdp& mdp, const RewardWeights& theta, const FeatureSet& feats,
                     ExpectationMethod method, double enumeration_cap) {
    return stats(mdp, theta, feats, method, enumeration_cap, false).log_z;
}

double trajectory_prob(const Trajectory& T, const RewardWeights& theta, const FeatureSet& feats,
                       double log_partition_value) {
    auto counts = feature_count(T, feats);
    if (theta.theta.size() != counts.size())
        throw ConfigError("trajectory_prob: theta dimension mismatch");
    double lw = 0.0;
    for (size_t k = 0; k < counts.size(); ++k) lw += theta.theta[k] * counts[k];
    return std::exp(lw - log_partition_value);
}

std::vector<double> model_feature_expectation(const Mdp& mdp, const RewardWeights& theta,
                                              const FeatureSet& feats, ExpectationMethod method,
                                              double enumeration_cap) {
    return stats(mdp, theta, feats, method, enumeration_cap, true).expectation;
}

std::vector<double> dual_gradient(const Mdp& mdp, const RewardWeights& theta,
                                  const FeatureSet& feats, std::span<const double> phi_hat,
                                  ExpectationMethod method, double enumeration_cap) {
    if ((int)phi_hat.size() != feats.count())
        throw ConfigError("dual_gradient: phi_hat dimension mismatch");
    auto g = model_feature_expectation(mdp, theta, feats, method, enumeration_cap);
    for (size_t k = 0; k < g.size(); ++k) g[k] -= phi_hat[k];
    return g;
}

MaxEntSolution solve_maxent(std::span<const double> phi_hat, const Mdp& mdp,
                            const FeatureSet& feats, const MaxEntOptions& opts) {
    const int K = feats.count();
    if ((int)phi_hat.size() != K) throw ConfigError("solve_maxent: phi_hat dimension mismatch");
    const double count_max = (double)(mdp.horizon + 1);
    for (double x : phi_hat)
        if (x < -1e-9 || x > count_max + 1e-9)
            throw ValidationError("solve_maxent: target expectation outside [0, L+1]");

    RewardWeights theta;
    theta.theta = opts.initial_theta ? *opts.initial_theta : std::vector<double>(K, 0.0);
    if ((int)theta.theta.size() != K)
        throw ConfigError("solve_maxent: initial theta dimension mismatch");

    auto dual_of = [&](const RewardWeights& th) {
        double d = log_partition(mdp, th, feats, opts.method, opts.enumeration_cap);
        for (int k = 0; k < K; ++k) d -= th.theta[k] * phi_hat[k];
        return d;
    };
    auto grad_of = [&](const RewardWeights& th) {
        return dual_gradient(mdp, th, feats, phi_hat, opts.method, opts.enumeration_cap);
    };

    // signed exponentiated-gradient weights, rebased after each accepted step
    // so neither half grows without bound
    std::vector<double> u(K), w(K);
    auto rebase = [&]() {
        for (int k = 0; k < K; ++k) {
            u[k] = std::max(theta.theta[k], 0.0) + 1.0;
            w[k] = u[k] - theta.theta[k];
        }
    };
    rebase();

    double dual = dual_of(theta);
    if (!std::isfinite(dual))
        throw DivergenceError("solve_maxent: non-finite dual at the initial point", theta.theta);
    auto grad = grad_of(theta);

    MaxEntSolution sol;
    double eta = opts.step_start;
    int iter = 0;
    double gnorm = linf_norm(grad);
    while (iter < opts.max_iterations && gnorm > opts.tolerance) {
        ++iter;
        RewardWeights cand;
        cand.theta.resize(K);
        for (int k = 0; k < K; ++k) {
            double step = std::exp(-eta * grad[k]);
            cand.theta[k] = u[k] * step - w[k] / step;
        }
        double cand_dual = dual_of(cand);
        if (!std::isfinite(cand_dual))
            throw DivergenceError("solve_maxent: non-finite dual value", theta.theta);
        if (cand_dual > dual) {
            if (eta <= opts.step_floor) break; // no descent direction left at the floor
            eta = std::max(eta * 0.5, opts.step_floor);
            continue;
        }
        theta = std::move(cand);
        dual = cand_dual;
        rebase();
        grad = grad_of(theta);
        gnorm = linf_norm(grad);
    }

    sol.theta = std::move(theta);
    sol.dual_value = dual;
    sol.grad_norm = gnorm;
    sol.iterations = iter;
    sol.converged = gnorm <= opts.tolerance;
    return sol;
}

} // namespace rirl
