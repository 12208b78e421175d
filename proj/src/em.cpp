#include "rirl/em.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

namespace rirl {

const char* estep_method_name(EstepMethod m) {
    return m == EstepMethod::Exact ? "exact" : "gibbs";
}

StepLogLik loglik_table(const ObservationSequence& omega, const ObservationModel& model) {
    StepLogLik table;
    table.reserve(omega.epochs.size());
    for (const StepObservation& o : omega.epochs) table.push_back(step_log_likelihood(o, model));
    return table;
}

double log_traj_prior(const Trajectory& T, const Mdp& mdp, const Policy& pi) {
    if ((int)T.steps.size() != mdp.horizon + 1)
        throw ConfigError("traj_prior: trajectory length does not match the horizon");
    auto lp = [](double p) { return p > 0.0 ? std::log(p) : NEG_INF; };
    double acc = lp(mdp.start[T.steps[0].state]);
    for (size_t t = 0; t < T.steps.size(); ++t) {
        acc += lp(pi.prob(T.steps[t].state, T.steps[t].action));
        if (t + 1 < T.steps.size())
            acc += lp(mdp.trans(T.steps[t].state, T.steps[t].action, T.steps[t + 1].state));
    }
    return acc;
}

double traj_prior(const Trajectory& T, const HiddenMdp& hm, const Policy& pi) {
    return std::exp(log_traj_prior(T, hm.mdp, pi));
}

namespace {

double log_obs_from_table(const StepLogLik& table, const Trajectory& T, int num_actions) {
    if (table.size() != T.steps.size())
        throw ConfigError("obs_given_traj: observation length does not match the trajectory");
    double acc = 0.0;
    for (size_t t = 0; t < T.steps.size(); ++t)
        acc += table[t][(size_t)T.steps[t].state * num_actions + T.steps[t].action];
    return acc;
}

void check_table(const StepLogLik& table, const Mdp& mdp) {
    if ((int)table.size() != mdp.horizon + 1)
        throw ConfigError("likelihood table length does not match the horizon");
    for (const auto& row : table)
        if ((int)row.size() != mdp.num_states() * mdp.num_actions)
            throw ConfigError("likelihood table row does not match the state-action space");
}

} // namespace

double log_obs_given_traj(const ObservationSequence& omega, const Trajectory& T,
                          const HiddenMdp& hm) {
    return log_obs_from_table(loglik_table(omega, hm.obs), T, hm.mdp.num_actions);
}

double obs_given_traj(const ObservationSequence& omega, const Trajectory& T,
                      const HiddenMdp& hm) {
    return std::exp(log_obs_given_traj(omega, T, hm));
}

namespace {

// One enumeration pass over the feasible set: running log-evidence plus the
// posterior feature-count expectation, kept stable by max-rescaling.
struct PosteriorAccumulator {
    double max_lw = NEG_INF;
    double denom = 0.0;
    std::vector<double> numer;

    explicit PosteriorAccumulator(int K) : numer(K, 0.0) {}

    void add(double lw, std::span<const double> counts) {
        if (lw == NEG_INF) return;
        if (lw > max_lw) {
            double scale = (max_lw == NEG_INF) ? 0.0 : std::exp(max_lw - lw);
            denom *= scale;
            for (double& n : numer) n *= scale;
            max_lw = lw;
        }
        double w = std::exp(lw - max_lw);
        denom += w;
        for (size_t k = 0; k < numer.size(); ++k) numer[k] += w * counts[k];
    }

    bool empty() const { return denom == 0.0; }
    double log_evidence() const { return max_lw + std::log(denom); }
    std::vector<double> expectation() const {
        std::vector<double> e(numer);
        for (double& x : e) x /= denom;
        return e;
    }
};

PosteriorAccumulator enumerate_posterior(const StepLogLik& table, const Mdp& mdp,
                                         const FeatureSet& feats, const Policy& pi) {
    PosteriorAccumulator acc(feats.count());
    const int A = mdp.num_actions;
    for_each_feasible_trajectory(mdp, [&](const Trajectory& T) {
        double lw = log_traj_prior(T, mdp, pi);
        if (lw == NEG_INF) return;
        lw += log_obs_from_table(table, T, A);
        if (lw == NEG_INF) return;
        acc.add(lw, feature_count(T, feats));
    });
    return acc;
}

} // namespace

double posterior(const Trajectory& T, const ObservationSequence& omega, const HiddenMdp& hm,
                 const Policy& pi, double enumeration_cap) {
    check_enumeration_cap(hm.mdp, enumeration_cap, "use gibbs_estep");
    auto table = loglik_table(omega, hm.obs);
    check_table(table, hm.mdp);
    auto acc = enumerate_posterior(table, hm.mdp, hm.feats, pi);
    if (acc.empty())
        throw DegenerateEvidenceError("posterior: evidence has zero mass on every trajectory", 0);
    double lj = log_traj_prior(T, hm.mdp, pi);
    if (lj == NEG_INF) return 0.0;
    lj += log_obs_from_table(table, T, hm.mdp.num_actions);
    return std::exp(lj - acc.log_evidence());
}

EstepResult exact_estep(std::span<const StepLogLik> tables, const Mdp& mdp,
                        const FeatureSet& feats, const Policy& pi, double enumeration_cap) {
    if (tables.empty()) throw ConfigError("exact_estep: no observation sequences");
    check_enumeration_cap(mdp, enumeration_cap, "use gibbs_estep");
    EstepResult out;
    out.method = EstepMethod::Exact;
    out.phi.assign(feats.count(), 0.0);
    for (size_t i = 0; i < tables.size(); ++i) {
        check_table(tables[i], mdp);
        auto acc = enumerate_posterior(tables[i], mdp, feats, pi);
        if (acc.empty())
            throw DegenerateEvidenceError(
                "exact_estep: evidence sequence " + std::to_string(i) +
                    " has zero mass on every trajectory",
                (int)i);
        auto e = acc.expectation();
        for (int k = 0; k < feats.count(); ++k) out.phi[k] += e[k];
    }
    for (double& x : out.phi) x /= (double)tables.size();
    return out;
}

EstepResult exact_estep(std::span<const ObservationSequence> omegas, const HiddenMdp& hm,
                        const Policy& pi, double enumeration_cap) {
    std::vector<StepLogLik> tables;
    tables.reserve(omegas.size());
    for (const auto& om : omegas) tables.push_back(loglik_table(om, hm.obs));
    return exact_estep(tables, hm.mdp, hm.feats, pi, enumeration_cap);
}

namespace {

struct LogTables {
    std::vector<double> log_trans; // [s][a][s']
    std::vector<double> log_start;
    std::vector<double> log_pi;
    std::vector<std::vector<int>> succ;
};

LogTables build_log_tables(const Mdp& mdp, const Policy& pi) {
    auto lp = [](double p) { return p > 0.0 ? std::log(p) : NEG_INF; };
    LogTables t;
    t.log_trans.resize(mdp.transition.size());
    for (size_t i = 0; i < mdp.transition.size(); ++i) t.log_trans[i] = lp(mdp.transition[i]);
    t.log_start.resize(mdp.start.size());
    for (size_t i = 0; i < mdp.start.size(); ++i) t.log_start[i] = lp(mdp.start[i]);
    t.log_pi.resize(pi.probs.size());
    for (size_t i = 0; i < pi.probs.size(); ++i) t.log_pi[i] = lp(pi.probs[i]);
    t.succ = successor_table(mdp);
    return t;
}

// Deterministic starting point: the stepwise argmax of likelihood times
// policy, walked forward and repaired to dynamics feasibility wherever the
// argmax broke a transition.
Trajectory init_chain(const StepLogLik& table, const Mdp& mdp, const LogTables& lt) {
    const int S = mdp.num_states();
    const int A = mdp.num_actions;
    const int L = mdp.horizon;
    Trajectory T;
    T.steps.resize(L + 1);
    for (int t = 0; t <= L; ++t) {
        int best = 0;
        double best_w = NEG_INF;
        for (int sa = 0; sa < S * A; ++sa) {
            double w = table[t][sa] + lt.log_pi[sa];
            if (w > best_w) {
                best_w = w;
                best = sa;
            }
        }
        T.steps[t] = {best / A, best % A};
    }
    for (int t = 0; t <= L; ++t) {
        bool feasible = t == 0 ? mdp.start[T.steps[0].state] > 0.0
                               : mdp.trans(T.steps[t - 1].state, T.steps[t - 1].action,
                                           T.steps[t].state) > 0.0;
        if (feasible) continue;
        int best_s = 0, best_a = 0;
        double best_w = NEG_INF;
        if (t == 0) {
            for (int s = 0; s < S; ++s) {
                if (mdp.start[s] <= 0.0) continue;
                for (int a = 0; a < A; ++a) {
                    double w = lt.log_start[s] + lt.log_pi[(size_t)s * A + a];
                    if (w > best_w) {
                        best_w = w;
                        best_s = s;
                        best_a = a;
                    }
                }
            }
        } else {
            const Step prev = T.steps[t - 1];
            for (int s : lt.succ[(size_t)prev.state * A + prev.action]) {
                for (int a = 0; a < A; ++a) {
                    double w = lt.log_trans[mdp.tindex(prev.state, prev.action, s)] +
                               lt.log_pi[(size_t)s * A + a];
                    if (w > best_w) {
                        best_w = w;
                        best_s = s;
                        best_a = a;
                    }
                }
            }
        }
        T.steps[t] = {best_s, best_a};
    }
    return T;
}

struct Chain {
    Trajectory T;
    Rng rng;
    std::vector<double> sum;
    long records = 0;
};

// Resample the joint node (s,a)_t from its conditional given the rest.
void resample_node(Chain& ch, int t, const StepLogLik& table, const Mdp& mdp,
                   const LogTables& lt, std::vector<double>& wbuf, std::vector<int>& sbuf) {
    const int A = mdp.num_actions;
    const int L = mdp.horizon;
    wbuf.clear();
    sbuf.clear();

    auto push_candidates = [&](int s, double incoming) {
        for (int a = 0; a < A; ++a) {
            double w = incoming + lt.log_pi[(size_t)s * A + a] + table[t][(size_t)s * A + a];
            if (t < L && w > NEG_INF)
                w += lt.log_trans[mdp.tindex(s, a, ch.T.steps[t + 1].state)];
            wbuf.push_back(w);
            sbuf.push_back(s * A + a);
        }
    };

    if (t == 0) {
        for (int s = 0; s < mdp.num_states(); ++s)
            if (mdp.start[s] > 0.0) push_candidates(s, lt.log_start[s]);
    } else {
        const Step prev = ch.T.steps[t - 1];
        for (int s : lt.succ[(size_t)prev.state * A + prev.action])
            push_candidates(s, lt.log_trans[mdp.tindex(prev.state, prev.action, s)]);
    }

    int pick = ch.rng.sample_log_weights(wbuf);
    if (pick < 0) return; // conditional carries no mass; keep the current node
    ch.T.steps[t] = {sbuf[pick] / A, sbuf[pick] % A};
}

void sweep(Chain& ch, const StepLogLik& table, const Mdp& mdp, const LogTables& lt,
           std::vector<double>& wbuf, std::vector<int>& sbuf) {
    const int n = mdp.horizon + 1;
    for (int i = 0; i < n; ++i)
        resample_node(ch, ch.rng.uniform_int(n), table, mdp, lt, wbuf, sbuf);
}

} // namespace

EstepResult gibbs_estep(std::span<const StepLogLik> tables, const Mdp& mdp,
                        const FeatureSet& feats, const Policy& pi, const GibbsOptions& opts) {
    if (tables.empty()) throw ConfigError("gibbs_estep: no observation sequences");
    if (opts.epsilon <= 0.0) throw ConfigError("gibbs_estep: epsilon must be positive");
    validate_mdp(mdp);
    validate_policy(pi, mdp);
    const int K = feats.count();
    auto lt = build_log_tables(mdp, pi);

    std::vector<Chain> chains;
    chains.reserve(tables.size());
    for (size_t i = 0; i < tables.size(); ++i) {
        check_table(tables[i], mdp);
        chains.push_back(Chain{init_chain(tables[i], mdp, lt),
                               Rng(derive_seed(opts.seed, "chain", i)),
                               std::vector<double>(K, 0.0), 0});
    }

    std::vector<double> wbuf;
    std::vector<int> sbuf;
    wbuf.reserve((size_t)mdp.num_states() * mdp.num_actions);
    sbuf.reserve(wbuf.capacity());

    for (size_t i = 0; i < chains.size(); ++i)
        for (int s = 0; s < opts.burn_in_sweeps; ++s)
            sweep(chains[i], tables[i], mdp, lt, wbuf, sbuf);

    EstepResult out;
    out.method = EstepMethod::Gibbs;
    long sweeps_done = opts.burn_in_sweeps;
    std::vector<double> prev_phi;
    std::vector<double> phi(K, 0.0);
    bool have_prev = false;

    for (;;) {
        for (size_t i = 0; i < chains.size(); ++i) {
            Chain& ch = chains[i];
            for (int r = 0; r < opts.block_samples; ++r) {
                for (int s = 0; s < opts.thinning; ++s) sweep(ch, tables[i], mdp, lt, wbuf, sbuf);
                auto counts = feature_count(ch.T, feats);
                for (int k = 0; k < K; ++k) ch.sum[k] += counts[k];
                ++ch.records;
            }
        }
        sweeps_done += (long)opts.block_samples * opts.thinning;

        std::fill(phi.begin(), phi.end(), 0.0);
        for (const Chain& ch : chains)
            for (int k = 0; k < K; ++k) phi[k] += ch.sum[k] / (double)ch.records;
        for (double& x : phi) x /= (double)chains.size();

        if (have_prev) {
            out.convergence_delta = linf_diff(phi, prev_phi);
            if (out.convergence_delta < opts.epsilon) {
                out.converged = true;
                break;
            }
        }
        prev_phi = phi;
        have_prev = true;
        if (sweeps_done >= opts.max_sweeps) {
            out.converged = false;
            break;
        }
    }

    out.phi = phi;
    for (const Chain& ch : chains) out.effective_samples += (int)ch.records;
    return out;
}

EstepResult gibbs_estep(std::span<const ObservationSequence> omegas, const HiddenMdp& hm,
                        const Policy& pi, const GibbsOptions& opts) {
    std::vector<StepLogLik> tables;
    tables.reserve(omegas.size());
    for (const auto& om : omegas) tables.push_back(loglik_table(om, hm.obs));
    return gibbs_estep(tables, hm.mdp, hm.feats, pi, opts);
}

MaxEntSolution mstep(std::span<const double> phi, const HiddenMdp& hm, const MaxEntOptions& opts) {
    return solve_maxent(phi, hm.mdp, hm.feats, opts);
}

double observed_loglik(std::span<const ObservationSequence> omegas, const HiddenMdp& hm,
                       const Policy& pi, double enumeration_cap) {
    if (omegas.empty()) throw ConfigError("observed_loglik: no observation sequences");
    check_enumeration_cap(hm.mdp, enumeration_cap, "loglik tracking needs an enumerable instance");
    double acc = 0.0;
    for (size_t i = 0; i < omegas.size(); ++i) {
        auto table = loglik_table(omegas[i], hm.obs);
        check_table(table, hm.mdp);
        auto post = enumerate_posterior(table, hm.mdp, hm.feats, pi);
        if (post.empty())
            throw DegenerateEvidenceError("observed_loglik: evidence sequence " +
                                              std::to_string(i) + " has zero mass",
                                          (int)i);
        acc += post.log_evidence();
    }
    return acc / (double)omegas.size();
}

EmResult robust_irl(std::span<const ObservationSequence> omegas, const HiddenMdp& hm,
                    const EmOptions& opts) {
    if (omegas.empty()) throw ConfigError("robust_irl: no observation sequences");
    validate_mdp(hm.mdp);
    const int K = hm.feats.count();
    for (size_t i = 0; i < omegas.size(); ++i)
        if ((int)omegas[i].epochs.size() != hm.mdp.horizon + 1)
            throw ConfigError("robust_irl: observation sequence " + std::to_string(i) +
                              " does not match the horizon");

    std::vector<StepLogLik> tables;
    tables.reserve(omegas.size());
    for (const auto& om : omegas) tables.push_back(loglik_table(om, hm.obs));

    EstepMethod method;
    if (opts.force_method)
        method = *opts.force_method;
    else
        method = log10_assignment_bound(hm.mdp) <= std::log10(opts.enumeration_cap)
                     ? EstepMethod::Exact
                     : EstepMethod::Gibbs;

    Rng init_rng(derive_seed(opts.seed, "theta_init"));
    RewardWeights theta;
    theta.theta.resize(K);
    for (int k = 0; k < K; ++k) theta.theta[k] = init_rng.uniform(-1.0, 1.0);

    auto policy_at = [&](const RewardWeights& th) {
        return boltzmann_policy(hm.mdp, reward_table(hm.mdp, hm.feats, th), opts.beta);
    };
    Policy pi = policy_at(theta);

    EmResult result;
    auto t_start = std::chrono::steady_clock::now();
    std::vector<double> prev_phi;
    double prev_ll = std::numeric_limits<double>::quiet_NaN();
    double last_dual = 0.0;

    int iter = 0;
    while (iter < opts.max_iterations) {
        ++iter;
        EstepResult es;
        if (method == EstepMethod::Exact) {
            es = exact_estep(tables, hm.mdp, hm.feats, pi, opts.enumeration_cap);
        } else {
            GibbsOptions go = opts.gibbs;
            go.seed = derive_seed(opts.seed, "gibbs", (uint64_t)iter);
            es = gibbs_estep(tables, hm.mdp, hm.feats, pi, go);
        }

        double ll = std::numeric_limits<double>::quiet_NaN();
        if (opts.track_loglik) {
            ll = observed_loglik(omegas, hm, pi, opts.enumeration_cap);
            if (!std::isnan(prev_ll) && ll < prev_ll - 1e-6) ++result.trace.loglik_decreases;
            prev_ll = ll;
        }

        if (!prev_phi.empty() && linf_diff(es.phi, prev_phi) < opts.em_epsilon) {
            result.converged = true;
            break;
        }
        prev_phi = es.phi;

        MaxEntOptions mo = opts.solver;
        mo.initial_theta = theta.theta; // warm start from the current iterate
        auto sol = mstep(es.phi, hm, mo);
        theta = sol.theta;
        last_dual = sol.dual_value;
        pi = policy_at(theta);

        EmIterationRecord rec;
        rec.iteration = iter;
        rec.theta = theta.theta;
        rec.phi = es.phi;
        rec.dual_value = last_dual;
        rec.estep_method = es.method;
        rec.estep_converged = es.converged;
        rec.observed_loglik = ll;
        rec.elapsed_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        result.trace.records.push_back(std::move(rec));
    }

    result.theta = theta;
    result.policy = pi;
    result.iterations = iter;
    return result;
}

void write_trace_csv(std::ostream& os, const EmTrace& trace) {
    if (trace.records.empty()) return;
    const size_t K = trace.records.front().theta.size();
    os << "iteration";
    for (size_t k = 0; k < K; ++k) os << ",theta_" << k;
    for (size_t k = 0; k < trace.records.front().phi.size(); ++k) os << ",phi_" << k;
    os << ",dual_value,estep_method,estep_converged,observed_loglik,elapsed_seconds\n";
    char buf[64];
    auto num = [&](double x) {
        std::snprintf(buf, sizeof buf, "%.17g", x);
        return std::string(buf);
    };
    for (const auto& r : trace.records) {
        os << r.iteration;
        for (double x : r.theta) os << ',' << num(x);
        for (double x : r.phi) os << ',' << num(x);
        os << ',' << num(r.dual_value) << ',' << estep_method_name(r.estep_method) << ','
           << (r.estep_converged ? 1 : 0) << ',' << num(r.observed_loglik) << ','
           << num(r.elapsed_seconds) << '\n';
    }
}

} // namespace rirl
