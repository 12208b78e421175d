#include "rirl/baselines.hpp"

namespace rirl {

Trajectory most_likely_trajectory(const ObservationSequence& omega, const HiddenMdp& hm) {
    const int A = hm.mdp.num_actions;
    Trajectory T;
    T.steps.reserve(omega.epochs.size());
    for (const StepObservation& o : omega.epochs) {
        auto lw = step_log_likelihood(o, hm.obs);
        int best = 0;
        double best_w = lw[0];
        for (size_t sa = 1; sa < lw.size(); ++sa)
            if (lw[sa] > best_w) { // strict: ties stay at the lowest index
                best_w = lw[sa];
                best = (int)sa;
            }
        T.steps.push_back({best / A, best % A});
    }
    return T;
}

MltResult mlt_irl(std::span<const ObservationSequence> omegas, const HiddenMdp& hm,
                  const MaxEntOptions& opts) {
    if (omegas.empty()) throw ConfigError("mlt_irl: no observation sequences");
    MltResult out;
    out.decoded.reserve(omegas.size());
    for (const auto& om : omegas) out.decoded.push_back(most_likely_trajectory(om, hm));
    auto phi = empirical_feature_expectation(out.decoded, hm.feats);
    out.solution = solve_maxent(phi, hm.mdp, hm.feats, opts);
    return out;
}

double random_attack(double max_wait, uint64_t seed) {
    if (max_wait < 0.0) throw ConfigError("random_attack: negative wait bound");
    Rng rng(seed);
    return rng.uniform(0.0, max_wait);
}

} // namespace rirl
