#pragma once

#include <cstdint>
#include <span>

#include "rirl/em.hpp"

namespace rirl {

// Hard decode: independently per step, the (s,a) pair maximizing the
// observation likelihood. Ties break to the lowest (state, action) index and
// no dynamics repair is applied — the decoded sequence may be infeasible,
// which is exactly the weakness the posterior methods exist to fix.
Trajectory most_likely_trajectory(const ObservationSequence& omega, const HiddenMdp& hm);

struct MltResult {
    std::vector<Trajectory> decoded; // one hard decode per evidence sequence
    MaxEntSolution solution;
};

// Decode every sequence, then run the plain maximum-entropy solver on the
// decoded demonstrations as if they were noiseless.
MltResult mlt_irl(std::span<const ObservationSequence> omegas, const HiddenMdp& hm,
                  const MaxEntOptions& opts = {});

// Uninformed intruder baseline: a uniformly random waiting time in
// [0, max_wait] epochs before dashing.
double random_attack(double max_wait, uint64_t seed);

} // namespace rirl
