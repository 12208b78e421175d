#include "rirl/world.hpp"

#include "rirl/baselines.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <queue>
#include <sstream>

namespace rirl {

namespace {

int sample_categorical(Rng& rng, std::span<const double> probs) {
    double u = rng.uniform01();
    double acc = 0.0;
    int last = -1;
    for (size_t i = 0; i < probs.size(); ++i) {
        if (probs[i] <= 0.0) continue;
        acc += probs[i];
        last = static_cast<int>(i);
        if (u < acc) return last;
    }
    return last; // rounding slack lands on the final positive entry
}

std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

Trajectory simulate_expert(const Mdp& mdp, const Policy& pi, uint64_t seed) {
    Rng rng(seed);
    Trajectory T;
    T.steps.reserve(static_cast<size_t>(mdp.horizon) + 1);
    int s = sample_categorical(rng, mdp.start);
    if (s < 0) throw ValidationError("start distribution has no mass");
    for (int t = 0; t <= mdp.horizon; ++t) {
        int a = sample_categorical(rng, pi.row(s));
        if (a < 0) throw ValidationError("policy row has no mass at state " + std::to_string(s));
        T.steps.push_back({s, a});
        if (t < mdp.horizon) {
            const double* row = &mdp.transition[mdp.tindex(s, a, 0)];
            s = sample_categorical(rng, {row, mdp.states.size()});
        }
    }
    return T;
}

ObservationSequence generate_observations(const Trajectory& T, const World& world,
                                          double sigma_noise, uint64_t seed) {
    const WorldConfig& cfg = world.cfg;
    ObservationSequence omega;
    omega.epochs.reserve(T.steps.size());
    Rng win(derive_seed(seed, "window"));
    Rng cam(derive_seed(seed, "sighting"));

    std::vector<int> in_view_states;
    if (world.has_vision) {
        auto mask = world.learner_view_mask();
        for (size_t s = 0; s < mask.size(); ++s)
            if (mask[s]) in_view_states.push_back(static_cast<int>(s));
    }
    const int A = world.mdp.num_actions;

    for (size_t t = 0; t < T.steps.size(); ++t) {
        const auto [s, a] = T.steps[t];
        MotionSegment seg = world.segment_of(s, a);

        // record only part of each epoch: a random window no shorter than the
        // configured fraction
        double D = cfg.epoch_duration;
        double fmin = cfg.sample_window_min_fraction;
        double w0 = win.uniform(0.0, (1.0 - fmin) * D);
        double w1 = win.uniform(w0 + fmin * D, D);

        bool clamped = false;
        auto clean = sample_intensity(seg, world.listener, cfg.source_strength, w0, w1,
                                      cfg.samples_per_second, cfg.intensity_ceiling, &clamped);
        auto noisy = add_noise(clean, sigma_noise, derive_seed(seed, "mic", t));
        StepObservation obs;
        obs.sound = fit_epoch(noisy);
        obs.sound.clamped = obs.sound.clamped || clamped;

        if (world.has_vision && !in_view_states.empty() &&
            world.sees(world.listener_cell, cfg.learner_heading, world.mdp.states[s].cell, cfg.view)) {
            // mostly truthful sighting; confusion lands on some other visible pair
            double correct = world.observation_model(cfg.sensor).vision_correct_prob;
            int V = static_cast<int>(in_view_states.size()) * A;
            int truth = s * A + a;
            int reported = truth;
            if (V > 1 && cam.uniform01() >= correct) {
                int pick = cam.uniform_int(V - 1);
                for (int vs : in_view_states) {
                    bool done = false;
                    for (int va = 0; va < A; ++va) {
                        int pair = vs * A + va;
                        if (pair == truth) continue;
                        if (pick == 0) { reported = pair; done = true; break; }
                        --pick;
                    }
                    if (done) break;
                }
            }
            obs.vision = RangeReading{reported / A, reported % A};
        }
        omega.epochs.push_back(std::move(obs));
    }
    return omega;
}

Episode make_episode(const World& world, const Policy& expert, double sigma_noise, uint64_t seed) {
    Episode ep;
    ep.seed = seed;
    ep.truth = simulate_expert(world.mdp, expert, derive_seed(seed, "walk"));
    ep.omega = generate_observations(ep.truth, world, sigma_noise, derive_seed(seed, "record"));
    return ep;
}

// --- episode serialization ---------------------------------------------------

void write_episode_csv(std::ostream& os, const Episode& ep, uint64_t config_fingerprint) {
    char hex[32];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(config_fingerprint));
    os << "# schema=rirl.episode.v1\n";
    os << "# config_hash=" << hex << "\n";
    os << "# seed=" << ep.seed << "\n";
    os << "record,t,state,action,a,b,c,residual,samples,rejected,low_rank,clamped,seen_state,seen_action\n";
    for (size_t t = 0; t < ep.truth.steps.size(); ++t) {
        const auto& st = ep.truth.steps[t];
        const StepObservation& o = ep.omega.epochs.at(t);
        os << "step," << t << ',' << st.state << ',' << st.action << ',' << g17(o.sound.a) << ','
           << g17(o.sound.b) << ',' << g17(o.sound.c) << ',' << g17(o.sound.fit_residual) << ','
           << o.sound.sample_count << ',' << o.sound.rejected << ',' << (o.sound.low_rank ? 1 : 0)
           << ',' << (o.sound.clamped ? 1 : 0) << ',';
        if (o.vision) os << o.vision->state << ',' << o.vision->action;
        else os << ',';
        os << '\n';
    }
}

Episode read_episode_csv(std::istream& is) {
    Episode ep;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            const std::string key = "# seed=";
            if (line.rfind(key, 0) == 0) ep.seed = std::stoull(line.substr(key.size()));
            continue;
        }
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string item;
        while (std::getline(ss, item, ',')) f.push_back(item);
        while (f.size() < 14) f.push_back(""); // trailing empties drop off getline
        if (f[0] != "step") continue; // header row
        Step st{std::stoi(f[2]), std::stoi(f[3])};
        StepObservation o;
        o.sound.a = std::stod(f[4]);
        o.sound.b = std::stod(f[5]);
        o.sound.c = std::stod(f[6]);
        o.sound.fit_residual = std::stod(f[7]);
        o.sound.sample_count = std::stoi(f[8]);
        o.sound.rejected = std::stoi(f[9]);
        o.sound.low_rank = f[10] == "1";
        o.sound.clamped = f[11] == "1";
        if (!f[12].empty()) o.vision = RangeReading{std::stoi(f[12]), std::stoi(f[13])};
        ep.truth.steps.push_back(st);
        ep.omega.epochs.push_back(std::move(o));
    }
    if (ep.truth.steps.empty()) throw ValidationError("episode file has no step rows");
    return ep;
}

// --- infiltration trials -----------------------------------------------------

std::vector<int> walk_distances(const World& w, int target_cell) {
    std::vector<int> dist(w.walkable.size(), -1);
    if (target_cell < 0 || static_cast<size_t>(target_cell) >= dist.size() ||
        !w.walkable[static_cast<size_t>(target_cell)])
        return dist;
    std::queue<int> q;
    dist[static_cast<size_t>(target_cell)] = 0;
    q.push(target_cell);
    while (!q.empty()) {
        int f = q.front();
        q.pop();
        int r = f / w.cols, c = f % w.cols;
        const int dr[] = {-1, 1, 0, 0}, dc[] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
            int nr = r + dr[k], nc = c + dc[k];
            if (nr < 0 || nr >= w.rows || nc < 0 || nc >= w.cols) continue;
            int nf = nr * w.cols + nc;
            if (!w.walkable[static_cast<size_t>(nf)] || dist[static_cast<size_t>(nf)] >= 0) continue;
            dist[static_cast<size_t>(nf)] = dist[static_cast<size_t>(f)] + 1;
            q.push(nf);
        }
    }
    return dist;
}

namespace {

// next cell on a shortest path toward the goal; lowest flat id on ties
int next_hop(const World& w, const std::vector<int>& dist, int cell) {
    int d = dist[static_cast<size_t>(cell)];
    if (d <= 0) return cell;
    int r = cell / w.cols, c = cell % w.cols;
    const int dr[] = {-1, 1, 0, 0}, dc[] = {0, 0, -1, 1};
    int best = cell;
    for (int k = 0; k < 4; ++k) {
        int nr = r + dr[k], nc = c + dc[k];
        if (nr < 0 || nr >= w.rows || nc < 0 || nc >= w.cols) continue;
        int nf = nr * w.cols + nc;
        if (!w.walkable[static_cast<size_t>(nf)] || dist[static_cast<size_t>(nf)] != d - 1) continue;
        if (best == cell || nf < best) best = nf;
    }
    return best;
}

Heading heading_of_move(const World& w, int from, int to) {
    int dr = to / w.cols - from / w.cols;
    int dc = to % w.cols - from % w.cols;
    if (dr < 0) return Heading::North;
    if (dr > 0) return Heading::South;
    if (dc < 0) return Heading::West;
    return Heading::East;
}

struct TrialState {
    const World& w;
    std::vector<int> dist;       // walk distances to the goal
    int learner;                 // flat cell
    Heading learner_heading;
    int patroller;               // state id
    Rng rng;

    TrialState(const World& world, uint64_t seed)
        : w(world), dist(walk_distances(world, world.goal_cell)), learner(world.listener_cell),
          learner_heading(world.cfg.learner_heading), patroller(-1), rng(seed) {
        if (w.goal_cell < 0) throw ConfigError("penetration trial needs a 'G' goal in the layout");
        if (dist[static_cast<size_t>(learner)] < 0)
            throw ConfigError("goal is unreachable from the listener cell");
        for (size_t s = 0; s < w.mdp.start.size(); ++s)
            if (w.mdp.start[s] > 0) { patroller = static_cast<int>(s); break; }
    }

    bool patroller_sees_learner() const {
        const State& st = w.mdp.states[static_cast<size_t>(patroller)];
        return w.sees(st.cell, st.heading, learner, w.cfg.view);
    }

    void advance_patroller(const Policy& pi_true) {
        int a = sample_categorical(rng, pi_true.row(patroller));
        const double* row = &w.mdp.transition[w.mdp.tindex(patroller, a, 0)];
        patroller = sample_categorical(rng, {row, w.mdp.states.size()});
    }

    void move_learner_to(int cell) {
        if (cell != learner) learner_heading = heading_of_move(w, learner, cell);
        learner = cell;
    }
};

} // namespace

TrialOutcome penetration_trial(const World& world, const Policy& predicted_patroller,
                               const PlannerOptions& opts, uint64_t seed) {
    TrialState tr(world, derive_seed(seed, "trial"));
    if (opts.patroller_absent) {
        // diagnostic: empty building, walk straight in
        for (int e = 0; e < opts.epoch_budget; ++e) {
            if (tr.learner == world.goal_cell) return TrialOutcome::Success;
            tr.move_learner_to(next_hop(world, tr.dist, tr.learner));
        }
        return tr.learner == world.goal_cell ? TrialOutcome::Success : TrialOutcome::Timeout;
    }

    Policy pi_true = boltzmann_policy(world.mdp, reward_table(world.mdp, world.feats, world.theta_true),
                                      world.cfg.beta);
    const size_t S = world.mdp.states.size();
    std::vector<double> belief = world.mdp.start;
    std::vector<double> predicted(S, 0.0);

    // caught on the doorstep: the start cell may already be watched
    if (tr.patroller_sees_learner()) return TrialOutcome::Spotted;

    for (int e = 0; e < opts.epoch_budget; ++e) {
        // push the belief one epoch forward under the learned model
        std::fill(predicted.begin(), predicted.end(), 0.0);
        for (size_t s = 0; s < S; ++s) {
            if (belief[s] <= 0.0) continue;
            for (int a = 0; a < world.mdp.num_actions; ++a) {
                double pa = belief[s] * predicted_patroller.prob(static_cast<int>(s), a);
                if (pa <= 0.0) continue;
                const double* row = &world.mdp.transition[world.mdp.tindex(static_cast<int>(s), a, 0)];
                for (size_t n = 0; n < S; ++n)
                    if (row[n] > 0.0) predicted[n] += pa * row[n];
            }
        }
        belief = predicted;

        // both sides move
        tr.advance_patroller(pi_true);
        int hop = next_hop(world, tr.dist, tr.learner);
        if (hop != tr.learner) {
            double risk = 0.0;
            for (size_t s = 0; s < S; ++s) {
                if (belief[s] <= 0.0) continue;
                const State& st = world.mdp.states[s];
                if (world.sees(st.cell, st.heading, hop, world.cfg.view)) risk += belief[s];
            }
            if (risk < opts.risk) tr.move_learner_to(hop);
        }

        if (tr.patroller_sees_learner()) return TrialOutcome::Spotted;
        if (tr.learner == world.goal_cell) return TrialOutcome::Success;

        // fold the learner's own line of sight back into the belief
        const State& truth = world.mdp.states[static_cast<size_t>(tr.patroller)];
        if (world.sees(tr.learner, tr.learner_heading, truth.cell, world.cfg.view)) {
            std::fill(belief.begin(), belief.end(), 0.0);
            belief[static_cast<size_t>(tr.patroller)] = 1.0;
        } else {
            double kept = 0.0;
            for (size_t s = 0; s < S; ++s) {
                const State& st = world.mdp.states[s];
                if (world.sees(tr.learner, tr.learner_heading, st.cell, world.cfg.view))
                    belief[s] = 0.0;
                kept += belief[s];
            }
            if (kept > 0.0)
                for (double& b : belief) b /= kept;
            else // contradictory sight lines; fall back to total uncertainty
                std::fill(belief.begin(), belief.end(), 1.0 / static_cast<double>(S));
        }
    }
    return TrialOutcome::Timeout;
}

TrialOutcome random_attack_trial(const World& world, double max_wait, const PlannerOptions& opts,
                                 uint64_t seed) {
    TrialState tr(world, derive_seed(seed, "trial"));
    Policy pi_true = boltzmann_policy(world.mdp, reward_table(world.mdp, world.feats, world.theta_true),
                                      world.cfg.beta);
    int wait = static_cast<int>(std::floor(random_attack(max_wait, derive_seed(seed, "wait"))));

    if (tr.patroller_sees_learner()) return TrialOutcome::Spotted;
    for (int e = 0; e < opts.epoch_budget; ++e) {
        tr.advance_patroller(pi_true);
        if (e >= wait) tr.move_learner_to(next_hop(world, tr.dist, tr.learner));
        if (tr.patroller_sees_learner()) return TrialOutcome::Spotted;
        if (tr.learner == world.goal_cell) return TrialOutcome::Success;
    }
    return TrialOutcome::Timeout;
}

const char* trial_outcome_name(TrialOutcome o) {
    switch (o) {
    case TrialOutcome::Success: return "success";
    case TrialOutcome::Spotted: return "spotted";
    case TrialOutcome::Timeout: return "timeout";
    }
    return "?";
}

} // namespace rirl
