#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rirl/em.hpp"

namespace rirl {

// ---------------------------------------------------------------------------
// Declarative world description: scalar keys plus an ASCII grid.
//   '#' wall            '.' open floor (intruder only)
//   '=' patrol lane     'P' patroller start (a patrol-lane cell)
//   'L' listener / intruder start (open floor)
//   'G' goal (open floor; required by the penetration domain)
// Keys appear before the literal line "layout:", one `key = value` per line;
// everything after it is the grid.
// ---------------------------------------------------------------------------

struct ParsedConfig {
    std::map<std::string, std::string> values;
    std::vector<std::string> layout;
};

ParsedConfig parse_config_text(const std::string& text);
ParsedConfig load_config_file(const std::string& path);

// Every key can be overridden from the environment: key `epoch_duration`
// reads RIRL_EPOCH_DURATION when set.
void apply_env_overrides(ParsedConfig& cfg, const std::string& prefix = "RIRL_");

// Sorted key=value lines plus the layout block; the fingerprint every output
// file carries in its header.
std::string canonical_config_text(const ParsedConfig& cfg);
uint64_t config_hash(const ParsedConfig& cfg);

enum class DomainKind { DroneCorridor, PatrolPenetration };

const char* domain_name(DomainKind d);

struct ViewGeometry {
    double range_cells = 3.0;
    double half_angle_deg = 45.0;
};

struct WorldConfig {
    DomainKind domain = DomainKind::DroneCorridor;
    double cell_size = 1.0; // meters
    double epoch_duration = 1.0;
    double samples_per_second = 20.0;
    double sample_window_min_fraction = 0.3;
    double source_strength = 1.0;
    double source_offset = 0.2; // acoustic source sits this far ahead of the cell center
    double intensity_ceiling = 1e6;
    double likelihood_sigma = 1.0;
    ViewGeometry view;
    Heading learner_heading = Heading::North;
    int horizon = 12;
    double discount = 0.95;
    double beta = 5.0;
    std::vector<double> theta_true = {1.0, -0.1};
    SensorKind sensor = SensorKind::SoundOnly;
    std::vector<std::string> layout;
};

WorldConfig world_config_from(const ParsedConfig& cfg);

// A fully built simulation world: the patroller's MDP and features, the
// observation geometry, and the grid bookkeeping the trials need.
struct World {
    WorldConfig cfg;
    std::vector<std::string> grid;
    int rows = 0;
    int cols = 0;

    Mdp mdp;          // the watched agent's decision process
    FeatureSet feats; // {moved-forward, turned-around}
    RewardWeights theta_true;
    std::vector<Heading> headings; // heading alphabet of this domain
    std::vector<std::string> action_names;
    int forward_action = 0;
    int turn_action = 0;

    Vec2 listener;
    int listener_cell = -1; // flat r*cols + c
    int goal_cell = -1;
    int start_cell = -1;    // patroller start
    bool has_vision = false;
    std::vector<uint8_t> walkable; // per flat cell, intruder movement
    std::vector<int> state_of_cell_heading; // [flat*4 + heading] -> state or -1

    bool wall(int r, int c) const;
    Vec2 cell_center(int flat) const;
    int flat(int r, int c) const { return r * cols + c; }

    // forward field-of-view test with wall occlusion
    bool sees(int from_flat, Heading h, int target_flat, const ViewGeometry& g) const;

    // per-state mask: which patroller states the learner's fixed post can see
    std::vector<uint8_t> learner_view_mask() const;

    MotionSegment segment_of(int s, int a) const;
    ObservationModel observation_model(SensorKind kind) const;
    HiddenMdp hidden(SensorKind kind) const;
};

World build_drone_domain(const WorldConfig& cfg);
World build_patrol_domain(const WorldConfig& cfg);
World build_world(const WorldConfig& cfg); // dispatch on cfg.domain

// Seeded rollout of a stochastic policy from the MDP's start distribution;
// returns horizon+1 state-action pairs.
Trajectory simulate_expert(const Mdp& mdp, const Policy& pi, uint64_t seed);

// Microphone (and in the penetration domain, camera) record of a trajectory.
// Each epoch samples the true motion inside a random window of at least the
// configured fraction of the epoch, perturbs intensities with sigma_noise,
// and fits the reciprocal curve.
ObservationSequence generate_observations(const Trajectory& T, const World& world,
                                          double sigma_noise, uint64_t seed);

struct Episode {
    Trajectory truth;
    ObservationSequence omega;
    uint64_t seed = 0;
};

Episode make_episode(const World& world, const Policy& expert, double sigma_noise, uint64_t seed);

void write_episode_csv(std::ostream& os, const Episode& ep, uint64_t config_fingerprint);
Episode read_episode_csv(std::istream& is);

// BFS step counts to target_cell across intruder-walkable cells; -1 where
// unreachable. Index is the flat cell id.
std::vector<int> walk_distances(const World& w, int target_cell);

enum class TrialOutcome { Success, Spotted, Timeout };

const char* trial_outcome_name(TrialOutcome o);

struct PlannerOptions {
    double risk = 0.05;     // move only when predicted spotting odds stay below this
    int epoch_budget = 200;
    bool patroller_absent = false; // diagnostic mode: nobody watches
};

// Infiltration with a learned model of the patroller: the intruder tracks a
// belief over patroller states, advances it one epoch per turn with the
// predicted policy, corrects it with its own line of sight, and steps along
// the shortest path only when the predicted risk of the next cell is low.
TrialOutcome penetration_trial(const World& world, const Policy& predicted_patroller,
                               const PlannerOptions& opts, uint64_t seed);

// Dash after a uniformly random wait, ignoring the patroller entirely.
TrialOutcome random_attack_trial(const World& world, double max_wait, const PlannerOptions& opts,
                                 uint64_t seed);

} // namespace rirl
