#pragma once

#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "rirl/baselines.hpp"
#include "rirl/world.hpp"

namespace rirl {

// The contenders every study compares. The three robust variants differ only
// in which sensor channel the E step believes.
enum class Method { RobustIrl, RobustIrlSound, RobustIrlVision, Mlt, RandomAttack };

const char* method_name(Method m);
Method method_from_name(const std::string& name);

// "0..9" ranges and comma lists, mixed freely: "0..3,7,11..12".
std::vector<uint64_t> parse_seeds(const std::string& raw);

// Study knobs parsed from the same file as the world; every key has a
// default so a bare world file still runs.
struct ExperimentConfig {
    std::vector<double> noise_levels = {0.0, 0.05, 0.1, 0.2};
    std::vector<uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    int episodes = 5; // evidence sequences per inference
    std::vector<Method> sweep_methods = {Method::RobustIrl, Method::Mlt};
    std::vector<Method> attack_methods = {Method::RobustIrl, Method::RandomAttack};
    EmOptions em;
    Norm ile_norm = Norm::L2;
    double attack_sigma = 0.05;      // recording noise for the attack study's training data
    double convergence_sigma = 0.05; // same, for the threshold study
    // Sampler tolerances the threshold study sweeps, loosest to tightest.
    std::vector<double> convergence_epsilons = {0.2, 0.1, 0.05, 0.01};
    int trials = 20;        // penetration attempts per (method, seed)
    double max_wait = 40.0; // random-attack waiting cap, epochs
    PlannerOptions planner;
};

ExperimentConfig experiment_config_from(const ParsedConfig& raw, const WorldConfig& world);

// One output record. Unused fields serialize as empty columns: sentinel -1
// for counters, NaN for measurements. A cell whose learner threw is still a
// row: outcome "error", measurements empty. `wall_time` (seconds) is the one
// column exempt from bit-reproducibility.
struct ResultRow {
    std::string study;
    std::string domain;
    std::string method;
    std::string sensor;
    std::string estep;
    std::string outcome;
    double noise = 0.0;
    double epsilon = std::numeric_limits<double>::quiet_NaN(); // threshold-study sampler tolerance
    uint64_t seed = 0;
    int trial = -1;
    int episodes = -1;
    double ile = std::numeric_limits<double>::quiet_NaN();
    double loglik = std::numeric_limits<double>::quiet_NaN();
    double theta0 = std::numeric_limits<double>::quiet_NaN();
    double theta1 = std::numeric_limits<double>::quiet_NaN();
    int em_iterations = -1;
    int converged = -1;
    double wall_time = std::numeric_limits<double>::quiet_NaN();
    int success = -1;
};

// Results files are headed by `# schema=rirl.results.v2` and
// `# config_hash=<hex>`; a reader passing a nonzero hash rejects files born
// from a different configuration.
std::vector<ResultRow> read_results_csv(const std::string& path, uint64_t expect_hash);

// Seeded evidence: one expert rollout plus its recording per episode, all
// derived from (seed, noise) so every method sees identical data.
std::vector<ObservationSequence> make_dataset(const World& world, double noise, int episodes,
                                              uint64_t seed);

// || V(pi_hat) - V* || where pi_hat is the soft-optimal policy at the learned
// reward and both values are measured under the true reward; the score every
// sweep row carries.
double ile_against_truth(const World& world, const RewardWeights& learned, Norm n);

struct LearnOutcome {
    RewardWeights theta;
    Policy policy; // Boltzmann at the learned reward
    int iterations = 0;
    bool converged = true;
    EstepMethod estep = EstepMethod::Exact;
    EmTrace trace;
    double wall_time = 0.0; // seconds spent learning
};

// Runs one learning method on a prepared dataset. RandomAttack does not
// learn and is rejected here.
LearnOutcome learn_once(const World& world, Method m,
                        std::span<const ObservationSequence> data,
                        const ExperimentConfig& exp, uint64_t seed);

struct RunOptions {
    std::string out_csv;
    int workers = 1;
};

// Each study appends to out_csv and skips tasks the file already holds, so
// an interrupted run resumes instead of recomputing. Rows are emitted in
// task order regardless of worker count: byte-identical output for a given
// config and seed set (wall_time excepted). A cell whose learner throws is
// recorded as an error row and the study continues; the return value is the
// number of such cells (0 = clean).
//
// run_convergence_study re-runs the full learner at each sampler tolerance
// in convergence_epsilons, once with the sound channel alone and once with
// the configured fused channel, recording score and wall time per cell.
int run_noise_sweep(const World& world, const ExperimentConfig& exp, const ParsedConfig& raw,
                    const RunOptions& run, std::ostream& log);
int run_success_rate(const World& world, const ExperimentConfig& exp, const ParsedConfig& raw,
                     const RunOptions& run, std::ostream& log);
int run_convergence_study(const World& world, const ExperimentConfig& exp, const ParsedConfig& raw,
                          const RunOptions& run, std::ostream& log);

// Standalone SVG charts (one per study present in the file) under out_dir.
// An empty results file is a ValidationError.
void emit_plots(const std::string& csv_path, const std::string& out_dir, std::ostream& log);

// Aggregates: mean scores, paired permutation p-values between methods,
// rank correlation of score against noise.
void write_report(std::span<const ResultRow> rows, std::ostream& os);

} // namespace rirl
