#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <set>
#include <sstream>

#include "rirl/world.hpp"

using namespace rirl;

namespace {

const char* DRONE_TEXT =
    "domain = drone_corridor\n"
    "source_strength = 1.0\n"
    "likelihood_sigma = 0.25\n"
    "horizon = 3\n"
    "theta_true = 1.0, -0.1\n"
    "layout:\n"
    "#####\n"
    "#P==#\n"
    "#.L.#\n"
    "#####\n";

// an L-shaped lane, a walled goal pocket opening south, and the intruder
// entry on the bottom row
const char* PATROL_TEXT =
    "domain = patrol_penetration\n"
    "source_strength = 9.0\n"
    "likelihood_sigma = 0.25\n"
    "horizon = 6\n"
    "sensor = fused\n"
    "learner_heading = N\n"
    "layout:\n"
    "#######\n"
    "#P====#\n"
    "#.###=#\n"
    "#.#G#=#\n"
    "#.#.#=#\n"
    "#L....#\n"
    "#######\n";

World drone() { return build_world(world_config_from(parse_config_text(DRONE_TEXT))); }
World patrol() { return build_world(world_config_from(parse_config_text(PATROL_TEXT))); }

int state_at(const World& w, int r, int c, Heading h) {
    int s = w.state_of_cell_heading[(size_t)w.flat(r, c) * 4 + (int)h];
    REQUIRE(s >= 0);
    return s;
}

} // namespace

TEST_CASE("config text splits keys from the layout block") {
    auto cfg = parse_config_text("a = 1\n# comment\nb = two words \n\nlayout:\n##\n#P\n");
    CHECK(cfg.values.at("a") == "1");
    CHECK(cfg.values.at("b") == "two words");
    CHECK(cfg.values.size() == 2);
    REQUIRE(cfg.layout.size() == 2);
    CHECK(cfg.layout[0] == "##");
    CHECK(cfg.layout[1] == "#P");

    CHECK_THROWS_AS(parse_config_text("a = 1\na = 2\nlayout:\n#\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("just some words\n"), ConfigError);
}

TEST_CASE("environment variables override file values") {
    auto cfg = parse_config_text("beta = 5\nlayout:\n#\n");
    ::setenv("RIRL_BETA", "2.5", 1);
    ::setenv("RIRL_EXTRA_KEY", "7", 1);
    apply_env_overrides(cfg);
    ::unsetenv("RIRL_BETA");
    ::unsetenv("RIRL_EXTRA_KEY");
    CHECK(cfg.values.at("beta") == "2.5");
    CHECK(cfg.values.at("extra_key") == "7");
}

TEST_CASE("config fingerprint ignores key order and tracks content") {
    auto a = parse_config_text("x = 1\ny = 2\nlayout:\n#P\n");
    auto b = parse_config_text("y = 2\nx = 1\nlayout:\n#P\n");
    CHECK(canonical_config_text(a) == canonical_config_text(b));
    CHECK(config_hash(a) == config_hash(b));

    auto c = parse_config_text("x = 1\ny = 3\nlayout:\n#P\n");
    CHECK(config_hash(a) != config_hash(c));
    auto d = parse_config_text("x = 1\ny = 2\nlayout:\n##\n#P\n");
    CHECK(config_hash(a) != config_hash(d));
}

TEST_CASE("scalar validation rejects out-of-range settings") {
    auto base = parse_config_text(DRONE_TEXT);
    auto with = [&](const std::string& k, const std::string& v) {
        auto c = base;
        c.values[k] = v;
        return c;
    };
    CHECK_THROWS_AS(world_config_from(with("domain", "flying_saucer")), ConfigError);
    CHECK_THROWS_AS(world_config_from(with("likelihood_sigma", "0")), ConfigError);
    CHECK_THROWS_AS(world_config_from(with("source_offset", "0.5")), ConfigError);
    CHECK_THROWS_AS(world_config_from(with("source_offset", "-0.1")), ConfigError);
    CHECK_THROWS_AS(world_config_from(with("sample_window_min_fraction", "1.5")), ConfigError);
    CHECK_THROWS_AS(world_config_from(with("horizon", "0")), ConfigError);
    CHECK_THROWS_AS(world_config_from(with("discount", "1.0")), ConfigError);
    CHECK_THROWS_AS(world_config_from(with("sensor", "telepathy")), ConfigError);
    CHECK_THROWS_AS(world_config_from(with("horizon", "banana")), ConfigError);

    auto no_layout = parse_config_text("domain = drone_corridor\nlayout:\n");
    CHECK_THROWS_AS(world_config_from(no_layout), ConfigError);
}

TEST_CASE("corridor world wires states, actions, and the listener") {
    World w = drone();
    CHECK(w.mdp.num_states() == 6); // three lane cells, two headings
    CHECK(w.mdp.num_actions == 3);
    CHECK(w.action_names == std::vector<std::string>{"forward", "turn_around", "hover"});
    CHECK(w.forward_action == 0);
    CHECK(w.turn_action == 1);
    CHECK(!w.has_vision);
    CHECK(w.listener.x == doctest::Approx(2.5));
    CHECK(w.listener.y == doctest::Approx(2.5));
    CHECK(w.goal_cell == -1);

    // the patroller wakes at P facing the open run of the lane
    int start = state_at(w, 1, 1, Heading::East);
    CHECK(w.mdp.start[start] == doctest::Approx(1.0));
    double total = 0.0;
    for (double p : w.mdp.start) total += p;
    CHECK(total == doctest::Approx(1.0));
}

TEST_CASE("motion intent dominates each transition row at 0.9") {
    World w = drone();
    int fwd = w.forward_action, trn = w.turn_action, hov = 2;
    int west_e = state_at(w, 1, 1, Heading::East);
    int mid_e = state_at(w, 1, 2, Heading::East);
    int west_w = state_at(w, 1, 1, Heading::West);
    int east_e = state_at(w, 1, 3, Heading::East);
    int east_w = state_at(w, 1, 3, Heading::West);

    // open cell: forward advances, the two off-intents stay split 0.05 each
    CHECK(w.mdp.trans(west_e, fwd, mid_e) == doctest::Approx(0.9));
    CHECK(w.mdp.trans(west_e, fwd, west_w) == doctest::Approx(0.05));
    CHECK(w.mdp.trans(west_e, fwd, west_e) == doctest::Approx(0.05));

    CHECK(w.mdp.trans(west_e, trn, west_w) == doctest::Approx(0.9));
    CHECK(w.mdp.trans(west_e, trn, mid_e) == doctest::Approx(0.05));
    CHECK(w.mdp.trans(west_e, trn, west_e) == doctest::Approx(0.05));

    CHECK(w.mdp.trans(west_e, hov, west_e) == doctest::Approx(0.9));
    CHECK(w.mdp.trans(west_e, hov, mid_e) == doctest::Approx(0.05));
    CHECK(w.mdp.trans(west_e, hov, west_w) == doctest::Approx(0.05));

    // blocked forward collapses onto staying put: 0.9 + hover's 0.05
    CHECK(w.mdp.trans(east_e, fwd, east_e) == doctest::Approx(0.95));
    CHECK(w.mdp.trans(east_e, fwd, east_w) == doctest::Approx(0.05));
}

TEST_CASE("features flag productive advances and about-faces only") {
    World w = drone();
    int west_e = state_at(w, 1, 1, Heading::East);
    int east_e = state_at(w, 1, 3, Heading::East);
    auto f_open = w.feats.at(west_e, w.forward_action);
    CHECK(f_open[0] == 1.0);
    CHECK(f_open[1] == 0.0);
    auto f_blocked = w.feats.at(east_e, w.forward_action);
    CHECK(f_blocked[0] == 0.0); // pushing a wall is not progress
    auto f_turn = w.feats.at(west_e, w.turn_action);
    CHECK(f_turn[0] == 0.0);
    CHECK(f_turn[1] == 1.0);
    auto f_hover = w.feats.at(west_e, 2);
    CHECK(f_hover[0] == 0.0);
    CHECK(f_hover[1] == 0.0);
    CHECK(w.theta_true.theta == std::vector<double>{1.0, -0.1});
}

TEST_CASE("sound geometry rides the heading with the configured offset") {
    World w = drone();
    int west_e = state_at(w, 1, 1, Heading::East);
    auto seg = w.segment_of(west_e, w.forward_action);
    CHECK(seg.p0.x == doctest::Approx(1.7)); // center 1.5 plus 0.2 east
    CHECK(seg.p0.y == doctest::Approx(1.5));
    CHECK(seg.v.x == doctest::Approx(1.0)); // one cell per epoch
    CHECK(seg.v.y == doctest::Approx(0.0));

    // an about-face slides the source to the opposite offset
    auto turn = w.segment_of(west_e, w.turn_action);
    CHECK(turn.v.x == doctest::Approx(-0.4));
    CHECK(turn.v.y == doctest::Approx(0.0));

    // hovering keeps it still
    auto hov = w.segment_of(west_e, 2);
    CHECK(hov.v.x == doctest::Approx(0.0));
    CHECK(hov.v.y == doctest::Approx(0.0));

    // blocked forward: the intent is to stay, so no net motion
    int east_e = state_at(w, 1, 3, Heading::East);
    auto blocked = w.segment_of(east_e, w.forward_action);
    CHECK(blocked.v.x == doctest::Approx(0.0));
}

TEST_CASE("patrol world turns left through the compass") {
    World w = patrol();
    CHECK(w.mdp.num_states() == 32); // eight lane cells, four headings
    CHECK(w.action_names == std::vector<std::string>{"turn_left", "forward", "noop"});
    CHECK(w.forward_action == 1);
    CHECK(w.turn_action == 0);
    CHECK(w.has_vision);
    CHECK(w.goal_cell == w.flat(3, 3));
    CHECK(w.listener_cell == w.flat(5, 1));

    // start: north is walled, east runs along the lane
    int start = state_at(w, 1, 1, Heading::East);
    CHECK(w.mdp.start[start] == doctest::Approx(1.0));

    // left turns cycle N -> W -> S -> E -> N
    int n = state_at(w, 1, 2, Heading::North);
    int wst = state_at(w, 1, 2, Heading::West);
    int s = state_at(w, 1, 2, Heading::South);
    int e = state_at(w, 1, 2, Heading::East);
    CHECK(w.mdp.trans(n, w.turn_action, wst) == doctest::Approx(0.9));
    CHECK(w.mdp.trans(wst, w.turn_action, s) == doctest::Approx(0.9));
    CHECK(w.mdp.trans(s, w.turn_action, e) == doctest::Approx(0.9));
    CHECK(w.mdp.trans(e, w.turn_action, n) == doctest::Approx(0.9));

    // forward off the lane is blocked even when the floor continues
    int south_facing = state_at(w, 1, 1, Heading::South);
    CHECK(w.mdp.trans(south_facing, w.forward_action, south_facing) == doctest::Approx(0.95));
}

TEST_CASE("line of sight respects range, cone, and walls") {
    World w = patrol();
    ViewGeometry g; // 3 cells, 45 degrees

    int post = w.listener_cell; // (5,1) facing configured North
    CHECK(w.sees(post, Heading::North, w.flat(4, 1), g));
    CHECK(w.sees(post, Heading::North, w.flat(3, 1), g));
    CHECK(w.sees(post, Heading::North, w.flat(2, 1), g));
    CHECK(!w.sees(post, Heading::North, w.flat(1, 1), g));   // one cell too far
    CHECK(!w.sees(post, Heading::North, w.flat(5, 3), g));   // due east: outside the cone
    CHECK(!w.sees(post, Heading::North, w.flat(3, 3), g));   // pocket wall blocks it
    CHECK(w.sees(post, Heading::East, w.flat(5, 3), g));     // same cell, different facing
    CHECK(w.sees(post, Heading::North, post, g));            // own cell is always seen

    // the state mask mirrors cell visibility for every heading
    auto mask = w.learner_view_mask();
    REQUIRE(mask.size() == (size_t)w.mdp.num_states());
    for (int st = 0; st < w.mdp.num_states(); ++st) {
        bool cell_seen = w.sees(post, w.cfg.learner_heading, w.mdp.states[st].cell, w.cfg.view);
        CHECK((mask[st] != 0) == cell_seen);
    }
}

TEST_CASE("expert rollouts are feasible, seeded, and full length") {
    World w = drone();
    Policy pi = boltzmann_policy(w.mdp, reward_table(w.mdp, w.feats, w.theta_true), w.cfg.beta);
    auto a = simulate_expert(w.mdp, pi, 42);
    auto b = simulate_expert(w.mdp, pi, 42);
    CHECK(a == b);

    // under a diffuse policy different seeds must explore different walks
    Policy flat = boltzmann_policy(w.mdp, reward_table(w.mdp, w.feats, w.theta_true), 0.0);
    bool spread = false;
    auto first = simulate_expert(w.mdp, flat, 0);
    for (uint64_t s = 1; s < 6 && !spread; ++s)
        spread = !(simulate_expert(w.mdp, flat, s) == first);
    CHECK(spread);
    REQUIRE((int)a.steps.size() == w.mdp.horizon + 1);
    CHECK(w.mdp.start[a.steps[0].state] > 0.0);
    for (size_t t = 0; t + 1 < a.steps.size(); ++t)
        CHECK(w.mdp.trans(a.steps[t].state, a.steps[t].action, a.steps[t + 1].state) > 0.0);
}

TEST_CASE("recordings are reproducible and carry vision only when sighted") {
    World w = patrol();
    Policy pi = boltzmann_policy(w.mdp, reward_table(w.mdp, w.feats, w.theta_true), w.cfg.beta);
    auto T = simulate_expert(w.mdp, pi, 7);
    auto om1 = generate_observations(T, w, 0.05, 99);
    auto om2 = generate_observations(T, w, 0.05, 99);
    auto om3 = generate_observations(T, w, 0.05, 100);
    REQUIRE(om1.epochs.size() == T.steps.size());

    auto mask = w.learner_view_mask();
    bool any_difference = false;
    for (size_t t = 0; t < om1.epochs.size(); ++t) {
        CHECK(om1.epochs[t].sound.a == om2.epochs[t].sound.a);
        CHECK(om1.epochs[t].sound.c == om2.epochs[t].sound.c);
        if (om1.epochs[t].sound.c != om3.epochs[t].sound.c) any_difference = true;
        CHECK(om1.epochs[t].vision.has_value() == om2.epochs[t].vision.has_value());

        // a sighting happens exactly when the true pose is inside the mask,
        // and whatever it reports is itself a visible pose
        CHECK(om1.epochs[t].vision.has_value() == (mask[T.steps[t].state] != 0));
        if (om1.epochs[t].vision)
            CHECK(mask[om1.epochs[t].vision->state] != 0);
    }
    CHECK(any_difference); // a different seed must perturb the curves

    // noise-free recordings need no randomness beyond the sampling window
    auto clean = generate_observations(T, w, 0.0, 1);
    for (auto& ep : clean.epochs) CHECK(ep.sound.fit_residual < 1e-9);
}

TEST_CASE("episodes round-trip through their CSV form exactly") {
    World w = drone();
    Policy pi = boltzmann_policy(w.mdp, reward_table(w.mdp, w.feats, w.theta_true), w.cfg.beta);
    Episode ep = make_episode(w, pi, 0.1, 4242);
    CHECK(ep.seed == 4242);

    std::ostringstream os;
    write_episode_csv(os, ep, 0xabcdef1234567890ull);
    std::string text = os.str();
    CHECK(text.find("rirl.episode.v1") != std::string::npos);
    CHECK(text.find("abcdef1234567890") != std::string::npos);

    std::istringstream is(text);
    Episode back = read_episode_csv(is);
    CHECK(back.seed == ep.seed);
    CHECK(back.truth == ep.truth);
    REQUIRE(back.omega.epochs.size() == ep.omega.epochs.size());
    for (size_t t = 0; t < ep.omega.epochs.size(); ++t) {
        CHECK(back.omega.epochs[t].sound.a == ep.omega.epochs[t].sound.a);
        CHECK(back.omega.epochs[t].sound.b == ep.omega.epochs[t].sound.b);
        CHECK(back.omega.epochs[t].sound.c == ep.omega.epochs[t].sound.c);
        CHECK(back.omega.epochs[t].vision.has_value() ==
              ep.omega.epochs[t].vision.has_value());
    }
}

TEST_CASE("walk distances fan out from the goal pocket") {
    World w = patrol();
    auto dist = walk_distances(w, w.goal_cell);
    CHECK(dist[(size_t)w.goal_cell] == 0);
    CHECK(dist[(size_t)w.flat(4, 3)] == 1); // pocket mouth
    CHECK(dist[(size_t)w.flat(5, 3)] == 2);
    CHECK(dist[(size_t)w.flat(5, 2)] == 3);
    CHECK(dist[(size_t)w.listener_cell] == 4);
    CHECK(dist[(size_t)w.flat(1, 1)] > 4); // the long way around the block
    CHECK(dist[(size_t)w.flat(0, 0)] == -1); // walls are unreachable
}

TEST_CASE("an empty post always lets the intruder through") {
    World w = patrol();
    Policy pi = boltzmann_policy(w.mdp, reward_table(w.mdp, w.feats, w.theta_true), w.cfg.beta);
    PlannerOptions opts;
    opts.patroller_absent = true;
    for (uint64_t seed = 0; seed < 5; ++seed)
        CHECK(penetration_trial(w, pi, opts, seed) == TrialOutcome::Success);
}

TEST_CASE("trials are deterministic per seed") {
    World w = patrol();
    Policy pi = boltzmann_policy(w.mdp, reward_table(w.mdp, w.feats, w.theta_true), w.cfg.beta);
    PlannerOptions opts;
    std::set<TrialOutcome> outcomes;
    for (uint64_t seed = 0; seed < 12; ++seed) {
        auto a = penetration_trial(w, pi, opts, seed);
        auto b = penetration_trial(w, pi, opts, seed);
        CHECK(a == b);
        outcomes.insert(a);
        CHECK(random_attack_trial(w, 10.0, opts, seed) ==
              random_attack_trial(w, 10.0, opts, seed));
    }

    // a tiny budget forces a timeout
    PlannerOptions strangled;
    strangled.epoch_budget = 1;
    CHECK(penetration_trial(w, pi, strangled, 0) == TrialOutcome::Timeout);
}

TEST_CASE("straight-lane rule rejects bent drone corridors") {
    auto cfg = parse_config_text(
        "domain = drone_corridor\nlayout:\n#####\n#P=##\n##=L#\n#####\n");
    CHECK_THROWS_AS(build_world(world_config_from(cfg)), ConfigError);

    // disconnected lanes are rejected for either domain
    auto gap = parse_config_text(
        "domain = drone_corridor\nlayout:\n######\n#P=.=#\n#.L..#\n######\n");
    CHECK_THROWS_AS(build_world(world_config_from(gap)), ConfigError);

    // the penetration domain requires a goal
    auto no_goal = parse_config_text(
        "domain = patrol_penetration\nlayout:\n####\n#P=#\n#L.#\n####\n");
    CHECK_THROWS_AS(build_world(world_config_from(no_goal)), ConfigError);
}
