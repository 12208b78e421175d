#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "rirl/baselines.hpp"
#include "rirl/em.hpp"

using namespace rirl;

namespace {

// Two deterministic states (action 0 stays, action 1 swaps), pinned start,
// three steps. Small enough to enumerate everything by hand.
Mdp two_state() {
    Mdp m;
    m.states = {State{0, Heading::North}, State{1, Heading::North}};
    m.num_actions = 2;
    m.horizon = 2;
    m.discount = 0.9;
    m.start = {1.0, 0.0};
    m.transition.assign(2 * 2 * 2, 0.0);
    auto set = [&](int s, int a, int nxt) { m.transition[m.tindex(s, a, nxt)] = 1.0; };
    set(0, 0, 0);
    set(0, 1, 1);
    set(1, 0, 1);
    set(1, 1, 0);
    return m;
}

FeatureSet two_state_features(const Mdp& m) {
    return FeatureSet(m, 2, [](const State& s, int a, double* out) {
        out[0] = (a == 1) ? 1.0 : 0.0;
        out[1] = (s.cell == 1) ? 1.0 : 0.0;
    });
}

Policy lopsided_policy() {
    Policy pi;
    pi.num_states = 2;
    pi.num_actions = 2;
    pi.probs = {0.7, 0.3, 0.4, 0.6};
    return pi;
}

// Distinct fly-by geometry for every state-action pair so sound evidence can
// tell them apart.
ObservationModel sound_model_for(const Mdp& m, double sigma) {
    ObservationModel obs;
    obs.kind = SensorKind::SoundOnly;
    obs.listener = {0.0, 0.0};
    obs.sigma = sigma;
    obs.epoch_duration = 1.0;
    obs.source_strength = 1.0;
    obs.num_states = m.num_states();
    obs.num_actions = m.num_actions;
    obs.segment_of = [](int s, int a) {
        MotionSegment seg;
        seg.t0 = 0.0;
        seg.p0 = {1.0 + 2.0 * s, 1.0 + a};
        seg.v = {a == 0 ? 0.5 : -0.5, 0.25 * s};
        return seg;
    };
    return obs;
}

HiddenMdp hidden_two_state(double sigma) {
    HiddenMdp hm{two_state(), two_state_features(two_state()), sound_model_for(two_state(), sigma)};
    return hm;
}

std::array<double, 3> coeffs_of(const ObservationModel& obs, int s, int a) {
    return predicted_coeffs(obs.segment_of(s, a), obs.listener, obs.source_strength,
                            obs.epoch_duration);
}

// Noiseless recording of one trajectory under the model's own geometry.
ObservationSequence record_trajectory(const Trajectory& T, const ObservationModel& obs) {
    ObservationSequence om;
    for (const Step& st : T.steps) {
        auto samples =
            sample_intensity(obs.segment_of(st.state, st.action), obs.listener,
                             obs.source_strength, 0.0, obs.epoch_duration, 16.0, 1e9, nullptr);
        StepObservation so;
        so.sound = fit_epoch(samples);
        om.epochs.push_back(so);
    }
    return om;
}

// Brute-force reference: posterior mass and expectations computed with plain
// probability arithmetic, no log-space tricks shared with the library path.
struct BruteForce {
    double evidence = 0.0;
    std::vector<double> phi;
    std::vector<std::pair<Trajectory, double>> joint; // trajectory, prior * lik

    BruteForce(const ObservationSequence& om, const HiddenMdp& hm, const Policy& pi) {
        phi.assign(hm.feats.count(), 0.0);
        auto table = loglik_table(om, hm.obs);
        for_each_feasible_trajectory(hm.mdp, [&](const Trajectory& T) {
            double prior = hm.mdp.start[T.steps[0].state];
            for (size_t t = 0; t < T.steps.size(); ++t) {
                prior *= pi.prob(T.steps[t].state, T.steps[t].action);
                if (t + 1 < T.steps.size())
                    prior *= hm.mdp.trans(T.steps[t].state, T.steps[t].action,
                                          T.steps[t + 1].state);
            }
            double lik = 1.0;
            for (size_t t = 0; t < T.steps.size(); ++t)
                lik *= std::exp(
                    table[t][(size_t)T.steps[t].state * hm.mdp.num_actions + T.steps[t].action]);
            joint.emplace_back(T, prior * lik);
            evidence += prior * lik;
        });
        for (auto& [T, w] : joint) {
            auto counts = feature_count(T, hm.feats);
            for (size_t k = 0; k < phi.size(); ++k) phi[k] += (w / evidence) * counts[k];
        }
    }
};

} // namespace

TEST_CASE("trajectory prior multiplies start, policy, and transition factors") {
    Mdp m = two_state();
    Policy pi = lopsided_policy();
    HiddenMdp hm = hidden_two_state(0.4);

    Trajectory T;
    T.steps = {{0, 1}, {1, 0}, {1, 1}};
    // start 1.0; policy 0.3 * 0.4 * 0.6; transitions all certain
    CHECK(log_traj_prior(T, m, pi) ==
          doctest::Approx(std::log(0.3 * 0.4 * 0.6)).epsilon(1e-12));
    CHECK(traj_prior(T, hm, pi) == doctest::Approx(0.072).epsilon(1e-12));

    // a start outside the support zeroes the prior
    Trajectory bad_start = T;
    bad_start.steps[0].state = 1;
    CHECK(log_traj_prior(bad_start, m, pi) == NEG_INF);

    // a broken transition zeroes the prior
    Trajectory broken = T;
    broken.steps[1] = {0, 0}; // 0 --swap--> must land in 1
    CHECK(log_traj_prior(broken, m, pi) == NEG_INF);

    Trajectory short_traj;
    short_traj.steps = {{0, 0}};
    CHECK_THROWS_AS(log_traj_prior(short_traj, m, pi), ConfigError);
}

TEST_CASE("observation likelihood of a trajectory is the per-step product") {
    HiddenMdp hm = hidden_two_state(0.4);
    Trajectory truth;
    truth.steps = {{0, 1}, {1, 1}, {0, 0}};
    auto om = record_trajectory(truth, hm.obs);
    auto table = loglik_table(om, hm.obs);
    REQUIRE(table.size() == 3);

    double manual = 0.0;
    for (size_t t = 0; t < truth.steps.size(); ++t)
        manual += table[t][(size_t)truth.steps[t].state * 2 + truth.steps[t].action];
    CHECK(log_obs_given_traj(om, truth, hm) == doctest::Approx(manual).epsilon(1e-12));
    CHECK(obs_given_traj(om, truth, hm) == doctest::Approx(std::exp(manual)).epsilon(1e-12));

    Trajectory wrong_len;
    wrong_len.steps = {{0, 0}};
    CHECK_THROWS_AS(log_obs_given_traj(om, wrong_len, hm), ConfigError);
}

TEST_CASE("posterior matches brute-force Bayes over the enumerated set") {
    HiddenMdp hm = hidden_two_state(0.4);
    Policy pi = lopsided_policy();
    Trajectory truth;
    truth.steps = {{0, 1}, {1, 0}, {1, 1}};
    auto om = record_trajectory(truth, hm.obs);

    BruteForce ref(om, hm, pi);
    REQUIRE(ref.joint.size() == 8);

    double total = 0.0;
    for (const auto& [T, w] : ref.joint) {
        double p = posterior(T, om, hm, pi);
        CHECK(std::abs(p - w / ref.evidence) < 1e-9);
        total += p;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));

    // the recorded trajectory should be the posterior mode by a wide margin
    double truth_p = posterior(truth, om, hm, pi);
    for (const auto& [T, w] : ref.joint)
        if (!(T == truth)) CHECK(truth_p > posterior(T, om, hm, pi));

    // dynamics-infeasible trajectories carry exactly zero mass
    Trajectory broken = truth;
    broken.steps[1] = {0, 0};
    CHECK(posterior(broken, om, hm, pi) == 0.0);
}

TEST_CASE("exact expectation step reproduces the brute-force average") {
    HiddenMdp hm = hidden_two_state(0.5);
    Policy pi = lopsided_policy();

    Trajectory t1, t2;
    t1.steps = {{0, 1}, {1, 0}, {1, 1}};
    t2.steps = {{0, 0}, {0, 1}, {1, 0}};
    std::vector<ObservationSequence> omegas = {record_trajectory(t1, hm.obs),
                                               record_trajectory(t2, hm.obs)};

    BruteForce r1(omegas[0], hm, pi), r2(omegas[1], hm, pi);
    auto es = exact_estep(omegas, hm, pi);
    CHECK(es.method == EstepMethod::Exact);
    REQUIRE(es.phi.size() == 2);
    for (int k = 0; k < 2; ++k)
        CHECK(es.phi[k] == doctest::Approx(0.5 * (r1.phi[k] + r2.phi[k])).epsilon(1e-9));
}

TEST_CASE("evidence with zero mass names the offending sequence") {
    Mdp m = two_state();
    FeatureSet f = two_state_features(m);
    Policy pi = lopsided_policy();

    StepLogLik good(3, std::vector<double>(4, -std::log(4.0)));
    StepLogLik dead = good;
    dead[1].assign(4, NEG_INF);
    std::vector<StepLogLik> tables = {good, dead};
    try {
        exact_estep(tables, m, f, pi, 1e6);
        FAIL("expected DegenerateEvidenceError");
    } catch (const DegenerateEvidenceError& e) {
        CHECK(e.sequence_index == 1);
    }

    StepLogLik short_table(2, std::vector<double>(4, 0.0));
    std::vector<StepLogLik> bad_len = {short_table};
    CHECK_THROWS_AS(exact_estep(bad_len, m, f, pi, 1e6), ConfigError);
    CHECK_THROWS_AS(exact_estep(std::span<const StepLogLik>{}, m, f, pi, 1e6), ConfigError);
}

TEST_CASE("sampled expectation step agrees with the exact one") {
    HiddenMdp hm = hidden_two_state(0.5);
    Policy pi = lopsided_policy();
    Trajectory t1, t2;
    t1.steps = {{0, 1}, {1, 0}, {1, 1}};
    t2.steps = {{0, 0}, {0, 1}, {1, 0}};
    std::vector<ObservationSequence> omegas = {record_trajectory(t1, hm.obs),
                                               record_trajectory(t2, hm.obs)};
    auto exact = exact_estep(omegas, hm, pi);

    for (uint64_t seed : {1u, 2u, 3u}) {
        GibbsOptions go;
        go.seed = seed;
        auto approx = gibbs_estep(omegas, hm, pi, go);
        CHECK(approx.method == EstepMethod::Gibbs);
        CHECK(approx.converged);
        CHECK(approx.effective_samples > 0);
        CHECK(linf_diff(approx.phi, exact.phi) < 0.05);
    }
}

TEST_CASE("sampled expectation step is deterministic per seed") {
    HiddenMdp hm = hidden_two_state(0.5);
    Policy pi = lopsided_policy();
    Trajectory t1;
    t1.steps = {{0, 1}, {1, 1}, {0, 0}};
    std::vector<ObservationSequence> omegas = {record_trajectory(t1, hm.obs)};

    GibbsOptions go;
    go.seed = 77;
    auto a = gibbs_estep(omegas, hm, pi, go);
    auto b = gibbs_estep(omegas, hm, pi, go);
    CHECK(a.phi == b.phi);
    CHECK(a.effective_samples == b.effective_samples);

    go.epsilon = -1.0;
    CHECK_THROWS_AS(gibbs_estep(omegas, hm, pi, go), ConfigError);
}

TEST_CASE("average evidence log matches a direct enumeration") {
    HiddenMdp hm = hidden_two_state(0.5);
    Policy pi = lopsided_policy();
    Trajectory t1, t2;
    t1.steps = {{0, 1}, {1, 0}, {1, 1}};
    t2.steps = {{0, 0}, {0, 0}, {0, 1}};
    std::vector<ObservationSequence> omegas = {record_trajectory(t1, hm.obs),
                                               record_trajectory(t2, hm.obs)};
    BruteForce r1(omegas[0], hm, pi), r2(omegas[1], hm, pi);
    double expected = 0.5 * (std::log(r1.evidence) + std::log(r2.evidence));
    CHECK(observed_loglik(omegas, hm, pi) == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("peaked evidence collapses the posterior onto the recorded walk") {
    // near-perfect sighting of every step: the expectation step must return
    // the demonstrated feature counts no matter what the policy prior says
    Mdp m = two_state();
    FeatureSet f = two_state_features(m);
    ObservationModel obs;
    obs.kind = SensorKind::VisionOnly;
    obs.sigma = 0.4;
    obs.num_states = 2;
    obs.num_actions = 2;
    obs.view_mask = {true, true};
    obs.vision_correct_prob = 1.0 - 1e-12;
    HiddenMdp hm{m, f, obs};

    Trajectory truth;
    truth.steps = {{0, 1}, {1, 0}, {1, 1}};
    ObservationSequence om;
    for (const Step& st : truth.steps) {
        StepObservation so;
        so.vision = RangeReading{st.state, st.action};
        om.epochs.push_back(so);
    }
    std::vector<ObservationSequence> omegas = {om};

    auto counts = feature_count(truth, f);
    for (const Policy& pi : {lopsided_policy()}) {
        auto es = exact_estep(omegas, hm, pi);
        for (int k = 0; k < 2; ++k) CHECK(es.phi[k] == doctest::Approx(counts[k]).epsilon(1e-6));
    }
}

TEST_CASE("with peaked evidence the full loop reduces to plain reward fitting") {
    Mdp m = two_state();
    FeatureSet f = two_state_features(m);
    ObservationModel obs;
    obs.kind = SensorKind::VisionOnly;
    obs.sigma = 0.4;
    obs.num_states = 2;
    obs.num_actions = 2;
    obs.view_mask = {true, true};
    obs.vision_correct_prob = 1.0 - 1e-12;
    HiddenMdp hm{m, f, obs};

    // mixed behaviors keep the demonstrated average strictly inside the
    // attainable range, so the fitted weights stay finite
    Trajectory d1, d2, d3;
    d1.steps = {{0, 1}, {1, 0}, {1, 1}};
    d2.steps = {{0, 1}, {1, 0}, {1, 0}};
    d3.steps = {{0, 0}, {0, 0}, {0, 1}};
    std::vector<Trajectory> demos = {d1, d2, d3};
    std::vector<ObservationSequence> omegas;
    for (const auto& T : demos) {
        ObservationSequence om;
        for (const Step& st : T.steps) {
            StepObservation so;
            so.vision = RangeReading{st.state, st.action};
            om.epochs.push_back(so);
        }
        omegas.push_back(om);
    }

    EmOptions eo;
    eo.seed = 5;
    eo.force_method = EstepMethod::Exact;
    auto em = robust_irl(omegas, hm, eo);
    CHECK(em.converged);

    auto phi_hat = empirical_feature_expectation(demos, f);
    MaxEntOptions mo = eo.solver;
    auto plain = solve_maxent(phi_hat, m, f, mo);

    auto e_em =
        model_feature_expectation(m, em.theta, f, ExpectationMethod::VisitationFrequency);
    auto e_plain =
        model_feature_expectation(m, plain.theta, f, ExpectationMethod::VisitationFrequency);
    for (int k = 0; k < 2; ++k) {
        CHECK(std::abs(e_em[k] - phi_hat[k]) < 1e-3);
        CHECK(std::abs(e_em[k] - e_plain[k]) < 1e-3);
    }

    // the hard-decoded baseline reduces exactly: identical decoded steps,
    // identical solver input, identical weights
    auto mlt = mlt_irl(omegas, hm, mo);
    REQUIRE(mlt.decoded.size() == 3);
    CHECK(mlt.decoded[0] == d1);
    CHECK(mlt.decoded[1] == d2);
    CHECK(mlt.decoded[2] == d3);
    CHECK(mlt.solution.theta.theta == plain.theta.theta);
}

TEST_CASE("full loop recovers preference order from clean sound recordings") {
    HiddenMdp hm = hidden_two_state(0.12);

    // expert rewards swapping and state 1; demonstrations follow suit
    Trajectory d1, d2, d3;
    d1.steps = {{0, 1}, {1, 0}, {1, 0}};
    d2.steps = {{0, 1}, {1, 0}, {1, 1}};
    d3.steps = {{0, 1}, {1, 1}, {0, 1}};
    std::vector<ObservationSequence> omegas;
    for (const auto& T : {d1, d2, d3}) omegas.push_back(record_trajectory(T, hm.obs));

    EmOptions eo;
    eo.seed = 11;
    eo.force_method = EstepMethod::Exact;
    eo.track_loglik = true;
    auto em = robust_irl(omegas, hm, eo);
    CHECK(em.converged);
    CHECK(em.iterations <= eo.max_iterations);

    // every demonstration swaps at the start and dwells in state 1 afterward;
    // the learned weights must justify that behavior
    CHECK(em.theta.theta[0] > 0.0);

    // the trace's decrease counter must agree with a recount of its records
    int drops = 0;
    double prev = std::numeric_limits<double>::quiet_NaN();
    for (const auto& rec : em.trace.records) {
        if (!std::isnan(prev) && rec.observed_loglik < prev - 1e-6) ++drops;
        prev = rec.observed_loglik;
    }
    CHECK(em.trace.loglik_decreases == drops);

    // clean, well-separated evidence anchors the loop: no decrease at all
    CHECK(em.trace.loglik_decreases == 0);
}

TEST_CASE("expectation-step methods can be forced either way") {
    HiddenMdp hm = hidden_two_state(0.3);
    Trajectory d;
    d.steps = {{0, 1}, {1, 0}, {1, 0}};
    std::vector<ObservationSequence> omegas = {record_trajectory(d, hm.obs)};

    EmOptions exact_opts;
    exact_opts.seed = 3;
    exact_opts.force_method = EstepMethod::Exact;
    auto a = robust_irl(omegas, hm, exact_opts);
    REQUIRE(!a.trace.records.empty());
    CHECK(a.trace.records.front().estep_method == EstepMethod::Exact);

    EmOptions gibbs_opts = exact_opts;
    gibbs_opts.force_method = EstepMethod::Gibbs;
    auto b = robust_irl(omegas, hm, gibbs_opts);
    REQUIRE(!b.trace.records.empty());
    CHECK(b.trace.records.front().estep_method == EstepMethod::Gibbs);

    // small instance defaults to the exact path
    EmOptions auto_opts = exact_opts;
    auto_opts.force_method.reset();
    auto c = robust_irl(omegas, hm, auto_opts);
    CHECK(c.trace.records.front().estep_method == EstepMethod::Exact);
    CHECK(c.theta.theta == a.theta.theta); // same seed, same route

    EmOptions bad = exact_opts;
    std::vector<ObservationSequence> empty;
    CHECK_THROWS_AS(robust_irl(empty, hm, bad), ConfigError);
    ObservationSequence wrong;
    wrong.epochs.resize(1);
    std::vector<ObservationSequence> mismatched = {wrong};
    CHECK_THROWS_AS(robust_irl(mismatched, hm, bad), ConfigError);
}

TEST_CASE("iteration trace serializes with stable headers and full precision") {
    EmTrace trace;
    EmIterationRecord r;
    r.iteration = 1;
    r.theta = {0.5, -0.25};
    r.phi = {1.0 / 3.0, 2.0};
    r.dual_value = -1.25;
    r.estep_method = EstepMethod::Exact;
    r.estep_converged = true;
    r.observed_loglik = -3.5;
    r.elapsed_seconds = 0.125;
    trace.records.push_back(r);

    std::ostringstream os;
    write_trace_csv(os, trace);
    std::string text = os.str();
    CHECK(text.find("iteration,theta_0,theta_1,phi_0,phi_1,dual_value,estep_method,"
                    "estep_converged,observed_loglik,elapsed_seconds") != std::string::npos);
    CHECK(text.find("0.33333333333333331") != std::string::npos);
    CHECK(text.find("exact") != std::string::npos);

    std::ostringstream empty_os;
    write_trace_csv(empty_os, EmTrace{});
    CHECK(empty_os.str().empty());
}
