#include "rirl/harness.hpp"

#include "rirl/stats.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace rirl {

const char* method_name(Method m) {
    switch (m) {
    case Method::RobustIrl: return "robust_irl";
    case Method::RobustIrlSound: return "robust_irl_sound";
    case Method::RobustIrlVision: return "robust_irl_vision";
    case Method::Mlt: return "mlt";
    case Method::RandomAttack: return "random_attack";
    }
    return "?";
}

Method method_from_name(const std::string& name) {
    for (Method m : {Method::RobustIrl, Method::RobustIrlSound, Method::RobustIrlVision,
                     Method::Mlt, Method::RandomAttack})
        if (name == method_name(m)) return m;
    throw ConfigError("unknown method '" + name + "'");
}

namespace {

std::string fmt(const char* f, ...) {
    char buf[256];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

std::string g17(double v) { return fmt("%.17g", v); }

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(item);
    if (!s.empty() && s.back() == sep) out.push_back("");
    return out;
}

std::string trimmed(const std::string& s) {
    size_t a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
}

std::vector<Method> parse_method_list(const std::string& raw) {
    std::vector<Method> out;
    for (const std::string& part : split(raw, ',')) {
        std::string p = trimmed(part);
        if (!p.empty()) out.push_back(method_from_name(p));
    }
    if (out.empty()) throw ConfigError("methods: empty list");
    return out;
}

} // namespace

std::vector<uint64_t> parse_seeds(const std::string& raw) {
    std::vector<uint64_t> out;
    for (const std::string& part : split(raw, ',')) {
        std::string p = trimmed(part);
        if (p.empty()) continue;
        size_t dots = p.find("..");
        try {
            if (dots != std::string::npos) {
                uint64_t lo = std::stoull(p.substr(0, dots));
                uint64_t hi = std::stoull(p.substr(dots + 2));
                if (hi < lo) throw ConfigError("seeds: descending range '" + p + "'");
                if (hi - lo > 10000) throw ConfigError("seeds: range too large '" + p + "'");
                for (uint64_t s = lo; s <= hi; ++s) out.push_back(s);
            } else {
                out.push_back(std::stoull(p));
            }
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            throw ConfigError("seeds: cannot parse '" + p + "'");
        }
    }
    if (out.empty()) throw ConfigError("seeds: empty list");
    return out;
}

ExperimentConfig experiment_config_from(const ParsedConfig& raw, const WorldConfig& world) {
    ExperimentConfig e;
    e.em.beta = world.beta;
    auto get = [&](const char* key) -> const std::string* {
        auto it = raw.values.find(key);
        return it == raw.values.end() ? nullptr : &it->second;
    };
    auto dval = [&](const char* key, double* slot) {
        if (auto* v = get(key)) *slot = std::stod(*v);
    };
    auto ival = [&](const char* key, int* slot) {
        if (auto* v = get(key)) *slot = std::stoi(*v);
    };

    if (auto* v = get("noise_levels")) {
        e.noise_levels.clear();
        for (const std::string& part : split(*v, ','))
            if (!trimmed(part).empty()) e.noise_levels.push_back(std::stod(trimmed(part)));
        if (e.noise_levels.empty()) throw ConfigError("noise_levels: empty list");
    }
    if (auto* v = get("seeds")) e.seeds = parse_seeds(*v);
    ival("episodes", &e.episodes);
    if (auto* v = get("methods")) e.sweep_methods = parse_method_list(*v);
    if (auto* v = get("attack_methods")) e.attack_methods = parse_method_list(*v);

    dval("em_epsilon", &e.em.em_epsilon);
    ival("em_max_iterations", &e.em.max_iterations);
    dval("enumeration_cap", &e.em.enumeration_cap);
    if (auto* v = get("force_estep")) {
        if (*v == "exact") e.em.force_method = EstepMethod::Exact;
        else if (*v == "gibbs") e.em.force_method = EstepMethod::Gibbs;
        else if (*v == "auto") e.em.force_method.reset();
        else throw ConfigError("force_estep must be exact, gibbs or auto");
    }
    dval("gibbs_epsilon", &e.em.gibbs.epsilon);
    ival("gibbs_burn_in", &e.em.gibbs.burn_in_sweeps);
    ival("gibbs_thinning", &e.em.gibbs.thinning);
    ival("gibbs_block", &e.em.gibbs.block_samples);
    if (auto* v = get("gibbs_max_sweeps")) e.em.gibbs.max_sweeps = std::stol(*v);
    dval("solver_tolerance", &e.em.solver.tolerance);
    ival("solver_max_iterations", &e.em.solver.max_iterations);
    dval("solver_step_start", &e.em.solver.step_start);
    e.em.solver.enumeration_cap = e.em.enumeration_cap;

    if (auto* v = get("ile_norm")) {
        if (*v == "l1") e.ile_norm = Norm::L1;
        else if (*v == "l2") e.ile_norm = Norm::L2;
        else if (*v == "linf") e.ile_norm = Norm::LInf;
        else throw ConfigError("ile_norm must be l1, l2 or linf");
    }
    dval("attack_sigma", &e.attack_sigma);
    dval("convergence_sigma", &e.convergence_sigma);
    if (auto* v = get("convergence_epsilons")) {
        e.convergence_epsilons.clear();
        for (const std::string& part : split(*v, ','))
            if (!trimmed(part).empty()) e.convergence_epsilons.push_back(std::stod(trimmed(part)));
        if (e.convergence_epsilons.empty()) throw ConfigError("convergence_epsilons: empty list");
    }
    if (auto* v = get("track_loglik")) {
        if (*v == "1" || *v == "true") e.em.track_loglik = true;
        else if (*v == "0" || *v == "false") e.em.track_loglik = false;
        else throw ConfigError("track_loglik must be 0, 1, true or false");
    }
    ival("trials", &e.trials);
    dval("max_wait", &e.max_wait);
    dval("risk_threshold", &e.planner.risk);
    ival("epoch_budget", &e.planner.epoch_budget);

    if (e.episodes < 1) throw ConfigError("episodes must be at least 1");
    if (e.trials < 1) throw ConfigError("trials must be at least 1");
    if (e.max_wait < 0) throw ConfigError("max_wait must be non-negative");
    if (e.planner.risk < 0 || e.planner.risk > 1)
        throw ConfigError("risk_threshold must be in [0, 1]");
    if (e.planner.epoch_budget < 1) throw ConfigError("epoch_budget must be at least 1");
    for (double nl : e.noise_levels)
        if (nl < 0) throw ConfigError("noise_levels must be non-negative");
    for (double eps : e.convergence_epsilons)
        if (eps <= 0) throw ConfigError("convergence_epsilons must be positive");
    if (e.attack_sigma < 0 || e.convergence_sigma < 0)
        throw ConfigError("recording noise must be non-negative");
    return e;
}

// --- results file ------------------------------------------------------------

namespace {

const char* const RESULTS_SCHEMA = "rirl.results.v2";
const char* const COLUMNS =
    "study,domain,method,sensor,estep,noise,epsilon,seed,trial,episodes,"
    "ile,loglik,theta_0,theta_1,em_iterations,converged,wall_time,outcome,success";

std::string cell_int(int v) { return v < 0 ? std::string() : std::to_string(v); }
std::string cell_double(double v) { return std::isnan(v) ? std::string() : g17(v); }

std::string row_to_csv(const ResultRow& r) {
    std::string out;
    out += r.study;
    out += ',';
    out += r.domain;
    out += ',';
    out += r.method;
    out += ',';
    out += r.sensor;
    out += ',';
    out += r.estep;
    out += ',';
    out += g17(r.noise);
    out += ',';
    out += cell_double(r.epsilon);
    out += ',';
    out += std::to_string(r.seed);
    out += ',';
    out += cell_int(r.trial);
    out += ',';
    out += cell_int(r.episodes);
    out += ',';
    out += cell_double(r.ile);
    out += ',';
    out += cell_double(r.loglik);
    out += ',';
    out += cell_double(r.theta0);
    out += ',';
    out += cell_double(r.theta1);
    out += ',';
    out += cell_int(r.em_iterations);
    out += ',';
    out += cell_int(r.converged);
    out += ',';
    out += cell_double(r.wall_time);
    out += ',';
    out += r.outcome;
    out += ',';
    out += cell_int(r.success);
    return out;
}

ResultRow row_from_csv(const std::string& line) {
    std::vector<std::string> f = split(line, ',');
    if (f.size() != 19) throw ValidationError("results row has " + std::to_string(f.size()) +
                                              " columns, expected 19: " + line);
    auto opt_d = [](const std::string& s) {
        return s.empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(s);
    };
    ResultRow r;
    r.study = f[0];
    r.domain = f[1];
    r.method = f[2];
    r.sensor = f[3];
    r.estep = f[4];
    r.noise = std::stod(f[5]);
    r.epsilon = opt_d(f[6]);
    r.seed = std::stoull(f[7]);
    r.trial = f[8].empty() ? -1 : std::stoi(f[8]);
    r.episodes = f[9].empty() ? -1 : std::stoi(f[9]);
    r.ile = opt_d(f[10]);
    r.loglik = opt_d(f[11]);
    r.theta0 = opt_d(f[12]);
    r.theta1 = opt_d(f[13]);
    r.em_iterations = f[14].empty() ? -1 : std::stoi(f[14]);
    r.converged = f[15].empty() ? -1 : std::stoi(f[15]);
    r.wall_time = opt_d(f[16]);
    r.outcome = f[17];
    r.success = f[18].empty() ? -1 : std::stoi(f[18]);
    return r;
}

// Resume granularity: one key per schedulable cell. The threshold study runs
// the same (method, noise, seed) at several tolerances, so epsilon is part
// of the key; it serializes as the empty string where unused.
std::string task_key(const std::string& study, const std::string& method, double noise,
                     double epsilon, uint64_t seed) {
    return study + '|' + method + '|' + g17(noise) + '|' + cell_double(epsilon) + '|' +
           std::to_string(seed);
}

// Append-mode results file that remembers which tasks already hold rows. An
// interrupted study picks up where it stopped; a finished one becomes a no-op.
class CsvSink {
  public:
    CsvSink(const std::string& path, uint64_t hash) : path_(path) {
        if (std::filesystem::exists(path)) {
            for (const ResultRow& r : read_results_csv(path, hash))
                done_.insert(task_key(r.study, r.method, r.noise, r.epsilon, r.seed));
            out_.open(path, std::ios::app);
        } else {
            if (auto dir = std::filesystem::path(path).parent_path(); !dir.empty())
                std::filesystem::create_directories(dir);
            out_.open(path);
            char hex[32];
            std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(hash));
            out_ << "# schema=" << RESULTS_SCHEMA << "\n# config_hash=" << hex << "\n"
                 << COLUMNS << "\n";
        }
        if (!out_) throw Error("cannot open results file for writing: " + path);
    }

    bool has(const std::string& key) const { return done_.count(key) != 0; }

    void write(const std::vector<ResultRow>& rows) {
        std::string block;
        for (const ResultRow& r : rows) {
            block += row_to_csv(r);
            block += '\n';
        }
        out_ << block;
        out_.flush();
    }

  private:
    std::string path_;
    std::ofstream out_;
    std::set<std::string> done_;
};

// One cell's output: its rows, plus the learner's error text when the cell
// failed (the rows then hold a single outcome="error" record).
struct CellResult {
    std::vector<ResultRow> rows;
    std::string error;
};

// Runs the cell body; a thrown learner failure becomes a status row carrying
// the cell's identity, so the study records it and keeps going.
CellResult run_cell(ResultRow identity, const std::function<std::vector<ResultRow>()>& body) {
    try {
        return {body(), std::string()};
    } catch (const std::exception& e) {
        identity.outcome = "error";
        return {{std::move(identity)}, e.what()};
    }
}

// Runs tasks on a small pool but emits their results strictly in task order,
// so the results file is byte-stable under any worker count. Only unexpected
// exceptions (I/O, logic bugs) propagate; learner failures were already
// converted to error rows by run_cell.
void run_ordered(int n, int workers,
                 const std::function<CellResult(int)>& fn,
                 const std::function<void(int, CellResult&&)>& emit) {
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) emit(i, fn(i));
        return;
    }
    std::mutex mu;
    std::condition_variable cv;
    std::vector<CellResult> results(static_cast<size_t>(n));
    std::vector<char> ready(static_cast<size_t>(n), 0);
    std::atomic<int> next{0};
    std::exception_ptr failure;

    auto worker = [&] {
        for (;;) {
            int i = next.fetch_add(1);
            if (i >= n) return;
            try {
                CellResult cr = fn(i);
                std::lock_guard<std::mutex> lock(mu);
                results[static_cast<size_t>(i)] = std::move(cr);
                ready[static_cast<size_t>(i)] = 1;
                cv.notify_all();
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                if (!failure) failure = std::current_exception();
                next.store(n); // drain remaining work
                ready[static_cast<size_t>(i)] = 1;
                cv.notify_all();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < std::min(workers, n); ++w) pool.emplace_back(worker);

    for (int i = 0; i < n; ++i) {
        std::unique_lock<std::mutex> lock(mu);
        cv.wait(lock, [&] { return ready[static_cast<size_t>(i)] != 0; });
        if (failure) break;
        CellResult cr = std::move(results[static_cast<size_t>(i)]);
        lock.unlock();
        emit(i, std::move(cr));
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

SensorKind sensor_for(Method m, const World& world) {
    switch (m) {
    case Method::RobustIrlSound: return SensorKind::SoundOnly;
    case Method::RobustIrlVision: return SensorKind::VisionOnly;
    case Method::RobustIrl:
    case Method::Mlt: return world.cfg.sensor;
    case Method::RandomAttack: break;
    }
    throw ConfigError("method has no sensor channel");
}

} // namespace

std::vector<ResultRow> read_results_csv(const std::string& path, uint64_t expect_hash) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open results file: " + path);
    std::vector<ResultRow> rows;
    std::string line;
    bool schema_seen = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (line.rfind("# schema=", 0) == 0) {
                std::string s = line.substr(9);
                if (s != RESULTS_SCHEMA)
                    throw ConfigError("results file " + path + " has schema '" + s + "'");
                schema_seen = true;
            } else if (line.rfind("# config_hash=", 0) == 0 && expect_hash != 0) {
                uint64_t h = std::stoull(line.substr(14), nullptr, 16);
                if (h != expect_hash)
                    throw ConfigError("results file " + path +
                                      " was produced by a different configuration; "
                                      "move it aside or pass a fresh --out");
            }
            continue;
        }
        if (line.rfind("study,", 0) == 0) continue; // column header
        rows.push_back(row_from_csv(line));
    }
    if (!schema_seen) throw ConfigError("results file " + path + " carries no schema marker");
    return rows;
}

std::vector<ObservationSequence> make_dataset(const World& world, double noise, int episodes,
                                              uint64_t seed) {
    std::vector<double> r_true = reward_table(world.mdp, world.feats, world.theta_true);
    Policy expert = boltzmann_policy(world.mdp, r_true, world.cfg.beta);
    uint64_t root = derive_seed(seed, "data", std::bit_cast<uint64_t>(noise));
    std::vector<ObservationSequence> out;
    out.reserve(static_cast<size_t>(episodes));
    for (int e = 0; e < episodes; ++e)
        out.push_back(make_episode(world, expert, noise, derive_seed(root, "episode", e)).omega);
    return out;
}

double ile_against_truth(const World& world, const RewardWeights& learned, Norm n) {
    std::vector<double> r_true = reward_table(world.mdp, world.feats, world.theta_true);
    PlanResult best = value_iteration(world.mdp, r_true);
    // The learner's behavioral output is the softmax policy at its learned
    // reward (the same behavior model it fits); score that policy on the
    // true reward against the optimal value function.
    std::vector<double> r_hat = reward_table(world.mdp, world.feats, learned);
    Policy pi_hat = boltzmann_policy(world.mdp, r_hat, world.cfg.beta);
    ValueFunction achieved = evaluate_policy(world.mdp, pi_hat, r_true);
    return ile(achieved, best.values, n);
}

LearnOutcome learn_once(const World& world, Method m,
                        std::span<const ObservationSequence> data,
                        const ExperimentConfig& exp, uint64_t seed) {
    if (m == Method::RandomAttack) throw ConfigError("random_attack does not learn a reward");
    auto t0 = std::chrono::steady_clock::now();
    SensorKind kind = sensor_for(m, world);
    if ((kind == SensorKind::VisionOnly || kind == SensorKind::Fused) && !world.has_vision)
        throw ConfigError(std::string("sensor '") + sensor_kind_name(kind) +
                          "' needs a domain with sightings");
    HiddenMdp hm = world.hidden(kind);
    LearnOutcome lo;
    if (m == Method::Mlt) {
        MltResult r = mlt_irl(data, hm, exp.em.solver);
        lo.theta = r.solution.theta;
        lo.iterations = r.solution.iterations;
        lo.converged = r.solution.converged;
        std::vector<double> r_hat = reward_table(world.mdp, world.feats, lo.theta);
        lo.policy = boltzmann_policy(world.mdp, r_hat, world.cfg.beta);
    } else {
        EmOptions o = exp.em;
        o.beta = world.cfg.beta;
        o.seed = derive_seed(seed, "em");
        EmResult r = robust_irl(data, hm, o);
        lo.theta = r.theta;
        lo.iterations = r.iterations;
        lo.converged = r.converged;
        if (!r.trace.records.empty()) lo.estep = r.trace.records.back().estep_method;
        lo.trace = std::move(r.trace);
        lo.policy = std::move(r.policy);
    }
    lo.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return lo;
}

// --- studies -----------------------------------------------------------------

namespace {

// Identity fields shared by every row (and the error row) of one cell.
ResultRow cell_identity(const char* study, const World& world, Method m, double noise,
                        double epsilon, uint64_t seed, int episodes) {
    ResultRow r;
    r.study = study;
    r.domain = domain_name(world.cfg.domain);
    r.method = method_name(m);
    if (m != Method::RandomAttack) r.sensor = sensor_kind_name(sensor_for(m, world));
    r.noise = noise;
    r.epsilon = epsilon;
    r.seed = seed;
    r.episodes = episodes;
    return r;
}

void fill_learned(ResultRow& r, const World& world, const ExperimentConfig& exp,
                  const LearnOutcome& lo, Method m) {
    if (m != Method::Mlt) r.estep = estep_method_name(lo.estep);
    r.ile = ile_against_truth(world, lo.theta, exp.ile_norm);
    if (!lo.trace.records.empty()) r.loglik = lo.trace.records.back().observed_loglik;
    r.theta0 = lo.theta.theta.size() > 0 ? lo.theta.theta[0] : 0.0;
    r.theta1 = lo.theta.theta.size() > 1 ? lo.theta.theta[1] : 0.0;
    r.em_iterations = lo.iterations;
    r.converged = lo.converged ? 1 : 0;
    r.wall_time = lo.wall_time;
}

// Shared emission loop: append each cell's rows, count failures, log one
// line per cell (described by the caller).
int emit_cells(CsvSink& sink, int n, int workers, std::ostream& log,
               const std::function<CellResult(int)>& fn,
               const std::function<std::string(int, const CellResult&)>& describe) {
    int failures = 0;
    run_ordered(n, workers, fn, [&](int j, CellResult&& cr) {
        sink.write(cr.rows);
        if (!cr.error.empty()) {
            ++failures;
            log << "  FAILED " << describe(j, cr) << ": " << cr.error << "\n";
        } else {
            log << "  done " << describe(j, cr) << "\n";
        }
    });
    return failures;
}

} // namespace

int run_noise_sweep(const World& world, const ExperimentConfig& exp, const ParsedConfig& raw,
                    const RunOptions& run, std::ostream& log) {
    for (Method m : exp.sweep_methods) {
        if (m == Method::RandomAttack)
            throw ConfigError("random_attack produces no reward estimate; drop it from 'methods'");
        SensorKind kind = sensor_for(m, world);
        if ((kind == SensorKind::VisionOnly || kind == SensorKind::Fused) && !world.has_vision)
            throw ConfigError(std::string("method '") + method_name(m) + "' needs sightings; " +
                              "this domain records none");
    }

    struct Task {
        double noise;
        Method m;
        uint64_t seed;
    };
    std::vector<Task> tasks;
    for (double noise : exp.noise_levels)
        for (Method m : exp.sweep_methods)
            for (uint64_t seed : exp.seeds) tasks.push_back({noise, m, seed});

    CsvSink sink(run.out_csv, config_hash(raw));
    std::vector<int> todo;
    for (size_t i = 0; i < tasks.size(); ++i)
        if (!sink.has(task_key("sweep", method_name(tasks[i].m), tasks[i].noise,
                               std::numeric_limits<double>::quiet_NaN(), tasks[i].seed)))
            todo.push_back(static_cast<int>(i));
    log << "sweep: " << todo.size() << " of " << tasks.size() << " tasks to run\n";

    auto fn = [&](int j) {
        const Task& t = tasks[static_cast<size_t>(todo[static_cast<size_t>(j)])];
        ResultRow id = cell_identity("sweep", world, t.m, t.noise,
                                     std::numeric_limits<double>::quiet_NaN(), t.seed,
                                     exp.episodes);
        return run_cell(id, [&]() {
            auto data = make_dataset(world, t.noise, exp.episodes, t.seed);
            LearnOutcome lo = learn_once(world, t.m, data, exp, t.seed);
            ResultRow r = id;
            fill_learned(r, world, exp, lo, t.m);
            return std::vector<ResultRow>{r};
        });
    };
    return emit_cells(sink, static_cast<int>(todo.size()), run.workers, log, fn,
                      [&](int j, const CellResult& cr) {
                          const Task& t = tasks[static_cast<size_t>(todo[static_cast<size_t>(j)])];
                          std::string s = fmt("%s noise=%g seed=%llu", method_name(t.m), t.noise,
                                              static_cast<unsigned long long>(t.seed));
                          if (cr.error.empty()) s += fmt(" ile=%.4f", cr.rows[0].ile);
                          return s;
                      });
}

int run_success_rate(const World& world, const ExperimentConfig& exp, const ParsedConfig& raw,
                     const RunOptions& run, std::ostream& log) {
    if (world.goal_cell < 0)
        throw ConfigError("the attack study needs a layout with a 'G' goal cell");

    struct Task {
        Method m;
        uint64_t seed;
    };
    std::vector<Task> tasks;
    for (Method m : exp.attack_methods)
        for (uint64_t seed : exp.seeds) tasks.push_back({m, seed});

    CsvSink sink(run.out_csv, config_hash(raw));
    std::vector<int> todo;
    for (size_t i = 0; i < tasks.size(); ++i)
        if (!sink.has(task_key("attack", method_name(tasks[i].m), exp.attack_sigma,
                               std::numeric_limits<double>::quiet_NaN(), tasks[i].seed)))
            todo.push_back(static_cast<int>(i));
    log << "attack: " << todo.size() << " of " << tasks.size() << " tasks to run\n";

    auto fn = [&](int j) {
        const Task& t = tasks[static_cast<size_t>(todo[static_cast<size_t>(j)])];
        ResultRow id = cell_identity("attack", world, t.m, exp.attack_sigma,
                                     std::numeric_limits<double>::quiet_NaN(), t.seed,
                                     exp.episodes);
        return run_cell(id, [&]() {
            Policy planner_policy;
            double learn_seconds = std::numeric_limits<double>::quiet_NaN();
            if (t.m != Method::RandomAttack) {
                auto data = make_dataset(world, exp.attack_sigma, exp.episodes, t.seed);
                LearnOutcome lo = learn_once(world, t.m, data, exp, t.seed);
                planner_policy = std::move(lo.policy);
                learn_seconds = lo.wall_time;
            }
            std::vector<ResultRow> rows;
            for (int k = 0; k < exp.trials; ++k) {
                uint64_t trial_seed = derive_seed(t.seed, "trial", static_cast<uint64_t>(k));
                TrialOutcome out =
                    t.m == Method::RandomAttack
                        ? random_attack_trial(world, exp.max_wait, exp.planner, trial_seed)
                        : penetration_trial(world, planner_policy, exp.planner, trial_seed);
                ResultRow r = id;
                r.trial = k;
                r.wall_time = learn_seconds; // the planner's one-off learning cost
                r.outcome = trial_outcome_name(out);
                r.success = out == TrialOutcome::Success ? 1 : 0;
                rows.push_back(r);
            }
            return rows;
        });
    };
    return emit_cells(sink, static_cast<int>(todo.size()), run.workers, log, fn,
                      [&](int j, const CellResult& cr) {
                          const Task& t = tasks[static_cast<size_t>(todo[static_cast<size_t>(j)])];
                          std::string s = fmt("%s seed=%llu", method_name(t.m),
                                              static_cast<unsigned long long>(t.seed));
                          if (cr.error.empty()) {
                              int wins = 0;
                              for (const ResultRow& r : cr.rows) wins += r.success == 1;
                              s += fmt(" success=%d/%d", wins, exp.trials);
                          }
                          return s;
                      });
}

int run_convergence_study(const World& world, const ExperimentConfig& exp, const ParsedConfig& raw,
                          const RunOptions& run, std::ostream& log) {
    // The study contrasts the sound channel alone against the sound+sighting
    // fusion, so the config must provide both.
    if (!world.has_vision)
        throw ConfigError("the threshold study needs a domain with sightings");
    if (world.cfg.sensor != SensorKind::Fused)
        throw ConfigError("the threshold study compares sound-only against the fused channel; "
                          "set 'sensor = fused'");

    struct Task {
        double eps;
        Method m;
        uint64_t seed;
    };
    std::vector<Task> tasks;
    for (double eps : exp.convergence_epsilons)
        for (Method m : {Method::RobustIrlSound, Method::RobustIrl})
            for (uint64_t seed : exp.seeds) tasks.push_back({eps, m, seed});

    CsvSink sink(run.out_csv, config_hash(raw));
    std::vector<int> todo;
    for (size_t i = 0; i < tasks.size(); ++i)
        if (!sink.has(task_key("convergence", method_name(tasks[i].m), exp.convergence_sigma,
                               tasks[i].eps, tasks[i].seed)))
            todo.push_back(static_cast<int>(i));
    log << "convergence: " << todo.size() << " of " << tasks.size() << " tasks to run\n";

    auto fn = [&](int j) {
        const Task& t = tasks[static_cast<size_t>(todo[static_cast<size_t>(j)])];
        ResultRow id = cell_identity("convergence", world, t.m, exp.convergence_sigma, t.eps,
                                     t.seed, exp.episodes);
        return run_cell(id, [&]() {
            auto data = make_dataset(world, exp.convergence_sigma, exp.episodes, t.seed);
            ExperimentConfig swept = exp;
            swept.em.force_method = EstepMethod::Gibbs; // the tolerance under study is the sampler's
            swept.em.gibbs.epsilon = t.eps;
            LearnOutcome lo = learn_once(world, t.m, data, swept, t.seed);
            ResultRow r = id;
            fill_learned(r, world, exp, lo, t.m);
            return std::vector<ResultRow>{r};
        });
    };
    return emit_cells(sink, static_cast<int>(todo.size()), run.workers, log, fn,
                      [&](int j, const CellResult& cr) {
                          const Task& t = tasks[static_cast<size_t>(todo[static_cast<size_t>(j)])];
                          std::string s =
                              fmt("%s eps=%g seed=%llu", method_name(t.m), t.eps,
                                  static_cast<unsigned long long>(t.seed));
                          if (cr.error.empty())
                              s += fmt(" ile=%.4f time=%.2fs", cr.rows[0].ile,
                                       cr.rows[0].wall_time);
                          return s;
                      });
}

// --- plots -------------------------------------------------------------------

namespace {

const char* const PALETTE[] = {"#3a6ea5", "#c23b22", "#2e8b57", "#8a5fb0", "#d98e04", "#6b6b6b"};

// Minimal line/bar canvas writing standalone SVG. Coordinates are mapped from
// data space; callers set the ranges before drawing.
struct Chart {
    double width = 640, height = 420;
    double ml = 72, mr = 24, mt = 36, mb = 54;
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    std::string body;

    double X(double x) const { return ml + (x - xmin) / (xmax - xmin) * (width - ml - mr); }
    double Y(double y) const { return height - mb - (y - ymin) / (ymax - ymin) * (height - mt - mb); }

    void pad_ranges() {
        if (xmax <= xmin) { xmax = xmin + 1; xmin -= 1; }
        if (ymax <= ymin) { ymax = ymin + 1; ymin -= 1; }
        double ypad = 0.06 * (ymax - ymin);
        ymin -= ypad;
        ymax += ypad;
    }

    void polyline(const std::vector<std::pair<double, double>>& pts, const char* color) {
        body += "<polyline fill=\"none\" stroke=\"";
        body += color;
        body += "\" stroke-width=\"2\" points=\"";
        for (auto [x, y] : pts) body += fmt("%.6g,%.6g ", X(x), Y(y));
        body += "\"/>\n";
        for (auto [x, y] : pts)
            body += fmt("<circle cx=\"%.6g\" cy=\"%.6g\" r=\"3\" fill=\"%s\"/>\n", X(x), Y(y), color);
    }

    void bar(double x0, double x1, double y, const char* color) {
        body += fmt("<rect x=\"%.6g\" y=\"%.6g\" width=\"%.6g\" height=\"%.6g\" fill=\"%s\"/>\n",
                    X(x0), Y(y), X(x1) - X(x0), Y(ymin) - Y(y), color);
    }

    void label(double px, double py, const std::string& s, const char* anchor, int size = 12) {
        body += fmt("<text x=\"%.6g\" y=\"%.6g\" font-family=\"sans-serif\" font-size=\"%d\" "
                    "text-anchor=\"%s\" fill=\"#222\">",
                    px, py, size, anchor);
        body += s;
        body += "</text>\n";
    }

    std::string render(const std::string& title, const std::string& xlabel,
                       const std::string& ylabel) {
        std::string svg = fmt("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" "
                              "height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n",
                              width, height, width, height);
        svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
        // axes
        svg += fmt("<line x1=\"%.6g\" y1=\"%.6g\" x2=\"%.6g\" y2=\"%.6g\" stroke=\"#444\"/>\n",
                   ml, height - mb, width - mr, height - mb);
        svg += fmt("<line x1=\"%.6g\" y1=\"%.6g\" x2=\"%.6g\" y2=\"%.6g\" stroke=\"#444\"/>\n",
                   ml, mt, ml, height - mb);
        // tick labels at the extremes and midpoints
        for (double f : {0.0, 0.5, 1.0}) {
            double xv = xmin + f * (xmax - xmin);
            double yv = ymin + f * (ymax - ymin);
            svg += fmt("<text x=\"%.6g\" y=\"%.6g\" font-family=\"sans-serif\" font-size=\"11\" "
                       "text-anchor=\"middle\" fill=\"#444\">%.4g</text>\n",
                       X(xv), height - mb + 16, xv);
            svg += fmt("<text x=\"%.6g\" y=\"%.6g\" font-family=\"sans-serif\" font-size=\"11\" "
                       "text-anchor=\"end\" fill=\"#444\">%.4g</text>\n",
                       ml - 6, Y(yv) + 4, yv);
        }
        svg += body;
        svg += fmt("<text x=\"%.6g\" y=\"22\" font-family=\"sans-serif\" font-size=\"14\" "
                   "text-anchor=\"middle\" fill=\"#111\">%s</text>\n",
                   0.5 * width, title.c_str());
        svg += fmt("<text x=\"%.6g\" y=\"%.6g\" font-family=\"sans-serif\" font-size=\"12\" "
                   "text-anchor=\"middle\" fill=\"#333\">%s</text>\n",
                   0.5 * width, height - 14, xlabel.c_str());
        svg += fmt("<text x=\"18\" y=\"%.6g\" font-family=\"sans-serif\" font-size=\"12\" "
                   "text-anchor=\"middle\" fill=\"#333\" transform=\"rotate(-90 18 %.6g)\">%s</text>\n",
                   0.5 * height, 0.5 * height, ylabel.c_str());
        svg += "</svg>\n";
        return svg;
    }
};

std::string series_label(const ResultRow& r) {
    return r.sensor.empty() ? r.method : r.method + " (" + r.sensor + ")";
}

void write_file(const std::string& path, const std::string& content, std::ostream& log) {
    std::ofstream f(path);
    if (!f) throw Error("cannot write plot: " + path);
    f << content;
    log << "wrote " << path << "\n";
}

void plot_sweep(const std::vector<ResultRow>& rows, const std::string& dir, std::ostream& log) {
    // label -> noise -> scores
    std::map<std::string, std::map<double, std::vector<double>>> series;
    for (const ResultRow& r : rows)
        if (!std::isnan(r.ile)) series[series_label(r)][r.noise].push_back(r.ile);
    if (series.empty()) return;
    Chart ch;
    ch.xmin = 1e300;
    ch.xmax = -1e300;
    ch.ymin = 1e300;
    ch.ymax = -1e300;
    for (auto& [label, by_noise] : series)
        for (auto& [noise, scores] : by_noise) {
            double m = mean(scores);
            ch.xmin = std::min(ch.xmin, noise);
            ch.xmax = std::max(ch.xmax, noise);
            ch.ymin = std::min(ch.ymin, m);
            ch.ymax = std::max(ch.ymax, m);
        }
    ch.pad_ranges();
    int ci = 0;
    double ly = ch.mt + 8;
    for (auto& [label, by_noise] : series) {
        const char* color = PALETTE[ci++ % 6];
        std::vector<std::pair<double, double>> pts;
        for (auto& [noise, scores] : by_noise) pts.emplace_back(noise, mean(scores));
        ch.polyline(pts, color);
        ch.body += fmt("<rect x=\"%.6g\" y=\"%.6g\" width=\"10\" height=\"10\" fill=\"%s\"/>\n",
                       ch.width - ch.mr - 150, ly, color);
        ch.label(ch.width - ch.mr - 136, ly + 9, label, "start", 11);
        ly += 16;
    }
    write_file(dir + "/sweep_" + rows[0].domain + ".svg",
               ch.render("score vs recording noise — " + rows[0].domain, "noise sigma",
                         "inverse learning error"),
               log);
}

void plot_attack(const std::vector<ResultRow>& rows, const std::string& dir, std::ostream& log) {
    std::map<std::string, std::pair<int, int>> tally; // method -> (wins, n)
    for (const ResultRow& r : rows) {
        if (r.success < 0) continue; // error rows carry no trial outcome
        auto& t = tally[r.method];
        t.first += r.success == 1;
        t.second += 1;
    }
    if (tally.empty()) return;
    Chart ch;
    ch.xmin = 0;
    ch.xmax = static_cast<double>(tally.size());
    ch.ymin = 0;
    ch.ymax = 1.0;
    ch.pad_ranges();
    ch.ymin = 0; // rates live in [0,1]; keep the floor exact
    int i = 0;
    for (auto& [name, t] : tally) {
        double rate = static_cast<double>(t.first) / t.second;
        ch.bar(i + 0.2, i + 0.8, rate, PALETTE[i % 6]);
        ch.label(ch.X(i + 0.5), ch.Y(rate) - 6, fmt("%.2f", rate), "middle", 11);
        ch.label(ch.X(i + 0.5), ch.height - ch.mb + 16, name, "middle", 11);
        ++i;
    }
    write_file(dir + "/attack_" + rows[0].domain + ".svg",
               ch.render("infiltration success rate — " + rows[0].domain, "", "success rate"),
               log);
}

// Two charts: mean score and mean learning time, each against the sampler
// tolerance, one line per observation channel.
void plot_convergence(const std::vector<ResultRow>& rows, const std::string& dir,
                      std::ostream& log) {
    // label -> epsilon -> values
    std::map<std::string, std::map<double, std::vector<double>>> score, seconds;
    for (const ResultRow& r : rows) {
        if (std::isnan(r.epsilon) || std::isnan(r.ile)) continue;
        score[series_label(r)][r.epsilon].push_back(r.ile);
        if (!std::isnan(r.wall_time)) seconds[series_label(r)][r.epsilon].push_back(r.wall_time);
    }
    if (score.empty()) return;

    auto draw = [&](const std::map<std::string, std::map<double, std::vector<double>>>& series,
                    const std::string& file, const std::string& title, const std::string& ylabel) {
        Chart ch;
        ch.xmin = 1e300;
        ch.xmax = -1e300;
        ch.ymin = 1e300;
        ch.ymax = -1e300;
        for (auto& [label, by_eps] : series)
            for (auto& [eps, vals] : by_eps) {
                double m = mean(vals);
                ch.xmin = std::min(ch.xmin, eps);
                ch.xmax = std::max(ch.xmax, eps);
                ch.ymin = std::min(ch.ymin, m);
                ch.ymax = std::max(ch.ymax, m);
            }
        ch.pad_ranges();
        int ci = 0;
        double ly = ch.mt + 8;
        for (auto& [label, by_eps] : series) {
            const char* color = PALETTE[ci++ % 6];
            std::vector<std::pair<double, double>> pts;
            for (auto& [eps, vals] : by_eps) pts.emplace_back(eps, mean(vals));
            ch.polyline(pts, color);
            ch.body += fmt("<rect x=\"%.6g\" y=\"%.6g\" width=\"10\" height=\"10\" fill=\"%s\"/>\n",
                           ch.width - ch.mr - 170, ly, color);
            ch.label(ch.width - ch.mr - 156, ly + 9, label, "start", 11);
            ly += 16;
        }
        write_file(file, ch.render(title, "sampler tolerance (tighter left)", ylabel), log);
    };
    draw(score, dir + "/convergence_ile_" + rows[0].domain + ".svg",
         "score vs sampler tolerance — " + rows[0].domain, "inverse learning error");
    if (!seconds.empty())
        draw(seconds, dir + "/convergence_time_" + rows[0].domain + ".svg",
             "learning time vs sampler tolerance — " + rows[0].domain, "seconds");
}

} // namespace

void emit_plots(const std::string& csv_path, const std::string& out_dir, std::ostream& log) {
    std::vector<ResultRow> rows = read_results_csv(csv_path, 0);
    if (rows.empty()) throw ValidationError("no result rows in " + csv_path + "; nothing to plot");
    std::filesystem::create_directories(out_dir);
    std::vector<ResultRow> sweep, attack, conv;
    for (ResultRow& r : rows) {
        if (r.study == "sweep") sweep.push_back(std::move(r));
        else if (r.study == "attack") attack.push_back(std::move(r));
        else if (r.study == "convergence") conv.push_back(std::move(r));
    }
    if (!sweep.empty()) plot_sweep(sweep, out_dir, log);
    if (!attack.empty()) plot_attack(attack, out_dir, log);
    if (!conv.empty()) plot_convergence(conv, out_dir, log);
}

void write_report(std::span<const ResultRow> rows, std::ostream& os) {
    std::vector<ResultRow> sweep, attack, conv;
    int errors = 0;
    for (const ResultRow& r : rows) {
        if (r.outcome == "error") {
            ++errors;
            continue; // failed cells carry no measurements
        }
        if (r.study == "sweep") sweep.push_back(r);
        else if (r.study == "attack") attack.push_back(r);
        else if (r.study == "convergence") conv.push_back(r);
    }
    if (errors > 0) os << "!! " << errors << " failed cell(s) excluded from every aggregate\n";

    if (!sweep.empty()) {
        os << "== noise sweep ==\n";
        std::map<std::string, std::map<double, std::map<uint64_t, double>>> by_label;
        for (const ResultRow& r : sweep) by_label[series_label(r)][r.noise][r.seed] = r.ile;
        for (auto& [label, by_noise] : by_label) {
            std::vector<double> xs, ys;
            for (auto& [noise, by_seed] : by_noise) {
                std::vector<double> scores;
                for (auto& [seed, v] : by_seed) scores.push_back(v);
                os << fmt("  %-28s noise=%-8.4g mean_ile=%-10.4g n=%zu\n", label.c_str(), noise,
                          mean(scores), scores.size());
                for (auto& [seed, v] : by_seed) {
                    xs.push_back(noise);
                    ys.push_back(v);
                }
            }
            if (by_noise.size() > 1)
                os << fmt("  %-28s spearman(noise, ile) = %.3f\n", label.c_str(), spearman(xs, ys));
        }
        // paired tests between every pair of labels sharing noise and seeds
        std::vector<std::string> labels;
        for (auto& [label, _] : by_label) labels.push_back(label);
        for (size_t i = 0; i < labels.size(); ++i)
            for (size_t j = i + 1; j < labels.size(); ++j)
                for (auto& [noise, a_seeds] : by_label[labels[i]]) {
                    auto nb = by_label[labels[j]].find(noise);
                    if (nb == by_label[labels[j]].end()) continue;
                    std::vector<double> a, b;
                    for (auto& [seed, v] : a_seeds) {
                        auto it = nb->second.find(seed);
                        if (it == nb->second.end()) continue;
                        a.push_back(v);
                        b.push_back(it->second);
                    }
                    if (a.size() < 2) continue;
                    os << fmt("  paired |ile| test %s vs %s at noise=%.4g: "
                              "means %.4g / %.4g, p=%.4f (n=%zu)\n",
                              labels[i].c_str(), labels[j].c_str(), noise, mean(a), mean(b),
                              paired_permutation_pvalue(a, b), a.size());
                }
    }

    if (!attack.empty()) {
        os << "== infiltration ==\n";
        std::map<std::string, std::map<uint64_t, std::pair<int, int>>> tally;
        for (const ResultRow& r : attack) {
            auto& t = tally[r.method][r.seed];
            t.first += r.success == 1;
            t.second += 1;
        }
        std::map<std::string, std::vector<double>> per_seed_rate;
        for (auto& [m, seeds] : tally) {
            int wins = 0, n = 0;
            for (auto& [seed, t] : seeds) {
                wins += t.first;
                n += t.second;
                per_seed_rate[m].push_back(static_cast<double>(t.first) / t.second);
            }
            os << fmt("  %-16s success %d/%d = %.3f\n", m.c_str(), wins, n,
                      static_cast<double>(wins) / n);
        }
        std::vector<std::string> ms;
        for (auto& [m, _] : per_seed_rate) ms.push_back(m);
        for (size_t i = 0; i < ms.size(); ++i)
            for (size_t j = i + 1; j < ms.size(); ++j) {
                auto &a = per_seed_rate[ms[i]], &b = per_seed_rate[ms[j]];
                if (a.size() != b.size() || a.size() < 2) continue;
                os << fmt("  paired success test %s vs %s: p=%.4f (n=%zu)\n", ms[i].c_str(),
                          ms[j].c_str(), paired_permutation_pvalue(a, b), a.size());
            }
    }

    if (!conv.empty()) {
        os << "== sampler tolerance ==\n";
        // label -> epsilon -> (scores, seconds)
        std::map<std::string, std::map<double, std::pair<std::vector<double>, std::vector<double>>>>
            by_label;
        for (const ResultRow& r : conv) {
            if (std::isnan(r.epsilon) || std::isnan(r.ile)) continue;
            auto& cell = by_label[series_label(r)][r.epsilon];
            cell.first.push_back(r.ile);
            if (!std::isnan(r.wall_time)) cell.second.push_back(r.wall_time);
        }
        for (auto& [label, by_eps] : by_label) {
            for (auto& [eps, cell] : by_eps)
                os << fmt("  %-28s epsilon=%-8.4g mean_ile=%-10.4g mean_seconds=%-10.4g n=%zu\n",
                          label.c_str(), eps, mean(cell.first),
                          cell.second.empty() ? 0.0 : mean(cell.second), cell.first.size());
            if (by_eps.size() > 1) {
                auto& loosest = *by_eps.rbegin(); // largest tolerance
                auto& tightest = *by_eps.begin(); // smallest tolerance
                os << fmt("  %-28s tightening %.4g -> %.4g: mean_ile %.4g -> %.4g, "
                          "mean_seconds %.4g -> %.4g\n",
                          label.c_str(), loosest.first, tightest.first, mean(loosest.second.first),
                          mean(tightest.second.first),
                          loosest.second.second.empty() ? 0.0 : mean(loosest.second.second),
                          tightest.second.second.empty() ? 0.0 : mean(tightest.second.second));
            }
        }
    }
}

} // namespace rirl
