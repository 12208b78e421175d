#include "rirl/world.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <queue>
#include <sstream>
#include <unistd.h> // environ

namespace rirl {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::string rtrim(const std::string& s) {
    size_t b = s.find_last_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    return s.substr(0, b + 1);
}

double parse_double(const std::string& key, const std::string& raw) {
    try {
        size_t pos = 0;
        double v = std::stod(raw, &pos);
        if (pos != raw.size()) throw std::invalid_argument(raw);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected a number, got '" + raw + "'");
    }
}

int parse_int(const std::string& key, const std::string& raw) {
    try {
        size_t pos = 0;
        long v = std::stol(raw, &pos);
        if (pos != raw.size()) throw std::invalid_argument(raw);
        return static_cast<int>(v);
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected an integer, got '" + raw + "'");
    }
}

std::vector<double> parse_double_list(const std::string& key, const std::string& raw) {
    std::vector<double> out;
    std::stringstream ss(raw);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        out.push_back(parse_double(key, item));
    }
    if (out.empty()) throw ConfigError("key '" + key + "': empty list");
    return out;
}

Heading parse_heading(const std::string& key, const std::string& raw) {
    if (raw == "N") return Heading::North;
    if (raw == "E") return Heading::East;
    if (raw == "S") return Heading::South;
    if (raw == "W") return Heading::West;
    throw ConfigError("key '" + key + "': heading must be one of N,E,S,W, got '" + raw + "'");
}

} // namespace

ParsedConfig parse_config_text(const std::string& text) {
    ParsedConfig cfg;
    std::stringstream ss(text);
    std::string line;
    bool in_layout = false;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        if (in_layout) {
            std::string row = rtrim(line);
            if (row.empty() && cfg.layout.empty()) continue; // leading blanks
            if (row.empty()) break;                          // blank line ends the grid
            cfg.layout.push_back(row);
            continue;
        }
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t == "layout:") {
            in_layout = true;
            continue;
        }
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value', got '" + t + "'");
        std::string key = trim(t.substr(0, eq));
        std::string val = trim(t.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        if (cfg.values.count(key))
            throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
        cfg.values[key] = val;
    }
    return cfg;
}

ParsedConfig load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::stringstream buf;
    buf << f.rdbuf();
    return parse_config_text(buf.str());
}

void apply_env_overrides(ParsedConfig& cfg, const std::string& prefix) {
    for (char** e = environ; e && *e; ++e) {
        std::string entry(*e);
        size_t eq = entry.find('=');
        if (eq == std::string::npos || eq <= prefix.size()) continue;
        if (entry.compare(0, prefix.size(), prefix) != 0) continue;
        std::string key;
        for (size_t i = prefix.size(); i < eq; ++i)
            key += static_cast<char>(std::tolower(static_cast<unsigned char>(entry[i])));
        cfg.values[key] = entry.substr(eq + 1);
    }
}

std::string canonical_config_text(const ParsedConfig& cfg) {
    std::string out;
    for (const auto& [key, value] : cfg.values) { // std::map iterates sorted
        out += key;
        out += '=';
        out += value;
        out += '\n';
    }
    if (!cfg.layout.empty()) {
        out += "layout:\n";
        for (const auto& row : cfg.layout) {
            out += row;
            out += '\n';
        }
    }
    return out;
}

uint64_t config_hash(const ParsedConfig& cfg) {
    return fnv1a64(canonical_config_text(cfg));
}

const char* domain_name(DomainKind d) {
    switch (d) {
    case DomainKind::DroneCorridor: return "drone_corridor";
    case DomainKind::PatrolPenetration: return "patrol_penetration";
    }
    return "?";
}

WorldConfig world_config_from(const ParsedConfig& cfg) {
    WorldConfig w;
    auto get = [&](const char* key) -> const std::string* {
        auto it = cfg.values.find(key);
        return it == cfg.values.end() ? nullptr : &it->second;
    };
    const std::string* dom = get("domain");
    if (!dom) throw ConfigError("missing required key 'domain'");
    if (*dom == "drone_corridor") w.domain = DomainKind::DroneCorridor;
    else if (*dom == "patrol_penetration") w.domain = DomainKind::PatrolPenetration;
    else throw ConfigError("unknown domain '" + *dom + "'");

    if (auto* v = get("cell_size")) w.cell_size = parse_double("cell_size", *v);
    if (auto* v = get("epoch_duration")) w.epoch_duration = parse_double("epoch_duration", *v);
    if (auto* v = get("samples_per_second")) w.samples_per_second = parse_double("samples_per_second", *v);
    if (auto* v = get("sample_window_min_fraction"))
        w.sample_window_min_fraction = parse_double("sample_window_min_fraction", *v);
    if (auto* v = get("source_strength")) w.source_strength = parse_double("source_strength", *v);
    if (auto* v = get("source_offset")) w.source_offset = parse_double("source_offset", *v);
    if (auto* v = get("intensity_ceiling")) w.intensity_ceiling = parse_double("intensity_ceiling", *v);
    if (auto* v = get("likelihood_sigma")) w.likelihood_sigma = parse_double("likelihood_sigma", *v);
    if (auto* v = get("view_range_cells")) w.view.range_cells = parse_double("view_range_cells", *v);
    if (auto* v = get("view_half_angle_deg")) w.view.half_angle_deg = parse_double("view_half_angle_deg", *v);
    if (auto* v = get("learner_heading")) w.learner_heading = parse_heading("learner_heading", *v);
    if (auto* v = get("horizon")) w.horizon = parse_int("horizon", *v);
    if (auto* v = get("discount")) w.discount = parse_double("discount", *v);
    if (auto* v = get("beta")) w.beta = parse_double("beta", *v);
    if (auto* v = get("theta_true")) w.theta_true = parse_double_list("theta_true", *v);
    if (auto* v = get("sensor")) {
        if (*v == "sound_only") w.sensor = SensorKind::SoundOnly;
        else if (*v == "vision_only") w.sensor = SensorKind::VisionOnly;
        else if (*v == "fused") w.sensor = SensorKind::Fused;
        else throw ConfigError("unknown sensor '" + *v + "'");
    }
    w.layout = cfg.layout;

    if (w.cell_size <= 0) throw ConfigError("cell_size must be positive");
    if (w.epoch_duration <= 0) throw ConfigError("epoch_duration must be positive");
    if (w.samples_per_second <= 0) throw ConfigError("samples_per_second must be positive");
    if (w.sample_window_min_fraction <= 0 || w.sample_window_min_fraction > 1)
        throw ConfigError("sample_window_min_fraction must be in (0, 1]");
    if (w.source_strength <= 0) throw ConfigError("source_strength must be positive");
    if (w.source_offset < 0 || w.source_offset >= 0.5 * w.cell_size)
        throw ConfigError("source_offset must lie in [0, cell_size/2)");
    if (w.intensity_ceiling <= 0) throw ConfigError("intensity_ceiling must be positive");
    if (w.likelihood_sigma <= 0) throw ConfigError("likelihood_sigma must be positive");
    if (w.view.range_cells <= 0) throw ConfigError("view_range_cells must be positive");
    if (w.view.half_angle_deg <= 0 || w.view.half_angle_deg > 180)
        throw ConfigError("view_half_angle_deg must be in (0, 180]");
    if (w.horizon < 1) throw ConfigError("horizon must be at least 1");
    if (w.discount <= 0 || w.discount >= 1) throw ConfigError("discount must be in (0, 1)");
    if (w.beta < 0) throw ConfigError("beta must be non-negative");
    if (w.layout.empty()) throw ConfigError("missing layout block");
    return w;
}

// --- grid helpers ----------------------------------------------------------

bool World::wall(int r, int c) const {
    if (r < 0 || r >= rows || c < 0 || c >= cols) return true;
    char ch = static_cast<size_t>(c) < grid[r].size() ? grid[r][c] : '#';
    return ch == '#';
}

Vec2 World::cell_center(int f) const {
    int r = f / cols, c = f % cols;
    return {(c + 0.5) * cfg.cell_size, (r + 0.5) * cfg.cell_size};
}

bool World::sees(int from_flat, Heading h, int target_flat, const ViewGeometry& g) const {
    if (from_flat == target_flat) return true;
    Vec2 a = cell_center(from_flat);
    Vec2 b = cell_center(target_flat);
    Vec2 d = b - a;
    double dist = norm(d);
    if (dist > g.range_cells * cfg.cell_size + 1e-9) return false;
    Vec2 hv = heading_vec(h);
    double cos_view = std::cos(g.half_angle_deg * M_PI / 180.0);
    if (dot(d, hv) / dist < cos_view - 1e-12) return false;
    // march the sight line; any wall cell underneath an interior point blocks it
    int n = static_cast<int>(std::ceil(dist / (0.25 * cfg.cell_size)));
    for (int i = 1; i < n; ++i) {
        double t = static_cast<double>(i) / n;
        Vec2 p = {a.x + t * d.x, a.y + t * d.y};
        int cc = static_cast<int>(std::floor(p.x / cfg.cell_size));
        int rr = static_cast<int>(std::floor(p.y / cfg.cell_size));
        if (wall(rr, cc)) return false;
    }
    return true;
}

std::vector<uint8_t> World::learner_view_mask() const {
    std::vector<uint8_t> mask(mdp.states.size(), 0);
    for (size_t s = 0; s < mdp.states.size(); ++s)
        mask[s] = sees(listener_cell, cfg.learner_heading, mdp.states[s].cell, cfg.view) ? 1 : 0;
    return mask;
}

MotionSegment World::segment_of(int s, int a) const {
    const State& st = mdp.states[static_cast<size_t>(s)];
    Vec2 hv = heading_vec(st.heading);
    Vec2 p0 = cell_center(st.cell) + cfg.source_offset * hv;
    // intended effect of the action; the fitted curve describes the nominal motion
    int s_next = -1;
    {
        double best = -1.0;
        for (int j = 0; j < mdp.num_states(); ++j)
            if (mdp.trans(s, a, j) > best) { best = mdp.trans(s, a, j); s_next = j; }
    }
    const State& nx = mdp.states[static_cast<size_t>(s_next)];
    Vec2 p1 = cell_center(nx.cell) + cfg.source_offset * heading_vec(nx.heading);
    Vec2 v = (1.0 / cfg.epoch_duration) * (p1 - p0);
    return {p0, v, 0.0};
}

ObservationModel World::observation_model(SensorKind kind) const {
    ObservationModel m;
    m.kind = kind;
    m.listener = listener;
    m.sigma = cfg.likelihood_sigma;
    m.epoch_duration = cfg.epoch_duration;
    m.source_strength = cfg.source_strength;
    m.num_states = static_cast<int>(mdp.states.size());
    m.num_actions = mdp.num_actions;
    m.view_mask = has_vision ? learner_view_mask() : std::vector<uint8_t>(mdp.states.size(), 0);
    // snapshot the segment table so the model never dangles into this World
    std::vector<MotionSegment> segs;
    segs.reserve(static_cast<size_t>(m.num_states) * m.num_actions);
    for (int s = 0; s < m.num_states; ++s)
        for (int a = 0; a < m.num_actions; ++a) segs.push_back(segment_of(s, a));
    int A = m.num_actions;
    m.segment_of = [segs = std::move(segs), A](int s, int a) {
        return segs[static_cast<size_t>(s) * A + a];
    };
    return m;
}

HiddenMdp World::hidden(SensorKind kind) const {
    return {mdp, feats, observation_model(kind)};
}

// --- domain construction ----------------------------------------------------

namespace {

struct GridScan {
    std::vector<std::string> grid;
    int rows = 0, cols = 0;
    std::vector<int> patrol_cells; // flat ids, ascending
    int p_cell = -1, l_cell = -1, g_cell = -1;
};

GridScan scan_layout(const std::vector<std::string>& layout) {
    GridScan g;
    g.grid = layout;
    g.rows = static_cast<int>(layout.size());
    for (const auto& row : layout) g.cols = std::max(g.cols, static_cast<int>(row.size()));
    for (int r = 0; r < g.rows; ++r) {
        for (int c = 0; c < static_cast<int>(layout[r].size()); ++c) {
            char ch = layout[r][c];
            int flat = r * g.cols + c;
            switch (ch) {
            case '#': case '.': break;
            case '=': g.patrol_cells.push_back(flat); break;
            case 'P':
                if (g.p_cell >= 0) throw ConfigError("layout has more than one 'P'");
                g.p_cell = flat;
                g.patrol_cells.push_back(flat);
                break;
            case 'L':
                if (g.l_cell >= 0) throw ConfigError("layout has more than one 'L'");
                g.l_cell = flat;
                break;
            case 'G':
                if (g.g_cell >= 0) throw ConfigError("layout has more than one 'G'");
                g.g_cell = flat;
                break;
            default:
                throw ConfigError(std::string("layout: unknown cell character '") + ch + "'");
            }
        }
    }
    if (g.p_cell < 0) throw ConfigError("layout needs a 'P' patroller start");
    if (g.l_cell < 0) throw ConfigError("layout needs an 'L' listener cell");
    std::sort(g.patrol_cells.begin(), g.patrol_cells.end());
    return g;
}

bool patrol_walkable(const GridScan& g, int r, int c) {
    if (r < 0 || r >= g.rows || c < 0 || c >= g.cols) return false;
    char ch = static_cast<size_t>(c) < g.grid[r].size() ? g.grid[r][c] : '#';
    return ch == '=' || ch == 'P';
}

int step_cell(const GridScan& g, int flat, Heading h) {
    int r = flat / g.cols, c = flat % g.cols;
    Vec2 hv = heading_vec(h);
    int nr = r + static_cast<int>(hv.y);
    int nc = c + static_cast<int>(hv.x);
    return patrol_walkable(g, nr, nc) ? nr * g.cols + nc : flat;
}

// Shared skeleton: enumerate patrol-cell x heading states, lay down the
// noisy-effect transition kernel, and attach the two movement features.
World assemble(const WorldConfig& cfg, const GridScan& scan, std::vector<Heading> headings,
               std::vector<std::string> action_names, int forward_action, int turn_action,
               bool has_vision) {
    World w;
    w.cfg = cfg;
    w.grid = scan.grid;
    w.rows = scan.rows;
    w.cols = scan.cols;
    w.headings = std::move(headings);
    w.action_names = std::move(action_names);
    w.forward_action = forward_action;
    w.turn_action = turn_action;
    w.has_vision = has_vision;
    w.listener_cell = scan.l_cell;
    w.goal_cell = scan.g_cell;
    w.start_cell = scan.p_cell;

    const int H = static_cast<int>(w.headings.size());
    const int A = static_cast<int>(w.action_names.size());
    w.state_of_cell_heading.assign(static_cast<size_t>(scan.rows * scan.cols) * 4, -1);
    for (int cell : scan.patrol_cells) {
        for (int hi = 0; hi < H; ++hi) {
            w.state_of_cell_heading[static_cast<size_t>(cell) * 4 +
                                    static_cast<size_t>(w.headings[hi])] =
                static_cast<int>(w.mdp.states.size());
            w.mdp.states.push_back({cell, w.headings[hi]});
        }
    }
    const int S = static_cast<int>(w.mdp.states.size());
    w.mdp.num_actions = A;
    w.mdp.horizon = cfg.horizon;
    w.mdp.discount = cfg.discount;

    auto state_id = [&](int cell, Heading h) {
        int id = w.state_of_cell_heading[static_cast<size_t>(cell) * 4 + static_cast<size_t>(h)];
        if (id < 0) throw Error("internal: state lookup off the patrol lane");
        return id;
    };

    auto turn_of = [&](Heading h) {
        if (H == 2) return h == Heading::East ? Heading::West : Heading::East; // about-face
        // quarter turn to the left: N -> W -> S -> E -> N
        switch (h) {
        case Heading::North: return Heading::West;
        case Heading::West: return Heading::South;
        case Heading::South: return Heading::East;
        case Heading::East: return Heading::North;
        }
        return h;
    };

    // deterministic outcome of each action when it succeeds
    auto effect = [&](int s, int a) -> int {
        const State& st = w.mdp.states[static_cast<size_t>(s)];
        if (a == w.forward_action) return state_id(step_cell(scan, st.cell, st.heading), st.heading);
        if (a == w.turn_action) return state_id(st.cell, turn_of(st.heading));
        return s;
    };

    w.mdp.transition.assign(static_cast<size_t>(S) * A * S, 0.0);
    for (int s = 0; s < S; ++s) {
        for (int a = 0; a < A; ++a) {
            double* row = &w.mdp.transition[w.mdp.tindex(s, a, 0)];
            // the chosen action usually works; each alternative slips in occasionally
            row[effect(s, a)] += 0.9;
            for (int other = 0; other < A; ++other)
                if (other != a) row[effect(s, other)] += 0.05;
        }
    }

    w.mdp.start.assign(S, 0.0);
    int start_heading = -1;
    for (int hi = 0; hi < H; ++hi) {
        if (step_cell(scan, scan.p_cell, w.headings[hi]) != scan.p_cell) { start_heading = hi; break; }
    }
    if (start_heading < 0) throw ConfigError("patroller start cell has no walkable neighbor");
    w.mdp.start[static_cast<size_t>(state_id(scan.p_cell, w.headings[start_heading]))] = 1.0;

    // features: did the agent actually advance, did it turn
    int fwd = w.forward_action, trn = w.turn_action;
    w.feats = FeatureSet(w.mdp, 2, [&scan, fwd, trn](const State& st, int a, double* f) {
        bool open_ahead = step_cell(scan, st.cell, st.heading) != st.cell;
        f[0] = (a == fwd && open_ahead) ? 1.0 : 0.0;
        f[1] = (a == trn) ? 1.0 : 0.0;
    });

    if (cfg.theta_true.size() != 2)
        throw ConfigError("theta_true must have one weight per feature (2)");
    w.theta_true.theta = cfg.theta_true;

    w.walkable.assign(static_cast<size_t>(scan.rows) * scan.cols, 0);
    for (int r = 0; r < scan.rows; ++r)
        for (int c = 0; c < scan.cols; ++c) {
            char ch = static_cast<size_t>(c) < scan.grid[r].size() ? scan.grid[r][c] : '#';
            if (ch != '#') w.walkable[static_cast<size_t>(w.flat(r, c))] = 1;
        }

    w.listener = w.cell_center(scan.l_cell);

    // the microphone must never sit on a source path: that breaks every fit
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) {
            try {
                (void)predicted_coeffs(w.segment_of(s, a), w.listener, cfg.source_strength,
                                       cfg.epoch_duration);
            } catch (const SingularityError&) {
                throw ConfigError("listener lies on the motion path of state " + std::to_string(s) +
                                  ", action " + std::to_string(a) + "; move 'L' off the lane");
            }
        }

    validate_mdp(w.mdp);
    return w;
}

void require_connected_lane(const GridScan& g) {
    if (g.patrol_cells.empty()) throw ConfigError("layout has no patrol lane ('=') cells");
    std::vector<uint8_t> seen(static_cast<size_t>(g.rows) * g.cols, 0);
    std::queue<int> q;
    q.push(g.patrol_cells[0]);
    seen[static_cast<size_t>(g.patrol_cells[0])] = 1;
    int count = 0;
    while (!q.empty()) {
        int f = q.front();
        q.pop();
        ++count;
        int r = f / g.cols, c = f % g.cols;
        const int dr[] = {-1, 1, 0, 0}, dc[] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
            int nr = r + dr[k], nc = c + dc[k];
            if (!patrol_walkable(g, nr, nc)) continue;
            int nf = nr * g.cols + nc;
            if (!seen[static_cast<size_t>(nf)]) { seen[static_cast<size_t>(nf)] = 1; q.push(nf); }
        }
    }
    if (count != static_cast<int>(g.patrol_cells.size()))
        throw ConfigError("patrol lane is not connected");
}

} // namespace

World build_drone_domain(const WorldConfig& cfg) {
    GridScan scan = scan_layout(cfg.layout);
    require_connected_lane(scan);
    // the corridor is one straight run of lane cells
    bool same_row = true, same_col = true;
    for (int f : scan.patrol_cells) {
        if (f / scan.cols != scan.patrol_cells[0] / scan.cols) same_row = false;
        if (f % scan.cols != scan.patrol_cells[0] % scan.cols) same_col = false;
    }
    if (!same_row && !same_col) throw ConfigError("drone corridor must be a straight lane");
    std::vector<Heading> headings = same_row ? std::vector<Heading>{Heading::East, Heading::West}
                                             : std::vector<Heading>{Heading::North, Heading::South};
    return assemble(cfg, scan, std::move(headings), {"forward", "turn_around", "hover"},
                    /*forward=*/0, /*turn=*/1, /*vision=*/false);
}

World build_patrol_domain(const WorldConfig& cfg) {
    GridScan scan = scan_layout(cfg.layout);
    require_connected_lane(scan);
    if (scan.g_cell < 0) throw ConfigError("penetration layout needs a 'G' goal cell");
    World w = assemble(cfg, scan,
                       {Heading::North, Heading::East, Heading::South, Heading::West},
                       {"turn_left", "forward", "noop"},
                       /*forward=*/1, /*turn=*/0, /*vision=*/true);
    auto dist = walk_distances(w, w.goal_cell);
    if (dist[static_cast<size_t>(w.listener_cell)] < 0)
        throw ConfigError("goal 'G' is unreachable from the entry cell 'L'");
    return w;
}

World build_world(const WorldConfig& cfg) {
    switch (cfg.domain) {
    case DomainKind::DroneCorridor: return build_drone_domain(cfg);
    case DomainKind::PatrolPenetration: return build_patrol_domain(cfg);
    }
    throw ConfigError("unknown domain");
}

} // namespace rirl
