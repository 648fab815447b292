#include "laco/scenario.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "laco/chsa.hpp"
#include "laco/error.hpp"
#include "laco/fusion.hpp"
#include "laco/hazard_model.hpp"
#include "laco/ild.hpp"

namespace laco {

namespace {

constexpr std::array<std::string_view, 5> kParadigmNames = {"noncollab", "language", "visual", "naivelatent", "laco"};
constexpr std::array<std::string_view, kInfractionKinds> kInfractionNames = {
    "collision_pedestrian", "collision_vehicle", "collision_static", "red_light",
    "stop_sign",            "timeout",           "yield_emergency"};
constexpr std::array<double, kInfractionKinds> kPenalties = {0.50, 0.60, 0.65, 0.70, 0.80, 0.70, 0.70};

std::string lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

int sign(int v) { return (v > 0) - (v < 0); }

}  // namespace

std::string_view paradigm_name(Paradigm p) { return kParadigmNames[static_cast<std::size_t>(p)]; }

Paradigm parse_paradigm(std::string_view name) {
    const std::string n = lower(name);
    for (std::size_t i = 0; i < kParadigmNames.size(); ++i)
        if (n == kParadigmNames[i]) return static_cast<Paradigm>(i);
    if (n == "naive_latent" || n == "naive") return Paradigm::NaiveLatent;
    if (n == "non_collab" || n == "ego") return Paradigm::NonCollab;
    throw ConfigError("unknown paradigm '" + std::string(name) + "'");
}

std::string_view infraction_name(Infraction i) { return kInfractionNames[static_cast<std::size_t>(i)]; }
double penalty(Infraction i) { return kPenalties[static_cast<std::size_t>(i)]; }

double infraction_score(const std::array<std::uint32_t, kInfractionKinds>& counts) {
    double is = 1.0;
    for (std::size_t k = 0; k < kInfractionKinds; ++k)
        for (std::uint32_t n = 0; n < counts[k]; ++n) is *= kPenalties[k];
    return is;
}

std::string_view outcome_name(Outcome o) {
    switch (o) {
        case Outcome::Running: return "running";
        case Outcome::Goal: return "goal";
        case Outcome::Blocked: return "blocked";
        case Outcome::Timeout: return "timeout";
    }
    return "?";
}

void RunConfig::validate() const {
    channel.validate();
    if (num_layers < 2) throw ConfigError("layers must be >= 2");
    if (!(retention > 0.0 && retention <= 1.0)) throw ConfigError("rho must lie in (0, 1]");
    if (!(l_comm_fraction > 0.0 && l_comm_fraction <= 1.0)) throw ConfigError("l_comm_fraction must lie in (0, 1]");
    if (!(cell_size_m > 0.0)) throw ConfigError("cell_size_m must be positive");
    if (tick_budget == 0) throw ConfigError("tick budget must be positive");
    if (blocked_ticks == 0) throw ConfigError("blocked_ticks must be positive");
    if (view_radius < 1) throw ConfigError("view_radius must be >= 1");
    if (path_lookahead < 1) throw ConfigError("lookahead must be >= 1");
    if (max_speed < 1) throw ConfigError("max_speed must be >= 1");
}

// ---------------------------------------------------------------------------
// Scenario files

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string_view> words(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
        const std::size_t b = i;
        while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
        if (i > b) out.push_back(s.substr(b, i - b));
    }
    return out;
}

struct LineParser {
    std::string_view origin;
    std::size_t line = 0;

    [[noreturn]] void fail(const std::string& msg) const {
        throw ConfigError(std::string(origin) + ":" + std::to_string(line) + ": " + msg);
    }

    template <typename T>
    T number(std::string_view s) const {
        T v{};
        const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size()) fail("bad number '" + std::string(s) + "'");
        return v;
    }

    Cell cell(std::string_view s) const {
        const auto comma = s.find(',');
        if (comma == std::string_view::npos) fail("expected r,c but got '" + std::string(s) + "'");
        return {number<int>(s.substr(0, comma)), number<int>(s.substr(comma + 1))};
    }

    bool flag(std::string_view s) const {
        const std::string v = lower(s);
        if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
        if (v == "0" || v == "false" || v == "off" || v == "no") return false;
        fail("bad boolean '" + std::string(s) + "'");
    }
};

void check_spec(const ScenarioSpec& spec, std::string_view origin) {
    auto fail = [&](const std::string& m) { throw ConfigError(std::string(origin) + ": " + m); };
    if (spec.grid.empty()) fail("no grid rows");
    const std::size_t cols = spec.grid.front().size();
    for (const auto& r : spec.grid) {
        if (r.size() != cols) fail("grid rows differ in length");
        for (char c : r)
            if (c != '#' && c != '.' && !(c >= '0' && c < '0' + static_cast<int>(vocab::kLanes)))
                fail(std::string("bad grid character '") + c + "'");
    }
    if (spec.agents.empty()) fail("no agents");
    auto road = [&](Cell c) {
        return c.row >= 0 && c.col >= 0 && c.row < static_cast<int>(spec.grid.size()) &&
               c.col < static_cast<int>(cols) && spec.grid[c.row][c.col] != '#';
    };
    std::vector<AgentId> ids;
    for (const auto& a : spec.agents) {
        ids.push_back(a.id);
        if (a.waypoints.empty()) fail("agent " + std::to_string(a.id) + " has no route");
        if (a.initial_speed < 0 || a.initial_speed > spec.config.max_speed)
            fail("agent " + std::to_string(a.id) + " speed outside [0, max_speed]");
        for (std::size_t i = 0; i < a.waypoints.size(); ++i) {
            if (!road(a.waypoints[i])) fail("agent " + std::to_string(a.id) + " waypoint off road");
            if (i > 0) {
                const Cell p = a.waypoints[i - 1], q = a.waypoints[i];
                if ((p.row != q.row && p.col != q.col) || p == q)
                    fail("agent " + std::to_string(a.id) + " waypoints must step along a row or column");
            }
        }
    }
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) fail("duplicate agent id");
    for (const auto& h : spec.hazards) {
        if (!road(h.cell)) fail("hazard off road");
        if (h.clear_tick <= h.appear_tick) fail("hazard clears before it appears");
    }
    spec.config.validate();
}

}  // namespace

ScenarioSpec parse_scenario(std::string_view text, std::string_view origin) {
    ScenarioSpec spec;
    RunConfig& c = spec.config;
    LineParser lp{origin, 0};
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        std::string_view line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++lp.line;
        line = trim(line);
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) lp.fail("expected key = value");
        const std::string key = lower(trim(line.substr(0, eq)));
        const std::string_view value = trim(line.substr(eq + 1));
        const auto w = words(value);

        if (key == "row") {
            spec.grid.emplace_back(value);
        } else if (key == "name") {
            spec.name = std::string(value);
        } else if (key == "agent") {
            if (w.size() < 3) lp.fail("agent needs: id speed r,c [r,c ...]");
            AgentSpec a;
            a.id = lp.number<AgentId>(w[0]);
            a.initial_speed = lp.number<int>(w[1]);
            for (std::size_t i = 2; i < w.size(); ++i) a.waypoints.push_back(lp.cell(w[i]));
            spec.agents.push_back(std::move(a));
        } else if (key == "hazard") {
            if (w.empty() || w.size() > 3) lp.fail("hazard needs: r,c [appear [clear]]");
            HazardSpec h;
            h.cell = lp.cell(w[0]);
            if (w.size() > 1) h.appear_tick = lp.number<std::uint32_t>(w[1]);
            if (w.size() > 2) h.clear_tick = lp.number<std::uint32_t>(w[2]);
            spec.hazards.push_back(h);
        } else if (key == "paradigm") {
            try {
                c.paradigm = parse_paradigm(value);
            } catch (const ConfigError& e) {
                lp.fail(e.what());
            }
        } else if (key == "m") {
            c.deliberation_steps = lp.number<std::size_t>(value);
        } else if (key == "rho") {
            c.retention = lp.number<double>(value);
        } else if (key == "l_comm_fraction") {
            c.l_comm_fraction = lp.number<double>(value);
        } else if (key == "layers") {
            c.num_layers = lp.number<std::size_t>(value);
        } else if (key == "dtype") {
            const std::string v = lower(value);
            if (v == "f32") c.dtype = DType::F32;
            else if (v == "f16") c.dtype = DType::F16;
            else lp.fail("dtype must be f32 or f16");
        } else if (key == "range_m") {
            c.channel.range_m = lp.number<double>(value);
        } else if (key == "bandwidth_bytes_per_s") {
            c.channel.bandwidth_bytes_per_s = lp.number<double>(value);
        } else if (key == "base_latency_s") {
            c.channel.base_latency_s = lp.number<double>(value);
        } else if (key == "cell_size_m") {
            c.cell_size_m = lp.number<double>(value);
        } else if (key == "ticks") {
            c.tick_budget = lp.number<std::uint32_t>(value);
        } else if (key == "blocked_ticks") {
            c.blocked_ticks = lp.number<std::uint32_t>(value);
        } else if (key == "view_radius") {
            c.view_radius = lp.number<int>(value);
        } else if (key == "lookahead") {
            c.path_lookahead = lp.number<int>(value);
        } else if (key == "max_speed") {
            c.max_speed = lp.number<int>(value);
        } else if (key == "fuse_during_deliberation") {
            c.fuse_during_deliberation = lp.flag(value);
        } else if (key == "seed") {
            c.seed = lp.number<std::uint64_t>(value);
        } else {
            lp.fail("unknown key '" + key + "'");
        }
    }
    std::sort(spec.agents.begin(), spec.agents.end(), [](const AgentSpec& a, const AgentSpec& b) { return a.id < b.id; });
    check_spec(spec, origin);
    return spec;
}

ScenarioSpec load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open scenario " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    ScenarioSpec spec = parse_scenario(ss.str(), path.string());
    if (spec.name.empty()) spec.name = path.stem().string();
    return spec;
}

// ---------------------------------------------------------------------------
// World

World::World(const ScenarioSpec& spec) : grid_(spec.grid), cols_(static_cast<int>(spec.grid.front().size())) {
    for (const auto& a : spec.agents) {
        AgentState s;
        s.id = a.id;
        s.speed = a.initial_speed;
        s.route.push_back(a.waypoints.front());
        for (std::size_t i = 1; i < a.waypoints.size(); ++i) {
            Cell cur = a.waypoints[i - 1];
            const Cell dst = a.waypoints[i];
            const int dr = sign(dst.row - cur.row), dc = sign(dst.col - cur.col);
            while (!(cur == dst)) {
                cur = {cur.row + dr, cur.col + dc};
                s.route.push_back(cur);
            }
        }
        agents_.push_back(std::move(s));
    }
    for (const auto& h : spec.hazards) hazards_.push_back({h, false});
}

bool World::inside(Cell c) const { return c.row >= 0 && c.col >= 0 && c.row < rows() && c.col < cols_; }

bool World::drivable(Cell c) const { return inside(c) && grid_[c.row][c.col] != '#'; }

int World::lane(Cell c) const {
    if (!drivable(c)) return kNoLane;
    const char ch = grid_[c.row][c.col];
    return ch == '.' ? 0 : ch - '0';
}

bool World::hazard_active(std::size_t i) const {
    const auto& h = hazards_[i];
    return !h.consumed && tick_ >= h.spec.appear_tick && tick_ < h.spec.clear_tick;
}

std::optional<std::size_t> World::hazard_at(Cell c) const {
    for (std::size_t i = 0; i < hazards_.size(); ++i)
        if (hazards_[i].spec.cell == c && hazard_active(i)) return i;
    return std::nullopt;
}

bool World::visible(Cell from, Cell to) const {
    int r = from.row, c = from.col;
    const int dr = std::abs(to.row - r), dc = std::abs(to.col - c);
    const int sr = sign(to.row - r), sc = sign(to.col - c);
    int err = dc - dr;
    while (!(r == to.row && c == to.col)) {
        const int e2 = 2 * err;
        int nr = r, nc = c;
        if (e2 > -dr) {
            err -= dr;
            nc += sc;
        }
        if (e2 < dc) {
            err += dc;
            nr += sr;
        }
        if (nr != r && nc != c && (!drivable({nr, c}) || !drivable({r, nc}))) return false;
        r = nr;
        c = nc;
        if (!(r == to.row && c == to.col) && !drivable({r, c})) return false;
    }
    return true;
}

const AgentState& World::agent(AgentId id) const {
    for (const auto& a : agents_)
        if (a.id == id) return a;
    throw ConfigError("no agent with id " + std::to_string(id));
}

Cell World::heading(const AgentState& a, std::size_t index) const {
    if (a.route.size() < 2) return {-1, 0};
    const std::size_t i = std::min(index, a.route.size() - 2);
    return {a.route[i + 1].row - a.route[i].row, a.route[i + 1].col - a.route[i].col};
}

Cell World::route_cell(const AgentState& a, std::size_t index) const {
    const Cell h = heading(a, index);
    const Cell left{-h.col, h.row};
    const Cell base = a.route[index];
    return {base.row + a.lateral * left.row, base.col + a.lateral * left.col};
}

Cell World::position(const AgentState& a) const { return route_cell(a, a.progress); }

std::uint32_t World::path_lane_mask(const AgentState& a, int lookahead) const {
    std::uint32_t mask = 0;
    for (int k = 0; k < lookahead; ++k) {
        const std::size_t i = a.progress + static_cast<std::size_t>(k);
        if (i >= a.route.size()) break;
        const int l = lane(route_cell(a, i));
        if (l != kNoLane) mask |= 1u << l;
    }
    return mask;
}

Point World::location(const AgentState& a, double cell_size_m) const {
    const Cell c = position(a);
    return {c.col * cell_size_m, c.row * cell_size_m};
}

std::size_t observation_length(const RunConfig& config) {
    const auto side = static_cast<std::size_t>(2 * config.view_radius + 1);
    return side * side + 1;
}

std::vector<TokenId> observe(const World& world, AgentId id, const RunConfig& config) {
    const AgentState& self = world.agent(id);
    const Cell at = world.position(self);
    const Cell goal = world.route_cell(self, self.route.size() - 1);
    const int r = config.view_radius;
    std::vector<TokenId> out;
    out.reserve(observation_length(config));
    for (int dr = -r; dr <= r; ++dr) {
        for (int dc = -r; dc <= r; ++dc) {
            const Cell c{at.row + dr, at.col + dc};
            if (dr == 0 && dc == 0) {
                out.push_back(vocab::kSelf);
            } else if (!world.inside(c) || !world.visible(at, c)) {
                out.push_back(vocab::kOccluded);
            } else if (!world.drivable(c)) {
                out.push_back(vocab::kObstacle);
            } else if (world.hazard_at(c)) {
                out.push_back(vocab::hazard(static_cast<std::size_t>(world.lane(c))));
            } else if (std::any_of(world.agents().begin(), world.agents().end(), [&](const AgentState& o) {
                           return o.id != id && o.outcome == Outcome::Running && world.position(o) == c;
                       })) {
                out.push_back(vocab::kAgent);
            } else if (c == goal) {
                out.push_back(vocab::kGoal);
            } else {
                out.push_back(vocab::kClear);
            }
        }
    }
    out.push_back(vocab::marker(world.path_lane_mask(self, config.path_lookahead), self.speed == 0));
    return out;
}

// ---------------------------------------------------------------------------
// Episode

Model scenario_model(const ScenarioSpec& spec) {
    const RunConfig& c = spec.config;
    const std::size_t n = spec.agents.size();
    // Largest ego context: a re-prefill of every received language message
    // plus the observation, or the observation, latent steps and decision.
    const std::size_t need = observation_length(c) + c.deliberation_steps * std::max<std::size_t>(n, 1) + 2;
    return make_hazard_model(hazard_model_config(c.num_layers, std::max<std::size_t>(256, need)));
}

Episode::Episode(ScenarioSpec spec, const Model& model)
    : spec_(std::move(spec)), model_(model), world_(spec_) {
    spec_.config.validate();
    for (const auto& a : world_.agents()) {
        AgentMetrics m;
        m.agent = a.id;
        metrics_.push_back(m);
    }
    previous_inbox_.resize(world_.agents().size());
}

bool Episode::finished() const {
    return std::none_of(world_.agents().begin(), world_.agents().end(),
                        [](const AgentState& a) { return a.outcome == Outcome::Running; });
}

namespace {

std::uint64_t passes(const ForwardCounters& c) { return c.prefills + c.decode_steps; }

struct Thought {
    std::size_t index = 0;  // into world agents
    std::vector<TokenId> tokens;
    KVCache cache;
    std::vector<std::uint8_t> message;
    bool has_message = false;
    std::uint64_t passes = 0;
    std::uint64_t projections = 0;
};

}  // namespace

TickReport Episode::step() {
    const RunConfig& cfg = spec_.config;
    const Paradigm paradigm = cfg.paradigm;
    const std::size_t T = observation_length(cfg);
    const std::size_t m = cfg.deliberation_steps;
    const std::uint32_t tick = world_.tick();
    auto& agents = world_.agents();

    TickReport report;
    report.tick = tick;
    last_messages_.clear();

    std::vector<Thought> thoughts;
    for (std::size_t i = 0; i < agents.size(); ++i)
        if (agents[i].outcome == Outcome::Running) {
            thoughts.emplace_back();
            thoughts.back().index = i;
        }

    // Observe, prefill, deliberate, compose.
    for (auto& th : thoughts) {
        const AgentState& a = agents[th.index];
        const ForwardCounters before = model_.counters;
        th.tokens = observe(world_, a.id, cfg);
        PrefillResult pr = prefill(model_, th.tokens, a.id, false);
        th.cache = std::move(pr.cache);

        const bool latent = paradigm == Paradigm::NaiveLatent || paradigm == Paradigm::Laco;
        AttentionTrace latent_trace;
        if (latent && m > 0) {
            const AlignmentProjection& align = compute_alignment(model_);
            DeliberationResult d;
            if (cfg.fuse_during_deliberation && !previous_inbox_[th.index].empty()) {
                FusedContext ctx = attach_payloads(std::move(th.cache), previous_inbox_[th.index]);
                d = deliberate_fused(model_, align, pr.hidden, ctx, m);
                th.cache = std::move(ctx.ego);
            } else {
                d = deliberate(model_, align, pr.hidden, th.cache, m);
            }
            latent_trace = std::move(d.trace);
        }
        if (telemetry_ && !latent_trace.empty())
            telemetry_->traces.push_back({a.id, tick, static_cast<std::uint32_t>(T), latent_trace});

        switch (paradigm) {
            case Paradigm::NonCollab: break;
            case Paradigm::Language: {
                KVCache talk = th.cache;
                Vector h = pr.hidden;
                std::vector<TokenId> said;
                for (std::size_t k = 0; k < m; ++k) {
                    const Vector logits = project_to_logits(model_, h);
                    const auto tok = static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
                    said.push_back(tok);
                    h = decode_step(model_, model_.embedding(tok), talk, Origin::EgoLatent).hidden;
                }
                th.message = serialize_tokens(a.id, tick, said);
                th.has_message = true;
                break;
            }
            case Paradigm::Visual:
                th.message = serialize(make_payload(th.cache, T, model_.config.num_layers, a.id, tick, cfg.dtype));
                th.has_message = true;
                break;
            case Paradigm::NaiveLatent:
                th.message = serialize(make_payload(th.cache, T, model_.config.num_layers, a.id, tick, cfg.dtype));
                th.has_message = true;
                break;
            case Paradigm::Laco: {
                if (m == 0) {
                    if (!warned_no_latent_) {
                        warnings_.push_back("m = 0 under LACO: no latent trace, nothing transmitted");
                        warned_no_latent_ = true;
                    }
                    break;
                }
                const SaliencyVector s = saliency_scores(latent_trace, T, cfg.retention);
                const auto keep = select_topk(s);
                const ChsaCache chsa = build_chsa_cache(th.cache.slice(0, T), th.cache.slice(T, T + m), keep);
                th.message = serialize(distill(chsa, cfg.l_comm_fraction, a.id, tick, cfg.dtype));
                th.has_message = true;
                break;
            }
        }
        th.passes = passes(model_.counters) - passes(before);
        th.projections = model_.counters.logit_projections - before.logit_projections;
    }

    // Broadcast, delivered at the tick boundary in sender order.
    std::vector<std::vector<std::pair<AgentId, const std::vector<std::uint8_t>*>>> inbox(agents.size());
    for (auto& th : thoughts) {
        if (!th.has_message) continue;
        const AgentState& s = agents[th.index];
        AgentMetrics& sm = metrics_[th.index];
        sm.comm_bytes += th.message.size();
        sm.comm_latency_s += transfer_latency(cfg.channel, th.message.size());
        ++sm.messages_sent;
        last_messages_.emplace_back(s.id, th.message);
        for (auto& other : thoughts) {
            if (other.index == th.index) continue;
            const auto out = channel_send(cfg.channel, th.message.size(), world_.location(s, cfg.cell_size_m),
                                          world_.location(agents[other.index], cfg.cell_size_m));
            if (std::holds_alternative<Delivered>(out))
                inbox[other.index].emplace_back(s.id, &th.message);
            else
                ++sm.messages_dropped;
        }
    }

    // Decide.
    std::vector<TokenId> actions(agents.size(), vocab::kKeep);
    std::vector<std::vector<Payload>> received(agents.size());
    for (auto& th : thoughts) {
        AgentState& a = agents[th.index];
        const ForwardCounters before = model_.counters;
        const std::uint32_t mask = world_.path_lane_mask(a, cfg.path_lookahead);
        const TokenId marker = th.tokens.back();

        FusedContext ctx;
        if (paradigm == Paradigm::Language && !inbox[th.index].empty()) {
            std::vector<TokenId> prefix;
            for (const auto& [sender, bytes] : inbox[th.index]) {
                const auto said = deserialize_tokens(*bytes);
                prefix.insert(prefix.end(), said.begin(), said.end());
            }
            prefix.insert(prefix.end(), th.tokens.begin(), th.tokens.end());
            ctx.ego = prefill(model_, prefix, a.id, false).cache;
        } else {
            ctx.ego = std::move(th.cache);
            if (paradigm == Paradigm::Visual || paradigm == Paradigm::NaiveLatent || paradigm == Paradigm::Laco) {
                for (const auto& [sender, bytes] : inbox[th.index]) {
                    received[th.index].push_back(deserialize(*bytes));
                    attach(ctx, received[th.index].back());
                }
            }
        }
        CollaborativeResult r = collaborative_decode(model_, model_.embedding(marker), ctx);
        const TokenId action = argmax_action(r.logits);
        actions[th.index] = action;

        AgentTick at;
        at.agent = a.id;
        at.action = action;
        at.payload_bytes = th.has_message ? th.message.size() : 0;
        at.forward_passes = th.passes + passes(model_.counters) - passes(before);
        at.decoded_tokens = th.projections + model_.counters.logit_projections - before.logit_projections - 1;
        at.received = inbox[th.index].size();
        bool hazard_on_path = false;
        for (std::size_t h = 0; h < world_.hazards().size(); ++h) {
            if (!world_.hazard_active(h)) continue;
            const int l = world_.lane(world_.hazards()[h].spec.cell);
            if (l != kNoLane && (mask & (1u << l))) hazard_on_path = true;
        }
        at.spurious_brake = action == vocab::kBrake && !hazard_on_path;
        if (telemetry_) telemetry_->decisions.push_back({a.id, tick, r.attention});
        at.decision_attention = std::move(r.attention);

        AgentMetrics& am = metrics_[th.index];
        am.forward_passes += at.forward_passes;
        am.decoded_tokens += at.decoded_tokens;
        ++am.ticks;
        if (action == vocab::kBrake) ++am.brake_ticks;
        if (at.spurious_brake) ++am.spurious_brakes;
        report.agents.push_back(std::move(at));
    }
    if (cfg.fuse_during_deliberation) previous_inbox_ = std::move(received);

    // Act and move.
    auto log_infraction = [&](std::size_t i, Infraction k) {
        ++metrics_[i].infractions[static_cast<std::size_t>(k)];
        metrics_[i].infraction_log.push_back({tick, k});
    };
    for (auto& th : thoughts) {
        AgentState& a = agents[th.index];
        const TokenId act = actions[th.index];
        if (act == vocab::kAccel) a.speed = std::min(cfg.max_speed, a.speed + 1);
        else if (act == vocab::kBrake) a.speed = std::max(0, a.speed - 1);
        else if (act == vocab::kLeft || act == vocab::kRight) {
            AgentState shifted = a;
            shifted.lateral += act == vocab::kLeft ? 1 : -1;
            if (world_.drivable(world_.position(shifted))) {
                a.lateral = shifted.lateral;
            } else {
                log_infraction(th.index, Infraction::CollisionStatic);
                a.speed = 0;
            }
        }

        for (int s = 0; s < a.speed; ++s) {
            const std::size_t next = a.progress + 1;
            if (next >= a.route.size()) break;
            const Cell c = world_.route_cell(a, next);
            if (!world_.drivable(c)) {
                log_infraction(th.index, Infraction::CollisionStatic);
                a.speed = 0;
                break;
            }
            a.progress = next;
            if (const auto h = world_.hazard_at(c)) {
                log_infraction(th.index, Infraction::CollisionPedestrian);
                world_.hazards()[*h].consumed = true;
                a.speed = 0;
                break;
            }
        }

        if (act == vocab::kKeep && a.speed == 0) ++a.still_ticks;
        else a.still_ticks = 0;
    }

    // Vehicle contacts, once per pair per tick they newly share a cell.
    for (std::size_t x = 0; x < thoughts.size(); ++x) {
        for (std::size_t y = x + 1; y < thoughts.size(); ++y) {
            AgentState& a = agents[thoughts[x].index];
            AgentState& b = agents[thoughts[y].index];
            if (world_.position(a) == world_.position(b) && (a.speed > 0 || b.speed > 0)) {
                log_infraction(thoughts[x].index, Infraction::CollisionVehicle);
                log_infraction(thoughts[y].index, Infraction::CollisionVehicle);
                a.speed = 0;
                b.speed = 0;
            }
        }
    }

    world_.advance_tick();
    for (auto& th : thoughts) {
        AgentState& a = agents[th.index];
        if (a.progress + 1 == a.route.size()) {
            a.outcome = Outcome::Goal;
        } else if (a.still_ticks >= cfg.blocked_ticks) {
            a.outcome = Outcome::Blocked;
        } else if (world_.tick() >= cfg.tick_budget) {
            a.outcome = Outcome::Timeout;
            log_infraction(th.index, Infraction::Timeout);
        }
    }
    return report;
}

EpisodeMetrics Episode::metrics() const {
    EpisodeMetrics out;
    out.scenario = spec_.name;
    out.paradigm = spec_.config.paradigm;
    out.ticks = world_.tick();
    out.warnings = warnings_;
    for (std::size_t i = 0; i < metrics_.size(); ++i) {
        AgentMetrics m = metrics_[i];
        const AgentState& a = world_.agents()[i];
        m.outcome = a.outcome;
        m.rc = a.route.size() < 2 ? 100.0
                                  : 100.0 * static_cast<double>(a.progress) / static_cast<double>(a.route.size() - 1);
        m.is = infraction_score(m.infractions);
        m.ip = 1.0 - m.is;
        m.ds = m.rc * m.is;
        out.agents.push_back(std::move(m));
    }
    return out;
}

EpisodeMetrics Episode::run() {
    while (!finished()) step();
    return metrics();
}

EpisodeMetrics run_episode(const ScenarioSpec& spec, TelemetryLog* telemetry) {
    const Model model = scenario_model(spec);
    Episode ep(spec, model);
    ep.record_telemetry(telemetry);
    return ep.run();
}

// ---------------------------------------------------------------------------
// CSV

std::string metrics_csv_header() {
    std::string h = "scenario,paradigm,agent,outcome,ticks,rc,is,ip,ds";
    for (auto n : kInfractionNames) (h += ',') += n;
    h += ",comm_bytes,comm_latency_s,messages_sent,messages_dropped,forward_passes,decoded_tokens,brake_ticks,"
         "spurious_brakes";
    return h;
}

std::string metrics_csv_rows(const EpisodeMetrics& e, std::string_view prefix_values) {
    std::ostringstream out;
    for (const auto& m : e.agents) {
        if (!prefix_values.empty()) out << prefix_values << ',';
        out << e.scenario << ',' << paradigm_name(e.paradigm) << ',' << m.agent << ',' << outcome_name(m.outcome) << ','
            << m.ticks << ',' << format_real(m.rc) << ',' << format_real(m.is) << ',' << format_real(m.ip) << ','
            << format_real(m.ds);
        for (auto n : m.infractions) out << ',' << n;
        out << ',' << m.comm_bytes << ',' << format_real(m.comm_latency_s) << ',' << m.messages_sent << ','
            << m.messages_dropped << ',' << m.forward_passes << ',' << m.decoded_tokens << ',' << m.brake_ticks << ','
            << m.spurious_brakes << '\n';
    }
    return out.str();
}

std::string metrics_csv(const EpisodeMetrics& m) { return metrics_csv_header() + '\n' + metrics_csv_rows(m); }

SweepParam parse_sweep_param(std::string_view name) {
    const std::string n = lower(name);
    if (n == "m") return SweepParam::M;
    if (n == "rho") return SweepParam::Rho;
    if (n == "l_comm" || n == "l_comm_fraction") return SweepParam::LCommFraction;
    throw ConfigError("unknown sweep parameter '" + std::string(name) + "' (m, rho, l_comm)");
}

std::string_view sweep_param_name(SweepParam p) {
    switch (p) {
        case SweepParam::M: return "m";
        case SweepParam::Rho: return "rho";
        case SweepParam::LCommFraction: return "l_comm_fraction";
    }
    return "?";
}

std::vector<SweepRow> sweep(SweepParam param, const std::vector<double>& values,
                            const std::vector<ScenarioSpec>& scenarios) {
    if (values.empty()) throw ConfigError("sweep: no values");
    if (scenarios.empty()) throw ConfigError("sweep: no scenarios");
    std::vector<SweepRow> rows;
    for (double v : values) {
        for (const auto& base : scenarios) {
            ScenarioSpec s = base;
            switch (param) {
                case SweepParam::M:
                    if (v < 0 || v != std::floor(v)) throw ConfigError("sweep: m must be a non-negative integer");
                    s.config.deliberation_steps = static_cast<std::size_t>(v);
                    break;
                case SweepParam::Rho: s.config.retention = v; break;
                case SweepParam::LCommFraction: s.config.l_comm_fraction = v; break;
            }
            rows.push_back({s.name, v, run_episode(s)});
        }
    }
    return rows;
}

std::string sweep_csv(SweepParam param, const std::vector<SweepRow>& rows) {
    std::string out = std::string(sweep_param_name(param)) + ',' + metrics_csv_header() + '\n';
    for (const auto& r : rows) out += metrics_csv_rows(r.metrics, format_real(r.value));
    return out;
}

}  // namespace laco
