#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "laco/channel.hpp"
#include "laco/model.hpp"
#include "laco/payload.hpp"
#include "laco/telemetry.hpp"

namespace laco {

enum class Paradigm : std::uint8_t { NonCollab, Language, Visual, NaiveLatent, Laco };

std::string_view paradigm_name(Paradigm p);
// Accepts the names printed by paradigm_name, case-insensitive. Throws ConfigError.
Paradigm parse_paradigm(std::string_view name);

enum class Infraction : std::uint8_t {
    CollisionPedestrian,
    CollisionVehicle,
    CollisionStatic,
    RedLight,
    StopSign,
    Timeout,
    YieldEmergency,
};
inline constexpr std::size_t kInfractionKinds = 7;

std::string_view infraction_name(Infraction i);
double penalty(Infraction i);

struct InfractionEvent {
    std::uint32_t tick = 0;
    Infraction kind = Infraction::CollisionPedestrian;
};

// IS = prod_j p_j^{n_j}, evaluated kind by kind in enum order with one
// multiplication per occurrence.
double infraction_score(const std::array<std::uint32_t, kInfractionKinds>& counts);

// ---------------------------------------------------------------------------
// World

struct Cell {
    int row = 0;
    int col = 0;
    bool operator==(const Cell&) const = default;
};

inline constexpr int kNoLane = -1;

struct HazardSpec {
    Cell cell;
    std::uint32_t appear_tick = 0;
    std::uint32_t clear_tick = UINT32_MAX;  // active on [appear, clear)
};

struct AgentSpec {
    AgentId id = 0;
    int initial_speed = 0;
    std::vector<Cell> waypoints;  // consecutive waypoints share a row or a column
};

struct RunConfig {
    Paradigm paradigm = Paradigm::Laco;
    std::size_t deliberation_steps = 10;  // m
    double retention = 0.3;               // rho
    double l_comm_fraction = 0.1;
    std::size_t num_layers = 4;
    DType dtype = DType::F32;
    ChannelConfig channel;
    double cell_size_m = 10.0;
    std::uint32_t tick_budget = 200;
    std::uint32_t blocked_ticks = 10;
    int view_radius = 4;
    int path_lookahead = 4;
    int max_speed = 2;
    bool fuse_during_deliberation = false;
    std::uint64_t seed = 0;

    void validate() const;
};

struct ScenarioSpec {
    std::string name;
    std::vector<std::string> grid;  // '#' obstacle, '0'..'3' road on lane k, '.' road on lane 0
    std::vector<AgentSpec> agents;
    std::vector<HazardSpec> hazards;
    RunConfig config;
};

// Plain-text key/value format, one `key = value` per line, '#' comments:
//   name = occluded_corner_a
//   row = ###1111###          (repeated, top to bottom)
//   agent = <id> <speed> <r,c> <r,c> ...
//   hazard = <r,c> [appear [clear]]
//   paradigm, m, rho, l_comm_fraction, layers, dtype, range_m,
//   bandwidth_bytes_per_s, base_latency_s, cell_size_m, ticks,
//   blocked_ticks, view_radius, lookahead, max_speed,
//   fuse_during_deliberation, seed
// Throws ConfigError naming the offending line.
ScenarioSpec parse_scenario(std::string_view text, std::string_view origin = "<string>");
ScenarioSpec load_scenario(const std::filesystem::path& path);

enum class Outcome : std::uint8_t { Running, Goal, Blocked, Timeout };
std::string_view outcome_name(Outcome o);

struct AgentState {
    AgentId id = 0;
    std::vector<Cell> route;  // expanded cell-by-cell centre line
    std::size_t progress = 0; // index into route
    int lateral = 0;          // lane shift applied by LEFT / RIGHT
    int speed = 0;
    std::uint32_t still_ticks = 0;  // consecutive KEEP at zero speed
    Outcome outcome = Outcome::Running;
};

struct HazardState {
    HazardSpec spec;
    bool consumed = false;
};

class World {
public:
    explicit World(const ScenarioSpec& spec);

    int rows() const { return static_cast<int>(grid_.size()); }
    int cols() const { return cols_; }
    std::uint32_t tick() const { return tick_; }

    bool inside(Cell c) const;
    bool drivable(Cell c) const;
    int lane(Cell c) const;  // kNoLane off-road
    bool hazard_active(std::size_t i) const;
    // Active, unconsumed hazard at c, if any.
    std::optional<std::size_t> hazard_at(Cell c) const;
    // Grid line of sight: Bresenham cells strictly between a and b must be
    // drivable, and a diagonal step may not cut past an obstacle corner.
    bool visible(Cell from, Cell to) const;

    const std::vector<AgentState>& agents() const { return agents_; }
    std::vector<AgentState>& agents() { return agents_; }
    const AgentState& agent(AgentId id) const;
    const std::vector<HazardState>& hazards() const { return hazards_; }
    std::vector<HazardState>& hazards() { return hazards_; }

    Cell position(const AgentState& a) const;
    Cell route_cell(const AgentState& a, std::size_t index) const;
    // Unit step along the route at `index` (towards index + 1).
    Cell heading(const AgentState& a, std::size_t index) const;
    // Lanes of the next `lookahead` route cells (current cell included).
    std::uint32_t path_lane_mask(const AgentState& a, int lookahead) const;
    Point location(const AgentState& a, double cell_size_m) const;

    void advance_tick() { ++tick_; }

private:
    std::vector<std::string> grid_;
    int cols_ = 0;
    std::vector<AgentState> agents_;
    std::vector<HazardState> hazards_;
    std::uint32_t tick_ = 0;
};

// Egocentric (2r+1)^2 raster in world orientation, row-major from the
// north-west corner, followed by one EGO_MARKER(path-lane mask, stopped)
// token. Cells outside the grid or without line of sight read OCCLUDED.
std::vector<TokenId> observe(const World& world, AgentId agent, const RunConfig& config);
std::size_t observation_length(const RunConfig& config);

// ---------------------------------------------------------------------------
// Episode

struct AgentMetrics {
    AgentId agent = 0;
    Outcome outcome = Outcome::Running;
    double rc = 0.0;   // percent of route cells passed
    double is = 1.0;
    double ip = 0.0;   // 1 - IS
    double ds = 0.0;   // RC * IS
    std::array<std::uint32_t, kInfractionKinds> infractions{};
    std::vector<InfractionEvent> infraction_log;
    std::uint64_t comm_bytes = 0;
    double comm_latency_s = 0.0;
    std::uint64_t messages_sent = 0;
    std::uint64_t messages_dropped = 0;
    std::uint64_t forward_passes = 0;
    std::uint64_t decoded_tokens = 0;
    std::uint32_t ticks = 0;
    std::uint32_t brake_ticks = 0;
    std::uint32_t spurious_brakes = 0;  // BRAKE with no active hazard on the path lanes
};

struct EpisodeMetrics {
    std::string scenario;
    Paradigm paradigm = Paradigm::NonCollab;
    std::uint32_t ticks = 0;
    std::vector<AgentMetrics> agents;  // ascending agent id; agent 0 is the ego
    std::vector<std::string> warnings;
};

struct AgentTick {
    AgentId agent = 0;
    TokenId action = 0;
    std::size_t payload_bytes = 0;
    std::uint64_t forward_passes = 0;
    std::uint64_t decoded_tokens = 0;
    std::size_t received = 0;
    bool spurious_brake = false;
    AttentionRows decision_attention;
};

struct TickReport {
    std::uint32_t tick = 0;
    std::vector<AgentTick> agents;
};

class Episode {
public:
    Episode(ScenarioSpec spec, const Model& model);

    const World& world() const { return world_; }
    const ScenarioSpec& spec() const { return spec_; }
    bool finished() const;

    // One synchronous tick for every running agent.
    TickReport step();
    EpisodeMetrics run();
    EpisodeMetrics metrics() const;

    void record_telemetry(TelemetryLog* log) { telemetry_ = log; }
    // Serialized messages of the most recent tick, in sender order.
    const std::vector<std::pair<AgentId, std::vector<std::uint8_t>>>& last_messages() const { return last_messages_; }

private:
    ScenarioSpec spec_;
    const Model& model_;
    World world_;
    std::vector<AgentMetrics> metrics_;
    std::vector<std::string> warnings_;
    TelemetryLog* telemetry_ = nullptr;
    std::vector<std::pair<AgentId, std::vector<std::uint8_t>>> last_messages_;
    // Per receiver, what arrived last tick; read by fused deliberation.
    std::vector<std::vector<Payload>> previous_inbox_;
    bool warned_no_latent_ = false;
};

// Hazard model sized by config.num_layers, max context fitted to the scenario.
Model scenario_model(const ScenarioSpec& spec);

EpisodeMetrics run_episode(const ScenarioSpec& spec, TelemetryLog* telemetry = nullptr);

// Metrics CSV: one row per agent, documented column order.
std::string metrics_csv_header();
std::string metrics_csv_rows(const EpisodeMetrics& m, std::string_view prefix_values = {});
std::string metrics_csv(const EpisodeMetrics& m);

enum class SweepParam : std::uint8_t { M, Rho, LCommFraction };
SweepParam parse_sweep_param(std::string_view name);
std::string_view sweep_param_name(SweepParam p);

struct SweepRow {
    std::string scenario;
    double value = 0.0;
    EpisodeMetrics metrics;
};

std::vector<SweepRow> sweep(SweepParam param, const std::vector<double>& values,
                            const std::vector<ScenarioSpec>& scenarios);
std::string sweep_csv(SweepParam param, const std::vector<SweepRow>& rows);

}  // namespace laco
