#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "laco/model.hpp"

namespace laco {

inline constexpr double kDefaultEntropyEps = 1e-8;

struct EntropyProfile {
    std::vector<double> per_layer;
    double eps = kDefaultEntropyEps;
};

// e(l) = -(1/H) * sum_h sum_j a[l,h,j] * log(a[l,h,j] + eps), accumulated in
// double. `rows` is laid out [layer][head][j] over a common context.
EntropyProfile layer_entropy(std::span<const double> rows, std::size_t layers, std::size_t heads, std::size_t context,
                             double eps = kDefaultEntropyEps);
EntropyProfile layer_entropy(const AttentionRows& rows, double eps = kDefaultEntropyEps);
// Per-step entropies averaged over the steps of a trace.
EntropyProfile trace_entropy(const AttentionTrace& trace, double eps = kDefaultEntropyEps);

struct SparsityCurve {
    std::vector<double> token_fraction;   // k / N for k = 1..N
    std::vector<double> cumulative_mass;  // share of mass in the k heaviest tokens
    double fraction_for_80 = 0.0;         // smallest k/N reaching 80 % of the mass
};

// Mean over (step, layer, head) of the weight on position j; positions a
// step cannot see count as zero. Distinct from the max-then-mean saliency.
std::vector<double> token_mass(const AttentionTrace& trace);
SparsityCurve sparsity_from_mass(std::vector<double> mass);
SparsityCurve sparsity_curve(const AttentionTrace& trace);

struct ConfusionIndex {
    std::vector<double> per_layer;  // head-averaged share of mass on foreign positions
};

ConfusionIndex confusion_index(const AttentionRows& rows);

// ---------------------------------------------------------------------------
// telemetry.bin: "LACOTEL1" followed by records, each
//   u32 length (bytes after this field) | u8 kind | body
// kind 1, latent trace:  u32 agent | u32 tick | u16 L | u16 H | u32 prefill_len
//                        | u32 steps | steps x (u32 context | f64 w[L][H][context])
// kind 2, decision rows: u32 agent | u32 tick | u16 L | u16 H
//                        | L x (u32 context | u8 origin[context] | f64 w[H][context])
// Integers and doubles little-endian.

inline constexpr char kTelemetryMagic[8] = {'L', 'A', 'C', 'O', 'T', 'E', 'L', '1'};

struct TraceRecord {
    AgentId agent = 0;
    std::uint32_t tick = 0;
    std::uint32_t prefill_len = 0;
    AttentionTrace trace;
};

struct DecisionRecord {
    AgentId agent = 0;
    std::uint32_t tick = 0;
    AttentionRows rows;
};

struct TelemetryLog {
    std::vector<TraceRecord> traces;
    std::vector<DecisionRecord> decisions;
};

std::vector<std::uint8_t> encode_telemetry(const TelemetryLog& log);
TelemetryLog decode_telemetry(std::span<const std::uint8_t> bytes);

// Fixed 9-significant-digit rendering used by every CSV writer.
std::string format_real(double v);

struct AnalysisTables {
    std::string entropy_csv;    // agent,tick,source,layer,entropy
    std::string sparsity_csv;   // agent,tick,rank,token_fraction,cumulative_mass,fraction_for_80pct
    std::string confusion_csv;  // agent,tick,layer,foreign_mass
};

AnalysisTables analyze(const TelemetryLog& log, double eps = kDefaultEntropyEps);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file(const std::filesystem::path& path, const std::string& text);

}  // namespace laco
