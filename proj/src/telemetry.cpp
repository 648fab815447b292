#include "laco/telemetry.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>

#include "laco/error.hpp"

namespace laco {

EntropyProfile layer_entropy(std::span<const double> rows, std::size_t layers, std::size_t heads, std::size_t context,
                             double eps) {
    if (rows.size() != layers * heads * context) throw ShapeMismatch("layer_entropy: rows have the wrong size");
    EntropyProfile out;
    out.eps = eps;
    out.per_layer.assign(layers, 0.0);
    for (std::size_t l = 0; l < layers; ++l) {
        double sum = 0.0;
        for (std::size_t h = 0; h < heads; ++h) {
            const double* r = rows.data() + (l * heads + h) * context;
            for (std::size_t j = 0; j < context; ++j) sum += r[j] * std::log(r[j] + eps);
        }
        out.per_layer[l] = heads == 0 ? 0.0 : -sum / static_cast<double>(heads);
    }
    return out;
}

EntropyProfile layer_entropy(const AttentionRows& rows, double eps) {
    EntropyProfile out;
    out.eps = eps;
    for (const auto& la : rows.layers) {
        const auto p = layer_entropy(la.weights, 1, rows.heads, la.context(), eps);
        out.per_layer.push_back(p.per_layer.front());
    }
    return out;
}

EntropyProfile trace_entropy(const AttentionTrace& trace, double eps) {
    EntropyProfile out;
    out.eps = eps;
    out.per_layer.assign(trace.num_layers(), 0.0);
    if (trace.empty()) return out;
    for (const auto& s : trace.steps()) {
        const auto p = layer_entropy(s.weights, trace.num_layers(), trace.num_heads(), s.context, eps);
        for (std::size_t l = 0; l < p.per_layer.size(); ++l) out.per_layer[l] += p.per_layer[l];
    }
    for (double& e : out.per_layer) e /= static_cast<double>(trace.num_steps());
    return out;
}

std::vector<double> token_mass(const AttentionTrace& trace) {
    std::size_t n = 0;
    for (const auto& s : trace.steps()) n = std::max(n, s.context);
    std::vector<double> mass(n, 0.0);
    const std::size_t rows = trace.num_layers() * trace.num_heads();
    for (const auto& s : trace.steps())
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < s.context; ++j) mass[j] += s.weights[r * s.context + j];
    const double count = static_cast<double>(trace.num_steps() * rows);
    if (count > 0)
        for (double& m : mass) m /= count;
    return mass;
}

SparsityCurve sparsity_from_mass(std::vector<double> mass) {
    SparsityCurve out;
    if (mass.empty()) return out;
    std::sort(mass.begin(), mass.end(), std::greater<>());
    double total = 0.0;
    for (double m : mass) total += m;
    const double n = static_cast<double>(mass.size());
    double running = 0.0;
    bool found = false;
    for (std::size_t k = 0; k < mass.size(); ++k) {
        running += mass[k];
        const double cum = total > 0.0 ? running / total : 0.0;
        out.token_fraction.push_back(static_cast<double>(k + 1) / n);
        out.cumulative_mass.push_back(cum);
        if (!found && cum >= 0.8 - 1e-12) {
            out.fraction_for_80 = static_cast<double>(k + 1) / n;
            found = true;
        }
    }
    if (!found) out.fraction_for_80 = 1.0;
    return out;
}

SparsityCurve sparsity_curve(const AttentionTrace& trace) {
    if (trace.empty()) throw Error("sparsity_curve: empty trace");
    return sparsity_from_mass(token_mass(trace));
}

ConfusionIndex confusion_index(const AttentionRows& rows) {
    ConfusionIndex out;
    for (const auto& la : rows.layers) {
        double acc = 0.0;
        const std::size_t n = la.context();
        for (std::size_t h = 0; h < rows.heads; ++h) {
            double foreign = 0.0;
            double total = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double w = la.weights[h * n + j];
                total += w;
                if (is_foreign(la.origins[j])) foreign += w;
            }
            acc += total > 0.0 ? foreign / total : 0.0;
        }
        out.per_layer.push_back(rows.heads == 0 ? 0.0 : acc / static_cast<double>(rows.heads));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Record stream

namespace {

struct Out {
    std::vector<std::uint8_t> bytes;
    template <typename T>
    void put(T v) {
        auto u = static_cast<std::make_unsigned_t<T>>(v);
        for (std::size_t i = 0; i < sizeof(T); ++i) bytes.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
    }
    void put_f64(double d) { put(std::bit_cast<std::uint64_t>(d)); }
};

struct In {
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;
    void need(std::size_t n) const {
        if (bytes.size() - pos < n) throw DecodeError("telemetry: truncated record");
    }
    template <typename T>
    T get() {
        need(sizeof(T));
        std::make_unsigned_t<T> u = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<std::make_unsigned_t<T>>(bytes[pos + i]) << (8 * i);
        pos += sizeof(T);
        return static_cast<T>(u);
    }
    double get_f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
};

void finish_record(Out& file, std::uint8_t kind, const Out& body) {
    file.put(static_cast<std::uint32_t>(body.bytes.size() + 1));
    file.put(kind);
    file.bytes.insert(file.bytes.end(), body.bytes.begin(), body.bytes.end());
}

}  // namespace

std::vector<std::uint8_t> encode_telemetry(const TelemetryLog& log) {
    Out file;
    file.bytes.assign(std::begin(kTelemetryMagic), std::end(kTelemetryMagic));
    for (const auto& r : log.traces) {
        Out b;
        b.put(r.agent);
        b.put(r.tick);
        b.put(static_cast<std::uint16_t>(r.trace.num_layers()));
        b.put(static_cast<std::uint16_t>(r.trace.num_heads()));
        b.put(r.prefill_len);
        b.put(static_cast<std::uint32_t>(r.trace.num_steps()));
        for (const auto& s : r.trace.steps()) {
            b.put(static_cast<std::uint32_t>(s.context));
            for (double w : s.weights) b.put_f64(w);
        }
        finish_record(file, 1, b);
    }
    for (const auto& r : log.decisions) {
        Out b;
        b.put(r.agent);
        b.put(r.tick);
        b.put(static_cast<std::uint16_t>(r.rows.layers.size()));
        b.put(static_cast<std::uint16_t>(r.rows.heads));
        for (const auto& la : r.rows.layers) {
            b.put(static_cast<std::uint32_t>(la.context()));
            for (Origin o : la.origins) b.put(static_cast<std::uint8_t>(o));
            for (double w : la.weights) b.put_f64(w);
        }
        finish_record(file, 2, b);
    }
    return std::move(file.bytes);
}

TelemetryLog decode_telemetry(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < sizeof(kTelemetryMagic) || std::memcmp(bytes.data(), kTelemetryMagic, sizeof(kTelemetryMagic)) != 0)
        throw DecodeError("telemetry: bad magic");
    TelemetryLog log;
    In in{bytes, sizeof(kTelemetryMagic)};
    while (in.pos < bytes.size()) {
        const auto len = in.get<std::uint32_t>();
        in.need(len);
        const std::size_t end = in.pos + len;
        const auto kind = in.get<std::uint8_t>();
        if (kind == 1) {
            TraceRecord r;
            r.agent = in.get<std::uint32_t>();
            r.tick = in.get<std::uint32_t>();
            const auto L = in.get<std::uint16_t>();
            const auto H = in.get<std::uint16_t>();
            r.prefill_len = in.get<std::uint32_t>();
            const auto steps = in.get<std::uint32_t>();
            r.trace = AttentionTrace(L, H);
            for (std::uint32_t t = 0; t < steps; ++t) {
                AttentionStep s;
                s.context = in.get<std::uint32_t>();
                in.need(8ull * L * H * s.context);
                s.weights.resize(static_cast<std::size_t>(L) * H * s.context);
                for (double& w : s.weights) w = in.get_f64();
                r.trace.push(std::move(s));
            }
            log.traces.push_back(std::move(r));
        } else if (kind == 2) {
            DecisionRecord r;
            r.agent = in.get<std::uint32_t>();
            r.tick = in.get<std::uint32_t>();
            const auto L = in.get<std::uint16_t>();
            r.rows.heads = in.get<std::uint16_t>();
            r.rows.layers.resize(L);
            for (auto& la : r.rows.layers) {
                const auto n = in.get<std::uint32_t>();
                in.need(n + 8ull * r.rows.heads * n);
                la.origins.resize(n);
                for (auto& o : la.origins) {
                    const auto v = in.get<std::uint8_t>();
                    if (v > 3) throw DecodeError("telemetry: bad origin tag");
                    o = static_cast<Origin>(v);
                }
                la.agents.assign(n, 0);
                la.weights.resize(static_cast<std::size_t>(r.rows.heads) * n);
                for (double& w : la.weights) w = in.get_f64();
            }
            log.decisions.push_back(std::move(r));
        } else {
            throw DecodeError("telemetry: unknown record kind " + std::to_string(kind));
        }
        if (in.pos != end) throw DecodeError("telemetry: record length mismatch");
    }
    return log;
}

// ---------------------------------------------------------------------------
// CSV

std::string format_real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

AnalysisTables analyze(const TelemetryLog& log, double eps) {
    std::ostringstream ent, spa, con;
    ent << "agent,tick,source,layer,entropy\n";
    spa << "agent,tick,rank,token_fraction,cumulative_mass,fraction_for_80pct\n";
    con << "agent,tick,layer,foreign_mass\n";

    for (const auto& r : log.traces) {
        if (r.trace.empty()) continue;
        const auto e = trace_entropy(r.trace, eps);
        for (std::size_t l = 0; l < e.per_layer.size(); ++l)
            ent << r.agent << ',' << r.tick << ",latent," << l + 1 << ',' << format_real(e.per_layer[l]) << '\n';
        const auto curve = sparsity_curve(r.trace);
        for (std::size_t k = 0; k < curve.token_fraction.size(); ++k)
            spa << r.agent << ',' << r.tick << ',' << k + 1 << ',' << format_real(curve.token_fraction[k]) << ','
                << format_real(curve.cumulative_mass[k]) << ',' << format_real(curve.fraction_for_80) << '\n';
    }
    for (const auto& r : log.decisions) {
        const auto e = layer_entropy(r.rows, eps);
        for (std::size_t l = 0; l < e.per_layer.size(); ++l)
            ent << r.agent << ',' << r.tick << ",decision," << l + 1 << ',' << format_real(e.per_layer[l]) << '\n';
        const auto c = confusion_index(r.rows);
        for (std::size_t l = 0; l < c.per_layer.size(); ++l)
            con << r.agent << ',' << r.tick << ',' << l + 1 << ',' << format_real(c.per_layer[l]) << '\n';
    }
    return {ent.str(), spa.str(), con.str()};
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + path.string());
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    write_file(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace laco
