#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "laco/chsa.hpp"
#include "laco/error.hpp"
#include "laco/fusion.hpp"
#include "laco/hazard_model.hpp"
#include "laco/ild.hpp"
#include "laco/payload.hpp"
#include "laco/scenario.hpp"
#include "laco/telemetry.hpp"

namespace py = pybind11;
using namespace laco;

namespace {

py::bytes to_bytes(const std::vector<std::uint8_t>& v) {
    return py::bytes(reinterpret_cast<const char*>(v.data()), v.size());
}

std::vector<std::uint8_t> from_bytes(const py::bytes& b) {
    const std::string s = b;
    return {s.begin(), s.end()};
}

std::vector<std::vector<float>> matrix_rows(const Matrix& m) {
    std::vector<std::vector<float>> out(m.rows);
    for (std::size_t r = 0; r < m.rows; ++r) out[r].assign(m.row(r).begin(), m.row(r).end());
    return out;
}

Matrix from_rows(const std::vector<std::vector<float>>& rows) {
    if (rows.empty()) return {};
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != m.cols) throw ShapeMismatch("ragged matrix rows");
        std::copy(rows[r].begin(), rows[r].end(), m.data.begin() + static_cast<std::ptrdiff_t>(r * m.cols));
    }
    return m;
}

py::dict agent_dict(const AgentMetrics& a) {
    py::dict d;
    d["agent"] = a.agent;
    d["outcome"] = std::string(outcome_name(a.outcome));
    d["rc"] = a.rc;
    d["is"] = a.is;
    d["ip"] = a.ip;
    d["ds"] = a.ds;
    py::dict inf;
    for (std::size_t k = 0; k < kInfractionKinds; ++k)
        inf[py::str(std::string(infraction_name(static_cast<Infraction>(k))))] = a.infractions[k];
    d["infractions"] = inf;
    d["comm_bytes"] = a.comm_bytes;
    d["comm_latency_s"] = a.comm_latency_s;
    d["forward_passes"] = a.forward_passes;
    d["decoded_tokens"] = a.decoded_tokens;
    d["ticks"] = a.ticks;
    d["brake_ticks"] = a.brake_ticks;
    d["spurious_brakes"] = a.spurious_brakes;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "latent collaboration harness: model, ILD, CHSA, payloads, scenarios";

    py::register_exception<Error>(m, "LacoError", PyExc_RuntimeError);

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("num_layers", &ModelConfig::num_layers)
        .def_readwrite("num_heads", &ModelConfig::num_heads)
        .def_readwrite("model_dim", &ModelConfig::model_dim)
        .def_readwrite("vocab_size", &ModelConfig::vocab_size)
        .def_readwrite("max_context", &ModelConfig::max_context)
        .def_readwrite("ffn_dim", &ModelConfig::ffn_dim)
        .def_readwrite("pos_dims", &ModelConfig::pos_dims)
        .def_readwrite("seed", &ModelConfig::seed)
        .def_property_readonly("head_dim", &ModelConfig::head_dim);

    py::class_<Model>(m, "Model")
        .def_readonly("config", &Model::config)
        .def_property_readonly("w_in", [](const Model& mo) { return matrix_rows(mo.w_in); })
        .def_property_readonly("w_out", [](const Model& mo) { return matrix_rows(mo.w_out); })
        .def("counters", [](const Model& mo) {
            py::dict d;
            d["prefills"] = mo.counters.prefills;
            d["decode_steps"] = mo.counters.decode_steps;
            d["positions"] = mo.counters.positions;
            d["logit_projections"] = mo.counters.logit_projections;
            return d;
        });

    m.def("init_model", &init_model, py::arg("config"));
    m.def("hazard_model", [](std::size_t layers) { return make_hazard_model(hazard_model_config(layers)); },
          py::arg("num_layers") = 4);

    py::class_<KVCache>(m, "KVCache")
        .def_property_readonly("num_layers", &KVCache::num_layers)
        .def_property_readonly("num_heads", &KVCache::num_heads)
        .def_property_readonly("head_dim", &KVCache::head_dim)
        .def("__len__", &KVCache::size);

    m.def(
        "prefill",
        [](const Model& mo, const std::vector<TokenId>& tokens) {
            PrefillResult r = prefill(mo, tokens);
            return py::make_tuple(r.hidden, std::move(r.cache));
        },
        py::arg("model"), py::arg("tokens"), "returns (hidden, cache)");

    m.def(
        "deliberate",
        [](const Model& mo, const std::vector<TokenId>& tokens, std::size_t steps, double rho) {
            PrefillResult r = prefill(mo, tokens);
            const DeliberationResult d = deliberate(mo, compute_alignment(mo), r.hidden, r.cache, steps);
            py::dict out;
            out["hidden"] = d.final_hidden;
            out["cache"] = std::move(r.cache);
            if (steps > 0) {
                const SaliencyVector s = saliency_scores(d.trace, tokens.size(), rho);
                out["saliency"] = s.scores;
                out["selected"] = select_topk(s);
            }
            return out;
        },
        py::arg("model"), py::arg("tokens"), py::arg("steps") = kDefaultDeliberationSteps,
        py::arg("rho") = kDefaultRetention);

    m.def("pseudo_inverse",
          [](const std::vector<std::vector<float>>& a, double tol) { return matrix_rows(pseudo_inverse(from_rows(a), tol)); },
          py::arg("a"), py::arg("rel_tol") = kDefaultPinvTolerance);
    m.def("alignment", [](const Model& mo) { return matrix_rows(compute_alignment(mo).w_a); }, py::arg("model"));
    m.def("retained_count", &retained_count, py::arg("rho"), py::arg("prefill_len"));
    m.def("comm_layers", &comm_layers, py::arg("fraction"), py::arg("num_layers"));

    py::enum_<DType>(m, "DType").value("F32", DType::F32).value("F16", DType::F16);
    m.def(
        "payload_size_bytes",
        [](std::size_t l, std::size_t h, std::size_t dh, std::size_t s, std::size_t lat, DType t) {
            return payload_size_bytes(l, h, dh, s, lat, t);
        },
        py::arg("l_comm"), py::arg("heads"), py::arg("head_dim"), py::arg("salient"), py::arg("latent"),
        py::arg("dtype") = DType::F32);
    m.def(
        "make_payload",
        [](const KVCache& kv, std::size_t salient, std::size_t layers, AgentId sender, std::uint64_t frame, DType t) {
            return to_bytes(serialize(make_payload(kv, salient, layers, sender, frame, t)));
        },
        py::arg("cache"), py::arg("salient"), py::arg("layers"), py::arg("sender") = 0, py::arg("frame") = 0,
        py::arg("dtype") = DType::F32, "serialized payload bytes");
    m.def(
        "parse_payload_header",
        [](const py::bytes& b) {
            const PayloadHeader h = parse_header(from_bytes(b));
            py::dict d;
            d["version"] = h.version;
            d["sender"] = h.sender;
            d["frame"] = h.frame;
            d["l_comm"] = h.l_comm;
            d["heads"] = h.heads;
            d["head_dim"] = h.head_dim;
            d["salient"] = h.salient_count;
            d["latent"] = h.latent_count;
            d["dtype"] = h.dtype;
            d["indices"] = h.source_indices;
            return d;
        },
        py::arg("data"));
    m.def(
        "roundtrip_payload", [](const py::bytes& b) { return to_bytes(serialize(deserialize(from_bytes(b)))); },
        py::arg("data"), "deserialize then serialize again");

    m.def(
        "run_scenario",
        [](const std::filesystem::path& path, const std::string& paradigm) {
            ScenarioSpec spec = load_scenario(path);
            if (!paradigm.empty()) spec.config.paradigm = parse_paradigm(paradigm);
            const EpisodeMetrics e = run_episode(spec);
            py::dict d;
            d["scenario"] = e.scenario;
            d["paradigm"] = std::string(paradigm_name(e.paradigm));
            d["ticks"] = e.ticks;
            py::list agents;
            for (const auto& a : e.agents) agents.append(agent_dict(a));
            d["agents"] = agents;
            d["warnings"] = e.warnings;
            d["csv"] = metrics_csv(e);
            return d;
        },
        py::arg("path"), py::arg("paradigm") = "");

    m.def(
        "layer_entropy",
        [](const std::vector<double>& rows, std::size_t layers, std::size_t heads, std::size_t n, double eps) {
            return layer_entropy(rows, layers, heads, n, eps).per_layer;
        },
        py::arg("rows"), py::arg("layers"), py::arg("heads"), py::arg("n"), py::arg("eps") = kDefaultEntropyEps);
    m.def(
        "sparsity_fraction_for_80", [](std::vector<double> mass) { return sparsity_from_mass(std::move(mass)).fraction_for_80; },
        py::arg("token_mass"));
}
