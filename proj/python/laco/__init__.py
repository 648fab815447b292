"""Python bindings for the latent collaboration harness."""

from ._core import (  # noqa: F401
    DType,
    KVCache,
    LacoError,
    Model,
    ModelConfig,
    alignment,
    comm_layers,
    deliberate,
    hazard_model,
    init_model,
    layer_entropy,
    make_payload,
    parse_payload_header,
    payload_size_bytes,
    prefill,
    pseudo_inverse,
    retained_count,
    roundtrip_payload,
    run_scenario,
    sparsity_fraction_for_80,
)

__all__ = [name for name in dir() if not name.startswith("_")]
