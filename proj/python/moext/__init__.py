from ._moext import (
    MoextError,
    acc,
    dense_flow,
    flow_stats,
    load_manifest,
    reconstruction_loss,
    run,
    ss_loss,
    st_loss,
    synthesize,
    uar,
    uf1,
)

__all__ = [
    "MoextError",
    "acc",
    "dense_flow",
    "flow_stats",
    "load_manifest",
    "reconstruction_loss",
    "run",
    "ss_loss",
    "st_loss",
    "synthesize",
    "uar",
    "uf1",
]
