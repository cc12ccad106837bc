"""Checkpoint files: named parameter tensors plus a manifest sidecar.

Tensors are keyed `<network>/<module path>` (layer, sub-layer, and tap are
encoded in the module path, e.g. `primal/blocks.3.taps.0`). The manifest
records the architecture, noise schedule, config hash, and the content hash
of the training-data manifest, enough to rebuild the networks exactly.
"""

from __future__ import annotations

from pathlib import Path

import torch

from ..arrays import load_arrays, read_json, save_arrays, write_json
from .networks import ArchSpec, DualNet, PrimalNet


def save_checkpoint(path, primal: PrimalNet, dual: DualNet,
                    extra: dict | None = None,
                    extra_arrays: dict | None = None) -> None:
    arrays = {}
    for prefix, net in (("primal", primal), ("dual", dual)):
        for name, tensor in net.state_dict().items():
            arrays[f"{prefix}/{name}"] = tensor.numpy()
    for name, arr in (extra_arrays or {}).items():
        arrays[f"state/{name}"] = arr
    path = Path(path)
    save_arrays(path, arrays)
    spec = primal.spec
    manifest = {
        "arch": spec.as_dict(),
        "family": spec.family,
        "primal_layers": spec.primal_layers,
        "dual_layers": spec.dual_layers,
        "noise": {"base_primal": spec.noise_base_primal,
                  "base_dual": spec.noise_base_dual,
                  "decay": spec.noise_decay},
    }
    manifest.update(extra or {})
    write_json(manifest_path(path), manifest)


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(path.suffix + ".manifest.json")


def load_checkpoint(path) -> tuple[PrimalNet, DualNet, dict, dict]:
    """Returns (primal, dual, manifest, extra_state_arrays)."""
    path = Path(path)
    arrays = load_arrays(path)
    manifest = read_json(manifest_path(path))
    spec = ArchSpec(**manifest["arch"])
    primal, dual = PrimalNet(spec), DualNet(spec)
    state = {"primal": {}, "dual": {}}
    extra_arrays = {}
    for key, arr in arrays.items():
        prefix, _, name = key.partition("/")
        if prefix in state:
            state[prefix][name] = torch.as_tensor(arr)
        elif prefix == "state":
            extra_arrays[name] = arr
    primal.load_state_dict(state["primal"])
    dual.load_state_dict(state["dual"])
    return primal, dual, manifest, extra_arrays
