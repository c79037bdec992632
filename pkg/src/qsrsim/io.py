"""JSON model files and CSV/JSON artifacts.

Every model file is a JSON object with ``schema_version`` and ``kind``
(``qsr``, ``chain``, ``sde`` or ``probe-chain``). Complex matrices and
vectors are nested lists of ``[re, im]`` pairs, row-major. Run parameters
(grid, trajectory count, seed, ...) live under an optional ``run`` key.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any

import numpy as np

from .chain import ChainModel, history_dependent_demo, kraus_chain, projective_chain, table_chain
from .grid import TimeGrid
from .instrument import QSRep
from .linalg import SpectralDecomposition, decode_array, encode_array, spectral
from .nondemolition import (
    ProbeChain,
    cnot_chain,
    identity_chain,
    partial_swap_chain,
    recoupling_chain,
    z_basis_observable,
)
from .sde import OutputConfig, SdeModel, build_model, counting_model

SCHEMA_VERSION = 1


class ModelFileError(ValueError):
    """A model file that cannot be parsed into a model."""


def load_json(path: str | Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ModelFileError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ModelFileError(f"{path}: top level must be an object")
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ModelFileError(f"{path}: unsupported schema_version {version}")
    if "kind" not in data:
        raise ModelFileError(f"{path}: missing 'kind'")
    return data


def dump_json(data: Any, path: str | Path) -> None:
    text = json.dumps(data, indent=2, sort_keys=True) + "\n"
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def _matrix(data, what: str) -> np.ndarray:
    try:
        m = decode_array(data, ndim=2)
    except (ValueError, TypeError) as exc:
        raise ModelFileError(f"{what}: {exc}") from exc
    if m.shape[0] != m.shape[1]:
        raise ModelFileError(f"{what}: matrix must be square, got {m.shape}")
    return m


def _vector(data, what: str) -> np.ndarray:
    try:
        return decode_array(data, ndim=1)
    except (ValueError, TypeError) as exc:
        raise ModelFileError(f"{what}: {exc}") from exc


def _wrap(fn, data: dict, kind: str):
    try:
        return fn(data)
    except ModelFileError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        name = f"missing field {exc}" if isinstance(exc, KeyError) else str(exc)
        raise ModelFileError(f"{kind} file: {name}") from exc


# -- QSR ------------------------------------------------------------------------------


def qsr_from_dict(data: dict) -> QSRep:
    return _wrap(QSRep.from_dict, data, "qsr")


# -- chains ---------------------------------------------------------------------------


def _chain(data: dict) -> ChainModel:
    n = int(data["n_steps"])
    dt = float(data.get("dt", 1.0))
    gen = data.get("generator", "table")
    if gen == "projective":
        return projective_chain(_matrix(data["observable"], "observable"), n, dt)
    if gen == "kraus-repeated":
        kraus = [_matrix(k, "kraus") for k in data["kraus"]]
        return kraus_chain(np.array(kraus), n, dt, data.get("alphabet"))
    if gen == "history-dependent-demo":
        return history_dependent_demo(n, float(data.get("strength", 0.6)), dt)
    if gen == "table":
        steps = data["steps"]
        if len(steps) != n:
            raise ModelFileError(f"chain file: {len(steps)} step tables for n_steps={n}")
        tables = [(np.array([_matrix(v, "V") for v in s["V"]]), np.asarray(s["p"], dtype=float)) for s in steps]
        m = table_chain(tables, data.get("alphabet"), dt)
        return m
    raise ModelFileError(f"chain file: unknown generator {gen!r}")


def chain_from_dict(data: dict) -> ChainModel:
    return _wrap(_chain, data, "chain")


def chain_to_dict(m: ChainModel) -> dict:
    """Explicit per-step tables of a Markov chain."""
    if not m.markov:
        raise ValueError("only Markov chains serialize to step tables")
    steps = []
    for k in range(1, m.n_steps + 1):
        ops, probs = m.step(k, (0,) * (k - 1))
        steps.append({"V": [encode_array(v) for v in ops], "p": probs.tolist()})
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "chain",
        "generator": "table",
        "n_steps": m.n_steps,
        "dt": m.grid.dt,
        "alphabet": [a if isinstance(a, (int, str)) else float(a) for a in m.alphabet],
        "steps": steps,
    }


# -- SDE models ----------------------------------------------------------------------


def _sde(data: dict) -> tuple[SdeModel, OutputConfig]:
    H = _matrix(data["H"], "H")
    Ls = [_matrix(L, "L") for L in data.get("L", [])]
    if "collapse" in data:
        Cs = [_matrix(C, "collapse") for C in data["collapse"]]
        model = counting_model(H, Cs, data.get("rates", []), Ls)
    else:
        Js = [_matrix(J, "J") for J in data.get("J", [])]
        model = build_model(H, Ls, Js, data.get("rates", []))
    if "output" in data:
        out = data["output"]
        cfg = OutputConfig(out["c"], out.get("a", []), out.get("g", []))
        cfg.check(model)
    else:
        cfg = OutputConfig.default(model)
    return model, cfg


def sde_from_dict(data: dict) -> tuple[SdeModel, OutputConfig]:
    return _wrap(_sde, data, "sde")


def initial_state(data: dict, dim: int) -> np.ndarray:
    for key in ("u", "psi0"):
        if key in data:
            v = _vector(data[key], key)
            if v.shape[0] != dim:
                raise ModelFileError(f"{key}: expected length {dim}, got {v.shape[0]}")
            return v
    v = np.zeros(dim, dtype=complex)
    v[-1 if data.get("kind") == "sde" else 0] = 1.0
    return v


def grid_from_dict(data: dict) -> TimeGrid:
    run = data.get("run", {})
    try:
        return TimeGrid(int(run["n_steps"]), float(run["dt"]))
    except KeyError as exc:
        raise ModelFileError(f"run section: missing field {exc}") from exc


# -- probe chains -------------------------------------------------------------------


def _probe_observable(data, p: int) -> SpectralDecomposition:
    if data is None or data == "z":
        return z_basis_observable(p)
    return spectral(_matrix(data, "probe_observable"))


def _probe(data: dict) -> ProbeChain:
    n = int(data["n_steps"])
    gen = data.get("generator", "explicit")
    if gen == "cnot":
        return cnot_chain(n)
    if gen == "partial-swap":
        return partial_swap_chain(n, float(data["theta"]))
    if gen == "identity":
        return identity_chain(n, int(data.get("system_dim", 2)), int(data.get("probe_dim", 2)))
    if gen == "recoupling-counterexample":
        return recoupling_chain(n, float(data.get("angle", math.pi / 4)))
    if gen == "explicit":
        d, p = int(data["system_dim"]), int(data["probe_dim"])
        R = _matrix(data["recoupling"], "recoupling") if data.get("recoupling") is not None else None
        return ProbeChain(d, p, n, _vector(data["f"], "f"), _matrix(data["U_step"], "U_step"),
                          _probe_observable(data.get("probe_observable"), p), R, data.get("name", "explicit"))
    raise ModelFileError(f"probe-chain file: unknown generator {gen!r}")


def probe_chain_from_dict(data: dict) -> ProbeChain:
    return _wrap(_probe, data, "probe-chain")


# -- CSV -------------------------------------------------------------------------------


def fmt(x: float) -> str:
    """Shortest round-trip float text; stable across runs and platforms."""
    return repr(float(x))
