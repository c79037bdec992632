"""Regenerate the example model files in ``models/``."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from qsrsim.chain import weak_kraus
from qsrsim.io import SCHEMA_VERSION, dump_json
from qsrsim.linalg import SM, SX, SZ, encode_array

OUT = Path(__file__).resolve().parent.parent / "models"


def enc(a):
    return encode_array(np.asarray(a, dtype=complex))


def model(kind: str, **fields) -> dict:
    return {"schema_version": SCHEMA_VERSION, "kind": kind, **fields}


def main() -> None:
    OUT.mkdir(exist_ok=True)
    files = {
        "projective_z.json": model("qsr", outcomes=[1.0, -1.0], channels=[
            {"alpha": 1.0, "nu": [0.5, 0.5], "V": [enc(math.sqrt(2) * np.diag([1, 0])),
                                                   enc(math.sqrt(2) * np.diag([0, 1]))]}]),
        "broken_normalization.json": model("qsr", outcomes=[0, 1], channels=[
            {"alpha": 1.0, "nu": [0.5, 0.5], "V": [enc(np.diag([1, 0])), enc(np.diag([0, 1]))]}]),
        "chain_weak_z.json": model("chain", generator="kraus-repeated", n_steps=3, dt=1.0,
                                   kraus=[enc(k) for k in weak_kraus(SZ, 0.6)], alphabet=["+", "-"],
                                   psi0=enc([1, 1] / np.sqrt(2))),
        "chain_history.json": model("chain", generator="history-dependent-demo", n_steps=3, strength=0.6,
                                    psi0=enc([1, 1] / np.sqrt(2))),
        "chain_long.json": model("chain", generator="kraus-repeated", n_steps=13, dt=0.1,
                                 kraus=[enc(k) for k in weak_kraus(SX, 0.3)], psi0=enc([1, 0])),
        "decay.json": model("sde", H=enc(np.zeros((2, 2))), collapse=[enc(SM)], rates=[1.0],
                            u=enc([0, 1]), run={"n_steps": 300, "dt": 0.01, "n_traj": 2000, "seed": 7}),
        "diffusive_jump.json": model("sde", H=enc(0.5 * SX), L=[enc(math.sqrt(0.5) * SZ)], J=[enc(SM - np.eye(2))],
                                     rates=[0.5], u=enc([0, 1]),
                                     output={"c": [0.0, 0.0], "a": [[1.0], [0.0]], "g": [[0.0], [1.0]]},
                                     run={"n_steps": 200, "dt": 0.01, "n_traj": 1000, "seed": 1}),
        "no_noise.json": model("sde", H=enc(np.zeros((2, 2))), u=enc([1, 0]),
                               run={"n_steps": 50, "dt": 0.02, "n_traj": 10, "seed": 3}),
        "cnot.json": model("probe-chain", generator="cnot", n_steps=3, psi0=enc([1, 1] / np.sqrt(2))),
        "partial_swap.json": model("probe-chain", generator="partial-swap", theta=0.3, n_steps=3,
                                   psi0=enc([0.6, 0.8])),
        "recoupling.json": model("probe-chain", generator="recoupling-counterexample", n_steps=3),
        "identity.json": model("probe-chain", generator="identity", n_steps=3),
    }
    for name, data in files.items():
        dump_json(data, OUT / name)


if __name__ == "__main__":
    main()
