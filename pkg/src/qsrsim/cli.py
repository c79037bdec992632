"""Command-line front end.

Subcommands::

    qsrsim validate    MODEL      invariant battery for any model file
    qsrsim sample      MODEL      trajectories to CSV (chains or SDE models)
    qsrsim compare     MODEL      ensemble average against the exact oracle
    qsrsim ndcheck     MODEL      nondemolition audit of a probe chain
    qsrsim extract-qsr MODEL      per-step chain tables of a probe chain

Exit status: 0 when every check passes, 1 on a check failure, 2 on an
input error. Reports are JSON on stdout (and in ``--out`` when given).
"""

from __future__ import annotations

import argparse
import io as _io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .chain import ENUMERATION_CAP, ChainModel, check_chain, sample_trajectory, unconditional_map
from .grid import TimeGrid
from .instrument import validate_qsr
from .lindblad import MAX_STEP_NORM, derive_generator, evolve
from .linalg import encode_array, norm_sq, projector, trace_distance
from .nondemolition import DimensionCapError, audit, equivalence_check, extract_qsr
from .report import Report
from .rng import blocks, check_seed, trajectory_rng
from .sde import (
    BLOCK_SIZE,
    GridTooCoarseError,
    OutputConfig,
    SdeModel,
    check_grid,
    expected_pure,
    run_ensemble,
    simulate,
)

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2
MAX_CHANNELS = 16
MAX_OUTCOMES = 4096
NON_MARKOV_MESSAGE = "no master-equation oracle for history-dependent kernels"


class InputError(Exception):
    """Anything that should end the run with exit status 2."""


@dataclass
class RunConfig:
    """Resolved parameters of one invocation; flags override the file's ``run`` section."""

    command: str
    model_path: Path
    model: dict
    n_steps: int | None = None
    dt: float | None = None
    n_traj: int = 100
    seed: int = 0
    workers: int = 1
    out: Path | None = None
    dump_every: int = 0
    tol: float | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_traj < 1:
            raise InputError("n_traj must be at least 1")
        if self.dt is not None and not self.dt > 0:
            raise InputError("dt must be positive")
        if self.workers < 1:
            raise InputError("workers must be at least 1")
        if self.dump_every < 0:
            raise InputError("dump cadence must be nonnegative")
        try:
            self.seed = check_seed(self.seed)
        except ValueError as exc:
            raise InputError(str(exc)) from exc

    @property
    def kind(self) -> str:
        return self.model["kind"]

    def grid(self) -> TimeGrid:
        """SDE grid; an overriding ``dt`` keeps the horizon fixed."""
        if self.n_steps is None or self.dt is None:
            raise InputError("SDE runs need n_steps and dt (run section or flags)")
        try:
            return TimeGrid(int(self.n_steps), float(self.dt))
        except (TypeError, ValueError) as exc:
            raise InputError(f"invalid grid: {exc}") from exc


def resolve(args: argparse.Namespace) -> RunConfig:
    path = Path(args.model).resolve()
    try:
        model = io.load_json(path)
    except io.ModelFileError as exc:
        raise InputError(str(exc)) from exc
    run = model.get("run", {})
    if not isinstance(run, dict):
        raise InputError("run section must be an object")
    n_steps = run.get("n_steps")
    dt = run.get("dt")
    if args.dt is not None:
        if not args.dt > 0:
            raise InputError("dt must be positive")
        if n_steps is not None and dt is not None:
            n_steps = max(1, round(n_steps * dt / args.dt))
        dt = args.dt
    if args.n_steps is not None:
        n_steps = args.n_steps

    def pick(flag, key, default):
        return flag if flag is not None else run.get(key, default)

    try:
        return RunConfig(
            command=args.command,
            model_path=path,
            model=model,
            n_steps=None if n_steps is None else int(n_steps),
            dt=None if dt is None else float(dt),
            n_traj=int(pick(args.n_traj, "n_traj", 100)),
            seed=int(pick(args.seed, "seed", 0)),
            workers=int(args.workers),
            out=None if args.out is None else Path(args.out).resolve(),
            dump_every=int(pick(getattr(args, "dump_every", None), "dump_every", 0)),
            tol=pick(args.tol, "tol", None),
        )
    except (TypeError, ValueError) as exc:
        raise InputError(f"run section: {exc}") from exc


# -- model loading -----------------------------------------------------------------


def load_chain(cfg: RunConfig) -> ChainModel:
    data = dict(cfg.model)
    if cfg.dt is not None:
        data["dt"] = cfg.dt
    if cfg.n_steps is not None and data.get("generator") != "table":
        data["n_steps"] = cfg.n_steps
    m = io.chain_from_dict(data)
    if m.n_symbols > MAX_OUTCOMES:
        raise InputError(f"alphabet of {m.n_symbols} symbols exceeds the cap of {MAX_OUTCOMES}")
    return m


def load_sde(cfg: RunConfig) -> tuple[SdeModel, OutputConfig, np.ndarray]:
    model, out_cfg = io.sde_from_dict(cfg.model)
    if model.n_diffusive + model.n_jumps > MAX_CHANNELS:
        raise InputError(f"more than {MAX_CHANNELS} noise channels")
    return model, out_cfg, io.initial_state(cfg.model, model.dim)


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def emit(cfg: RunConfig, name: str, payload: dict) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    sys.stdout.write(text)
    if cfg.out is not None:
        _write_text(cfg.out / name, text)


def _status(rep: Report) -> int:
    return EXIT_OK if rep.passed else EXIT_FAIL


# -- validate ------------------------------------------------------------------------


def cmd_validate(cfg: RunConfig) -> int:
    tol = 1e-10 if cfg.tol is None else float(cfg.tol)
    kind = cfg.kind
    if kind == "qsr":
        q = io.qsr_from_dict(cfg.model)
        if q.n_channels > MAX_CHANNELS or q.n_outcomes > MAX_OUTCOMES:
            raise InputError(f"QSR exceeds the caps ({MAX_CHANNELS} channels, {MAX_OUTCOMES} outcomes)")
        rep = validate_qsr(q, tol)
    elif kind == "chain":
        m = load_chain(cfg)
        psi0 = io.initial_state(cfg.model, m.dim)
        rep = check_chain(m, psi0, np.random.default_rng(cfg.seed), ENUMERATION_CAP, tol=tol)
        if rep.info["mode"] == "monte-carlo":
            rep.info["note"] = (f"{m.n_symbols}^{m.n_steps} records exceed the enumeration cap of "
                                f"{ENUMERATION_CAP}; sampled checks judged at 3 standard errors")
    elif kind == "sde":
        model, _, _ = load_sde(cfg)
        rep = Report("sde-model")
        rep.add("dissipation_balance", model.invariant_residual(), tol)
        gen = derive_generator(model)
        rng = np.random.default_rng(cfg.seed)
        worst = 0.0
        for _ in range(8):
            a = rng.standard_normal((model.dim, model.dim)) + 1j * rng.standard_normal((model.dim, model.dim))
            rho = a @ a.conj().T
            worst = max(worst, abs(np.trace(gen(rho / np.trace(rho)))))
        rep.add("generator_trace_preservation", worst, 1e-12)
        if cfg.dt is not None:
            rep.add("rate_dt", model.max_rate * cfg.dt, 0.1, note="gamma_max * dt")
    elif kind == "probe-chain":
        rep = _ndreport(cfg, tol=1e-9 if cfg.tol is None else float(cfg.tol))
        pc = io.probe_chain_from_dict(cfg.model)
        if pc.recoupling is None:
            chain_rep = check_chain(extract_qsr(pc), tol=tol)
            rep.extend(chain_rep, "extracted_chain.")
            psi0 = io.initial_state(cfg.model, pc.system_dim)
            rep.add("global_equivalence", equivalence_check(pc, psi0), tol)
    else:
        raise InputError(f"unknown model kind {kind!r}")
    emit(cfg, "validate.json", rep.to_dict())
    return _status(rep)


# -- sample --------------------------------------------------------------------------


def _chain_block(m: ChainModel, psi0: np.ndarray, seed: int, indices: range, dump_every: int):
    buf = _io.StringIO()
    dumps = []
    for i in indices:
        x, states = sample_trajectory(m, psi0, trajectory_rng(seed, i))
        buf.write(f"{i},0,,{io.fmt(norm_sq(states[0]))}\n")
        for k, (a, phi) in enumerate(zip(x, states[1:]), start=1):
            buf.write(f"{i},{k},{m.alphabet[a]},{io.fmt(norm_sq(phi))}\n")
        if dump_every:
            dumps.append({"trajectory_id": i, "states": [
                {"step": k, "psi": encode_array(states[k])} for k in range(0, len(states), dump_every)]})
    return buf.getvalue(), dumps


def _sde_block(model: SdeModel, out_cfg: OutputConfig, u: np.ndarray, grid: TimeGrid, seed: int,
               indices: range, dump_every: int):
    buf = _io.StringIO()
    dumps = []
    for i in indices:
        rec = simulate(model, u, grid, out_cfg, trajectory_rng(seed, i))
        flags = np.zeros((grid.n_steps + 1, model.n_jumps), dtype=int)
        flags[1:] = rec.dN
        for k, t in enumerate(rec.times):
            cols = [str(i), io.fmt(t), io.fmt(rec.norm_sq[k])]
            cols += [io.fmt(v) for v in rec.output_X[k]]
            cols += [str(v) for v in flags[k]]
            buf.write(",".join(cols) + "\n")
        if dump_every:
            dumps.append({"trajectory_id": i, "states": [
                {"t": float(rec.times[k]), "psi": encode_array(rec.psi[k])}
                for k in range(0, grid.n_steps + 1, dump_every)]})
    return buf.getvalue(), dumps


def _run_blocks(fn, common: tuple, n_traj: int, workers: int, dump_every: int):
    """Evaluate fixed trajectory blocks, possibly in a pool; results come back in index order."""
    tasks = [common + (r, dump_every) for r in blocks(n_traj, BLOCK_SIZE // 8)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            yield from pool.map(fn, *zip(*tasks))
    else:
        for t in tasks:
            yield fn(*t)


def cmd_sample(cfg: RunConfig) -> int:
    if cfg.out is None:
        raise InputError("sample needs --out DIR")
    if cfg.kind == "chain":
        m = load_chain(cfg)
        psi0 = io.initial_state(cfg.model, m.dim)
        header = "trajectory_id,step,outcome,norm_sq\n"
        parts = _run_blocks(_chain_block, (m, psi0, cfg.seed), cfg.n_traj, cfg.workers, cfg.dump_every)
    elif cfg.kind == "sde":
        model, out_cfg, u = load_sde(cfg)
        grid = cfg.grid()
        check_grid(model, grid.dt)
        cols = ["trajectory_id", "t", "norm_sq"]
        cols += [f"X_{i + 1}" for i in range(out_cfg.n_out)]
        cols += [f"jump_{m + 1}" for m in range(model.n_jumps)]
        header = ",".join(cols) + "\n"
        parts = _run_blocks(_sde_block, (model, out_cfg, u, grid, cfg.seed), cfg.n_traj, cfg.workers,
                            cfg.dump_every)
    else:
        raise InputError(f"cannot sample a {cfg.kind!r} model")

    cfg.out.mkdir(parents=True, exist_ok=True)
    dumps = []
    # single ordered writer
    with open(cfg.out / "trajectories.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header)
        for text, d in parts:
            fh.write(text)
            dumps.extend(d)
    if cfg.dump_every:
        io.dump_json({"schema_version": io.SCHEMA_VERSION, "dump_every": cfg.dump_every, "trajectories": dumps},
                     cfg.out / "states.json")
    return EXIT_OK


# -- compare -------------------------------------------------------------------------


def _frob_stderr(se_re: np.ndarray, se_im: np.ndarray) -> np.ndarray:
    return np.sqrt((se_re**2 + se_im**2).sum(axis=(-2, -1)))


def _oracle_path(gen, rho0, grid: TimeGrid) -> np.ndarray:
    refine = max(4, math.ceil(grid.dt * gen.scale() / MAX_STEP_NORM))
    return evolve(gen, rho0, grid, refine)


def _scheme_bias(model: SdeModel, gen, u, grid: TimeGrid) -> float:
    """Worst trace distance between the exact scheme mean and the oracle."""
    exact = expected_pure(model, u, grid)
    oracle = _oracle_path(gen, projector(u), grid)
    return max(trace_distance(a, b) for a, b in zip(exact, oracle))


def compare_sde(cfg: RunConfig) -> dict:
    model, _, u = load_sde(cfg)
    grid = cfg.grid()
    check_grid(model, grid.dt)
    if abs(norm_sq(u) - 1.0) > 1e-12:
        raise InputError("initial state must be normalized for compare")
    gen = derive_generator(model)
    oracle = _oracle_path(gen, projector(u), grid)
    ens = run_ensemble(model, u, grid, cfg.n_traj, cfg.seed, cfg.workers)
    d = model.dim
    sigma = 0.5 * math.sqrt(d) * _frob_stderr(ens.stderr_re, ens.stderr_im)
    bias = _scheme_bias(model, gen, u, grid)
    half = _scheme_bias(model, gen, u, grid.refine(2))
    # first-order constant estimated by halving dt
    C = float(cfg.tol) if cfg.tol is not None else max(bias / grid.dt, 2.0 * half / grid.dt)
    rows = []
    ok = True
    for k, t in enumerate(grid.times):
        dist = trace_distance(ens.states[k], oracle[k])
        bound = max(C * grid.dt + 3.0 * sigma[k], 1e-12)
        passed = dist <= bound
        ok &= passed
        rows.append({"t": float(t), "trace_distance": dist, "mc_stderr": float(sigma[k]),
                     "tolerance": bound, "pass": bool(passed)})
    return {
        "kind": "sde",
        "pass": bool(ok),
        "dt": grid.dt,
        "n_steps": grid.n_steps,
        "n_traj": cfg.n_traj,
        "seed": cfg.seed,
        "bias_constant": C,
        "bias_bound": C * grid.dt,
        "scheme_bias": bias,
        "scheme_bias_half_dt": half,
        "observed_order": math.log2(bias / half) if bias > 0 and half > 0 else None,
        "times": rows,
    }


def compare_chain(cfg: RunConfig) -> dict:
    m = load_chain(cfg)
    if not m.markov:
        raise InputError(NON_MARKOV_MESSAGE)
    psi0 = io.initial_state(cfg.model, m.dim)
    psi0 = psi0 / math.sqrt(norm_sq(psi0))
    n = m.n_steps
    d = m.dim
    s1 = np.zeros((n + 1, d, d), dtype=complex)
    s2re = np.zeros((n + 1, d, d))
    s2im = np.zeros((n + 1, d, d))
    for i in range(cfg.n_traj):
        _, states = sample_trajectory(m, psi0, trajectory_rng(cfg.seed, i))
        for k, phi in enumerate(states):
            rho = projector(phi / math.sqrt(norm_sq(phi)))
            s1[k] += rho
            s2re[k] += rho.real**2
            s2im[k] += rho.imag**2
    N = cfg.n_traj
    mean = s1 / N
    if N > 1:
        se_re = np.sqrt(np.maximum(s2re / N - mean.real**2, 0.0) / (N - 1))
        se_im = np.sqrt(np.maximum(s2im / N - mean.imag**2, 0.0) / (N - 1))
    else:
        se_re = se_im = np.zeros_like(s2re)
    sigma = 0.5 * math.sqrt(d) * _frob_stderr(se_re, se_im)
    rho0 = projector(psi0)
    rows = []
    ok = True
    for k in range(n + 1):
        target = unconditional_map(m, 0, k, rho0)
        dist = trace_distance(mean[k], target)
        bound = max(3.0 * sigma[k], 1e-12)
        passed = dist <= bound
        ok &= passed
        rows.append({"step": k, "trace_distance": dist, "mc_stderr": float(sigma[k]),
                     "tolerance": bound, "pass": bool(passed)})
    return {"kind": "chain", "pass": bool(ok), "n_traj": N, "seed": cfg.seed, "steps": rows}


def cmd_compare(cfg: RunConfig) -> int:
    if cfg.kind == "sde":
        payload = compare_sde(cfg)
    elif cfg.kind == "chain":
        payload = compare_chain(cfg)
    else:
        raise InputError(f"cannot compare a {cfg.kind!r} model")
    emit(cfg, "compare.json", payload)
    return EXIT_OK if payload["pass"] else EXIT_FAIL


# -- nondemolition -----------------------------------------------------------------


def _ndreport(cfg: RunConfig, tol: float) -> Report:
    pc = io.probe_chain_from_dict(cfg.model)
    psi = io.initial_state(cfg.model, pc.system_dim)
    return audit(pc, psi=psi, tol=tol)


def cmd_ndcheck(cfg: RunConfig) -> int:
    if cfg.kind != "probe-chain":
        raise InputError("ndcheck needs a probe-chain model")
    rep = _ndreport(cfg, 1e-9 if cfg.tol is None else float(cfg.tol))
    payload = rep.to_dict()
    payload["failing"] = [c.name for c in rep.failed()]
    emit(cfg, "ndcheck.json", payload)
    return _status(rep)


def cmd_extract_qsr(cfg: RunConfig) -> int:
    if cfg.kind != "probe-chain":
        raise InputError("extract-qsr needs a probe-chain model")
    pc = io.probe_chain_from_dict(cfg.model)
    if pc.recoupling is not None:
        raise InputError("the step operators of a recoupled chain are not a product of single-probe factors")
    m = extract_qsr(pc, 1.0 if cfg.dt is None else cfg.dt)
    emit(cfg, "extracted_chain.json", io.chain_to_dict(m))
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "sample": cmd_sample,
    "compare": cmd_compare,
    "ndcheck": cmd_ndcheck,
    "extract-qsr": cmd_extract_qsr,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qsrsim", description="Simulate and verify continuous quantum measurement models.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("model", help="model JSON file")
        sp.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        sp.add_argument("--n-traj", type=int, help="number of trajectories")
        sp.add_argument("--dt", type=float, help="time step; keeps the horizon of the run section")
        sp.add_argument("--n-steps", type=int, help="number of grid steps")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--workers", type=int, default=1, help="worker processes")
        sp.add_argument("--tol", type=float, help="tolerance override")
        if name == "sample":
            sp.add_argument("--dump-every", type=int, help="dump full states every s-th step to states.json")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        return COMMANDS[cfg.command](cfg)
    except (InputError, io.ModelFileError, GridTooCoarseError, DimensionCapError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
