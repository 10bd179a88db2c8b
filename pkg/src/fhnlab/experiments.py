"""Experiment runners used by the command line front-end.

Every runner takes a raw configuration (plain nested dict, so it can be sent
to worker processes) and returns an :class:`Outcome` whose artifacts are text
blobs keyed by file name.  Nothing here touches the file system; the caller
writes artifacts, which keeps output serialized and inside one directory.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .attractor import (THRESHOLDS_NOTE, AbsorbingRecord, AbsorbingReport, absorbing_probe,
                        attractor_approximate, averaged_integral_probe, h1_probe, h1_samples, initial_ball,
                        pullback_states, tail_probe)
from .config import ExperimentConfig
from .model import Nonlinearity, certify_f
from .noise import (generate_path, ou_evaluate, ou_trace, path_csv_text, path_metadata,
                    theta_shift)
from .solver import (SolveConfig, StatePair, _y_at, phi, solve_forward, trajectory_csv_text,
                     trajectory_rows, weighted_energy)
from .spatial import Field, field_csv_text, gradient_energy_values

EXPERIMENTS = ("simulate", "pullback", "absorbing", "tails", "attractor", "certify-f",
               "selftest")


@dataclass
class Outcome:
    passed: bool
    artifacts: dict[str, str] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)


def dumps(obj) -> str:
    """Deterministic JSON (sorted keys, fixed indentation, trailing newline)."""
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def _setup(raw: dict, seed: int | None):
    cfg = ExperimentConfig(raw)
    spec, nl = cfg.model()
    path = None
    if seed is not None:
        t_minus, t_plus = cfg.window()
        path = generate_path(seed, cfg.dt_path, t_minus, t_plus)
    return cfg, spec, nl, path


def _map(fn, raw: dict, seeds: list[int], workers: int) -> list:
    """Run ``fn(raw, seed)`` for every seed; results come back in seed order."""
    if workers <= 1 or len(seeds) <= 1:
        return [fn(raw, s) for s in seeds]
    with ProcessPoolExecutor(max_workers=min(workers, len(seeds))) as pool:
        return list(pool.map(fn, [raw] * len(seeds), seeds))


# ---------------------------------------------------------------------------
# per-seed tasks (module level so they pickle)

def _simulate_one(raw: dict, seed: int) -> dict[str, str]:
    cfg, spec, nl, path = _setup(raw, seed)
    u0, v0 = initial_ball(spec.grid, cfg.initial_radius, 1, cfg.ensemble_seed)[0]
    sc = cfg.solve
    y1, y2 = _y_at(path, spec, 0.0, sc.dt)
    init = StatePair(u0 - spec.phi1 * y1, v0 - spec.phi2 * y2, 0.0, seed, 0.0, y1, y2)
    states = solve_forward(init, path, spec, nl, sc, cfg.t_end)
    rows = trajectory_rows(states, spec, cfg.tail_radii)
    times = [st.t for st in states]
    last = states[-1]
    arts = {
        f"trajectory_s{seed}.csv": trajectory_csv_text(rows),
        f"noise_s{seed}.csv": path_csv_text(path, spec.lam, spec.delta, times),
        f"noise_s{seed}.json": dumps(path_metadata(path)),
        f"final_u_tilde_s{seed}.csv": field_csv_text(last.u_tilde),
        f"final_v_tilde_s{seed}.csv": field_csv_text(last.v_tilde),
    }
    if cfg.t_end >= 1.0:
        arts[f"integrals_s{seed}.json"] = dumps(averaged_integral_probe(states, spec))
    return arts


def _pullback_one(raw: dict, seed: int) -> tuple[dict[str, str], dict, list]:
    cfg, spec, nl, path = _setup(raw, seed)
    sc = cfg.solve
    members = initial_ball(spec.grid, cfg.initial_radius, cfg.ensemble_size, cfg.ensemble_seed)
    lines = ["horizon,member,energy,grad_u_tilde_sq,norm_u,norm_v"]
    spread = {}
    last = None
    for t in cfg.horizons:
        states = pullback_states(t, path, members, spec, nl, sc)
        energies = []
        for j, st in enumerate(states):
            e = weighted_energy(spec, st.u_tilde, st.v_tilde)
            energies.append(e)
            u = st.u_tilde + spec.phi1 * st.y1
            v = st.v_tilde + spec.phi2 * st.y2
            g = gradient_energy_values(spec.grid, st.u_tilde.values)
            nu = math.sqrt(spec.grid.cell_volume * float(u.values @ u.values))
            nv = math.sqrt(spec.grid.cell_volume * float(v.values @ v.values))
            lines.append(f"{t!r},{j},{e!r},{g!r},{nu!r},{nv!r}")
        spread[repr(t)] = {"min_energy": min(energies), "max_energy": max(energies)}
        last = states
    t_grid = np.arange(-max(cfg.horizons), 0.0 + 1e-12, max(sc.dt, cfg.dt_path))
    trace = ou_trace(path, spec.lam, spec.delta, t_grid, spec.p)
    samples = h1_samples(spec, nl, path, cfg.horizons, members[0], sc, trace.r_hat)
    arts = {
        f"pullback_s{seed}.csv": "\n".join(lines) + "\n",
        f"pullback_u_tilde_s{seed}.csv": field_csv_text(last[0].u_tilde),
        f"pullback_v_tilde_s{seed}.csv": field_csv_text(last[0].v_tilde),
    }
    rec = {"seed": seed, "energy_by_horizon": spread, "r_hat": trace.r_hat,
           "ou_truncation_bound": trace.truncation_bound}
    return arts, rec, samples


def _absorbing_one(raw: dict, seed: int) -> AbsorbingReport:
    cfg, spec, nl, path = _setup(raw, seed)
    hs = cfg.horizons
    return absorbing_probe(spec, nl, [path], cfg.initial_radii, max(hs), cfg.solve,
                           horizons=hs, seed=cfg.ensemble_seed, absorb_factor=cfg.absorb_factor)


def _tails_one(raw: dict, seed: int) -> dict:
    cfg, spec, nl, path = _setup(raw, seed)
    member = initial_ball(spec.grid, cfg.initial_radius, 1, cfg.ensemble_seed)
    states = [pullback_states(t, path, member, spec, nl, cfg.solve)[0] for t in cfg.horizons]
    rep = tail_probe(states, spec, cfg.tail_radii, cfg.epsilon, cfg.horizons).as_dict()
    rep["seed"] = seed
    return rep


def _attractor_one(raw: dict, seed: int) -> tuple[dict[str, str], dict]:
    cfg, spec, nl, path = _setup(raw, seed)
    grid = spec.grid
    ens = initial_ball(grid, cfg.initial_radius, cfg.ensemble_size, cfg.ensemble_seed)
    ball = initial_ball(grid, cfg.initial_radius, cfg.test_ball_size, cfg.ensemble_seed + 1)
    approx = attractor_approximate(spec, nl, path, ens, cfg.horizons, cfg.cluster_tol, cfg.solve,
                                   invariance_shift=cfg.invariance_shift or None,
                                   test_ball=ball)
    arts = {}
    for j, (u, v) in enumerate(approx.representatives):
        arts[f"attractor_s{seed}_rep{j}_u.csv"] = field_csv_text(u)
        arts[f"attractor_s{seed}_rep{j}_v.csv"] = field_csv_text(v)
    rec = approx.as_dict()
    rec["seed"] = seed
    return arts, rec


# ---------------------------------------------------------------------------
# experiments

def run_simulate(raw: dict, workers: int = 1) -> Outcome:
    cfg = ExperimentConfig(raw)
    arts: dict[str, str] = {}
    for a in _map(_simulate_one, raw, cfg.seeds, workers):
        arts.update(a)
    return Outcome(True, arts, {"seeds": cfg.seeds})


def run_pullback(raw: dict, workers: int = 1) -> Outcome:
    cfg = ExperimentConfig(raw)
    arts: dict[str, str] = {}
    records, samples = [], []
    for a, rec, smp in _map(_pullback_one, raw, cfg.seeds, workers):
        arts.update(a)
        records.append(rec)
        samples.extend(smp)
    h1 = h1_probe(samples)
    report = {"horizons": cfg.horizons, "records": records, "h1": h1, "note": THRESHOLDS_NOTE}
    arts["pullback.json"] = dumps(report)
    ok = bool(h1["grad_u_sq_saturated"] and h1["grad_v2_sq_saturated"])
    return Outcome(ok, arts, {"h1_saturated": ok})


def run_absorbing(raw: dict, workers: int = 1) -> Outcome:
    cfg = ExperimentConfig(raw)
    reports = _map(_absorbing_one, raw, cfg.seeds, workers)
    records: list[AbsorbingRecord] = [r for rep in reports for r in rep.records]
    merged = AbsorbingReport(reports[0].eta_used, cfg.absorb_factor, max(cfg.horizons), records)
    lines = ["seed,radius,horizon,energy"]
    forgets = True
    for r in records:
        for i, rad in enumerate(r.initial_radii):
            for t, e in zip(r.horizons, r.energies[i]):
                lines.append(f"{r.seed},{rad!r},{t!r},{float(e)!r}")
        final = np.array(r.eventual_energies())
        if r.flagged or not np.all(np.isfinite(final)) or final.max() > 2 * final.min():
            forgets = False
    rep = merged.as_dict()
    rep["forgets_initial_data"] = forgets
    arts = {"absorbing.json": dumps(rep), "absorbing_energies.csv": "\n".join(lines) + "\n"}
    return Outcome(forgets, arts, {"rho_K": merged.rho_K, "forgets_initial_data": forgets})


def run_tails(raw: dict, workers: int = 1) -> Outcome:
    cfg = ExperimentConfig(raw)
    reps = _map(_tails_one, raw, cfg.seeds, workers)
    ok = all(r["monotone"] and r["triangle_ok"] and r["R_hat"] is not None for r in reps)
    arts = {"tails.json": dumps({"records": reps, "note": THRESHOLDS_NOTE})}
    return Outcome(ok, arts, {"R_hat": [r["R_hat"] for r in reps]})


def run_attractor(raw: dict, workers: int = 1) -> Outcome:
    cfg = ExperimentConfig(raw)
    arts: dict[str, str] = {}
    recs = []
    for a, rec in _map(_attractor_one, raw, cfg.seeds, workers):
        arts.update(a)
        recs.append(rec)
    arts["attractor.json"] = dumps({"records": recs, "note": THRESHOLDS_NOTE})
    return Outcome(True, arts, {"n_clusters": [r["n_clusters"][-1] for r in recs]})


def run_certify(raw: dict, workers: int = 1) -> Outcome:
    cfg = ExperimentConfig(raw)
    spec, nl = cfg.model()
    rep = certify_f(nl, spec)
    d = rep.as_dict()
    d["nonlinearity"] = nl.kind
    return Outcome(rep.passed, {"certify.json": dumps(d)},
                   {"passed": rep.passed, "failed": rep.failed_conditions})


def run_selftest(raw: dict, workers: int = 1) -> Outcome:
    """Small invariant suite on a coarse copy of the configured model."""
    cfg = ExperimentConfig(raw)
    g0 = cfg.grid
    small = {sec: dict(kv) for sec, kv in raw.items()}
    # csv-defined fields are tied to their own grid, so only shrink analytic setups
    if not any(str(v).strip().startswith("csv:") for v in small["model"].values()):
        small["grid"].update({"n": str(min(g0.n, 64)), "L": repr(min(g0.L, 10.0))})
    cfg = ExperimentConfig(small)
    spec, nl = cfg.model()
    grid = spec.grid
    sc = cfg.solve
    step = max(sc.dt, cfg.dt_path)
    seed = cfg.seeds[0]
    path = generate_path(seed, cfg.dt_path, 2.0 + 40.0 / spec.eta, 2.0)
    checks = {}

    u0, v0 = initial_ball(grid, 1.0, 1, cfg.ensemble_seed)[0]
    s, t = 50 * step, 30 * step
    whole = phi(s + t, path, u0, v0, spec, nl, sc)
    us, vs = phi(s, path, u0, v0, spec, nl, sc)
    two = phi(t, theta_shift(path, s), us, vs, spec, nl, sc)
    diff = max(float(np.max(np.abs(whole[0].values - two[0].values))),
               float(np.max(np.abs(whole[1].values - two[1].values))))
    checks["cocycle"] = {"residual": diff, "ok": diff <= 1e-10}

    lin = spec.without_forcing().without_noise()
    zero = Nonlinearity.zero()
    st0 = StatePair(u0, v0)
    states = solve_forward(st0, None, lin.replace(alpha=0.0, beta=0.0), zero,
                           SolveConfig(sc.dt, sc.scheme, 10), 1.0)
    vt = states[-1].v_tilde
    ratio = math.sqrt(float(vt.values @ vt.values) / float(v0.values @ v0.values))
    err = abs(ratio - math.exp(-spec.delta * 1.0)) / math.exp(-spec.delta)
    checks["v_decay"] = {"relative_error": err, "ok": err <= 1e-12}

    E = [weighted_energy(lin, s.u_tilde, s.v_tilde)
         for s in solve_forward(st0, None, lin, zero, SolveConfig(sc.dt, sc.scheme, 10), 1.0)]
    mono = all(b <= a * (1 + 1e-12) for a, b in zip(E, E[1:]))
    checks["gronwall"] = {"monotone": mono, "ok": mono}

    zs = solve_forward(StatePair(Field.zeros(grid), Field.zeros(grid)), None,
                       spec.without_forcing().without_noise(), nl, sc, 0.1)
    zmax = max(float(np.max(np.abs(zs[-1].u_tilde.values))),
               float(np.max(np.abs(zs[-1].v_tilde.values))))
    checks["zero_fixed_point"] = {"max_abs": zmax, "ok": zmax == 0.0}

    big = generate_path(seed, cfg.dt_path, 4.0, 4.0)
    k = min(path.data.n_intervals - path.generated_origin, 100)
    pre = bool(np.array_equal(path.increments_1[path.generated_origin:path.generated_origin + k],
                              big.increments_1[big.generated_origin:big.generated_origin + k]))
    checks["path_prefix_consistency"] = {"ok": pre}

    y_a = ou_evaluate(path, spec.lam, 1, [0.0])
    y_b = ou_evaluate(generate_path(seed, cfg.dt_path, 2.0 + 40.0 / spec.eta, 2.0),
                      spec.lam, 1, [0.0])
    checks["determinism"] = {"ok": bool(np.array_equal(y_a, y_b))}

    cert = certify_f(nl, spec)
    checks["certify_f"] = {"passed": cert.passed, "failed": cert.failed_conditions,
                           "ok": cert.passed}

    ok = all(c["ok"] for c in checks.values())
    return Outcome(ok, {"selftest.json": dumps({"checks": checks, "passed": ok})},
                   {name: c["ok"] for name, c in checks.items()})


RUNNERS = {
    "simulate": run_simulate,
    "pullback": run_pullback,
    "absorbing": run_absorbing,
    "tails": run_tails,
    "attractor": run_attractor,
    "certify-f": run_certify,
    "selftest": run_selftest,
}
