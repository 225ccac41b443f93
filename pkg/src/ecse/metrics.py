"""Accuracy indices and the Monte-Carlo driver.

States are rectangular components (2N values). Before scoring, the
estimate and the measured PMU phasors are rotated so that the reference
PMU bus has angle zero; the truth is generated in that frame already.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import tempfile
from dataclasses import asdict, dataclass

import numpy as np

from .circuit import CircuitError, assemble
from .estimator import EstimationResult, SolverError, SolverOptions, build_problem, solve
from .measurement import MeasurementPlan, MeasurementSet, generate_measurements
from .netmodel import NetworkCase
from .powerflow import PFSolution, solve_power_flow

log = logging.getLogger(__name__)

__all__ = [
    "TrialScore",
    "sigma_sq_sum",
    "xi",
    "sigma_max",
    "scored_components",
    "score_trial",
    "trial_seeds",
    "run_monte_carlo",
    "summarize",
    "trials_csv",
    "summary_json",
    "write_atomic",
]


@dataclass
class TrialScore:
    trial: int
    seed: int
    sigma_sq_sum: float | None
    xi: float | None  # None when every scored measurement is exact
    sigma_max: float | None  # percent of 1 p.u.
    iterations: int
    status: str


def _rect(z) -> np.ndarray:
    """Flatten complex voltages or an (N, 2) array into 2N real components."""
    a = np.asarray(z)
    if np.iscomplexobj(a):
        return np.column_stack([a.real, a.imag]).ravel()
    return np.asarray(a, dtype=float).ravel()


def _pair(est, truth) -> tuple[np.ndarray, np.ndarray]:
    e, t = _rect(est), _rect(truth)
    if e.shape != t.shape:
        raise ValueError(f"dimension mismatch: {e.shape} vs {t.shape}")
    return e, t


def sigma_sq_sum(est, truth) -> float:
    """Sum of squared errors over all rectangular state components."""
    e, t = _pair(est, truth)
    return float(np.sum((e - t) ** 2))


def sigma_max(est, truth) -> float:
    """Largest absolute component error, in percent of 1 p.u."""
    e, t = _pair(est, truth)
    if e.size == 0:
        return 0.0
    return float(100.0 * np.max(np.abs(e - t)))


def xi(est_states, true_states, measured_states) -> float | None:
    """Ratio of estimation to measurement squared error on the scored set.

    Returns ``None`` (not applicable) when the measurements are exact, that
    is when their squared error is at rounding level (below 1e-24 per
    component).
    """
    e = np.asarray(est_states, dtype=float).ravel()
    t = np.asarray(true_states, dtype=float).ravel()
    m = np.asarray(measured_states, dtype=float).ravel()
    if not e.shape == t.shape == m.shape:
        raise ValueError(f"dimension mismatch: {e.shape}, {t.shape}, {m.shape}")
    den = float(np.sum((m - t) ** 2))
    if den <= 1e-24 * max(1, m.size):
        return None
    return float(np.sum((e - t) ** 2)) / den


def _rotate_to(v: np.ndarray, case: NetworkCase, bus: int) -> np.ndarray:
    a = np.angle(v[case.index[bus]])
    return v * np.exp(-1j * a)


def scored_components(case: NetworkCase, ms: MeasurementSet, v_est: np.ndarray):
    """Directly measured state components: (estimated, true, measured).

    PMU buses contribute V_R and V_I; RTU buses contribute |V|.
    """
    if ms.truth is None:
        raise ValueError("measurement set carries no truth")
    ref = ms.plan.reference_bus
    v_est = _rotate_to(np.asarray(v_est, dtype=complex), case, ref)
    v_true = ms.truth.v
    pm = {p.bus: complex(p.v_real.mid, p.v_imag.mid) for p in ms.pmus}
    rot = np.exp(-1j * np.angle(pm[ref])) if ref in pm else 1.0
    est, true, meas = [], [], []
    for p in ms.pmus:
        i = case.index[p.bus]
        vm = pm[p.bus] * rot
        est += [v_est[i].real, v_est[i].imag]
        true += [v_true[i].real, v_true[i].imag]
        meas += [vm.real, vm.imag]
    for r in ms.rtus:
        i = case.index[r.bus]
        est.append(abs(v_est[i]))
        true.append(abs(v_true[i]))
        meas.append(r.v_mag.mid)
    return np.array(est), np.array(true), np.array(meas)


def score_trial(case: NetworkCase, ms: MeasurementSet, res: EstimationResult,
                trial: int = 0) -> TrialScore:
    v = _rotate_to(res.v, case, ms.plan.reference_bus)
    e, t, m = scored_components(case, ms, v)
    return TrialScore(
        trial=trial,
        seed=ms.plan.seed,
        sigma_sq_sum=sigma_sq_sum(v, ms.truth.v),
        xi=xi(e, t, m),
        sigma_max=sigma_max(v, ms.truth.v),
        iterations=res.iterations,
        status=res.status,
    )


def trial_seeds(base_seed: int, trials: int) -> list[int]:
    """Independent per-trial seeds derived from one base seed."""
    ss = np.random.SeedSequence(int(base_seed))
    return [int(s) for s in ss.generate_state(trials, dtype=np.uint32)]


def run_monte_carlo(
    case: NetworkCase,
    plan: MeasurementPlan,
    trials: int,
    base_seed: int = 0,
    g_pmu: float = 10.0,
    opts: SolverOptions | None = None,
    truth: PFSolution | None = None,
    rtu_target: str = "reading",
) -> tuple[dict, list[TrialScore]]:
    """Estimate ``trials`` independent measurement draws and score them.

    The plan's own seed is replaced per trial. Trials whose solve fails or
    does not converge are kept in the per-trial list but excluded from the
    averages.
    """
    if trials < 1:
        raise ValueError(f"trials must be at least 1, got {trials}")
    if truth is None:
        truth = solve_power_flow(case)
    scores = []
    for k, seed in enumerate(trial_seeds(base_seed, trials)):
        ms = generate_measurements(truth, plan.with_seed(seed))
        try:
            res = solve(build_problem(assemble(case, ms, g_pmu, rtu_target)), opts)
        except (SolverError, CircuitError) as exc:
            log.warning("trial %d failed: %s", k, exc)
            scores.append(TrialScore(k, seed, None, None, None, 0, "failed"))
            continue
        if not res.converged:
            scores.append(TrialScore(k, seed, None, None, None, res.iterations, res.status))
            continue
        s = score_trial(case, ms, res, k)
        log.info("trial %d: sigma2 %.3e xi %s smax %.4f%%", k, s.sigma_sq_sum, s.xi, s.sigma_max)
        scores.append(s)
    summary = summarize(scores)
    summary.update(case=case.name, base_seed=int(base_seed), g_pmu=float(g_pmu))
    return summary, scores


def _stats(vals: list[float]) -> dict | None:
    if not vals:
        return None
    a = np.array(vals, dtype=float)
    return {"mean": float(a.mean()), "min": float(a.min()), "max": float(a.max())}


def summarize(scores: list[TrialScore]) -> dict:
    ok = [s for s in scores if s.status == "converged"]
    xis = [s.xi for s in ok if s.xi is not None]
    return {
        "trials": len(scores),
        "converged": len(ok),
        "failed": len(scores) - len(ok),
        "sigma_sq_sum": _stats([s.sigma_sq_sum for s in ok]),
        "xi": _stats(xis),
        "xi_not_applicable": len(ok) - len(xis),
        "sigma_max_pct": _stats([s.sigma_max for s in ok]),
        "iterations": _stats([s.iterations for s in ok]),
    }


def trials_csv(scores: list[TrialScore]) -> str:
    buf = io.StringIO()
    fields = list(TrialScore.__dataclass_fields__)
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for s in scores:
        row = asdict(s)
        w.writerow({k: ("" if v is None else (repr(v) if isinstance(v, float) else v))
                    for k, v in row.items()})
    return buf.getvalue()


def summary_json(summary: dict) -> str:
    return json.dumps(summary, indent=2, sort_keys=True) + "\n"


def write_atomic(path: str, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and rename."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
