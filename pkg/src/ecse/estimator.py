"""State estimation as a bound-constrained, bilinearly constrained least squares.

    min   sum I_GPMU^2 + sum (G - G_M)^2 + (B - B_M)^2
    s.t.  linear MNA rows = 0, RTU KCL rows (bilinear) = 0,
          lo <= x <= hi for V_PMU, I_PMU, G, B

The weight of the PMU term comes from ``g_pmu`` itself since
``I_GPMU = g_pmu * dV``.

The solver is a primal-dual interior-point method (log barrier on the
bounds, Newton steps on the full KKT system, l1 merit line search). The
Hessian of the Lagrangian is exact and constant apart from the multiplier
weights of the bilinear rows. Inertia is not available from a sparse LU, so
the Hessian shift is chosen with a curvature test on the computed step.
Variables whose interval is degenerate are fixed and removed.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu, MatrixRankWarning

from .circuit import SplitCircuit, solve_frozen

log = logging.getLogger(__name__)

__all__ = [
    "EstimationProblem",
    "SolverOptions",
    "EstimationResult",
    "SolverError",
    "build_problem",
    "solve",
    "estimate",
    "extract_states",
    "constraint_residuals",
]


class SolverError(RuntimeError):
    pass


@dataclass
class EstimationProblem:
    circuit: SplitCircuit
    A: sp.csr_matrix
    rhs: np.ndarray
    bil_row: np.ndarray
    bil_a: np.ndarray
    bil_b: np.ndarray
    bil_coef: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    hess_diag: np.ndarray  # objective = 0.5 x'Hx + q'x + c0, H diagonal
    q: np.ndarray
    c0: float
    slack_idx: np.ndarray
    rtu_idx: np.ndarray  # (k, 2) indices of G, B

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * np.dot(self.hess_diag * x, x) + np.dot(self.q, x) + self.c0)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.hess_diag * x + self.q

    def constraints(self, x: np.ndarray) -> np.ndarray:
        r = self.A @ x - self.rhs
        if len(self.bil_row):
            np.add.at(r, self.bil_row, self.bil_coef * x[self.bil_a] * x[self.bil_b])
        return r

    def jacobian(self, x: np.ndarray) -> sp.csr_matrix:
        if not len(self.bil_row):
            return self.A
        rows = np.concatenate([self.bil_row, self.bil_row])
        cols = np.concatenate([self.bil_a, self.bil_b])
        vals = np.concatenate([self.bil_coef * x[self.bil_b], self.bil_coef * x[self.bil_a]])
        return (self.A + sp.csr_matrix((vals, (rows, cols)), shape=self.A.shape)).tocsr()

    def lagrangian_hessian(self, lam: np.ndarray) -> sp.csr_matrix:
        n = self.n
        h = sp.diags(self.hess_diag)
        if not len(self.bil_row):
            return h.tocsr()
        w = lam[self.bil_row] * self.bil_coef
        off = sp.csr_matrix((w, (self.bil_a, self.bil_b)), shape=(n, n))
        return (h + off + off.T).tocsr()


@dataclass
class SolverOptions:
    kkt_tol: float = 1e-8
    max_iter: int = 200
    init_strategy: str = "flat"  # or "measurement-midpoint"
    regularization: float = 1e-10
    mu_init: float = 1e-3
    fix_tol: float = 1e-13
    verbose: bool = False

    def __post_init__(self):
        if not self.kkt_tol > 0:
            raise ValueError("kkt_tol must be positive")
        if self.init_strategy not in ("flat", "measurement-midpoint"):
            raise ValueError(f"unknown init_strategy {self.init_strategy!r}")


@dataclass
class EstimationResult:
    x: np.ndarray
    v_rect: np.ndarray  # (N, 2) real/imaginary bus voltages
    rtu_gb: dict  # bus -> (G, B)
    slack_currents: np.ndarray
    objective_value: float
    kkt_residual: float
    iterations: int
    status: str  # converged | iteration-limit | infeasible
    bus_ids: list = field(default_factory=list)
    reference_bus: int | None = None
    multipliers: np.ndarray | None = None

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def v(self) -> np.ndarray:
        return self.v_rect[:, 0] + 1j * self.v_rect[:, 1]

    @property
    def v_polar(self) -> tuple[np.ndarray, np.ndarray]:
        return extract_states(self)


def build_problem(sc: SplitCircuit) -> EstimationProblem:
    n = sc.n_vars
    h = np.zeros(n)
    q = np.zeros(n)
    c0 = 0.0
    slack = np.array(sc.pmu_slack_currents, dtype=int)
    h[slack] = 2.0
    rtu = np.array([(g, b) for g, b, _, _ in sc.rtu_params], dtype=int).reshape(-1, 2)
    for g, b, gm, bm in sc.rtu_params:
        h[g] = h[b] = 2.0
        q[g], q[b] = -2.0 * gm, -2.0 * bm
        c0 += gm * gm + bm * bm
    return EstimationProblem(
        circuit=sc, A=sc.A, rhs=sc.rhs.copy(),
        bil_row=sc.bil_row, bil_a=sc.bil_a, bil_b=sc.bil_b, bil_coef=sc.bil_coef,
        lo=sc.lo.copy(), hi=sc.hi.copy(), hess_diag=h, q=q, c0=c0,
        slack_idx=slack, rtu_idx=rtu,
    )


def constraint_residuals(p: EstimationProblem, x: np.ndarray) -> tuple[float, float, float]:
    """Max-abs residual of the linear rows, of the bilinear rows, and the
    largest bound violation."""
    x = np.asarray(x, dtype=float)
    if x.shape != (p.n,):
        raise ValueError(f"point has shape {x.shape}, problem has {p.n} variables")
    r = np.abs(p.constraints(x))
    nl = np.zeros(p.m, dtype=bool)
    nl[p.bil_row] = True
    lin = float(r[~nl].max()) if (~nl).any() else 0.0
    bil = float(r[nl].max()) if nl.any() else 0.0
    viol = np.maximum(p.lo - x, x - p.hi)
    bound = float(max(0.0, viol.max())) if len(viol) else 0.0
    return lin, bil, bound


# --------------------------------------------------------------------------
# interior point
# --------------------------------------------------------------------------


def _initial_point(p: EstimationProblem, opts: SolverOptions, fixed: np.ndarray) -> np.ndarray:
    sc = p.circuit
    lo, hi = p.lo, p.hi
    if opts.init_strategy == "measurement-midpoint":
        x = solve_frozen(sc)
    else:
        x = np.zeros(p.n)
        for v in sc.variables:
            if v.kind == "node_voltage_real":
                x[v.index] = 1.0
        bounded = np.isfinite(lo) & np.isfinite(hi)
        x[bounded] = 0.5 * (lo[bounded] + hi[bounded])
        # consistent conductance currents for the flat voltages
        rows = p.A[_gpmu_rows(sc)]
        if rows.shape[0]:
            slack = p.slack_idx
            resid = rows @ x
            x[slack] -= resid
    x[fixed] = 0.5 * (lo[fixed] + hi[fixed])
    # push strictly inside one-sided and two-sided bounds
    fin_lo, fin_hi = np.isfinite(lo) & ~fixed, np.isfinite(hi) & ~fixed
    width = np.where(fin_lo & fin_hi, hi - lo, np.inf)
    push_lo = np.minimum(1e-2 * np.maximum(1.0, np.abs(lo)), 0.25 * width)
    push_hi = np.minimum(1e-2 * np.maximum(1.0, np.abs(hi)), 0.25 * width)
    with np.errstate(invalid="ignore"):
        x = np.where(fin_lo, np.maximum(x, lo + push_lo), x)
        x = np.where(fin_hi, np.minimum(x, hi - push_hi), x)
    return x


def _gpmu_rows(sc: SplitCircuit) -> np.ndarray:
    return np.array([i for i, lab in enumerate(sc.row_labels) if lab[0] == "gpmu"], dtype=int)


def _factor(kkt: sp.csc_matrix):
    with warnings.catch_warnings():
        warnings.simplefilter("error", MatrixRankWarning)
        try:
            lu = splu(kkt, permc_spec="COLAMD")
        except (RuntimeError, MatrixRankWarning):
            return None
    return lu


def solve(p: EstimationProblem, opts: SolverOptions | None = None) -> EstimationResult:
    """Find a KKT point of the estimation problem."""
    opts = opts or SolverOptions()
    lo, hi = p.lo, p.hi
    if np.any(lo > hi):
        bad = np.flatnonzero(lo > hi)
        raise SolverError(f"infeasible bounds on {len(bad)} variables (lo > hi), e.g. x{bad[0]}")
    scale = np.maximum(1.0, np.maximum(np.where(np.isfinite(lo), np.abs(lo), 0), np.where(np.isfinite(hi), np.abs(hi), 0)))
    fixed = np.isfinite(lo) & np.isfinite(hi) & (hi - lo <= opts.fix_tol * scale)
    free = np.flatnonzero(~fixed)
    nf = len(free)
    m = p.m

    x = _initial_point(p, opts, fixed)
    xf = x[free]
    lo_f, hi_f = lo[free], hi[free]
    has_lo = np.isfinite(lo_f)
    has_hi = np.isfinite(hi_f)
    il, iu = np.flatnonzero(has_lo), np.flatnonzero(has_hi)

    mu = opts.mu_init
    tol = opts.kkt_tol
    zl = mu / (xf[il] - lo_f[il])
    zu = mu / (hi_f[iu] - xf[iu])
    lam = np.zeros(m)
    nu = 1.0  # merit penalty
    delta_w_last = 0.0
    status = "iteration-limit"
    it = 0
    kkt_err = math.inf

    def full(xf_):
        xx = x.copy()
        xx[free] = xf_
        return xx

    def barrier_merit(xf_, mu_, nu_):
        xx = full(xf_)
        sl, su = xf_[il] - lo_f[il], hi_f[iu] - xf_[iu]
        if np.any(sl <= 0) or np.any(su <= 0):
            return math.inf
        return (p.objective(xx) - mu_ * (np.log(sl).sum() + np.log(su).sum())
                + nu_ * np.abs(p.constraints(xx)).sum())

    def errors(xx, lam_, zl_, zu_, mu_):
        gf = p.gradient(xx)[free]
        J = p.jacobian(xx).tocsc()[:, free]
        rd = gf + J.T @ lam_
        rd[il] -= zl_
        rd[iu] += zu_
        c = p.constraints(xx)
        comp_l = (xx[free][il] - lo_f[il]) * zl_ - mu_
        comp_u = (hi_f[iu] - xx[free][iu]) * zu_ - mu_
        comp = max(np.abs(comp_l).max(initial=0.0), np.abs(comp_u).max(initial=0.0))
        s_max = 100.0
        nz = len(zl_) + len(zu_)
        sd = max(s_max, (np.abs(lam_).sum() + np.abs(zl_).sum() + np.abs(zu_).sum()) / max(1, m + nz)) / s_max
        sc_ = max(s_max, (np.abs(zl_).sum() + np.abs(zu_).sum()) / max(1, nz)) / s_max
        dual = np.abs(rd).max(initial=0.0)
        prim = np.abs(c).max(initial=0.0)
        return max(dual / sd, prim, comp / sc_), dual, prim, comp

    while True:
        xx = full(xf)
        err0, dual, prim, comp = errors(xx, lam, zl, zu, 0.0)
        kkt_err = err0
        if opts.verbose:
            log.info("iter=%d obj=%.6e dual=%.3e primal=%.3e comp=%.3e mu=%.1e",
                     it, p.objective(xx), dual, prim, comp, mu)
        if err0 <= tol and prim <= tol and comp <= tol:
            status = "converged"
            break
        if it >= opts.max_iter:
            break
        # barrier subproblem update
        while True:
            err_mu = errors(xx, lam, zl, zu, mu)[0]
            if err_mu > 10.0 * mu or mu <= tol / 10.0:
                break
            mu = max(tol / 10.0, min(0.2 * mu, mu ** 1.5))
        it += 1

        J = p.jacobian(xx).tocsc()[:, free]
        W = p.lagrangian_hessian(lam).tocsc()[free][:, free]
        sig = np.zeros(nf)
        sig[il] += zl / (xf[il] - lo_f[il])
        sig[iu] += zu / (hi_f[iu] - xf[iu])
        gf = p.gradient(xx)[free]
        c = p.constraints(xx)
        gb = gf.copy()
        gb[il] -= mu / (xf[il] - lo_f[il])
        gb[iu] += mu / (hi_f[iu] - xf[iu])
        rhs = -np.concatenate([gb + J.T @ lam, c])

        delta_w = 0.0
        delta_c = 0.0
        base = W + sp.diags(sig)
        for attempt in range(40):
            kkt = sp.bmat(
                [[base + delta_w * sp.identity(nf) if delta_w else base, J.T],
                 [J, (-delta_c * sp.identity(m)) if delta_c else None]],
                format="csc",
            )
            lu = _factor(kkt)
            if lu is None:
                if delta_c == 0.0:
                    delta_c = max(opts.regularization, 1e-8 * mu ** 0.25)
                    continue
                delta_w = max(1e-8, 10.0 * delta_w) if delta_w else max(1e-8, 0.3 * delta_w_last)
                continue
            sol = lu.solve(rhs)
            if not np.all(np.isfinite(sol)):
                lu = None
                delta_w = max(1e-8, 10.0 * delta_w)
                continue
            dx, dlam = sol[:nf], sol[nf:]
            curv = float(dx @ (base @ dx)) + delta_w * float(dx @ dx)
            if curv >= 1e-12 * float(dx @ dx) or float(dx @ dx) < 1e-30:
                break
            delta_w = max(1e-8, 0.3 * delta_w_last) if delta_w == 0.0 else 10.0 * delta_w
        else:
            raise SolverError("KKT system singular beyond regularization")
        if delta_w:
            delta_w_last = delta_w

        sl = xf[il] - lo_f[il]
        su = hi_f[iu] - xf[iu]
        dzl = mu / sl - zl - (zl / sl) * dx[il]
        dzu = mu / su - zu + (zu / su) * dx[iu]
        tau = max(0.99, 1.0 - mu)
        a_p = _max_step(sl, dx[il], tau)
        a_p = min(a_p, _max_step(su, -dx[iu], tau))
        a_d = min(_max_step(zl, dzl, tau), _max_step(zu, dzu, tau))

        # l1 merit: penalty large enough for a descent direction
        c1 = np.abs(c).sum()
        dphi = float(gb @ dx)
        if c1 > 0:
            quad = max(0.0, float(dx @ ((base) @ dx)))
            nu_req = (dphi + 0.5 * quad) / (0.9 * c1)
            if nu < nu_req:
                nu = nu_req + 1.0
        d_merit = dphi - nu * c1
        phi0 = barrier_merit(xf, mu, nu)
        alpha = a_p
        accepted = False
        for _ in range(30):
            if barrier_merit(xf + alpha * dx, mu, nu) <= phi0 + 1e-4 * alpha * d_merit:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            alpha = a_p  # take the boundary-limited step rather than stall
        xf = xf + alpha * dx
        lam = lam + alpha * dlam
        zl = zl + a_d * dzl
        zu = zu + a_d * dzu
        # keep duals within a bounded ratio of the primal-dual centre
        sl = xf[il] - lo_f[il]
        su = hi_f[iu] - xf[iu]
        zl = np.clip(zl, mu / (1e10 * sl), 1e10 * mu / sl)
        zu = np.clip(zu, mu / (1e10 * su), 1e10 * mu / su)

    x = full(xf)
    return _result(p, x, lam, it, status, kkt_err)


def _max_step(s: np.ndarray, ds: np.ndarray, tau: float) -> float:
    neg = ds < 0
    if not neg.any():
        return 1.0
    return float(min(1.0, np.min(-tau * s[neg] / ds[neg])))


def _result(p: EstimationProblem, x, lam, it, status, kkt_err) -> EstimationResult:
    sc = p.circuit
    bus_ids = list(getattr(sc, "bus_ids", []))
    idx = sc.bus_voltage_indices(bus_ids) if bus_ids else np.zeros((0, 2), dtype=int)
    v_rect = np.column_stack([x[idx[:, 0]], x[idx[:, 1]]]) if len(idx) else np.zeros((0, 2))
    rtu = {bus: (float(x[g]), float(x[b])) for bus, (g, b, _, _) in zip(sc.rtu_param_buses, sc.rtu_params)}
    return EstimationResult(
        x=x, v_rect=v_rect, rtu_gb=rtu, slack_currents=x[p.slack_idx].copy(),
        objective_value=p.objective(x), kkt_residual=float(kkt_err), iterations=it,
        status=status, bus_ids=bus_ids, reference_bus=getattr(sc, "reference_bus", None),
        multipliers=lam,
    )


def estimate(sc: SplitCircuit, opts: SolverOptions | None = None) -> EstimationResult:
    return solve(build_problem(sc), opts)


def extract_states(r: EstimationResult, reference_bus: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Bus voltage magnitudes and angles with the reference bus at angle zero."""
    v = r.v
    mag = np.abs(v)
    ang = np.arctan2(v.imag, v.real)
    ref = r.reference_bus if reference_bus is None else reference_bus
    if ref is not None and r.bus_ids:
        ang = ang - ang[r.bus_ids.index(ref)]
        ang = (ang + np.pi) % (2 * np.pi) - np.pi
    return mag, ang
