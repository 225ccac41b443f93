"""Polar Newton-Raphson AC power flow: the reference operating point.

Generator reactive limits are ignored. The slack bus angle is zero.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve, MatrixRankWarning

from .netmodel import PV, REF, NetworkCase

log = logging.getLogger(__name__)

__all__ = [
    "PFSolution",
    "PowerFlowError",
    "solve_power_flow",
    "compute_branch_currents",
    "compute_injections",
    "build_ybus",
]


class PowerFlowError(RuntimeError):
    pass


@dataclass
class PFSolution:
    case: NetworkCase
    v: np.ndarray  # complex bus voltages, p.u.
    i_from: np.ndarray  # current leaving the from-bus into each branch
    i_to: np.ndarray  # current leaving the to-bus into each branch
    i_load: np.ndarray  # per-bus current drawn by loads/gens (load convention)
    s_load: np.ndarray  # per-bus complex power drawn (load convention)
    iterations: int
    max_mismatch: float

    @property
    def v_rect(self) -> np.ndarray:
        return np.column_stack([self.v.real, self.v.imag])

    def rotated(self, angle: float) -> "PFSolution":
        """Same operating point with every phasor rotated by ``-angle``."""
        r = np.exp(-1j * angle)
        return PFSolution(
            self.case, self.v * r, self.i_from * r, self.i_to * r,
            self.i_load * r, self.s_load.copy(), self.iterations, self.max_mismatch,
        )

    def referenced_to(self, bus_id: int) -> "PFSolution":
        return self.rotated(float(np.angle(self.v[self.case.index[bus_id]])))


def build_ybus(case: NetworkCase, include_shunts: bool = True) -> sp.csr_matrix:
    n = case.n_bus
    rows, cols, vals = [], [], []
    for br in case.branches:
        if not br.status:
            continue
        f, t = case.index[br.from_bus], case.index[br.to_bus]
        yff, yft, ytf, ytt = br.admittances()
        rows += [f, f, t, t]
        cols += [f, t, f, t]
        vals += [yff, yft, ytf, ytt]
    if include_shunts:
        sh = case.shunts
        rows += list(range(n))
        cols += list(range(n))
        vals += list(sh)
    return sp.csr_matrix((np.array(vals, dtype=complex), (rows, cols)), shape=(n, n))


def compute_branch_currents(case: NetworkCase, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-branch end currents, each leaving its bus into the branch.

    Out-of-service branches carry zero current.
    """
    v = np.asarray(v, dtype=complex)
    nb = len(case.branches)
    i_from = np.zeros(nb, dtype=complex)
    i_to = np.zeros(nb, dtype=complex)
    for k, br in enumerate(case.branches):
        if not br.status:
            continue
        vf, vt = v[case.index[br.from_bus]], v[case.index[br.to_bus]]
        yff, yft, ytf, ytt = br.admittances()
        i_from[k] = yff * vf + yft * vt
        i_to[k] = ytf * vf + ytt * vt
    return i_from, i_to


def compute_injections(case: NetworkCase, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Current and power drawn at each bus by its loads and generators.

    Load convention: ``P = V_R I_R + V_I I_I`` and ``Q = -V_R I_I + V_I I_R``.
    Case shunts are network elements and are not part of the drawn current.
    """
    v = np.asarray(v, dtype=complex)
    i_net = build_ybus(case) @ v  # current pushed into the network, shunts included
    i_load = -i_net
    p = v.real * i_load.real + v.imag * i_load.imag
    q = -v.real * i_load.imag + v.imag * i_load.real
    return i_load, p + 1j * q


def _bus_types(case: NetworkCase):
    n = case.n_bus
    vset = np.array([b.vm for b in case.buses], dtype=float)
    has_gen = np.zeros(n, dtype=bool)
    for g in case.gens:
        if g.status:
            i = case.index[g.bus]
            has_gen[i] = True
            vset[i] = g.vg
    btype = np.array([b.bus_type for b in case.buses])
    ref = np.flatnonzero(btype == REF)
    if len(ref) != 1:
        raise PowerFlowError(f"expected exactly one slack bus, found {len(ref)}")
    pv = np.flatnonzero((btype == PV) & has_gen)
    pq = np.setdiff1d(np.arange(n), np.concatenate([ref, pv]))
    return ref, pv, pq, vset


def solve_power_flow(case: NetworkCase, tol: float = 1e-8, max_iter: int = 30) -> PFSolution:
    """Newton-Raphson power flow in polar coordinates from a flat start.

    Raises ``PowerFlowError`` when the mismatch is still above ``tol`` after
    ``max_iter`` iterations or the Jacobian is singular.
    """
    n = case.n_bus
    ybus = build_ybus(case)
    ref, pv, pq, vset = _bus_types(case)
    s_spec = case.gen_injections - case.load_injections

    vm = np.ones(n)
    va = np.zeros(n)
    vm[ref] = vset[ref]
    vm[pv] = vset[pv]
    pvpq = np.concatenate([pv, pq])
    npvpq, npq = len(pvpq), len(pq)

    def mismatch(v):
        s = v * np.conj(ybus @ v)
        d = s - s_spec
        return np.concatenate([d[pvpq].real, d[pq].imag])

    v = vm * np.exp(1j * va)
    f = mismatch(v)
    it = 0
    norm = np.max(np.abs(f)) if f.size else 0.0
    while norm > tol:
        if it >= max_iter:
            raise PowerFlowError(
                f"power flow did not converge in {max_iter} iterations (mismatch {norm:.3e})"
            )
        it += 1
        ibus = ybus @ v
        dv = sp.diags(v)
        di = sp.diags(ibus)
        dvn = sp.diags(v / np.abs(v))
        ds_dva = 1j * dv @ np.conj(sp.diags(ibus) - ybus @ dv)
        ds_dvm = dv @ np.conj(ybus @ dvn) + np.conj(di) @ dvn
        ds_dva = sp.csr_matrix(ds_dva)
        ds_dvm = sp.csr_matrix(ds_dvm)
        j11 = ds_dva[pvpq][:, pvpq].real
        j12 = ds_dvm[pvpq][:, pq].real
        j21 = ds_dva[pq][:, pvpq].imag
        j22 = ds_dvm[pq][:, pq].imag
        jac = sp.bmat([[j11, j12], [j21, j22]], format="csc")
        with warnings.catch_warnings():
            warnings.simplefilter("error", MatrixRankWarning)
            try:
                dx = spsolve(jac, -f)
            except (MatrixRankWarning, RuntimeError) as exc:
                raise PowerFlowError(f"singular power-flow Jacobian: {exc}") from None
        if not np.all(np.isfinite(dx)):
            raise PowerFlowError("singular power-flow Jacobian")
        va[pvpq] += dx[:npvpq]
        vm[pq] += dx[npvpq:]
        v = vm * np.exp(1j * va)
        f = mismatch(v)
        norm = np.max(np.abs(f)) if f.size else 0.0
        log.debug("pf iter %d mismatch %.3e", it, norm)

    i_from, i_to = compute_branch_currents(case, v)
    i_load, s_load = compute_injections(case, v)
    return PFSolution(case, v, i_from, i_to, i_load, s_load, it, float(norm))
