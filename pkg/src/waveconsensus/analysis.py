"""Discrete norms, Lyapunov functionals, and the certificate checkers.

All spatial integrals use composite-trapezoid quadrature (matching the
solver's second order), and the velocity entering the functionals is the
same centered two-step difference the simulator reports.  Functional values
below FLUSH_FLOOR are reported as exact zeros: beyond that point the
quadratics sit in the IEEE subnormal range where quantization noise would
masquerade as growth.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import certificate as cert_mod
from .errors import CertificateError

FLUSH_FLOOR = 1e-300


@dataclass(frozen=True)
class FunctionalWeights:
    """Minimal parameter set for evaluating the Lyapunov functionals when
    no full certificate is in play (open-loop studies use rho1 = rho2 = 0,
    collapsing V to the plain energy)."""

    k1: float
    k2: float
    rho1: float
    rho2: float


_WEIGHT_CACHE: dict = {}


def trapezoid_weights(nx: int, dx: float) -> np.ndarray:
    w = np.full(nx, dx)
    w[0] = w[-1] = dx / 2.0
    return w


def _cached_weights(nx: int, dx: float):
    """Trapezoid weights and the (x-1)-weighted variant, shared across
    samples of the same grid."""
    key = (nx, dx)
    if key not in _WEIGHT_CACHE:
        w = trapezoid_weights(nx, dx)
        zw = (np.linspace(0.0, 1.0, nx) - 1.0) * w
        w.flags.writeable = False
        zw.flags.writeable = False
        _WEIGHT_CACHE[key] = (w, zw)
    return _WEIGHT_CACHE[key]


def l2_norm_scalar(field, grid) -> float:
    """Trapezoid approximation of the L2 norm on [0, 1]."""
    z = np.asarray(field, dtype=float)
    if z.shape != (grid.nx,):
        raise ValueError(f"field length {z.shape} does not match grid nx={grid.nx}")
    w = trapezoid_weights(grid.nx, grid.dx)
    return math.sqrt(float(np.sum(z * z * w)))


def l2_norm_vector(fields, grid) -> float:
    """Root of the summed squared scalar norms over the agent vector."""
    z = np.asarray(fields, dtype=float)
    if z.ndim == 1:
        return l2_norm_scalar(z, grid)
    if z.shape[1] != grid.nx:
        raise ValueError(f"field length {z.shape[1]} does not match grid nx={grid.nx}")
    w = trapezoid_weights(grid.nx, grid.dx)
    return math.sqrt(float(np.einsum("ij,ij,j->", z, z, w)))


def spatial_derivative(field, grid) -> np.ndarray:
    """Centered differences inside, one-sided second order at the ends."""
    z = np.atleast_2d(np.asarray(field, dtype=float))
    if grid.nx < 3:
        raise ValueError("spatial derivative needs nx >= 3")
    if z.shape[-1] != grid.nx:
        raise ValueError(f"field length {z.shape[-1]} does not match grid nx={grid.nx}")
    d = np.empty_like(z)
    dx = grid.dx
    d[:, 1:-1] = (z[:, 2:] - z[:, :-2]) / (2.0 * dx)
    d[:, 0] = (-3.0 * z[:, 0] + 4.0 * z[:, 1] - z[:, 2]) / (2.0 * dx)
    d[:, -1] = (3.0 * z[:, -1] - 4.0 * z[:, -2] + z[:, -3]) / (2.0 * dx)
    return d if np.asarray(field).ndim > 1 else d[0]


@dataclass(frozen=True)
class FunctionalSample:
    """Per-step diagnostics of the deviation fields."""

    time: float
    E: float
    G1: float
    G2: float
    V: float
    V0: float
    l2_error: float
    h1_seminorm: float
    ptwise_max_sq: float
    boundary_err_sq: float
    es_psi0_sq: float = 0.0
    es_psi1_sq: float = 0.0
    es_f_sq: float = 0.0


@dataclass
class TimeSeries:
    """Ordered functional samples plus run metadata."""

    grid: object
    gains: object
    certificate: object
    times: list = field(default_factory=list)
    columns: dict = field(default_factory=dict)

    _FIELDS = ("E", "G1", "G2", "V", "V0", "l2_error", "h1_seminorm",
               "ptwise_max_sq", "boundary_err_sq",
               "es_psi0_sq", "es_psi1_sq", "es_f_sq")

    def __post_init__(self):
        for name in self._FIELDS:
            self.columns.setdefault(name, [])

    def append(self, sample: FunctionalSample) -> None:
        if self.times and sample.time <= self.times[-1]:
            raise ValueError("time stamps must be strictly increasing")
        self.times.append(sample.time)
        for name in self._FIELDS:
            self.columns[name].append(getattr(sample, name))

    def column(self, name: str) -> np.ndarray:
        if name == "time":
            return np.asarray(self.times, dtype=float)
        return np.asarray(self.columns[name], dtype=float)

    @property
    def samples(self) -> list:
        return [FunctionalSample(time=t, **{n: self.columns[n][i] for n in self._FIELDS})
                for i, t in enumerate(self.times)]

    def __len__(self) -> int:
        return len(self.times)


def lyapunov_sample(u_tilde, u_tilde_t, cert, m, grid, time: float = 0.0,
                    es_psi0_sq: float = 0.0, es_psi1_sq: float = 0.0,
                    es_f_sq: float = 0.0) -> FunctionalSample:
    """Evaluate E, G1, G2, V, V0 and the error norms on one deviation state.

    u_tilde / u_tilde_t: (n, nx) deviation displacement and velocity fields.
    cert supplies (k1, k2, rho1, rho2); m is the pinned matrix.
    """
    ut = np.atleast_2d(np.asarray(u_tilde, dtype=float))
    vt = np.atleast_2d(np.asarray(u_tilde_t, dtype=float))
    nx = grid.nx
    dx = grid.dx
    w, zw = _cached_weights(nx, dx)
    if ut.size == 0:
        return FunctionalSample(time=time, E=0.0, G1=0.0, G2=0.0, V=0.0, V0=0.0,
                                l2_error=0.0, h1_seminorm=0.0, ptwise_max_sq=0.0,
                                boundary_err_sq=0.0, es_psi0_sq=es_psi0_sq,
                                es_psi1_sq=es_psi1_sq, es_f_sq=es_f_sq)
    d = spatial_derivative(ut, grid)
    nsq_d = float(np.einsum("ij,ij,j->", d, d, w))
    nsq_v = float(np.einsum("ij,ij,j->", vt, vt, w))
    ub = ut[:, -1]
    quad = float(ub @ np.asarray(m, dtype=float) @ ub)
    e_val = 0.5 * nsq_d + 0.5 * nsq_v + 0.5 * cert.k1 * quad
    g1 = 0.5 * cert.rho1 * cert.k2 * quad + cert.rho1 * float(ub @ (vt @ w))
    g2 = cert.rho2 * float(np.einsum("ij,ij,j->", vt, d, zw))
    v = e_val + g1 + g2
    v0 = nsq_d + nsq_v + float(ub @ ub)
    l2 = math.sqrt(float(np.einsum("ij,ij,j->", ut, ut, w)))
    sample = FunctionalSample(
        time=time, E=e_val, G1=g1, G2=g2, V=v, V0=v0, l2_error=l2,
        h1_seminorm=math.sqrt(nsq_d), ptwise_max_sq=float(np.max(ut * ut)),
        boundary_err_sq=float(ub @ ub),
        es_psi0_sq=es_psi0_sq, es_psi1_sq=es_psi1_sq, es_f_sq=es_f_sq)
    if v0 < FLUSH_FLOOR:
        sample = FunctionalSample(
            time=time, E=0.0, G1=0.0, G2=0.0, V=0.0, V0=0.0, l2_error=0.0,
            h1_seminorm=0.0, ptwise_max_sq=0.0, boundary_err_sq=0.0,
            es_psi0_sq=es_psi0_sq, es_psi1_sq=es_psi1_sq, es_f_sq=es_f_sq)
    return sample


def open_loop_energy(state, grid, leader: bool) -> float:
    """Half the squared H1 seminorm plus half the squared velocity norm,
    for the leader (agent 0) or for the follower stack."""
    fields = state.u_curr[0:1] if leader else state.u_curr[1:]
    prev = state.u_prev[0:1] if leader else state.u_prev[1:]
    vel = (fields - prev) / grid.dt
    return open_loop_energy_fields(fields, vel, grid)


def open_loop_energy_fields(fields, velocity, grid) -> float:
    z = np.atleast_2d(np.asarray(fields, dtype=float))
    v = np.atleast_2d(np.asarray(velocity, dtype=float))
    if z.size == 0:
        return 0.0
    w = trapezoid_weights(grid.nx, grid.dx)
    d = spatial_derivative(z, grid)
    energy = 0.5 * float(np.einsum("ij,ij,j->", d, d, w)) \
        + 0.5 * float(np.einsum("ij,ij,j->", v, v, w))
    return 0.0 if energy < FLUSH_FLOOR else energy


def decay_fit(times, values, window=None):
    """Least-squares exponential rate of a positive series: slope of
    log(value) against t over the window; returns (rate, r_squared)."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if window is not None:
        lo, hi = window
        keep = (t >= lo) & (t <= hi)
        t, v = t[keep], v[keep]
    if t.size < 2:
        raise ValueError("decay fit needs at least two samples in the window")
    if np.any(v <= 0.0):
        raise ValueError("decay fit needs positive values in the window")
    logs = np.log(v)
    slope, intercept = np.polyfit(t, logs, 1)
    fitted = slope * t + intercept
    ss_res = float(np.sum((logs - fitted) ** 2))
    ss_tot = float(np.sum((logs - logs.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return -float(slope), r2


@dataclass(frozen=True)
class BoundReport:
    """Violation listing for an envelope check."""

    checked: int
    violations: tuple
    worst_ratio: float

    @property
    def ok(self) -> bool:
        return not self.violations


def monotone_decay_report(series: TimeSeries, rel_slack: float = 1e-6,
                          column: str = "V", abs_floor: float = 0.0) -> BoundReport:
    """Per-sample nonincrease check: x[k+1] <= x[k] (1 + rel) + abs_floor."""
    v = series.column(column)
    t = series.column("time")
    bad = []
    worst = 0.0
    for i in range(1, len(v)):
        limit = v[i - 1] * (1.0 + rel_slack) + abs_floor
        if v[i] > limit:
            bad.append((float(t[i]), float(v[i]), float(limit)))
            if v[i - 1] > 0:
                worst = max(worst, v[i] / v[i - 1] - 1.0)
    return BoundReport(checked=len(v) - 1, violations=tuple(bad), worst_ratio=worst)


def sandwich_report(series: TimeSeries, cert, rel_slack: float = 1e-8) -> BoundReport:
    """tau1 V0 <= V <= tau2 V0 at every sample."""
    v = series.column("V")
    v0 = series.column("V0")
    t = series.column("time")
    bad = []
    worst = 0.0
    for i in range(len(v)):
        lo = cert.tau1 * v0[i]
        hi = cert.tau2 * v0[i]
        if not (lo <= v[i] * (1.0 + rel_slack) and v[i] <= hi * (1.0 + rel_slack)):
            bad.append((float(t[i]), float(v[i]), float(lo), float(hi)))
            scale = max(abs(hi), abs(v[i]), 1e-300)
            worst = max(worst, abs(v[i] - np.clip(v[i], lo, hi)) / scale)
    return BoundReport(checked=len(v), violations=tuple(bad), worst_ratio=worst)


def envelope_report(series: TimeSeries, cert, slack: float = 0.05) -> BoundReport:
    """V(t) <= V(0) exp(-alpha t) (1 + slack) at every sample."""
    v = series.column("V")
    t = series.column("time")
    v_init = v[0]
    bad = []
    worst = 0.0
    for i in range(len(v)):
        bound = v_init * math.exp(-cert.alpha * t[i]) * (1.0 + slack)
        if v[i] > bound:
            bad.append((float(t[i]), float(v[i]), float(bound)))
            worst = max(worst, v[i] / bound - 1.0)
    return BoundReport(checked=len(v), violations=tuple(bad), worst_ratio=worst)


def pointwise_bound_check(series: TimeSeries, cert, v_initial: float | None = None,
                          slack: float = 0.05) -> BoundReport:
    """max_x |u~_i(x,t)|^2 <= delta exp(-alpha t) with delta from the
    certificate's pointwise-envelope factor and V(0)."""
    if v_initial is None:
        v_initial = float(series.column("V")[0])
    delta = cert.delta_factor * v_initial
    alpha = cert.alpha
    p = series.column("ptwise_max_sq")
    t = series.column("time")
    bad = []
    worst = 0.0
    for i in range(len(p)):
        bound = delta * math.exp(-alpha * t[i]) * (1.0 + slack)
        if p[i] > bound:
            bad.append((float(t[i]), float(p[i]), float(bound)))
            worst = max(worst, p[i] / bound - 1.0)
    return BoundReport(checked=len(p), violations=tuple(bad), worst_ratio=worst)


@dataclass(frozen=True)
class IssReport:
    conservative: BoundReport
    verbatim: BoundReport

    @property
    def ok(self) -> bool:
        return self.conservative.ok


def iss_check(series: TimeSeries, cert, dist=None) -> IssReport:
    """Compare V0(t) against the ISS bound with running disturbance sups.

    The conservative variant (transient scaled by tau2/tau1) is the
    contractual bound; the verbatim-paper variant is evaluated alongside.
    """
    if cert.regime != "perturbed":
        raise CertificateError("iss_check needs a perturbed-regime certificate")
    if dist is not None:
        for st in dist.f:
            if st.kind == "separable" and st.spatial.kind == "table":
                warnings.warn(
                    "table-based disturbance profiles carry no smoothness "
                    "guarantee; the ISS theorem assumes C^2 boundary data",
                    stacklevel=2)
    t = series.column("time")
    v0 = series.column("V0")
    v0_init = float(v0[0])
    es0 = series.column("es_psi0_sq")
    es1 = series.column("es_psi1_sq")
    esf = series.column("es_f_sq")
    reports = []
    for conservative in (True, False):
        bound = cert_mod.iss_bound(cert, v0_init, t, es0, es1, esf,
                                   conservative=conservative)
        bad = []
        worst = 0.0
        for i in range(len(t)):
            if v0[i] > bound[i]:
                bad.append((float(t[i]), float(v0[i]), float(bound[i])))
                worst = max(worst, v0[i] / bound[i] - 1.0)
        reports.append(BoundReport(checked=len(t), violations=tuple(bad),
                                   worst_ratio=worst))
    return IssReport(conservative=reports[0], verbatim=reports[1])


def poincare_check(fields, grid, endpoint: int = 1):
    """||b||^2 <= 2 (||b(endpoint)||^2 + ||b_x||^2) evaluated discretely.

    Returns (lhs, rhs, holds) for the agent-vector field.
    """
    z = np.atleast_2d(np.asarray(fields, dtype=float))
    w = trapezoid_weights(grid.nx, grid.dx)
    lhs = float(np.einsum("ij,ij,j->", z, z, w))
    b = z[:, -1] if endpoint == 1 else z[:, 0]
    d = spatial_derivative(z, grid)
    rhs = 2.0 * (float(b @ b) + float(np.einsum("ij,ij,j->", d, d, w)))
    return lhs, rhs, lhs <= rhs * (1.0 + 1e-8)


def agmon_check(field, grid):
    """max_x |u|^2 <= u(1)^2 + ||u|| ||u_x|| evaluated discretely on a
    single-agent field; returns (lhs, rhs, holds).

    This is the paper-stated form.  It is not a theorem for arbitrary H1
    fields (the provable constant on the product term is 2), so `holds`
    may legitimately be False for strongly peaked fields.
    """
    z = np.asarray(field, dtype=float)
    if z.ndim != 1:
        raise ValueError("agmon_check takes a single-agent field")
    lhs = float(np.max(z * z))
    d = spatial_derivative(z, grid)
    rhs = float(z[-1] ** 2) + l2_norm_scalar(z, grid) * l2_norm_scalar(d, grid)
    return lhs, rhs, lhs <= rhs * (1.0 + 1e-8)
