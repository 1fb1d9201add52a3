"""Gain tuning rules, Lyapunov certificate constants and the ISS bound.

Two regimes are supported.  In the unperturbed regime the gate is
k1 > c0/(2 lambda_min), k2 > 0 and a feasible pair (rho1, rho2) yields
constants (tau1, tau2, mu) certifying the decay rate alpha = mu/tau2 and
the pointwise envelope delta * exp(-alpha t).  In the perturbed regime the
gate tightens to k1 > (c0+3)/(2 lambda_min), k2 > 1/(2 lambda_min) and a
feasible tuple (rho1, rho2, xi1, xi2) yields (mu2, q0, qf) entering the
exponential ISS bound on V0.

One constraint is implemented in proof-consistent form rather than as
displayed: the last branch of the unperturbed rho1 bound is
(2 c0 - rho2 (1 + c0^2))/c0, the positivity condition of the boundary
velocity coefficient in the dissipation estimate (its perturbed analogue
is stated that way).  With the displayed reciprocal form the optimizer
selects parameters whose V is not monotone, which is observable in
simulation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CertificateError

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class MarginReport:
    """Outcome of a strict-inequality gate with the thresholds that were
    checked and the worst margin (positive = satisfied)."""

    ok: bool
    thresholds: dict
    margins: dict

    def __bool__(self) -> bool:
        return self.ok


@dataclass(frozen=True)
class GainCertificate:
    regime: str
    k1: float
    k2: float
    c0: float
    lambda_min: float
    lambda_max: float
    rho1: float
    rho2: float
    xi1: float | None
    xi2: float | None
    tau1: float
    tau2: float
    mu: float
    mu2: float | None
    q0: float | None
    qf: float | None
    delta_factor: float  # delta = delta_factor * V(0)
    alpha: float
    feasible: bool
    violations: tuple

    @property
    def decay_rate(self) -> float:
        return self.alpha


def check_gains_unperturbed(k1: float, k2: float, c0: float,
                            lambda_min: float) -> MarginReport:
    """Gate k1 > c0/(2 lambda_min), k2 > 0."""
    if lambda_min <= 0:
        raise CertificateError(
            "lambda_min must be positive: pinned matrix is not positive "
            "definite (connected follower graph with at least one leader "
            "link is required)")
    k1_thr = c0 / (2.0 * lambda_min)
    thresholds = {"k1": k1_thr, "k2": 0.0}
    margins = {"k1": k1 - k1_thr, "k2": k2 - 0.0}
    ok = k1 > k1_thr and k2 > 0.0
    return MarginReport(ok=ok, thresholds=thresholds, margins=margins)


def check_gains_perturbed(k1: float, k2: float, c0: float,
                          lambda_min: float) -> MarginReport:
    """Gate k1 > (c0+3)/(2 lambda_min), k2 > 1/(2 lambda_min)."""
    if lambda_min <= 0:
        raise CertificateError(
            "lambda_min must be positive: pinned matrix is not positive "
            "definite (connected follower graph with at least one leader "
            "link is required)")
    k1_thr = (c0 + 3.0) / (2.0 * lambda_min)
    k2_thr = 1.0 / (2.0 * lambda_min)
    thresholds = {"k1": k1_thr, "k2": k2_thr}
    margins = {"k1": k1 - k1_thr, "k2": k2 - k2_thr}
    ok = k1 > k1_thr and k2 > k2_thr
    return MarginReport(ok=ok, thresholds=thresholds, margins=margins)


def rho_bounds_unperturbed(rho2: float, k1: float, k2: float, c0: float,
                           lambda_min: float) -> dict:
    """Upper bounds on rho1 given rho2, by constraint name."""
    return {
        "k1*lambda_min": k1 * lambda_min,
        "2*k2*lambda_min": 2.0 * k2 * lambda_min,
        "1 - rho2": 1.0 - rho2,
        "rho2": rho2,
        "(2*c0 - rho2*(1+c0^2))/c0": (2.0 * c0 - rho2 * (1.0 + c0 * c0)) / c0,
    }


def rho2_bounds_unperturbed(c0: float) -> dict:
    return {"1": 1.0, "2*c0/(1+c0^2)": 2.0 * c0 / (1.0 + c0 * c0)}


def rho_feasible_unperturbed(rho1: float, rho2: float, k1: float, k2: float,
                             c0: float, lambda_min: float):
    """Strict feasibility of (rho1, rho2); returns (ok, violated names)."""
    violated = []
    if not rho2 > 0.0:
        violated.append("rho2 > 0")
    for name, bound in rho2_bounds_unperturbed(c0).items():
        if not rho2 < bound:
            violated.append(f"rho2 < {name}")
    if not rho1 > 0.0:
        violated.append("rho1 > 0")
    for name, bound in rho_bounds_unperturbed(rho2, k1, k2, c0, lambda_min).items():
        if not rho1 < bound:
            violated.append(f"rho1 < {name}")
    return (not violated), violated


def certificate_constants_unperturbed(rho1: float, rho2: float, k1: float,
                                      k2: float, lambda_min: float,
                                      lambda_max: float, c0: float):
    """Sandwich constants tau1, tau2 and the decay coefficient mu."""
    tau1 = min((1.0 - rho2 - rho1) / 2.0,
               k1 * lambda_min + rho1 * k2 * lambda_min - rho1)
    tau2 = max((1.0 + rho2 + rho1) / 2.0,
               k1 * lambda_max + rho1,
               k2 * lambda_max + rho1)
    mu = min(rho2 / 2.0,
             (rho2 - rho1) / 2.0,
             rho1 * (k1 * lambda_min - c0 / 2.0))
    for name, value in (("tau1", tau1), ("tau2", tau2), ("mu", mu)):
        if value <= 0.0:
            raise CertificateError(f"certificate constant {name} = {value} is not positive")
    return tau1, tau2, mu


def consensus_bound(v_initial: float, tau1: float, mu: float, tau2: float):
    """Pointwise envelope parameters: delta = (1+sqrt(2)) V(0)/tau1,
    alpha = mu/tau2."""
    delta = (1.0 + SQRT2) * v_initial / tau1
    alpha = mu / tau2
    return delta, alpha


def xi_rho_bounds_perturbed(rho2: float, xi1: float, xi2: float, k1: float,
                            k2: float, c0: float, lambda_min: float) -> dict:
    """Upper bounds on rho1 given (rho2, xi1, xi2), by constraint name."""
    return {
        "k1*lambda_min": k1 * lambda_min,
        "1 - rho2": 1.0 - rho2,
        "rho2 - xi1": rho2 - xi1,
        "2*k2*lambda_min - 1": 2.0 * k2 * lambda_min - 1.0,
        "(2*(c0 - xi2/2) - rho2*(1+c0+c0^2))/c0":
            (2.0 * (c0 - xi2 / 2.0) - rho2 * (1.0 + c0 + c0 * c0)) / c0,
    }


def perturbed_constants(rho1: float, rho2: float, xi1: float, xi2: float,
                        k1: float, k2: float, lambda_min: float, c0: float):
    """(mu2, q0, qf) plus feasibility of the (rho, xi) tuple."""
    violated = []
    if not xi1 > 0.0:
        violated.append("xi1 > 0")
    if not (0.0 < xi2 < 1.0 / (2.0 * c0)):
        violated.append("0 < xi2 < 1/(2*c0)")
    if not xi1 < rho2:
        violated.append("xi1 < rho2")
    if not rho2 < 1.0:
        violated.append("rho2 < 1")
    rho2_hi = 2.0 * (c0 - xi2 / 2.0) / (1.0 + c0 + c0 * c0)
    if not rho2 < rho2_hi:
        violated.append("rho2 < 2*(c0 - xi2/2)/(1+c0+c0^2)")
    if not rho1 > 0.0:
        violated.append("rho1 > 0")
    for name, bound in xi_rho_bounds_perturbed(rho2, xi1, xi2, k1, k2, c0,
                                               lambda_min).items():
        if not rho1 < bound:
            violated.append(f"rho1 < {name}")
    q0 = 0.5 * (1.0 / xi2 + rho1 + rho2 * (c0 + 1.0))
    qf = 1.0 / (2.0 * xi1) + rho1 / 2.0 + rho2
    mu2 = min(rho2 / 4.0,
              (rho2 - rho1 - xi1) / 2.0,
              rho1 * (k1 * lambda_min - c0 / 2.0 - 1.5))
    return mu2, q0, qf, (not violated), violated


def control_input(m, k1: float, k2: float, u_tilde_boundary,
                  u_tilde_t_boundary) -> np.ndarray:
    """Boundary control q = -k1 M u~(1) - k2 M u~_t(1)."""
    m = np.asarray(m, dtype=float)
    ub = np.asarray(u_tilde_boundary, dtype=float)
    vb = np.asarray(u_tilde_t_boundary, dtype=float)
    if ub.shape != (m.shape[0],) or vb.shape != (m.shape[0],):
        raise ValueError(
            f"boundary vectors of length {ub.shape}/{vb.shape} do not match "
            f"matrix order {m.shape[0]}")
    return -k1 * (m @ ub) - k2 * (m @ vb)


def iss_bound(cert: GainCertificate, v0_initial: float, t, es_psi0_sq,
              es_psi1_sq, es_f_sq, conservative: bool = True):
    """Right-hand side of the exponential ISS relation for V0(t).

    The verbatim variant uses transient V0(0) exp(-(mu2/tau2) t); the
    conservative variant scales the transient by tau2/tau1, which is what
    chaining V(t) <= V(0) exp(...) with the sandwich actually yields.
    """
    if cert.regime != "perturbed" or not cert.feasible:
        raise CertificateError("iss_bound requires a feasible perturbed-regime certificate")
    rate = cert.mu2 / cert.tau2
    gain = cert.tau2 / (cert.mu2 * cert.tau1)
    transient = v0_initial * np.exp(-rate * np.asarray(t, dtype=float))
    if conservative:
        transient = (cert.tau2 / cert.tau1) * transient
    return (transient
            + gain * cert.q0 * np.asarray(es_psi0_sq, dtype=float)
            + gain * np.asarray(es_psi1_sq, dtype=float)
            + gain * cert.qf * np.asarray(es_f_sq, dtype=float))


def _grid(upper: float, resolution: int) -> np.ndarray:
    """Open-interval grid: `resolution` points strictly inside (0, upper).
    Nested refinement: the grid for 2r+1 points contains the grid for r."""
    return upper * np.arange(1, resolution + 1) / (resolution + 1)


def optimize_certificate(regime: str, k1: float, k2: float, c0: float,
                         lambda_min: float, lambda_max: float,
                         resolution: int = 200) -> GainCertificate:
    """Exhaustive grid search maximizing the certified decay rate.

    Unperturbed: maximize mu/tau2 over (rho1, rho2).  Perturbed: maximize
    mu2/tau2 over (rho1, rho2, xi1, xi2).  Ties break toward the smallest
    rho2, then rho1, then xi1, then xi2.
    """
    if regime == "unperturbed":
        return _optimize_unperturbed(k1, k2, c0, lambda_min, lambda_max, resolution)
    if regime == "perturbed":
        return _optimize_perturbed(k1, k2, c0, lambda_min, lambda_max, resolution)
    raise ValueError(f"unknown regime {regime!r}")


def _pick_tie(obj: np.ndarray, keys) -> tuple:
    """Index of the maximum of `obj`, lexicographic-smallest `keys` on ties."""
    best = np.nanmax(obj)
    if not np.isfinite(best):
        return None
    tie = np.argwhere(obj == best)
    order = sorted(range(tie.shape[0]),
                   key=lambda i: tuple(k[tuple(tie[i])] for k in keys))
    return tuple(tie[order[0]])


def _optimize_unperturbed(k1, k2, c0, lambda_min, lambda_max, resolution):
    gate = check_gains_unperturbed(k1, k2, c0, lambda_min)
    if not gate.ok:
        raise CertificateError(
            f"gain check failed: thresholds {gate.thresholds}, margins {gate.margins}")
    r2_hi = min(rho2_bounds_unperturbed(c0).values())
    r1_hi = min(k1 * lambda_min, 2.0 * k2 * lambda_min, 1.0)
    r1g = _grid(r1_hi, resolution)
    r2g = _grid(r2_hi, resolution)
    R1, R2 = np.meshgrid(r1g, r2g, indexing="ij")
    masks = {
        "rho1 < k1*lambda_min": R1 < k1 * lambda_min,
        "rho1 < 2*k2*lambda_min": R1 < 2.0 * k2 * lambda_min,
        "rho1 < 1 - rho2": R1 < 1.0 - R2,
        "rho1 < rho2": R1 < R2,
        "rho1 < (2*c0 - rho2*(1+c0^2))/c0":
            R1 < (2.0 * c0 - R2 * (1.0 + c0 * c0)) / c0,
        "rho2 < 1": R2 < 1.0,
        "rho2 < 2*c0/(1+c0^2)": R2 < 2.0 * c0 / (1.0 + c0 * c0),
    }
    feas = np.logical_and.reduce(list(masks.values()))
    mu = np.minimum(R2 / 2.0, np.minimum((R2 - R1) / 2.0,
                                         R1 * (k1 * lambda_min - c0 / 2.0)))
    tau1 = np.minimum((1.0 - R2 - R1) / 2.0,
                      k1 * lambda_min + R1 * k2 * lambda_min - R1)
    tau2 = np.maximum((1.0 + R2 + R1) / 2.0,
                      np.maximum(k1 * lambda_max + R1, k2 * lambda_max + R1))
    ok = feas & (mu > 0.0) & (tau1 > 0.0)
    obj = np.where(ok, mu / tau2, -np.inf)
    idx = _pick_tie(obj, (R2, R1))
    if idx is None or not ok[idx]:
        raise CertificateError(_tightest_constraint_message(masks, "unperturbed"))
    rho1 = float(R1[idx])
    rho2 = float(R2[idx])
    t1, t2, m = certificate_constants_unperturbed(rho1, rho2, k1, k2,
                                                  lambda_min, lambda_max, c0)
    return GainCertificate(
        regime="unperturbed", k1=k1, k2=k2, c0=c0, lambda_min=lambda_min,
        lambda_max=lambda_max, rho1=rho1, rho2=rho2, xi1=None, xi2=None,
        tau1=t1, tau2=t2, mu=m, mu2=None, q0=None, qf=None,
        delta_factor=(1.0 + SQRT2) / t1, alpha=m / t2, feasible=True,
        violations=())


def _optimize_perturbed(k1, k2, c0, lambda_min, lambda_max, resolution):
    gate = check_gains_perturbed(k1, k2, c0, lambda_min)
    if not gate.ok:
        raise CertificateError(
            f"gain check failed: thresholds {gate.thresholds}, margins {gate.margins}")
    # The objective mu2/tau2 does not involve xi2 and every xi2-dependent
    # constraint relaxes monotonically as xi2 decreases, so scanning the
    # (rho1, rho2, xi1) grid at the smallest xi2 node reproduces the full
    # 4-D scan, tie-break included.
    xi2 = float(_grid(1.0 / (2.0 * c0), resolution)[0])
    r2_hi = min(1.0, 2.0 * c0 / (1.0 + c0 + c0 * c0))
    r1_hi = min(k1 * lambda_min, max(2.0 * k2 * lambda_min - 1.0, 0.0), 1.0)
    r1g = _grid(r1_hi, resolution)
    r2g = _grid(r2_hi, resolution)
    xi1g = _grid(1.0, resolution)
    R1, R2 = np.meshgrid(r1g, r2g, indexing="ij")
    masks = {
        "rho1 < k1*lambda_min": R1 < k1 * lambda_min,
        "rho1 < 1 - rho2": R1 < 1.0 - R2,
        "rho1 < 2*k2*lambda_min - 1": R1 < 2.0 * k2 * lambda_min - 1.0,
        "rho1 < (2*(c0 - xi2/2) - rho2*(1+c0+c0^2))/c0":
            R1 < (2.0 * (c0 - xi2 / 2.0) - R2 * (1.0 + c0 + c0 * c0)) / c0,
        "rho2 < 1": R2 < 1.0,
        "rho2 < 2*(c0 - xi2/2)/(1+c0+c0^2)":
            R2 < 2.0 * (c0 - xi2 / 2.0) / (1.0 + c0 + c0 * c0),
    }
    base_feas = np.logical_and.reduce(list(masks.values()))
    branch3 = R1 * (k1 * lambda_min - c0 / 2.0 - 1.5)
    tau2 = np.maximum((1.0 + R2 + R1) / 2.0,
                      np.maximum(k1 * lambda_max + R1, k2 * lambda_max + R1))
    any_feasible = bool(base_feas.any())
    best = (-np.inf, None)
    for xi1 in xi1g:
        feas = base_feas & (xi1 < R2) & (R1 < R2 - xi1)
        if not feas.any():
            continue
        any_feasible = True
        mu2 = np.minimum(R2 / 4.0, np.minimum((R2 - R1 - xi1) / 2.0, branch3))
        ok = feas & (mu2 > 0.0)
        if not ok.any():
            continue
        obj = np.where(ok, mu2 / tau2, -np.inf)
        idx = _pick_tie(obj, (R2, R1))
        cand = obj[idx]
        # strict > keeps the smallest xi1 on exact ties
        if cand > best[0]:
            best = (cand, (float(R1[idx]), float(R2[idx]), float(xi1)))
    if best[1] is None:
        raise CertificateError(_tightest_constraint_message(masks, "perturbed")
                               if not any_feasible else
                               "no grid point yields a positive decay rate")
    rho1, rho2, xi1 = best[1]
    t1, t2, _ = certificate_constants_unperturbed(rho1, rho2, k1, k2,
                                                  lambda_min, lambda_max, c0)
    mu2, q0, qf, feasible, violations = perturbed_constants(
        rho1, rho2, xi1, xi2, k1, k2, lambda_min, c0)
    if not feasible:
        raise CertificateError(f"optimizer selected infeasible tuple: {violations}")
    return GainCertificate(
        regime="perturbed", k1=k1, k2=k2, c0=c0, lambda_min=lambda_min,
        lambda_max=lambda_max, rho1=rho1, rho2=rho2, xi1=xi1, xi2=xi2,
        tau1=t1, tau2=t2, mu=min(rho2 / 2.0, (rho2 - rho1) / 2.0,
                                 rho1 * (k1 * lambda_min - c0 / 2.0)),
        mu2=mu2, q0=q0, qf=qf,
        delta_factor=(1.0 + SQRT2) / t1, alpha=mu2 / t2, feasible=True,
        violations=())


def _tightest_constraint_message(masks: dict, regime: str) -> str:
    rates = {name: float(np.mean(mask)) for name, mask in masks.items()}
    tightest = min(rates, key=rates.get)
    return (f"empty feasible set for the {regime} regime; tightest "
            f"constraint: {tightest} (admits {rates[tightest]:.1%} of the "
            "search box on its own)")
