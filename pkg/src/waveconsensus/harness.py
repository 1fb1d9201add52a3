"""Experiment configuration, reproduction presets, runners and CSV output.

Configs are JSON documents; parsing applies defaults (nx=201, courant=0.9,
stride=10) and reports schema violations with the path to the offending
field.  The three reproduction presets follow the reference study: a
1-2-3 follower path with the leader pinned at follower 1, c0=2.5,
k1=30, k2=10, cosine displacement ICs and linear velocity ICs, and
disturbance amplitudes 0 / 10 / 50 on all three channels at 10 rad/s.

Run horizons are derived from the optimized certificate, never hardcoded:
long enough that the certified envelope decays below 1e-3 of its initial
value (by the steady-state window start, for perturbed runs).
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import analysis, certificate as cert_mod, svgplot
from .errors import CertificateError, ConfigError, DivergenceError
from .graph import Topology, build_topology, eig_extremes_sym, is_connected, pinned_matrix
from .signals import (DisturbanceSpec, ProfileSpec, SignalSpec, SpaceTimeSpec,
                      zero_disturbances)
from .wavesim import ControlGains, Grid, SamplePoint, simulate

ENV_OUT_DIR = "WAVECONSENSUS_OUT"

CSV_COLUMNS = (
    "t", "E", "G1", "G2", "V", "V0", "l2_err", "h1_seminorm",
    "ptwise_max_sq", "boundary_err_sq", "bound_envelope",
    "iss_bound_conservative", "iss_bound_verbatim",
    "es_psi0_sq", "es_psi1_sq", "es_f_sq",
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_DIVERGED = 3
EXIT_BOUND_VIOLATION = 4


@dataclass(frozen=True)
class AgentIC:
    displacement: ProfileSpec
    velocity: ProfileSpec


@dataclass(frozen=True)
class CertificateOptions:
    regime: str = "auto"  # auto | unperturbed | perturbed
    resolution: int = 200
    rho1: float | None = None
    rho2: float | None = None
    xi1: float | None = None
    xi2: float | None = None


@dataclass(frozen=True)
class OutputOptions:
    csv_name: str = "timeseries.csv"
    stride: int = 10


@dataclass(frozen=True)
class ExperimentConfig:
    adjacency: tuple
    leader_links: tuple
    gains: ControlGains
    grid: Grid
    leader_ic: AgentIC
    follower_ics: tuple
    disturbances: DisturbanceSpec
    certificate: CertificateOptions = field(default_factory=CertificateOptions)
    output: OutputOptions = field(default_factory=OutputOptions)
    horizon: float | None = None

    @property
    def n(self) -> int:
        return len(self.adjacency)

    def topology(self) -> Topology:
        return build_topology([list(r) for r in self.adjacency],
                              list(self.leader_links))

    def profiles(self) -> list:
        agents = [self.leader_ic, *self.follower_ics]
        return [(a.displacement, a.velocity) for a in agents]

    def effective_regime(self) -> str:
        if self.certificate.regime != "auto":
            return self.certificate.regime
        return "unperturbed" if self.disturbances.is_zero() else "perturbed"


# ---------------------------------------------------------------------------
# JSON schema


def _expect(mapping, key, path, required=False, default=None):
    if key not in mapping:
        if required:
            raise ConfigError(f"{path}.{key}: required field is missing")
        return default
    return mapping[key]


def _number(value, path):
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    return float(value)


def _profile_from(obj, path) -> ProfileSpec:
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected a profile object")
    kind = _expect(obj, "kind", path, required=True)
    if kind == "zero":
        return ProfileSpec(kind="zero")
    if kind == "cosine":
        return ProfileSpec(kind="cosine",
                           amplitude=_number(_expect(obj, "amplitude", path, True), f"{path}.amplitude"),
                           spatial_frequency=_number(_expect(obj, "spatial_frequency", path, True),
                                                     f"{path}.spatial_frequency"))
    if kind == "polynomial":
        coeffs = _expect(obj, "coefficients", path, required=True)
        if not isinstance(coeffs, list):
            raise ConfigError(f"{path}.coefficients: expected a list")
        return ProfileSpec(kind="polynomial",
                           coefficients=tuple(_number(c, f"{path}.coefficients[{i}]")
                                              for i, c in enumerate(coeffs)))
    if kind == "table":
        samples = _expect(obj, "samples", path, required=True)
        if not isinstance(samples, list):
            raise ConfigError(f"{path}.samples: expected a list")
        return ProfileSpec(kind="table",
                           samples=tuple(_number(s, f"{path}.samples[{i}]")
                                         for i, s in enumerate(samples)))
    raise ConfigError(f"{path}.kind: unknown profile kind {kind!r}")


def _profile_to(p: ProfileSpec) -> dict:
    if p.kind == "zero":
        return {"kind": "zero"}
    if p.kind == "cosine":
        return {"kind": "cosine", "amplitude": p.amplitude,
                "spatial_frequency": p.spatial_frequency}
    if p.kind == "polynomial":
        return {"kind": "polynomial", "coefficients": list(p.coefficients)}
    return {"kind": "table", "samples": list(p.samples)}


def _signal_from(obj, path) -> SignalSpec:
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected a signal object")
    kind = _expect(obj, "kind", path, required=True)
    if kind == "zero":
        return SignalSpec(kind="zero")
    if kind == "sinusoid":
        return SignalSpec(
            kind="sinusoid",
            amplitude=_number(_expect(obj, "amplitude", path, True), f"{path}.amplitude"),
            angular_frequency=_number(_expect(obj, "angular_frequency", path, True),
                                      f"{path}.angular_frequency"),
            phase=_number(_expect(obj, "phase", path, default=0.0), f"{path}.phase"))
    raise ConfigError(f"{path}.kind: unknown signal kind {kind!r}")


def _signal_to(s: SignalSpec) -> dict:
    if s.kind == "zero":
        return {"kind": "zero"}
    return {"kind": "sinusoid", "amplitude": s.amplitude,
            "angular_frequency": s.angular_frequency, "phase": s.phase}


def _spacetime_from(obj, path) -> SpaceTimeSpec:
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected a space-time object")
    kind = _expect(obj, "kind", path, required=True)
    if kind == "zero":
        return SpaceTimeSpec(kind="zero")
    if kind == "separable":
        return SpaceTimeSpec(kind="separable",
                             temporal=_signal_from(_expect(obj, "temporal", path, True),
                                                   f"{path}.temporal"),
                             spatial=_profile_from(_expect(obj, "spatial", path, True),
                                                   f"{path}.spatial"))
    raise ConfigError(f"{path}.kind: unknown space-time kind {kind!r}")


def _spacetime_to(s: SpaceTimeSpec) -> dict:
    if s.kind == "zero":
        return {"kind": "zero"}
    return {"kind": "separable", "temporal": _signal_to(s.temporal),
            "spatial": _profile_to(s.spatial)}


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a JSON experiment configuration."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"configuration is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("configuration root must be an object")

    topo = _expect(doc, "topology", "topology", required=True)
    adjacency = _expect(topo, "adjacency", "topology", required=True)
    leader_links = _expect(topo, "leader_links", "topology", required=True)
    if not isinstance(adjacency, list) or not all(isinstance(r, list) for r in adjacency):
        raise ConfigError("topology.adjacency: expected a list of rows")
    n = len(adjacency)
    if not isinstance(leader_links, list) or len(leader_links) != n:
        raise ConfigError(
            f"topology.leader_links: expected a list of length {n}")

    gobj = _expect(doc, "gains", "gains", required=True)
    gains = ControlGains(k1=_number(_expect(gobj, "k1", "gains", True), "gains.k1"),
                         k2=_number(_expect(gobj, "k2", "gains", True), "gains.k2"),
                         c0=_number(_expect(gobj, "c0", "gains", True), "gains.c0"))

    grobj = _expect(doc, "grid", "grid", default={}) or {}
    grid = Grid(nx=int(_number(_expect(grobj, "nx", "grid", default=201), "grid.nx")),
                courant=_number(_expect(grobj, "courant", "grid", default=0.9), "grid.courant"),
                dissipation=_number(_expect(grobj, "dissipation", "grid", default=0.1),
                                    "grid.dissipation"))

    horizon = _expect(doc, "horizon", "horizon", default=None)
    if horizon is not None:
        horizon = _number(horizon, "horizon")
        if horizon <= 0:
            raise ConfigError("horizon: must be positive when given")

    ics = _expect(doc, "initial_conditions", "initial_conditions", default={}) or {}
    leader_obj = _expect(ics, "leader", "initial_conditions", default=None)
    zero_ic = AgentIC(displacement=ProfileSpec(), velocity=ProfileSpec())
    if leader_obj is None:
        leader_ic = zero_ic
    else:
        leader_ic = AgentIC(
            displacement=_profile_from(_expect(leader_obj, "displacement",
                                               "initial_conditions.leader", default={"kind": "zero"}),
                                       "initial_conditions.leader.displacement"),
            velocity=_profile_from(_expect(leader_obj, "velocity",
                                           "initial_conditions.leader", default={"kind": "zero"}),
                                   "initial_conditions.leader.velocity"))
    followers_obj = _expect(ics, "followers", "initial_conditions", default=None)
    if followers_obj is None:
        follower_ics = tuple(zero_ic for _ in range(n))
    else:
        if not isinstance(followers_obj, list) or len(followers_obj) != n:
            raise ConfigError(
                f"initial_conditions.followers: expected a list of length {n}")
        follower_ics = tuple(
            AgentIC(displacement=_profile_from(_expect(o, "displacement",
                                                       f"initial_conditions.followers[{i}]",
                                                       default={"kind": "zero"}),
                                               f"initial_conditions.followers[{i}].displacement"),
                    velocity=_profile_from(_expect(o, "velocity",
                                                   f"initial_conditions.followers[{i}]",
                                                   default={"kind": "zero"}),
                                           f"initial_conditions.followers[{i}].velocity"))
            for i, o in enumerate(followers_obj))

    dobj = _expect(doc, "disturbances", "disturbances", default=None)
    if dobj is None:
        dist = zero_disturbances(n)
    else:
        def channel(name, parser):
            arr = _expect(dobj, name, f"disturbances", default=None)
            if arr is None:
                return None
            if not isinstance(arr, list) or len(arr) != n:
                raise ConfigError(
                    f"disturbances.{name}: expected a list of length {n}")
            return tuple(parser(o, f"disturbances.{name}[{i}]")
                         for i, o in enumerate(arr))
        zero = zero_disturbances(n)
        dist = DisturbanceSpec(
            psi0=channel("psi0", _signal_from) or zero.psi0,
            psi1=channel("psi1", _signal_from) or zero.psi1,
            f=channel("f", _spacetime_from) or zero.f)

    cobj = _expect(doc, "certificate", "certificate", default={}) or {}
    regime = _expect(cobj, "regime", "certificate", default="auto")
    if regime not in ("auto", "unperturbed", "perturbed"):
        raise ConfigError(f"certificate.regime: unknown regime {regime!r}")

    def opt_num(key):
        v = _expect(cobj, key, "certificate", default=None)
        return None if v is None else _number(v, f"certificate.{key}")

    cert_opts = CertificateOptions(
        regime=regime,
        resolution=int(_number(_expect(cobj, "resolution", "certificate", default=200),
                               "certificate.resolution")),
        rho1=opt_num("rho1"), rho2=opt_num("rho2"),
        xi1=opt_num("xi1"), xi2=opt_num("xi2"))

    oobj = _expect(doc, "output", "output", default={}) or {}
    output = OutputOptions(
        csv_name=str(_expect(oobj, "csv", "output", default="timeseries.csv")),
        stride=int(_number(_expect(oobj, "stride", "output", default=10), "output.stride")))
    if output.stride < 1:
        raise ConfigError("output.stride: must be at least 1")

    config = ExperimentConfig(
        adjacency=tuple(tuple(int(_number(v, f"topology.adjacency[{i}][{j}]"))
                              for j, v in enumerate(row))
                        for i, row in enumerate(adjacency)),
        leader_links=tuple(int(_number(v, f"topology.leader_links[{i}]"))
                           for i, v in enumerate(leader_links)),
        gains=gains, grid=grid, leader_ic=leader_ic, follower_ics=follower_ics,
        disturbances=dist, certificate=cert_opts, output=output, horizon=horizon)
    config.topology()  # surface TopologyError early
    return config


def serialize_config(config: ExperimentConfig) -> str:
    doc = {
        "topology": {"adjacency": [list(r) for r in config.adjacency],
                     "leader_links": list(config.leader_links)},
        "gains": {"k1": config.gains.k1, "k2": config.gains.k2, "c0": config.gains.c0},
        "grid": {"nx": config.grid.nx, "courant": config.grid.courant,
                 "dissipation": config.grid.dissipation},
        "horizon": config.horizon,
        "initial_conditions": {
            "leader": {"displacement": _profile_to(config.leader_ic.displacement),
                       "velocity": _profile_to(config.leader_ic.velocity)},
            "followers": [{"displacement": _profile_to(a.displacement),
                           "velocity": _profile_to(a.velocity)}
                          for a in config.follower_ics]},
        "disturbances": {
            "psi0": [_signal_to(s) for s in config.disturbances.psi0],
            "psi1": [_signal_to(s) for s in config.disturbances.psi1],
            "f": [_spacetime_to(s) for s in config.disturbances.f]},
        "certificate": {"regime": config.certificate.regime,
                        "resolution": config.certificate.resolution,
                        "rho1": config.certificate.rho1,
                        "rho2": config.certificate.rho2,
                        "xi1": config.certificate.xi1,
                        "xi2": config.certificate.xi2},
        "output": {"csv": config.output.csv_name, "stride": config.output.stride},
    }
    return json.dumps(doc, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Presets


def test_preset(test_id: int) -> ExperimentConfig:
    """Reproduction presets 1-3 (unperturbed / amplitude 10 / amplitude 50)."""
    if test_id not in (1, 2, 3):
        raise ConfigError(f"unknown test id {test_id}; valid ids are 1, 2, 3")
    amp = {1: 0.0, 2: 10.0, 3: 50.0}[test_id]
    n = 3
    adjacency = ((0, 1, 0), (1, 0, 1), (0, 1, 0))
    leader_links = (1, 0, 0)
    leader_ic = AgentIC(
        displacement=ProfileSpec(kind="cosine", amplitude=10.0, spatial_frequency=2.0),
        velocity=ProfileSpec(kind="zero"))
    follower_ics = (
        AgentIC(displacement=ProfileSpec(kind="cosine", amplitude=5.0, spatial_frequency=2.0),
                velocity=ProfileSpec(kind="polynomial", coefficients=(0.0, 1.0))),
        AgentIC(displacement=ProfileSpec(kind="cosine", amplitude=1.0, spatial_frequency=1.0),
                velocity=ProfileSpec(kind="polynomial", coefficients=(0.0, 2.0))),
        AgentIC(displacement=ProfileSpec(kind="cosine", amplitude=-5.0, spatial_frequency=1.0),
                velocity=ProfileSpec(kind="polynomial", coefficients=(0.0, 3.0))),
    )
    if amp == 0.0:
        dist = zero_disturbances(n)
        regime = "unperturbed"
    else:
        sig = SignalSpec(kind="sinusoid", amplitude=amp, angular_frequency=10.0)
        dist = DisturbanceSpec(
            psi0=tuple(sig for _ in range(n)),
            psi1=tuple(sig for _ in range(n)),
            f=tuple(SpaceTimeSpec(kind="separable", temporal=sig,
                                  spatial=ProfileSpec(kind="polynomial",
                                                      coefficients=(1.0,)))
                    for _ in range(n)))
        regime = "perturbed"
    return ExperimentConfig(
        adjacency=adjacency, leader_links=leader_links,
        gains=ControlGains(k1=30.0, k2=10.0, c0=2.5), grid=Grid(),
        leader_ic=leader_ic, follower_ics=follower_ics, disturbances=dist,
        certificate=CertificateOptions(regime=regime),
        output=OutputOptions(csv_name=f"test{test_id}.csv"))


def spectral_extremes_for(config: ExperimentConfig):
    topo = config.topology()
    if not is_connected(topo) or not np.any(np.asarray(config.leader_links)):
        raise CertificateError(
            "certificate requires a connected follower graph with at least "
            "one leader link (pinned matrix must be positive definite)")
    return eig_extremes_sym(pinned_matrix(topo))


def certificate_for(config: ExperimentConfig, regime: str | None = None):
    """Optimize (or assemble from overrides) the certificate for a config."""
    regime = regime or config.effective_regime()
    ext = spectral_extremes_for(config)
    opts = config.certificate
    g = config.gains
    if opts.rho1 is not None and opts.rho2 is not None:
        return _explicit_certificate(config, regime, ext)
    return cert_mod.optimize_certificate(
        regime, g.k1, g.k2, g.c0, ext.lambda_min, ext.lambda_max,
        resolution=opts.resolution)


def _explicit_certificate(config, regime, ext):
    g = config.gains
    opts = config.certificate
    rho1, rho2 = opts.rho1, opts.rho2
    if regime == "unperturbed":
        gate = cert_mod.check_gains_unperturbed(g.k1, g.k2, g.c0, ext.lambda_min)
        if not gate.ok:
            raise CertificateError(f"gain check failed: {gate.thresholds}")
        ok, violated = cert_mod.rho_feasible_unperturbed(
            rho1, rho2, g.k1, g.k2, g.c0, ext.lambda_min)
        if not ok:
            raise CertificateError(f"rho overrides infeasible: {violated}")
        t1, t2, mu = cert_mod.certificate_constants_unperturbed(
            rho1, rho2, g.k1, g.k2, ext.lambda_min, ext.lambda_max, g.c0)
        return cert_mod.GainCertificate(
            regime="unperturbed", k1=g.k1, k2=g.k2, c0=g.c0,
            lambda_min=ext.lambda_min, lambda_max=ext.lambda_max,
            rho1=rho1, rho2=rho2, xi1=None, xi2=None, tau1=t1, tau2=t2, mu=mu,
            mu2=None, q0=None, qf=None,
            delta_factor=(1.0 + cert_mod.SQRT2) / t1, alpha=mu / t2,
            feasible=True, violations=())
    gate = cert_mod.check_gains_perturbed(g.k1, g.k2, g.c0, ext.lambda_min)
    if not gate.ok:
        raise CertificateError(f"gain check failed: {gate.thresholds}")
    if opts.xi1 is None or opts.xi2 is None:
        raise CertificateError("perturbed rho overrides also need xi1 and xi2")
    mu2, q0, qf, ok, violated = cert_mod.perturbed_constants(
        rho1, rho2, opts.xi1, opts.xi2, g.k1, g.k2, ext.lambda_min, g.c0)
    if not ok or mu2 <= 0:
        raise CertificateError(f"rho/xi overrides infeasible: {violated or 'mu2 <= 0'}")
    t1, t2, mu = cert_mod.certificate_constants_unperturbed(
        rho1, rho2, g.k1, g.k2, ext.lambda_min, ext.lambda_max, g.c0)
    return cert_mod.GainCertificate(
        regime="perturbed", k1=g.k1, k2=g.k2, c0=g.c0,
        lambda_min=ext.lambda_min, lambda_max=ext.lambda_max,
        rho1=rho1, rho2=rho2, xi1=opts.xi1, xi2=opts.xi2, tau1=t1, tau2=t2,
        mu=mu, mu2=mu2, q0=q0, qf=qf,
        delta_factor=(1.0 + cert_mod.SQRT2) / t1, alpha=mu2 / t2,
        feasible=True, violations=())


def derive_horizon(cert, regime: str) -> float:
    """Horizon making the certified envelope fall below 1e-3 of its
    initial value (at the steady-state window start for perturbed runs)."""
    target = math.log(1000.0)
    if regime == "unperturbed":
        return float(math.ceil(target / cert.alpha))
    return float(math.ceil(target / (0.8 * cert.alpha)))


# ---------------------------------------------------------------------------
# CSV


def _cell(value) -> str:
    return "" if value is None else repr(float(value))


def write_csv(path, series: analysis.TimeSeries, cert=None) -> None:
    """Fixed-schema CSV; bound columns filled per regime, blank otherwise."""
    t = series.column("time")
    regime = getattr(cert, "regime", None)
    env = iss_c = iss_v = None
    if cert is not None and regime == "unperturbed":
        v0_init = series.column("V")[0]
        env = v0_init * np.exp(-cert.alpha * t)
    if cert is not None and regime == "perturbed":
        v0_init = float(series.column("V0")[0])
        args = (v0_init, t, series.column("es_psi0_sq"),
                series.column("es_psi1_sq"), series.column("es_f_sq"))
        iss_c = cert_mod.iss_bound(cert, *args, conservative=True)
        iss_v = cert_mod.iss_bound(cert, *args, conservative=False)
    perturbed = regime == "perturbed"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for i in range(len(series)):
            row = [
                _cell(t[i]),
                _cell(series.columns["E"][i]),
                _cell(series.columns["G1"][i]),
                _cell(series.columns["G2"][i]),
                _cell(series.columns["V"][i]),
                _cell(series.columns["V0"][i]),
                _cell(series.columns["l2_error"][i]),
                _cell(series.columns["h1_seminorm"][i]),
                _cell(series.columns["ptwise_max_sq"][i]),
                _cell(series.columns["boundary_err_sq"][i]),
                _cell(env[i]) if env is not None else "",
                _cell(iss_c[i]) if iss_c is not None else "",
                _cell(iss_v[i]) if iss_v is not None else "",
                _cell(series.columns["es_psi0_sq"][i]) if perturbed else "",
                _cell(series.columns["es_psi1_sq"][i]) if perturbed else "",
                _cell(series.columns["es_f_sq"][i]) if perturbed else "",
            ]
            fh.write(",".join(row) + "\n")


def read_csv(path) -> dict:
    """Read a fixed-schema CSV back into column arrays (None-padded)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0].split(",") != list(CSV_COLUMNS):
        raise ConfigError(f"{path}: not a recognized time-series CSV")
    rows = [ln.split(",") for ln in lines[1:] if ln]
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    cols = {}
    for j, name in enumerate(CSV_COLUMNS):
        vals = [r[j] for r in rows]
        cols[name] = np.array([float(v) if v else np.nan for v in vals])
    t = cols["t"]
    if np.any(np.diff(t) <= 0):
        raise ConfigError(f"{path}: time column is not strictly increasing")
    return cols


# ---------------------------------------------------------------------------
# Runners


@dataclass
class RunResult:
    exit_code: int
    report: str
    series: analysis.TimeSeries | None = None
    certificate: object = None
    paths: dict = field(default_factory=dict)


def _cert_lines(cert) -> list:
    lines = [f"  regime     : {cert.regime}",
             f"  rho1, rho2 : {cert.rho1:.6g}, {cert.rho2:.6g}"]
    if cert.xi1 is not None:
        lines.append(f"  xi1, xi2   : {cert.xi1:.6g}, {cert.xi2:.6g}")
    lines.append(f"  tau1, tau2 : {cert.tau1:.6g}, {cert.tau2:.6g}")
    lines.append(f"  mu         : {cert.mu:.6g}")
    if cert.mu2 is not None:
        lines.append(f"  mu2, q0, qf: {cert.mu2:.6g}, {cert.q0:.6g}, {cert.qf:.6g}")
    lines.append(f"  decay rate : {cert.alpha:.6g} 1/s")
    return lines


def run_check_gains(config: ExperimentConfig) -> RunResult:
    """Report both regimes' gain gates and the optimized certificate."""
    lines = []
    try:
        ext = spectral_extremes_for(config)
    except CertificateError as exc:
        return RunResult(EXIT_INFEASIBLE, f"infeasible: {exc}")
    g = config.gains
    lines.append(f"pinned matrix spectrum: lambda_min={ext.lambda_min:.6g} "
                 f"lambda_max={ext.lambda_max:.6g}")
    feasible = {}
    for regime, check in (("unperturbed", cert_mod.check_gains_unperturbed),
                          ("perturbed", cert_mod.check_gains_perturbed)):
        rep = check(g.k1, g.k2, g.c0, ext.lambda_min)
        lines.append(f"[{regime}] gain gate: {'PASS' if rep.ok else 'FAIL'}")
        for key in ("k1", "k2"):
            lines.append(f"  {key} threshold {rep.thresholds[key]:.6g} "
                         f"(margin {rep.margins[key]:+.6g})")
        if rep.ok:
            try:
                cert = cert_mod.optimize_certificate(
                    regime, g.k1, g.k2, g.c0, ext.lambda_min, ext.lambda_max,
                    resolution=config.certificate.resolution)
                lines.extend(_cert_lines(cert))
                feasible[regime] = cert
            except CertificateError as exc:
                lines.append(f"  optimization infeasible: {exc}")
    target = config.effective_regime()
    code = EXIT_OK if target in feasible else EXIT_INFEASIBLE
    lines.append(f"requested regime: {target} -> "
                 f"{'feasible' if code == EXIT_OK else 'infeasible'}")
    return RunResult(code, "\n".join(lines),
                     certificate=feasible.get(target))


class SurfaceRecorder:
    """Collects decimated snapshots of one deviation field for plotting."""

    def __init__(self, agent: int = 0, keep_every: int = 1):
        self.agent = agent
        self.keep_every = max(1, keep_every)
        self.times = []
        self.rows = []
        self._count = 0

    def __call__(self, sp: SamplePoint):
        if self._count % self.keep_every == 0 and sp.error.shape[0] > self.agent:
            self.times.append(sp.time)
            self.rows.append(sp.error[self.agent].copy())
        self._count += 1


def run_experiment(config: ExperimentConfig, cert=None, observers=(),
                   warn_disconnected: bool = True):
    """Simulate a config, returning (series, certificate or None)."""
    topo = config.topology()
    if warn_disconnected and not is_connected(topo):
        import warnings

        warnings.warn("follower graph is not connected; simulation proceeds "
                      "but no certificate applies", stacklevel=2)
    if cert is None:
        try:
            cert = certificate_for(config)
        except CertificateError:
            if config.horizon is None:
                raise  # without a certificate there is no derived horizon
            cert = None
    horizon = config.horizon
    if horizon is None:
        horizon = derive_horizon(cert, cert.regime)
    series = simulate(topo, config.gains, config.grid, config.profiles(),
                      config.disturbances, horizon,
                      functional_weights=cert, observers=observers,
                      stride=config.output.stride)
    return series, cert


def run_simulate(config: ExperimentConfig, out_dir) -> RunResult:
    """General-purpose run: CSV plus a summary, no contractual checks."""
    os.makedirs(out_dir, exist_ok=True)
    cert = None
    try:
        cert = certificate_for(config)
    except CertificateError as exc:
        if config.horizon is None:
            return RunResult(EXIT_INFEASIBLE,
                             f"infeasible certificate and no explicit horizon: {exc}")
    try:
        series, cert = run_experiment(config, cert=cert)
    except DivergenceError as exc:
        return RunResult(EXIT_DIVERGED, f"solver diverged: {exc}")
    csv_path = os.path.join(out_dir, config.output.csv_name)
    write_csv(csv_path, series, cert)
    report = (f"simulated {len(series)} samples to t={series.times[-1]:.6g}; "
              f"wrote {csv_path}")
    return RunResult(EXIT_OK, report, series=series, certificate=cert,
                     paths={"csv": csv_path})


def run_reproduce(test_id: int, out_dir, conservative_iss: bool = True) -> RunResult:
    """Run a reproduction preset with its contractual checks and outputs."""
    config = test_preset(test_id)
    out_dir = os.path.join(out_dir, f"test{test_id}")
    os.makedirs(out_dir, exist_ok=True)
    try:
        cert = certificate_for(config)
    except CertificateError as exc:
        return RunResult(EXIT_INFEASIBLE, f"infeasible: {exc}")
    horizon = derive_horizon(cert, cert.regime)
    nsteps = int(math.ceil(horizon / config.grid.dt))
    surf = SurfaceRecorder(agent=0,
                           keep_every=max(1, (nsteps // config.output.stride) // 160))
    try:
        series, cert = run_experiment(replace(config, horizon=horizon),
                                      cert=cert, observers=(surf,))
    except DivergenceError as exc:
        return RunResult(EXIT_DIVERGED,
                         f"solver diverged at step {exc.step_index}: {exc}")

    checks = {}
    if cert.regime == "unperturbed":
        checks["monotone_V"] = analysis.monotone_decay_report(series)
        checks["envelope"] = analysis.envelope_report(series, cert)
        checks["pointwise"] = analysis.pointwise_bound_check(series, cert)
        l2 = series.column("l2_error")
        checks["final_error_below_1pct"] = analysis.BoundReport(
            checked=1,
            violations=() if l2[-1] < 0.01 * l2[0] else
            ((float(series.times[-1]), float(l2[-1]), float(0.01 * l2[0])),),
            worst_ratio=float(l2[-1] / l2[0]))
    else:
        iss = analysis.iss_check(series, cert, config.disturbances)
        checks["iss_contractual"] = (iss.conservative if conservative_iss
                                     else iss.verbatim)
        checks["iss_conservative"] = iss.conservative
        checks["iss_verbatim"] = iss.verbatim

    contractual = [name for name in
                   ("monotone_V", "envelope", "pointwise",
                    "final_error_below_1pct", "iss_contractual")
                   if name in checks]
    failed = [name for name in contractual if not checks[name].ok]

    csv_path = os.path.join(out_dir, config.output.csv_name)
    write_csv(csv_path, series, cert)
    norm_path = os.path.join(out_dir, "error_norm.svg")
    svgplot.line_plot(norm_path, series.times, [series.column("l2_error")],
                      ["||u~||"], title=f"Test {test_id}: tracking error norm",
                      xlabel="t [s]", ylabel="log10 ||u~(.,t)||", ylog=True)
    surface_path = os.path.join(out_dir, "error_surface.svg")
    if surf.rows:
        svgplot.heatmap(surface_path, surf.times, config.grid.points,
                        np.stack(surf.rows),
                        title=f"Test {test_id}: deviation of follower 1")
    summary = {
        "test": test_id,
        "horizon": horizon,
        "samples": len(series),
        "certificate": {k: getattr(cert, k) for k in
                        ("regime", "rho1", "rho2", "xi1", "xi2", "tau1", "tau2",
                         "mu", "mu2", "q0", "qf", "alpha", "lambda_min",
                         "lambda_max")},
        "checks": {name: {"ok": rep.ok, "violations": len(rep.violations),
                          "worst_ratio": rep.worst_ratio}
                   for name, rep in checks.items()},
        "exit_code": EXIT_BOUND_VIOLATION if failed else EXIT_OK,
    }
    summary_path = os.path.join(out_dir, "summary.json")
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    lines = [f"test {test_id}: horizon {horizon:.6g} s, {len(series)} samples"]
    lines.extend(_cert_lines(cert))
    for name, rep in checks.items():
        lines.append(f"  check {name}: {'PASS' if rep.ok else 'FAIL'} "
                     f"({len(rep.violations)} violations / {rep.checked})")
    code = EXIT_BOUND_VIOLATION if failed else EXIT_OK
    if failed:
        lines.append(f"contractual checks failed: {', '.join(failed)}")
    return RunResult(code, "\n".join(lines), series=series, certificate=cert,
                     paths={"csv": csv_path, "summary": summary_path,
                            "norm_plot": norm_path, "surface_plot": surface_path})


def run_analyze(csv_paths) -> RunResult:
    """Post-hoc analysis of emitted CSVs.

    One unperturbed CSV: exponential decay fit of V.  One perturbed CSV:
    ISS bound violation count.  Two CSVs: steady-state error-norm ratio
    over the final 20% window.
    """
    if not csv_paths:
        return RunResult(EXIT_USAGE, "no CSV paths given")
    try:
        tables = [read_csv(p) for p in csv_paths]
    except (ConfigError, OSError) as exc:
        return RunResult(EXIT_USAGE, f"format error: {exc}")
    lines = []
    if len(tables) == 1:
        cols = tables[0]
        if np.all(np.isnan(cols["iss_bound_conservative"])):
            t, v = cols["t"], cols["V"]
            keep = v > max(v[0] * 1e-12, 0.0)
            if keep.sum() < 2:
                return RunResult(EXIT_USAGE, "format error: no positive V window to fit")
            rate, r2 = analysis.decay_fit(t[keep], v[keep])
            lines.append(f"decay fit on V: rate={rate:.6g} 1/s, r^2={r2:.6g}")
        else:
            for col in ("iss_bound_conservative", "iss_bound_verbatim"):
                bad = int(np.sum(cols["V0"] > cols[col]))
                lines.append(f"{col}: {bad} violations / {len(cols['t'])}")
        return RunResult(EXIT_OK, "\n".join(lines))
    means = []
    for path, cols in zip(csv_paths, tables):
        t = cols["t"]
        window = t >= t[-1] - 0.2 * (t[-1] - t[0])
        mean = float(np.mean(cols["l2_err"][window]))
        means.append(mean)
        lines.append(f"{path}: steady-state mean ||u~|| = {mean:.6g}")
    lines.append(f"ratio (last/first) = {means[-1] / means[0]:.6g}")
    return RunResult(EXIT_OK, "\n".join(lines))


def default_out_dir(cli_value=None) -> str:
    return cli_value or os.environ.get(ENV_OUT_DIR) or os.path.join(os.getcwd(), "out")
