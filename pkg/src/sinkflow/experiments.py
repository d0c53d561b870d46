"""Experiment harness: configuration, runners, reports, and manifests.

Each experiment consumes a validated :class:`ExperimentConfig`, produces a
row table plus a list of verdicts (check name, value, tolerance, pass),
and writes deterministic CSV/JSON artifacts.  A manifest records the
config hash and per-file checksums; re-running the same config must
reproduce every checksum bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .closed_form import (
    ClosedFormFlow,
    FlowKind,
    deficit_ratio,
    evaluate,
    scale_variance_entropic,
    scale_variance_fokker_planck,
)
from .errors import DomainError
from .grids import DensitySpec, Grid, discretize, kl_divergence
from .particles import (
    ParticleEnsemble,
    dual_sde_step,
    ks_distance,
    markov_chain_step,
    sinkhorn_sde_step,
)
from .pma import (
    EntropyFunctional,
    PotentialEnergyFunctional,
    gaussian_location_state,
    gaussian_scale_state,
    kl_decay_series,
    make_flow_state,
    metric_derivative_lot,
    run_flow,
    run_fokker_planck,
    second_order_lot_gap,
    step,
)
from .sinkhorn import initial_state, laplace_residual, s_step
from .svgplot import emit_svg
from .transport import ConvexPotential, w2_distance

EXPERIMENTS = (
    "sinkhorn_run",
    "pma_run",
    "fokker_planck_run",
    "diffusion_run",
    "markov_chain_run",
    "eps_limit",
    "metric_derivative",
    "kl_decay",
    "gaussian_closed_form",
    "laplace_estimate",
)

_NUMERIC_DEFAULTS = {
    "L": 8.0,
    "n": 512,
    "dt": 1e-3,
    "T": 1.0,
    "eps": 0.1,
    "eps_list": [0.2, 0.1, 0.05],
    "particles": 100000,
    "seed": 7,
    "tolerances": {},
}

_PROBLEM_DEFAULTS = {"kind": "gaussian_location", "theta": 0.5, "eta": 0.5}

_OUTPUT_DEFAULTS = {"directory": ".", "snapshot_stride": 0, "emit_svg": False}


def floor_steps(T: float, eps: float) -> int:
    """floor(T / eps) with a guard against float division artifacts."""
    return int(math.floor(T / eps + 1e-9))


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    problem: dict
    numerics: dict
    output: dict

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        exp = raw.get("experiment")
        if exp not in EXPERIMENTS:
            raise DomainError(f"unknown experiment {exp!r}")
        problem = {**_PROBLEM_DEFAULTS, **raw.get("problem", {})}
        numerics = {**_NUMERIC_DEFAULTS, **raw.get("numerics", {})}
        output = {**_OUTPUT_DEFAULTS, **raw.get("output", {})}
        n = numerics["n"]
        if not (64 <= n <= 2048 and (n & (n - 1)) == 0):
            raise DomainError("n must be a power of two between 64 and 2048")
        if numerics["T"] <= 0:
            raise DomainError("T must be positive")
        eps_list = list(numerics["eps_list"])
        if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
            raise DomainError("eps_list must be strictly decreasing")
        return cls(exp, problem, numerics, output)

    def as_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "problem": self.problem,
            "numerics": self.numerics,
            "output": self.output,
        }

    def hash(self) -> str:
        canon = json.dumps(self.as_dict(), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()

    def grid(self) -> Grid:
        return Grid(-self.numerics["L"], self.numerics["L"], self.numerics["n"])


@dataclass
class Report:
    experiment: str
    config_hash: str
    rows: list
    verdicts: list = field(default_factory=list)
    # extra artifact writers: file name -> callable(path)
    artifacts: dict = field(default_factory=dict)

    def passed(self) -> bool:
        return all(v["pass"] for v in self.verdicts)

    def to_json(self, path) -> None:
        payload = {
            "experiment": self.experiment,
            "config_hash": self.config_hash,
            "rows": self.rows,
            "verdicts": self.verdicts,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, sort_keys=True, indent=1)
            fh.write("\n")


def _verdict(check: str, value: float, tolerance, ok: bool) -> dict:
    return {"check": check, "value": value, "tolerance": tolerance, "pass": bool(ok)}


def _flow_state(config: ExperimentConfig):
    kind = config.problem["kind"]
    grid = config.grid()
    if kind == "gaussian_location":
        return gaussian_location_state(grid, config.problem["theta"])
    if kind == "gaussian_scale":
        return gaussian_scale_state(grid, config.problem["eta"])
    if kind == "mirror_entropy":
        spec = DensitySpec.gaussian(0.0, 1.0)
        return make_flow_state(grid, spec, spec, ConvexPotential.quadratic(grid),
                               functional=EntropyFunctional())
    if kind == "mirror_potential_energy":
        spec = DensitySpec.gaussian(0.0, 1.0)
        return make_flow_state(grid, spec, spec, ConvexPotential.quadratic(grid),
                               functional=PotentialEnergyFunctional())
    raise DomainError(f"unknown problem kind {kind!r}")


def run_pma(config: ExperimentConfig) -> Report:
    """Flow run with moment trajectory checked against the closed form."""
    num = config.numerics
    state = _flow_state(config)
    steps = int(round(num["T"] / num["dt"]))
    states = run_flow(state, num["dt"], steps, keep_every=max(1, steps // 200))
    rows = [
        {"t": s.t, "mean": s.rho.mean(), "variance": s.rho.variance(),
         "kl": kl_divergence(s.rho, s.mu)}
        for s in states
    ]
    artifacts = {}
    stride = int(config.output.get("snapshot_stride", 0))
    if stride > 0:
        for s in states[::stride]:
            name = f"density_t{s.t:.6f}.csv"
            artifacts[name] = (lambda path, d=s.rho: d.to_csv(path))
    verdicts = []
    kind = config.problem["kind"]
    checkpoints = [t for t in (0.5, 1.0) if t <= num["T"] + 1e-9]
    for t in checkpoints:
        s = min(states, key=lambda st: abs(st.t - t))
        if kind == "gaussian_location":
            ref = evaluate(ClosedFormFlow(FlowKind.SINKHORN_LOCATION, config.problem["theta"]), s.t)
            verdicts.append(_verdict(
                f"mean(t={t})", s.rho.mean(), f"2% of {ref.mean:.6f}",
                abs(s.rho.mean() - ref.mean) <= 0.02 * abs(ref.mean)))
            verdicts.append(_verdict(
                f"variance(t={t})", s.rho.variance(), "2% of 1",
                abs(s.rho.variance() - 1.0) <= 0.02))
        elif kind == "gaussian_scale":
            ref = scale_variance_entropic(config.problem["eta"], s.t)
            verdicts.append(_verdict(
                f"variance(t={t})", s.rho.variance(), f"2% of {ref:.6f}",
                abs(s.rho.variance() - ref) <= 0.02 * ref))
        elif kind == "mirror_entropy":
            ref = (1.0 + s.t) ** 2
            verdicts.append(_verdict(
                f"variance(t={t})", s.rho.variance(), f"2% of {ref:.6f}",
                abs(s.rho.variance() - ref) <= 0.02 * ref))
        elif kind == "mirror_potential_energy":
            ref = 1.0 / (1.0 + s.t) ** 2
            verdicts.append(_verdict(
                f"variance(t={t})", s.rho.variance(), f"2% of {ref:.6f}",
                abs(s.rho.variance() - ref) <= 0.02 * ref))
    return Report(config.experiment, config.hash(), rows, verdicts, artifacts)


def run_fokker_planck_experiment(config: ExperimentConfig) -> Report:
    num = config.numerics
    grid = config.grid()
    kind = config.problem["kind"]
    mu = discretize(DensitySpec.gaussian(0.0, 1.0), grid)
    if kind == "gaussian_location":
        theta = config.problem["theta"]
        rho0 = discretize(DensitySpec.gaussian(theta, 1.0), grid)
    elif kind == "gaussian_scale":
        eta = config.problem["eta"]
        rho0 = discretize(DensitySpec.gaussian(0.0, eta * eta), grid)
    else:
        raise DomainError("fokker_planck_run expects a Gaussian problem")
    steps = int(round(num["T"] / num["dt"]))
    hist = run_fokker_planck(rho0, mu, num["dt"], steps)
    stride = max(1, steps // 200)
    rows = [
        {"t": i * num["dt"], "mean": d.mean(), "variance": d.variance()}
        for i, d in enumerate(hist) if i % stride == 0 or i == steps
    ]
    verdicts = []
    for t in (0.5, 1.0):
        if t > num["T"] + 1e-9:
            continue
        d = hist[int(round(t / num["dt"]))]
        if kind == "gaussian_location":
            ref_mean = config.problem["theta"] * math.exp(-t)
            verdicts.append(_verdict(
                f"mean(t={t})", d.mean(), f"1% of {ref_mean:.6f}",
                abs(d.mean() - ref_mean) <= 0.01 * abs(ref_mean)))
            verdicts.append(_verdict(
                f"variance(t={t})", d.variance(), "1% of 1",
                abs(d.variance() - 1.0) <= 0.01))
        else:
            ref = scale_variance_fokker_planck(config.problem["eta"], t)
            verdicts.append(_verdict(
                f"variance(t={t})", d.variance(), f"1% of {ref:.6f}",
                abs(d.variance() - ref) <= 0.01 * ref))
    return Report(config.experiment, config.hash(), rows, verdicts)


def run_sinkhorn_experiment(config: ExperimentConfig) -> Report:
    """Fixed-eps iteration: the iterate marginal must drift toward mu in KL."""
    num = config.numerics
    grid = config.grid()
    state = _make_sinkhorn_initial(config, grid)
    k_max = min(50, floor_steps(num["T"], num["eps"]))
    rows = []
    kls = []
    for _ in range(k_max):
        state = s_step(state)
        kl = kl_divergence(state.mu, state.rho)
        kls.append(kl)
        rows.append({"k": state.k, "mean": state.rho.mean(),
                     "variance": state.rho.variance(), "kl_mu_rho": kl})
    decreasing = all(b < a + 1e-12 for a, b in zip(kls, kls[1:]))
    verdicts = [_verdict("kl(mu||rho_k) decreasing", kls[-1], "monotone", decreasing)]
    return Report(config.experiment, config.hash(), rows, verdicts)


def _make_sinkhorn_initial(config: ExperimentConfig, grid: Grid, eps: float | None = None):
    kind = config.problem["kind"]
    mu_spec = DensitySpec.gaussian(0.0, 1.0)
    if kind == "gaussian_location":
        nu_spec = DensitySpec.gaussian(config.problem["theta"], 1.0)
    elif kind == "gaussian_scale":
        eta = config.problem["eta"]
        nu_spec = DensitySpec.gaussian(0.0, eta * eta)
    else:
        raise DomainError("sinkhorn experiments expect a Gaussian problem")
    mu = discretize(mu_spec, grid)
    nu = discretize(nu_spec, grid)
    u0 = ConvexPotential.quadratic(grid)
    return initial_state(u0.u, mu, nu, nu, eps if eps is not None else config.numerics["eps"])


def run_eps_limit(config: ExperimentConfig) -> Report:
    """Scaling-limit comparison of the iteration against the flow.

    Shares the initial potential between both, runs floor(T/eps) two-step
    iterations per eps, and tabulates the squared quantile distance to the
    flow state at the matching time, with successive ratios and the fitted
    log-log slope.
    """
    num = config.numerics
    grid = config.grid()
    flow0 = _flow_state(config)
    eps_list = list(num["eps_list"])
    t_targets = [floor_steps(num["T"], e) * e for e in eps_list]
    steps_needed = int(round(max(t_targets) / num["dt"])) + 1
    states = run_flow(flow0, num["dt"], steps_needed)

    rows = []
    for eps, t_k in zip(eps_list, t_targets):
        k = floor_steps(num["T"], eps)
        sk = _make_sinkhorn_initial(config, grid, eps=eps)
        for _ in range(k):
            sk = s_step(sk)
        flow_at = states[int(round(t_k / num["dt"]))]
        w2sq = w2_distance(sk.rho, flow_at.rho) ** 2
        rows.append({"eps": eps, "k": k, "t": t_k, "w2_squared": w2sq})
    ratios = [rows[i + 1]["w2_squared"] / rows[i]["w2_squared"] for i in range(len(rows) - 1)]
    verdicts = []
    if len(rows) >= 2:
        logs = np.log([r["w2_squared"] for r in rows])
        slope = float(np.polyfit(np.log(eps_list), logs, 1)[0])
        for i, r in enumerate(ratios):
            verdicts.append(_verdict(
                f"ratio {eps_list[i + 1]}/{eps_list[i]}", r, "[0.3, 0.8]",
                0.3 <= r <= 0.8))
        rows.append({"fitted_slope": slope})
    return Report(config.experiment, config.hash(), rows, verdicts)


def run_laplace_estimate(config: ExperimentConfig) -> Report:
    """Small-eps expansion check of the log-domain smoothing operator.

    Tabulates the sup residual of the expansion on a compact window for
    each eps and fits the log-log slope (contract: >= 1.7).  A negative
    control drops the eps-entropy constant and must destroy the fit.
    """
    num = config.numerics
    grid = config.grid()
    mu_spec = DensitySpec.gaussian(0.0, 1.0)
    mu = discretize(mu_spec, grid)
    u = ConvexPotential.quadratic(grid)
    eps_list = list(num["eps_list"])
    rows = []
    for eps in eps_list:
        full = laplace_residual(u, mu, mu_spec, eps)
        ablated = laplace_residual(u, mu, mu_spec, eps, include_entropy_term=False)
        rows.append({"eps": eps, "residual": full, "residual_without_entropy_term": ablated})
    log_eps = np.log(eps_list)
    slope = float(np.polyfit(log_eps, np.log([r["residual"] for r in rows]), 1)[0])
    slope_ablated = float(np.polyfit(
        log_eps, np.log([r["residual_without_entropy_term"] for r in rows]), 1)[0])
    floor_d2u = float(np.min(u.d2u))
    verdicts = [
        _verdict("residual slope", slope, ">= 1.7", slope >= 1.7),
        _verdict("ablated slope (negative control)", slope_ablated, "< 1", slope_ablated < 1.0),
        _verdict("hessian floor proximity", floor_d2u, "> 10x floor", floor_d2u > 10 * u.floor),
    ]
    rows.append({"fitted_slope": slope, "ablated_slope": slope_ablated})
    return Report(config.experiment, config.hash(), rows, verdicts)


def run_metric_derivative(config: ExperimentConfig) -> Report:
    num = config.numerics
    state = _flow_state(config)
    t0, deltas = 0.5, (0.1, 0.05, 0.025)
    steps = int(round((t0 + max(deltas)) / num["dt"]))
    states = run_flow(state, num["dt"], steps)
    table = metric_derivative_lot(states, t0, deltas)
    rows = [dict(r) for r in table]
    ratio = table[-1]["ratio"]
    gap, base = second_order_lot_gap(states, t0, deltas[-1])
    rows.append({"second_order_gap": gap, "first_order_gap": base})
    verdicts = [
        _verdict("ratio at smallest delta", ratio, "[0.95, 1.05]", 0.95 <= ratio <= 1.05),
        _verdict("second-order pushforward gap", gap, f"<= 0.1 * {base:.3e}", gap <= 0.1 * base),
    ]
    return Report(config.experiment, config.hash(), rows, verdicts)


def run_kl_decay(config: ExperimentConfig) -> Report:
    num = config.numerics
    state = _flow_state(config)
    steps = int(round(num["T"] / num["dt"]))
    states = run_flow(state, num["dt"], steps, keep_every=max(1, steps // 100))
    table = kl_decay_series(states)
    ok = all(r["within"] for r in table)
    final = table[-1]
    verdicts = [_verdict("kl <= 1.05 * bound along the run", final["kl"],
                         f"bound {final['bound']:.3e}", ok)]
    if config.problem["kind"] == "gaussian_location":
        # standard-normal curvature saturates the bound: equality within 1%
        sat = abs(final["kl"] / final["bound"] - 1.0) <= 0.01
        verdicts.append(_verdict("bound saturation at t_end", final["kl"] / final["bound"],
                                 "1 +- 1%", sat))
    return Report(config.experiment, config.hash(), [dict(r) for r in table], verdicts)


def run_diffusion(config: ExperimentConfig) -> Report:
    """Primal SDE marginals against the flow, plus frozen-mirror stationarity."""
    num = config.numerics
    count, seed = num["particles"], num["seed"]
    state = _flow_state(config)
    steps = int(round(num["T"] / num["dt"]))
    ens = ParticleEnsemble.from_density(state.rho, count, seed)
    current = state
    rows = []
    stride = max(1, steps // 10)
    for i in range(steps):
        ens = sinkhorn_sde_step(ens, current, num["dt"])
        current = step(current, num["dt"])
        if (i + 1) % stride == 0:
            rows.append({"t": ens.t, "mean": ens.mean(), "variance": ens.variance(),
                         "flow_mean": current.rho.mean(), "flow_variance": current.rho.variance()})
    se_mean = math.sqrt(ens.variance() / count)
    se_var = ens.variance() * math.sqrt(2.0 / count)
    verdicts = [
        _verdict("ensemble mean at T", ens.mean(), f"3 SE of {current.rho.mean():.5f}",
                 abs(ens.mean() - current.rho.mean()) <= 3 * se_mean),
        _verdict("ensemble variance at T", ens.variance(),
                 f"3 SE of {current.rho.variance():.5f}",
                 abs(ens.variance() - current.rho.variance()) <= 3 * se_var),
    ]
    # frozen-mirror dual run started at the target must stay at the target
    frozen = _flow_state(config)
    dual = ParticleEnsemble.from_density(frozen.nu, count, seed + 1)
    for _ in range(steps):
        dual = dual_sde_step(dual, frozen, num["dt"])
    ks = ks_distance(dual, frozen.nu)
    ks_tol = 2 * 1.63 / math.sqrt(count)
    verdicts.append(_verdict("frozen-mirror dual stationarity (KS)", ks,
                             f"<= {ks_tol:.5f}", ks <= ks_tol))
    rows.append({"dual_ks": ks})
    return Report(config.experiment, config.hash(), rows, verdicts)


def run_markov_chain(config: ExperimentConfig) -> Report:
    num = config.numerics
    grid = config.grid()
    count, seed = num["particles"], num["seed"]
    sk = _make_sinkhorn_initial(config, grid)
    ens = ParticleEnsemble.from_density(sk.rho, count, seed)
    rows = []
    k_steps = min(10, floor_steps(num["T"], num["eps"]))
    ks_tol = 3 * 1.63 / math.sqrt(count)
    worst = 0.0
    for _ in range(k_steps):
        ens = markov_chain_step(ens, sk)
        sk = s_step(sk)
        ks = ks_distance(ens, sk.rho)
        worst = max(worst, ks)
        rows.append({"k": sk.k, "ks_vs_iterate_marginal": ks})
    verdicts = [_verdict(f"chain marginal KS over k<={k_steps}", worst,
                         f"<= {ks_tol:.5f}", worst <= ks_tol)]
    return Report(config.experiment, config.hash(), rows, verdicts)


def run_gaussian_closed_form(config: ExperimentConfig) -> Report:
    kind = FlowKind(config.problem.get("flow_kind", "sinkhorn_location"))
    param = config.problem.get("param", config.problem.get("theta", 0.5))
    flow = ClosedFormFlow(kind, param)
    ts = np.linspace(0.0, config.numerics["T"], 51)
    rows = []
    for t in ts:
        val = evaluate(flow, float(t))
        if hasattr(val, "variance"):
            rows.append({"t": float(t), "mean": val.mean, "variance": val.variance})
        else:
            rows.append({"t": float(t), "value": val})
    verdicts = []
    if kind in (FlowKind.SINKHORN_SCALE, FlowKind.FOKKER_PLANCK_SCALE):
        for t in (1.0, 2.0):
            lhs, rhs = deficit_ratio(param, t)
            verdicts.append(_verdict(f"deficit ratio at t={t}", lhs / rhs, ">= 1",
                                     lhs >= rhs))
    return Report(config.experiment, config.hash(), rows, verdicts)


_RUNNERS = {
    "sinkhorn_run": run_sinkhorn_experiment,
    "pma_run": run_pma,
    "fokker_planck_run": run_fokker_planck_experiment,
    "diffusion_run": run_diffusion,
    "markov_chain_run": run_markov_chain,
    "eps_limit": run_eps_limit,
    "metric_derivative": run_metric_derivative,
    "kl_decay": run_kl_decay,
    "gaussian_closed_form": run_gaussian_closed_form,
    "laplace_estimate": run_laplace_estimate,
}


def run_experiment(config: ExperimentConfig) -> Report:
    return _RUNNERS[config.experiment](config)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _rows_to_csv(rows: list, path: Path) -> None:
    keys: list[str] = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    lines = [",".join(keys)]
    for r in rows:
        lines.append(",".join(_csv_cell(r.get(k)) for k in keys))
    path.write_text("\n".join(lines) + "\n")


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def execute(config: ExperimentConfig, outdir: str | Path) -> tuple[Report, dict]:
    """Run one experiment, write its artifacts, and return (report, manifest)."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())
    report = run_experiment(config)
    stem = f"{config.experiment}_{config.hash()[:8]}"
    report_path = out / f"{stem}_report.json"
    report.to_json(report_path)
    csv_path = out / f"{stem}_rows.csv"
    _rows_to_csv(report.rows, csv_path)
    files = [report_path, csv_path]
    for name, writer in report.artifacts.items():
        extra = out / f"{stem}_{name}"
        writer(extra)
        files.append(extra)
    if config.output.get("emit_svg"):
        numeric_rows = [
            [r[k] for k in r if isinstance(r[k], (int, float)) and not isinstance(r[k], bool)]
            for r in report.rows
        ]
        numeric_rows = [r for r in numeric_rows if len(r) >= 2]
        if numeric_rows:
            width = min(len(r) for r in numeric_rows)
            svg_path = out / f"{stem}.svg"
            emit_svg([r[:width] for r in numeric_rows],
                     {"x": 0, "ys": [1], "title": stem}, svg_path)
            files.append(svg_path)
    manifest = {
        "config": config.as_dict(),
        "config_hash": config.hash(),
        "version": __version__,
        "started": started,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        "files": {p.name: _sha256(p) for p in files},
        "passed": report.passed(),
    }
    with open(out / f"{stem}_manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return report, manifest


def verify_battery(outdir: str | Path, profile: str = "full", seed: int | None = None) -> dict:
    """Run the standard acceptance battery and aggregate the manifests.

    ``profile='quick'`` shrinks grids and particle counts for smoke checks;
    the full profile matches the documented acceptance settings.
    """
    quick = profile == "quick"
    n = 256 if quick else 512
    particles = 20000 if quick else 100000
    base_numerics = {"n": n, "particles": particles}
    if seed is not None:
        base_numerics["seed"] = seed
    battery = [
        {"experiment": "pma_run", "problem": {"kind": "gaussian_location", "theta": 0.5}},
        {"experiment": "pma_run", "problem": {"kind": "gaussian_scale", "eta": 0.5}},
        {"experiment": "fokker_planck_run", "problem": {"kind": "gaussian_scale", "eta": 0.5}},
        {"experiment": "eps_limit", "problem": {"kind": "gaussian_location", "theta": 0.5}},
        {"experiment": "laplace_estimate",
         "numerics": {"eps_list": [0.2, 0.1, 0.05, 0.025]}},
        {"experiment": "metric_derivative", "problem": {"kind": "gaussian_location"}},
        {"experiment": "kl_decay", "problem": {"kind": "gaussian_location"}},
        {"experiment": "gaussian_closed_form",
         "problem": {"flow_kind": "sinkhorn_scale", "param": 0.5}, "numerics": {"T": 2.0}},
        {"experiment": "markov_chain_run", "problem": {"kind": "gaussian_location"}},
        {"experiment": "diffusion_run", "problem": {"kind": "gaussian_location"},
         "numerics": {"T": 0.25 if quick else 1.0}},
    ]
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    combined: dict = {"profile": profile, "experiments": {}, "files": {}, "all_passed": True}
    for raw in battery:
        raw.setdefault("numerics", {})
        raw["numerics"] = {**base_numerics, **raw["numerics"]}
        config = ExperimentConfig.from_dict(raw)
        report, manifest = execute(config, out)
        combined["experiments"][f"{config.experiment}:{config.hash()[:8]}"] = {
            "config_hash": manifest["config_hash"],
            "passed": report.passed(),
            "verdicts": report.verdicts,
        }
        combined["files"].update(manifest["files"])
        combined["all_passed"] = combined["all_passed"] and report.passed()
    with open(out / "verify_manifest.json", "w") as fh:
        json.dump(combined, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return combined
