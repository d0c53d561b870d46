"""Acceptance criteria, one test per numbered criterion.

Heavy runs are shared through module-scoped fixtures; every tolerance is
pinned here, and each check prints a single pass/fail line so a verbose
run reads as a checklist.

Criterion 3 is asserted exactly as specified.  The measured convergence of
the iterate marginals toward the flow is second order in the step size for
the smooth Gaussian family (the theory's first-order bound is not tight
there), so its squared-distance ratios land near 0.25, below the required
window - see the failure message and the repository notes.
"""

import math

import numpy as np
import pytest

from sinkflow.closed_form import (
    FlowKind,
    deficit_ratio,
    integrate_euclid_mirror,
    scale_variance_entropic,
    scale_variance_fokker_planck,
)
from sinkflow.experiments import ExperimentConfig, run_eps_limit, verify_battery
from sinkflow.grids import DensitySpec, Grid, discretize, pushforward_monotone
from sinkflow.particles import (
    ParticleEnsemble,
    dual_sde_step,
    ks_distance,
    markov_chain_step,
    sinkhorn_sde_step,
)
from sinkflow.pma import (
    EntropyFunctional,
    PotentialEnergyFunctional,
    continuity_residual,
    dual_pma_residual,
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
from sinkflow.sinkhorn import (
    coupling,
    initial_state,
    laplace_residual,
    s_step,
    u_operator,
    v_operator,
)
from sinkflow.transport import (
    ConvexPotential,
    change_of_measure_residual,
    log_det_hessian_gradient_residual,
)

GRID = Grid(-8.0, 8.0, 512)
DT = 1e-3
THETA = 0.5
ETA = 0.5
PARTICLES = 100_000
MU_SPEC = DensitySpec.gaussian(0.0, 1.0)


def record(criterion: str, ok: bool, detail: str) -> None:
    from conftest import ACCEPTANCE_LOG

    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
    print(line)
    ACCEPTANCE_LOG.append(line)
    assert ok, f"{criterion}: {detail}"


@pytest.fixture(scope="module")
def location_run():
    state = gaussian_location_state(GRID, THETA)
    return run_flow(state, DT, 1000)


@pytest.fixture(scope="module")
def scale_run():
    state = gaussian_scale_state(GRID, ETA)
    return run_flow(state, DT, 1000, keep_every=100)


@pytest.fixture(scope="module")
def stationary_pair():
    state = make_flow_state(GRID, MU_SPEC, MU_SPEC, ConvexPotential.quadratic(GRID))
    return state, step(state, DT)


def test_criterion_1_gaussian_location_oracle(location_run):
    for t in (0.5, 1.0):
        s = location_run[int(round(t / DT))]
        ref = THETA * math.exp(-t)
        record(f"criterion 1 mean(t={t})",
               abs(s.rho.mean() - ref) <= 0.02 * ref,
               f"mean {s.rho.mean():.6f} vs {ref:.6f} (2% rel)")
        record(f"criterion 1 variance(t={t})",
               abs(s.rho.variance() - 1.0) <= 0.02,
               f"variance {s.rho.variance():.6f} vs 1 (2%)")


def test_criterion_2_gaussian_scale_oracle(scale_run):
    for t in (0.5, 1.0):
        s = min(scale_run, key=lambda st: abs(st.t - t))
        ref = scale_variance_entropic(ETA, s.t)
        record(f"criterion 2 entropic variance(t={t})",
               abs(s.rho.variance() - ref) <= 0.02 * ref,
               f"{s.rho.variance():.6f} vs {ref:.6f} (2% rel)")
    mu = discretize(MU_SPEC, GRID)
    rho0 = discretize(DensitySpec.gaussian(0.0, ETA * ETA), GRID)
    hist = run_fokker_planck(rho0, mu, DT, 1000)
    for t in (0.5, 1.0):
        d = hist[int(round(t / DT))]
        ref = scale_variance_fokker_planck(ETA, t)
        record(f"criterion 2 fokker-planck variance(t={t})",
               abs(d.variance() - ref) <= 0.01 * ref,
               f"{d.variance():.6f} vs {ref:.6f} (1% rel)")
    for t in (1.0, 2.0):
        lhs, rhs = deficit_ratio(ETA, t)
        record(f"criterion 2 deficit ratio(t={t})", lhs >= rhs,
               f"lhs {lhs:.6f} >= rhs {rhs:.6f}")


def test_criterion_3_eps_scaling_limit():
    cfg = ExperimentConfig.from_dict({
        "experiment": "eps_limit",
        "problem": {"kind": "gaussian_location", "theta": THETA},
        "numerics": {"n": 512, "dt": DT, "T": 1.0, "eps_list": [0.2, 0.1, 0.05]},
    })
    report = run_eps_limit(cfg)
    w2sq = [r["w2_squared"] for r in report.rows if "w2_squared" in r]
    ratios = [b / a for a, b in zip(w2sq, w2sq[1:])]
    detail = (f"w2^2 table {['%.3e' % v for v in w2sq]}, ratios "
              f"{['%.3f' % r for r in ratios]} required within [0.3, 0.8]; the "
              "measured decay is second order in the step (ratios near 0.25), "
              "faster than the first-order window anticipates")
    record("criterion 3 eps-limit ratio law",
           all(0.3 <= r <= 0.8 for r in ratios), detail)


def test_criterion_4_operator_properties():
    rng = np.random.default_rng(12)
    mu = discretize(MU_SPEC, GRID)
    nu = discretize(DensitySpec.gaussian(THETA, 1.0), GRID)
    xs = GRID.nodes

    def random_potential():
        vals = 0.5 * rng.uniform(0.3, 1.5) * xs**2 + rng.uniform(-0.5, 0.5) * xs
        for k in range(1, 4):
            vals += rng.uniform(-0.3, 0.3) * np.sin(k * xs / 4 + rng.uniform(0, 6.28))
        return vals

    worst_v, worst_u = 0.0, 0.0
    for _ in range(100):
        p1, p2 = random_potential(), random_potential()
        gap = float(np.max(np.abs(p1 - p2)))
        worst_v = max(worst_v, float(np.max(np.abs(
            v_operator(p1, mu, 0.1) - v_operator(p2, mu, 0.1)))) - gap)
        worst_u = max(worst_u, float(np.max(np.abs(
            u_operator(p1, nu, 0.1) - u_operator(p2, nu, 0.1)))) - gap)
    record("criterion 4 contraction", worst_v <= 1e-9 and worst_u <= 1e-9,
           f"worst expansion excess V {worst_v:.2e}, U {worst_u:.2e}")

    worst_mass = 0.0
    for _ in range(100):
        st = initial_state(random_potential(), mu, nu, nu, 0.1)
        nxt = s_step(st)
        worst_mass = max(worst_mass, abs(GRID.integrate(nxt.rho.values) - 1.0))
    record("criterion 4 normalization", worst_mass <= 1e-8,
           f"worst |mass - 1| = {worst_mass:.2e}")

    st = initial_state(0.5 * xs**2, mu, nu, nu, 0.1)
    for _ in range(3):
        st = s_step(st)
    gap = float(np.max(np.abs(coupling(st).y_marginal() - nu.values)))
    record("criterion 4 coupling second marginal", gap <= 1e-5,
           f"sup gap {gap:.2e} <= 1e-5")


def test_criterion_5_laplace_estimate():
    mu = discretize(MU_SPEC, GRID)
    u = ConvexPotential.quadratic(GRID)
    eps_list = [0.2, 0.1, 0.05, 0.025]
    res = [laplace_residual(u, mu, MU_SPEC, e) for e in eps_list]
    slope = float(np.polyfit(np.log(eps_list), np.log(res), 1)[0])
    record("criterion 5 laplace slope", slope >= 1.7,
           f"log-log slope {slope:.3f} >= 1.7 over eps {eps_list}")


def test_criterion_6_metric_derivative(location_run):
    rows = metric_derivative_lot(location_run, 0.5, (0.025,))
    ratio = rows[0]["ratio"]
    record("criterion 6 metric-derivative ratio", 0.95 <= ratio <= 1.05,
           f"LOT rate / velocity norm = {ratio:.4f} at delta 0.025")
    gap, base = second_order_lot_gap(location_run, 0.5, 0.025)
    record("criterion 6 second-order pushforward", gap <= 0.1 * base,
           f"gap {gap:.3e} <= 0.1 * {base:.3e}")


def test_criterion_7_kl_decay(location_run):
    rows = kl_decay_series(location_run[::25])
    within = all(r["kl"] <= 1.05 * r["bound"] + 1e-15 for r in rows)
    record("criterion 7 decay bound", within, "kl <= 1.05 * bound along the run")
    saturation = max(abs(r["kl"] / r["bound"] - 1.0) for r in rows[1:])
    record("criterion 7 saturation", saturation <= 0.01,
           f"worst |kl/bound - 1| = {saturation:.4f} <= 1% (unit-curvature case)")


def test_criterion_8_pde_identities(stationary_pair):
    st0, st1 = stationary_pair
    record("criterion 8 stationary dual residual",
           dual_pma_residual(st0, st1) <= 1e-3,
           f"{dual_pma_residual(st0, st1):.2e} <= 1e-3")
    record("criterion 8 stationary continuity residual",
           continuity_residual(st0, st1) <= 1e-3,
           f"{continuity_residual(st0, st1):.2e} <= 1e-3")
    record("criterion 8 stationary tensor residual",
           log_det_hessian_gradient_residual(st0.u) <= 1e-3,
           f"{log_det_hessian_gradient_residual(st0.u):.2e} <= 1e-3")
    ident = pushforward_monotone(st0.rho, st0.u.du)
    com_res = change_of_measure_residual(st0.rho, st0.u, ident)
    record("criterion 8 stationary change-of-measure residual", com_res <= 1e-3,
           f"{com_res:.2e} <= 1e-3")

    # refinement: dt halving with grid doubling (trajectory substep pinned)
    sub = 6.25e-5
    levels = {}
    for n, dt in ((512, 1e-3), (1024, 5e-4)):
        g = Grid(-8.0, 8.0, n)
        states = run_flow(gaussian_location_state(g, THETA), dt,
                          int(round(0.5 / dt)) + 1, max_substep=sub)
        k = int(round(0.5 / dt))
        u_mid = states[k].u
        phi = ConvexPotential.from_callable(
            g, lambda x: 0.5 * x**2 + 0.05 * np.cosh(x / 2) * 4,
            lambda x: x + 0.1 * np.sinh(x / 2),
            lambda x: 1.0 + 0.05 * np.cosh(x / 2))
        target = Grid(float(phi.du[0]) - 0.5, float(phi.du[-1]) + 0.5, 2 * n)
        pushed = pushforward_monotone(states[k].rho, phi.du, target)
        levels[n] = (
            dual_pma_residual(states[k], states[k + 1]),
            continuity_residual(states[k], states[k + 1]),
            log_det_hessian_gradient_residual(
                ConvexPotential.from_callable(
                    g, lambda x: np.cosh(x / 2) * 4, lambda x: 2 * np.sinh(x / 2),
                    lambda x: np.cosh(x / 2))),
            change_of_measure_residual(states[k].rho, phi, pushed),
        )
    names = ("dual-PMA", "continuity", "tensor identity", "change-of-measure")
    for i, name in enumerate(names):
        ratio = levels[512][i] / levels[1024][i]
        record(f"criterion 8 {name} refinement", ratio >= 1.8,
               f"{levels[512][i]:.3e} -> {levels[1024][i]:.3e}, factor {ratio:.2f} >= 1.8")


def test_criterion_9_diffusion_marginals(location_run):
    ens = ParticleEnsemble.from_density(location_run[0].rho, PARTICLES, seed=7)
    for i in range(1000):
        ens = sinkhorn_sde_step(ens, location_run[i], DT)
    final = location_run[1000]
    se_mean = math.sqrt(ens.variance() / PARTICLES)
    se_var = ens.variance() * math.sqrt(2.0 / PARTICLES)
    record("criterion 9 sde mean",
           abs(ens.mean() - final.rho.mean()) <= 3 * se_mean,
           f"{ens.mean():.5f} vs flow {final.rho.mean():.5f} (3 SE = {3 * se_mean:.5f})")
    record("criterion 9 sde variance",
           abs(ens.variance() - final.rho.variance()) <= 3 * se_var,
           f"{ens.variance():.5f} vs flow {final.rho.variance():.5f} (3 SE = {3 * se_var:.5f})")

    frozen = location_run[0]
    dual = ParticleEnsemble.from_density(frozen.nu, PARTICLES, seed=8)
    for _ in range(1000):
        dual = dual_sde_step(dual, frozen, DT)
    ks = ks_distance(dual, frozen.nu)
    tol = 2 * 1.63 / math.sqrt(PARTICLES)
    record("criterion 9 frozen-mirror stationarity", ks <= tol,
           f"KS {ks:.5f} <= {tol:.5f}")

    mu = discretize(MU_SPEC, GRID)
    nu = discretize(DensitySpec.gaussian(THETA, 1.0), GRID)
    sk = initial_state(0.5 * GRID.nodes**2, mu, nu, nu, 0.1)
    chain = ParticleEnsemble.from_density(sk.rho, PARTICLES, seed=11)
    tol = 3 * 1.63 / math.sqrt(PARTICLES)
    worst = 0.0
    for _ in range(10):
        chain = markov_chain_step(chain, sk)
        sk = s_step(sk)
        worst = max(worst, ks_distance(chain, sk.rho))
    record("criterion 9 markov-chain marginals", worst <= tol,
           f"worst KS over k<=10 is {worst:.5f} <= {tol:.5f}")


def test_criterion_10_euclid_mirror_odes():
    checks = (
        (FlowKind.EUCLID_QUADRATIC, 1.0, math.exp(-1.0)),
        (FlowKind.EUCLID_QUARTIC, 3.0, math.sqrt(0.5)),
        (FlowKind.EUCLID_INVERSE, 2.0, 4.0 ** (-1.0 / 3.0)),
    )
    for kind, t_end, ref in checks:
        got = integrate_euclid_mirror(kind, t_end, 1e-4)
        record(f"criterion 10 {kind.value}", abs(got - ref) <= 1e-3,
               f"x({t_end}) = {got:.6f} vs {ref:.6f} (1e-3)")


def test_criterion_11_mirror_flow_examples():
    for functional, law, name in (
        (EntropyFunctional(), lambda t: (1.0 + t) ** 2, "entropy"),
        (PotentialEnergyFunctional(), lambda t: 1.0 / (1.0 + t) ** 2, "potential energy"),
    ):
        state = make_flow_state(GRID, MU_SPEC, MU_SPEC, ConvexPotential.quadratic(GRID),
                                functional=functional)
        states = run_flow(state, DT, 1000, keep_every=500)
        for s in states[1:]:
            ref = law(s.t)
            record(f"criterion 11 {name} variance(t={s.t:.1f})",
                   abs(s.rho.variance() - ref) <= 0.02 * ref,
                   f"{s.rho.variance():.5f} vs {ref:.5f} (2% rel)")


def test_criterion_12_verify_determinism(tmp_path):
    a = verify_battery(tmp_path / "one", profile="quick", seed=7)
    b = verify_battery(tmp_path / "two", profile="quick", seed=7)
    record("criterion 12 verify determinism", a["files"] == b["files"],
           f"{len(a['files'])} artifact checksums identical across reruns")
