"""Acceptance criteria, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line (shown even without ``-s``)
before asserting, so ``pytest tests/test_acceptance.py -v`` doubles as the
acceptance report.
"""

import math
import time
from functools import lru_cache

import numpy as np
import pytest

from compfun.bounds import iterate_error_bound
from compfun.control import (
    Thm8Config,
    contraction_constants,
    make_lq_problem,
    make_quadratic_problem,
    solve_optimal,
    thm7_bound,
    thm8_pipeline,
)
from compfun.experiments import audit_oracles, iterate_checks, perturbation_check
from compfun.features import extract_features, node_lipschitz
from compfun.nn import assemble_deep, fit_nodes
from compfun.features import propagate_errors
from compfun.ode import elr_lipschitz, euler_flow, flow_net, jacobian_norm, make_lorenz96, sup_norm
from compfun.sampling import box_points

from conftest import scalar_linear

N_DAGS = 50
ALGEBRA_OPS = ("linear_combine", "inner_product", "divide", "compose", "substitute_node", "truncate", "merge_linear_nodes")


def verdict(capsys, number, title, ok, detail):
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {number:2d} {title}: {detail}")
    assert ok, detail


@lru_cache(maxsize=1)
def audit_results():
    t0 = time.monotonic()
    rows = [audit_oracles(seed, points=100) for seed in range(N_DAGS)]
    return rows, time.monotonic() - t0


def test_criterion_01_algebra_oracles(capsys):
    rows, seconds = audit_results()
    worst = {op: max(r[op] for r in rows) for op in ALGEBRA_OPS}
    ok = max(worst.values()) <= 1e-12 and seconds < 60
    verdict(capsys, 1, "algebra oracle equivalence", ok, f"worst relative error {max(worst.values()):.2e} over {N_DAGS} graphs in {seconds:.1f} s")


def test_criterion_02_error_propagation(capsys):
    violations, worst = 0, 0.0
    for seed in range(N_DAGS):
        out = perturbation_check(seed, grid_points=10_000)
        violations += out["measured"] > out["bound"]
        worst = max(worst, out["measured"] / out["bound"])
    verdict(capsys, 2, "perturbation soundness", violations == 0, f"{violations} violations in {N_DAGS}, worst measured/bound {worst:.3f}")


def test_criterion_03_iterated_maps(capsys):
    rows = iterate_checks(K_max=10)
    sound = max(r["measured"] / r["bound"] for r in rows)
    tight = max(r["tight_ratio"] for r in rows)
    ok = sound <= 1.0 and tight <= 3.0
    verdict(capsys, 3, "iterated-map bound", ok, f"worst measured/bound {sound:.3f}, worst bound/attained {tight:.3f}")


def test_criterion_04_lorenz_features(capsys):
    t0 = time.monotonic()
    quads = {d: extract_features(make_lorenz96(d, 8.0, 1.0, m=2), np.inf).quadruple() for d in (4, 8, 16)}
    seconds = time.monotonic() - t0
    ok = all(q == (1.0, 28.0, 1.0, d) for d, q in quads.items()) and seconds < 10
    verdict(capsys, 4, "Lorenz-96 features", ok, f"{quads} in {seconds:.1f} s")


def test_criterion_05_node_lipschitz(capsys):
    f = make_lorenz96(4)
    vals = [node_lipschitz(f, n.id, np.inf) for n in f.general_nodes]
    ok = all(1.0 <= v <= 1.05 for v in vals)
    verdict(capsys, 5, "node Lipschitz constants", ok, f"range [{min(vals):.15f}, {max(vals):.15f}]")


def test_criterion_06_assembly_dominance(capsys):
    f = make_lorenz96(4)
    X = box_points(f.input_radii, 10_000, seed=1)
    fx = f(X)
    rows = []
    for n in (8, 16, 32, 64):
        nets, errs = fit_nodes(f, n)
        fNN = assemble_deep(f, nets, merge=True)
        rows.append((n, float(np.max(np.abs(fNN(X) - fx))), propagate_errors(f, errs), fNN.neuron_count))
    ok = all(m <= b + 1e-9 and c == 4 * n for n, m, b, c in rows) and rows[-1][1] <= rows[0][1]
    detail = "; ".join(f"n={n}: {m:.2e} <= {b:.2e}, {c} neurons" for n, m, b, c in rows)
    verdict(capsys, 6, "assembled network dominance", ok, detail)


def fitted_lorenz_flow_gap():
    """Worst gap between the network flow of a fitted Lorenz-96 field and the exact-field Euler flow, and its bound."""
    f = make_lorenz96(4)
    T, K = 0.05, 5
    h = T / K
    nets, _ = fit_nodes(f, 16)
    fNN = assemble_deep(f, nets, merge=True)
    Xf = box_points(f.input_radii, 8192, seed=3)
    e_f = float(np.max(np.abs(fNN(Xf, check_domains=False) - f(Xf))))
    L = elr_lipschitz(f, h, f.input_radii)
    X0 = box_points(np.full(4, 0.4), 1000, seed=9)
    gap = np.max(np.abs(flow_net(fNN, T, K, 0.4)(X0, check_domains=False) - euler_flow(f, T, K, 0.4)(X0)), axis=1)
    return float(gap.max()), iterate_error_bound(L, K, h * e_f, 0.0)


def test_criterion_07_euler_flow(capsys):
    f = scalar_linear(-1.0)
    x0 = np.linspace(-1, 1, 201)[:, None]
    exact_gap = float(np.max(np.abs(euler_flow(f, 1.0, 10)(x0) - 0.9**10 * x0)))
    A, B = sup_norm(f, [1.0]), jacobian_norm(f, [1.0])
    euler_err = abs(0.9**10 - math.exp(-1.0))
    euler_bound = A * math.exp(B) / 10
    # injected node error: the surrogate field is -x + e
    e = 1e-3
    f_tilde = scalar_linear(-1.0, e, out_R=1.0 + e)
    h = 0.1
    L = elr_lipschitz(f, h, [1.0])
    x_in = np.linspace(-0.9, 0.9, 181)[:, None]
    gap = np.abs(flow_net(f_tilde, 1.0, 10)(x_in, check_domains=False) - flow_net(f, 1.0, 10)(x_in))
    chained = iterate_error_bound(L, 10, h * e, 0.0)
    lz_gap, lz_bound = fitted_lorenz_flow_gap()
    ok = exact_gap <= 1e-12 and euler_err <= euler_bound and bool(np.all(gap <= chained)) and lz_gap <= lz_bound
    detail = (
        f"|flow - 0.9^10 x| = {exact_gap:.1e}; |0.9^10 - 1/e| = {euler_err:.5f} <= {euler_bound:.4f}; "
        f"biased field gap {gap.max():.2e} <= {chained:.2e}; fitted Lorenz-96 gap {lz_gap:.2e} <= {lz_bound:.2e}"
    )
    verdict(capsys, 7, "Euler flow", ok, detail)


def test_criterion_08_contraction_solver(capsys):
    rng = np.random.default_rng(0)
    M = rng.uniform(-1, 1, (2, 2))
    M /= max(1.0, np.linalg.norm(M, 2))
    prob, _ = make_quadratic_problem(M)
    beta, L = contraction_constants(prob.lambda_min, prob.lambda_max)
    violations, total = 0, 0
    for e1 in (0.0, 1e-4):
        prob, Vn = make_quadratic_problem(M, e1=e1)
        X = prob.sample_x(64, seed=1)
        for K in (5, 10, 20):
            for hh in (1e-2, 1e-3):
                err = np.linalg.norm(solve_optimal(prob, K, hh, V=Vn)(X) - prob.u_star(X), axis=1)
                violations += int(np.any(err > thm7_bound(prob.gamma, L, 1.0, prob.q, K, hh, e1)))
                total += 1
    prob, _ = make_quadratic_problem(M)
    X = prob.sample_x(64, seed=2)
    fine = float(np.max(np.abs(solve_optimal(prob, 40, 1e-6)(X) - prob.u_star(X))))
    ok = (beta, L) == (0.5, 0.5) and violations == 0 and fine <= 1e-6
    verdict(capsys, 8, "contraction solver", ok, f"beta={beta}, L={L}; {violations}/{total} bound violations; K=40 error {fine:.1e}")


def test_criterion_09_control_pipeline(capsys):
    prob = make_lq_problem()
    # one physical state plus the running-cost accumulator, which starts at zero
    assert prob.dt == 1.0 and prob.q == 1 and prob.d == 2 and prob.x_radius[1] == 0.0
    t0 = time.monotonic()
    reps = {eps: thm8_pipeline(prob, eps, Thm8Config())[1] for eps in (0.1, 0.05)}
    seconds = time.monotonic() - t0
    a, b = reps[0.1], reps[0.05]
    within = all(r["measured_error"] <= 3 * eps for eps, r in reps.items())
    k_shape = b["K_raw"] / a["K_raw"] == pytest.approx(2.0)
    h_shape = a["h"] / b["h"] == pytest.approx(4.0)
    ok = within and k_shape and h_shape and seconds < 300
    detail = "; ".join(f"eps={eps}: error {r['measured_error']:.4f} <= {3 * eps:.2f}, K={r['K']}, h={r['h']:.3e}" for eps, r in reps.items())
    verdict(capsys, 9, "network control pipeline", ok, f"{detail}; {seconds:.0f} s")


def test_criterion_10_identity_and_merge(capsys):
    rows, _ = audit_results()
    ident = max(r["identity_insertion"] for r in rows)
    merge = max(r["merge_linear_nodes"] for r in rows)
    nets = all(r["merge_is_network"] for r in rows)
    ok = ident <= 1e-12 and merge <= 1e-12 and nets
    verdict(capsys, 10, "identity insertion and merge", ok, f"identity {ident:.1e}, merge {merge:.1e}, all merged outputs are networks: {nets}")
