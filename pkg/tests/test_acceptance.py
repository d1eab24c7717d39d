"""Acceptance suite: one check per numbered criterion.

Every test prints a single ``PASS criterion N: ...`` or
``FAIL criterion N: ...`` line to the real stdout (so the line shows up
under ``pytest -v`` without ``-s``) and then asserts the same condition.
Run just this file with ``pytest tests/test_acceptance.py -v``.
"""

import math
import os
import time

import numpy as np
import pytest

from oracles import brute_covered, grid_global_error, numeric_grad
from perturbed_lth import cli, construct, pgd, theory
from perturbed_lth.intervals import distance_to_point
from perturbed_lth.subsetsum import (
    CandidateSet,
    achievable_set,
    has_approximation,
    min_n_search,
    solve_exact,
)

WORKERS = os.cpu_count() or 1


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        with capsys.disabled():
            print(f"\n{line}")
        assert ok, line

    return emit


@pytest.fixture(scope="module")
def desk():
    cfg = cli.TrainRunConfig()
    return cfg, cli.load_data(cfg)


def test_c01_inner_optimum_matches_grid_oracle(verdict):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst, bad = 0.0, 0
    for i in range(500):
        n = int(rng.integers(1, 9))
        eps = (0.0, 0.01, 0.1)[i % 3]
        values = rng.uniform(-1, 1, n)
        z = float(rng.uniform(-0.5, 0.5))
        got = solve_exact(CandidateSet(values, eps), z).error
        # eps == 0 leaves a single grid point (y = 0) per mask
        ref = grid_global_error(values, eps, z, steps=100)
        tol = eps / 50 if eps > 0 else 1e-4
        gap = abs(got - ref)
        worst = max(worst, gap / tol)
        bad += gap > tol
    dt = time.perf_counter() - t0
    verdict(1, bad == 0 and dt < 60,
            f"500 instances, {bad} outside tolerance, worst gap {worst:.3f} x tol, {dt:.1f}s (limit 60s)")


def test_c02_set_and_solver_agree(verdict):
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    disagree = checked = 0
    for i in range(200):
        n = int(rng.integers(1, 15))
        eps = float(rng.choice([0.0, 0.001, 0.01, 0.05]))
        eta = float(rng.uniform(1e-3, 0.05))
        cands = CandidateSet(rng.uniform(-1, 1, n), eps)
        aset = achievable_set(cands)
        for z in rng.uniform(-0.5, 0.5, 1000):
            d = distance_to_point(aset, float(z))
            if abs(d - eta) <= 1e-10:
                continue  # boundary slack
            checked += 1
            disagree += has_approximation(cands, eta, float(z)) != (d <= eta)
    dt = time.perf_counter() - t0
    # independent spot check of the set against explicit enumeration
    spot = CandidateSet(rng.uniform(-1, 1, 10), 0.01)
    zs = rng.uniform(-0.5, 0.5, 200)
    spot_bad = sum(
        brute_covered(spot.values, 0.01, 0.02, float(z)) != (distance_to_point(achievable_set(spot), float(z)) <= 0.02)
        for z in zs
    )
    verdict(2, disagree == 0 and spot_bad == 0 and dt < 120,
            f"{checked} comparisons, {disagree} disagreements, brute spot check {spot_bad} bad, {dt:.1f}s (limit 120s)")


def test_c03_min_n_trend(verdict, tmp_path):
    t0 = time.perf_counter()
    rows, _ = cli.run_subsetsum(cli.SubsetsumConfig(), tmp_path, workers=WORKERS)
    dt = time.perf_counter() - t0
    by_eta = {}
    for r in rows:
        by_eta.setdefault(r["eta"], []).append((r["eps_over_eta"], r["min_n"]))
    increases = 0
    for series in by_eta.values():
        ns = [n for _, n in sorted(series)]
        increases += sum(b > a for a, b in zip(ns, ns[1:]))
    n_fine, n_coarse = by_eta[1e-3][0][1], by_eta[1e-2][0][1]
    all_found = all(r["found"] for r in rows)
    curves = "; ".join(f"eta={e:g}: {[n for _, n in sorted(s)]}" for e, s in by_eta.items())
    verdict(3, increases == 0 and n_fine > n_coarse and all_found and dt < 600,
            f"{increases} strict increases, min_n(1e-3,0)={n_fine} > min_n(1e-2,0)={n_coarse}, "
            f"{curves}, {dt:.1f}s (limit 600s)")


def test_c04_log_scaling_at_zero_eps(verdict):
    etas = [1e-1, 1e-2, 1e-3]
    targets = cli.SubsetsumConfig().targets
    medians = []
    for eta in etas:
        ns = [min_n_search(eta, 0.0, targets, 10, 8, seed=s, n_max=400).min_n for s in range(10)]
        medians.append(float(np.median(ns)))
    x = np.log(1 / np.array(etas))
    a, b = np.polyfit(x, medians, 1)
    pred = a * x + b
    ss_res = float(np.sum((np.array(medians) - pred) ** 2))
    ss_tot = float(np.sum((np.array(medians) - np.mean(medians)) ** 2))
    r2 = 1 - ss_res / ss_tot if ss_tot > 0 else 0.0
    verdict(4, r2 >= 0.9 and a > 0,
            f"medians {medians}, fit a={a:.3f} b={b:.3f}, R^2={r2:.4f} (need >= 0.9)")


def test_c05_expectation_identity(verdict):
    cells = []
    for eps in (0.0, 0.05, 0.2):
        for p in (0.1, 0.35, 0.65, 0.9):
            chk = theory.expected_growth_check(theory.surrogate_init(p / 2, eps), draws=100_000, seed=5)
            cells.append((p, eps, chk.z_score))
    inside = sum(z <= 3 for *_, z in cells)
    worst = max(cells, key=lambda c: c[2])
    verdict(5, inside >= 11,
            f"{inside}/12 cells within 3 SE, worst |z|={worst[2]:.2f} at p={worst[0]}, eps={worst[1]}")


def test_c06_trajectory_invariants(verdict):
    per_eps = {}
    for eps in (0.0, 0.01, 0.1):
        total = theory.Violations()
        for seed in range(50):
            total = total + theory.check_trajectory(theory.simulate_trajectory(1e-3, eps, 80, seed))
        per_eps[eps] = total
    bad = sum(v.total for v in per_eps.values())
    detail = ", ".join(f"eps={e:g}: {v.as_tuple()}" for e, v in per_eps.items())
    verdict(6, bad == 0, f"150 trajectories, {bad} violations (monotone, cap, Z, psi, domination) {detail}")


def test_c07_end_to_end_construction(verdict):
    t0 = time.perf_counter()
    eta = 0.05
    target = construct.random_target([4, 8, 3], seed=0)
    valid = all(c.ok for c in construct.validate_target(target))
    res = {}
    for eps in (0.0, eta):
        cand = construct.init_candidate(target.dims, eta, eps, seed=1)
        pruned = construct.approximate_network(target, cand, eps, eta)
        sup, _ = construct.measure_sup_error(target, pruned, 10_000, seed=2)
        res[eps] = (sup, sum(cand.hidden_widths), pruned.is_feasible(eps))
    dt = time.perf_counter() - t0
    ok = (
        valid
        and all(sup < eta and feas for sup, _, feas in res.values())
        and res[eta][1] < res[0.0][1]
        and dt < 300
    )
    verdict(7, ok,
            f"sup_err eps=0: {res[0.0][0]:.3g}, eps=eta: {res[eta][0]:.3g} (< {eta}); "
            f"hidden units {res[0.0][1]} -> {res[eta][1]}; {dt:.1f}s (limit 300s)")


def test_c08_pgd_invariant_every_step(verdict, desk):
    cfg, data = desk
    dims = [data.train.dim, *cfg.hidden, int(data.train.y.max()) + 1]
    net = pgd.DenseNet.random(dims, seed=0)
    violations, steps = 0, 0
    for eps in cfg.eps_grid:
        def check(step, cur, eps=eps):
            nonlocal violations, steps
            steps += 1
            violations += sum(int(np.any(np.abs(w - w0) > eps)) for w, w0 in zip(cur.weights, cur.init_weights))

        out = pgd.pgd_train(net, data.train, pgd.TrainConfig(
            eps=eps, lr=cfg.pgd_lr, epochs=cfg.pgd_epochs, batch_size=cfg.pgd_batch_size), on_step=check)
        if eps == 0:
            identical = all(np.array_equal(a, b) for a, b in zip(out.weights, net.init_weights))
    verdict(8, violations == 0 and identical,
            f"{steps} checked steps over eps {cfg.eps_grid}, {violations} violations, eps=0 bit-identical: {identical}")


def test_c09_gradient_check(verdict):
    rng = np.random.default_rng(9)
    net = pgd.DenseNet.random([2, 16, 2], seed=9)
    x = rng.standard_normal((64, 2))
    y = rng.integers(0, 2, 64)
    w = [a.copy() for a in net.weights]
    _, grads = pgd.loss_and_grads(w, x, y)
    worst = 0.0
    for _ in range(100):
        layer = int(rng.integers(len(w)))
        pos = tuple(int(rng.integers(s)) for s in w[layer].shape)
        num = numeric_grad(lambda: pgd.loss_and_grads(w, x, y)[0], w, (layer, pos))
        ana = grads[layer][pos]
        worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-7))
    verdict(9, worst <= 1e-3, f"2->16->2 net, 100 coordinates, worst relative error {worst:.2e} (limit 1e-3)")


def test_c10_topk_mask_exactness(verdict, desk):
    cfg, data = desk
    dims = [data.train.dim, *cfg.hidden, int(data.train.y.max()) + 1]
    net = pgd.DenseNet.random(dims, seed=0)
    prune = pgd.PruneConfig(sparsity_levels=tuple(cfg.sparsity_grid), epochs=1)
    bad = []
    for s in cfg.sparsity_grid:
        res = pgd.edge_popup(net, data, s, prune)
        for layer, (m, sc) in enumerate(zip(res.masks, res.scores)):
            kept, dropped = np.abs(sc)[m == 1], np.abs(sc)[m == 0]
            if m.sum() != round((1 - s) * m.size):
                bad.append((s, layer, "count"))
            if kept.size and dropped.size and kept.min() < dropped.max():
                bad.append((s, layer, "order"))
    verdict(10, not bad, f"{len(cfg.sparsity_grid)} sparsity levels x {len(dims) - 1} layers, problems: {bad or 'none'}")


def test_c11_directional_sweep(verdict, tmp_path):
    t0 = time.perf_counter()
    summary, problems = cli.run_train(cli.TrainRunConfig(), tmp_path, workers=WORKERS)
    dt = time.perf_counter() - t0
    inv = summary.accuracy_inversions()
    s = dict(zip(summary.eps, summary.median_optimal_sparsity))
    ok = inv <= 1 and s[0.2] <= s[0.0] and not problems and dt < 1200
    verdict(11, ok,
            f"median best acc {[round(a, 4) for a in summary.median_best_accuracy]} ({inv} inversions, max 1); "
            f"median optimal sparsity {list(summary.median_optimal_sparsity)} "
            f"(eps=0.2: {s[0.2]} <= eps=0: {s[0.0]}); {dt:.1f}s (limit 1200s)")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
