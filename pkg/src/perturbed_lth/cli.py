"""Command-line experiment runner.

Every subcommand reads an optional JSON config, writes one or more CSV
files plus a ``<command>.config.json`` sidecar holding the resolved
config, and is deterministic given the config and ``--seed``.

Exit codes: 0 success, 2 config error, 3 invariant violation (only when
``--assert-invariants`` is given).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Sequence, get_type_hints

import numpy as np

from . import construct, pgd, subsetsum, theory
from .data import Split, mnist_split, synthetic_dataset, train_test_split

log = logging.getLogger("perturbed_lth")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 2, 3

HEADERS = {
    "subsetsum": ["eta", "eps", "eps_over_eta", "seed", "min_n", "found", "monotone"],
    "theory_trajectories": ["seed", "eps", "k", "p_tilde", "p_exact", "z_increment", "psi"],
    "theory_growth": ["p_tilde", "eps", "empirical_mean", "predicted", "std_err", "z_score"],
    "theory_summary": ["eps", "seeds", "monotone", "step_cap", "z_bound", "psi_gain", "domination", "total"],
    "construct": [
        "eta", "eps", "seed", "hidden_units", "widths", "raw_widths",
        "layer_max_error", "failures", "sup_err", "mean_err", "success",
    ],
    "train": ["eps", "sparsity", "train_acc", "test_acc", "epochs", "seed"],
    "train_summary": ["eps", "seeds", "median_best_test_acc", "median_optimal_sparsity"],
}


class ConfigError(ValueError):
    pass


# configs --------------------------------------------------------------------


@dataclasses.dataclass
class SubsetsumConfig:
    schema_version: int = SCHEMA_VERSION
    eta_grid: list[float] = dataclasses.field(default_factory=lambda: [1e-2, 1e-3])
    ratio_grid: list[float] = dataclasses.field(default_factory=lambda: [float(r) for r in range(11)])
    targets: list[float] = dataclasses.field(default_factory=lambda: [round(-0.5 + 0.1 * i, 10) for i in range(11)])
    trials: int = 10
    successes_required: int = 8
    n_max: int = 400
    candidate_range: list[float] = dataclasses.field(default_factory=lambda: [-1.0, 1.0])
    seed: int = 0

    def validate(self):
        _require(self.eta_grid, "eta_grid", "must be nonempty")
        for i, e in enumerate(self.eta_grid):
            _require(0 < e < 1, f"eta_grid[{i}]", "must lie in (0, 1)")
        _require(self.ratio_grid, "ratio_grid", "must be nonempty")
        for i, r in enumerate(self.ratio_grid):
            _require(r >= 0, f"ratio_grid[{i}]", "must be >= 0")
        _require(self.targets, "targets", "must be nonempty")
        _require(1 <= self.successes_required <= self.trials, "successes_required", "need 1 <= successes_required <= trials")
        _require(self.n_max >= 1, "n_max", "must be >= 1")
        _require(len(self.candidate_range) == 2 and self.candidate_range[0] < self.candidate_range[1],
                 "candidate_range", "must be [low, high] with low < high")


@dataclasses.dataclass
class TheoryConfig:
    schema_version: int = SCHEMA_VERSION
    eta: float = 1e-3
    eps_grid: list[float] = dataclasses.field(default_factory=lambda: [0.0, 0.01, 0.1])
    n: int = 80
    num_seeds: int = 50
    seed: int = 0
    domination_k_max: int = 20
    growth_p_grid: list[float] = dataclasses.field(default_factory=lambda: [0.1, 0.35, 0.65, 0.9])
    growth_eps_grid: list[float] = dataclasses.field(default_factory=lambda: [0.0, 0.05, 0.2])
    growth_draws: int = 100_000

    def validate(self):
        _require(0 < self.eta < 0.5, "eta", "must lie in (0, 1/2)")
        _require(self.eps_grid, "eps_grid", "must be nonempty")
        for i, e in enumerate(self.eps_grid + self.growth_eps_grid):
            _require(e >= 0, "eps_grid", f"entry {i} must be >= 0")
        _require(1 <= self.n <= 200, "n", "must lie in [1, 200]")
        _require(self.num_seeds >= 1, "num_seeds", "seed list is empty")
        for i, p in enumerate(self.growth_p_grid):
            _require(0 < p < 1, f"growth_p_grid[{i}]", "must lie in (0, 1)")
        _require(self.growth_draws >= 1000, "growth_draws", "must be >= 1000")


@dataclasses.dataclass
class ConstructConfig:
    schema_version: int = SCHEMA_VERSION
    dims: list[int] = dataclasses.field(default_factory=lambda: [4, 8, 3])
    eta_grid: list[float] = dataclasses.field(default_factory=lambda: [0.05])
    eps_over_eta: list[float] = dataclasses.field(default_factory=lambda: [0.0, 1.0])
    c1: float = 1.0
    c2: float = 1.0
    sub_block: int | None = None
    samples: int = 10_000
    seed: int = 0
    save_nets: bool = True

    def validate(self):
        _require(len(self.dims) >= 2 and min(self.dims) >= 1, "dims", "need at least two positive entries")
        _require(self.eta_grid, "eta_grid", "must be nonempty")
        for i, e in enumerate(self.eta_grid):
            _require(0 < e < 1, f"eta_grid[{i}]", "must lie in (0, 1)")
        _require(self.eps_over_eta, "eps_over_eta", "must be nonempty")
        for i, r in enumerate(self.eps_over_eta):
            _require(r >= 0, f"eps_over_eta[{i}]", "must be >= 0")
        _require(self.samples >= 1, "samples", "must be >= 1")
        if self.sub_block is not None:
            _require(self.sub_block >= 1, "sub_block", "must be >= 1")
            if self.sub_block % 2:
                log.warning("sub_block %d is odd; rounding up to %d", self.sub_block, self.sub_block + 1)
                self.sub_block += 1


@dataclasses.dataclass
class TrainRunConfig:
    schema_version: int = SCHEMA_VERSION
    dataset: str = "synthetic"
    data_dir: str | None = None
    synthetic_classes: int = 10
    synthetic_dim: int = 20
    synthetic_per_class: int = 200
    synthetic_separation: float = 2.0
    test_fraction: float = 0.25
    mnist_train_size: int = 10_000
    mnist_test_size: int = 2_000
    hidden: list[int] = dataclasses.field(default_factory=lambda: [32, 32])
    eps_grid: list[float] = dataclasses.field(default_factory=lambda: [0.0, 0.05, 0.1, 0.2])
    sparsity_grid: list[float] = dataclasses.field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])
    pgd_lr: float = 0.1
    pgd_epochs: int = 10
    pgd_batch_size: int = 64
    popup_lr: float = 0.1
    popup_epochs: int = 10
    popup_batch_size: int = 64
    popup_momentum: float = 0.9
    cosine_annealing: bool = True
    per_layer_topk: bool = True
    num_seeds: int = 3
    seed: int = 0

    def validate(self):
        _require(self.dataset in ("synthetic", "mnist"), "dataset", "must be 'synthetic' or 'mnist'")
        _require(self.eps_grid, "eps_grid", "must be nonempty")
        for i, e in enumerate(self.eps_grid):
            _require(e >= 0, f"eps_grid[{i}]", "must be >= 0")
        _require(self.sparsity_grid, "sparsity_grid", "must be nonempty")
        for i, s in enumerate(self.sparsity_grid):
            _require(0 <= s < 1, f"sparsity_grid[{i}]", "must lie in [0, 1)")
        _require(all(b > a for a, b in zip(self.sparsity_grid, self.sparsity_grid[1:])),
                 "sparsity_grid", "must be strictly increasing")
        _require(self.hidden and min(self.hidden) >= 1, "hidden", "need positive layer widths")
        _require(self.pgd_lr > 0 and self.popup_lr > 0, "lr", "learning rates must be > 0")
        _require(self.pgd_epochs >= 1 and self.popup_epochs >= 1, "epochs", "must be >= 1")
        _require(self.num_seeds >= 1, "num_seeds", "seed list is empty")
        _require(self.synthetic_classes >= 2, "synthetic_classes", "must be >= 2")


CONFIGS = {
    "subsetsum": SubsetsumConfig,
    "theory": TheoryConfig,
    "construct": ConstructConfig,
    "train": TrainRunConfig,
}


def _require(cond, path: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{path}: {message}")


def _coerce(value: Any, hint, path: str):
    text = str(hint)
    optional = "None" in text
    if value is None:
        if optional:
            return None
        raise ConfigError(f"{path}: null not allowed")
    if text.startswith("list[") or "list[" in text:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {type(value).__name__}")
        inner = float if "float" in text else int if "int" in text else str
        return [_coerce(v, inner, f"{path}[{i}]") for i, v in enumerate(value)]
    if hint is bool or text == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false")
        return value
    if hint is int or text.startswith("int"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if hint is float or text.startswith("float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if hint is str or text.startswith("str"):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def build_config(command: str, raw: dict | None):
    cls = CONFIGS[command]
    raw = dict(raw or {})
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"{command}: unknown field(s) {', '.join(unknown)}")
    kwargs = {k: _coerce(v, hints[k], f"{command}.{k}") for k, v in raw.items()}
    cfg = cls(**kwargs)
    if cfg.schema_version != SCHEMA_VERSION:
        raise ConfigError(f"{command}.schema_version: expected {SCHEMA_VERSION}, got {cfg.schema_version}")
    try:
        cfg.validate()
    except ConfigError as exc:
        raise ConfigError(f"{command}.{exc}") from None
    return cfg


def load_config(command: str, path: str | None, seed: int | None):
    raw = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path}: top level must be an object")
    if seed is not None:
        raw["seed"] = seed
    return build_config(command, raw)


# output ---------------------------------------------------------------------


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        return format(v, ".9g")
    if isinstance(value, (list, tuple)):
        return ";".join(fmt(v) for v in value)
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(row[h]) for h in header])


def write_sidecar(out: Path, command: str, cfg) -> None:
    text = json.dumps(dataclasses.asdict(cfg), indent=2, sort_keys=True)
    (out / f"{command}.config.json").write_text(text + "\n")


@contextmanager
def _executor(workers: int):
    if workers <= 1:
        yield None
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            yield ex


# subcommands ----------------------------------------------------------------


def run_subsetsum(cfg: SubsetsumConfig, out: Path, workers: int = 1) -> tuple[list[dict], list[str]]:
    rows, problems = [], []
    with _executor(workers) as ex:
        for eta in cfg.eta_grid:
            series = []
            for ratio in cfg.ratio_grid:
                res = subsetsum.min_n_search(
                    eta, ratio * eta, cfg.targets, cfg.trials, cfg.successes_required,
                    cfg.seed, cfg.n_max, tuple(cfg.candidate_range), executor=ex,
                )
                log.info("eta=%g ratio=%g min_n=%d", eta, ratio, res.min_n)
                series.append({
                    "eta": eta, "eps": ratio * eta, "eps_over_eta": ratio, "seed": cfg.seed,
                    "min_n": res.min_n, "found": res.found,
                })
            ordered = sorted(series, key=lambda r: r["eps_over_eta"])
            mono = all(b["min_n"] <= a["min_n"] for a, b in zip(ordered, ordered[1:]))
            if not mono:
                problems.append(f"min_n not non-increasing in eps/eta for eta={eta}")
            for r in series:
                r["monotone"] = mono
            rows += series
    write_csv(out / "subsetsum.csv", HEADERS["subsetsum"], rows)
    return rows, problems


def _trajectory_job(args):
    eta, eps, n, seed, kmax = args
    rec = theory.simulate_trajectory(eta, eps, n, seed)
    return rec, theory.check_trajectory(rec, domination_k_max=kmax)


def run_theory(cfg: TheoryConfig, out: Path, workers: int = 1) -> tuple[dict, list[str]]:
    seeds = list(range(cfg.seed, cfg.seed + cfg.num_seeds))
    traj_rows, summary_rows, growth_rows, problems = [], [], [], []
    with _executor(workers) as ex:
        for eps in cfg.eps_grid:
            jobs = [(cfg.eta, eps, cfg.n, s, cfg.domination_k_max) for s in seeds]
            results = list(ex.map(_trajectory_job, jobs)) if ex else [_trajectory_job(j) for j in jobs]
            total = theory.Violations()
            for rec, viol in results:
                total = total + viol
                for k in range(len(rec.p_tilde)):
                    traj_rows.append({
                        "seed": rec.seed, "eps": eps, "k": k, "p_tilde": rec.p_tilde[k],
                        "p_exact": rec.p_exact[k], "z_increment": rec.z_increment[k], "psi": rec.psi[k],
                    })
            summary_rows.append({"eps": eps, "seeds": len(seeds), **dataclasses.asdict(total), "total": total.total})
            if total.total:
                problems.append(f"{total.total} trajectory invariant violations at eps={eps}")
    for eps in cfg.growth_eps_grid:
        for p in cfg.growth_p_grid:
            state = theory.surrogate_init(p / 2, eps)
            chk = theory.expected_growth_check(state, cfg.growth_draws, seed=cfg.seed)
            growth_rows.append({
                "p_tilde": state.p_tilde, "eps": eps, "empirical_mean": chk.empirical_mean,
                "predicted": chk.predicted, "std_err": chk.std_err, "z_score": chk.z_score,
            })
    outside = sum(r["z_score"] > 3 for r in growth_rows)
    if outside > len(growth_rows) // 12:
        problems.append(f"{outside} of {len(growth_rows)} growth cells outside 3 standard errors")
    write_csv(out / "theory_trajectories.csv", HEADERS["theory_trajectories"], traj_rows)
    write_csv(out / "theory_growth.csv", HEADERS["theory_growth"], growth_rows)
    write_csv(out / "theory_summary.csv", HEADERS["theory_summary"], summary_rows)
    return {"summary": summary_rows, "growth": growth_rows}, problems


def run_construct(cfg: ConstructConfig, out: Path, workers: int = 1) -> tuple[list[dict], list[str]]:
    del workers  # per-entry solves are fast enough to run inline
    target = construct.random_target(cfg.dims, seed=cfg.seed)
    checks = construct.validate_target(target)
    if not all(c.ok for c in checks):
        return [], [f"generated target failed validation: {checks}"]
    if cfg.save_nets:
        construct.save_json(target, out / "target.json")
    rows, problems = [], []
    for eta in cfg.eta_grid:
        widths_seen = []
        for ratio in sorted(cfg.eps_over_eta):
            eps = ratio * eta
            cand = construct.init_candidate(cfg.dims, eta, eps, cfg.c1, cfg.c2, seed=cfg.seed + 1, sub_block=cfg.sub_block)
            pruned = construct.approximate_network(target, cand, eps, eta)
            sup_err, mean_err = construct.measure_sup_error(target, pruned, cfg.samples, seed=cfg.seed + 2)
            failures = sum(r.failures for r in pruned.layer_reports)
            success = failures == 0
            if not pruned.is_feasible(eps):
                problems.append(f"infeasible perturbation at eta={eta}, eps={eps}")
            if success and not sup_err < eta:
                problems.append(f"sup_err {sup_err} >= eta {eta} at eps={eps}")
            if widths_seen and any(w > v for w, v in zip(cand.hidden_widths, widths_seen[-1])):
                problems.append(f"widths increased with eps at eta={eta}, eps={eps}")
            widths_seen.append(cand.hidden_widths)
            log.info("eta=%g eps=%g widths=%s sup_err=%.3g", eta, eps, cand.hidden_widths, sup_err)
            rows.append({
                "eta": eta, "eps": eps, "seed": cfg.seed,
                "hidden_units": sum(cand.hidden_widths), "widths": cand.hidden_widths,
                "raw_widths": cand.raw_widths,
                "layer_max_error": [r.max_entry_error for r in pruned.layer_reports],
                "failures": failures, "sup_err": sup_err, "mean_err": mean_err, "success": success,
            })
            if cfg.save_nets:
                construct.save_json(pruned, out / f"pruned_eta{fmt(eta)}_eps{fmt(eps)}.json")
    write_csv(out / "construct.csv", HEADERS["construct"], rows)
    return rows, problems


def load_data(cfg: TrainRunConfig) -> Split:
    if cfg.dataset == "mnist":
        try:
            return mnist_split(cfg.data_dir, cfg.mnist_train_size, cfg.mnist_test_size)
        except FileNotFoundError as exc:
            raise ConfigError(f"train.data_dir: {exc}") from None
    raw = synthetic_dataset(
        cfg.synthetic_classes, cfg.synthetic_dim, cfg.synthetic_per_class,
        seed=cfg.seed, separation=cfg.synthetic_separation,
    )
    return train_test_split(raw, cfg.test_fraction, seed=cfg.seed)


def run_train(cfg: TrainRunConfig, out: Path, workers: int = 1):
    data = load_data(cfg)
    train_cfg = pgd.TrainConfig(lr=cfg.pgd_lr, epochs=cfg.pgd_epochs, batch_size=cfg.pgd_batch_size)
    prune_cfg = pgd.PruneConfig(
        sparsity_levels=tuple(cfg.sparsity_grid), lr=cfg.popup_lr, epochs=cfg.popup_epochs,
        batch_size=cfg.popup_batch_size, momentum=cfg.popup_momentum,
        cosine_annealing=cfg.cosine_annealing, per_layer=cfg.per_layer_topk,
    )
    results = []
    with _executor(workers) as ex:
        for seed in range(cfg.seed, cfg.seed + cfg.num_seeds):
            res = pgd.sweep(cfg.eps_grid, cfg.sparsity_grid, train_cfg, prune_cfg, data,
                            hidden=cfg.hidden, seed=seed, executor=ex)
            log.info("seed %d best %s", seed, res.best_accuracy_per_eps)
            results.append(res)
    rows = [
        {"eps": r.eps, "sparsity": r.sparsity, "train_acc": r.train_accuracy,
         "test_acc": r.test_accuracy, "epochs": r.epochs, "seed": r.seed}
        for res in results for r in res.rows
    ]
    summary = pgd.summarize(results)
    summary_rows = [
        {"eps": e, "seeds": cfg.num_seeds, "median_best_test_acc": a, "median_optimal_sparsity": s}
        for e, a, s in zip(summary.eps, summary.median_best_accuracy, summary.median_optimal_sparsity)
    ]
    problems = []
    if any(r.failed for res in results for r in res.rows):
        problems.append("some sweep cells failed with a non-finite loss")
    write_csv(out / "train.csv", HEADERS["train"], rows)
    write_csv(out / "train_summary.csv", HEADERS["train_summary"], summary_rows)
    return summary, problems


RUNNERS = {
    "subsetsum": run_subsetsum,
    "theory": run_theory,
    "construct": run_construct,
    "train": run_train,
}


# entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="perturbed-lth", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "subsetsum": "minimum candidate count versus eps/eta",
        "theory": "coverage-growth trajectories and expectation checks",
        "construct": "prune and perturb a random network to match a target",
        "train": "projected training plus edge-popup sparsity sweep",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", metavar="PATH", help="JSON config; omitted fields take defaults")
        sp.add_argument("--seed", type=int, metavar="N", help="override the config seed")
        sp.add_argument("--out", metavar="DIR", default="results", help="output directory (default: results)")
        sp.add_argument("--workers", type=int, metavar="N", default=os.cpu_count() or 1,
                        help="worker processes (default: all cores)")
        sp.add_argument("--assert-invariants", action="store_true",
                        help="exit with status 3 if a checked invariant fails")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.workers < 1:
            raise ConfigError("--workers: must be >= 1")
        cfg = load_config(args.command, args.config, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_sidecar(out, args.command, cfg)
        _, problems = RUNNERS[args.command](cfg, out, args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for msg in problems:
        log.warning("invariant: %s", msg)
    if problems and args.assert_invariants:
        print(f"invariant violation: {problems[0]}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
