"""Command-line entry point for reproducible experiment runs.

Subcommands: gen-data, train, eval, sweep, verify-theory, residual.
Every command reads one JSON config object, echoes the resolved config into
its output directory, and derives all randomness from a single master seed,
so outputs are byte-stable across reruns. Oracle rollout caches live under
$PCBF_CACHE_DIR (default ./.pcbf_cache).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import analysis, baselines, envs, flow, nn, trainer
from .envs import MrpSpec
from .errors import ConfigError, NumericError, UsageError
from .rng import RngStream

__all__ = ["ExperimentConfig", "main"]


@dataclass
class ExperimentConfig:
    """Resolved experiment configuration; every field is overridable via JSON."""

    env: str = "bernoulli"
    n_states: int = 21
    gamma: float | None = None  # None: use the environment default
    method: str = "pcbf"
    lam: float = 0.0
    dcfm_coef: float = 0.0
    tau: float = 5e-3
    lr: float = 3e-4
    batch_size: int = 256
    total_steps: int = 20_000
    nfe: int = 10
    eval_every: int = 5_000
    loss_window: int = 200
    seed: int = 0
    hidden: tuple[int, ...] = (64, 64)
    dataset_size: int = 100_000
    oracle_rollouts: int = 100_000
    eval_samples: int = 10_000
    lambda_grid: tuple[float, ...] = (0.0, 0.3, 0.6, 0.9)
    dcfm_grid: tuple[float, ...] = (0.0, 0.5, 1.0)
    seeds: tuple[int, ...] = (0, 1, 2)
    t_grid: tuple[float, ...] = (0.25, 0.5, 0.75)
    nfe_grid: tuple[int, ...] = (4, 8, 16, 32)
    residual_samples: int = 10_000
    fast_checks: bool = False
    sweep_workers: int = 2
    out_dir: str = "runs/out"

    def __post_init__(self):
        if self.method not in ("pcbf", "bcfm_only", "vf_combined", "dcfm_unscaled", "dcfm_scaled", "oracle_cfm"):
            raise ConfigError(f"unknown method {self.method!r}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"sweep seeds must be distinct, got {self.seeds}")
        for grid_name in ("lambda_grid", "dcfm_grid", "seeds", "t_grid", "nfe_grid", "hidden"):
            object.__setattr__(self, grid_name, tuple(getattr(self, grid_name)))

    @classmethod
    def from_file(cls, path: str | None, overrides: dict | None = None) -> ExperimentConfig:
        raw: dict = {}
        if path:
            with open(path) as fh:
                raw = json.load(fh)
            if not isinstance(raw, dict):
                raise ConfigError("config file must hold a single JSON object")
        if "lambda" in raw:  # alias: 'lambda' is a Python keyword
            raw["lam"] = raw.pop("lambda")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if overrides:
            raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**raw)

    def spec(self) -> MrpSpec:
        if self.env == "solitaire":
            return MrpSpec.solitaire()
        if self.env == "bernoulli":
            return MrpSpec.bernoulli()
        if self.env == "discrete_mc":
            return MrpSpec.discrete_mc(self.n_states)
        raise ConfigError(f"unknown env {self.env!r}")

    def resolved_gamma(self) -> float:
        return self.spec().gamma_default if self.gamma is None else self.gamma

    def train_config(self, lam: float | None = None, seed: int | None = None) -> trainer.TrainConfig:
        return trainer.TrainConfig(
            gamma=self.resolved_gamma(),
            lam=self.lam if lam is None else lam,
            tau=self.tau,
            lr=self.lr,
            batch_size=self.batch_size,
            total_steps=self.total_steps,
            nfe=self.nfe,
            eval_every=self.eval_every,
            loss_window=self.loss_window,
            seed=self.seed if seed is None else seed,
            hidden=self.hidden,
        )

    def echo(self, out_dir: str) -> None:
        os.makedirs(out_dir, exist_ok=True)
        payload = dataclasses.asdict(self)
        payload["resolved_gamma"] = self.resolved_gamma()
        with open(os.path.join(out_dir, "config.json"), "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _dataset_path(cfg: ExperimentConfig, out_dir: str, explicit: str | None) -> str:
    return explicit or os.path.join(out_dir, "dataset.csv")


def _ground_truth(cfg: ExperimentConfig, cache_dir: str | None = None):
    spec = cfg.spec()
    rng = RngStream(cfg.seed).child("oracle")
    return envs.ground_truth_laws(
        spec, cfg.resolved_gamma(), rng, n_rollouts=cfg.oracle_rollouts, cache_dir=cache_dir
    )


def cmd_gen_data(cfg: ExperimentConfig, out_dir: str, cache_dir: str | None = None) -> int:
    """Write the offline dataset CSV and warm the oracle caches."""
    cfg.echo(out_dir)
    spec = cfg.spec()
    rng = RngStream(cfg.seed).child("dataset")
    dataset = envs.generate_dataset(spec, cfg.dataset_size, rng)
    envs.save_dataset_csv(dataset, os.path.join(out_dir, "dataset.csv"))
    _ground_truth(cfg, cache_dir)
    print(f"wrote {len(dataset)} transitions to {os.path.join(out_dir, 'dataset.csv')}")
    return 0


def _run_method(cfg, method, lam, dcfm_coef, seed, dataset, laws, csv_path, ckpt_dir, cache_dir):
    spec = cfg.spec()
    config = cfg.train_config(lam=lam, seed=seed)
    common = dict(eval_laws=laws, csv_path=csv_path, checkpoint_dir=ckpt_dir, eval_samples=cfg.eval_samples)
    if method == "pcbf":
        return trainer.train(dataset, config, spec.n_states, **common)
    if method == "oracle_cfm":
        oracle_rng = RngStream(cfg.seed).child("oracle-cfm")
        samples = {
            s: envs.mc_return_oracle(
                spec, s, cfg.resolved_gamma(), cfg.oracle_rollouts,
                rng=oracle_rng.child(s), cache_dir=cache_dir,
            ).samples
            for s in spec.nonterminal_states
        }
        return baselines.oracle_cfm_train(samples, config, spec.n_states, **common)
    kind = baselines.BaselineKind(method, dcfm_coef=dcfm_coef)
    return baselines.baseline_train(dataset, config, spec.n_states, kind, **common)


def cmd_train(cfg: ExperimentConfig, out_dir: str, dataset_path: str | None = None,
              cache_dir: str | None = None) -> int:
    """Train the configured method; writes metrics CSV and checkpoints."""
    cfg.echo(out_dir)
    path = _dataset_path(cfg, out_dir, dataset_path)
    if not os.path.exists(path):
        print(f"error: dataset not found at {path}; run gen-data first", file=sys.stderr)
        return 2
    dataset = envs.load_dataset_csv(path)
    laws = _ground_truth(cfg, cache_dir)
    csv_path = os.path.join(out_dir, "metrics.csv")
    ckpt_dir = os.path.join(out_dir, "checkpoints")
    try:
        _, log = _run_method(cfg, cfg.method, cfg.lam, cfg.dcfm_coef, cfg.seed,
                             dataset, laws, csv_path, ckpt_dir, cache_dir)
    except NumericError as err:
        dump = os.path.join(out_dir, "failure.json")
        with open(dump, "w") as fh:
            json.dump({"error": str(err)}, fh, indent=2)
        print(f"error: {err} (diagnostics in {dump})", file=sys.stderr)
        return 1
    final_w1 = {s: vals[-1] for s, vals in log.eval_w1.items()}
    print(f"finished {cfg.method}: final loss {log.losses[-1]:.6f}, final W1 {final_w1}")
    return 0


def cmd_eval(cfg: ExperimentConfig, out_dir: str, checkpoint: str,
             cache_dir: str | None = None) -> int:
    """Per-state W1 plus CDF dumps (x, F_learned, F_truth) for plotting."""
    cfg.echo(out_dir)
    if not os.path.exists(checkpoint):
        print(f"error: checkpoint not found at {checkpoint}", file=sys.stderr)
        return 2
    params, _ = nn.load_params(checkpoint)
    spec = cfg.spec()
    laws = _ground_truth(cfg, cache_dir)
    rng = RngStream(cfg.seed).child("eval-cmd")
    w1 = {}
    for s in spec.nonterminal_states:
        ctx = np.zeros(spec.n_states)
        ctx[s] = 1.0
        samples = np.sort(flow.sample_returns(params, ctx, cfg.eval_samples, rng.child(s), cfg.nfe))
        learned = envs.Empirical(samples)
        truth = laws[s]
        w1[s] = analysis.wasserstein1(learned, truth)
        lo = min(samples[0], float(truth.breakpoints()[0]))
        hi = max(samples[-1], float(truth.breakpoints()[-1]))
        grid = np.linspace(lo, hi, 512)
        cdf_path = os.path.join(out_dir, f"cdf_s{s}.csv")
        with open(cdf_path, "w") as fh:
            fh.write("x,F_learned,F_truth\n")
            fl = learned.cdf(grid)
            ft = truth.cdf(grid)
            for x, a, b in zip(grid, fl, ft):
                fh.write(f"{float(x)!r},{float(a)!r},{float(b)!r}\n")
    with open(os.path.join(out_dir, "w1.json"), "w") as fh:
        json.dump({str(s): v for s, v in sorted(w1.items())}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"per-state W1: {w1}")
    return 0


def _sweep_cell(args):
    """One (method, coefficient, seed) sweep cell; runs in a worker process."""
    payload, method, coef, seed, dataset_path, cache_dir = args
    cfg = ExperimentConfig(**payload)
    try:
        dataset = envs.load_dataset_csv(dataset_path)
        laws = _ground_truth(cfg, cache_dir)
        lam = coef if method == "pcbf" else 0.0
        dcfm = coef if method != "pcbf" else 0.0
        _, log = _run_method(cfg, method, lam, dcfm, seed, dataset, laws, None, None, cache_dir)
        rows = [(method, coef, cfg.env, s, vals[-1], seed) for s, vals in sorted(log.eval_w1.items())]
        return rows, None
    except Exception as err:  # record the failure, let the sweep continue
        return [(method, coef, cfg.env, -1, float("nan"), seed)], f"{method}, coef={coef}, seed={seed}: {err}"


def cmd_sweep(cfg: ExperimentConfig, out_dir: str, dataset_path: str | None = None,
              cache_dir: str | None = None) -> int:
    """Train across the lambda grid and the dcfm grid x seeds; emit one CSV.

    Cells run in a small process pool; each cell is fully seeded and loads
    its own inputs, so results and row order match a serial sweep exactly.
    """
    cfg.echo(out_dir)
    if not cfg.lambda_grid and not cfg.dcfm_grid:
        raise UsageError("both sweep grids are empty")
    path = _dataset_path(cfg, out_dir, dataset_path)
    if not os.path.exists(path):
        print(f"error: dataset not found at {path}; run gen-data first", file=sys.stderr)
        return 2
    _ground_truth(cfg, cache_dir)  # warm the oracle cache before forking
    payload = dataclasses.asdict(cfg)
    jobs = [("pcbf", lam) for lam in cfg.lambda_grid] + [
        ("vf_combined", coef) for coef in cfg.dcfm_grid
    ]
    args = [
        (payload, method, coef, seed, path, cache_dir)
        for seed in cfg.seeds
        for method, coef in jobs
    ]
    rows = []
    workers = max(1, min(cfg.sweep_workers, len(args)))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for cell_rows, failure in pool.map(_sweep_cell, args):
            rows.extend(cell_rows)
            if failure:
                print(f"sweep cell failed ({failure})", file=sys.stderr)
    sweep_path = os.path.join(out_dir, "sweep.csv")
    with open(sweep_path, "w") as fh:
        fh.write("method,coefficient,env,state,W1,seed\n")
        for method, coef, env_name, s, w1, seed in rows:
            fh.write(f"{method},{float(coef)!r},{env_name},{s},{float(w1)!r},{seed}\n")
    print(f"wrote {len(rows)} sweep rows to {sweep_path}")
    return 0


def cmd_verify_theory(cfg: ExperimentConfig, out_dir: str) -> int:
    """Run every closed-form verifier; exit 0 iff all pass."""
    cfg.echo(out_dir)
    reports = analysis.run_theory_checks(cfg.seed, fast=cfg.fast_checks)
    payload = analysis.reports_to_json(reports)
    with open(os.path.join(out_dir, "theory_report.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for rep in reports:
        print(f"{'PASS' if rep.passed else 'FAIL'}  {rep.name}")
    return 0 if payload["all_passed"] else 1


def cmd_residual(cfg: ExperimentConfig, out_dir: str, checkpoint: str,
                 dataset_path: str | None = None) -> int:
    """Corrected pathwise residual grids for shared and independent coupling."""
    cfg.echo(out_dir)
    if not os.path.exists(checkpoint):
        print(f"error: checkpoint not found at {checkpoint}", file=sys.stderr)
        return 2
    params, _ = nn.load_params(checkpoint)
    path = _dataset_path(cfg, out_dir, dataset_path)
    if not os.path.exists(path):
        print(f"error: dataset not found at {path}", file=sys.stderr)
        return 2
    transitions = envs.load_dataset_csv(path)
    gamma = cfg.resolved_gamma()
    for coupling in ("shared", "independent"):
        rng = RngStream(cfg.seed).child("residual")
        grid = analysis.corrected_residual_sweep(
            params, params, transitions, cfg.t_grid, cfg.nfe_grid, coupling,
            cfg.residual_samples, rng, gamma,
        )
        grid_path = os.path.join(out_dir, f"residual_{coupling}.csv")
        with open(grid_path, "w") as fh:
            fh.write("t,nfe,stop_time,mean_abs_residual,stderr,n_samples\n")
            for i, t in enumerate(grid.t_grid):
                for j, nfe_val in enumerate(grid.nfe_grid):
                    fh.write(
                        f"{float(t)!r},{nfe_val},{float(grid.stop_times[i, j])!r},"
                        f"{float(grid.values[i, j])!r},{float(grid.stderrs[i, j])!r},{grid.n_samples}\n"
                    )
        print(f"wrote {grid_path}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcbf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gen-data", "train", "eval", "sweep", "verify-theory", "residual"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
        if name in ("train", "sweep", "residual"):
            p.add_argument("--dataset", default=None, help="dataset CSV path")
        if name in ("eval", "residual"):
            p.add_argument("--checkpoint", required=True, help="checkpoint JSON path")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.from_file(args.config, {"seed": args.seed, "out_dir": args.out})
    except (ConfigError, OSError, json.JSONDecodeError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    out_dir = cfg.out_dir
    try:
        if args.command == "gen-data":
            return cmd_gen_data(cfg, out_dir)
        if args.command == "train":
            return cmd_train(cfg, out_dir, args.dataset)
        if args.command == "eval":
            return cmd_eval(cfg, out_dir, args.checkpoint)
        if args.command == "sweep":
            return cmd_sweep(cfg, out_dir, args.dataset)
        if args.command == "verify-theory":
            return cmd_verify_theory(cfg, out_dir)
        if args.command == "residual":
            return cmd_residual(cfg, out_dir, args.checkpoint, args.dataset)
    except (ConfigError, UsageError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"io error: {err}", file=sys.stderr)
        return 2
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
