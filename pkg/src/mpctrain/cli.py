"""Command-line entry point: ``mpctrain <command> --config cfg.json --out DIR``.

Every command writes its CSV artifacts plus ``manifest.json`` (tool version,
RNG identifier, resolved config, per-file SHA-256) into ``--out``. Failures
leave an ``error.json`` record and a nonzero exit status:

* 2: usage or configuration error
* 3: training diverged
* 1: any other error
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config
from .exceptions import ConfigError, DivergenceError, InvalidInputError
from .gradients import BlockGrouping, gradient_angle, horizon_gradient, rescaled_deviation
from .io import atomic_write_text, load_dataset, save_dataset, sha256_file, write_csv, write_json
from .lintheory import lemma_bounds_check, scaling_experiment, theorem_chain
from .memory import MODES, MemoryModel, loco_memory, memory_estimate, static_leading_term
from .network import (
    dumps_network, forward, linear_residual_net, loads_network, mlp_residual_stack, residual_mlp,
)
from .numerics import RNG_ALGORITHM, child_seeds, make_rng, polyfit, polyeval
from .selection import (
    CostFn, Objective, brute_force_horizon, build_profile, cost_value, default_subset, fit_profile,
    relative_performance, select_horizon,
)
from .trainer import (
    Dataset, TrainConfig, gen_linear_dataset, gen_trig_dataset, loss_rate, train_sgd, whiten,
)

COMMANDS = ("gen-data", "train", "sweep-gradients", "profile-memory", "select-horizon", "evaluate", "verify-theory")

PROFILE_HEADER = ["h", "measured_cos", "fitted_cos", "measured_mem", "fitted_mem", "r_hat", "cost",
                  "objective_value", "feasible"]


class Run:
    """Shared state of one command invocation."""

    def __init__(self, command: str, cfg: ExperimentConfig, out: Path, args):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.args = args
        self.files: list[str] = []
        self.results: dict = {}
        self.data_seed, self.init_seed, self.train_seed = child_seeds(cfg.seed, 3)

    def csv(self, name, header, rows, footer=None):
        write_csv(self.out / name, header, rows, footer)
        self.files.append(name)

    def text(self, name, text):
        atomic_write_text(self.out / name, text)
        self.files.append(name)

    # -- shared builders ----------------------------------------------------

    def network(self):
        opts = self.cfg.network
        if opts.path:
            return loads_network(Path(opts.path).read_text(encoding="utf-8"))
        rng = make_rng(self.init_seed)
        if opts.architecture == "residual_mlp":
            return residual_mlp(opts.blocks, opts.width, rng, opts.residual_scale)
        if opts.architecture == "linear_residual":
            return linear_residual_net(opts.blocks, opts.width, rng, opts.residual_scale)
        if opts.architecture == "residual_stack":
            return mlp_residual_stack(opts.blocks, opts.width, rng)
        raise ConfigError(f"network.architecture: unknown value {opts.architecture!r}")

    def dataset(self) -> Dataset:
        opts = self.cfg.dataset
        width = self.cfg.network.width
        if opts.path:
            data = load_dataset(opts.path)
        elif opts.kind == "trig":
            data = gen_trig_dataset(opts.samples, self.data_seed, width=width, noise_std=opts.noise_std)
        elif opts.kind == "linear":
            data = gen_linear_dataset(width, opts.samples, self.data_seed)
        else:
            raise ConfigError(f"dataset.kind: unknown value {opts.kind!r}")
        if opts.whiten:
            data = whiten(data)
        return data

    def train_config(self, T: int, algorithm: str | None = None, horizon=None, stages=None) -> TrainConfig:
        opts = self.cfg.train
        algorithm = algorithm or opts.algorithm
        return TrainConfig(
            algorithm=algorithm,
            horizon=(opts.horizon if horizon is None else horizon) if algorithm == "mpc" else None,
            stages=(opts.stages if stages is None else stages) if algorithm == "loco" else None,
            learning_rate=opts.learning_rate,
            batch_size=opts.batch_size,
            epochs=opts.epochs,
            seed=self.train_seed,
            lr_decay=opts.lr_decay,
        )

    def cost_fn(self, max_memory: float) -> CostFn:
        opts = self.cfg.selection
        node = opts.node_memory
        if node is None:
            frac = opts.node_memory_fraction
            if frac is None:
                frac = 0.3 if opts.cost == "ladder" else 1.0
            node = frac * max_memory
        return CostFn(opts.cost, opts.unit_cost, node)

    def objective(self) -> Objective:
        opts = self.cfg.selection
        if opts.objective == "weighted":
            return Objective.weighted(opts.lam)
        if opts.objective == "accuracy_constraint":
            return Objective.accuracy_constraint(opts.epsilon)
        raise ConfigError(f"selection.objective: unknown value {opts.objective!r}")


# -- commands ---------------------------------------------------------------

def cmd_gen_data(run: Run):
    data = run.dataset()
    save_dataset(run.out / "dataset.csv", data)
    run.files.append("dataset.csv")
    run.results.update(dataset_digest=data.digest(), samples=len(data),
                       meta={k: v for k, v in data.meta.items() if k not in ("teacher", "whitening")})


def _record_rows(record):
    return [(k, loss, lr) for k, (loss, lr) in enumerate(zip(record.losses, record.learning_rates))]


def cmd_train(run: Run):
    net = run.network()
    data = run.dataset()
    config = run.train_config(net.T)
    record = train_sgd(net, data, config)
    run.csv("train.csv", ["epoch", "loss", "lr"], _record_rows(record))
    run.text("network.json", dumps_network(record.network))
    run.results.update(algorithm=config.label(net.T), final_loss=record.losses[-1], status=record.status,
                       dataset_digest=data.digest())
    if record.status == "diverged":
        raise DivergenceError("training diverged", record)


def _sweep_rows(net, X, Y, horizons, epoch):
    acts = forward(net, X)
    gT = horizon_gradient(net, X, Y, net.T, acts=acts)
    norm_T = float(np.linalg.norm(gT.flat()))
    rows = []
    for h in horizons:
        gh = horizon_gradient(net, X, Y, h, acts=acts)
        rows.append((epoch, h, gradient_angle(gh, gT), rescaled_deviation(gh, gT),
                     float(np.linalg.norm(gh.flat())), norm_T))
    return rows


def cmd_sweep_gradients(run: Run):
    net = run.network()
    data = run.dataset()
    opts = run.cfg.sweep
    horizons = sorted(set(opts.horizons or range(1, net.T + 1)))
    if any(not 1 <= h <= net.T for h in horizons):
        raise ConfigError(f"sweep.horizons must lie in [1, {net.T}]")
    checkpoints = sorted(set(opts.checkpoints))
    if any(c < 0 for c in checkpoints):
        raise ConfigError("sweep.checkpoints must be non-negative")
    X, Y = data.inputs[:opts.eval_samples], data.labels[:opts.eval_samples]
    rows = []
    wanted = set(checkpoints)

    def snapshot(epoch, current):
        if epoch in wanted:
            rows.extend(_sweep_rows(current, X, Y, horizons, epoch))

    cfg = run.train_config(net.T)
    cfg.epochs = max(checkpoints)
    record = train_sgd(net, data, cfg, on_epoch=snapshot)
    if record.status == "diverged":
        raise DivergenceError("training diverged before the last checkpoint", record)
    run.csv("sweep.csv", ["epoch", "h", "cos_theta", "sin_deviation", "grad_norm_h", "grad_norm_T"], rows)
    run.results.update(horizons=horizons, checkpoints=checkpoints)


def cmd_profile_memory(run: Run):
    net = run.network()
    opts = run.cfg.memory
    mode = run.args.mode or opts.mode
    modes = [mode] if mode else list(MODES)
    horizons = sorted(set(opts.horizons or range(1, net.T + 1)))
    rows = []
    summary = {}
    for m in modes:
        model = MemoryModel.for_network(net, m, opts.fixed_overhead)
        mem = [memory_estimate(model, h, net.T) for h in horizons]
        entry = {}
        if len(horizons) >= 2:
            fit = polyfit(horizons, mem, 1)
            fitted = [polyeval(fit, h) for h in horizons]
            residual = max(abs(a - b) / max(abs(a), 1.0) for a, b in zip(mem, fitted))
            entry = {"slope": fit.coefficients[1], "intercept": fit.coefficients[0], "max_rel_residual": residual}
        else:
            fitted = [None] * len(horizons)
        summary[m] = entry
        for h, v, f in zip(horizons, mem, fitted):
            rows.append((m, h, v, f, static_leading_term(h, net.T)))
        if entry:
            print(f"{m}: slope={entry['slope']:.6g} intercept={entry['intercept']:.6g} "
                  f"order-1 residual={entry['max_rel_residual']:.3e}")
    run.csv("memory.csv", ["mode", "h", "memory", "fitted_memory", "static_leading_term"], rows)
    run.results.update(fits=summary)


def _planted_profile(opts):
    T = opts.T
    H = default_subset(T)
    cos = {h: 1.0 - opts.k * (1.0 - h / T) ** 3 for h in H}
    mem = {h: opts.a * h + opts.b for h in H}
    return fit_profile(T, cos, mem)


def _selection_profile(run: Run, net=None):
    opts = run.cfg.selection
    if opts.planted is not None:
        return _planted_profile(opts.planted)
    net = run.network() if net is None else net
    data = run.dataset()
    H = opts.horizons or default_subset(net.T)
    mem_model = MemoryModel.for_network(net, opts.memory_mode)
    return build_profile(net, (data.inputs, data.labels), H, opts.batches, mem_model)


def _max_memory(profile):
    return max(profile.fitted_memory(h) for h in range(1, profile.T + 1))


def cmd_select_horizon(run: Run):
    profile = _selection_profile(run)
    objective = run.objective()
    costfn = run.cost_fn(_max_memory(profile))
    result = select_horizon(profile, objective, costfn)
    horizon = result.horizon
    route = "scan"
    if run.args.brute_force:
        horizon = brute_force_horizon(profile, objective, costfn)
        route = "brute-force"
    run.csv("profile.csv", PROFILE_HEADER, result.table)
    report = {
        "horizon": horizon,
        "feasible": horizon is not None,
        "route": route,
        "T": profile.T,
        "objective": asdict(objective),
        "cost": asdict(costfn),
        "measured_horizons": profile.H,
        "cos_fit": list(profile.cos_fit.coefficients),
        "mem_fit": list(profile.mem_fit.coefficients),
        "skipped_batches": profile.skipped_batches,
    }
    write_json(run.out / "selection.json", report)
    run.files.append("selection.json")
    run.results.update(horizon=horizon, feasible=horizon is not None, route=route)
    print(f"h* = {horizon if horizon is not None else 'infeasible'} ({route})")


def _parse_algorithm(token: str, T: int):
    kind, _, arg = token.partition(":")
    if kind == "selected":
        return "selected", None
    if kind == "loco":
        return "loco", int(arg or 5)
    if kind == "mpc":
        if arg == "T":
            return "mpc", T
        if arg == "half":
            return "mpc", math.ceil(T / 2)
        return "mpc", int(arg)
    raise ConfigError(f"evaluate.algorithms: cannot parse {token!r}")


def cmd_evaluate(run: Run):
    net = run.network()
    data = run.dataset()
    T = net.T
    opts = run.cfg.evaluate
    sel = run.cfg.selection
    mem_model = MemoryModel.for_network(net, sel.memory_mode)
    objective = run.objective()
    costfn = run.cost_fn(memory_estimate(mem_model, T, T))
    plan = []
    for token in opts.algorithms:
        kind, arg = _parse_algorithm(token, T)
        if kind == "selected":
            profile = build_profile(net, (data.inputs, data.labels), sel.horizons or default_subset(T),
                                    sel.batches, mem_model)
            choice = select_horizon(profile, objective, costfn)
            plan.append((token, "mpc", choice.horizon))
        else:
            plan.append((token, kind, arg))
    if not any(kind == "mpc" and arg == T for _, kind, arg in plan):
        plan.append((f"mpc:{T}", "mpc", T))
    records = {}
    for token, kind, arg in plan:
        if arg is None:
            records[token] = None
            continue
        cfg = run.train_config(T, kind, horizon=arg if kind == "mpc" else None, stages=arg if kind == "loco" else None)
        record = train_sgd(net, data, cfg)
        records[token] = record
        run.csv(f"runs/{token.replace(':', '_')}.csv", ["epoch", "loss", "lr"], _record_rows(record))
    reference = records[next(t for t, k, a in plan if k == "mpc" and a == T)]
    if reference.status == "diverged":
        raise DivergenceError("reference (full horizon) run diverged", reference)
    rows = []
    values = {}
    for token, kind, arg in plan:
        record = records[token]
        if record is None or record.status == "diverged":
            rows.append({"algorithm": token, "horizon": arg, "feasible": False})
            values[token] = None
            continue
        r = loss_rate(record, reference, opts.tau)
        if kind == "loco":
            memory = loco_memory(mem_model, BlockGrouping.even(T, arg).boundaries)
        else:
            memory = memory_estimate(mem_model, arg, T)
        cost = cost_value(costfn, memory)
        if objective.kind == "weighted":
            value, feasible = -r + objective.lam * cost, True
        else:
            feasible = r >= 1.0 - objective.epsilon
            value = cost if feasible else None
        values[token] = value
        rows.append({"algorithm": token, "horizon": arg if kind == "mpc" else None, "final_loss": record.losses[-1],
                     "r": r, "memory": memory, "cost": cost, "objective_value": value, "feasible": feasible})
    rel = relative_performance(values)
    for row in rows:
        row["relative_performance"] = rel[row["algorithm"]]
    header = ["algorithm", "horizon", "final_loss", "r", "memory", "cost", "objective_value", "feasible",
              "relative_performance"]
    run.csv("evaluate.csv", header, rows)
    best = min(rel, key=rel.get)
    run.results.update(best=best, relative_performance=rel)
    print(f"best algorithm: {best}")


def cmd_verify_theory(run: Run):
    opts = run.cfg.theory
    seeds = [run.cfg.seed + s for s in opts.seeds]
    report = scaling_experiment(opts.n, opts.T, opts.c, seeds, opts.alphas, opts.ensemble)
    lo, hi = opts.slope_window
    slope_ok = lo <= report.slope <= hi
    run.csv("scaling.csv", ["alpha", "mean_one_minus_cos2", "stderr"],
            zip(report.alphas, report.one_minus_cos2, report.stderr),
            footer=[f"slope={report.slope:.17g}"])
    rows = []
    total = 0
    for seed in child_seeds(run.cfg.seed, opts.lemma_chains):
        rng = make_rng(seed)
        chain = theorem_chain(opts.n, opts.lemma_T, opts.c, rng, ensemble=opts.ensemble)
        check = lemma_bounds_check(chain, opts.lemma_samples, rng)
        rows.append((seed, check.checked, len(check.violations)))
        total += len(check.violations)
    run.csv("lemma_bounds.csv", ["chain_seed", "samples", "violations"], rows)
    run.results.update(slope=report.slope, slope_window=[lo, hi], slope_pass=slope_ok,
                       lemma_violations=total, lemma_pass=total == 0)
    print(f"slope = {report.slope:.4f}  window [{lo}, {hi}]: {'PASS' if slope_ok else 'FAIL'}")
    print(f"norm bound violations = {total}: {'PASS' if total == 0 else 'FAIL'}")


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "sweep-gradients": cmd_sweep_gradients,
    "profile-memory": cmd_profile_memory,
    "select-horizon": cmd_select_horizon,
    "evaluate": cmd_evaluate,
    "verify-theory": cmd_verify_theory,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mpctrain", description="Truncated-horizon training experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="experiment config (JSON)")
        p.add_argument("--out", type=Path, default=Path("out"), help="artifact directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        if name == "select-horizon":
            p.add_argument("--brute-force", action="store_true", help="answer with the reference enumeration")
        if name == "profile-memory":
            p.add_argument("--mode", choices=MODES, help="restrict to one memory mode")
    return parser


def _manifest(run: Run, status: str):
    return {
        "tool": "mpctrain",
        "version": __version__,
        "rng": RNG_ALGORITHM,
        "command": run.command,
        "status": status,
        "config": run.cfg.to_dict(),
        "seeds": {"data": run.data_seed, "init": run.init_seed, "train": run.train_seed},
        "files": {name: sha256_file(run.out / name) for name in run.files},
        "results": run.results,
    }


def _error(out: Path, status: str, exc: BaseException, code: int) -> int:
    try:
        write_json(out / "error.json", {"status": status, "type": type(exc).__name__, "message": str(exc)})
    except OSError:
        pass
    print(f"error: {exc}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out: Path = args.out
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if cfg.command is not None and cfg.command != args.command:
            raise ConfigError(f"config is for {cfg.command!r}, not {args.command!r}")
        if args.seed is not None:
            cfg.seed = args.seed
        if not 0 <= cfg.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        cfg.command = args.command
    except (ConfigError, InvalidInputError) as exc:
        return _error(out, "usage-error", exc, 2)
    out.mkdir(parents=True, exist_ok=True)
    run = Run(args.command, cfg, out, args)
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            HANDLERS[args.command](run)
    except (ConfigError, InvalidInputError) as exc:
        return _error(out, "usage-error", exc, 2)
    except DivergenceError as exc:
        write_json(out / "manifest.json", _manifest(run, "diverged"))
        return _error(out, "diverged", exc, 3)
    except Exception as exc:  # noqa: BLE001 - every failure must leave a record
        return _error(out, "error", exc, 1)
    write_json(out / "manifest.json", _manifest(run, "ok"))
    return 0


if __name__ == "__main__":
    sys.exit(main())
