"""The ``szo`` command line.

Exit codes: 0 success, 1 a theory check failed, 2 bad flags or configuration,
3 unreadable or malformed data, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import math
import sys
from collections.abc import Callable, Sequence
from pathlib import Path

from . import __version__
from .data_io import (
    load_config,
    parse_conll,
    parse_doc_records,
    parse_nbest_records,
    read_checkpoint,
    read_registry,
    write_checkpoint,
    write_registry,
    write_runlog,
)
from .errors import ConfigError, DataError, NumericalError
from .estimators import UpdateRule
from .harness import (
    TASKS,
    TaskConfig,
    TaskSetup,
    aggregate,
    build_task,
    chunking_metric,
    multiclass_metric,
    rerank_metric,
    run_seeds,
    synth_chunking,
    synth_docs,
    synth_nbest,
    synthetic_metric,
    write_summary,
)
from .objectives import ZOO, ObjectiveSpec, make_synthetic
from .optimizer import (
    CHECK_STREAM,
    DevMetric,
    PerturbationMode,
    RunConfig,
    RunResult,
    run,
)
from .perturbation import RngStream
from .sparse_linalg import SparseVector
from .structpred import DEFAULT_K, FeatureIndex
from .theory_check import (
    BoundReport,
    complexity_sweep,
    estimator_bias_check,
    gap_check,
    moment_bound_check,
    second_moment_check,
    theorem1_check,
)

__all__ = ["main", "build_parser"]

log = logging.getLogger(__name__)

Handler = Callable[[argparse.Namespace], int]

_BOOLEAN_KEYS = frozenset({"lenient"})
_META_KEYS = frozenset({"command", "config", "handler", "verbose", "quiet"})


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected comma separated integers, got {text!r}"
        ) from None


def _name_list(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _epsilon(text: str) -> float | None:
    if text == "auto":
        return None
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected a number or 'auto', got {text!r}"
        ) from None


def _add_optimiser_flags(parser: argparse.ArgumentParser, mu: float) -> None:
    parser.add_argument(
        "--rule",
        default="two-point",
        help="two-point, func-cmp, baseline or sfo",
    )
    parser.add_argument("--mode", choices=("all", "sparse"), default="sparse")
    parser.add_argument("--h", type=float, default=0.01, help="constant step size")
    parser.add_argument("--mu", type=float, default=mu, help="smoothing parameter")
    parser.add_argument("--seed", type=int, default=0)


def _add_synthetic_flags(parser: argparse.ArgumentParser, n: int, n_bar: int) -> None:
    parser.add_argument(
        "--synthetic", default="l1_well", help=f"one of {', '.join(ZOO)}"
    )
    parser.add_argument("--n", type=int, default=n, help="dimension")
    parser.add_argument("--n-bar", type=int, default=n_bar, help="active coordinates")
    parser.add_argument(
        "--support",
        type=int,
        default=None,
        help="coordinates the active sets are drawn from (default 4 n-bar)",
    )
    parser.add_argument(
        "--function-seed", type=int, default=0, help="seed of the function offsets"
    )


def build_parser() -> (
    tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]
):
    parser = argparse.ArgumentParser(
        prog="szo", description="Sparse stochastic zeroth-order optimisation."
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")
    subparsers = parser.add_subparsers(dest="command", required=True)
    commands: dict[str, argparse.ArgumentParser] = {}

    def command(name: str, handler: Handler, help: str) -> argparse.ArgumentParser:
        sub = subparsers.add_parser(name, help=help)
        sub.add_argument("--config", help="file of key = value defaults")
        sub.set_defaults(handler=handler)
        commands[name] = sub
        return sub

    train = command("train", cmd_train, "train on a task with bandit feedback")
    train.add_argument("--task", choices=TASKS)
    _add_optimiser_flags(train, mu=0.01)
    train.add_argument("--iters", type=int, default=1000)
    train.add_argument("--eval-every", type=int, default=1000)
    train.add_argument("--seeds", type=_int_list, help="run these seeds concurrently")
    train.add_argument("--train")
    train.add_argument("--dev")
    train.add_argument("--n-dev", type=int, default=0, help="dev items split off --train")
    train.add_argument("--out", default="szo-run")
    train.add_argument("--k", type=int, default=DEFAULT_K, help="k-best list size")
    train.add_argument(
        "--objective", choices=("map_loss", "annealed_loss"), default="map_loss"
    )
    train.add_argument("--gamma", type=float, default=math.inf)
    train.add_argument("--warm-start", help="checkpoint to start from")
    train.add_argument("--lenient", action="store_true", help="skip malformed sentences")
    _add_synthetic_flags(train, n=32, n_bar=8)

    evaluate = command("eval", cmd_eval, "score a checkpoint on test data")
    evaluate.add_argument("--task", choices=TASKS)
    evaluate.add_argument("--model")
    evaluate.add_argument("--test")
    evaluate.add_argument("--features", help="feature names; default next to --model")
    _add_synthetic_flags(evaluate, n=32, n_bar=8)

    check = command("check-theory", cmd_check_theory, "run the bound checks")
    check.add_argument(
        "--check",
        choices=("lemma1", "lemma2", "second-moment", "theorem1", "gap", "sweep"),
        default="lemma2",
    )
    check.add_argument("--dims", type=_int_list, default="1,5,10,50,200")
    check.add_argument("--p", type=_int_list, default="2,4")
    check.add_argument("--samples", type=int, default=100_000)
    check.add_argument("--grad-samples", type=int, default=10_000)
    check.add_argument("--functions", type=_name_list, default=",".join(ZOO))
    check.add_argument("--iters", type=int, default=10_000)
    check.add_argument("--nbars", type=_int_list, default="8,32,128,512")
    check.add_argument("--epsilon", type=_epsilon, default="auto")
    check.add_argument("--seeds", type=_int_list, default="1,2,3")
    check.add_argument("--out", help="JSON lines file; default standard output")
    _add_optimiser_flags(check, mu=0.05)
    _add_synthetic_flags(check, n=32, n_bar=8)

    sweep = command("sweep", cmd_sweep, "iterations to epsilon against n_bar")
    sweep.add_argument("--nbars", type=_int_list, default="8,32,128,512")
    sweep.add_argument("--epsilon", type=_epsilon, default="auto")
    sweep.add_argument("--seeds", type=_int_list, default="1,2,3")
    sweep.add_argument("--cap", type=int, default=20_000, help="iteration cap")
    sweep.add_argument("--grad-samples", type=int, default=10_000)
    sweep.add_argument("--out", default="sweep.csv")
    _add_optimiser_flags(sweep, mu=0.05)
    _add_synthetic_flags(sweep, n=512, n_bar=8)

    synth = command("synth-data", cmd_synth_data, "write a miniature corpus")
    synth.add_argument("--task", choices=("chunking", "rerank", "multiclass"))
    synth.add_argument("--size", type=int, default=100)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out")
    return parser, commands


def _need(value: str | None, flag: str) -> str:
    if value is None:
        raise ConfigError(f"{flag} is required")
    return value


def _positive(args: argparse.Namespace, *names: str) -> None:
    for name in names:
        value = getattr(args, name)
        if not (isinstance(value, (int, float)) and value > 0 and math.isfinite(value)):
            flag = "--" + name.replace("_", "-")
            raise ConfigError(f"{flag} must be positive, got {value}")


def _run_config(
    args: argparse.Namespace, max_iters: int, eval_every: int
) -> RunConfig:
    _positive(args, "h", "mu")
    try:
        rule = UpdateRule.parse(args.rule)
    except ValueError as e:
        raise ConfigError(f"--rule: {e}") from None
    return RunConfig(
        rule=rule,
        mu=args.mu,
        h=args.h,
        max_iters=max_iters,
        eval_every=eval_every,
        seed=args.seed,
        mode=PerturbationMode(args.mode),
        objective=_objective_spec(args),
    )


def _objective_spec(args: argparse.Namespace) -> ObjectiveSpec:
    try:
        if args.command != "train" or args.task == "synth":
            return ObjectiveSpec(
                kind="synthetic",
                synthetic_id=args.synthetic,
                n=args.n,
                n_bar=args.n_bar,
                seed=args.function_seed,
                support=args.support,
            )
        return ObjectiveSpec(kind=args.objective, gamma=args.gamma)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _write_run(out: Path, result: RunResult, setup: TaskSetup) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_runlog(result.log, out / "runlog.csv")
    weights = result.best.weights if result.best is not None else result.state.w
    write_checkpoint(out / "model.ckpt", weights)
    if setup.task == "chunking" and setup.feature_space is not None:
        write_registry(out / "features.txt", setup.feature_space)
    log.info("%s: %s", out, result.log.summary)


def cmd_train(args: argparse.Namespace) -> int:
    task = _need(args.task, "--task")
    _positive(args, "iters", "eval_every")
    config = _run_config(args, args.iters, args.eval_every)
    setup = build_task(
        TaskConfig(
            task=task,
            objective=config.objective,
            k=args.k,
            n_dev=args.n_dev,
            strict=not args.lenient,
            warm_start=args.warm_start,
        ),
        args.train,
        args.dev,
    )
    out = Path(args.out)
    if args.seeds:
        results = run_seeds(config, setup, args.seeds)
        for seed, result in zip(args.seeds, results):
            _write_run(out / f"seed-{seed}", result, setup)
        write_summary(aggregate([r.log for r in results]), out / "summary.csv")
    else:
        result = run(
            config,
            setup.objective,
            setup.stream(config.seed),
            setup.dev,
            setup.metric,
            setup.w0,
        )
        _write_run(out, result, setup)
    return 0


def _eval_metric(args: argparse.Namespace, task: str) -> tuple[DevMetric, int]:
    if task == "synth":
        try:
            func = make_synthetic(
                args.synthetic,
                args.n,
                args.n_bar,
                args.function_seed,
                support=args.support,
            )
        except ValueError as e:
            raise ConfigError(str(e)) from None
        return synthetic_metric(func), func.dim
    test = _need(args.test, "--test")
    if task == "chunking":
        model_dir = Path(_need(args.model, "--model")).parent
        names = args.features or str(model_dir / "features.txt")
        registry = read_registry(names)
        sentences = parse_conll(test)
        if not sentences:
            raise DataError(f"{test}: no test sentences")
        return chunking_metric(sentences, registry), registry.size
    if task == "rerank":
        records = parse_nbest_records(test)
        if not records:
            raise DataError(f"{test}: no n-best lists")
        registry = FeatureIndex.anonymous(records[0].arity)
        return rerank_metric(records, registry), registry.size
    num_classes, docs = parse_doc_records(test)
    if not docs:
        raise DataError(f"{test}: no documents")
    registry = FeatureIndex.anonymous(num_classes * docs[0].vector.dim)
    return multiclass_metric(num_classes, docs, registry), registry.size


def cmd_eval(args: argparse.Namespace) -> int:
    task = _need(args.task, "--task")
    metric, dim = _eval_metric(args, task)
    weights = read_checkpoint(_need(args.model, "--model"))
    if weights.dim != dim:
        raise DataError(f"model has dim {weights.dim}, the test data needs {dim}")
    print(f"{metric.name}={metric.evaluate(weights):.4f}")
    return 0


def _sweep_report(args: argparse.Namespace) -> BoundReport:
    result = complexity_sweep(
        args.n,
        args.nbars,
        args.epsilon,
        args.seeds,
        _run_config(args, args.iters, args.iters),
        args.grad_samples,
    )
    medians = [result.median(b) for b in result.n_bars]
    violations = sum(later < earlier for earlier, later in zip(medians, medians[1:]))
    return BoundReport.make(
        "sweep",
        float(violations),
        0.0,
        0.0,
        n=args.n,
        epsilon=result.epsilon,
        **{f"median_{b}": m for b, m in zip(result.n_bars, medians)},
    )


def _theory_reports(args: argparse.Namespace) -> list[BoundReport]:
    rng = RngStream(args.seed, CHECK_STREAM)
    if args.check == "lemma2":
        return [
            moment_bound_check(d, p, args.samples, rng)
            for d in args.dims
            for p in args.p
        ]
    if args.check == "sweep":
        return [_sweep_report(args)]
    unknown = sorted(set(args.functions) - set(ZOO))
    if unknown:
        raise ConfigError(f"--functions: unknown synthetic functions {unknown}")
    reports = []
    for name in args.functions:
        try:
            func = make_synthetic(
                name, args.n, args.n_bar, args.function_seed, support=args.support
            )
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if args.check == "theorem1":
            config = _run_config(args, args.iters, args.iters)
            reports.append(theorem1_check(func, config, args.grad_samples)[1])
            continue
        w = SparseVector.from_dense(rng.normals(func.dim))
        if args.check == "lemma1":
            reports.append(estimator_bias_check(func, w, args.mu, args.samples, rng))
        elif args.check == "second-moment":
            reports.append(second_moment_check(func, w, args.mu, args.samples, rng))
        else:
            reports.append(gap_check(func, w, args.mu, args.samples, rng))
    return reports


def cmd_check_theory(args: argparse.Namespace) -> int:
    reports = _theory_reports(args)
    lines = "".join(report.to_json() + "\n" for report in reports)
    if args.out:
        Path(args.out).write_text(lines, encoding="utf-8")
    else:
        sys.stdout.write(lines)
    failed = [r.check for r in reports if not r.passed]
    if failed:
        log.error("%d of %d checks failed", len(failed), len(reports))
        return 1
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    _positive(args, "cap")
    result = complexity_sweep(
        args.n,
        args.nbars,
        args.epsilon,
        args.seeds,
        _run_config(args, args.cap, args.cap),
        args.grad_samples,
    )
    with open(args.out, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(("n_bar", "seed", "iterations", "censored"))
        for cell in result.cells:
            iterations = cell.iterations_to(result.epsilon)
            writer.writerow(
                (
                    cell.n_bar,
                    cell.seed,
                    cell.cap if iterations is None else iterations,
                    int(iterations is None),
                )
            )
    for n_bar in result.n_bars:
        log.info(
            "n_bar=%d median=%g dispersion=%g censored=%d",
            n_bar,
            result.median(n_bar),
            result.dispersion(n_bar),
            result.censored(n_bar),
        )
    return 0


def cmd_synth_data(args: argparse.Namespace) -> int:
    task = _need(args.task, "--task")
    out = _need(args.out, "--out")
    if args.size < 0:
        raise ConfigError(f"--size must be non-negative, got {args.size}")
    if task == "chunking":
        text = synth_chunking(args.size, args.seed)
    elif task == "rerank":
        text = synth_nbest(args.size, args.seed)
    else:
        text = synth_docs(args.size, args.seed)
    Path(out).write_text(text, encoding="utf-8")
    return 0


def _apply_config(
    args: argparse.Namespace,
    commands: dict[str, argparse.ArgumentParser],
) -> None:
    values: dict[str, object] = dict(load_config(args.config))
    unknown = sorted(set(values) - (set(vars(args)) - _META_KEYS))
    if unknown:
        raise ConfigError(f"{args.config}: unknown keys {unknown}")
    for key in _BOOLEAN_KEYS & set(values):
        text = str(values[key]).lower()
        if text not in configparser.ConfigParser.BOOLEAN_STATES:
            raise ConfigError(f"{args.config}: {key} must be a boolean, got {text!r}")
        values[key] = configparser.ConfigParser.BOOLEAN_STATES[text]
    commands[args.command].set_defaults(**values)


def main(argv: Sequence[str] | None = None) -> int:
    parser, commands = build_parser()
    args = parser.parse_args(argv)
    root = logging.getLogger()
    if args.verbose:
        root.setLevel(logging.DEBUG)
    elif args.quiet:
        root.setLevel(logging.WARNING)
    try:
        if args.config is not None:
            _apply_config(args, commands)
            args = parser.parse_args(argv)
        handler: Handler = args.handler
        return handler(args)
    except NumericalError as e:
        log.error("%s", e)
        return 4
    except (DataError, OSError) as e:
        log.error("%s", e)
        return 3
    except (ConfigError, ValueError) as e:
        log.error("%s", e)
        return 2
