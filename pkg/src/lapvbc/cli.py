"""Command-line front end.

Subcommands ``fit``, ``correct``, ``sample`` and ``compare`` read a YAML
config (see :mod:`lapvbc.config`) and write ``report.jsonl`` and
``summary.csv`` into the ``--out`` directory. ``simulate`` writes a
synthetic CSV dataset with a companion config.

Exit codes: 0 success, 2 configuration or data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import re
import sys
import time
from dataclasses import asdict, dataclass

import numpy as np

from .config import load_config
from .exceptions import ModelError, NumericalError
from .laplace import fit_laplace
from .model import EffectKind
from .oracle import sample_posterior
from .problem import assemble
from .quad import DEFAULT_NODES
from .report import LatentRecord, RunReport
from .simulate import SCENARIOS, simulate
from .vbc import CorrectionSet, default_correction_set, vbc_correct, vbc_correct_exact_poisson

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


@dataclass(frozen=True)
class RunSettings:
    correction_set: str = "fixed-effects"
    ghq_nodes: int = DEFAULT_NODES
    exact_poisson: bool = False
    mcmc_iters: int = 200_000
    mcmc_burnin: int = 20_000
    seed: int = 0
    tol: float = 1e-8
    max_iter: int = 50


def parse_correction_set(text, layout):
    """Resolve a correction-set expression to effect indices.

    Accepts ``none``, ``all``, ``fixed-effects`` or a comma list of block
    names, element labels like ``time[3]`` (0-based) and plain effect
    indices. Returns ``None`` for ``none``.
    """
    text = text.strip()
    if text.lower() == "none":
        return None
    if text.lower() == "all":
        return CorrectionSet(tuple(range(layout.m_star)))
    if text.lower() == "fixed-effects":
        fixed = [b.offset for b in layout.blocks if b.kind is EffectKind.FIXED]
        return CorrectionSet(tuple(fixed)) if fixed else default_correction_set(layout)
    out = []
    for token in (t.strip() for t in text.split(",")):
        if not token:
            raise ModelError(f"empty entry in correction set {text!r}")
        element = re.fullmatch(r"(.+)\[(\d+)\]", token)
        names = {b.name for b in layout.blocks}
        if token in names:
            b = layout.block(token)
            out.extend(range(b.offset, b.offset + b.size))
        elif element and element.group(1) in names:
            b = layout.block(element.group(1))
            k = int(element.group(2))
            if k >= b.size:
                raise ModelError(f"{token!r} is outside block {b.name!r} of size {b.size}")
            out.append(b.offset + k)
        elif token.isdigit():
            out.append(int(token))
        else:
            raise ModelError(f"unknown correction-set entry {token!r}")
    return CorrectionSet(tuple(dict.fromkeys(out))).validate(layout.m_star)


def _records(layout, ga=None, vbc=None, chain=None):
    labels = layout.effect_labels()
    out = []
    for i, label in enumerate(labels):
        block, offset = layout.locate_effect(i)
        out.append(LatentRecord(
            index=i, label=label, block=block, offset=offset,
            mean_ga=None if ga is None else float(ga.mean[i]),
            sd_ga=None if ga is None else float(ga.sd[i]),
            mean_vbc=None if vbc is None else float(vbc.mean[i]),
            mean_mcmc=None if chain is None else float(chain.mean[i]),
            sd_mcmc=None if chain is None else float(chain.sd[i])))
    return out


def _prepare(config_path, settings, data_path):
    cfg = load_config(config_path)
    data = cfg.load_data(data_path)
    problem = assemble(cfg.model(data), data)
    echo = {"model": cfg.echo(), "settings": asdict(settings)}
    if data_path is not None:
        echo["model"]["data"] = str(data_path)
    return cfg, problem, echo


def _fit(problem, settings, timing, convergence):
    t0 = time.perf_counter()
    ga = fit_laplace(problem, tol=settings.tol, max_iter=settings.max_iter)
    _ = ga.sd  # marginal variances count towards the fit stage
    timing["fit_seconds"] = time.perf_counter() - t0
    convergence["fit"] = {"iterations": ga.iterations, "converged": ga.converged,
                          "step_history": list(ga.step_history)}
    return ga


def _correct(ga, settings, timing, convergence):
    J = parse_correction_set(settings.correction_set, ga.problem.layout)
    if J is None:
        return None
    t0 = time.perf_counter()
    if settings.exact_poisson:
        res = vbc_correct_exact_poisson(ga, J, tol=settings.tol, max_iter=settings.max_iter)
    else:
        res = vbc_correct(ga, J, tol=settings.tol, max_iter=settings.max_iter,
                          n_nodes=settings.ghq_nodes)
    timing["correct_seconds"] = time.perf_counter() - t0
    convergence["correct"] = {"method": res.method, "p": J.p, "iterations": res.iterations,
                              "converged": res.converged,
                              "objective_trace": [float(v) for v in res.objective_trace],
                              "identity_residual": res.identity_residual}
    return res


def _sample(problem, ga, settings, timing, convergence):
    t0 = time.perf_counter()
    chain = sample_posterior(problem, settings.mcmc_iters, settings.mcmc_burnin,
                             seed=settings.seed, ga=ga)
    timing["mcmc_seconds"] = time.perf_counter() - t0
    convergence["mcmc"] = {"acceptance_rate": chain.acceptance_rate, "scale": chain.scale,
                           "min_ess": float(chain.ess.min()), "seed": chain.seed,
                           "iterations": chain.iterations, "burn_in": chain.burn_in}
    return chain


def cmd_fit(config_path, settings=RunSettings(), data_path=None) -> RunReport:
    _, problem, echo = _prepare(config_path, settings, data_path)
    timing, convergence = {}, {}
    ga = _fit(problem, settings, timing, convergence)
    return RunReport("fit", echo, _records(problem.layout, ga=ga), timing, convergence)


def cmd_correct(config_path, settings=RunSettings(), data_path=None) -> RunReport:
    _, problem, echo = _prepare(config_path, settings, data_path)
    timing, convergence = {}, {}
    ga = _fit(problem, settings, timing, convergence)
    res = _correct(ga, settings, timing, convergence)
    return RunReport("correct", echo, _records(problem.layout, ga=ga, vbc=res), timing,
                     convergence)


def cmd_sample(config_path, settings=RunSettings(), data_path=None) -> RunReport:
    _, problem, echo = _prepare(config_path, settings, data_path)
    timing, convergence = {}, {}
    ga = _fit(problem, settings, timing, convergence)
    chain = _sample(problem, ga, settings, timing, convergence)
    return RunReport("sample", echo, _records(problem.layout, chain=chain), timing, convergence)


def cmd_compare(config_path, settings=RunSettings(), data_path=None) -> RunReport:
    """Fit, correct and sample, then report the mean absolute error of each
    approximation's posterior means against the sampler's."""
    _, problem, echo = _prepare(config_path, settings, data_path)
    timing, convergence = {}, {}
    ga = _fit(problem, settings, timing, convergence)
    res = _correct(ga, settings, timing, convergence)
    chain = _sample(problem, ga, settings, timing, convergence)
    mae = {"ga": float(np.mean(np.abs(ga.mean - chain.mean)))}
    if res is not None:
        mae["vbc"] = float(np.mean(np.abs(res.mean - chain.mean)))
    return RunReport("compare", echo, _records(problem.layout, ga, res, chain), timing,
                     convergence, mae)


def cmd_simulate(scenario, n, seed, out_path):
    return simulate(scenario, n, seed).write(out_path)


COMMANDS = {"fit": cmd_fit, "correct": cmd_correct, "sample": cmd_sample,
            "compare": cmd_compare}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lapvbc", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = argparse.ArgumentParser(add_help=False)
    run.add_argument("--config", required=True, help="YAML model configuration")
    run.add_argument("--data", help="CSV data file (overrides the config)")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed", type=int, default=RunSettings.seed)
    run.add_argument("--correction-set", default=RunSettings.correction_set,
                     help="'fixed-effects', 'all', 'none' or a comma list of blocks, "
                          "labels like name[k] and effect indices")
    run.add_argument("--ghq-nodes", type=int, default=RunSettings.ghq_nodes)
    run.add_argument("--exact-poisson", action="store_true",
                     help="closed-form Poisson expectations instead of quadrature")
    run.add_argument("--mcmc-iters", type=int, default=RunSettings.mcmc_iters)
    run.add_argument("--mcmc-burnin", type=int, default=RunSettings.mcmc_burnin)
    run.add_argument("--tol", type=float, default=RunSettings.tol)
    run.add_argument("--max-iter", type=int, default=RunSettings.max_iter)
    helps = {"fit": "Laplace approximation only", "correct": "Laplace fit plus mean correction",
             "sample": "MCMC reference run", "compare": "all methods and their MAE vs MCMC"}
    for name in COMMANDS:
        sub.add_parser(name, parents=[run], help=helps[name])
    sim = sub.add_parser("simulate", help="write a synthetic dataset and its config")
    sim.add_argument("scenario", choices=SCENARIOS)
    sim.add_argument("--n", type=int, help="observations (default 50, or 366 days)")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True, help="CSV path; the config goes next to it")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            n = args.n if args.n is not None else (366 if args.scenario == "tokyo-binomial" else 50)
            path = cmd_simulate(args.scenario, n, args.seed, args.out)
            print(f"wrote {args.out} and {path}")
            return EXIT_OK
        settings = RunSettings(correction_set=args.correction_set, ghq_nodes=args.ghq_nodes,
                               exact_poisson=args.exact_poisson, mcmc_iters=args.mcmc_iters,
                               mcmc_burnin=args.mcmc_burnin, seed=args.seed, tol=args.tol,
                               max_iter=args.max_iter)
        report = COMMANDS[args.command](args.config, settings, args.data)
        out = report.write(args.out)
        if report.mae:
            print(" ".join(f"MAE[{k}]={v:.6g}" for k, v in report.mae.items()))
        print(f"wrote {out / 'report.jsonl'} and {out / 'summary.csv'}")
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        # ModelError and ConfigError included: bad configuration, data or flag values
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
