"""Command-line entry point ``tkl``.

Every ``check-*`` command runs one verification suite, writes a CSV
artifact into the output directory and prints a one-line summary. The exit
code is 0 when the suite passes, 1 when it fails and 2 on configuration or
regime errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import propcheck
from .config import ConfigError, ExperimentConfig, load_config
from .noise import NoiseStream
from .potential import builtin_potential
from .schemes import PhaseState, check_regime, run_chain
from .taming import RegimeError

SCHEMA_VERSION = 1
ORDER_LAMBDAS = (0.02, 0.01, 0.005, 0.0025)


def fmt_value(v) -> str:
    """Render a value for CSV output: floats at 17 significant digits."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, (list, tuple)):
        return ";".join(fmt_value(x) for x in v)
    return str(v)


def render_csv(header: dict, columns: Sequence[str], rows: Sequence[Sequence], meta: Optional[dict] = None) -> str:
    lines = [f"schema={SCHEMA_VERSION}"]
    for key, value in header.items():
        lines.append(f"# {key}={fmt_value(value)}")
    for key, value in (meta or {}).items():
        lines.append(f"# {key}={fmt_value(value)}")
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(fmt_value(v) for v in row))
    return "\n".join(lines) + "\n"


def report_csv(rep: propcheck.SuiteReport, header: Optional[dict] = None) -> str:
    """CSV text of a suite report. Wall time is left out so reruns are byte-identical."""
    meta = {"suite": rep.name, "passed": rep.passed, "cases": rep.cases}
    meta.update({f"measured.{k}": v for k, v in rep.measured.items()})
    meta.update({f"failures.{k}": v for k, v in rep.failure_counts.items()})
    for f in rep.failures:
        meta[f"failure.{f.check}.{f.case}"] = f"{f.input} | expected {f.expected} | observed {f.observed}"
    merged = dict(header or {})
    merged.update(rep.header)
    return render_csv(merged, rep.columns, rep.rows, meta)


def resolve_threads(arg: Optional[int]) -> int:
    if arg is not None:
        return max(1, arg)
    env = os.environ.get("TKL_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"TKL_THREADS must be an integer, got {env!r}") from None
    return 1


def _write(out_dir: str, name: str, text: str) -> Path:
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    target = path / name
    target.write_text(text, encoding="utf-8")
    return target


def _need(cfg: Optional[ExperimentConfig], command: str) -> ExperimentConfig:
    if cfg is None:
        raise ConfigError(f"{command} needs --config")
    return cfg


def run_command(args: argparse.Namespace) -> int:
    threads = resolve_threads(args.threads)
    cfg = load_config(args.config, args.seed) if args.config else None
    seed = args.seed if args.seed is not None else (cfg.seed if cfg else 0)
    out = args.out or (cfg.out if cfg else ".")
    header = cfg.header() if cfg else {}
    cmd = args.command

    if cmd == "check-taming":
        cfg = _need(cfg, cmd)
        rep = propcheck.suite_taming(cfg.tamed, cfg.n_taming, seed)
    elif cmd == "check-contraction":
        cfg = _need(cfg, cmd)
        header["regimes_checked"] = "; ".join(check_regime(cfg.scheme, cfg.params, "contraction"))
        rep = propcheck.suite_contraction(cfg.scheme, cfg.tamed, cfg.params, cfg.n_pairs, cfg.n_steps, seed,
                                          threads=threads, init=cfg.init)
    elif cmd == "check-w2":
        cfg = _need(cfg, cmd)
        rep = propcheck.suite_w2_convergence(cfg.tamed, cfg.params, cfg.scheme, cfg.n_chains, cfg.n_steps, seed,
                                             eps=cfg.eps, stride=cfg.stride, threads=threads)
    elif cmd == "check-lsi-proxy":
        cfg = _need(cfg, cmd)
        rep = propcheck.suite_lsi_proxies(cfg.tamed, cfg.params, cfg.n_points, seed)
    elif cmd == "check-eta":
        rep = propcheck.suite_eta_bounds(propcheck.eta_grid())
    elif cmd == "check-order":
        p = cfg.potential if cfg else builtin_potential("double_well", 1, 1.0)
        n_starts = cfg.n_points if cfg else 1000
        rep = propcheck.suite_order(p, ORDER_LAMBDAS, n_starts, seed)
    elif cmd == "sample":
        cfg = _need(cfg, cmd)
        return _sample(cfg, seed, out, threads, header)
    else:  # argparse restricts the choices
        raise ConfigError(f"unknown command {cmd!r}")

    name = cmd.removeprefix("check-").replace("-", "_") + ".csv"
    _write(out, name, report_csv(rep, header))
    print(rep.summary())
    for f in rep.failures[:5]:
        print(f"  {f.check} case {f.case}: {f.input}; expected {f.expected}; observed {f.observed}")
    return 0 if rep.passed else 1


def _sample(cfg: ExperimentConfig, seed: int, out: str, threads: int, header: dict) -> int:
    shape = (cfg.n_chains, cfg.dim)
    z0 = PhaseState(np.zeros(shape), np.zeros(shape))
    rec = run_chain(z0, cfg.tamed, cfg.params, cfg.n_steps, NoiseStream(seed), scheme=cfg.scheme,
                    stride=cfg.stride, threads=threads)
    columns = ["step", "chain"] + [f"x{j}" for j in range(cfg.dim)] + [f"v{j}" for j in range(cfg.dim)]
    rows = []
    for k, step in enumerate(rec.steps):
        for ch in range(cfg.n_chains):
            rows.append([int(step), ch, *rec.x[k, ch], *rec.v[k, ch]])
    _write(out, "sample.csv", render_csv(header, columns, rows))
    print(f"sample: wrote {len(rows)} rows ({cfg.n_chains} chains, {len(rec.steps)} records)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tkl", description="Tamed kinetic Langevin samplers and checks.")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "check-taming": "properties of the tamed drift",
        "check-contraction": "per-step contraction of coupled chains",
        "check-w2": "Wasserstein-2 convergence against the target",
        "check-lsi-proxy": "Lipschitz proxies of the log-Sobolev arguments",
        "check-eta": "elementary bounds on eta = exp(-gamma lambda)",
        "check-order": "one-step order of the Verlet map",
        "sample": "run chains and write their thinned states",
    }
    for name, help_text in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="path to the experiment config")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", help="output directory (default: [run] out, else .)")
        p.add_argument("--threads", type=int, help="worker threads (default: $TKL_THREADS or 1)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run_command(args)
    except (ConfigError, RegimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
