"""``stein-lab <uni|multi|pp> --config PATH`` command-line entry point."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import SECTIONS, ConfigError, load_config, parse_grid
from .state_space import StateSpaceOverflow
from .sweeps import SweepResult, format_float, run_sweep

__all__ = ["main", "write_csv"]

log = logging.getLogger("stein_lab")


def write_csv(result: SweepResult, path: Path) -> None:
    lines = [",".join(result.columns)]
    for r in result.rows:
        lines.append(",".join(format_float(r[c]) for c in result.columns))
    for name, fit in result.fits.items():
        lines.append(f"# fit {name}: c={format_float(fit.c)} p={format_float(fit.p)} q={fit.q} "
                     f"residual={format_float(fit.residual)} "
                     f"residual_other_q={format_float(fit.residual_other)}")
    for note in result.notes:
        lines.append(f"# note: {note}")
    for c in result.checks:
        lines.append(f"# check {c.name}: {'pass' if c.ok else 'FAIL'} {c.detail}".rstrip())
    lines.append(f"# status: {'pass' if result.ok else 'fail'}")
    path.write_text("\n".join(lines) + "\n")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stein-lab",
                                description="Stein-factor sweeps on truncated state spaces.")
    p.add_argument("section", choices=SECTIONS)
    p.add_argument("--config", required=True, help="flat key = value file")
    p.add_argument("--lambda-grid", help="comma-separated, strictly increasing")
    p.add_argument("--out", help="output directory")
    p.add_argument("--no-plots", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {"seed": args.seed, "workers": args.workers, "out": args.out}
    try:
        if args.lambda_grid is not None:
            parse_grid(args.lambda_grid)
            overrides["lambda_grid"] = args.lambda_grid
        cfg = load_config(args.config, args.section, overrides)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        cfg = replace(cfg, out=str(out))
        result = run_sweep(cfg)
    except (ConfigError, StateSpaceOverflow, ValueError) as exc:
        print(f"stein-lab: invalid configuration: {exc}", file=sys.stderr)
        return 2
    csv_path = out / f"{cfg.section}_sweep.csv"
    write_csv(result, csv_path)
    log.info("wrote %s", csv_path)
    if not args.no_plots:
        for claim, svg in result.plots.items():
            (out / f"{cfg.section}_{claim}.svg").write_text(svg)
    for c in result.checks:
        if not c.ok:
            print(f"stein-lab: check failed: {c.name} {c.detail}", file=sys.stderr)
    return 0 if result.ok else 1


if __name__ == "__main__":
    sys.exit(main())
