import argparse

from dic.config import run_config
from dic.errors import GradientError
from dic.handlers import CONFIG_ARGUMENTS
from dic.services.gradcheck import model_gradcheck
from dic.utils.router import Router, arg
from dic.utils.table import format_table

router = Router(name="gradcheck")


@router.command(
    "gradcheck", "Compare tape gradients with central finite differences (float64)",
    *CONFIG_ARGUMENTS,
    arg("--coords", type=int, default=20, help="sampled coordinates per parameter tensor"),
    arg("--tolerance", type=float, default=1e-4),
    arg("--step", type=float, default=1e-5, help="finite-difference step h"),
)
def cmd_gradcheck(args: argparse.Namespace) -> int:
    run = run_config.from_cli(args.config, args.set)
    report = model_gradcheck(
        run.model, seed=run.seed, coords=args.coords, h=args.step, tolerance=args.tolerance
    )
    worst = sorted(report.checks, key=lambda c: c.max_rel_err, reverse=True)[:10]
    print(format_table(("tensor", "coords", "max rel err"), [(c.name, c.coords, f"{c.max_rel_err:.3e}") for c in worst]))
    print(f"{len(report.checks)} tensors, max rel err {report.max_rel_err:.3e}")
    if not report.passed:
        raise GradientError(
            f"{len(report.failures)} tensors exceed tolerance", field=report.failures[0].name,
            max_rel_err=f"{report.max_rel_err:.3e}", tolerance=args.tolerance,
        )
    return 0
