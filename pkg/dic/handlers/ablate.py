import argparse

from dic.config import run_config
from dic.handlers import CONFIG_ARGUMENTS
from dic.services.ablation import SUITES, format_ablation, run_ablation, seed_wins
from dic.utils.router import Router, arg

router = Router(name="ablate")


@router.command(
    "ablate", "Train every step of a roadmap suite under one budget and compare",
    *CONFIG_ARGUMENTS,
    arg("--suite", choices=tuple(SUITES), default="architecture"),
    arg("--seeds", type=int, default=1, help="number of seeds (0..n-1)"),
    arg("--out", default=None, help="directory for per-run checkpoints and metrics"),
)
def cmd_ablate(args: argparse.Namespace) -> int:
    base = run_config.from_cli(args.config, args.set)
    rows = run_ablation(args.suite, base, seeds=range(args.seeds), out_dir=args.out)
    print(format_ablation(rows))
    first, last = rows[0], rows[-1]
    print(f"{last.name} <= {first.name} on {seed_wins(last, first)}/{len(last.eval_losses)} seeds")
    return 0
