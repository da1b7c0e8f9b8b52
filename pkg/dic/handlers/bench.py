import argparse

from dic.errors import ConfigError
from dic.services.bench import DEFAULT_SHAPES, format_bench, run_bench
from dic.utils.router import Router, arg

router = Router(name="bench")


def _shape(text: str) -> tuple[int, int, int, int, int]:
    try:
        parts = tuple(int(p) for p in text.split(","))
    except ValueError:
        raise ConfigError(f"expected integers N,Cin,H,W,Cout, got {text}", field="--shape") from None
    if len(parts) != 5 or min(parts) < 1:
        raise ConfigError(f"expected N,Cin,H,W,Cout, got {text}", field="--shape")
    return parts


@router.command(
    "bench", "Wall time of direct vs Winograd 3x3 convolution",
    arg("--shape", action="append", default=[], metavar="N,Cin,H,W,Cout", help="layer shape (repeatable)"),
    arg("--repeats", type=int, default=None),
    arg("--dtype", choices=("float32", "float64"), default="float32"),
    arg("--seed", type=int, default=0),
)
def cmd_bench(args: argparse.Namespace) -> int:
    shapes = [_shape(s) for s in args.shape] or list(DEFAULT_SHAPES)
    rows = run_bench(shapes, repeats=args.repeats, seed=args.seed, dtype=args.dtype)
    print(format_bench(rows))
    return 0
