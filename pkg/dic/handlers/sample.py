import argparse
from pathlib import Path

from dic.config.settings import settings
from dic.services.sampler import SampleService
from dic.utils.router import Router, arg

router = Router(name="sample")


@router.command(
    "sample", "Generate class-conditional samples from a checkpoint",
    arg("--ckpt", required=True, help="checkpoint path"),
    arg("--class", dest="class_label", type=int, required=True, help="class index"),
    arg("--cfg", type=float, default=1.0, help="classifier-free guidance scale (>= 1)"),
    arg("-n", type=int, default=4, help="number of samples"),
    arg("--out", default=None, help="output directory"),
    arg("--seed", type=int, default=0),
    arg("--no-ema", action="store_true", help="sample with raw weights even if EMA weights are stored"),
    arg("--winograd", action="store_true", help="run stride-1 convs through the Winograd kernel"),
    arg("--no-progress", action="store_true"),
)
def cmd_sample(args: argparse.Namespace) -> int:
    out_dir = Path(args.out or Path(settings.OUTPUT_DIR) / "samples")
    paths = SampleService().generate(
        args.ckpt, args.class_label, args.cfg, args.n, out_dir, seed=args.seed,
        use_ema=not args.no_ema, winograd=args.winograd, progress=not args.no_progress,
    )
    for path in paths:
        print(path)
    return 0
