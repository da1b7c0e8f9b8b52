import argparse

from dic.config import run_config
from dic.handlers import CONFIG_ARGUMENTS
from dic.services.analyzer import CALIBRATION_HEADERS, analyze, calibration_table, stage_embedding_overhead
from dic.utils.router import Router, arg
from dic.utils.table import format_table

router = Router(name="analyze")


@router.command(
    "analyze", "Static parameter / FLOPs / receptive-field report",
    *CONFIG_ARGUMENTS,
    arg("--resolution", type=int, default=None, help="input resolution (defaults to model.image_size)"),
    arg("--csv", metavar="PATH", default=None, help="write the per-layer breakdown"),
    arg("--flops-per-mac", type=int, choices=(1, 2), default=1),
    arg("--no-transforms", action="store_true", help="leave Winograd transform costs out"),
    arg("--all-presets", action="store_true", help="calibration table for every published preset"),
)
def cmd_analyze(args: argparse.Namespace) -> int:
    include_transforms = not args.no_transforms
    if args.all_presets:
        rows = calibration_table(flops_per_mac=args.flops_per_mac, include_transforms=include_transforms)
        print(f"# flops_per_mac={args.flops_per_mac} winograd_transforms={'on' if include_transforms else 'off'}")
        print(format_table(CALIBRATION_HEADERS, [row.cells() for row in rows]))
        return 0

    config = run_config.from_cli(args.config, args.set).model
    report = analyze(config, args.resolution, args.flops_per_mac, include_transforms)
    delta_params, delta_flops = stage_embedding_overhead(report.config)
    print(report.header())
    print(format_table(("metric", "value"), [
        ("params", f"{report.params / 1e6:.2f}M"),
        ("GFLOPs", f"{report.flops_direct / 1e9:.3f}"),
        ("Winograd GFLOPs", f"{report.flops_winograd / 1e9:.3f}"),
        ("Winograd/direct", f"{report.winograd_ratio:.4f}"),
        ("receptive field", report.receptive_field),
        ("stage-specific embedding params", f"{delta_params / 1e6:.2f}M"),
        ("stage-specific embedding FLOPs", delta_flops),
    ]))
    print(format_table(("module", "GFLOPs"), [
        (name, f"{flops / 1e9:.4f}") for name, flops in report.by_module().items()
    ]))
    if args.csv:
        report.save_csv(args.csv)
    return 0
