import argparse
import logging

from dic.config import run_config
from dic.handlers import CONFIG_ARGUMENTS
from dic.services.trainer import Trainer
from dic.utils.router import Router, arg

logger = logging.getLogger(__name__)

router = Router(name="train")


@router.command(
    "train", "Train a model on the toy dataset",
    *CONFIG_ARGUMENTS,
    arg("--resume", metavar="CKPT", help="continue from a checkpoint written by an earlier run"),
    arg("--no-progress", action="store_true", help="hide the progress bar"),
)
async def cmd_train(args: argparse.Namespace) -> int:
    run = run_config.from_cli(args.config, args.set)
    trainer = Trainer(run, resume=args.resume, progress=not args.no_progress)
    result = await trainer.train_async()
    tail = result.losses[-50:]
    if tail:
        print(f"final step {result.final_step}: mean loss over last {len(tail)} steps {sum(tail) / len(tail):.5f}")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"metrics: {result.metrics_path}")
    return 0
