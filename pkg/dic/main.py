import logging
import sys
from typing import Sequence

from dic.config.settings import settings
from dic.errors import ConfigError, DiCError
from dic.handlers import ablate, analyze, bench, gradcheck, sample, train
from dic.utils.router import Dispatcher

logger = logging.getLogger(__name__)


def build_dispatcher() -> Dispatcher:
    dp = Dispatcher("dic", description="DiC: 3x3-convolutional diffusion denoiser")
    dp.include_routers(train.router, sample.router, analyze.router, gradcheck.router, bench.router, ablate.router)
    return dp


def cli(argv: Sequence[str] | None = None) -> int:
    """Exit codes: 0 success, 1 runtime error, 2 usage error or unknown config key."""
    logging.basicConfig(
        level=settings.LOG_LEVEL, format='%(asctime)s - %(levelname)s - %(message)s', force=True
    )
    dp = build_dispatcher()
    parser = dp.build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    try:
        return dp.dispatch(args)
    except ConfigError as e:
        print(e.to_line(), file=sys.stderr)
        if e.code == "unknown_key":
            parser.print_usage(sys.stderr)
            return 2
        return 1
    except DiCError as e:
        logger.debug(f"Error in {args.command}: {str(e)}", exc_info=True)
        print(e.to_line(), file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
