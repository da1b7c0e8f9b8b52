import pytest

from dic.utils.router import Dispatcher, Router, arg


def test_routers_build_one_parser():
    first, second = Router(), Router()

    @first.command("hello", "say hello", arg("--name", default="world"))
    def hello(args):
        return 0 if args.name == "dic" else 3

    @second.command("later", "async handler")
    async def later(args):
        return 4

    dp = Dispatcher("prog")
    dp.include_routers(first, second)
    parser = dp.build_parser()
    assert dp.dispatch(parser.parse_args(["hello", "--name", "dic"])) == 0
    assert dp.dispatch(parser.parse_args(["hello"])) == 3
    assert dp.dispatch(parser.parse_args(["later"])) == 4


def test_duplicate_command_rejected():
    a, b = Router(), Router()
    a.command("x")(lambda args: 0)
    b.command("x")(lambda args: 0)
    with pytest.raises(ValueError):
        Dispatcher("prog").include_routers(a, b)


def test_missing_command_is_usage_error():
    dp = Dispatcher("prog")
    dp.include_routers(Router())
    with pytest.raises(SystemExit) as err:
        dp.build_parser().parse_args([])
    assert err.value.code == 2
