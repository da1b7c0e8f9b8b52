from dic.utils.router import arg

CONFIG_ARGUMENTS = (
    arg("--config", metavar="FILE", help="key=value run config file"),
    arg("--set", metavar="KEY=VALUE", action="append", default=[], help="override one config key (repeatable)"),
)
