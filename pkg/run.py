import sys
from os import path

import yaml
from loguru import logger

from vecplan.cli import dispatch

CONFIG_FILE: str = "config.yml"
DEFAULT_COMMAND: str = "sweep"


def main():
    argv = sys.argv[1:]
    __user_config_location__: str = path.abspath(".")
    user_config_path: str = path.join(__user_config_location__, CONFIG_FILE)
    # without arguments, run the sweep described by config.yml
    if not argv:
        if not path.isfile(user_config_path):
            logger.error(f"No arguments given and no {CONFIG_FILE} found in {__user_config_location__}")
            sys.exit(2)
        with open(user_config_path) as config_file:
            config: dict = yaml.safe_load(config_file) or {}
        domain = config.get("Domain", {}).get("Family", "ferry")
        logger.info(f"Running {DEFAULT_COMMAND} on the {domain} domain from {CONFIG_FILE}")
        argv = [DEFAULT_COMMAND, "--config", user_config_path]
    sys.exit(dispatch(argv))


if __name__ == "__main__":
    main()
