#!/usr/local/bin/python3

import argparse
import logging
import sys
from typing import Callable, List, Optional, Sequence

from scipy.linalg import LinAlgError

from lib.errors import ConfigError, PsdFilterError
from lib.experiments import ExperimentConfig, cmd_bench, cmd_filter, cmd_learn, cmd_stability, load_config

logger = logging.getLogger("psdfilter")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ExperimentRunner:
    def __init__(self, config: Optional[ExperimentConfig] = None):
        """Bind the runner to a validated experiment config; help needs none."""
        self.config = config
        self._commands: list[tuple[str, str, Callable[[], None]]] = []
        self.register_commands()

    def register_commands(self):
        self.register("learn", "Learn transition and observation models and tabulate sup errors", self.learn)
        self.register("filter", "Run every configured filter and write per-step traces", self.filter)
        self.register("stability", "Measure forgetting of the initial condition", self.stability)
        self.register("bench", "Compare accuracy and cost against the grid oracle", self.bench)
        self.register("help", "Display available commands", self.display_commands)

    def register(self, command: str, description: str, func: Callable[[], None]):
        self._commands.append((command, description, func))

    @property
    def command_names(self) -> List[str]:
        return [command for command, _, _ in self._commands]

    def display_commands(self):
        print("\nAvailable commands:")
        for command, desc, _ in self._commands:
            print(f"{command:10} - {desc}")
        print()

    def execute_command(self, command: str) -> bool:
        command = command.lower().strip()
        for cmd, _, func in self._commands:
            if cmd == command:
                func()
                return True
        return False

    def _report(self, written) -> None:
        print(f"Completed: wrote {len(written)} files to {self.config.output_path} "
              f"(config_hash={self.config.hash})")

    def learn(self) -> None:
        self._report(cmd_learn(self.config))

    def filter(self) -> None:
        self._report(cmd_filter(self.config))

    def stability(self) -> None:
        self._report(cmd_stability(self.config))

    def bench(self) -> None:
        self._report(cmd_bench(self.config))


def parse_seeds(text: str) -> List[int]:
    """'0,1,2' or a range '0-4' (inclusive)."""
    try:
        if "-" in text:
            lo, hi = text.split("-", 1)
            return list(range(int(lo), int(hi) + 1))
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Invalid seed list {text!r}")


def build_parser(commands: Sequence[str]) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Learn PSD models of HMM kernels and run PSD filters")
    parser.add_argument("command", choices=list(commands))
    parser.add_argument("-c", "--config", help="Path to the JSON experiment config (not needed for help)")
    parser.add_argument("-o", "--out", help="Output directory (overrides output_dir)")
    parser.add_argument("--seeds", type=parse_seeds, help="Seeds as '0,1,2' or '0-4'")
    parser.add_argument("--grid", type=int, help="Grid resolution per dimension")
    parser.add_argument("--threads", type=int, help="Worker threads for independent runs")
    parser.add_argument("--record-wall-time", action="store_true", default=None,
                        help="Write measured wall times instead of zeros")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    runner = ExperimentRunner()
    args = build_parser(runner.command_names).parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    overrides = {
        "output_dir": args.out,
        "seeds": args.seeds,
        "grid": args.grid,
        "threads": args.threads,
        "record_wall_time": args.record_wall_time,
    }
    if args.command == "help":
        runner.display_commands()
        return EXIT_OK
    if args.config is None:
        logger.error("Invalid configuration: --config is required for %s", args.command)
        return EXIT_CONFIG
    try:
        runner.config = load_config(args.config, overrides)
        runner.execute_command(args.command)
    except ConfigError as e:
        logger.error("Invalid configuration: %s", e)
        return EXIT_CONFIG
    except (PsdFilterError, LinAlgError) as e:
        logger.error("Run failed: %s", e)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
