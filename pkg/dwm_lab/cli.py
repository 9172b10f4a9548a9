import argparse
import os

from dwm_lab.algo.errors import ConfigurationError
from dwm_lab.algo.utils import get_version
from dwm_lab.lab.lab_runner import LabRunner, commands
from dwm_lab.log import get_logger, setup_logger

log_level = os.environ.get("LOG_LEVEL", "INFO")
setup_logger(log_level)

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_ERROR = 3


def set_parser():
    parser = argparse.ArgumentParser(description='Dynamic watermarking lab for cyber-physical systems', usage=
    """\
    Usage: dwm-lab [--config=<file>] <command> [--section.key=value ...].
    For example:
    - dwm-lab simulate --attack.kind=replay --watermark.variance=1e-4
    - dwm-lab --config=motor.toml train
    - dwm-lab benchmark --config.replications=40
    - dwm-lab sweep --sweep.episodes=5

    Supported commands:
    - identify - Fit ARX(1,1) and GMM control surrogates per operating point from logged y/u series.

    - simulate - Run seeded episodes of the configured twin, attack and watermark policy, writing traces.

    - train - Train the DDPG watermark policy and write a checkpoint and a learning curve.

    - evaluate - Estimate ARL0, ARL1, energy and degradation of the configured policy on held-out seeds.

    - benchmark - Compare no watermark, constant variances and the trained policy, with a markdown report.

    - sweep - Detection belief and degradation over a grid of constant variances.


    Configuration:
    Every parameter of 'configuration.toml' can be overridden with --<section>.<key>=<value>.
    DWM_LAB_OUTPUT_DIR overrides config.output_dir.
    """)
    parser.add_argument('--version', action='version', version=f'dwm-lab {get_version()}')
    parser.add_argument('--config', type=str, help='TOML, YAML or JSON file overriding the defaults', default=None)
    parser.add_argument('command', type=str, help='The lab command to run', choices=commands)
    parser.add_argument('rest', nargs=argparse.REMAINDER, default=[])
    return parser


def run(inargs=None, args=None) -> int:
    parser = set_parser()
    if not args:
        args = parser.parse_args(inargs)
    command = args.command.lower()
    try:
        output = LabRunner(config_file=args.config).handle_request([command] + args.rest)
    except ConfigurationError as e:
        get_logger().error(f"Configuration error: {e}")
        return EXIT_CONFIG_ERROR
    except Exception as e:
        get_logger().exception(f"dwm-lab {command} failed: {e}")
        return EXIT_RUNTIME_ERROR
    get_logger().info(f"Output: {output}")
    return EXIT_OK


def main():
    raise SystemExit(run())


if __name__ == '__main__':
    main()
