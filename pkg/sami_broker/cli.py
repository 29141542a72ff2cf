"""
Batch front door.

    sami-broker run --scenario latency_mix --policy sami --out results/
    sami-broker compare --scenario hot_cloud_service.json --seed 7 --out results/
    sami-broker validate --scenario my_scenario.json
    sami-broker schema

Exit codes: 0 on success, 2 for configuration or validation errors, 3 when no node
can host a service at setup. Messages go to standard error; only result files and
``schema`` output are written elsewhere.
"""

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

from sami_broker._error import (
    NoAdmissibleNode,
    ParseError,
    ScenarioValidationError,
    StandardViolation,
)
from sami_broker.metrics import write_reports
from sami_broker.registry import ServiceRegistry, validate_descriptors
from sami_broker.simulation import Policy, Simulation
from sami_broker.workload import (
    Scenario,
    load_packaged_scenario,
    load_scenario,
    packaged_scenarios,
    scenario_schema,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NO_PLACEMENT = 3

FORMATS = ("csv", "json", "both")

logger = logging.getLogger(__name__)


def _fail(message: str) -> None:
    sys.stderr.write(f"{message}\n")


def open_scenario(value: str) -> Scenario:
    """A scenario file path, or the name of a scenario shipped with the package."""
    if not Path(value).exists() and value in packaged_scenarios():
        return load_packaged_scenario(value)

    return load_scenario(value)


def _report_config_error(err: Exception) -> int:
    if isinstance(err, ScenarioValidationError):
        _fail(f"Scenario has {len(err.errors)} error(s):")
        for error in err.errors:
            _fail(f"  {error}")
    else:
        _fail(str(err))

    return EXIT_CONFIG


def _simulate(scenario: Scenario, policy: Policy, seed: Optional[int]):
    return Simulation(scenario, policy, seed).run()


def cmd_run(
    scenario_path: str,
    seed: Optional[int] = None,
    policy: str = Policy.SAMI.value,
    out_dir: str = ".",
    fmt: str = "both",
) -> int:
    try:
        scenario = open_scenario(scenario_path)
        report = _simulate(scenario, Policy(policy), seed)
    except (ParseError, ScenarioValidationError, StandardViolation) as err:
        return _report_config_error(err)
    except NoAdmissibleNode as err:
        _fail(str(err))
        return EXIT_NO_PLACEMENT

    for path in write_reports([report], out_dir, "metrics", fmt):
        logger.info("Wrote %s", path)

    return EXIT_OK


def cmd_compare(
    scenario_path: str,
    seed: Optional[int] = None,
    out_dir: str = ".",
    fmt: str = "csv",
    jobs: int = len(Policy),
) -> int:
    """Every policy under one seed; files are written only once all runs finished."""
    try:
        scenario = open_scenario(scenario_path)
        with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
            futures = [pool.submit(_simulate, scenario, policy, seed) for policy in Policy]
            reports = [future.result() for future in futures]
    except (ParseError, ScenarioValidationError, StandardViolation) as err:
        return _report_config_error(err)
    except NoAdmissibleNode as err:
        _fail(str(err))
        return EXIT_NO_PLACEMENT

    for path in write_reports(reports, out_dir, "compare", fmt):
        logger.info("Wrote %s", path)

    return EXIT_OK


def cmd_validate(scenario_path: str) -> int:
    try:
        scenario = open_scenario(scenario_path)
    except (ParseError, ScenarioValidationError) as err:
        return _report_config_error(err)

    registry = ServiceRegistry(vocabulary=scenario.tag_vocabulary())
    bodies = [service.model_dump(mode="json") for service in scenario.services]
    problems = []
    for body, response in zip(bodies, validate_descriptors(registry, bodies)):
        if response["ok"]:
            continue

        for violation in response["error"].get("violations", []):
            problems.append(f"{body['id']}: {violation['field']}: {violation['message']}")

    if problems:
        _fail(f"{len(problems)} violation(s):")
        for problem in problems:
            _fail(f"  {problem}")

        return EXIT_CONFIG

    sys.stdout.write(f"{scenario.name}: {len(bodies)} service(s) conform.\n")
    return EXIT_OK


def cmd_schema() -> int:
    sys.stdout.write(json.dumps(scenario_schema(), indent=2) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sami-broker", description="Three-tier service broker simulator"
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="More logging")
    commands = parser.add_subparsers(dest="command", required=True)

    def scenario_args(sub: argparse.ArgumentParser) -> None:
        sub.add_argument(
            "--scenario", required=True, help="Scenario JSON file or a shipped scenario name"
        )

    run = commands.add_parser("run", help="Simulate one policy")
    scenario_args(run)
    run.add_argument("--seed", type=int, help="Overrides the scenario seed")
    run.add_argument("--policy", choices=[p.value for p in Policy], default=Policy.SAMI.value)
    run.add_argument("--out", default=".", help="Output directory")
    run.add_argument("--format", choices=FORMATS, default="both", dest="fmt")

    compare = commands.add_parser("compare", help="Simulate every policy with one seed")
    scenario_args(compare)
    compare.add_argument("--seed", type=int, help="Overrides the scenario seed")
    compare.add_argument("--out", default=".", help="Output directory")
    compare.add_argument("--format", choices=FORMATS, default="csv", dest="fmt")
    compare.add_argument("--jobs", type=int, default=len(Policy), help="Parallel runs")

    validate = commands.add_parser("validate", help="Check a scenario and its services")
    scenario_args(validate)

    commands.add_parser("schema", help="Print the scenario JSON schema")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING
    logging.basicConfig(
        level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
    )

    if args.command == "run":
        return cmd_run(args.scenario, args.seed, args.policy, args.out, args.fmt)
    elif args.command == "compare":
        return cmd_compare(args.scenario, args.seed, args.out, args.fmt, args.jobs)
    elif args.command == "validate":
        return cmd_validate(args.scenario)

    return cmd_schema()


if __name__ == "__main__":
    raise SystemExit(main())
