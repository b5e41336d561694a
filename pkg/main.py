import argparse
import asyncio
import logging
import sys
import time
from typing import List, Optional

from dotenv import load_dotenv

from errfilt.config import ExperimentConfig, Mode, load_config
from errfilt.database import Database
from errfilt.errors import ConfigError
from errfilt.harness import Ledger, run_experiment
from errfilt.utils.logger import log_experiment, setup_logger
from errfilt.utils.utils import Utils

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="errfilt",
        description="Error-filtration plug-and-play QKD simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    helps = {
        "sweep": "visibility versus noise, Monte Carlo against closed form",
        "qkd": "BB84 sessions with sifted error rates and security verdicts",
        "eve": "random-replacement eavesdropper versus filtration",
    }
    for command, text in helps.items():
        p = sub.add_parser(command, help=text)
        p.add_argument("--config", metavar="PATH", help="key = value experiment file")
        p.add_argument("--seed", type=int, metavar="U64")
        p.add_argument("--sigma2", metavar="F", help="noise variance, a list or start:stop:step")
        p.add_argument("--trials", type=int, metavar="N")
        p.add_argument("--rounds", type=int, metavar="N")
        p.add_argument("--filtration", metavar="BOOL")
        p.add_argument("--n-pairs", type=int, metavar="N")
        p.add_argument("--out", metavar="PATH")
        p.add_argument("--workers", type=int, metavar="N")
        p.add_argument("--no-ledger", action="store_true", help="do not record the run in the ledger")
        p.add_argument("--log-level", metavar="LEVEL", help="overrides LOG_LEVEL")
    return parser


def overrides_from_args(args: argparse.Namespace) -> dict:
    """Flag values keyed like config file entries"""
    return {
        "mode": args.command,
        "seed": args.seed,
        "sigma2_grid": args.sigma2,
        "trials": args.trials,
        "rounds": args.rounds,
        "apparatus.filtration": args.filtration,
        "apparatus.n_pairs": args.n_pairs,
        "output_path": args.out,
        "workers": args.workers,
    }


async def execute(config: ExperimentConfig, use_ledger: bool) -> int:
    """Run one experiment, recording it in the ledger when enabled"""
    database = Database() if use_ledger else None
    run_id = None
    code, message = EXIT_OK, None
    started = time.perf_counter()

    try:
        if database:
            await database.initialize()
            run_id = await database.start_run(
                config.mode.value, config.seed, config.to_text(), config.output_path.as_posix()
            )

        output = await run_experiment(config, Ledger(database, run_id) if database else None)
        logging.info(f"Results written to {output} in {Utils.format_duration(time.perf_counter() - started)}")

    except ConfigError as e:
        logging.error(f"Configuration error: {e}")
        code, message = EXIT_CONFIG, str(e)
    except Exception as e:
        logging.error(f"Experiment failed: {e}")
        code, message = EXIT_RUNTIME, f"{type(e).__name__}: {e}"
    finally:
        log_experiment(config, success=code == EXIT_OK, elapsed=time.perf_counter() - started)
        if database and database.connection is not None:
            try:
                if run_id is not None:
                    await database.finish_run(run_id, code, message)
            except Exception as e:
                logging.error(f"Could not update the run ledger: {e}")
            await database.close()

    return code


async def main(argv: Optional[List[str]] = None) -> int:
    """Main function to run the simulator"""
    # Load environment variables
    load_dotenv()

    args = build_parser().parse_args(argv)

    # Setup logging
    setup_logger(args.log_level)

    try:
        config = load_config(args.config, overrides_from_args(args))
    except ConfigError as e:
        for problem in e.problems:
            logging.error(f"Configuration error: {problem}")
        return EXIT_CONFIG

    logging.info(f"Running {Mode(config.mode).command} with seed {config.seed}")
    try:
        return await execute(config, use_ledger=not args.no_ledger)
    except KeyboardInterrupt:
        logging.info("Simulator stopped by user")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(asyncio.run(main()))
