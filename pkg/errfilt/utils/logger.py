import logging
import os
from pathlib import Path
from typing import Optional

import colorlog
import humanize

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"
LEVEL_COLORS = {
    "DEBUG": "cyan",
    "INFO": "green",
    "WARNING": "yellow",
    "ERROR": "red",
    "CRITICAL": "red,bg_white",
}
QUIET_LOGGERS = ("aiosqlite", "asyncio")


def _file_handler(path: Path, level: int = logging.NOTSET) -> logging.Handler:
    handler = logging.FileHandler(path, encoding="utf-8")
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT))
    return handler


def setup_logger(level: Optional[str] = None, log_dir: Path = Path("logs")):
    """Route experiment logs to the console and to logs/errfilt.log, errors also to logs/error.log.

    An explicit level wins over LOG_LEVEL. Calling it again replaces the handlers.
    """
    log_dir.mkdir(parents=True, exist_ok=True)
    log_level = (level or os.getenv("LOG_LEVEL", "INFO")).upper()

    console_handler = logging.StreamHandler()
    console_handler.setFormatter(
        colorlog.ColoredFormatter(f"%(log_color)s{LOG_FORMAT}", datefmt=DATE_FORMAT, log_colors=LEVEL_COLORS)
    )

    logging.basicConfig(
        level=getattr(logging, log_level, logging.INFO),
        handlers=[
            console_handler,
            _file_handler(log_dir / "errfilt.log"),
            _file_handler(log_dir / "error.log", logging.ERROR),
        ],
        force=True,
    )

    for name in QUIET_LOGGERS:
        logging.getLogger(name).setLevel(logging.WARNING)


def get_logger(name):
    """Get a logger with the specified name"""
    return logging.getLogger(name)


def log_experiment(config, success=True, elapsed: Optional[float] = None):
    """Log an experiment run"""
    logger = get_logger("experiments")

    duration = humanize.precisedelta(elapsed, minimum_unit="milliseconds") if elapsed is not None else "n/a"
    message = (
        f"Experiment {'finished' if success else 'failed'} - Mode: {config.mode.value}, "
        f"Seed: {config.seed}, Grid: {len(config.sigma2_grid)} point(s), "
        f"Trials: {humanize.intcomma(config.trials)}, Rounds: {humanize.intcomma(config.rounds)}, "
        f"Duration: {duration}"
    )

    if success:
        logger.info(message)
    else:
        logger.warning(message)


def log_session_summary(label, summary):
    """Log the outcome of one QKD session"""
    logger = get_logger("sessions")

    if summary.sifted == 0:
        logger.warning(
            f"Session {label} - Rounds: {humanize.intcomma(summary.rounds)}, "
            f"Clicks: {humanize.intcomma(summary.clicks)}, no sifted bits"
        )
        return

    message = (
        f"Session {label} - Rounds: {humanize.intcomma(summary.rounds)}, "
        f"Clicks: {humanize.intcomma(summary.clicks)}, "
        f"Sifted: {humanize.intcomma(summary.sifted)}, "
        f"BER: {summary.ber:.4f} +/- {summary.ci95:.4f}, "
        f"Verdict: {summary.verdict.value}"
    )

    logger.info(message)
