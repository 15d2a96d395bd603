"""
Logging configuration using Loguru
Structured logging with run context (run_id, command) on every record
"""
import sys
from pathlib import Path
from typing import Optional

from loguru import logger

from src.core.config import settings


def setup_logging(
    level: Optional[str] = None,
    log_dir: Optional[Path] = None,
    json_logs: Optional[bool] = None,
):
    """Configure logging for one process run"""
    level = level or settings.LOG_LEVEL
    json_logs = settings.LOG_JSON if json_logs is None else json_logs

    # Remove default handler
    logger.remove()

    console_format = (
        "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | "
        "<level>{level: <8}</level> | "
        "<cyan>{name}</cyan>:<cyan>{function}</cyan> | "
        "<dim>run:{extra[run_id]}</dim> - "
        "<level>{message}</level>"
    )

    json_format = (
        '{{"timestamp":"{time:YYYY-MM-DDTHH:mm:ss.SSSZ}",'
        '"level":"{level}",'
        '"logger":"{name}",'
        '"function":"{function}",'
        '"line":{line},'
        '"run_id":"{extra[run_id]}",'
        '"command":"{extra[command]}",'
        '"message":"{message}"}}'
    )

    logger.configure(extra={"run_id": "none", "command": "library"})

    # Console handler on stderr; stdout stays free for command output
    logger.add(sys.stderr, colorize=True, format=console_format, level=level)

    if log_dir is not None:
        log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        logger.add(
            str(log_dir / "margrad_{time:YYYY-MM-DD}.log"),
            rotation="100 MB",
            retention="10 days",
            level=level,
            format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function} | run:{extra[run_id]} - {message}",
        )
        if json_logs:
            logger.add(
                str(log_dir / "margrad_{time:YYYY-MM-DD}.json"),
                format=json_format,
                rotation="100 MB",
                level=level,
                serialize=False,
            )

    logger.debug(f"Logging configured (level={level}, dir={log_dir})")
    return logger

