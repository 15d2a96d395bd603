"""
Run context management for structured logging.

Provides run_id and command across the library so every log line of a CLI
invocation can be traced back to its output directory.
"""
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterator, Optional
import uuid

from loguru import logger


@dataclass
class RunContext:
    """
    Context data for the current run.

    Propagated through the whole command and included in all log messages.
    """
    command: str
    output_dir: Path
    seed: int
    run_id: str = field(default_factory=lambda: uuid.uuid4().hex[:12])
    start_time: datetime = field(default_factory=datetime.utcnow)

    def to_dict(self) -> dict:
        """Convert to dict for logging context"""
        return {
            "run_id": self.run_id,
            "command": self.command,
            "output_dir": str(self.output_dir),
            "seed": self.seed,
        }

    def elapsed_seconds(self) -> float:
        return (datetime.utcnow() - self.start_time).total_seconds()


_run_context: ContextVar[Optional[RunContext]] = ContextVar("run_context", default=None)


def get_run_context() -> Optional[RunContext]:
    """Get current run context"""
    return _run_context.get()


def get_run_id() -> str:
    ctx = get_run_context()
    return ctx.run_id if ctx else "none"


@contextmanager
def run_scope(ctx: RunContext) -> Iterator[RunContext]:
    """Bind the run context for the duration of a command"""
    token = _run_context.set(ctx)
    try:
        with logger.contextualize(run_id=ctx.run_id, command=ctx.command):
            logger.info(f"Run started: {ctx.command} -> {ctx.output_dir} (seed={ctx.seed})")
            yield ctx
            logger.info(f"Run finished in {ctx.elapsed_seconds():.1f}s")
    finally:
        _run_context.reset(token)
