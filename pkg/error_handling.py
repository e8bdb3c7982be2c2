"""Logging setup and error handling utilities."""
import logging
import sys
import uuid
from contextlib import contextmanager
from datetime import datetime, timezone
from functools import wraps
from typing import Any, Dict, Optional

import pydantic
import structlog


def setup_logging(level: str = "INFO", log_file: Optional[str] = None, colors: bool = True):
    """Configure structlog on top of stdlib logging, writing to stderr."""
    handlers: list[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file))

    logging.basicConfig(format="%(message)s", level=level, handlers=handlers, force=True)

    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.stdlib.PositionalArgumentsFormatter(),
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.contextvars.merge_contextvars,
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.dev.ConsoleRenderer(colors=colors and not log_file),
        ],
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )


class RunContextManager:
    """Binds run-scoped context (run id, command, config hash) to every log event."""

    @staticmethod
    def generate_run_id() -> str:
        return str(uuid.uuid4())[:8]

    @staticmethod
    def start(command: str, config_hash: str, seed: Optional[int] = None) -> str:
        run_id = RunContextManager.generate_run_id()
        structlog.contextvars.clear_contextvars()
        structlog.contextvars.bind_contextvars(
            run_id=run_id, command=command, config_hash=config_hash
        )
        structlog.get_logger("run").info("Run started", seed=seed)
        return run_id

    @staticmethod
    def finish(status: str = "ok"):
        structlog.get_logger("run").info("Run finished", status=status)
        structlog.contextvars.clear_contextvars()


# Exception hierarchy

class XwfError(Exception):
    """Base exception for the extraction toolkit."""

    code = "XWF_ERROR"
    exit_code = 1

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details


class ValidationError(XwfError):
    """Input or precondition violation."""

    code = "VALIDATION_ERROR"
    exit_code = 2


class ParseError(ValidationError):
    """Malformed row in an input file."""

    code = "PARSE_ERROR"

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        super().__init__(message, path=path, line=line)
        self.path = path
        self.line = line


class TrajectoryValidationError(ValidationError):
    code = "TRAJECTORY_INVALID"


class JoinError(ValidationError):
    code = "JOIN_ERROR"


class DegenerateDataError(ValidationError):
    code = "DEGENERATE_DATA"


class InsufficientDataError(ValidationError):
    code = "INSUFFICIENT_DATA"


class TooShortError(ValidationError):
    code = "TOO_SHORT"


class DegenerateScreeningError(ValidationError):
    code = "DEGENERATE_SCREENING"


class SplitError(ValidationError):
    code = "SPLIT_ERROR"


class UndefinedAucError(ValidationError):
    code = "UNDEFINED_AUC"


class ConfigError(ValidationError):
    code = "CONFIG_ERROR"


class ConvergenceError(XwfError):
    """Penalized IRLS did not converge."""

    code = "CONVERGENCE_ERROR"
    exit_code = 3

    def __init__(self, message: str, deviance: Optional[float] = None, iterations: Optional[int] = None):
        super().__init__(message, deviance=deviance, iterations=iterations)
        self.deviance = deviance
        self.iterations = iterations


class SearchError(XwfError):
    """Every candidate of a grid-search step failed."""

    code = "SEARCH_ERROR"
    exit_code = 3


class ArtifactError(XwfError):
    """Reading or writing an artifact failed."""

    code = "IO_ERROR"
    exit_code = 4


class ErrorHandler:
    """Maps exceptions to exit codes and machine-readable error payloads."""

    @staticmethod
    def exit_code(error: BaseException) -> int:
        if isinstance(error, XwfError):
            return error.exit_code
        if isinstance(error, pydantic.ValidationError):
            return ValidationError.exit_code
        if isinstance(error, OSError):
            return ArtifactError.exit_code
        return 1

    @staticmethod
    def payload(error: BaseException) -> Dict[str, Any]:
        if isinstance(error, XwfError):
            code = error.code
            message = error.message
            details = {k: v for k, v in error.details.items() if v is not None}
        elif isinstance(error, pydantic.ValidationError):
            code = ValidationError.code
            message = "Invalid configuration"
            details = {"errors": [
                {"field": ".".join(str(p) for p in e["loc"]), "message": e["msg"]}
                for e in error.errors()
            ]}
        elif isinstance(error, OSError):
            code = ArtifactError.code
            message = str(error)
            details = {"filename": getattr(error, "filename", None)}
        else:
            code = "UNEXPECTED_ERROR"
            message = str(error)
            details = {}

        return {
            "error": {
                "code": code,
                "message": message,
                "error_type": type(error).__name__,
                "exit_code": ErrorHandler.exit_code(error),
                "details": details,
            }
        }


def log_exceptions(logger_name: Optional[str] = None):
    """Decorator to log exceptions in functions."""
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            logger = structlog.get_logger(logger_name or func.__name__)
            try:
                return func(*args, **kwargs)
            except Exception as e:
                logger.error("Function execution failed",
                             function=func.__name__,
                             error_type=type(e).__name__,
                             error=str(e),
                             kwargs_keys=list(kwargs.keys()))
                raise
        return wrapper
    return decorator


@contextmanager
def log_operation(operation_name: str, logger_name: Optional[str] = None, **context):
    """Context manager to log operation start/end with timing."""
    logger = structlog.get_logger(logger_name or "operation")
    start_time = datetime.now(timezone.utc)

    logger.debug("Operation started", operation=operation_name, **context)

    try:
        yield
        duration = (datetime.now(timezone.utc) - start_time).total_seconds()
        logger.info("Operation completed",
                    operation=operation_name,
                    duration_seconds=round(duration, 3),
                    **context)
    except Exception as e:
        duration = (datetime.now(timezone.utc) - start_time).total_seconds()
        logger.error("Operation failed",
                     operation=operation_name,
                     duration_seconds=round(duration, 3),
                     error_type=type(e).__name__,
                     error=str(e),
                     **context)
        raise
