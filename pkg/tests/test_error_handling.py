"""Unit tests for the exception hierarchy and logging helpers."""
import pytest
from pydantic import ValidationError as PydanticValidationError

from config import RunConfig
from error_handling import (
    ArtifactError, ConfigError, ConvergenceError, ErrorHandler, ParseError, SearchError, ValidationError,
    log_exceptions, log_operation,
)


class TestExitCodes:
    """Test class for exception to exit-code mapping."""

    @pytest.mark.unit
    @pytest.mark.parametrize("error,expected", [
        (ValidationError("bad input"), 2),
        (ParseError("bad row", path="t.csv", line=4), 2),
        (ConfigError("no seed"), 2),
        (ConvergenceError("stuck", deviance=10.0, iterations=100), 3),
        (SearchError("all failed"), 3),
        (ArtifactError("cannot write"), 4),
        (FileNotFoundError("missing"), 4),
        (RuntimeError("boom"), 1),
    ])
    def test_exit_code(self, error, expected):
        """Test each failure class maps to its exit status."""
        assert ErrorHandler.exit_code(error) == expected

    @pytest.mark.unit
    def test_pydantic_errors_are_validation_errors(self):
        """Test invalid settings exit with the validation code."""
        with pytest.raises(PydanticValidationError) as excinfo:
            RunConfig(levels=0)

        payload = ErrorHandler.payload(excinfo.value)["error"]
        assert payload["exit_code"] == 2
        assert payload["code"] == "VALIDATION_ERROR"
        assert payload["details"]["errors"][0]["field"] == "levels"


class TestPayload:
    """Test class for machine-readable error payloads."""

    @pytest.mark.unit
    def test_parse_error_carries_location(self):
        """Test file and line travel with a parse error."""
        payload = ErrorHandler.payload(ParseError("t.csv:4: invalid value", path="t.csv", line=4))["error"]

        assert payload["code"] == "PARSE_ERROR"
        assert payload["error_type"] == "ParseError"
        assert payload["details"] == {"path": "t.csv", "line": 4}

    @pytest.mark.unit
    def test_missing_details_dropped(self):
        """Test unset detail fields are left out."""
        payload = ErrorHandler.payload(ConvergenceError("stuck", iterations=5))["error"]

        assert payload["details"] == {"iterations": 5}

    @pytest.mark.unit
    def test_unexpected_error(self):
        """Test an unknown exception gets the generic code."""
        payload = ErrorHandler.payload(KeyError("x"))["error"]

        assert payload["code"] == "UNEXPECTED_ERROR"
        assert payload["exit_code"] == 1


class TestLoggingHelpers:
    """Test class for logging decorators and context managers."""

    @pytest.mark.unit
    def test_log_exceptions_reraises(self):
        """Test the decorator logs and re-raises."""
        @log_exceptions("test")
        def failing():
            raise SearchError("nothing to choose")

        with pytest.raises(SearchError):
            failing()

    @pytest.mark.unit
    def test_log_exceptions_passes_result(self):
        """Test the decorator is transparent on success."""
        @log_exceptions()
        def succeed(x):
            return x * 2

        assert succeed(21) == 42

    @pytest.mark.unit
    def test_log_operation_reraises(self):
        """Test a failing operation propagates its exception."""
        with pytest.raises(ArtifactError):
            with log_operation("write", file="a.csv"):
                raise ArtifactError("disk full")
