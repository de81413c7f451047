from typing import Any, List, Optional

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_IO = 2
EXIT_INVALID_INPUT = 3
EXIT_CONFIG = 4


class TinyFusionError(Exception):
    exit_code = EXIT_CHECK_FAILED


class AnnotationParseError(TinyFusionError, ValueError):
    exit_code = EXIT_INVALID_INPUT

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class AnnotationSchemaError(TinyFusionError, ValueError):
    exit_code = EXIT_INVALID_INPUT

    def __init__(self, message: str, field: str):
        super().__init__(message)
        self.field = field


class DatasetValidationError(TinyFusionError, ValueError):
    exit_code = EXIT_INVALID_INPUT

    def __init__(self, message: str, record_id: Optional[int] = None,
                 findings: Optional[List[Any]] = None):
        super().__init__(message)
        self.record_id = record_id
        self.findings = findings or []


class ConfigError(TinyFusionError, ValueError):
    exit_code = EXIT_CONFIG


class ShapeError(TinyFusionError, ValueError):
    def __init__(self, message: str, level: Optional[int] = None):
        super().__init__(message)
        self.level = level


class DomainError(TinyFusionError, ValueError):
    pass


class ReportIOError(TinyFusionError, OSError):
    exit_code = EXIT_IO


class InternalError(TinyFusionError, RuntimeError):
    pass
