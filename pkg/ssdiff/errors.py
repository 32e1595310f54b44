class SSDiffError(ValueError):
    def __init__(self, message: str, key: str | None = None) -> None:
        super().__init__(message)
        self.key = key

    def diagnostic(self) -> str:
        message = " ".join(str(self).split())
        if self.key:
            return f"{self.key}: {message}"
        return message


class ConfigError(SSDiffError):
    pass


class ShapeError(SSDiffError):
    pass


class ScheduleError(SSDiffError):
    pass


class DatasetError(SSDiffError):
    pass


class MetricError(SSDiffError):
    pass


class CheckpointError(SSDiffError):
    pass


class NonFiniteError(SSDiffError):
    pass


class NonFiniteLossError(NonFiniteError):
    pass
