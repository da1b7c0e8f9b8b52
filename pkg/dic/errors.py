from typing import Any


class DiCError(Exception):
    """Base error. Every failure surfaced to the CLI is one of these."""

    code = "dic_error"

    def __init__(self, message: str, *, field: str | None = None, code: str | None = None, **context: Any):
        super().__init__(message)
        self.message = message
        self.field = field
        if code is not None:
            self.code = code
        self.context = context

    def to_line(self) -> str:
        """Render as one machine-parsable line."""
        parts = [f"error code={self.code}"]
        if self.field is not None:
            parts.append(f"field={self.field}")
        escaped = self.message.replace('"', "'").replace("\n", " ")
        parts.append(f'message="{escaped}"')
        for key, value in self.context.items():
            parts.append(f"{key}={value}")
        return " ".join(parts)


class ShapeError(DiCError):
    code = "shape_mismatch"


class ConfigError(DiCError):
    code = "invalid_config"


class GradientError(DiCError):
    code = "gradient_error"


class DiffusionError(DiCError):
    code = "diffusion_error"


class UnsupportedOperationError(DiCError):
    code = "unsupported_operation"


class CheckpointError(DiCError):
    code = "checkpoint_error"

    def __init__(self, message: str, *, path: str, **context: Any):
        super().__init__(message, path=path, **context)
        self.path = path


class TrainingDivergedError(DiCError):
    code = "training_diverged"

    def __init__(self, message: str, *, step: int, lr: float, grad_norm: float):
        super().__init__(message, step=step, lr=lr, grad_norm=grad_norm)
        self.step = step
        self.lr = lr
        self.grad_norm = grad_norm
