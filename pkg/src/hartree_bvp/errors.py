class ConfigError(ValueError):
    """Invalid user configuration; ``problems`` lists every offending item."""

    def __init__(self, message, problems=None):
        super().__init__(message)
        self.message = message
        self.problems = list(problems) if problems else [message]

    def __str__(self):
        extra = [p for p in self.problems if p != self.message]
        return "; ".join([self.message, *extra]) if extra else self.message


class GridMismatchError(ValueError):
    pass


class CompatibilityError(ValueError):
    pass


class PicardDivergence(RuntimeError):
    """Inner fixed-point loop hit ``max_iters`` without converging."""

    def __init__(self, message, *, last_ratio=float("nan"), step_index=None, t=None):
        super().__init__(message)
        self.last_ratio = last_ratio
        self.step_index = step_index
        self.t = t


class BallEscape(RuntimeError):
    """Contraction-probe iterate left the ball of radius M."""

    def __init__(self, message, *, iteration, radius):
        super().__init__(message)
        self.iteration = iteration
        self.radius = radius
