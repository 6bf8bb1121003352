"""Exception types that must survive kernel-boundary wrapping."""


class MiniFvError(Exception):
    """Base for solver-domain errors; dispatched kernels re-raise these
    unchanged instead of wrapping them."""


class SingularPreconditionerError(MiniFvError):
    pass


class SolverBreakdownError(MiniFvError):
    def __init__(self, message, n_iterations=0):
        super().__init__(message)
        self.n_iterations = n_iterations


class AssemblyError(MiniFvError):
    pass
