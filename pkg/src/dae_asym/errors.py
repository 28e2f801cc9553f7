"""Exception types shared across the package."""


class DaeAsymError(Exception):
    """Base class for all package errors."""


class CommutativityViolation(DaeAsymError):
    def __init__(self, pair, norm):
        self.pair = pair
        self.norm = norm
        super().__init__(f"covariances {pair} do not commute (relative norm {norm:.3e})")


class NotPSD(DaeAsymError):
    pass


class DegenerateCluster(DaeAsymError):
    pass


class DegenerateProblem(DaeAsymError):
    pass


class ProxNoConvergence(DaeAsymError):
    def __init__(self, residual, node=None):
        self.residual = residual
        self.node = node
        super().__init__(f"prox solve did not converge (best residual {residual:.3e}, node {node})")


class SingularResolvent(DaeAsymError):
    def __init__(self, atom, min_eig):
        self.atom = atom
        self.min_eig = min_eig
        super().__init__(f"resolvent not positive definite at atom {atom} (min eigenvalue {min_eig:.3e})")


class NoConvergence(DaeAsymError):
    def __init__(self, residual_trace):
        self.residual_trace = list(residual_trace)
        last = self.residual_trace[-1] if self.residual_trace else float("nan")
        super().__init__(f"fixed point did not converge (last residual {last:.3e})")


class SingularCovariance(DaeAsymError):
    pass


class RankDeficient(DaeAsymError):
    pass


class Divergence(DaeAsymError):
    pass


class ConfigError(DaeAsymError):
    pass
