"""Exception hierarchy shared by every module of the package."""


class PencilConsensusError(Exception):
    """Base class for all errors raised by this package."""


# graph

class TopologyError(PencilConsensusError, ValueError):
    pass


class NotSymmetricAdjacency(TopologyError):
    pass


class DisconnectedOrUnpinned(TopologyError):
    """lambda_min of the pinned Laplacian is not positive.

    Either the follower graph is disconnected or no follower hears the leader;
    in both cases the consensus guarantees do not apply.
    """


# linear algebra

class MatrixError(PencilConsensusError, ValueError):
    pass


class NotSymmetric(MatrixError):
    pass


class SingularQ2(MatrixError):
    pass


class NotSPD(MatrixError):
    pass


class NotSND(MatrixError):
    pass


class NotHurwitz(MatrixError):
    def __init__(self, name, abscissa):
        self.name = name
        self.abscissa = abscissa
        super().__init__(
            f"{name} is not Hurwitz (max real part of eigenvalues = {abscissa:.3e})"
        )


# synthesis

class SensitivityInadmissible(PencilConsensusError, ValueError):
    def __init__(self, dtheta, admissible):
        self.dtheta = dtheta
        self.admissible = admissible
        super().__init__(
            f"worst-case sensitivity error {dtheta:.6g} exceeds the admissible "
            f"bound 1/|P_c A_g| = {admissible:.6g}"
        )


# time axis

class OutOfDomain(PencilConsensusError, ValueError):
    pass


# simulation

class SimulationError(PencilConsensusError, RuntimeError):
    pass


class NonFiniteState(SimulationError):
    def __init__(self, t, agent):
        self.t = t
        self.agent = agent
        super().__init__(f"non-finite state for agent {agent} at t = {t:.9g}")


class StepUnderflow(SimulationError):
    pass


class StepBudgetExceeded(SimulationError):
    def __init__(self, required, budget):
        self.required = required
        self.budget = budget
        super().__init__(
            f"explicit integration needs about {required:.3g} steps, "
            f"more than the budget of {budget:.3g}"
        )


# configuration

class ConfigError(PencilConsensusError):
    pass


class ConfigParseError(ConfigError):
    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class ValidationError(ConfigError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))
