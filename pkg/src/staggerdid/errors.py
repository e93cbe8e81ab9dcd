"""Exception hierarchy.

Data problems derive from :class:`PanelError`; anything that goes wrong
while fitting derives from :class:`EstimationError`. The CLI maps the two
families to distinct exit codes.
"""


class StaggerError(Exception):
    """Base class for all package errors."""


class PanelError(StaggerError, ValueError):
    """Invalid or unusable input data."""


class MissingColumn(PanelError):
    pass


class DuplicateObservation(PanelError):
    pass


class NonIntegerPeriod(PanelError):
    pass


class EmptyDataset(PanelError):
    pass


class EmptyAfterFilter(PanelError):
    pass


class MissingRegionColumn(PanelError):
    pass


class NonBiennialWaves(PanelError):
    pass


class InconsistentUnitValue(PanelError):
    """A value that must be constant within a unit (cluster, adoption) varies."""


class InvalidConfig(StaggerError, ValueError):
    pass


class EstimationError(StaggerError, RuntimeError):
    """Failure while building or solving an estimation problem."""


class EmptyDesign(EstimationError):
    pass


class AllColumnsCollinear(EstimationError):
    pass


class NonConvergence(EstimationError):
    pass


class SingleCluster(EstimationError):
    pass


class SingularVcov(EstimationError):
    pass


class EmptyBin(EstimationError):
    pass


class NoCohorts(EstimationError):
    pass


class CellMismatch(EstimationError):
    pass


class DegeneratePanel(EstimationError):
    pass


class CollinearInteraction(EstimationError):
    pass
