"""Exception types shared across the toolkit."""


class StreamcalError(Exception):
    """Base class for all toolkit errors."""


class InvalidGrid(StreamcalError):
    pass


class InvalidOutlet(StreamcalError):
    pass


class CyclicFlow(StreamcalError):
    def __init__(self, cell):
        self.cell = tuple(int(i) for i in cell)
        super().__init__(f"flow directions contain a cycle through cell {self.cell}")


class MissingDoy(StreamcalError):
    def __init__(self, doy):
        self.doy = int(doy)
        super().__init__(f"no samples fall on day-of-year {self.doy}")


class OutOfBounds(StreamcalError):
    def __init__(self, name, value, lo, hi):
        self.name = name
        super().__init__(f"parameter {name}={value} outside [{lo}, {hi}]")


class MissingForcing(StreamcalError):
    def __init__(self, date):
        self.date = date
        super().__init__(f"forcing missing on {date}")


class ShapeError(StreamcalError, ValueError):
    pass


class SingularSystem(StreamcalError):
    pass


class SimulationFailed(StreamcalError):
    """A forward run failed while perturbing one parameter."""

    def __init__(self, parameter, value, cause):
        self.parameter = parameter
        self.value = value
        super().__init__(f"simulation failed with {parameter}={value}: {cause}")


class DivergedTraining(StreamcalError):
    def __init__(self, iteration):
        self.iteration = int(iteration)
        super().__init__(f"training loss became non-finite at iteration {self.iteration}")


class StageFailed(StreamcalError):
    def __init__(self, stage, cause, manifest=None):
        self.stage = stage
        self.manifest = manifest
        super().__init__(f"stage {stage!r} failed: {cause}")


class MetricUndefined(StreamcalError):
    """A skill score whose denominator vanishes on the evaluated samples."""

    metric = "metric"


class NseUndefined(MetricUndefined):
    metric = "nse"


class CorUndefined(MetricUndefined):
    metric = "cor"


class DiffUndefined(MetricUndefined):
    metric = "diff_pct"
