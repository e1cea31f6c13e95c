class SampleSizeError(ValueError):
    """Too few samples (or an empty series) for the requested statistic."""


class BandwidthError(ValueError):
    """The median heuristic found no spread in the pooled sample."""
