class InfeasibleSampleError(ValueError):
    """A requested sample size r exceeds the records available."""

    def __init__(self, r: int, available: int):
        self.r = r
        self.available = available
        super().__init__(f"sample size r={r} exceeds the {available} records available in train and test")
