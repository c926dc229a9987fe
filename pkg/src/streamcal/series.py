"""Daily streamflow series with a validity mask."""

from dataclasses import dataclass, field

import numpy as np

from .forcing import as_dates, read_series_csv, write_series_csv


@dataclass
class StreamflowSeries:
    station: str
    dates: np.ndarray
    values: np.ndarray
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        self.dates = as_dates(self.dates)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.mask is None:
            self.mask = np.isfinite(self.values)
        self.mask = np.asarray(self.mask, dtype=bool)
        if not (self.dates.shape == self.values.shape == self.mask.shape) or self.dates.ndim != 1:
            raise ValueError("dates, values and mask must be 1-D and the same length")
        if self.dates.size > 1 and np.any(np.diff(self.dates).astype(np.int64) <= 0):
            raise ValueError("dates must be strictly increasing")
        v = self.values[self.mask]
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError(f"{self.station}: valid discharge must be finite and non-negative")

    def __len__(self):
        return self.dates.size

    def masked(self):
        """Values with invalid days set to NaN."""
        return np.where(self.mask, self.values, np.nan)

    def select(self, keep):
        return StreamflowSeries(self.station, self.dates[keep], self.values[keep], self.mask[keep])

    def replace(self, values, mask=None):
        return StreamflowSeries(self.station, self.dates.copy(), values, self.mask.copy() if mask is None else mask)

    def to_csv(self, path):
        write_series_csv(self.dates, self.masked(), path)

    @classmethod
    def from_csv(cls, path, station=None):
        dates, values = read_series_csv(path)
        return cls(station or str(path), dates, values)
