"""Kernel density estimation of true predictives and grid-based divergences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSamples, DomainError, GridMismatch, NonFiniteError

KL_FLOOR = 1e-12


@dataclass
class DensityGrid:
    """Density values on a regular box grid (1D or 2D).

    ``axes`` holds one uniformly spaced coordinate vector per dimension and
    ``values`` the nonnegative density values with one axis per coordinate.
    The Riemann sum over the box must be within two percent of one (boundary
    truncation is allowed).
    """

    axes: tuple
    values: np.ndarray

    def __post_init__(self):
        self.axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != tuple(a.size for a in self.axes):
            raise GridMismatch("value shape does not match the axes")
        for axis in self.axes:
            if axis.size < 2:
                raise DomainError("each grid axis needs at least two points")
            steps = np.diff(axis)
            if np.any(np.abs(steps - steps[0]) > 1e-9 * abs(steps[0])):
                raise DomainError("grid axes must be uniformly spaced")
        if np.any(self.values < 0.0) or not np.all(np.isfinite(self.values)):
            raise DomainError("density values must be finite and nonnegative")
        mass = self.mass()
        if not 0.98 <= mass <= 1.02:
            raise DomainError(f"grid mass {mass:.4f} outside [0.98, 1.02]")

    @property
    def cell_volume(self) -> float:
        return float(np.prod([a[1] - a[0] for a in self.axes]))

    def mass(self) -> float:
        return float(self.values.sum()) * self.cell_volume

    def points(self) -> np.ndarray:
        """All grid coordinates as rows, in row-major order of ``values``."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])

    def to_csv(self, path):
        header = ",".join(f"y{i + 1}" for i in range(len(self.axes))) + ",density"
        rows = np.column_stack([self.points(), self.values.ravel()])
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(header + "\n")
            for row in rows:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def scott_bandwidths(samples: np.ndarray) -> np.ndarray:
    """Per-axis Scott bandwidths ``sd_j * m ** (-1 / (d + 4))``."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float).T).T
    m, d = samples.shape
    sd = samples.std(axis=0, ddof=1)
    if np.any(sd == 0.0):
        raise DegenerateSamples("zero variance along some axis")
    return sd * m ** (-1.0 / (d + 4))


def kde_axes(samples: np.ndarray, grid_size: int, lo=None, hi=None) -> tuple:
    """Uniform axes covering ``[min - 3h, max + 3h]`` of the samples per axis.

    Optional ``lo``/``hi`` widen the box (used to pool in extra points so a
    second density can be evaluated on the same grid without truncation).
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float).T).T
    h = scott_bandwidths(samples)
    low = samples.min(axis=0) if lo is None else np.minimum(samples.min(axis=0), lo)
    high = samples.max(axis=0) if hi is None else np.maximum(samples.max(axis=0), hi)
    return tuple(np.linspace(low[j] - 3.0 * h[j], high[j] + 3.0 * h[j], grid_size)
                 for j in range(samples.shape[1]))


def gaussian_kde(samples: np.ndarray, axes: tuple, chunk: int = 20000) -> DensityGrid:
    """Product-Gaussian kernel density estimate on a grid.

    One Gaussian kernel per axis with the Scott bandwidth of that axis.
    Supports one- and two-dimensional samples sets of at least 30 points.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float).T).T
    m, d = samples.shape
    if m < 30:
        raise DomainError(f"kernel density estimation needs at least 30 samples, got {m}")
    if d != len(axes):
        raise GridMismatch("sample dimension does not match the axes")
    h = scott_bandwidths(samples)

    def kernel_block(axis, col, bw):
        z = (axis[:, None] - col[None, :]) / bw
        return np.exp(-0.5 * z * z) / (bw * np.sqrt(2.0 * np.pi))

    if d == 1:
        total = np.zeros(axes[0].size)
        for start in range(0, m, chunk):
            total += kernel_block(axes[0], samples[start:start + chunk, 0], h[0]).sum(axis=1)
        return DensityGrid(axes=axes, values=total / m)
    if d == 2:
        total = np.zeros((axes[0].size, axes[1].size))
        for start in range(0, m, chunk):
            block0 = kernel_block(axes[0], samples[start:start + chunk, 0], h[0])
            block1 = kernel_block(axes[1], samples[start:start + chunk, 1], h[1])
            total += block0 @ block1.T
        return DensityGrid(axes=axes, values=total / m)
    raise DomainError("only one- and two-dimensional grids are supported")


def _check_same_grid(p: DensityGrid, q: DensityGrid):
    if len(p.axes) != len(q.axes) or any(a.size != b.size or not np.array_equal(a, b)
                                         for a, b in zip(p.axes, q.axes)):
        raise GridMismatch("density grids do not share the same axes")


def kl(p: DensityGrid, q: DensityGrid) -> float:
    """Riemann-sum Kullback-Leibler divergence KL(p || q), q floored at 1e-12."""
    _check_same_grid(p, q)
    qv = np.maximum(q.values, KL_FLOOR)
    mask = p.values > 0.0
    terms = p.values[mask] * (np.log(p.values[mask]) - np.log(qv[mask]))
    return float(terms.sum()) * p.cell_volume


def hellinger(p: DensityGrid, q: DensityGrid) -> float:
    """Riemann-sum Hellinger distance ``||sqrt(p) - sqrt(q)||_L2 / sqrt(2)``."""
    _check_same_grid(p, q)
    diff = np.sqrt(p.values) - np.sqrt(q.values)
    return float(np.sqrt(0.5 * np.sum(diff * diff) * p.cell_volume))


def total_variation(p: DensityGrid, q: DensityGrid) -> float:
    """Riemann-sum total variation distance ``||p - q||_L1 / 2``."""
    _check_same_grid(p, q)
    return 0.5 * float(np.sum(np.abs(p.values - q.values))) * p.cell_volume


def mean_negative_log_likelihood(mixtures, test_outputs: np.ndarray) -> float:
    """Mean negative predictive log-density, one mixture per test output row."""
    from .predict import mixture_logpdf

    test_outputs = np.atleast_2d(np.asarray(test_outputs, dtype=float))
    if len(mixtures) != test_outputs.shape[0]:
        raise DomainError("need exactly one predictive mixture per test output")
    total = 0.0
    for i, (mix, row) in enumerate(zip(mixtures, test_outputs)):
        val = mixture_logpdf(mix, row)
        if not np.isfinite(val):
            raise NonFiniteError(f"non-finite predictive log-density at test index {i}")
        total += val
    return -total / test_outputs.shape[0]
