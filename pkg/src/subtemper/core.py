"""Foundational types shared by all samplers: datasets with index-set views,
geometric temperature ladders, reproducible seeded RNG streams, and nested
subsample families.

Parameter vectors are plain 1-D float64 numpy arrays throughout the library.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "RngStream",
    "Dataset",
    "Ladder",
    "SubsampleFamily",
    "make_geometric_ladder",
    "subsample_sizes",
    "draw_nested_subsamples",
    "KERNEL_STREAM",
    "ACCEPT_STREAM",
    "SUBSAMPLE_STREAM",
    "INIT_STREAM",
    "SIMULATION_STREAM",
]

# Reserved substream indices.  Every chain owns one substream per purpose so
# that execution order (serial, threaded, or multi-process) can never change
# the draw sequence seen by any consumer.
KERNEL_STREAM = 0      # inner-kernel randomness, one substream per ladder level
ACCEPT_STREAM = 1      # swap / trajectory acceptance uniforms
SUBSAMPLE_STREAM = 2   # nested subsample draws
INIT_STREAM = 3        # chain initialization draws
SIMULATION_STREAM = 4  # dataset simulation


class RngStream:
    """Reproducible random stream keyed by ``(seed, stream_id)``.

    Identical ``(seed, stream_id)`` pairs produce identical draw sequences on
    every platform and under any thread count; distinct stream ids give
    statistically independent streams (numpy ``SeedSequence`` spawn keys).
    The stream is single-owner: never share one instance between concurrent
    tasks, derive a :meth:`substream` per task instead.

    Draw methods (``standard_normal``, ``random``, ``choice``, ...) are
    delegated to the underlying :class:`numpy.random.Generator`.
    """

    def __init__(self, seed: int, stream_id: int | tuple[int, ...] = ()):
        if isinstance(stream_id, (int, np.integer)):
            stream_id = (int(stream_id),)
        self.seed = int(seed)
        self.stream_id = tuple(int(k) for k in stream_id)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.stream_id)
        self.generator = np.random.default_rng(seq)

    def substream(self, *key: int) -> "RngStream":
        """Derive an independent child stream with the given key suffix."""
        return RngStream(self.seed, self.stream_id + tuple(int(k) for k in key))

    def __getattr__(self, name):
        # Delegate draw methods so an RngStream can be used wherever a
        # numpy Generator is accepted.
        return getattr(self.generator, name)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


@dataclass(frozen=True)
class Dataset:
    """Ordered collection of observations with optional scalar responses.

    ``X`` holds one row per observation (``N x D`` covariates); ``y`` is the
    length-``N`` response vector used by the GP regression model.  Row order
    is stable, and index arrays into the rows act as subsample views.
    """

    X: np.ndarray
    y: np.ndarray | None = None

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        object.__setattr__(self, "X", X)
        if self.y is not None:
            y = np.asarray(self.y, dtype=float).ravel()
            if y.shape[0] != X.shape[0]:
                raise ValueError(
                    f"response length {y.shape[0]} != row count {X.shape[0]}"
                )
            object.__setattr__(self, "y", y)
        if not np.all(np.isfinite(X)):
            raise ValueError("dataset contains non-finite covariates")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def full_indices(self) -> np.ndarray:
        return np.arange(self.n)

    def to_csv(self, path) -> None:
        """Write as CSV with header ``x1..xD[,y]`` in decimal floating point."""
        path = Path(path)
        cols = [f"x{d + 1}" for d in range(self.dim)]
        if self.y is not None:
            cols.append("y")
        with path.open("w", newline="") as fh:
            fh.write(",".join(cols) + "\n")
            for i in range(self.n):
                row = [repr(float(v)) for v in self.X[i]]
                if self.y is not None:
                    row.append(repr(float(self.y[i])))
                fh.write(",".join(row) + "\n")

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        path = Path(path)
        with path.open() as fh:
            header = fh.readline().strip().split(",")
            rows = [line.strip().split(",") for line in fh if line.strip()]
        has_y = header and header[-1] == "y"
        d = len(header) - (1 if has_y else 0)
        expected = [f"x{i + 1}" for i in range(d)]
        if header[:d] != expected:
            raise ValueError(f"unexpected CSV header {header!r}")
        data = np.array([[float(v) for v in r] for r in rows], dtype=float)
        if data.size == 0:
            data = data.reshape(0, len(header))
        if has_y:
            return cls(X=data[:, :d], y=data[:, d])
        return cls(X=data)


@dataclass(frozen=True)
class Ladder:
    """Inverse-temperature ladder ``beta_0 = 1 > beta_1 > ... > beta_M``.

    Geometric ladders are strictly decreasing for ``beta_star < 1``; equal
    adjacent values are tolerated (a swap between identical levels is a
    no-op accept) so that the degenerate all-ones ladder and float-rounding
    plateaus near 1 remain usable.  Increasing or non-positive entries are
    rejected.
    """

    betas: np.ndarray

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=float).ravel()
        object.__setattr__(self, "betas", betas)
        if betas.size < 1:
            raise ValueError("ladder must contain at least beta_0")
        if betas[0] != 1.0:
            raise ValueError(f"beta_0 must equal 1 exactly, got {betas[0]}")
        if np.any(betas <= 0.0):
            raise ValueError("all ladder values must be positive")
        if np.any(np.diff(betas) > 0.0):
            m = int(np.argmax(np.diff(betas) > 0.0)) + 1
            raise ValueError(
                f"ladder not decreasing at level {m}: "
                f"{betas[m - 1]} -> {betas[m]}"
            )

    @property
    def levels(self) -> int:
        """Number of auxiliary levels M (ladder length is M + 1)."""
        return self.betas.size - 1

    @property
    def beta_star(self) -> float:
        return float(self.betas[-1])

    def __len__(self) -> int:
        return self.betas.size

    def __getitem__(self, m) -> float:
        return float(self.betas[m])


def make_geometric_ladder(levels: int, beta_star: float) -> Ladder:
    """Build the geometric ladder ``beta_m = beta_star**(m / levels)``.

    Parameters
    ----------
    levels:
        Number of auxiliary levels M (at least 1); the ladder has M + 1
        entries including the target level ``beta_0 = 1``.
    beta_star:
        Coldest inverse temperature, in ``(0, 1]``.
    """
    levels = int(levels)
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    if not (0.0 < beta_star <= 1.0):
        raise ValueError(f"beta_star must lie in (0, 1], got {beta_star}")
    m = np.arange(levels + 1, dtype=float)
    betas = float(beta_star) ** (m / levels)
    betas[0] = 1.0
    return Ladder(betas=betas)


def subsample_sizes(ladder: Ladder, n: int) -> np.ndarray:
    """Per-level subsample sizes ``N_m = round(beta_m * N)``.

    Rounding is half away from zero, so e.g. 90.5 -> 91.  Raises if any level
    would receive zero observations (the ladder is too cold for the dataset).
    """
    n = int(n)
    if n < 1:
        raise ValueError(f"dataset size must be >= 1, got {n}")
    raw = ladder.betas * n
    sizes = np.floor(raw + 0.5).astype(int)
    sizes[0] = n
    if np.any(sizes == 0):
        m = int(np.argmax(sizes == 0))
        raise ValueError(
            f"subsample size at level {m} rounds to zero "
            f"(beta={ladder.betas[m]:g}, N={n}); use a warmer ladder"
        )
    return sizes


@dataclass(frozen=True)
class SubsampleFamily:
    """Nested index sets ``I_0 ⊇ I_1 ⊇ ... ⊇ I_M`` over one dataset.

    ``I_0`` is always the full index range; each deeper level is a subset of
    the previous one.  Index arrays are kept sorted so families compare
    canonically.
    """

    index_sets: list[np.ndarray]

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(s) for s in self.index_sets])

    def validate(self) -> None:
        """Audit the nesting invariant; raises on violation."""
        prev = None
        for m, idx in enumerate(self.index_sets):
            if len(np.unique(idx)) != len(idx):
                raise ValueError(f"duplicate indices at level {m}")
            if prev is not None and not np.isin(idx, prev).all():
                raise ValueError(f"level {m} is not nested in level {m - 1}")
            prev = idx


def draw_nested_subsamples(data: Dataset, sizes, rng) -> SubsampleFamily:
    """Draw a nested subsample family by recursive sampling without replacement.

    Each ``I_m`` is a uniformly random ``sizes[m]``-subset of ``I_{m-1}``;
    ``I_0`` is the full index set, so ``sizes[0]`` must equal the dataset
    size.  The draw is deterministic given the stream state.
    """
    sizes = np.asarray(sizes, dtype=int)
    if sizes[0] != data.n:
        raise ValueError(f"sizes[0]={sizes[0]} must equal dataset size {data.n}")
    if np.any(np.diff(sizes) > 0):
        raise ValueError("subsample sizes must be non-increasing")
    if np.any(sizes < 1):
        raise ValueError("subsample sizes must be positive")
    sets = [data.full_indices()]
    for m in range(1, sizes.size):
        drawn = rng.choice(sets[m - 1], size=int(sizes[m]), replace=False)
        sets.append(np.sort(drawn))
    return SubsampleFamily(index_sets=sets)


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
