"""Container for paired covariate/response samples and split helpers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Dataset:
    """A sample of covariates ``x`` with scalar responses ``y``.

    Parameters
    ----------
    x : np.ndarray
        Covariates, shape ``(n, d)``. A 1-d array is promoted to ``(n, 1)``.
    y : np.ndarray
        Responses, shape ``(n,)``.
    """

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise ValueError("x must be a 1-d or 2-d array")
        y = np.asarray(self.y, dtype=float).ravel()
        if x.shape[0] != y.shape[0]:
            raise ValueError(
                f"x has {x.shape[0]} rows but y has {y.shape[0]} entries"
            )
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.x.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        """Return the rows selected by ``indices`` as a new Dataset."""
        idx = np.asarray(indices)
        return Dataset(self.x[idx], self.y[idx])


def split_dataset(
    dataset: Dataset,
    n_train: int,
    n_cal: int,
    n_test: int | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[Dataset, Dataset, Dataset]:
    """Partition ``dataset`` into train / calibration / test pieces.

    Rows are taken in order unless ``rng`` is given, in which case a
    seeded permutation is applied first. ``n_test = None`` assigns all
    remaining rows to the test piece.
    """
    n = len(dataset)
    if n_test is None:
        n_test = n - n_train - n_cal
    if n_train <= 0 or n_cal <= 0 or n_test < 0:
        raise ValueError("split sizes must be positive (test may be zero)")
    if n_train + n_cal + n_test > n:
        raise ValueError(
            f"split sizes {n_train}+{n_cal}+{n_test} exceed dataset size {n}"
        )
    if rng is not None:
        order = rng.permutation(n)
        dataset = dataset.subset(order)
    a, b = n_train, n_train + n_cal
    c = b + n_test
    return (
        dataset.subset(np.arange(0, a)),
        dataset.subset(np.arange(a, b)),
        dataset.subset(np.arange(b, c)),
    )
