"""Finite-sum objectives.

Optimizers only see the :class:`FiniteSum` surface: ``n_components``
component functions ``f_i`` (one per worker), their gradients, the average
``f``, and the constants ``L`` and ``mu``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LabeledDataset",
    "FiniteSum",
    "RidgeLogistic",
    "Quadratic",
    "sigmoid",
    "log1pexp",
]

_CHUNK = 8192


def sigmoid(x):
    """Overflow-free logistic function."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def log1pexp(x):
    """ln(1 + e^x) without overflow."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _weighted_rows_sum(weights: np.ndarray, rows: np.ndarray) -> np.ndarray:
    # fixed chunk order keeps the reduction reproducible; within a chunk each
    # output coordinate is a single dot product, independent of thread count
    out = np.zeros(rows.shape[1])
    for start in range(0, rows.shape[0], _CHUNK):
        stop = start + _CHUNK
        out += weights[start:stop] @ rows[start:stop]
    return out


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.float64).reshape(-1)
        if X.ndim != 2:
            raise ValueError("features must be a 2-d array")
        if X.shape[0] == 0:
            raise ValueError("dataset is empty")
        if X.shape[0] != y.size:
            raise ValueError(f"{X.shape[0]} feature rows but {y.size} labels")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        if not np.all(np.isfinite(X)):
            raise ValueError("features must be finite")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def z(self) -> np.ndarray:
        """Per-sample products x_i * y_i."""
        return self.features * self.labels[:, None]

    def subset(self, index) -> "LabeledDataset":
        return LabeledDataset(self.features[index], self.labels[index], dict(self.meta))


class FiniteSum:
    """f(w) = (1/N) sum_i f_i(w) with one component per worker."""

    n_components: int
    dim: int

    def loss(self, w) -> float:
        raise NotImplementedError

    def grad_component(self, w, i: int) -> np.ndarray:
        raise NotImplementedError

    def grad_components(self, w) -> np.ndarray:
        """All component gradients stacked, shape (N, d)."""
        return np.stack([self.grad_component(w, i) for i in range(self.n_components)])

    def grad_full(self, w) -> np.ndarray:
        raise NotImplementedError

    def smoothness_bound(self) -> float:
        raise NotImplementedError

    def strong_convexity(self) -> float:
        raise NotImplementedError

    def component_smoothness(self) -> float:
        """Largest Lipschitz constant over the component gradients."""
        raise NotImplementedError

    def gradient_box(self, param_center, param_radius) -> np.ndarray:
        """Per-coordinate bound on |g_i(w)| for w in the given box."""
        raise NotImplementedError

    def _check(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        if w.shape != (self.dim,):
            raise ValueError(f"expected a vector of length {self.dim}, got shape {w.shape}")
        return w


class RidgeLogistic(FiniteSum):
    """Logistic loss with an L2 penalty lam * ||w||^2.

    Without ``shards`` every sample is its own component.  With shards,
    component ``i`` is the mean loss over ``shards[i]``, and ``f`` is the
    unweighted mean of those components.
    """

    def __init__(self, dataset: LabeledDataset, lam: float = 0.1, shards=None):
        if lam < 0:
            raise ValueError("ridge weight must be nonnegative")
        self.dataset = dataset
        self.lam = float(lam)
        self.Z = dataset.z
        self.dim = dataset.dim
        n = dataset.n_samples
        if shards is None:
            self.shards = None
            self.n_components = n
            self._owner = np.arange(n)
            self._weight = np.full(n, 1.0 / n)
        else:
            shards = [np.asarray(s, dtype=np.int64) for s in shards]
            if any(s.size == 0 for s in shards):
                raise ValueError("empty shard")
            self.shards = shards
            self.n_components = len(shards)
            self._owner = np.empty(n, dtype=np.int64)
            self._weight = np.empty(n)
            for i, s in enumerate(shards):
                self._owner[s] = i
                self._weight[s] = 1.0 / (len(shards) * s.size)
        self._sq_norms = np.einsum("ij,ij->i", self.Z, self.Z)
        self._abs_max = np.abs(self.Z).max(axis=0)
        self._last = (None, None)

    def _margins(self, w: np.ndarray) -> np.ndarray:
        # loss and gradient are usually requested at the same point
        key = w.tobytes()
        if self._last[0] != key:
            self._last = (key, self.Z @ w)
        return self._last[1]

    def _rows(self, i: int) -> np.ndarray:
        return self.Z[i : i + 1] if self.shards is None else self.Z[self.shards[i]]

    def loss(self, w) -> float:
        w = self._check(w)
        margins = self._margins(w)
        return float(np.dot(self._weight, log1pexp(-margins)) + self.lam * np.dot(w, w))

    def loss_sample(self, w, i: int) -> float:
        w = self._check(w)
        return float(log1pexp(-self.Z[i] @ w) + self.lam * np.dot(w, w))

    def grad_sample(self, w, i: int) -> np.ndarray:
        w = self._check(w)
        z = self.Z[i]
        return -z * sigmoid(-(z @ w)) + 2.0 * self.lam * w

    def grad_component(self, w, i: int) -> np.ndarray:
        w = self._check(w)
        rows = self._rows(i)
        s = sigmoid(-(rows @ w))
        return -(rows * s[:, None]).mean(axis=0) + 2.0 * self.lam * w

    def grad_components(self, w) -> np.ndarray:
        w = self._check(w)
        if self.shards is not None:
            return super().grad_components(w)
        s = sigmoid(-(self.Z @ w))
        return -self.Z * s[:, None] + 2.0 * self.lam * w

    def grad_full(self, w) -> np.ndarray:
        w = self._check(w)
        s = sigmoid(-self._margins(w))
        return -_weighted_rows_sum(self._weight * s, self.Z) + 2.0 * self.lam * w

    def hessian(self, w) -> np.ndarray:
        w = self._check(w)
        m = self.Z @ w
        c = sigmoid(m) * sigmoid(-m) * self._weight
        return (self.Z * c[:, None]).T @ self.Z + 2.0 * self.lam * np.eye(self.dim)

    def smoothness_bound(self) -> float:
        return float(np.dot(self._weight, self._sq_norms) / 4.0 + 2.0 * self.lam)

    def strong_convexity(self) -> float:
        return 2.0 * self.lam

    def component_smoothness(self) -> float:
        if self.shards is None:
            return float(self._sq_norms.max() / 4.0 + 2.0 * self.lam)
        per = [self._sq_norms[s].mean() for s in self.shards]
        return float(max(per) / 4.0 + 2.0 * self.lam)

    def gradient_box(self, param_center, param_radius) -> np.ndarray:
        reach = np.abs(np.asarray(param_center)) + np.asarray(param_radius)
        return self._abs_max + 2.0 * self.lam * reach


class Quadratic(FiniteSum):
    """f_i(w) = 0.5 * ||w - a_i||^2; minimizer is the mean of the anchors."""

    def __init__(self, anchors):
        a = np.asarray(anchors, dtype=np.float64)
        if a.ndim == 1:
            a = a[:, None]
        self.anchors = a
        self.n_components, self.dim = a.shape

    def loss(self, w) -> float:
        w = self._check(w)
        return float(0.5 * np.mean(np.sum((w - self.anchors) ** 2, axis=1)))

    def grad_component(self, w, i: int) -> np.ndarray:
        return self._check(w) - self.anchors[i]

    def grad_components(self, w) -> np.ndarray:
        return self._check(w) - self.anchors

    def grad_full(self, w) -> np.ndarray:
        return self._check(w) - self.anchors.mean(axis=0)

    def hessian(self, w) -> np.ndarray:
        self._check(w)
        return np.eye(self.dim)

    def smoothness_bound(self) -> float:
        return 1.0

    def strong_convexity(self) -> float:
        return 1.0

    def component_smoothness(self) -> float:
        return 1.0

    def gradient_box(self, param_center, param_radius) -> np.ndarray:
        reach = np.abs(np.asarray(param_center)) + np.asarray(param_radius)
        return np.abs(self.anchors).max(axis=0) + reach
