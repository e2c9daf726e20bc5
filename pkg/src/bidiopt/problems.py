"""Distributed objectives: synthetic quadratics and multiclass logistic regression.

A distributed problem is n worker objectives f_i with gradient oracles; the
global objective is their plain average, always reduced in ascending worker
order so results are reproducible bit-for-bit.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Dataset",
    "SmoothnessConstants",
    "DistributedProblem",
    "QuadraticSpec",
    "QuadraticProblem",
    "LogRegProblem",
    "parse_libsvm",
    "load_dataset",
    "save_dataset_cache",
    "load_dataset_cache",
    "dataset_hash",
    "partition",
    "logreg_value",
    "logreg_grad",
    "make_quadratic",
    "make_logreg",
    "estimate_constants",
    "reference_minimize",
    "mean_in_index_order",
]

_CACHE_MAGIC = b"BDC1"
_CACHE_HEADER = struct.Struct("<4sHIIH")  # magic, version, m, d_feat, c


def mean_in_index_order(values):
    """Average a list in ascending index order (fixed summation order)."""
    acc = np.array(values[0], dtype=float, copy=True)
    for v in values[1:]:
        acc += v
    acc /= len(values)
    if acc.ndim == 0:
        return float(acc)
    return acc


@dataclass
class Dataset:
    """Sparse feature rows with class labels in [0, num_classes)."""

    features: sp.csr_matrix
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("feature/label row counts differ")
        if self.features.shape[0] < 1:
            raise ValueError("dataset must contain at least one sample")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels out of range")

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def d_feat(self) -> int:
        return self.features.shape[1]


def parse_libsvm(text) -> Dataset:
    """Parse LIBSVM/SVMlight text: `<label> <idx>:<val> ...` per line.

    Indices are 1-based and must be ascending within a line.  Raw labels are
    remapped to 0..c-1 by ascending numeric order of the distinct values;
    d_feat is the largest index seen.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    raw_labels = []
    data, indices, indptr = [], [], [0]
    d_feat = 0
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        tokens = line.split()
        try:
            raw_labels.append(float(tokens[0]))
        except ValueError as exc:
            raise ValueError(f"line {ln}: bad label {tokens[0]!r}") from exc
        prev = 0
        for tok in tokens[1:]:
            try:
                idx_s, val_s = tok.split(":", 1)
                idx = int(idx_s)
                val = float(val_s)
            except ValueError as exc:
                raise ValueError(f"line {ln}: bad feature token {tok!r}") from exc
            if idx < 1:
                raise ValueError(f"line {ln}: feature index {idx} is not 1-based")
            if idx <= prev:
                raise ValueError(f"line {ln}: feature indices not ascending at {idx}")
            prev = idx
            indices.append(idx - 1)
            data.append(val)
            d_feat = max(d_feat, idx)
        indptr.append(len(indices))
    if not raw_labels:
        raise ValueError("empty dataset")
    distinct = sorted(set(raw_labels))
    remap = {v: i for i, v in enumerate(distinct)}
    labels = np.array([remap[v] for v in raw_labels], dtype=np.int64)
    features = sp.csr_matrix(
        (np.array(data, dtype=np.float64), np.array(indices, dtype=np.int64), np.array(indptr, dtype=np.int64)),
        shape=(len(raw_labels), d_feat),
    )
    return Dataset(features, labels, num_classes=max(2, len(distinct)))


def save_dataset_cache(path, ds: Dataset) -> None:
    """Write the raw little-endian binary cache (16-byte header + arrays)."""
    feats = ds.features.tocsr()
    with open(path, "wb") as fh:
        fh.write(_CACHE_HEADER.pack(_CACHE_MAGIC, 1, ds.num_samples, ds.d_feat, ds.num_classes))
        fh.write(ds.labels.astype("<i8").tobytes())
        fh.write(feats.indptr.astype("<i8").tobytes())
        fh.write(np.asarray(feats.indices, dtype="<i8").tobytes())
        fh.write(feats.data.astype("<f8").tobytes())


def load_dataset_cache(path) -> Dataset:
    with open(path, "rb") as fh:
        header = fh.read(_CACHE_HEADER.size)
        magic, version, m, d_feat, c = _CACHE_HEADER.unpack(header)
        if magic != _CACHE_MAGIC:
            raise ValueError("not a dataset cache file")
        if version != 1:
            raise ValueError(f"unsupported cache version {version}")
        labels = np.frombuffer(fh.read(8 * m), dtype="<i8").copy()
        indptr = np.frombuffer(fh.read(8 * (m + 1)), dtype="<i8").copy()
        nnz = int(indptr[-1])
        indices = np.frombuffer(fh.read(8 * nnz), dtype="<i8").copy()
        data = np.frombuffer(fh.read(8 * nnz), dtype="<f8").copy()
    features = sp.csr_matrix((data, indices, indptr), shape=(m, d_feat))
    return Dataset(features, labels, num_classes=c)


def load_dataset(path) -> Dataset:
    """Load a dataset from LIBSVM text or from the binary cache format."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == _CACHE_MAGIC:
        return load_dataset_cache(path)
    with open(path, "rb") as fh:
        return parse_libsvm(fh.read())


def dataset_hash(ds: Dataset) -> str:
    """Content hash of a dataset (keys the f* reference cache)."""
    feats = ds.features.tocsr()
    h = hashlib.sha256()
    h.update(struct.pack("<III", ds.num_samples, ds.d_feat, ds.num_classes))
    h.update(ds.labels.astype("<i8").tobytes())
    h.update(feats.indptr.astype("<i8").tobytes())
    h.update(np.asarray(feats.indices, dtype="<i8").tobytes())
    h.update(feats.data.astype("<f8").tobytes())
    return h.hexdigest()


def partition(ds: Dataset, n: int, scheme: str = "contiguous") -> list:
    """Split into n disjoint shards covering the dataset, sizes differing <= 1."""
    if n < 1:
        raise ValueError("need at least one worker")
    m = ds.num_samples
    if n > m:
        raise ValueError(f"cannot split {m} samples over {n} workers")
    if scheme == "contiguous":
        rows = np.array_split(np.arange(m), n)
    elif scheme == "round_robin":
        rows = [np.arange(j, m, n) for j in range(n)]
    else:
        raise ValueError(f"unknown partition scheme {scheme!r}")
    return [Dataset(ds.features[r], ds.labels[r], ds.num_classes) for r in rows]


def _logits(shard: Dataset, weights: np.ndarray) -> np.ndarray:
    c, d_feat = shard.num_classes, shard.d_feat
    if weights.shape != (c * d_feat,):
        raise ValueError(f"weights must have dim {c * d_feat}, got {weights.shape}")
    W = weights.reshape(c, d_feat)
    return np.asarray(shard.features @ W.T)


def logreg_value(shard: Dataset, weights: np.ndarray) -> float:
    """Average multiclass cross-entropy of the stacked weight vector.

    Computed with a max-shifted log-sum-exp for stability.
    """
    Z = _logits(shard, weights)
    m = shard.num_samples
    zmax = Z.max(axis=1)
    lse = zmax + np.log(np.exp(Z - zmax[:, None]).sum(axis=1))
    true = Z[np.arange(m), shard.labels]
    return float(np.mean(lse - true))


def logreg_grad(shard: Dataset, weights: np.ndarray) -> np.ndarray:
    """Gradient of logreg_value; class-y block is (1/m) sum_j (p_jy - 1{y=y_j}) a_j."""
    Z = _logits(shard, weights)
    m = shard.num_samples
    Z -= Z.max(axis=1)[:, None]
    P = np.exp(Z)
    P /= P.sum(axis=1)[:, None]
    P[np.arange(m), shard.labels] -= 1.0
    G = np.asarray(shard.features.T @ P).T / m
    return G.ravel()


def logreg_value_grad(shard: Dataset, weights: np.ndarray) -> tuple[float, np.ndarray]:
    """Value and gradient sharing one logits pass (for the reference solver)."""
    Z = _logits(shard, weights)
    m = shard.num_samples
    zmax = Z.max(axis=1)
    Z -= zmax[:, None]
    expz = np.exp(Z)
    sums = expz.sum(axis=1)
    val = float(np.mean(np.log(sums) - Z[np.arange(m), shard.labels]))
    P = expz / sums[:, None]
    P[np.arange(m), shard.labels] -= 1.0
    G = np.asarray(shard.features.T @ P).T / m
    return val, G.ravel()


def pooled_dataset(shards: list) -> Dataset:
    """Concatenate shards back into one dataset (the pooled-data oracle)."""
    feats = sp.vstack([s.features for s in shards], format="csr")
    labels = np.concatenate([s.labels for s in shards])
    return Dataset(feats, labels, shards[0].num_classes)


@dataclass(frozen=True)
class SmoothnessConstants:
    """Smoothness/strong-convexity constants: mu <= L <= Lhat_bound <= L_max <= n L."""

    L: float
    L_max: float
    Lhat_bound: float
    mu: float

    def validate(self, n: int) -> None:
        slack = 1.0 + 1e-9
        if not (self.mu <= self.L * slack and self.L <= self.Lhat_bound * slack
                and self.Lhat_bound <= self.L_max * slack and self.L_max <= n * self.L * slack):
            raise ValueError(f"constants violate mu <= L <= Lhat <= L_max <= nL: {self}")


class DistributedProblem:
    """Base class: n workers, model dimension, per-worker value/grad oracles."""

    def __init__(self, n: int, dim: int, constants: SmoothnessConstants):
        self.n = n
        self.dim = dim
        constants.validate(n)
        self.constants = constants

    # per-worker oracles; subclasses implement
    def value_worker(self, i: int, x: np.ndarray) -> float:
        raise NotImplementedError

    def grad_worker(self, i: int, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def value(self, x: np.ndarray) -> float:
        return mean_in_index_order([self.value_worker(i, x) for i in range(self.n)])

    def grad(self, x: np.ndarray) -> np.ndarray:
        return mean_in_index_order([self.grad_worker(i, x) for i in range(self.n)])


@dataclass(frozen=True)
class QuadraticSpec:
    """Recipe for a synthetic quadratic instance.

    When matrices/shifts are omitted they are generated from the seed with
    per-worker spectra inside [mu, L]; the generated global curvature attains
    both ends exactly.  Explicit matrices may have per-worker eigenvalues
    outside [mu, L] as long as the averaged matrix stays inside.
    """

    dim: int
    n: int
    mu: float
    L: float
    seed: int = 0
    matrices: Optional[np.ndarray] = None
    shifts: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.mu > self.L:
            raise ValueError("need mu <= L")
        if self.mu < 0 or self.L <= 0:
            raise ValueError("need 0 <= mu and L > 0")
        if self.dim < 1 or self.n < 1:
            raise ValueError("dim and n must be positive")


class QuadraticProblem(DistributedProblem):
    def __init__(self, matrices: np.ndarray, shifts: np.ndarray,
                 constants: Optional[SmoothnessConstants] = None):
        matrices = np.asarray(matrices, dtype=float)
        shifts = np.asarray(shifts, dtype=float)
        n, dim = shifts.shape
        self.matrices = matrices
        self.shifts = shifts
        self.hessian = mean_in_index_order(list(matrices))
        self.shift_mean = mean_in_index_order(list(shifts))
        if constants is None:
            constants = _quadratic_constants(matrices, self.hessian)
        super().__init__(n, dim, constants)
        self.x_star = self._solve_x_star()
        self.f_star = self.value(self.x_star)

    def _solve_x_star(self) -> np.ndarray:
        if self.constants.mu > 0:
            return np.linalg.solve(self.hessian, self.shift_mean)
        sol, *_ = np.linalg.lstsq(self.hessian, self.shift_mean, rcond=None)
        return sol

    def value_worker(self, i: int, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.matrices[i] @ x) - self.shifts[i] @ x)

    def grad_worker(self, i: int, x: np.ndarray) -> np.ndarray:
        return self.matrices[i] @ x - self.shifts[i]


def _quadratic_constants(matrices: np.ndarray, hessian: np.ndarray) -> SmoothnessConstants:
    eigs = np.linalg.eigvalsh(hessian)
    L_max = max(float(np.linalg.eigvalsh(A)[-1]) for A in matrices)
    mu = max(float(eigs[0]), 0.0)
    return SmoothnessConstants(L=float(eigs[-1]), L_max=L_max, Lhat_bound=L_max, mu=mu)


def _random_orthogonal(rng: np.random.Generator, d: int) -> np.ndarray:
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    return Q * np.sign(np.diag(R))


def make_quadratic(spec: QuadraticSpec) -> QuadraticProblem:
    """Build the distributed quadratic described by spec.

    Generated mode gives every worker the eigenvalues {L, mu} on shared
    extreme directions plus log-uniform middle spectrum, so the averaged
    Hessian has spectrum in [mu, L] with both ends attained; x* is planted.
    """
    if spec.matrices is not None:
        matrices = np.asarray(spec.matrices, dtype=float)
        shifts = (np.zeros((spec.n, spec.dim)) if spec.shifts is None
                  else np.asarray(spec.shifts, dtype=float))
        return QuadraticProblem(matrices, shifts)

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(spec.seed)))
    d, n, mu, L = spec.dim, spec.n, spec.mu, spec.L
    if d == 1:
        matrices = np.full((n, 1, 1), L)
        basis_last = np.ones(1)
    else:
        V = _random_orthogonal(rng, d)
        lo = mu if mu > 0 else 1e-6 * L
        matrices = np.empty((n, d, d))
        for i in range(n):
            spectrum = np.empty(d)
            spectrum[0] = L
            spectrum[-1] = mu
            if d > 2:
                spectrum[1:-1] = np.exp(rng.uniform(math.log(lo), math.log(L), size=d - 2))
            basis = V
            if d > 2:
                W = np.eye(d)
                W[1:-1, 1:-1] = _random_orthogonal(rng, d - 2)
                basis = V @ W
            A = (basis * spectrum) @ basis.T
            matrices[i] = 0.5 * (A + A.T)
        basis_last = V[:, -1]

    x_target = rng.standard_normal(d) / math.sqrt(d)
    if mu == 0.0 and d > 1:
        # keep the planted minimizer consistent: no linear term along the
        # shared zero-curvature direction
        x_target = x_target - basis_last * (basis_last @ x_target)
    noise = rng.standard_normal((n, d)) * (0.1 * L)
    noise -= mean_in_index_order(list(noise))
    shifts = np.array([matrices[i] @ x_target for i in range(n)]) + noise
    constants = SmoothnessConstants(L=L, L_max=L, Lhat_bound=L, mu=mu)
    problem = QuadraticProblem(matrices, shifts, constants=constants)
    return problem


class LogRegProblem(DistributedProblem):
    """Multiclass logistic regression over n shards, model stacked as c*d_feat."""

    def __init__(self, shards: list, l2: float = 0.0):
        self.shards = shards
        self.l2 = float(l2)
        c = shards[0].num_classes
        d_feat = shards[0].d_feat
        constants = _logreg_constants(shards, l2, len(shards))
        super().__init__(len(shards), c * d_feat, constants)
        self.num_classes = c
        self.d_feat = d_feat
        self._reference = None

    def value_worker(self, i: int, x: np.ndarray) -> float:
        v = logreg_value(self.shards[i], x)
        if self.l2:
            v += 0.5 * self.l2 * float(x @ x)
        return v

    def grad_worker(self, i: int, x: np.ndarray) -> np.ndarray:
        g = logreg_grad(self.shards[i], x)
        if self.l2:
            g = g + self.l2 * x
        return g

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for shard in self.shards:
            h.update(dataset_hash(shard).encode())
        h.update(struct.pack("<d", self.l2))
        return h.hexdigest()

    def reference_solution(self, tol: float = 1e-12, max_rounds: int = 400000):
        """High-accuracy (x*, f*) via the accelerated reference solve, cached."""
        if self._reference is None:
            x_ref, f_ref, _ = reference_minimize(self, tol=tol, max_rounds=max_rounds)
            self._reference = (x_ref, f_ref)
        return self._reference

    @property
    def f_star(self) -> float:
        return self.reference_solution()[1]

    @property
    def x_star(self) -> np.ndarray:
        return self.reference_solution()[0]


def _logreg_constants(shards: list, l2: float, n: int) -> SmoothnessConstants:
    # softmax Hessian spectral norm is at most 1/2, giving the per-worker
    # bound L_i <= (1/(2 m_i)) sum_j ||a_ij||^2
    per_worker = []
    total_sq = 0.0
    total_m = 0
    for shard in shards:
        sq = float(shard.features.multiply(shard.features).sum())
        per_worker.append(sq / (2.0 * shard.num_samples))
        total_sq += sq
        total_m += shard.num_samples
    L_max = max(per_worker) + l2
    L = total_sq / (2.0 * total_m) + l2
    # these are upper bounds, not exact constants; unbalanced shards can make
    # the pooled bound dip below L_max/n, so lift it to keep the ordering
    L = max(L, L_max / n)
    return SmoothnessConstants(L=L, L_max=L_max, Lhat_bound=L_max, mu=l2)


def make_logreg(ds: Dataset, n: int, scheme: str = "contiguous", l2: float = 0.0) -> LogRegProblem:
    return LogRegProblem(partition(ds, n, scheme), l2=l2)


def estimate_constants(problem: DistributedProblem) -> SmoothnessConstants:
    """Recompute smoothness constants from the problem data.

    Quadratics are exact via eigendecomposition; logistic regression uses the
    softmax-Hessian spectral bound.
    """
    if isinstance(problem, QuadraticProblem):
        return _quadratic_constants(problem.matrices, problem.hessian)
    if isinstance(problem, LogRegProblem):
        return _logreg_constants(problem.shards, problem.l2, problem.n)
    return problem.constants


def reference_minimize(problem: DistributedProblem, tol: float = 1e-12,
                       max_rounds: int = 400000, x0: Optional[np.ndarray] = None):
    """Drive the gradient norm below tol with restarted accelerated descent.

    Accelerated gradient with backtracked local Lipschitz estimate and
    momentum restarts on function increase (both with float-noise slack, so
    the scheme keeps contracting at machine precision).  Returns
    (x_best, f_best, grad_norm_best), f_best re-evaluated with the problem's
    own worker-mean semantics.
    """
    L = problem.constants.L
    mu = problem.constants.mu
    if isinstance(problem, LogRegProblem):
        # pooled single-pass oracle: same objective up to summation order,
        # far cheaper than n shard passes per iteration
        pooled = pooled_dataset(problem.shards)
        l2 = problem.l2

        def value_grad(x):
            v, g = logreg_value_grad(pooled, x)
            if l2:
                v += 0.5 * l2 * float(x @ x)
                g = g + l2 * x
            return v, g
    else:
        def value_grad(x):
            return problem.value(x), problem.grad(x)

    x = np.zeros(problem.dim) if x0 is None else np.asarray(x0, dtype=float).copy()
    y = x.copy()
    f_x, _ = value_grad(x)
    best_x, best_gn = x.copy(), math.inf
    L_est = L / 16.0
    k = 0
    for _ in range(max_rounds):
        f_y, g = value_grad(y)
        gn = float(np.linalg.norm(g))
        if gn < best_gn:
            best_x, best_gn = y.copy(), gn
        if gn <= tol:
            break
        slack = 1e-15 * max(1.0, abs(f_y))
        while True:
            x_new = y - g / L_est
            f_new, _ = value_grad(x_new)
            if f_new <= f_y - gn * gn / (2.0 * L_est) + slack or L_est >= 4.0 * L:
                break
            L_est *= 2.0
        if f_new > f_x + slack:
            k = 0  # momentum restart; the descent step itself is kept
            y = x_new.copy()
        else:
            if mu > 0:
                rl, rm = math.sqrt(max(L_est, mu)), math.sqrt(mu)
                beta = (rl - rm) / (rl + rm)
            else:
                beta = k / (k + 3.0)
            y = x_new + beta * (x_new - x)
        x, f_x = x_new, f_new
        k += 1
        L_est = max(L_est * 0.97, 1e-12 * L)
    return best_x, problem.value(best_x), best_gn
