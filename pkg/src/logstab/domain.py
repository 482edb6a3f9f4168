"""Rectangular domains, grid functions and the Dirichlet spectrum of -Delta + q0.

Grid functions live on the interior nodes of a uniform grid with ``N_g`` points
per side; the homogeneous Dirichlet condition is implicit (boundary values are
zero and never stored).  Inner products and norms are discrete L2 with weight
``h_1 * ... * h_n`` per node.
"""
from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    ConfigurationError,
    ConstraintError,
    DimensionError,
    NumericalError,
    TruncationWarning,
)

# edge name -> (normal axis, side); side 0 is the face x_axis = 0
EDGES = {
    1: {"left": (0, 0), "right": (0, 1)},
    2: {"left": (0, 0), "right": (0, 1), "bottom": (1, 0), "top": (1, 1)},
}

GRAM_TOL = 1e-10
RESIDUAL_TOL = 1e-8
_CLUSTER_RTOL = 1e-8
_DENSE_LIMIT = 1500


def domain_violations(dimension, lengths, grid_points, window, tau, dt) -> list[str]:
    """Return every violated domain invariant as ``"name: reason"`` strings."""
    errors = []
    if dimension not in (1, 2):
        errors.append(f"dimension: must be 1 or 2, got {dimension}")
        return errors
    lengths = tuple(lengths)
    if len(lengths) != dimension:
        errors.append(f"lengths: expected {dimension} side lengths, got {len(lengths)}")
        return errors
    if any(not (L > 0 and math.isfinite(L)) for L in lengths):
        errors.append(f"lengths: side lengths must be positive, got {lengths}")
    if int(grid_points) != grid_points or grid_points < 3:
        errors.append(f"grid_points: need an integer >= 3, got {grid_points}")
    if not (tau > 0 and math.isfinite(tau)):
        errors.append(f"tau: must be positive, got {tau}")
    if not (dt > 0 and math.isfinite(dt)):
        errors.append(f"dt: must be positive, got {dt}")
    if errors:
        return errors
    h = [L / (grid_points + 1) for L in lengths]
    courant = dt * math.sqrt(sum(1.0 / hi**2 for hi in h))
    if courant > 1.0:
        errors.append(f"cfl: dt*sqrt(sum 1/h_i^2) = {courant:.4g} exceeds 1")
    if not window:
        errors.append("window: the measurement window is empty")
    for item in window:
        try:
            edge, (a, b) = item
        except (TypeError, ValueError):
            errors.append(f"window: malformed entry {item!r}")
            continue
        if edge not in EDGES[dimension]:
            errors.append(f"window: unknown edge {edge!r} for dimension {dimension}")
            continue
        if dimension == 2:
            axis = EDGES[2][edge][0]
            along = lengths[1 - axis]
            if not (0.0 <= a < b <= along):
                errors.append(f"window: interval ({a}, {b}) on {edge} must satisfy 0 <= a < b <= {along}")
                continue
            nodes = [(j + 1) * h[1 - axis] for j in range(grid_points)]
            if not any(a <= y <= b for y in nodes):
                errors.append(f"window: interval ({a}, {b}) on {edge} contains no grid node")
    return errors


@dataclass(frozen=True)
class DomainSpec:
    """Axis-aligned box ``(0, L_1) x ... x (0, L_n)`` with measurement window and horizon.

    ``window`` is a sequence of ``(edge, (a, b))`` pairs, ``(a, b)`` being an
    interval in the coordinate running along the edge.  In one dimension the
    edges are points and the interval is ignored.
    """

    dimension: int
    lengths: tuple
    grid_points: int
    window: tuple
    tau: float
    dt: float

    def __post_init__(self):
        lengths = tuple(float(L) for L in np.atleast_1d(self.lengths))
        window = tuple((str(e), (float(iv[0]), float(iv[1]))) for e, iv in self.window)
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "window", window)
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "dt", float(self.dt))
        errors = domain_violations(self.dimension, lengths, self.grid_points, window, self.tau, self.dt)
        if errors:
            raise ConfigurationError("; ".join(errors))

    @property
    def h(self) -> tuple:
        return tuple(L / (self.grid_points + 1) for L in self.lengths)

    @property
    def shape(self) -> tuple:
        return (self.grid_points,) * self.dimension

    @property
    def size(self) -> int:
        return self.grid_points**self.dimension

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def diameter(self) -> float:
        return math.sqrt(sum(L * L for L in self.lengths))

    @property
    def n_steps(self) -> int:
        return max(1, math.ceil(round(self.tau / self.dt, 9)))

    @property
    def time_step(self) -> float:
        """Effective step ``tau / M``; never larger than the requested ``dt``."""
        return self.tau / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.tau, self.n_steps + 1)

    def coords(self, axis: int) -> np.ndarray:
        return (np.arange(self.grid_points) + 1.0) * self.h[axis]

    def mesh(self) -> tuple:
        return np.meshgrid(*(self.coords(a) for a in range(self.dimension)), indexing="ij")

    def with_horizon(self, tau: float, dt: float | None = None) -> "DomainSpec":
        return DomainSpec(self.dimension, self.lengths, self.grid_points, self.window,
                          tau, self.dt if dt is None else dt)

    def with_grid(self, grid_points: int, dt: float | None = None) -> "DomainSpec":
        return DomainSpec(self.dimension, self.lengths, grid_points, self.window,
                          self.tau, self.dt if dt is None else dt)

    @functools.cached_property
    def trace_nodes(self) -> list:
        """Window nodes as ``(edge, normal_axis, side, along_index, position)``."""
        nodes = []
        seen = set()
        for edge, (a, b) in self.window:
            axis, side = EDGES[self.dimension][edge]
            if self.dimension == 1:
                key = (axis, side, 0)
                if key not in seen:
                    seen.add(key)
                    nodes.append((edge, axis, side, 0, float(side * self.lengths[0])))
                continue
            along = self.coords(1 - axis)
            for j, y in enumerate(along):
                key = (axis, side, j)
                if a <= y <= b and key not in seen:
                    seen.add(key)
                    nodes.append((edge, axis, side, j, float(y)))
        return nodes

    @property
    def n_trace_nodes(self) -> int:
        return len(self.trace_nodes)

    @functools.cached_property
    def surface_weights(self) -> np.ndarray:
        """Quadrature weight of each window node for the surface measure on the window."""
        if self.dimension == 1:
            return np.ones(self.n_trace_nodes)
        return np.array([self.h[1 - axis] for _, axis, _, _, _ in self.trace_nodes])

    @functools.cached_property
    def trace_matrix(self) -> sp.csr_matrix:
        """Sparse map from flattened interior values to outward normal derivatives.

        Second-order one-sided difference using the boundary value 0:
        ``d_nu u ~ (u_2 - 4 u_1) / (2 h)`` with ``u_1`` the node adjacent to the
        face and ``u_2`` the next one inward.
        """
        rows, cols, vals = [], [], []
        N = self.grid_points
        for p, (_, axis, side, j, _) in enumerate(self.trace_nodes):
            first, second = (0, 1) if side == 0 else (N - 1, N - 2)
            for i, coef in ((first, -4.0), (second, 1.0)):
                idx = [0] * self.dimension
                idx[axis] = i
                if self.dimension == 2:
                    idx[1 - axis] = j
                rows.append(p)
                cols.append(np.ravel_multi_index(tuple(idx), self.shape))
                vals.append(coef / (2.0 * self.h[axis]))
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n_trace_nodes, self.size))


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Grid function on the interior nodes of ``spec``."""

    spec: DomainSpec
    values: np.ndarray
    tag: str | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.size != self.spec.size:
            raise DimensionError(f"field has {values.size} values, grid has {self.spec.size} interior nodes")
        values = values.reshape(self.spec.shape)
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, spec: DomainSpec, tag: str | None = None) -> "ScalarField":
        return cls(spec, np.zeros(spec.shape), tag)

    @classmethod
    def constant(cls, spec: DomainSpec, c: float, tag: str | None = None) -> "ScalarField":
        return cls(spec, np.full(spec.shape, float(c)), tag)

    @classmethod
    def from_function(cls, spec: DomainSpec, fn: Callable, tag: str | None = None) -> "ScalarField":
        """Sample ``fn(x_1, ..., x_n)`` (vectorised) at the interior nodes."""
        return cls(spec, np.broadcast_to(fn(*spec.mesh()), spec.shape), tag)

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def _check(self, other: "ScalarField"):
        if other.spec != self.spec:
            raise DimensionError("fields live on different grids")

    def __add__(self, other):
        if isinstance(other, ScalarField):
            self._check(other)
            return ScalarField(self.spec, self.values + other.values, self.tag)
        return ScalarField(self.spec, self.values + other, self.tag)

    def __sub__(self, other):
        if isinstance(other, ScalarField):
            self._check(other)
            return ScalarField(self.spec, self.values - other.values, self.tag)
        return ScalarField(self.spec, self.values - other, self.tag)

    def __mul__(self, other):
        if isinstance(other, ScalarField):
            self._check(other)
            return ScalarField(self.spec, self.values * other.values, self.tag)
        return ScalarField(self.spec, self.values * float(other), self.tag)

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.spec, -self.values, self.tag)

    def retag(self, tag: str | None) -> "ScalarField":
        return ScalarField(self.spec, self.values, tag)

    def inner(self, other: "ScalarField") -> float:
        self._check(other)
        return float(self.spec.cell_volume * np.dot(self.flat, other.flat))

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def min(self) -> float:
        return float(np.min(self.values))

    def check_bound(self, m: float, name: str = "q") -> None:
        """Raise unless ``max |value| <= m`` (the ball ``m B_{L^inf}``)."""
        s = self.sup()
        if s > m * (1 + 1e-12):
            raise ConstraintError(f"|{name}|_inf <= m", f"sup |{name}| = {s:.6g} exceeds m = {m:.6g}")


def w1inf_norm(field: ScalarField) -> float:
    """``max(sup |v|, sup |grad v|)`` with centred differences on the interior grid."""
    v = field.values
    if min(v.shape) < 2:
        return field.sup()
    grads = np.gradient(v, *field.spec.h, edge_order=2)
    if field.spec.dimension == 1:
        grads = [grads]
    gmag = np.sqrt(sum(g * g for g in grads))
    return float(max(np.max(np.abs(v)), np.max(gmag)))


@functools.lru_cache(maxsize=16)
def dirichlet_laplacian(spec: DomainSpec) -> sp.csr_matrix:
    """``-Delta_h`` with homogeneous Dirichlet data (3-point / 5-point stencil)."""
    N = spec.grid_points
    ops = []
    for axis in range(spec.dimension):
        h = spec.h[axis]
        ops.append(sp.diags([-np.ones(N - 1), 2 * np.ones(N), -np.ones(N - 1)], [-1, 0, 1]) / h**2)
    if spec.dimension == 1:
        return sp.csr_matrix(ops[0])
    eye = sp.identity(N)
    return sp.csr_matrix(sp.kron(ops[0], eye) + sp.kron(eye, ops[1]))


def first_laplacian_eigenvalue(spec: DomainSpec) -> float:
    """Closed-form smallest eigenvalue of ``-Delta_h`` on the rectangle grid."""
    return float(sum(4.0 / h**2 * math.sin(math.pi * h / (2 * L)) ** 2 for h, L in zip(spec.h, spec.lengths)))


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Matrix realisation of ``A_0 = -Delta + q0`` on the interior nodes."""

    spec: DomainSpec
    q0: ScalarField
    matrix: sp.csr_matrix

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v

    def apply(self, field: ScalarField) -> ScalarField:
        return ScalarField(self.spec, self.matrix @ field.flat)


def build_laplacian(spec: DomainSpec, q0: ScalarField, nonneg: bool = False) -> DiscreteOperator:
    """Assemble ``-Delta_h + diag(q0)``.

    With ``nonneg=True`` the caller asks for the convention q0 >= 0 and a
    negative value is rejected.
    """
    if q0.spec != spec:
        raise DimensionError("q0 is not defined on the grid of spec")
    if nonneg and q0.min() < 0:
        raise ConstraintError("q0 >= 0", f"min q0 = {q0.min():.6g}")
    matrix = dirichlet_laplacian(spec) + sp.diags(q0.flat)
    return DiscreteOperator(spec, q0, sp.csr_matrix(matrix))


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Lowest ``K`` Dirichlet eigenpairs of ``-Delta_h + q0``.

    ``modes[k-1]`` holds the discrete-L2 normalised eigenfield of
    ``eigenvalues[k-1]``; indices in the public helpers are 1-based like the
    mode numbers they stand for.
    """

    q0: ScalarField
    eigenvalues: np.ndarray
    modes: np.ndarray
    gram_residual: float
    residuals: np.ndarray
    weyl_constant: float
    mu1: float

    @property
    def spec(self) -> DomainSpec:
        return self.q0.spec

    @property
    def K(self) -> int:
        return len(self.eigenvalues)

    def field(self, k: int) -> ScalarField:
        if not 1 <= k <= self.K:
            raise IndexError(f"mode {k} outside 1..{self.K}")
        return ScalarField(self.spec, self.modes[k - 1], "eigenfunction")

    def coefficients(self, v: ScalarField, K: int | None = None) -> np.ndarray:
        """Discrete-L2 projections ``(v, phi_k)`` for ``k = 1..K``."""
        if v.spec != self.spec:
            raise DimensionError("field and eigensystem live on different grids")
        K = self.K if K is None else K
        flat = self.modes[:K].reshape(K, -1)
        return self.spec.cell_volume * (flat @ v.flat)

    def synthesize(self, coeffs: Sequence[float], tag: str | None = None) -> ScalarField:
        coeffs = np.asarray(coeffs, dtype=float)
        if len(coeffs) > self.K:
            raise DimensionError(f"{len(coeffs)} coefficients for {self.K} modes")
        vals = np.tensordot(coeffs, self.modes[: len(coeffs)], axes=1)
        return ScalarField(self.spec, vals, tag)


def _first_nonzero_sign(v: np.ndarray) -> float:
    thresh = 1e-8 * np.max(np.abs(v))
    idx = np.flatnonzero(np.abs(v) > thresh)
    return 1.0 if idx.size == 0 or v[idx[0]] > 0 else -1.0


def _canonical_clusters(w: np.ndarray, V: np.ndarray) -> tuple:
    """Replace each numerically degenerate eigenspace by a canonical basis.

    The basis is the orthonormalised projection of fixed pseudo-random vectors,
    so it depends only on the subspace and not on the solver's arbitrary
    rotation within it.
    """
    V = V.copy()
    clusters = []
    start = 0
    for i in range(1, len(w) + 1):
        if i == len(w) or w[i] - w[i - 1] > _CLUSTER_RTOL * max(1.0, abs(w[i])):
            clusters.append((start, i))
            start = i
    rng = np.random.default_rng(20240611)
    probe = rng.standard_normal((V.shape[0], max(b - a for a, b in clusters)))
    for a, b in clusters:
        if b - a > 1:
            block = V[:, a:b]
            proj = block @ (block.T @ probe[:, : b - a])
            Q, _ = np.linalg.qr(proj)
            V[:, a:b] = Q
    return V, clusters


def weyl_constant(eigenvalues: np.ndarray, n: int) -> float:
    k = np.arange(1, len(eigenvalues) + 1) ** (2.0 / n)
    lam = np.asarray(eigenvalues, dtype=float)
    if np.any(lam <= 0):
        return math.inf
    c = float(max(np.max(lam / k), np.max(k / lam)))
    return c if c > 1.0 else math.nextafter(1.0, 2.0)


def eigensolve(op: DiscreteOperator, K: int) -> EigenSystem:
    """Lowest ``K`` eigenpairs with canonical signs and degenerate-space bases."""
    N = op.size
    if not 1 <= K <= N:
        raise ConfigurationError(f"K must lie in 1..{N}, got {K}")
    n_want = min(N, K + 6)
    A = op.matrix
    if N <= _DENSE_LIMIT or n_want >= N - 1:
        w, V = la.eigh(A.toarray(), subset_by_index=[0, n_want - 1])
    else:
        sigma = min(op.q0.min(), 0.0) - 1.0
        v0 = np.random.default_rng(7).standard_normal(N)
        try:
            w, V = spla.eigsh(A, k=n_want, sigma=sigma, which="LM", v0=v0, tol=0)
        except spla.ArpackNoConvergence as exc:
            raise NumericalError(f"eigensolver did not converge: {exc}") from exc
        order = np.argsort(w)
        w, V = w[order], V[:, order]
    # extra modes make every cluster cut by K complete, so its canonical basis is well defined
    V, _ = _canonical_clusters(w, V)
    V = V[:, :K] / math.sqrt(op.spec.cell_volume)
    for j in range(K):
        V[:, j] *= _first_nonzero_sign(V[:, j])
    dv = op.spec.cell_volume
    AV = A @ V
    lam = dv * np.einsum("ij,ij->j", V, AV)
    res = np.sqrt(dv * np.sum((AV - V * lam) ** 2, axis=0))
    gram = dv * (V.T @ V)
    gram_res = float(np.max(np.abs(gram - np.eye(K))))
    bad = res > RESIDUAL_TOL * np.maximum(np.abs(lam), 1.0)
    if gram_res > GRAM_TOL or np.any(bad):
        raise NumericalError(
            f"eigenpairs inaccurate: gram residual {gram_res:.3e}, worst residual {res.max():.3e}"
        )
    modes = V.T.reshape((K,) + op.spec.shape)
    modes.setflags(write=False)
    lam.setflags(write=False)
    return EigenSystem(
        q0=op.q0,
        eigenvalues=lam,
        modes=modes,
        gram_residual=gram_res,
        residuals=res,
        weyl_constant=weyl_constant(lam, op.spec.dimension),
        mu1=first_laplacian_eigenvalue(op.spec),
    )


def weyl_fit(es: EigenSystem) -> float:
    """Smallest ``c > 1`` with ``k^(2/n)/c <= lambda_k <= c k^(2/n)`` for all stored k."""
    if es.K < 10:
        raise ConfigurationError(f"weyl_fit needs at least 10 eigenvalues, got {es.K}")
    return weyl_constant(es.eigenvalues, es.spec.dimension)


def gradient_components(field: ScalarField) -> list:
    """Forward differences including the zero boundary layer on both ends."""
    spec = field.spec
    out = []
    for axis in range(spec.dimension):
        pad = [(0, 0)] * spec.dimension
        pad[axis] = (1, 1)
        padded = np.pad(field.values, pad)
        out.append(np.diff(padded, axis=axis) / spec.h[axis])
    return out


def laplacian(field: ScalarField) -> ScalarField:
    """Discrete ``Delta_h`` (negative semidefinite) of an interior field."""
    return ScalarField(field.spec, -(dirichlet_laplacian(field.spec) @ field.flat))


def _l2(field: ScalarField) -> float:
    return math.sqrt(field.spec.cell_volume * float(np.dot(field.flat, field.flat)))


def _h10(field: ScalarField) -> float:
    dv = field.spec.cell_volume
    return math.sqrt(dv * sum(float(np.sum(g * g)) for g in gradient_components(field)))


NORM_KINDS = ("L2", "H1_0", "H_minus1", "H_Delta_cal", "H0_cal")


def norm(field: ScalarField, kind: str = "L2", es: EigenSystem | None = None) -> float:
    """Discrete norms of an interior field.

    ``H_minus1`` without ``es`` is the exact discrete dual norm of ``-Delta_h``;
    with ``es`` it is spectral, ``(sum_k lambda_k^-1 (v, phi_k)^2)^(1/2)`` over the
    modes in ``es``; a :class:`TruncationWarning` is emitted when the unresolved
    tail could change the value by more than 0.1%.
    """
    if kind == "L2":
        return _l2(field)
    if kind == "H1_0":
        return _h10(field)
    if kind == "H_Delta_cal":
        return _h10(field) + _l2(laplacian(field))
    if kind == "H0_cal":
        return _h10(field) + _h10(laplacian(field))
    if kind == "H_minus1":
        if es is None:
            # exact discrete dual norm (A^-1 v, v) with A = -Delta_h
            sol = spla.spsolve(sp.csc_matrix(dirichlet_laplacian(field.spec)), field.flat)
            return math.sqrt(max(field.spec.cell_volume * float(np.dot(sol, field.flat)), 0.0))
        c = es.coefficients(field)
        val2 = float(np.sum(c * c / es.eigenvalues))
        tail = max(_l2(field) ** 2 - float(np.sum(c * c)), 0.0)
        if tail / es.eigenvalues[-1] > 2e-3 * val2 and tail > 1e-24:
            warnings.warn(f"H^-1 norm truncated at K={es.K}; tail energy {tail:.3e}", TruncationWarning)
        return math.sqrt(val2)
    raise ValueError(f"unknown norm kind {kind!r}; expected one of {NORM_KINDS}")


def spectral_h1(field: ScalarField, es: EigenSystem) -> float:
    c = es.coefficients(field)
    return math.sqrt(float(np.sum(es.eigenvalues * c * c)))
