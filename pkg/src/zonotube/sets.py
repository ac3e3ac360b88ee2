"""Zonotope, box and polytope set representations with the operations the
tube controller is built on.

All set types are immutable values: every operation returns a new object and
never mutates its inputs, so they are safe to share across threads.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull


class Zonotope:
    """Centrally symmetric convex set {c + R x : ||x||_inf <= 1}.

    Parameters
    ----------
    center : (n,) array_like
    generators : (n, p) array_like, p >= 0.  p = 0 represents a point set.
    """

    __slots__ = ("center", "generators")

    def __init__(self, center, generators=None):
        c = np.atleast_1d(np.asarray(center, dtype=float)).copy()
        if c.ndim != 1:
            raise ValueError("center must be a vector")
        n = c.shape[0]
        if generators is None:
            R = np.zeros((n, 0))
        else:
            R = np.asarray(generators, dtype=float).copy()
            if R.ndim == 1:
                R = R.reshape(n, -1)
        if R.shape[0] != n:
            raise ValueError(f"generators must have {n} rows, got {R.shape[0]}")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(R))):
            raise ValueError("zonotope entries must be finite")
        self.center = c
        self.generators = R
        c.setflags(write=False)
        R.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    @property
    def num_generators(self) -> int:
        return self.generators.shape[1]

    def radii(self) -> np.ndarray:
        """Per-axis half-widths sum_j |R[i, j]|."""
        if self.num_generators == 0:
            return np.zeros(self.dim)
        return np.abs(self.generators).sum(axis=1)

    def is_point(self, tol: float = 0.0) -> bool:
        return bool(np.all(self.radii() <= tol))

    def sample(self, rng: np.random.Generator, count: int = 1) -> np.ndarray:
        """Uniform samples of the latent cube mapped through the generators."""
        xi = rng.uniform(-1.0, 1.0, size=(count, self.num_generators))
        return self.center + xi @ self.generators.T

    def vertices(self, max_generators: int = 16) -> np.ndarray:
        """Enumerate c + R s over all sign patterns s (candidate vertices).

        Exponential in p; refuse for p > max_generators.
        """
        p = self.num_generators
        if p > max_generators:
            raise ValueError(f"too many generators for vertex enumeration: {p}")
        if p == 0:
            return self.center.reshape(1, -1)
        signs = np.array(
            [[1.0 if (i >> j) & 1 else -1.0 for j in range(p)] for i in range(2**p)]
        )
        return self.center + signs @ self.generators.T

    def __repr__(self):
        return f"Zonotope(dim={self.dim}, p={self.num_generators})"

    @staticmethod
    def point(center) -> "Zonotope":
        return Zonotope(center)


class Box:
    """Axis-aligned interval set [lower, upper], possibly flagged empty."""

    __slots__ = ("lower", "upper", "empty")

    def __init__(self, lower, upper, empty: bool = False):
        lo = np.atleast_1d(np.asarray(lower, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(upper, dtype=float)).copy()
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower/upper must be vectors of equal length")
        self.empty = bool(empty or np.any(lo > hi))
        self.lower = lo
        self.upper = hi
        lo.setflags(write=False)
        hi.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def radius(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)

    def contains(self, x, tol: float = 0.0) -> bool:
        if self.empty:
            return False
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def to_zonotope(self) -> Zonotope:
        """Box as a zonotope with diagonal generator matrix.

        Exact when the bounds are symmetric (lower = -upper); otherwise the
        midpoint/half-width pair carries one rounding each.
        """
        if self.empty:
            raise ValueError("cannot convert an empty box to a zonotope")
        return Zonotope(self.center(), np.diag(self.radius()))

    def intersect(self, other: "Box") -> "Box":
        if self.empty or other.empty:
            return Box(self.lower, self.upper, empty=True)
        lo = np.maximum(self.lower, other.lower)
        hi = np.minimum(self.upper, other.upper)
        return Box(lo, hi)

    def __repr__(self):
        if self.empty:
            return f"Box(dim={self.dim}, empty)"
        return f"Box({self.lower}, {self.upper})"

    @staticmethod
    def symmetric(radius) -> "Box":
        r = np.atleast_1d(np.asarray(radius, dtype=float))
        return Box(-r, r)

    @staticmethod
    def ball_inf(radius: float, dim: int) -> "Box":
        """Infinity-norm ball of a given radius."""
        r = float(radius) * np.ones(dim)
        return Box(-r, r)


class HPolytope:
    """Halfspace set {x : normals @ x <= offsets}."""

    __slots__ = ("normals", "offsets")

    def __init__(self, normals, offsets):
        H = np.atleast_2d(np.asarray(normals, dtype=float)).copy()
        b = np.atleast_1d(np.asarray(offsets, dtype=float)).copy()
        if H.shape[0] != b.shape[0]:
            raise ValueError("row count of normals must match offsets length")
        self.normals = H
        self.offsets = b
        H.setflags(write=False)
        b.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.normals.shape[1]

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(self.normals @ x <= self.offsets + tol))

    @staticmethod
    def from_box(box: Box) -> "HPolytope":
        n = box.dim
        eye = np.eye(n)
        return HPolytope(np.vstack([eye, -eye]), np.hstack([box.upper, -box.lower]))


class VPolytope:
    """Convex hull of a finite vertex list.

    ``rank`` records the affine dimension found when the hull was pruned;
    degenerate inputs (rank < ambient dim) are permitted and flagged.
    """

    __slots__ = ("vertices", "rank")

    def __init__(self, vertices, rank: int | None = None):
        V = np.atleast_2d(np.asarray(vertices, dtype=float)).copy()
        if V.shape[0] == 0:
            raise ValueError("vertex list must be nonempty")
        self.vertices = V
        self.rank = V.shape[1] if rank is None else int(rank)
        V.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def degenerate(self) -> bool:
        return self.rank < self.dim

    def support(self, direction) -> float:
        d = np.asarray(direction, dtype=float)
        return float(np.max(self.vertices @ d))

    def __repr__(self):
        return f"VPolytope(dim={self.dim}, nv={self.num_vertices}, rank={self.rank})"


# ---------------------------------------------------------------------------
# zonotope operations
# ---------------------------------------------------------------------------

def linear_image(M, Z: Zonotope) -> Zonotope:
    """Image of a zonotope under a linear map: <M c, M R>."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[1] != Z.dim:
        raise ValueError(f"matrix has {M.shape[1]} columns, zonotope dim {Z.dim}")
    return Zonotope(M @ Z.center, M @ Z.generators)


def minkowski_sum(Z1: Zonotope, Z2: Zonotope) -> Zonotope:
    """Minkowski sum <c1 + c2, [R1 | R2]>."""
    if Z1.dim != Z2.dim:
        raise ValueError("dimension mismatch in Minkowski sum")
    return Zonotope(Z1.center + Z2.center, np.hstack([Z1.generators, Z2.generators]))


def support(Z: Zonotope, direction) -> float:
    """max over the set of d^T x, i.e. d^T c + sum_j |d^T R_j|."""
    d = np.asarray(direction, dtype=float)
    if d.shape != (Z.dim,):
        raise ValueError("direction/zonotope dimension mismatch")
    if not np.any(d):
        raise ValueError("support direction must be nonzero")
    return float(d @ Z.center + np.abs(d @ Z.generators).sum())


def interval_hull(Z: Zonotope) -> Box:
    """Tight per-axis bounding box c_i +- sum_j |R[i, j]|."""
    r = Z.radii()
    return Box(Z.center - r, Z.center + r)


def box_erode_zonotope(X: Box, Z: Zonotope) -> Box:
    """Exact Minkowski difference X (-) Z of a box by a zonotope.

    Per axis the erosion removes the support of Z - c and shifts by c:
    [l_i - c_i + r_i, u_i - c_i - r_i].  An inverted interval flags the
    result empty rather than raising.
    """
    if X.dim != Z.dim:
        raise ValueError("dimension mismatch in erosion")
    if X.empty:
        return X
    r = Z.radii()
    lo = X.lower - Z.center + r
    hi = X.upper - Z.center - r
    return Box(lo, hi, empty=bool(np.any(lo > hi)))


def reduce_generators(Z: Zonotope, p_max: int) -> Zonotope:
    """Outer approximation of Z with at most p_max generators.

    The smallest-norm generators are replaced by their interval enclosure
    (a diagonal block); the remaining p_max - n largest are kept verbatim.
    The result always contains Z.
    """
    n = Z.dim
    if p_max < n:
        raise ValueError(f"p_max ({p_max}) must be at least the dimension ({n})")
    p = Z.num_generators
    if p <= p_max:
        return Z
    norms = np.linalg.norm(Z.generators, axis=0)
    order = np.argsort(norms)
    n_keep = p_max - n
    boxed = order[: p - n_keep]
    kept = order[p - n_keep:]
    diag = np.abs(Z.generators[:, boxed]).sum(axis=1)
    R = np.hstack([Z.generators[:, kept], np.diag(diag)])
    return Zonotope(Z.center, R)


def enclose_pair(Z1: Zonotope, Z2: Zonotope, box_residual: bool = False) -> Zonotope:
    """Zonotope containing the union of two zonotopes.

    Center is the mean of centers; generators are the shared scaled part
    (R1 + R2)/2 plus the residual part (R1 - R2)/2 and the center offset.
    Both inputs are contained exactly (latent signs +-1 reproduce them).
    ``box_residual`` collapses the residual columns to their diagonal
    interval enclosure, trading accuracy for generator count.
    """
    if Z1.dim != Z2.dim:
        raise ValueError("dimension mismatch in enclosure")
    p1, p2 = Z1.num_generators, Z2.num_generators
    p = max(p1, p2)
    R1 = np.hstack([Z1.generators, np.zeros((Z1.dim, p - p1))])
    R2 = np.hstack([Z2.generators, np.zeros((Z2.dim, p - p2))])
    c = 0.5 * (Z1.center + Z2.center)
    dc = 0.5 * (Z1.center - Z2.center)
    shared = 0.5 * (R1 + R2)
    resid = np.hstack([0.5 * (R1 - R2), dc.reshape(-1, 1)])
    if box_residual:
        resid = np.diag(np.abs(resid).sum(axis=1))
    return Zonotope(c, np.hstack([shared, resid]))


def zonotope_contains_point(Z: Zonotope, x, tol: float = 1e-9) -> bool:
    """Exact membership test via the LP min ||xi||_inf s.t. R xi = x - c."""
    x = np.asarray(x, dtype=float)
    if x.shape != (Z.dim,):
        raise ValueError("point/zonotope dimension mismatch")
    p = Z.num_generators
    rhs = x - Z.center
    if p == 0:
        return bool(np.all(np.abs(rhs) <= tol))
    # variables [xi (p), t (1)]: min t  s.t.  R xi = rhs, -t <= xi_j <= t
    c = np.zeros(p + 1)
    c[-1] = 1.0
    A_eq = np.hstack([Z.generators, np.zeros((Z.dim, 1))])
    ones = np.ones((p, 1))
    A_ub = np.block([[np.eye(p), -ones], [-np.eye(p), -ones]])
    b_ub = np.zeros(2 * p)
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=rhs,
                  bounds=[(None, None)] * p + [(0, None)], method="highs")
    if not res.success:
        return False
    return bool(res.x[-1] <= 1.0 + tol)


def containment_directions(dim: int, extra: int = 64, seed: int = 20240117) -> np.ndarray:
    """Deterministic direction set: 2*dim axis directions plus normalized
    pseudo-random ones, used by the support-function containment tests."""
    eye = np.eye(dim)
    dirs = [eye, -eye]
    if extra > 0:
        rng = np.random.Generator(np.random.PCG64(seed))
        rand = rng.standard_normal((extra, dim))
        rand /= np.linalg.norm(rand, axis=1, keepdims=True)
        dirs.append(rand)
    return np.vstack(dirs)


def zonotope_contains_zonotope(outer: Zonotope, inner: Zonotope,
                               directions: np.ndarray | None = None,
                               tol: float = 1e-9) -> bool:
    """Support-function proxy for set containment on a fixed direction set."""
    if directions is None:
        directions = containment_directions(outer.dim)
    for d in directions:
        if support(inner, d) > support(outer, d) + tol:
            return False
    return True


def zonotopes_equal(Z1: Zonotope, Z2: Zonotope,
                    directions: np.ndarray | None = None,
                    tol: float = 1e-9) -> bool:
    """Two-sided support comparison on the standard direction set."""
    if directions is None:
        directions = containment_directions(Z1.dim)
    return zonotope_contains_zonotope(Z1, Z2, directions, tol) and \
        zonotope_contains_zonotope(Z2, Z1, directions, tol)


# ---------------------------------------------------------------------------
# vertex-polytope operations (baseline path)
# ---------------------------------------------------------------------------

def convex_hull(points) -> VPolytope:
    """Exact convex hull for ambient dimension <= 5.

    Degenerate inputs (affinely dependent points) are hulled in their
    affine span and returned flagged with the reduced rank.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if P.shape[0] == 0:
        raise ValueError("empty point set")
    if P.shape[1] > 5:
        raise ValueError("exact hull supported only up to dimension 5")
    # unique points first; degenerate scale detection via SVD of centered data
    P = np.unique(P, axis=0)
    if P.shape[0] == 1:
        return VPolytope(P, rank=0)
    mean = P.mean(axis=0)
    Q = P - mean
    # rank of the affine span, with a scale-relative threshold
    u, s, vt = np.linalg.svd(Q, full_matrices=False)
    scale = s[0] if s.size else 0.0
    if scale == 0.0:
        return VPolytope(P[:1], rank=0)
    rank = int(np.sum(s > 1e-12 * scale))
    if rank == 0:
        return VPolytope(P[:1], rank=0)
    basis = vt[:rank].T
    proj = Q @ basis
    if rank == 1:
        i_min, i_max = np.argmin(proj[:, 0]), np.argmax(proj[:, 0])
        idx = [i_min] if i_min == i_max else [i_min, i_max]
        return VPolytope(P[idx], rank=1)
    hull = ConvexHull(proj)
    return VPolytope(P[hull.vertices], rank=rank)


def poly_minkowski_sum(P1: VPolytope, P2: VPolytope) -> VPolytope:
    """Convex hull of all pairwise vertex sums (the costly baseline)."""
    if P1.dim != P2.dim:
        raise ValueError("dimension mismatch in polytope Minkowski sum")
    sums = (P1.vertices[:, None, :] + P2.vertices[None, :, :]).reshape(-1, P1.dim)
    if sums.shape[0] > 10**5:
        raise ValueError(f"vertex blow-up: {sums.shape[0]} candidate vertices")
    return convex_hull(sums)


def poly_linear_image(M, P: VPolytope) -> VPolytope:
    """Image of a V-polytope: map the vertices and re-hull."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[1] != P.dim:
        raise ValueError("matrix/polytope dimension mismatch")
    return convex_hull(P.vertices @ M.T)


def zonotope_to_vpolytope(Z: Zonotope, max_generators: int = 16) -> VPolytope:
    """Vertex enumeration of a zonotope (small generator counts only)."""
    return convex_hull(Z.vertices(max_generators=max_generators))


def hpoly_contains(P: HPolytope, x, tol: float = 1e-9) -> bool:
    return P.contains(x, tol=tol)
