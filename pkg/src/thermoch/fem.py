"""P1 finite element machinery on periodic triangle meshes.

Integrands are vectorized callbacks. They receive a :class:`QuadPointData`
bundle holding every requested field at every quadrature point of every
element, and return weak-form coefficients:

* linear forms return ``(c0, c1)`` so that the density against a test
  function ``v`` is ``c0 * v + c1 . grad(v)``;
* bilinear forms return a :class:`BilinearDensity` whose four slots couple
  trial/test values and gradients.

All element contributions are reduced with :func:`numpy.bincount` in
element-major order, so assembly is bit-reproducible.
"""

from dataclasses import dataclass
from functools import cached_property
from math import sqrt

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SingularMatrixError(ArithmeticError):
    """Raised when a direct factorization meets a (near) zero pivot."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True, eq=False)
class QuadRule:
    """Quadrature rule on the reference triangle.

    ``points`` are barycentric triples, ``weights`` sum to one and are
    multiplied by the element area during assembly.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int

    def __len__(self):
        return len(self.weights)


def _orbit3(a):
    b = 1.0 - 2.0 * a
    return [(a, a, b), (a, b, a), (b, a, a)]


def _orbit6(a, b):
    c = 1.0 - a - b
    return [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]


def _rule(groups, degree):
    pts, wts = [], []
    for orbit, w in groups:
        pts.extend(orbit)
        wts.extend([w] * len(orbit))
    wts = np.array(wts)
    return QuadRule(np.array(pts), wts / wts.sum(), degree)


def _build_rules():
    rules = {}
    rules[1] = _rule([([(1 / 3, 1 / 3, 1 / 3)], 1.0)], 1)
    rules[2] = _rule([(_orbit3(1 / 6), 1 / 3)], 2)

    # 6-point degree-4 rule (Strang-Fix / Dunavant) in closed form
    r = sqrt(38.0 - 44.0 * sqrt(2.0 / 5.0))
    a1 = (8.0 - sqrt(10.0) + r) / 18.0
    a2 = (8.0 - sqrt(10.0) - r) / 18.0
    q = sqrt(213125.0 - 53320.0 * sqrt(10.0))
    w1 = (620.0 + q) / 3720.0
    w2 = (620.0 - q) / 3720.0
    rules[4] = _rule([(_orbit3(a1), w1), (_orbit3(a2), w2)], 4)

    # 7-point degree-5 Radon rule
    s15 = sqrt(15.0)
    rules[5] = _rule(
        [
            ([(1 / 3, 1 / 3, 1 / 3)], 9.0 / 40.0),
            (_orbit3((6.0 - s15) / 21.0), (155.0 - s15) / 1200.0),
            (_orbit3((6.0 + s15) / 21.0), (155.0 + s15) / 1200.0),
        ],
        5,
    )

    # 12-point degree-6 Dunavant rule
    rules[6] = _rule(
        [
            (_orbit3(0.249286745170910), 0.116786275726379),
            (_orbit3(0.063089014491502), 0.050844906370207),
            (_orbit6(0.053145049844817, 0.310352451033784), 0.082851075618374),
        ],
        6,
    )
    rules[3] = rules[4]
    return rules


_RULES = _build_rules()


def reference_quadrature(min_degree=4):
    """Return a fixed symmetric rule exact for polynomials of ``min_degree``."""
    if min_degree not in _RULES:
        raise ValueError(f"unsupported quadrature degree {min_degree}; choose 1..6")
    return _RULES[min_degree]


# ---------------------------------------------------------------------------
# field evaluation


def evaluate_p1(mesh, u, e, q):
    """Value and gradient of the P1 field ``u`` at barycentric point ``q`` of element ``e``."""
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.num_nodes,):
        raise ValueError(f"field has shape {u.shape}, mesh has {mesh.num_nodes} nodes")
    local = u[mesh.elements[e]]
    return float(np.dot(q, local)), local @ mesh.grads[e]


class QuadPointData:
    """P1 fields evaluated at all quadrature points of all elements.

    ``data.value(name)`` has shape ``(E, Q)`` and ``data.grad(name)`` has
    shape ``(E, Q, 2)``. ``data[name]`` returns both.
    """

    def __init__(self, mesh, quad, **fields):
        self.mesh = mesh
        self.quad = quad
        self.element = np.arange(mesh.num_elements)
        self._values = {}
        self._grads = {}
        Q = len(quad)
        for name, u in fields.items():
            u = np.asarray(u, dtype=float)
            if u.shape != (mesh.num_nodes,):
                raise ValueError(
                    f"field {name!r} has shape {u.shape}, mesh has {mesh.num_nodes} nodes"
                )
            local = u[mesh.elements]
            self._values[name] = local @ quad.points.T
            g = np.einsum("ek,ekd->ed", local, mesh.grads)
            self._grads[name] = np.broadcast_to(g[:, None, :], (g.shape[0], Q, 2))

    def value(self, name):
        return self._values[name]

    def grad(self, name):
        return self._grads[name]

    def __getitem__(self, name):
        return self._values[name], self._grads[name]

    def __contains__(self, name):
        return name in self._values

    @cached_property
    def points(self):
        """Physical (unwrapped) coordinates of the quadrature points, ``(E, Q, 2)``."""
        xy = self.mesh.vertex_coordinates()
        return np.einsum("qk,ekd->eqd", self.quad.points, xy)


@dataclass
class BilinearDensity:
    """Coefficients of a bilinear density ``a(u, v)`` at quadrature points.

    ``vv`` multiplies ``u v``, ``gv`` (vector) multiplies ``grad(u) v``,
    ``vg`` (vector) multiplies ``u grad(v)``, and ``gg`` (scalar or 2x2)
    multiplies ``grad(u) . grad(v)``. Missing slots are zero.
    """

    vv: object = None
    gv: object = None
    vg: object = None
    gg: object = None


# ---------------------------------------------------------------------------
# assembly


def _weights(mesh, quad):
    return mesh.areas[:, None] * quad.weights[None, :]


def local_vectors(mesh, quad, c0, c1):
    """Element load contributions, shape ``(E, 3)``."""
    W = _weights(mesh, quad)
    out = np.zeros((mesh.num_elements, 3))
    if c0 is not None:
        c0 = np.broadcast_to(c0, W.shape)
        out += np.einsum("eq,qk->ek", W * c0, quad.points)
    if c1 is not None:
        c1 = np.broadcast_to(c1, W.shape + (2,))
        s = np.einsum("eq,eqd->ed", W, c1)
        out += np.einsum("ed,ekd->ek", s, mesh.grads)
    return out


def assemble_vector(mesh, quad, integrand, **fields):
    """Assemble ``b_i = sum_K sum_q w |K| (c0 lambda_i + c1 . grad lambda_i)``."""
    data = QuadPointData(mesh, quad, **fields)
    c0, c1 = integrand(data)
    loc = local_vectors(mesh, quad, c0, c1)
    return np.bincount(mesh.elements.ravel(), weights=loc.ravel(), minlength=mesh.num_nodes)


def integrate(mesh, quad, integrand, **fields):
    """Integrate a scalar density over the domain."""
    data = QuadPointData(mesh, quad, **fields)
    density = np.broadcast_to(integrand(data), (mesh.num_elements, len(quad)))
    return float(np.sum(_weights(mesh, quad) * density))


def local_matrices(mesh, quad, dens):
    """Element matrices ``A[e, test, trial]`` for a :class:`BilinearDensity`."""
    W = _weights(mesh, quad)
    L = quad.points  # (Q, 3) basis values
    G = mesh.grads  # (E, 3, 2)
    Gt = G.transpose(0, 2, 1)
    E, Q = W.shape
    out = np.zeros((E, 3, 3))
    if dens.vv is not None:
        LL = (L[:, :, None] * L[:, None, :]).reshape(Q, 9)
        c = W * np.broadcast_to(dens.vv, W.shape)
        out += (c @ LL).reshape(E, 3, 3)
    if dens.gv is not None:
        # grad(trial) . c * test
        c = W[..., None] * np.broadcast_to(dens.gv, W.shape + (2,))
        out += L.T @ (c @ Gt)
    if dens.vg is not None:
        c = W[..., None] * np.broadcast_to(dens.vg, W.shape + (2,))
        out += (c @ Gt).transpose(0, 2, 1) @ L
    if dens.gg is not None:
        gg = np.asarray(dens.gg)
        if gg.ndim >= 2 and gg.shape[-2:] == (2, 2):
            # density grad(v) . gg . grad(u)
            c = np.einsum("eq,eqij->eij", W, np.broadcast_to(gg, W.shape + (2, 2)))
            out += G @ c @ Gt
        else:
            c = np.sum(W * np.broadcast_to(gg, W.shape), axis=1)
            out += c[:, None, None] * (G @ Gt)
    return out


class AssemblyPlan:
    """Precomputed scatter from element blocks into a fixed CSR pattern.

    The pattern covers ``nblocks x nblocks`` coupled copies of the node
    adjacency graph, so the same plan serves scalar operators
    (``nblocks=1``) and the block Jacobian of a multi-field system.
    """

    def __init__(self, mesh, nblocks=1):
        self.mesh = mesh
        self.nblocks = nblocks
        N = mesh.num_nodes
        el = mesh.elements
        rows = np.broadcast_to(el[:, :, None], el.shape + (3,))
        cols = np.broadcast_to(el[:, None, :], el.shape + (3,))
        R, C = [], []
        for bi in range(nblocks):
            for bj in range(nblocks):
                R.append((rows + bi * N).ravel())
                C.append((cols + bj * N).ravel())
        R = np.concatenate(R)
        C = np.concatenate(C)
        size = nblocks * N
        key = R * size + C
        uniq, inverse = np.unique(key, return_inverse=True)
        self.shape = (size, size)
        self._scatter = inverse
        self._nnz = uniq.size
        ur, uc = np.divmod(uniq, size)
        self.indptr = np.concatenate([[0], np.cumsum(np.bincount(ur, minlength=size))])
        self.indices = uc

    def build(self, blocks):
        """Combine element blocks into a CSR matrix.

        ``blocks`` is a nested list ``blocks[i][j]`` of ``(E, 3, 3)`` arrays
        (or ``None`` for a zero block).
        """
        E = self.mesh.num_elements
        parts = []
        for bi in range(self.nblocks):
            for bj in range(self.nblocks):
                blk = blocks[bi][bj]
                parts.append(np.zeros(E * 9) if blk is None else np.asarray(blk).reshape(-1))
        data = np.bincount(self._scatter, weights=np.concatenate(parts), minlength=self._nnz)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=self.shape)


def assemble_matrix(mesh, quad, integrand, plan=None, **fields):
    """Assemble a sparse matrix from a bilinear-density callback."""
    data = QuadPointData(mesh, quad, **fields)
    dens = integrand(data)
    plan = plan if plan is not None else AssemblyPlan(mesh)
    return plan.build([[local_matrices(mesh, quad, dens)]])


def mass_matrix(mesh, quad):
    return assemble_matrix(mesh, quad, lambda d: BilinearDensity(vv=1.0))


def stiffness_matrix(mesh, quad):
    return assemble_matrix(mesh, quad, lambda d: BilinearDensity(gg=1.0))


def norms_of_difference(mesh, quad, u, v):
    """Squared L2 and H1 norms of ``u - v`` for two P1 fields on ``mesh``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape or u.shape != (mesh.num_nodes,):
        raise ValueError(
            f"size mismatch: {u.shape} vs {v.shape} on a mesh with {mesh.num_nodes} nodes"
        )
    data = QuadPointData(mesh, quad, w=u - v)
    W = _weights(mesh, quad)
    val, g = data["w"]
    l2 = float(np.sum(W * val**2))
    semi = float(np.sum(W * np.einsum("eqd,eqd->eq", g, g)))
    return l2, l2 + semi


# ---------------------------------------------------------------------------
# direct solver


class Factorization:
    """Sparse LU factorization (SuperLU) of a square matrix.

    The first attempt uses a symmetric minimum-degree ordering with diagonal
    pivots, which keeps fill low for the block systems assembled here. If a
    solve misses the backward-error bound, the matrix is refactorized with
    threshold partial pivoting and the solve is repeated.
    """

    def __init__(self, A, pivot_tol=1e-14, rtol=1e-10):
        self.A = A
        self.shape = A.shape
        self.rtol = rtol
        self._norm = float(abs(A).sum(axis=1).max()) if A.nnz else 0.0
        self.pivoting = False
        try:
            self._lu = spla.splu(
                A,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options=dict(SymmetricMode=True),
            )
            self._check_pivots(pivot_tol)
        except (RuntimeError, SingularMatrixError):
            self._refactor(pivot_tol)

    def _refactor(self, pivot_tol):
        try:
            self._lu = spla.splu(self.A, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SingularMatrixError(f"LU factorization failed: {exc}") from exc
        self.pivoting = True
        self._check_pivots(pivot_tol)

    def _check_pivots(self, pivot_tol):
        d = np.abs(self._lu.U.diagonal())
        k = int(np.argmin(d))
        scale = max(float(abs(self.A).max()), 1e-300)
        if not d[k] > pivot_tol * scale:
            row = int(np.argsort(self._lu.perm_r)[k])
            raise SingularMatrixError(f"near-singular pivot {d[k]:.3e} at row {row}", row=row)

    def _ok(self, x, b):
        r = np.max(np.abs(self.A @ x - b)) if b.size else 0.0
        return r <= self.rtol * (self._norm * np.max(np.abs(x)) + np.max(np.abs(b)))

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        x = self._lu.solve(b)
        if not (np.all(np.isfinite(x)) and self._ok(x, b)) and not self.pivoting:
            self._refactor(1e-14)
            x = self._lu.solve(b)
        return x


def lu_factorize(A, pivot_tol=1e-14):
    """Factorize a square sparse matrix; raises :class:`SingularMatrixError`."""
    A = sp.csc_matrix(A, dtype=float)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix must be square, got shape {A.shape}")
    return Factorization(A, pivot_tol=pivot_tol)


def lu_solve(F, b):
    return F.solve(b)
