"""Uniform periodic triangulations of the unit square.

The unit square is identified with the 2-torus, so node ``(i, j)`` with
``0 <= i, j < n`` stands for every periodic image of the point
``(i/n, j/n)``. Each cell is split along its lower-left to upper-right
diagonal. Elements that cross the periodic seam store a per-vertex shift
so their geometry is always evaluated on a contiguous triangle.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True, eq=False)
class Mesh:
    """Periodic P1 mesh of ``[0, 1]^2`` with ``n`` cells per axis.

    Attributes
    ----------
    n : int
        Subdivisions per axis.
    nodes : ndarray, shape (n*n, 2)
        Coordinates of the representative nodes in ``[0, 1)^2``.
    elements : ndarray, shape (2*n*n, 3)
        Counter-clockwise node triples.
    shifts : ndarray, shape (2*n*n, 3, 2)
        Periodic offsets added to ``nodes[elements]`` to unwrap each element.
    """

    n: int
    nodes: np.ndarray
    elements: np.ndarray
    shifts: np.ndarray
    areas: np.ndarray = field(repr=False)
    grads: np.ndarray = field(repr=False)

    @property
    def h(self):
        """Element diameter (length of the cell diagonal)."""
        return np.sqrt(2.0) / self.n

    @property
    def num_nodes(self):
        return self.nodes.shape[0]

    @property
    def num_elements(self):
        return self.elements.shape[0]

    def edges(self):
        """Unique undirected edges as an ``(E, 2)`` array of node indices.

        Two edges joining the same nodes through different periodic images
        (possible on very coarse meshes) are kept apart.
        """
        xy = self.vertex_coordinates()
        loc = [(0, 1), (1, 2), (2, 0)]
        a = np.concatenate([self.elements[:, i] for i, _ in loc])
        b = np.concatenate([self.elements[:, j] for _, j in loc])
        disp = np.concatenate([xy[:, j] - xy[:, i] for i, j in loc])
        flip = a > b
        a, b = np.where(flip, b, a), np.where(flip, a, b)
        disp[flip] *= -1
        key = np.column_stack([a, b, np.rint(disp * self.n).astype(np.int64)])
        return np.unique(key, axis=0)[:, :2]

    def vertex_coordinates(self):
        """Unwrapped vertex coordinates, shape ``(num_elements, 3, 2)``."""
        return self.nodes[self.elements] + self.shifts

    def valence(self):
        """Number of edges meeting at each node."""
        e = self.edges()
        return np.bincount(e.ravel(), minlength=self.num_nodes)


def _node_id(i, j, n):
    return (j % n) * n + (i % n)


def build_periodic_unit_square_mesh(n):
    """Build the diagonal-split periodic mesh with ``n`` cells per axis."""
    n = int(n)
    if n < 2:
        raise ValueError(f"periodic mesh needs n >= 2, got n={n}")

    idx = np.arange(n)
    ii, jj = np.meshgrid(idx, idx, indexing="xy")
    nodes = np.column_stack([ii.ravel() / n, jj.ravel() / n])

    # cell (i, j) -> lower (v00, v10, v11) and upper (v00, v11, v01)
    ci, cj = ii.ravel(), jj.ravel()
    v00 = _node_id(ci, cj, n)
    v10 = _node_id(ci + 1, cj, n)
    v11 = _node_id(ci + 1, cj + 1, n)
    v01 = _node_id(ci, cj + 1, n)
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    elements = np.empty((2 * n * n, 3), dtype=np.int64)
    elements[0::2] = lower
    elements[1::2] = upper

    # seam cells reach across to node 0; shift those corners by one period
    wrap_i = (ci == n - 1).astype(float)
    wrap_j = (cj == n - 1).astype(float)
    zero = np.zeros_like(wrap_i)
    s00 = np.column_stack([zero, zero])
    s10 = np.column_stack([wrap_i, zero])
    s11 = np.column_stack([wrap_i, wrap_j])
    s01 = np.column_stack([zero, wrap_j])
    shifts = np.empty((2 * n * n, 3, 2))
    shifts[0::2] = np.stack([s00, s10, s11], axis=1)
    shifts[1::2] = np.stack([s00, s11, s01], axis=1)

    xy = nodes[elements] + shifts
    areas, grads = _p1_geometry(xy)
    if np.any(areas <= 0.0):
        raise RuntimeError("mesh construction produced a non-positive element area")
    return Mesh(n=n, nodes=nodes, elements=elements, shifts=shifts, areas=areas, grads=grads)


def _p1_geometry(xy):
    """Areas and barycentric gradients for triangles ``xy`` of shape (E, 3, 2)."""
    d1 = xy[:, 1] - xy[:, 0]
    d2 = xy[:, 2] - xy[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    areas = 0.5 * det
    # rows of the inverse Jacobian give grad(lambda_1), grad(lambda_2)
    g1 = np.column_stack([d2[:, 1], -d2[:, 0]]) / det[:, None]
    g2 = np.column_stack([-d1[:, 1], d1[:, 0]]) / det[:, None]
    g0 = -(g1 + g2)
    return areas, np.stack([g0, g1, g2], axis=1)


def element_geometry(mesh, e):
    """Return ``(vertices, area, gradients)`` of element ``e``.

    ``vertices`` is the unwrapped 3x2 coordinate block and ``gradients``
    holds the constant gradient of each barycentric basis function, one
    row per local vertex.
    """
    if not 0 <= e < mesh.num_elements:
        raise IndexError(f"element index {e} out of range [0, {mesh.num_elements})")
    xy = mesh.nodes[mesh.elements[e]] + mesh.shifts[e]
    return xy, float(mesh.areas[e]), mesh.grads[e].copy()


def prolongation_matrix(coarse, fine):
    """Sparse P1 interpolation operator from ``coarse`` to ``fine`` nodes."""
    if fine.n != 2 * coarse.n:
        raise ValueError(
            f"fine mesh must have twice the subdivisions: coarse n={coarse.n}, fine n={fine.n}"
        )
    n = coarse.n
    N = fine.n
    idx = np.arange(N)
    II, JJ = np.meshgrid(idx, idx, indexing="xy")
    II, JJ = II.ravel(), JJ.ravel()
    rows = _node_id(II, JJ, N)
    i0, j0 = II // 2, JJ // 2
    # odd fine index means the node sits halfway to the next coarse node
    i1 = i0 + (II % 2)
    j1 = j0 + (JJ % 2)
    a = _node_id(i0, j0, n)
    b = _node_id(i1, j1, n)
    r = np.concatenate([rows, rows])
    c = np.concatenate([a, b])
    v = np.full(r.shape, 0.5)
    # coo_matrix sums duplicates, so vertex copies come out as 0.5 + 0.5
    return sp.coo_matrix((v, (r, c)), shape=(fine.num_nodes, coarse.num_nodes)).tocsr()


def prolong_nodal(coarse, fine, u_coarse):
    """Interpolate the P1 function ``u_coarse`` onto the nested ``fine`` mesh."""
    u_coarse = np.asarray(u_coarse, dtype=float)
    if u_coarse.shape != (coarse.num_nodes,):
        raise ValueError(
            f"expected {coarse.num_nodes} nodal values, got shape {u_coarse.shape}"
        )
    return prolongation_matrix(coarse, fine) @ u_coarse
