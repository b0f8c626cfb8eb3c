"""Quadrature rules on edges and triangles."""
import numpy as np

# 2-point Gauss-Legendre on [0, 1]; exact for cubics.
GAUSS2_NODES = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
GAUSS2_WEIGHTS = np.array([0.5, 0.5])


def _dunavant7():
    s = np.sqrt(15.0)
    a1, b1 = (9.0 - 2.0 * s) / 21.0, (6.0 + s) / 21.0
    a2, b2 = (9.0 + 2.0 * s) / 21.0, (6.0 - s) / 21.0
    w1, w2 = (155.0 + s) / 1200.0, (155.0 - s) / 1200.0
    bary = np.array([
        [1 / 3, 1 / 3, 1 / 3],
        [a1, b1, b1], [b1, a1, b1], [b1, b1, a1],
        [a2, b2, b2], [b2, a2, b2], [b2, b2, a2],
    ])
    weights = np.array([9.0 / 40.0, w1, w1, w1, w2, w2, w2])
    return bary, weights


# 7-point rule, degree 5; weights sum to 1 (multiply by the cell area).
TRI7_BARY, TRI7_WEIGHTS = _dunavant7()

# Edge-midpoint rule, degree 2.
TRI_MIDPOINT_BARY = np.array([[0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]])
TRI_MIDPOINT_WEIGHTS = np.full(3, 1.0 / 3.0)


def triangle_points(mesh, bary=TRI7_BARY):
    """Physical quadrature points, shape (C, Q, 2)."""
    p = mesh.vertices[mesh.cells]
    return np.einsum("qi,cid->cqd", bary, p)


def edge_average(mesh, func, edges=None):
    """Mean of ``func(x, y)`` over each edge using 2-point Gauss."""
    if edges is None:
        edges = np.arange(mesh.n_edges)
    ev = mesh.vertices[mesh.edges[edges]]
    total = np.zeros(len(edges))
    for t, w in zip(GAUSS2_NODES, GAUSS2_WEIGHTS):
        pts = (1.0 - t) * ev[:, 0] + t * ev[:, 1]
        total += w * np.broadcast_to(func(pts[:, 0], pts[:, 1]), (len(edges),))
    return total
