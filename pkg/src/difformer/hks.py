"""Heat kernel signatures on point clouds.

The Laplace-Beltrami operator is discretized as a Gaussian-weighted symmetric
normalized graph Laplacian on a symmetrized k-NN graph, which keeps the
spectrum inside [0, 2] and makes the signature exactly isometry-invariant
(all weights depend on pairwise distances only). Signatures are

    h(x, t) = sum_i exp(-lambda_i * t) * phi_i(x)^2

truncated to the m smallest eigenpairs and sampled at logarithmically spaced
diffusion times spanning [4 ln10 / lambda_m, 4 ln10 / lambda_2].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .diffusion import GraphODEBlock, bind_edge_conv, edge_conv, ode_integrate, \
    register_edge_conv
from .knn import NeighborGraph, knn
from .tensor import Tensor
from .validation import as_points, check_k


@dataclass(frozen=True)
class GraphLaplacian:
    matrix: np.ndarray  # (N, N) symmetric, spectrum in [0, 2]
    bandwidth: float  # Gaussian bandwidth sigma_h, meters^2
    degrees: np.ndarray | None = None  # weighted degrees before normalization

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class SpectralDecomposition:
    eigenvalues: np.ndarray  # (m,) ascending
    eigenvectors: np.ndarray  # (N, m) orthonormal columns


@dataclass(frozen=True)
class HeatKernelSignature:
    values: np.ndarray  # (N, m_t), non-negative, non-increasing along times
    times: np.ndarray  # (m_t,) strictly increasing


def build_laplacian(points, k: int) -> GraphLaplacian:
    pts = as_points(points)
    n = pts.shape[0]
    k = check_k(k, n)
    graph = knn(pts, k)
    rows = graph.centers()
    cols = graph.flat()
    sq_dist = ((pts[rows] - pts[cols]) ** 2).sum(axis=1)
    sigma = sq_dist.mean()
    if sigma <= 0.0:
        raise ValueError("degenerate bandwidth: all neighbor distances are zero")
    full_sq = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    w = np.exp(-full_sq / (4.0 * sigma))
    adj = np.zeros((n, n), dtype=bool)
    adj[rows, cols] = True
    adj |= adj.T  # keep an edge if either endpoint lists the other
    w = np.where(adj, w, 0.0)
    deg = w.sum(axis=1)
    if (deg <= 0.0).any():
        bad = int(np.argmin(deg))
        raise ValueError(f"isolated node {bad} in the neighbor graph: cannot normalize")
    inv_sqrt = 1.0 / np.sqrt(deg)
    lap = np.eye(n) - (inv_sqrt[:, None] * w) * inv_sqrt[None, :]
    lap = 0.5 * (lap + lap.T)
    return GraphLaplacian(lap, float(sigma), deg)


def eig_smallest(lap: GraphLaplacian, m: int) -> SpectralDecomposition:
    """The m smallest eigenpairs, eigenvector signs fixed deterministically."""
    if m < 1 or m > lap.n:
        raise ValueError(f"need 1 <= m <= {lap.n}, got {m}")
    try:
        vals, vecs = np.linalg.eigh(lap.matrix)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"eigendecomposition did not converge: {exc}") from exc
    vals = vals[:m]
    vecs = vecs[:, :m]
    for i in range(m):
        col = vecs[:, i]
        nz = np.nonzero(np.abs(col) > 1e-12)[0]
        if nz.size and col[nz[0]] < 0:
            vecs[:, i] = -col
    return SpectralDecomposition(vals, vecs)


def hks_times(spec: SpectralDecomposition, m_t: int) -> np.ndarray:
    """Log-spaced diffusion times over [4 ln10 / lambda_m, 4 ln10 / lambda_2]."""
    if m_t < 2:
        raise ValueError(f"need at least 2 time samples, got {m_t}")
    if spec.eigenvalues.size < 2:
        raise ValueError("need at least two eigenpairs to place the time window")
    lam2 = spec.eigenvalues[1]
    lam_m = spec.eigenvalues[-1]
    if lam2 <= 1e-12:
        raise ValueError("graph disconnected: second eigenvalue is zero")
    if lam_m <= lam2:
        raise ValueError("degenerate spectrum: largest retained eigenvalue equals lambda_2")
    t_min = 4.0 * np.log(10.0) / lam_m
    t_max = 4.0 * np.log(10.0) / lam2
    return np.geomspace(t_min, t_max, m_t)


def hks_compute(spec: SpectralDecomposition, times) -> HeatKernelSignature:
    times = np.asarray(times, dtype=np.float64)
    lam = np.maximum(spec.eigenvalues, 0.0)  # clip tiny negatives from eigh round-off
    decay = np.exp(-lam[:, None] * times[None, :])
    values = (spec.eigenvectors ** 2) @ decay
    return HeatKernelSignature(values, times)


def hks_for_cloud(points, *, k: int, m: int, m_t: int) -> HeatKernelSignature:
    lap = build_laplacian(points, k)
    spec = eig_smallest(lap, m)
    return hks_compute(spec, hks_times(spec, m_t))


class HksEmbedding:
    """Graph-ODE filter over the k-NN graph of signature rows, then a linear lift."""

    def __init__(self, store: T.ParameterStore, *, width: int, m_t: int, k: int,
                 ode_steps: int = 4, ode_horizon: float = 1.0, ode_method: str = "rk4",
                 rng: np.random.Generator | None = None):
        self.k = k
        self.ode_steps = ode_steps
        self.ode_horizon = ode_horizon
        self.ode_method = ode_method
        if rng is not None:
            self.ode_layer = register_edge_conv(store, rng, "hks.ode", 2 * m_t, m_t, "concat")
            self.fc_w = store.add("hks.fc.w", T.glorot_uniform(rng, m_t, width))
            self.fc_b = store.add("hks.fc.b", np.zeros((1, width)))
        else:
            self.ode_layer = bind_edge_conv(store, "hks.ode", "concat")
            self.fc_w = store["hks.fc.w"]
            self.fc_b = store["hks.fc.b"]

    def __call__(self, sig: HeatKernelSignature, graph: NeighborGraph | None = None) -> Tensor:
        z0 = Tensor(sig.values)
        if graph is None:
            graph = knn(sig.values, self.k)
        layer = self.ode_layer
        block = GraphODEBlock(lambda state, g: edge_conv(state, g, layer), k=self.k,
                              horizon=self.ode_horizon, steps=self.ode_steps,
                              method=self.ode_method)
        filtered = ode_integrate(block, z0, graph)
        return T.add(T.matmul(filtered, self.fc_w), self.fc_b)


def signature_csv(sig: HeatKernelSignature) -> str:
    header = "point_index," + ",".join(f"t_{i + 1}" for i in range(sig.times.size))
    lines = [header]
    for idx, row in enumerate(sig.values):
        lines.append(f"{idx}," + ",".join(f"{v:.17g}" for v in row))
    return "\n".join(lines) + "\n"
