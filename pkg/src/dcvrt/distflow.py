"""Radial data-center network and the Linear DistFlow voltage model.

Nodes are indexed ``0..n-1`` internally; the PCC (root) is not part of the
index set and only enters the voltage equation as the offset ``v0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from dcvrt.errors import ConfigError, TopologyError

UNIFORM_RATIO_RTOL = 1e-9


@dataclass(frozen=True)
class Line:
    parent: str
    child: str
    r: float
    x: float


@dataclass(frozen=True)
class NetworkTopology:
    """A tree of lines hanging off ``root``.

    ``nodes`` fixes the index order used by every vector and matrix in the
    package. Each non-root node has exactly one incoming line.
    """

    root: str
    nodes: tuple
    lines: tuple

    def __post_init__(self):
        validate_topology(self)
        object.__setattr__(self, "_index", {name: i for i, name in enumerate(self.nodes)})

    @classmethod
    def from_lines(cls, lines: Sequence, root: str = "pcc") -> "NetworkTopology":
        """Build from ``(parent, child, r, x)`` tuples or :class:`Line` objects.

        Node order follows first appearance as a child.
        """
        parsed = tuple(ln if isinstance(ln, Line) else Line(str(ln[0]), str(ln[1]), float(ln[2]), float(ln[3]))
                       for ln in lines)
        nodes = tuple(ln.child for ln in parsed)
        return cls(root=str(root), nodes=nodes, lines=parsed)

    @property
    def n(self) -> int:
        return len(self.nodes)

    def index(self, node: str) -> int:
        try:
            return self._index[node]
        except KeyError:
            raise ConfigError(f"unknown node {node!r}") from None

    def line_into(self) -> dict:
        """Map child node name -> the line feeding it."""
        return {ln.child: ln for ln in self.lines}

    def root_paths(self) -> list:
        """For each node, the indices of the lines on its root path."""
        into = {ln.child: k for k, ln in enumerate(self.lines)}
        paths = []
        for node in self.nodes:
            path = []
            cur = node
            while cur != self.root:
                k = into[cur]
                path.append(k)
                cur = self.lines[k].parent
            paths.append(path)
        return paths


def validate_topology(topo: NetworkTopology) -> None:
    if len(topo.nodes) == 0:
        raise TopologyError("network has no nodes")
    if len(set(topo.nodes)) != len(topo.nodes):
        raise TopologyError("duplicate node names")
    if topo.root in topo.nodes:
        raise TopologyError("root node cannot also be a child")
    children = [ln.child for ln in topo.lines]
    if sorted(children) != sorted(topo.nodes) or len(children) != len(set(children)):
        raise TopologyError("every non-root node needs exactly one parent line")
    for ln in topo.lines:
        if not (ln.r > 0 and ln.x > 0):
            raise TopologyError(f"line {ln.parent}->{ln.child} must have r > 0 and x > 0")
        if ln.parent != topo.root and ln.parent not in topo.nodes:
            raise TopologyError(f"line {ln.parent}->{ln.child}: unknown parent {ln.parent!r}")
    parent = {ln.child: ln.parent for ln in topo.lines}
    for node in topo.nodes:
        seen = set()
        cur = node
        while cur != topo.root:
            if cur in seen:
                raise TopologyError(f"cycle detected through node {cur!r}")
            seen.add(cur)
            cur = parent[cur]


@dataclass(frozen=True)
class SensitivityMatrices:
    R: np.ndarray
    X: np.ndarray
    uniform_ratio: Optional[float] = None

    def __post_init__(self):
        self.R.setflags(write=False)
        self.X.setflags(write=False)

    @property
    def n(self) -> int:
        return self.R.shape[0]

    def submatrix(self, idx) -> "SensitivityMatrices":
        idx = np.asarray(idx, dtype=int)
        return SensitivityMatrices(self.R[np.ix_(idx, idx)].copy(), self.X[np.ix_(idx, idx)].copy(),
                                   self.uniform_ratio)


@dataclass(frozen=True)
class PowerState:
    p: np.ndarray
    q: np.ndarray
    v0: float = 1.0

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if p.shape != q.shape or p.ndim != 1:
            raise ConfigError("p and q must be 1-D vectors of equal length")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)


def path_matrix(topo: NetworkTopology) -> np.ndarray:
    """Binary node x line matrix: entry (i, k) is 1 when line k lies on the root path of node i."""
    P = np.zeros((topo.n, len(topo.lines)))
    for i, path in enumerate(topo.root_paths()):
        P[i, path] = 1.0
    return P


def build_sensitivity(topo: NetworkTopology) -> SensitivityMatrices:
    """R and X as sums of line impedances over shared root-path segments."""
    P = path_matrix(topo)
    r = np.array([ln.r for ln in topo.lines])
    x = np.array([ln.x for ln in topo.lines])
    R = (P * r) @ P.T
    X = (P * x) @ P.T
    ratios = r / x
    rho = None
    if np.all(np.abs(ratios - ratios[0]) <= UNIFORM_RATIO_RTOL * abs(ratios[0])):
        rho = float(ratios[0])
    return SensitivityMatrices(R, X, rho)


def incidence_matrix(topo: NetworkTopology) -> np.ndarray:
    """Node x line incidence with the root row removed (+1 at the child, -1 at the parent)."""
    idx = topo._index
    M = np.zeros((topo.n, len(topo.lines)))
    for k, ln in enumerate(topo.lines):
        M[idx[ln.child], k] = 1.0
        if ln.parent != topo.root:
            M[idx[ln.parent], k] = -1.0
    return M


def laplacian_form(topo: NetworkTopology) -> tuple:
    """(R, X) via ``M^-T D M^-1`` with explicit inversion of the reduced incidence matrix."""
    M = incidence_matrix(topo)
    Minv = np.linalg.inv(M)
    Dr = np.diag([ln.r for ln in topo.lines])
    Dx = np.diag([ln.x for ln in topo.lines])
    return Minv.T @ Dr @ Minv, Minv.T @ Dx @ Minv


def voltages(S: SensitivityMatrices, state: PowerState) -> np.ndarray:
    """v = R p + X q + v0."""
    if state.p.shape[0] != S.n:
        raise ConfigError(f"power vectors have length {state.p.shape[0]}, network has {S.n} nodes")
    return S.R @ state.p + S.X @ state.q + state.v0
