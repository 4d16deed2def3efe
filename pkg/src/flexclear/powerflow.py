"""DC power flow: PTDFs, angle-based flow solves and match headroom.

Line flows are positive from ``from_node`` to ``to_node``. Injections are
arrays with one row per node (network order) and one column per period.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Direction, Network, _connected

FEAS_TOL = 1e-6
SENS_TOL = 1e-9


class NetworkError(ValueError):
    pass


class LimitViolation(NetworkError):
    def __init__(self, line: int, flow: float, limit: float):
        super().__init__(f"line {line} already violates its limit: |{flow:.6g}| > {limit:.6g}")
        self.line = line
        self.flow = flow
        self.limit = limit


@dataclass(frozen=True)
class PtdfMatrix:
    """Line-by-node sensitivities; column j is the flow change for +1 at node j
    withdrawn at the reference node."""

    matrix: np.ndarray
    network: Network

    def column(self, node) -> np.ndarray:
        return self.matrix[:, self.network.index(node)]

    def flows(self, injection: np.ndarray) -> np.ndarray:
        return self.matrix @ injection

    def transfer(self, offer_node, request_node, direction: Direction) -> np.ndarray:
        """Flow change per unit traded between an offer and a request.

        Up trades inject at the offer node and withdraw at the request node;
        down trades do the opposite.
        """
        return direction.sign * (self.column(offer_node) - self.column(request_node))


@dataclass
class FlowState:
    flows: np.ndarray
    angles: np.ndarray


def incidence(network: Network) -> np.ndarray:
    """Line-node incidence matrix (+1 at from-node, -1 at to-node)."""
    A = np.zeros((network.n_lines, network.n_nodes))
    for k, ln in enumerate(network.lines):
        A[k, network.index(ln.from_node)] = 1.0
        A[k, network.index(ln.to_node)] = -1.0
    return A


def susceptance_matrix(network: Network) -> np.ndarray:
    A = incidence(network)
    b = np.array([ln.susceptance for ln in network.lines], dtype=float)
    return A.T @ (b[:, None] * A)


def _reduced_inverse(network: Network) -> np.ndarray:
    """Inverse of the susceptance matrix with the reference row/col removed,
    padded back to full size with zeros on the reference."""
    if not _connected(network):
        raise NetworkError("network is not connected")
    B = susceptance_matrix(network)
    ref = network.index(network.reference)
    keep = np.array([i for i in range(network.n_nodes) if i != ref], dtype=int)
    X = np.zeros_like(B)
    if keep.size:
        Bred = B[np.ix_(keep, keep)]
        try:
            X[np.ix_(keep, keep)] = np.linalg.inv(Bred)
        except np.linalg.LinAlgError as e:
            raise NetworkError("singular susceptance matrix") from e
    return X


def compute_ptdf(network: Network) -> PtdfMatrix:
    A = incidence(network)
    b = np.array([ln.susceptance for ln in network.lines], dtype=float)
    X = _reduced_inverse(network)
    H = (b[:, None] * A) @ X
    H[:, network.index(network.reference)] = 0.0
    return PtdfMatrix(H, network)


def solve_flows(network: Network, injection: np.ndarray, tol: float = FEAS_TOL) -> FlowState:
    """Angle-based DC solve for every period of ``injection`` (nodes x periods)."""
    P = np.asarray(injection, dtype=float)
    squeeze = P.ndim == 1
    if squeeze:
        P = P[:, None]
    imbalance = P.sum(axis=0)
    if np.any(np.abs(imbalance) > tol):
        t = int(np.argmax(np.abs(imbalance)))
        raise NetworkError(f"unbalanced injections in period {t}: {imbalance[t]:.6g}")
    X = _reduced_inverse(network)
    theta = X @ P
    A = incidence(network)
    b = np.array([ln.susceptance for ln in network.lines], dtype=float)
    flows = b[:, None] * (A @ theta)
    if squeeze:
        return FlowState(flows[:, 0], theta[:, 0])
    return FlowState(flows, theta)


def violations(network: Network, flows: np.ndarray) -> np.ndarray:
    """Amount by which each |flow| exceeds its limit (zero when within)."""
    lim = network.limits
    if flows.ndim == 2:
        lim = lim[:, None]
    return np.maximum(np.abs(flows) - lim, 0.0)


def flow_window(limits: np.ndarray, flows: np.ndarray):
    """Admissible flow interval per line given the current flows.

    A line inside its limit must stay inside it; an overloaded line may not
    get any more loaded in the overloaded direction.
    """
    upper = np.maximum(limits, flows)
    lower = np.minimum(-limits, flows)
    return lower, upper


def quantity_max(flows: np.ndarray, network: Network, ptdf: PtdfMatrix, offer_node,
                 request_node, direction: Direction, q_cap: float,
                 allow_overloaded: bool = False) -> float:
    """Largest trade in ``[0, q_cap]`` keeping every line within its limit.

    ``flows`` are the current line flows of the traded period. With
    ``allow_overloaded`` a line that is already over its limit is accepted as
    long as the trade does not increase its loading; otherwise such a line
    raises :class:`LimitViolation`.
    """
    if q_cap <= 0:
        return 0.0
    flows = np.asarray(flows, dtype=float)
    limits = network.limits
    over = np.abs(flows) > limits + FEAS_TOL
    if over.any() and not allow_overloaded:
        k = int(np.flatnonzero(over)[0])
        raise LimitViolation(k, float(flows[k]), float(limits[k]))
    sigma = ptdf.transfer(offer_node, request_node, direction)
    lower, upper = flow_window(limits, flows)
    q = float(q_cap)
    pos = sigma > SENS_TOL
    if pos.any():
        q = min(q, float(np.min(np.maximum(upper[pos] - flows[pos], 0.0) / sigma[pos])))
    neg = sigma < -SENS_TOL
    if neg.any():
        q = min(q, float(np.min(np.maximum(flows[neg] - lower[neg], 0.0) / -sigma[neg])))
    return max(q, 0.0)
