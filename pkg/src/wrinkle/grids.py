"""Uniform x-grids, Fourier k-grids, quadrature and the shared difference scheme.

Convention: an x-grid over ``[a, b]`` stores the ``n`` nodes ``a + h, ..., b``;
the left endpoint is an implicit node where every coefficient table vanishes.
The derivative used everywhere (energy, solver gradient, diagnostics) is the
one-sided difference over the cell to the left of a node, with a ghost zero
at the left endpoint::

    (D v)_i = (v_i - v_{i-1}) / h,    v_0 = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SCHEME = "ghost-zero-forward"


@dataclass(frozen=True)
class XGrid:
    nodes: np.ndarray
    h: float
    domain: tuple[float, float]

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def n(self) -> int:
        return len(self.nodes)

    def trapezoid_weights(self, skip: int = 0) -> np.ndarray:
        """Trapezoid weights over the stored nodes ``nodes[skip:]``.

        The cell between the implicit left endpoint and the first stored node
        is not integrated; for ``skip > 0`` the first ``skip`` nodes get weight 0.
        """
        w = np.full(self.n, self.h)
        if skip >= self.n - 1:
            raise ValueError("skip leaves fewer than two nodes")
        w[:skip] = 0.0
        w[skip] = 0.5 * self.h
        w[-1] = 0.5 * self.h
        return w

    def integrate(self, values: np.ndarray, skip: int = 0) -> np.ndarray | float:
        """Trapezoid rule along the first axis."""
        values = np.asarray(values, dtype=float)
        w = self.trapezoid_weights(skip)
        return np.tensordot(w, values, axes=(0, 0))

    def cumulative(self, values: np.ndarray) -> np.ndarray:
        """Running trapezoid integral from the first stored node."""
        values = np.asarray(values, dtype=float)
        out = np.zeros_like(values)
        out[1:] = np.cumsum(0.5 * self.h * (values[1:] + values[:-1]), axis=0)
        return out


def make_x_grid(n: int, domain: tuple[float, float] = (0.0, 1.0)) -> XGrid:
    """Uniform grid of ``n`` nodes ``a + h, ..., b`` with ``h = (b - a) / n``."""
    if int(n) != n or n < 2:
        raise ValueError(f"need at least two nodes, got n={n}")
    a, b = float(domain[0]), float(domain[1])
    if not np.isfinite(a) or not np.isfinite(b) or b <= a:
        raise ValueError(f"degenerate interval [{a}, {b}]")
    n = int(n)
    h = (b - a) / n
    nodes = a + h * np.arange(1, n + 1)
    nodes[-1] = b
    return XGrid(nodes=nodes, h=h, domain=(a, b))


@dataclass(frozen=True)
class KGrid:
    """Nonzero multiples of ``pi / L_eff`` with ``|k| <= k_max``.

    ``index`` holds the integer multipliers ``j`` (``k = j * pi / L_eff``), sorted
    ascending. With ``symmetric=False`` only positive ``j`` are kept.
    """

    L_eff: float
    k_max: float
    index: np.ndarray
    symmetric: bool = True

    @property
    def spacing(self) -> float:
        return np.pi / self.L_eff

    @property
    def k(self) -> np.ndarray:
        return self.index * self.spacing

    @property
    def j_max(self) -> int:
        return int(np.max(np.abs(self.index)))

    def __len__(self) -> int:
        return len(self.index)


def make_k_grid(L_eff: float, k_max: float, symmetric: bool = True) -> KGrid:
    if not L_eff > 0:
        raise ValueError(f"L_eff must be positive, got {L_eff}")
    spacing = np.pi / L_eff
    # tolerate k_max equal to a multiple up to rounding
    j_top = int(np.floor(k_max / spacing * (1 + 1e-12)))
    if j_top < 1:
        raise ValueError(f"k_max={k_max} below the first frequency {spacing:.6g}: empty grid")
    pos = np.arange(1, j_top + 1)
    index = np.concatenate([-pos[::-1], pos]) if symmetric else pos
    return KGrid(L_eff=float(L_eff), k_max=float(k_max), index=index, symmetric=symmetric)


def diff_x(values: np.ndarray, grid: XGrid) -> np.ndarray:
    """Ghost-zero one-sided difference along axis 0 (see module docstring)."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] != grid.n:
        raise ValueError(f"length mismatch: {values.shape[0]} values for {grid.n} nodes")
    out = np.empty_like(values)
    out[0] = values[0]
    out[1:] = values[1:] - values[:-1]
    return out / grid.h


def diff_x_adjoint(values: np.ndarray, grid: XGrid) -> np.ndarray:
    """Transpose of :func:`diff_x` as a linear map (used for gradients)."""
    values = np.asarray(values, dtype=float)
    out = values.copy()
    out[:-1] -= values[1:]
    return out / grid.h


def simpson_weights(n_intervals: int, h: float) -> np.ndarray:
    """Composite Simpson weights on ``n_intervals + 1`` equispaced points."""
    if n_intervals % 2:
        raise ValueError("Simpson's rule needs an even number of intervals")
    w = np.ones(n_intervals + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * h / 3.0
