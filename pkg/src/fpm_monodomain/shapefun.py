"""Per-point gradient matrices and affine shape-function rows.

At a point P0 with support neighbors P1..Pm, the field gradient is fitted by
weighted least squares over the neighbor increments.  With A the m x dim
matrix of offsets (x_i - x0) and constant unit weights, the gradient operator
is

    B = (A^T A)^-1 A^T [I1 I2],   I1 = -ones(m, 1),  I2 = eye(m),

so grad V = B @ [V0, V1, ..., Vm].  The local trial function is the affine
extension  V_h(x) = V0 + (x - x0) . grad V,  whose row form

    N(x) = (x - x0)^T B + [1, 0, ..., 0]

satisfies N(x0) = e1 and partition of unity exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DegenerateSupportError
from .geometry import CellPartition, SupportDomain, support_at_depth

COND_LIMIT = 1e12  # condition number of A^T A beyond which a support is rejected


@dataclass(frozen=True)
class ShapeFunction:
    """Gradient matrix and affine shape row for one point's cell."""

    center: int
    neighbors: np.ndarray     # m point indices, fixed order
    x0: np.ndarray            # center coordinates, cm
    B: np.ndarray             # dim x (m+1), units 1/cm

    def __post_init__(self):
        for name in ("neighbors", "x0", "B"):
            arr = np.ascontiguousarray(getattr(self, name))
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def m(self) -> int:
        return self.neighbors.size

    @property
    def dofs(self) -> np.ndarray:
        """Global point indices of the local vector [V0, V1, ..., Vm]."""
        return np.concatenate(([self.center], self.neighbors))


def build_gfd_matrix(
    x0,
    neighbor_coords,
    center: int = 0,
    neighbors=None,
    weights=None,
) -> ShapeFunction:
    """Least-squares gradient operator for a support domain.

    ``weights`` is an optional per-neighbor weighting hook; the default is
    the constant weight used throughout, which the solver assumes.

    Raises DegenerateSupportError when A^T A is numerically singular
    (condition number above ``COND_LIMIT``).
    """
    x0 = np.asarray(x0, dtype=float)
    coords = np.asarray(neighbor_coords, dtype=float)
    dim = x0.size
    m = coords.shape[0]
    if m < dim:
        raise DegenerateSupportError(
            f"support of point {center} has {m} neighbors, need at least {dim}"
        )
    A = coords - x0
    if weights is None:
        AtA = A.T @ A
        At = A.T
    else:
        w = np.asarray(weights, dtype=float)
        AtA = A.T @ (w[:, None] * A)
        At = A.T * w
    cond = np.linalg.cond(AtA)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise DegenerateSupportError(
            f"support of point {center} is numerically singular "
            f"(cond(A^T A) = {cond:.3e})"
        )
    G = np.linalg.solve(AtA, At)          # dim x m, the pseudo-inverse action
    B = np.empty((dim, m + 1))
    B[:, 0] = -G.sum(axis=1)              # I1 column: all deltas share -V0
    B[:, 1:] = G                          # I2 block
    nbrs = (
        np.arange(1, m + 1, dtype=np.int64) if neighbors is None
        else np.asarray(neighbors, dtype=np.int64)
    )
    return ShapeFunction(center=center, neighbors=nbrs, x0=x0, B=B)


def eval_shape(sf: ShapeFunction, x) -> np.ndarray:
    """Shape row N(x) with N(x) @ V_E = V_h(x); valid inside the owner cell."""
    x = np.asarray(x, dtype=float)
    N = (x - sf.x0) @ sf.B
    N[0] += 1.0
    return N


def eval_shape_many(sf: ShapeFunction, xs: np.ndarray) -> np.ndarray:
    """Shape rows at several points, stacked as (npts, m+1)."""
    xs = np.asarray(xs, dtype=float)
    N = (xs - sf.x0) @ sf.B
    N[:, 0] += 1.0
    return N


def eval_gradient(sf: ShapeFunction, values) -> np.ndarray:
    """Gradient of the local trial function (constant over the cell)."""
    v = np.asarray(values, dtype=float)
    if v.shape[-1] != sf.m + 1:
        raise ContractError(
            f"expected {sf.m + 1} local values for point {sf.center}, got {v.shape[-1]}"
        )
    return sf.B @ v


def build_shape_functions(
    partition: CellPartition,
    supports: list[SupportDomain] | None = None,
    max_depth: int = 3,
) -> list[ShapeFunction]:
    """Shape functions for every point, widening supports that are too
    ill-conditioned for a stable gradient fit."""
    pos = partition.points.positions
    out: list[ShapeFunction] = []
    for i in range(partition.n_points):
        provided = supports[i] if supports is not None else None
        sf = None
        last_err: Exception | None = None
        depths = (
            [provided.ring_depth] if provided is not None else range(1, max_depth + 1)
        )
        for depth in depths:
            support = (
                provided if provided is not None
                else support_at_depth(partition, i, depth)
            )
            try:
                sf = build_gfd_matrix(
                    pos[i], pos[support.neighbors], center=i,
                    neighbors=support.neighbors,
                )
                break
            except DegenerateSupportError as err:
                last_err = err
        if sf is None:
            raise DegenerateSupportError(
                f"no usable support for point {i} up to ring depth {max_depth}"
            ) from last_err
        out.append(sf)
    return out
