"""Thin-plate-spline fitting and backward image warping.

The spline interpolates 2-d control-point displacements with the
minimum-bending-energy radial basis U(r) = r^2 log(r^2) (U(0) = 0, equal
to the classical r^2 log r kernel up to a constant factor) plus an affine
term.  Fitting solves the augmented (n+3)x(n+3) linear system

    [[K + reg*I, P], [P^T, 0]] [w; a] = [target; 0]

independently for the x and y output coordinates; the zero block imposes
the side conditions sum(w) = sum(w*x) = sum(w*y) = 0.

Points are (x, y) pixel coordinates: x indexes columns, y indexes rows.
All functions are pure; fitted parameters are immutable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from refcolor.imageio import RgbImage


class TpsSolveError(RuntimeError):
    """The interpolation system is singular (collinear or duplicate points)."""


@dataclass(frozen=True)
class TpsParams:
    """Fitted spline: f(p) = affine @ [px, py, 1] + sum_i w_i U(|p - s_i|)."""

    source_points: np.ndarray  # (n, 2)
    radial_weights: np.ndarray  # (n, 2)
    affine: np.ndarray  # (2, 3), columns scale-x, scale-y, translation

    def __post_init__(self):
        for name, want in (("source_points", None), ("radial_weights", None), ("affine", (2, 3))):
            arr = np.asarray(getattr(self, name), dtype=np.float64).copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
            if want is not None and arr.shape != want:
                raise ValueError(f"{name} must have shape {want}, got {arr.shape}")
        if self.source_points.shape != self.radial_weights.shape or self.source_points.ndim != 2:
            raise ValueError("source_points and radial_weights must both be (n, 2)")

    @classmethod
    def identity(cls) -> "TpsParams":
        """Exact identity map (zero radial part, unit affine)."""
        anchors = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        return cls(anchors, np.zeros((3, 2)), np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))


def _kernel(sq_dist: np.ndarray) -> np.ndarray:
    # U in terms of squared distance avoids log of tiny radii; U(0) = 0.
    return np.where(sq_dist > 0.0, sq_dist * np.log(np.maximum(sq_dist, 1e-300)), 0.0)


def fit_tps(source: np.ndarray, target: np.ndarray, reg: float = 0.0) -> TpsParams:
    """Fit the spline mapping each source point to its target point.

    ``reg`` >= 0 trades interpolation exactness for smoothness; at reg=0
    the fitted map reproduces every target exactly.
    """
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.shape != target.shape or source.ndim != 2 or source.shape[1] != 2:
        raise ValueError(f"source/target must both be (n, 2), got {source.shape} and {target.shape}")
    n = source.shape[0]
    if n < 3:
        raise ValueError(f"need at least 3 control points, got {n}")
    if reg < 0:
        raise ValueError(f"regularization must be >= 0, got {reg}")

    poly = np.hstack([np.ones((n, 1)), source])
    if np.linalg.matrix_rank(poly) < 3:
        raise TpsSolveError("control points are collinear; spline system is singular")

    diff = source[:, None, :] - source[None, :, :]
    k = _kernel(np.einsum("ijk,ijk->ij", diff, diff))
    system = np.zeros((n + 3, n + 3))
    system[:n, :n] = k + reg * np.eye(n)
    system[:n, n:] = poly
    system[n:, :n] = poly.T
    rhs = np.zeros((n + 3, 2))
    rhs[:n] = target
    try:
        sol = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError as exc:
        raise TpsSolveError(f"singular spline system ({n} points, reg={reg}): {exc}") from exc

    affine = np.array(
        [
            [sol[n + 1, 0], sol[n + 2, 0], sol[n, 0]],
            [sol[n + 1, 1], sol[n + 2, 1], sol[n, 1]],
        ]
    )
    return TpsParams(source, sol[:n], affine)


def eval_tps(params: TpsParams, points: np.ndarray) -> np.ndarray:
    """Evaluate the spline at one (2,) point or a stack (m, 2) of points."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    diff = pts[:, None, :] - params.source_points[None, :, :]
    u = _kernel(np.einsum("ijk,ijk->ij", diff, diff))
    out = pts @ params.affine[:, :2].T + params.affine[:, 2] + u @ params.radial_weights
    return out[0] if single else out


def warp_image(img: RgbImage, params: TpsParams) -> RgbImage:
    """Backward warp: output pixel q samples the input at eval_tps(params, q).

    Sampling is bilinear; positions outside the image clamp to the edge.
    """
    h, w = img.height, img.width
    qx, qy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    pos = eval_tps(params, np.stack([qx.ravel(), qy.ravel()], axis=1))
    sx = np.clip(pos[:, 0], 0.0, w - 1.0)
    sy = np.clip(pos[:, 1], 0.0, h - 1.0)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sx - x0)[:, None]
    fy = (sy - y0)[:, None]
    px = img.pixels
    top = px[y0, x0] * (1.0 - fx) + px[y0, x1] * fx
    bot = px[y1, x0] * (1.0 - fx) + px[y1, x1] * fx
    return RgbImage((top * (1.0 - fy) + bot * fy).reshape(h, w, 3))


def random_tps(
    rng: np.random.Generator,
    height: int,
    width: int,
    grid_n: int = 3,
    max_offset: float = 0.1,
    reg: float = 0.0,
) -> TpsParams:
    """Random smooth warp: an n x n control grid with uniform displacements.

    Offsets are drawn per point and axis from [-max_offset, max_offset]
    times that axis's image extent.  max_offset = 0 returns the exact
    identity.  Deterministic given the generator state.
    """
    if grid_n < 2:
        raise ValueError(f"control grid must be at least 2x2, got {grid_n}")
    if not 0.0 <= max_offset < 0.5:
        raise ValueError(f"max_offset must be in [0, 0.5), got {max_offset}")
    if max_offset == 0.0:
        return TpsParams.identity()
    gx, gy = np.meshgrid(np.linspace(0, width - 1, grid_n), np.linspace(0, height - 1, grid_n))
    source = np.stack([gx.ravel(), gy.ravel()], axis=1)
    offsets = rng.uniform(-max_offset, max_offset, size=source.shape) * np.array([width, height])
    return fit_tps(source, source + offsets, reg)
