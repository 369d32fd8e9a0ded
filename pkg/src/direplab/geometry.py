"""Vector-geometry checks behind the representation-splitting picture.

Source and target are two equal-length 3-vectors S and T.  The midpoint
V = (S+T)/2 is the largest shared representation; the feasible alternatives
live on a circle of diameter OV perpendicular to the S-T plane, and every
point D on it satisfies OD perpendicular to DS and DT while carrying a
shorter shared part, ||OD|| = ||V|| sin(theta).  These facts are verified
numerically here, in 64-bit precision throughout.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np


class GeometryError(ValueError):
    """A verified claim failed; carries the violating angle."""

    def __init__(self, message, theta=None):
        super().__init__(message)
        self.theta = theta


def _vec(v, name):
    out = np.asarray(v, dtype=np.float64)
    if out.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} must be finite")
    return out


@dataclass(frozen=True, eq=False)
class GeometryInstance:
    """An equal-amplitude source/target pair; tolerance is relative."""

    S: np.ndarray
    T: np.ndarray
    tolerance: float = 1e-9

    def __post_init__(self):
        object.__setattr__(self, "S", _vec(self.S, "S"))
        object.__setattr__(self, "T", _vec(self.T, "T"))
        ns, nt = np.linalg.norm(self.S), np.linalg.norm(self.T)
        if ns == 0.0 or nt == 0.0:
            raise ValueError("S and T must be nonzero")
        if abs(ns - nt) > self.tolerance * max(ns, nt):
            raise ValueError(
                f"amplitudes differ: |S|={ns!r} vs |T|={nt!r}; "
                "the construction assumes equal amplitude")

    @property
    def is_degenerate(self):
        """Collinear S and T leave the circle plane undefined."""
        cross = np.cross(self.S, self.T)
        scale = np.linalg.norm(self.S) * np.linalg.norm(self.T)
        return np.linalg.norm(cross) <= 1e-12 * scale

    def plane_normal(self):
        if self.is_degenerate:
            raise GeometryError("S and T are collinear; no unique plane normal")
        cross = np.cross(self.S, self.T)
        return cross / np.linalg.norm(cross)


def vaegan_decompose(inst):
    """Midpoint split: DI = (S+T)/2, with the residuals as the two DDs."""
    di = (inst.S + inst.T) / 2.0
    return di, inst.S - di, inst.T - di


def circle_point(inst, theta):
    """The circle point at angle theta measured at V from the OV axis.

    D = V sin^2(theta) + n |V| sin(theta) cos(theta) traces the circle of
    diameter OV lying in the plane through OV perpendicular to the S-T
    plane; theta = pi/2 lands on V itself.
    """
    if not 0.0 < theta <= math.pi / 2:
        raise ValueError(f"theta must be in (0, pi/2], got {theta}")
    v = (inst.S + inst.T) / 2.0
    n = inst.plane_normal()
    if theta == math.pi / 2:  # cos would leave a ~1e-17 crumb off the apex
        return v
    s, c = math.sin(theta), math.cos(theta)
    return v * (s * s) + n * (np.linalg.norm(v) * s * c)


def orthogonality_residual(inst, d):
    """Normalized |OD . DS| and |OD . DT|; zero on the circle."""
    d = _vec(d, "D")
    nd = np.linalg.norm(d)
    if nd == 0.0:
        raise ValueError("OD has zero length")
    out = []
    for end in (inst.S, inst.T):
        leg = end - d
        nl = np.linalg.norm(leg)
        out.append(abs(float(np.dot(d, leg))) / (nd * nl))
    return tuple(out)


def ddrep_size(inst, di):
    """Combined length of what the two domains must each keep privately."""
    di = _vec(di, "DI")
    return float(np.linalg.norm(inst.S - di) + np.linalg.norm(inst.T - di))


@dataclass
class SweepReport:
    n_theta: int
    max_residual: float
    max_radius_error: float
    argmin_theta: float
    min_ddrep_size: float
    passed: bool = True


def theta_grid(n_theta):
    """n_theta angles evenly spaced in (0, pi/2], endpoint included."""
    if n_theta < 2:
        raise ValueError("need at least 2 angles")
    return (np.arange(1, n_theta + 1) / n_theta) * (math.pi / 2)


def verify_claims(inst, n_theta=1000, csv_path=None):
    """Sweep the circle and check the three claims; raises on any violation.

    (a) every sampled D satisfies both orthogonality conditions,
    (b) ||OD|| = ||V|| sin(theta) along the sweep,
    (c) ddrep_size over the circle bottoms out at theta = pi/2.
    Optionally writes the sweep as CSV for plotting.
    """
    if inst.is_degenerate:
        raise GeometryError("instance is degenerate (collinear S and T)")
    v = (inst.S + inst.T) / 2.0
    nv = np.linalg.norm(v)
    tol = inst.tolerance

    thetas = theta_grid(n_theta)
    rows = []
    max_residual = 0.0
    max_radius_error = 0.0
    sizes = np.empty(n_theta)
    for i, theta in enumerate(thetas):
        d = circle_point(inst, theta)
        res_s, res_t = orthogonality_residual(inst, d)
        nd = np.linalg.norm(d)
        radius_error = abs(nd - nv * math.sin(theta)) / nv
        sizes[i] = ddrep_size(inst, d)
        max_residual = max(max_residual, res_s, res_t)
        max_radius_error = max(max_radius_error, radius_error)
        rows.append((theta, nd, sizes[i], res_s, res_t))
        if res_s > tol or res_t > tol:
            raise GeometryError(
                f"orthogonality violated at theta={theta!r}: "
                f"residuals ({res_s:.3e}, {res_t:.3e})", theta=theta)
        if radius_error > tol:
            raise GeometryError(
                f"|OD| != |V| sin(theta) at theta={theta!r}: "
                f"relative error {radius_error:.3e}", theta=theta)

    if csv_path:
        with open(csv_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["theta", "od_norm", "ddrep_size",
                             "residual_s", "residual_t"])
            writer.writerows(rows)

    argmin = int(np.argmin(sizes))
    if argmin != n_theta - 1:
        raise GeometryError(
            f"ddrep_size minimized at theta={thetas[argmin]!r}, "
            "expected theta=pi/2", theta=float(thetas[argmin]))

    return SweepReport(n_theta=n_theta, max_residual=max_residual,
                       max_radius_error=max_radius_error,
                       argmin_theta=float(thetas[argmin]),
                       min_ddrep_size=float(sizes[argmin]))


def random_instance(rng, scale=1.0):
    """A random equal-amplitude, non-collinear instance."""
    while True:
        s = rng.standard_normal(3)
        t = rng.standard_normal(3)
        ns, nt = np.linalg.norm(s), np.linalg.norm(t)
        if ns < 1e-3 or nt < 1e-3:
            continue
        t = t * (ns / nt)
        inst = GeometryInstance(S=scale * s, T=scale * t)
        if not inst.is_degenerate:
            return inst


def random_rotation(rng):
    """A uniform random rotation matrix (QR of a Gaussian, sign-fixed)."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
