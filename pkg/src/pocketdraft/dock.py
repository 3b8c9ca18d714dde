"""Deterministic docking stand-in: smooth interaction kernels over
ligand-residue distances, seeded pose embedding, and multi-start rigid
redocking with an in-repo dense BFGS.

The interaction score sums four C^1 kernels of the surface distance
d' = d - (r_i + r_j) (two Gaussians, a quadratic clash penalty, and a
hydrophobic smoothstep for carbon against hydrophobic residues), each
tapered smoothly to zero at a distance cutoff. Scores are reported in
arbitrary affinity units; lower is better.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import graphs
from . import rng as prng
from .affinity import PocketGraph
from .chem import MolecularGraph
from .errors import NonConvergenceError, NumericError

log = logging.getLogger(__name__)

__all__ = [
    "InteractionWeights",
    "DEFAULT_WEIGHTS",
    "DockConfig",
    "Pose",
    "RigidTransform",
    "ATOM_RADII",
    "RESIDUE_RADIUS",
    "HYDROPHOBIC_RESIDUES",
    "interaction_score",
    "interaction_gradient",
    "dock_objective",
    "generate_pose",
    "pose_rmsd",
    "redock",
    "surrogate_vina",
    "bfgs_minimize",
]

ATOM_RADII = {
    "C": 1.9,
    "N": 1.8,
    "O": 1.7,
    "S": 2.0,
    "P": 2.1,
    "F": 1.8,
    "Cl": 1.8,
    "Br": 1.8,
    "I": 1.8,
}
RESIDUE_RADIUS = 3.0
HYDROPHOBIC_RESIDUES = frozenset({"ALA", "VAL", "LEU", "ILE", "PHE", "MET"})

KERNEL_NAMES = ("gauss_narrow", "gauss_wide", "clash", "hydrophobic")
MIN_ATOM_SPACING = 0.5

BOND_LENGTH = 1.5
NONBONDED_FLOOR = 1.8


@dataclass(frozen=True)
class InteractionWeights:
    """Linear weights over the four kernels, in KERNEL_NAMES order."""

    values: tuple[float, float, float, float] = (-0.035, -0.005, 0.840, -0.035)

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if len(vals) != 4 or not all(np.isfinite(vals)):
            raise ValueError("need 4 finite kernel weights")
        object.__setattr__(self, "values", vals)

    def as_array(self) -> np.ndarray:
        return np.array(self.values)


DEFAULT_WEIGHTS = InteractionWeights()


@dataclass(frozen=True)
class DockConfig:
    rigid_only: bool = True
    multistart: int = 8
    max_iters: int = 200
    cutoff_angstrom: float = 8.0
    gtol: float = 1e-6
    # translation scatter for starts beyond the fixed orientation bank
    start_translation_scale: float = 6.0

    def __post_init__(self):
        if self.multistart < 1:
            raise ValueError("multistart must be >= 1")
        if self.cutoff_angstrom <= 1.0:
            raise ValueError("cutoff must exceed 1 A (taper spans the last 1 A)")

    @classmethod
    def from_dict(cls, obj: dict) -> "DockConfig":
        known = {
            "rigid_only", "multistart", "max_iters", "cutoff_angstrom",
            "gtol", "start_translation_scale",
        }
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown dock config keys: {sorted(unknown)}")
        return cls(**obj)


@dataclass(frozen=True)
class Pose:
    """Ligand atom coordinates, row-aligned with the molecule's atoms."""

    coords: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        coords = tuple(tuple(float(c) for c in p) for p in self.coords)
        object.__setattr__(self, "coords", coords)
        arr = self.as_array()
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise ValueError("pose must be an (n, 3) coordinate list")
        if not np.isfinite(arr).all():
            raise ValueError("pose coordinates must be finite")
        if len(coords) >= 2:
            d = np.linalg.norm(arr[:, None] - arr[None, :], axis=2)
            np.fill_diagonal(d, np.inf)
            if d.min() < MIN_ATOM_SPACING:
                raise ValueError(
                    f"atoms {np.unravel_index(d.argmin(), d.shape)} are "
                    f"{d.min():.3f} A apart (min {MIN_ATOM_SPACING})"
                )

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Pose":
        return cls(tuple(tuple(float(c) for c in row) for row in np.asarray(arr)))

    def as_array(self) -> np.ndarray:
        return np.array(self.coords, dtype=np.float64)

    @property
    def centroid(self) -> np.ndarray:
        return self.as_array().mean(axis=0)


@dataclass(frozen=True)
class RigidTransform:
    """Unit quaternion (w, x, y, z) plus translation."""

    quaternion: tuple[float, float, float, float]
    translation: tuple[float, float, float]

    def __post_init__(self):
        q = np.array(self.quaternion, dtype=np.float64)
        t = tuple(float(c) for c in self.translation)
        norm = np.linalg.norm(q)
        if not np.isfinite(norm) or norm == 0:
            raise ValueError("quaternion must be nonzero and finite")
        q = q / norm
        object.__setattr__(self, "quaternion", tuple(float(c) for c in q))
        object.__setattr__(self, "translation", t)

    def matrix(self) -> np.ndarray:
        return _quat_to_matrix(np.array(self.quaternion))

    def apply(self, coords: np.ndarray, pivot: np.ndarray) -> np.ndarray:
        return (coords - pivot) @ self.matrix().T + pivot + np.array(self.translation)


def _quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


class _PairContext:
    """Precomputed residue/atom pairing data for one pocket-molecule pair."""

    def __init__(self, pocket: PocketGraph, m: MolecularGraph, cutoff: float):
        self.pocket_coords = pocket.coords  # (P, 3)
        self.cutoff = float(cutoff)
        radii = np.array([ATOM_RADII[a] for a in m.atoms])
        self.radius_sum = RESIDUE_RADIUS + radii[None, :]  # (P, M)
        hydro_res = np.array([r.aa in HYDROPHOBIC_RESIDUES for r in pocket.residues])
        carbon = np.array([a == "C" for a in m.atoms])
        self.hydro_mask = hydro_res[:, None] & carbon[None, :]

    def score_and_gradient(self, w: np.ndarray, coords: np.ndarray):
        """Interaction score and its gradient w.r.t. ligand coordinates."""
        delta = coords[None, :, :] - self.pocket_coords[:, None, :]  # (P, M, 3)
        dist = np.sqrt((delta * delta).sum(axis=2))
        np.maximum(dist, 1e-9, out=dist)
        d = dist - self.radius_sum

        g1 = np.exp(-((d / 0.5) ** 2))
        dg1 = -8.0 * d * g1
        g2 = np.exp(-(((d - 3.0) / 2.0) ** 2))
        dg2 = -0.5 * (d - 3.0) * g2
        clash = np.where(d < 0.0, d * d, 0.0)
        dclash = np.where(d < 0.0, 2.0 * d, 0.0)
        # Smoothstep from 1 at d<=0.5 to 0 at d>=1.5, carbon/hydrophobic only.
        t = np.clip(d - 0.5, 0.0, 1.0)
        hyd = (1.0 - t * t * (3.0 - 2.0 * t)) * self.hydro_mask
        dhyd = np.where((d > 0.5) & (d < 1.5), -6.0 * t * (1.0 - t), 0.0) * self.hydro_mask

        s = np.clip(dist - (self.cutoff - 1.0), 0.0, 1.0)
        taper = 1.0 - s * s * (3.0 - 2.0 * s)
        dtaper = np.where((s > 0.0) & (s < 1.0), -6.0 * s * (1.0 - s), 0.0)

        kernels = w[0] * g1 + w[1] * g2 + w[2] * clash + w[3] * hyd
        dkernels = w[0] * dg1 + w[1] * dg2 + w[2] * dclash + w[3] * dhyd
        total = float((kernels * taper).sum())
        ddist = dkernels * taper + kernels * dtaper
        grad = (ddist[:, :, None] * delta / dist[:, :, None]).sum(axis=0)
        return total, grad


def interaction_score(
    w: InteractionWeights, pocket: PocketGraph, m: MolecularGraph, pose: Pose,
    cutoff: float = 8.0,
) -> float:
    value, _ = _PairContext(pocket, m, cutoff).score_and_gradient(w.as_array(), pose.as_array())
    if not np.isfinite(value):
        raise NumericError("interaction score is non-finite")
    return value


def interaction_gradient(
    w: InteractionWeights, pocket: PocketGraph, m: MolecularGraph, pose: Pose,
    cutoff: float = 8.0,
) -> np.ndarray:
    _, grad = _PairContext(pocket, m, cutoff).score_and_gradient(w.as_array(), pose.as_array())
    return grad


def _spring_energy_grad(x: np.ndarray, bi, bj, ni, nj):
    """Bond springs toward 1.5 A plus a soft floor at 1.8 A for nonbonded."""
    e = 0.0
    grad = np.zeros_like(x)
    if bi.size:
        dv = x[bi] - x[bj]
        d = np.maximum(np.linalg.norm(dv, axis=1), 1e-12)
        err = d - BOND_LENGTH
        e += float((err * err).sum())
        f = (2.0 * err / d)[:, None] * dv
        np.add.at(grad, bi, f)
        np.add.at(grad, bj, -f)
    if ni.size:
        dv = x[ni] - x[nj]
        d = np.maximum(np.linalg.norm(dv, axis=1), 1e-12)
        pen = np.maximum(NONBONDED_FLOOR - d, 0.0)
        e += float((pen * pen).sum())
        f = (-2.0 * pen / d)[:, None] * dv
        np.add.at(grad, ni, f)
        np.add.at(grad, nj, -f)
    return e, grad


def generate_pose(m: MolecularGraph, seed: int, gtol: float = 1e-3) -> Pose:
    """Seeded 3-d embedding of the molecular graph: breadth-first layered
    init with jitter, then gradient descent on the spring energy until the
    largest per-atom force drops below gtol (error after 5000 iterations)."""
    n = m.n_atoms
    if n == 1:
        return Pose(((0.0, 0.0, 0.0),))
    gen = prng.stream(seed, "pose-init")
    adj = graphs.adjacency(n, m.bonds)
    depth = graphs.bfs_distances(adj, 0)
    if any(d < 0 for d in depth):
        raise ValueError("cannot embed a disconnected molecule")
    x = np.array([[BOND_LENGTH * d, 0.0, 0.0] for d in depth])
    x += gen.normal(scale=0.7, size=(n, 3))

    bi = np.array([b[0] for b in m.bonds], dtype=np.int64)
    bj = np.array([b[1] for b in m.bonds], dtype=np.int64)
    bonded = {(b[0], b[1]) for b in m.bonds}
    nb = [(i, j) for i in range(n) for j in range(i + 1, n) if (i, j) not in bonded]
    ni = np.array([p[0] for p in nb], dtype=np.int64)
    nj = np.array([p[1] for p in nb], dtype=np.int64)

    lr = 0.05
    e, g = _spring_energy_grad(x, bi, bj, ni, nj)
    for _ in range(5000):
        fmax = float(np.linalg.norm(g, axis=1).max())
        if fmax < min(gtol, 1e-3):
            break
        trial = x - lr * g
        e_t, g_t = _spring_energy_grad(trial, bi, bj, ni, nj)
        if e_t <= e:
            x, e, g = trial, e_t, g_t
            lr = min(lr * 1.2, 0.25)
        else:
            lr *= 0.5
            if lr < 1e-12:
                raise NonConvergenceError("pose embedding stalled", fmax)
    else:
        raise NonConvergenceError("pose embedding did not converge in 5000 iterations", fmax)

    if gtol < 1e-3:
        # Polish with BFGS down to tight force tolerance.
        def fg(flat):
            e2, g2 = _spring_energy_grad(flat.reshape(n, 3), bi, bj, ni, nj)
            return e2, g2.reshape(-1)

        flat, _ = bfgs_minimize(fg, x.reshape(-1), max_iters=5000, gtol=gtol)
        x = flat.reshape(n, 3)
    return Pose.from_array(x)


def pose_rmsd(a: Pose, b: Pose) -> float:
    """Best-fit RMSD between equal-length poses after centering and an
    optimal rotation (Kabsch)."""
    pa = a.as_array()
    pb = b.as_array()
    if pa.shape != pb.shape:
        raise ValueError("poses must have the same number of atoms")
    pa = pa - pa.mean(axis=0)
    pb = pb - pb.mean(axis=0)
    u, _, vt = np.linalg.svd(pa.T @ pb)
    sign = np.sign(np.linalg.det(u @ vt))
    dmat = np.diag([1.0, 1.0, sign])
    rot = u @ dmat @ vt
    diff = pa @ rot - pb
    return float(np.sqrt((diff * diff).sum() / len(pa)))


def bfgs_minimize(
    fun_grad,
    x0: np.ndarray,
    max_iters: int = 200,
    gtol: float = 1e-6,
    max_step: float | None = None,
):
    """Dense BFGS with Armijo backtracking. Returns (x, f(x)). Raises
    NumericError on non-finite values. Only ever accepts decreases.
    max_step caps the first trial length of each line search, which keeps
    steep starts (atom clashes) from being flung past every nearby minimum."""
    x = np.asarray(x0, dtype=np.float64).copy()
    f, g = fun_grad(x)
    if not (np.isfinite(f) and np.isfinite(g).all()):
        raise NumericError("objective non-finite at the starting point")
    n = x.size
    h = np.eye(n)  # inverse Hessian approximation
    for _ in range(max_iters):
        gnorm = float(np.abs(g).max())
        if gnorm < gtol:
            break
        d = -h @ g
        slope = float(d @ g)
        if slope >= 0.0:  # reset on loss of descent direction
            h = np.eye(n)
            d = -g
            slope = float(d @ g)
            if slope >= 0.0:
                break
        alpha = 1.0
        if max_step is not None:
            dlen = float(np.linalg.norm(d))
            if dlen > max_step:
                alpha = max_step / dlen
        accepted = False
        while alpha >= 1e-12:
            x_new = x + alpha * d
            f_new, g_new = fun_grad(x_new)
            if not (np.isfinite(f_new) and np.isfinite(g_new).all()):
                raise NumericError("objective became non-finite during line search")
            if f_new <= f + 1e-4 * alpha * slope:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        s = x_new - x
        y = g_new - g
        x, f, g = x_new, f_new, g_new
        sy = float(s @ y)
        if sy > 1e-12:
            rho = 1.0 / sy
            hy = h @ y
            h = h - rho * (np.outer(s, hy) + np.outer(hy, s)) + rho * rho * (
                float(y @ hy) + sy
            ) * np.outer(s, s)
    return x, float(f)


def _rotated_with_jacobian(q: np.ndarray, p: np.ndarray):
    """Rotate rows of p by the normalized quaternion q; also return what is
    needed for the pullback of coordinate gradients to q."""
    norm = np.linalg.norm(q)
    qh = q / norm
    w, u = qh[0], qh[1:]
    cross_up = np.cross(u, p)  # (M, 3)
    y = p + 2.0 * w * cross_up + 2.0 * np.cross(u, cross_up)
    return y, qh, norm, w, u


def _pullback_quat(grad_y: np.ndarray, p: np.ndarray, qh: np.ndarray, norm: float, w: float, u: np.ndarray):
    """Chain coordinate gradients through the quaternion rotation."""
    dW = 2.0 * float((np.cross(u, p) * grad_y).sum())
    term1 = 2.0 * w * np.cross(p, grad_y).sum(axis=0)
    term2 = 2.0 * ((p @ u)[:, None] * grad_y).sum(axis=0)
    term3 = 2.0 * (p * (grad_y @ u)[:, None]).sum(axis=0)
    term4 = -4.0 * u * float((p * grad_y).sum())
    dU = term1 + term2 + term3 + term4
    d_qh = np.concatenate([[dW], dU])
    return (d_qh - qh * float(d_qh @ qh)) / norm


_SQH = float(np.sqrt(0.5))
# Fixed multistart orientations, identity first, then half turns, diagonal
# third turns, and quarter turns, ordered to spread over rotation space.
_START_ORIENTATIONS = np.array([
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
    [0.5, 0.5, 0.5, 0.5],
    [0.5, -0.5, -0.5, -0.5],
    [_SQH, _SQH, 0.0, 0.0],
    [_SQH, 0.0, _SQH, 0.0],
    [_SQH, 0.0, 0.0, _SQH],
    [0.0, _SQH, _SQH, 0.0],
    [0.0, _SQH, 0.0, _SQH],
    [0.0, 0.0, _SQH, _SQH],
])

_SQT = float(1.0 / np.sqrt(3.0))
# Approach directions paired with the orientations above: one start at the
# pocket centroid, the rest just outside the residue shell, so a start always
# exists in the attractive band instead of only at the clashed center.
_START_DIRECTIONS = np.array([
    [0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [-1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, 0.0, -1.0],
    [_SQT, _SQT, _SQT],
    [-_SQT, -_SQT, _SQT],
    [_SQT, -_SQT, -_SQT],
    [-_SQT, _SQT, -_SQT],
    [_SQT, _SQT, -_SQT],
])


def _quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def _quat_from_matrix(r: np.ndarray) -> np.ndarray:
    """Unit quaternion of a proper rotation matrix, largest-pivot branch."""
    t = float(np.trace(r))
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array([0.25 * s, (r[2, 1] - r[1, 2]) / s,
                      (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s])
    elif r[0, 0] >= r[1, 1] and r[0, 0] >= r[2, 2]:
        s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        q = np.array([(r[2, 1] - r[1, 2]) / s, 0.25 * s,
                      (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s])
    elif r[1, 1] >= r[2, 2]:
        s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        q = np.array([(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s,
                      0.25 * s, (r[1, 2] + r[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        q = np.array([(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s,
                      (r[1, 2] + r[2, 1]) / s, 0.25 * s])
    return q / np.linalg.norm(q)


def _principal_frame(arr: np.ndarray) -> np.ndarray:
    """Orthonormal frame of a conformer, equivariant under rigid motion.

    Columns are covariance eigenvectors (largest spread first) with signs
    fixed by an atom-order weighting, so every rigid copy of one conformer
    canonicalizes to the same coordinates and docking results cannot depend
    on how the input pose happened to be placed."""
    c = arr - arr.mean(axis=0)
    _, vecs = np.linalg.eigh(c.T @ c)
    vecs = vecs[:, ::-1].copy()
    weights = np.arange(1, len(arr) + 1, dtype=float)
    for j in range(2):
        s = float(weights @ (c @ vecs[:, j]))
        if s < 0:
            vecs[:, j] = -vecs[:, j]
    # right-handed by construction, no separate sign rule for the last axis
    vecs[:, 2] = np.cross(vecs[:, 0], vecs[:, 1])
    return vecs


def _rotatable_fragments(m: MolecularGraph):
    """For each rotatable bond, the atoms moved when rotating about it: the
    side away from atom 0. Rooting every fragment the same way keeps the
    family laminar, so fragments are rigid subtrees of a kinematic tree.
    Returned parents-first (larger fragments first)."""
    cut = graphs.bridges(m.n_atoms, m.bonds)
    adj = graphs.adjacency(m.n_atoms, m.bonds)
    incident = [len(a) for a in adj]
    frags = []
    for i, j, order in m.bonds:
        if order != 1 or (i, j) not in cut or incident[i] < 2 or incident[j] < 2:
            continue
        # Side of the cut that does not contain the root atom 0.
        side = {j}
        stack = [j]
        while stack:
            v = stack.pop()
            for uu in adj[v]:
                if (min(v, uu), max(v, uu)) == (i, j):
                    continue
                if uu not in side:
                    side.add(uu)
                    stack.append(uu)
        if 0 in side:
            side = set(range(m.n_atoms)) - side
            axis_from, axis_to = j, i
        else:
            axis_from, axis_to = i, j
        frags.append((axis_from, axis_to, np.array(sorted(side), dtype=np.int64)))
    frags.sort(key=lambda f: -len(f[2]))
    return frags


def _apply_torsions(p0: np.ndarray, frags, angles: np.ndarray) -> np.ndarray:
    """Rotate each fragment about its bond axis, parents first."""
    x = p0.copy()
    for (a_from, a_to, moved), angle in zip(frags, angles):
        pivot = x[a_from]
        axis = x[a_to] - pivot
        axis_norm = np.linalg.norm(axis)
        if axis_norm < 1e-9:
            raise NumericError("degenerate torsion axis")
        axis = axis / axis_norm
        c, s = np.cos(angle), np.sin(angle)
        rel = x[moved] - pivot
        x[moved] = (
            pivot
            + c * rel
            + s * np.cross(axis, rel)
            + (1 - c) * (rel @ axis)[:, None] * axis
        )
    return x


def dock_objective(
    w: InteractionWeights,
    pocket: PocketGraph,
    m: MolecularGraph,
    pose0: Pose,
    config: DockConfig | None = None,
):
    """Objective over theta = [quaternion(4), translation(3), torsions(k)]
    applied to pose0 about its centroid. Returns (fun_grad, coords_of,
    n_torsions); fun_grad(theta) -> (score, analytic gradient)."""
    config = config or DockConfig()
    ctx = _PairContext(pocket, m, config.cutoff_angstrom)
    warr = w.as_array()
    p_init = pose0.as_array()
    pivot = p_init.mean(axis=0)
    p0 = p_init - pivot
    frags = [] if config.rigid_only else _rotatable_fragments(m)
    n_tors = len(frags)

    def parts_of(theta):
        q, t, angles = theta[:4], theta[4:7], theta[7:]
        base = _apply_torsions(p0, frags, angles) if n_tors else p0
        y, qh, norm, wq, u = _rotated_with_jacobian(q, base)
        return y + pivot + t, base, qh, norm, wq, u

    def coords_of(theta):
        return parts_of(theta)[0]

    def fun_grad(theta):
        coords, base, qh, norm, wq, u = parts_of(theta)
        f, g_coords = ctx.score_and_gradient(warr, coords)
        g_t = g_coords.sum(axis=0)
        g_q = _pullback_quat(g_coords, base, qh, norm, wq, u)
        if not n_tors:
            return f, np.concatenate([g_q, g_t])
        rot = _quat_to_matrix(qh)
        g_angles = np.zeros(n_tors)
        # In the final torsioned frame each fragment is a rigid subtree:
        # d coords / d angle = R (axis x (base - pivot)) over moved atoms.
        for k, (a_from, a_to, moved) in enumerate(frags):
            piv = base[a_from]
            axis = base[a_to] - piv
            axis = axis / np.linalg.norm(axis)
            dbase = np.cross(axis, base[moved] - piv)
            g_angles[k] = float((g_coords[moved] * (dbase @ rot.T)).sum())
        return f, np.concatenate([g_q, g_t, g_angles])

    return fun_grad, coords_of, n_tors


def redock(
    w: InteractionWeights,
    pocket: PocketGraph,
    m: MolecularGraph,
    pose0: Pose,
    config: DockConfig | None = None,
    seed: int = 0,
) -> tuple[Pose, float]:
    """Minimize the interaction score over rigid motions of pose0 (plus
    torsion angles when config.rigid_only is false). Starts are built in the
    conformer's principal-axis frame at the pocket centroid and swept through
    a fixed orientation bank, so the outcome does not depend on where the
    input pose happened to sit. The result never scores worse than pose0."""
    config = config or DockConfig()
    fun_grad, coords_of, n_tors = dock_objective(w, pocket, m, pose0, config)

    identity = np.concatenate([[1.0, 0, 0, 0], np.zeros(3), np.zeros(n_tors)])
    # unoptimized input pose is the floor the result may never fall behind
    best_theta, best_f = identity, fun_grad(identity)[0]

    arr0 = pose0.as_array()
    frame_q = _quat_from_matrix(_principal_frame(arr0).T)
    site_shift = pocket.centroid - arr0.mean(axis=0)

    # Rank a fixed placement grid by score with the canonically oriented
    # conformer, then polish the best placements. Grid points and ranking
    # depend only on the pocket and the conformer shape, never on where
    # pose0 sits, so redocking is insensitive to the initial placement.
    r_mean = float(np.linalg.norm(pocket.coords - pocket.centroid, axis=1).mean())
    offsets = [np.zeros(3)]
    for frac in (0.4, 0.8, 1.2):
        offsets.extend(frac * r_mean * d for d in _START_DIRECTIONS[1:])
    zeros_t = np.zeros(n_tors)
    ranked = sorted(
        (fun_grad(np.concatenate([frame_q, site_shift + off, zeros_t]))[0], i)
        for i, off in enumerate(offsets)
    )

    for k in range(config.multistart):
        angles = np.zeros(n_tors)
        if k < len(ranked):
            q = _quat_mul(_START_ORIENTATIONS[k % len(_START_ORIENTATIONS)], frame_q)
            t = site_shift + offsets[ranked[k][1]]
            if n_tors and k > 0:
                gen = prng.stream(seed, "redock-torsion", k)
                angles = gen.uniform(-np.pi, np.pi, size=n_tors)
        else:
            # more starts than grid points: seeded scatter
            gen = prng.stream(seed, "redock-start", k)
            q = gen.normal(size=4)
            q /= np.linalg.norm(q)
            t = site_shift + gen.normal(size=3) * (
                config.start_translation_scale * 0.25
            )
            if n_tors:
                angles = gen.uniform(-np.pi, np.pi, size=n_tors)
        theta0 = np.concatenate([q, t, angles])
        theta, f = bfgs_minimize(
            fun_grad, theta0, config.max_iters, config.gtol, max_step=1.0
        )
        if f < best_f:
            best_theta, best_f = theta, f

    return Pose.from_array(coords_of(best_theta)), float(best_f)


def surrogate_vina(
    w: InteractionWeights,
    pocket: PocketGraph,
    m: MolecularGraph,
    seed: int,
    config: DockConfig | None = None,
    center: np.ndarray | None = None,
    with_pose: bool = False,
):
    """End-to-end oracle: embed a pose, place its centroid at `center`
    (pocket centroid by default), redock, return the best score.

    With `with_pose` the redocked pose is returned alongside the score."""
    config = config or DockConfig()
    pose = generate_pose(m, prng.derive_seed(seed, "pose"))
    target = pocket.centroid if center is None else np.asarray(center, dtype=np.float64)
    placed = Pose.from_array(pose.as_array() - pose.centroid + target)
    best, value = redock(w, pocket, m, placed, config, seed=prng.derive_seed(seed, "dock"))
    if with_pose:
        return value, best
    return value
