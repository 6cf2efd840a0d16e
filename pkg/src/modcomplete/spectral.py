"""Laplacian positional encodings for small token graphs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NONTRIVIAL_EPS = 1e-8
SIGN_TIE_TOL = 1e-9


class SpectralError(ValueError):
    pass


@dataclass(frozen=True)
class LaplacianPE:
    k: int
    vectors: np.ndarray
    eigenvalues: list[float]


def normalized_laplacian(adj: np.ndarray) -> np.ndarray:
    """``I - D^-1/2 A D^-1/2`` with all-zero rows for isolated nodes."""
    a = np.asarray(adj, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise SpectralError("adjacency must be square")
    if not np.array_equal(a, a.T):
        raise SpectralError("adjacency must be symmetric")
    deg = a.sum(axis=1)
    inv = np.zeros_like(deg)
    np.divide(1.0, np.sqrt(deg), out=inv, where=deg > 0)
    lap = -(inv[:, None] * a * inv[None, :])
    lap[np.diag_indices_from(lap)] += (deg > 0).astype(np.float64)
    return lap


def _round_robin(m: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Circle-method schedule: m-1 rounds of m/2 disjoint index pairs."""
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        top, bot = players[: m // 2], players[m // 2 :][::-1]
        p = np.minimum(top, bot)
        q = np.maximum(top, bot)
        rounds.append((p, q))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def eigen_decompose_symmetric(
    mat: np.ndarray, tol: float = 1e-12, max_sweeps: int = 60
) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigensolver.

    Each sweep visits every off-diagonal pair once in round-robin order;
    pairs inside a round are disjoint, so their rotations are applied
    together. Returns ascending eigenvalues and matching unit eigenvectors
    as columns.
    """
    a = np.array(mat, dtype=np.float64)
    n = a.shape[0]
    if a.ndim != 2 or a.shape[1] != n:
        raise SpectralError("matrix must be square")
    scale = max(1.0, float(np.abs(a).max(initial=0.0)))
    if not np.allclose(a, a.T, rtol=0.0, atol=tol * scale):
        raise SpectralError("matrix must be symmetric")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    if n > 1:
        m = n + (n % 2)
        rounds = []
        for p, q in _round_robin(m):
            keep = q < n
            rounds.append((p[keep], q[keep]))
        # round-off floor for off-diagonal entries grows with n
        thresh = 4.0 * np.finfo(np.float64).eps * n * scale
        prev = np.inf
        for _ in range(max_sweeps):
            off = np.abs(a - np.diag(np.diag(a))).max()
            if off <= thresh or (off >= prev and off < 1e-10 * scale):
                break
            prev = off
            for p, q in rounds:
                apq = a[p, q]
                live = np.abs(apq) > thresh
                if not live.any():
                    continue
                p, q, apq = p[live], q[live], apq[live]
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
                t[theta == 0.0] = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c[:, None] * ap - s[:, None] * aq
                a[q, :] = s[:, None] * ap + c[:, None] * aq
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = ap * c - aq * s
                a[:, q] = ap * s + aq * c
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = vp * c - vq * s
                v[:, q] = vp * s + vq * c
        else:
            w = np.diag(a)
            resid = np.abs(np.asarray(mat) @ v - v * w).max()
            raise SpectralError(
                f"Jacobi did not converge in {max_sweeps} sweeps (residual {resid:.3e})"
            )
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def canonical_sign(vec: np.ndarray) -> np.ndarray:
    """Flip so the largest-magnitude entry (lowest index on ties) is positive."""
    mag = np.abs(vec)
    # near-equal magnitudes count as ties so round-off cannot flip the choice
    j = int(np.flatnonzero(mag >= mag.max() - SIGN_TIE_TOL)[0])
    return -vec if vec[j] < 0 else vec


def laplacian_pe(adj: np.ndarray, k: int) -> LaplacianPE:
    """Bottom-``k`` nontrivial normalized-Laplacian eigenvectors, zero padded."""
    if k < 1:
        raise SpectralError("encoding dimension must be at least 1")
    lap = normalized_laplacian(adj)
    n = lap.shape[0]
    w, v = eigen_decompose_symmetric(lap)
    keep = np.flatnonzero(w > NONTRIVIAL_EPS)[:k]
    out = np.zeros((n, k))
    for col, j in enumerate(keep):
        out[:, col] = canonical_sign(v[:, j])
    return LaplacianPE(k, out, w[keep].tolist())
