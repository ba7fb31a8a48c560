"""Sliced inverse regression, sliced average variance estimation and the
BIC-type choice of the reduced dimension."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .data import Standardizer, as_finite_matrix, fit_standardizer, standardize
from .errors import (
    DimensionMismatch,
    InvalidEigenvalue,
    RankDeficient,
    SliceTooSmall,
    TooFewDistinct,
    TooFewPoints,
)

logger = logging.getLogger(__name__)

DEFAULT_SLICES = 10
MIN_PER_SLICE = 5


@dataclass(frozen=True)
class SliceSpec:
    H: int
    labels: np.ndarray  # 1..H per point
    boundaries: np.ndarray  # H + 1 response values, lowest to highest

    def members(self, h: int) -> np.ndarray:
        return np.flatnonzero(self.labels == h)


@dataclass(frozen=True)
class SdrResult:
    M: np.ndarray
    eigenvalues: np.ndarray
    directions: np.ndarray
    rotation: np.ndarray
    standardizer: Standardizer
    method: str = "save"
    degenerate: bool = False

    @property
    def p(self) -> int:
        return self.M.shape[0]

    def basis(self, d: int) -> np.ndarray:
        """Orthonormal basis of the leading ``d`` directions."""
        return self.rotation[:, :d]

    def to_manifest(self) -> dict:
        return {
            "method": self.method,
            "degenerate": self.degenerate,
            "eigenvalues": self.eigenvalues.tolist(),
            "directions": self.directions.tolist(),
            "rotation": self.rotation.tolist(),
        }


def default_slice_count(n: int, H: int = DEFAULT_SLICES) -> int:
    """Cap H so each slice holds about MIN_PER_SLICE points, never below 2."""
    return max(2, min(H, n // MIN_PER_SLICE))


def slice_response(y, H: int) -> SliceSpec:
    """Equal-frequency slices of the sorted response; tied values that straddle
    a slice boundary all go to the lower slice."""
    y = np.asarray(y, dtype=float).ravel()
    n = y.shape[0]
    if H < 1:
        raise ValueError("H must be >= 1")
    if n < H:
        raise TooFewPoints(f"cannot form {H} slices from {n} points")
    order = np.argsort(y, kind="stable")
    ys = y[order]
    sizes = np.full(H, n // H)
    sizes[: n % H] += 1
    cuts = np.concatenate([[0], np.cumsum(sizes)])
    for h in range(1, H):
        c = max(cuts[h], cuts[h - 1])
        while 0 < c < n and ys[c] == ys[c - 1]:
            c += 1
        cuts[h] = c
    if np.any(np.diff(cuts) == 0):
        raise TooFewDistinct(
            f"response has {np.unique(y).size} distinct values; cannot form {H} nonempty slices"
        )
    labels = np.empty(n, dtype=np.int64)
    for h in range(H):
        labels[order[cuts[h]:cuts[h + 1]]] = h + 1
    bounds = np.concatenate([[ys[0]], ys[cuts[1:] - 1]])
    return SliceSpec(H, labels, bounds)


def _sign_fix(V: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude entry of each column positive."""
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def orthonormalize(A: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """QR basis of the column span, column order preserved, diag(R) > 0."""
    A = as_finite_matrix(A, "A")
    Q, R = np.linalg.qr(A)
    diag = np.diag(R)
    scale = max(1.0, float(np.max(np.abs(diag)))) if diag.size else 1.0
    if np.any(np.abs(diag) <= tol * scale):
        raise RankDeficient("columns are linearly dependent")
    return Q * np.sign(diag)


def _finish(M, std, method, degenerate=False) -> SdrResult:
    M = 0.5 * (M + M.T)
    w, V = np.linalg.eigh(M)
    order = np.argsort(w, kind="stable")[::-1]
    w = w[order]
    V = _sign_fix(V[:, order])
    directions = std.sigma_inv_sqrt @ V
    return SdrResult(M, w, directions, orthonormalize(directions), std, method, degenerate)


def _degenerate(X, std, method) -> SdrResult:
    logger.warning("response is constant; %s returns the identity rotation", method.upper())
    p = X.shape[1]
    return SdrResult(np.zeros((p, p)), np.zeros(p), np.eye(p), np.eye(p), std, method, True)


def _prepare(X, y, H, strict):
    X = as_finite_matrix(X)
    y = np.asarray(y, dtype=float).ravel()
    n, p = X.shape
    if y.shape[0] != n:
        raise DimensionMismatch("X and y disagree in length")
    if H < 2:
        raise ValueError("need H >= 2 slices")
    if strict and n <= p:
        raise TooFewPoints(f"need n > p for a sample covariance (n={n}, p={p})")
    std = fit_standardizer(X, escalate=True)
    return X, y, std


def sir(X, y, H: int = DEFAULT_SLICES, strict: bool = True) -> SdrResult:
    """Between-slice covariance of the standardized inputs' slice means."""
    X, y, std = _prepare(X, y, H, strict)
    try:
        spec = slice_response(y, H)
    except TooFewDistinct:
        if np.ptp(y) == 0:
            return _degenerate(X, std, "sir")
        raise
    Z = standardize(std, X)
    n, p = Z.shape
    M = np.zeros((p, p))
    for h in range(1, spec.H + 1):
        Zh = Z[spec.labels == h]
        m = Zh.mean(axis=0)
        M += (Zh.shape[0] / n) * np.outer(m, m)
    return _finish(M, std, "sir")


def save(X, y, H: int = DEFAULT_SLICES, strict: bool = True) -> SdrResult:
    """Slice-frequency weighted average of (I - Cov(Z | slice))^2."""
    X, y, std = _prepare(X, y, H, strict)
    try:
        spec = slice_response(y, H)
    except TooFewDistinct:
        if np.ptp(y) == 0:
            return _degenerate(X, std, "save")
        raise
    Z = standardize(std, X)
    n, p = Z.shape
    eye = np.eye(p)
    M = np.zeros((p, p))
    for h in range(1, spec.H + 1):
        Zh = Z[spec.labels == h]
        if Zh.shape[0] < 2:
            raise SliceTooSmall(f"slice {h} has {Zh.shape[0]} point(s); need >= 2")
        C = Zh - Zh.mean(axis=0)
        D = eye - C.T @ C / Zh.shape[0]
        M += (Zh.shape[0] / n) * D @ D
    return _finish(M, std, "save")


def bic_penalty(n: int) -> float:
    """Penalty sequence c_n = (0.5 log n + 0.1 n^(1/3)) / 2."""
    return (0.5 * math.log(n) + 0.1 * n ** (1.0 / 3.0)) / 2.0


def bic_criterion(eigenvalues, n: int, p: int, c_n: float | None = None) -> np.ndarray:
    """G(k) for k = 1..p-1 from the descending eigenvalues of V + I."""
    lam = np.asarray(eigenvalues, dtype=float).ravel()
    if lam.shape[0] != p or p < 2:
        raise DimensionMismatch(f"need p >= 2 eigenvalues, got {lam.shape[0]} for p={p}")
    if np.any(lam < 1.0 - 1e-10):
        raise InvalidEigenvalue(f"eigenvalue {lam.min():.6g} < 1; V must be positive semi-definite")
    lam = np.maximum(lam, 1.0)
    c_n = bic_penalty(n) if c_n is None else c_n
    terms = np.log(lam) + 1.0 - lam
    ks = np.arange(1, p)
    tails = np.array([terms[k:].sum() for k in ks])
    return 0.5 * n * tails - c_n * ks * (2 * p - ks + 1) / 2.0


def bic_dimension(eigenvalues, n: int, p: int, c_n: float | None = None):
    """(d_hat, G) with d_hat the first maximizer of G over k = 1..p-1."""
    G = bic_criterion(eigenvalues, n, p, c_n)
    return int(np.argmax(G)) + 1, G


def bic_from_sdr(result: SdrResult, n: int, c_n: float | None = None):
    return bic_dimension(result.eigenvalues + 1.0, n, result.p, c_n)


def normalize_bic_display(G: np.ndarray) -> np.ndarray:
    """Map G(k) into (0, 1] monotonically for table display (argmax preserved)."""
    G = np.asarray(G, dtype=float)
    return np.exp((G - G.max()) / max(1.0, float(np.abs(G).max())))


def projector(A) -> np.ndarray:
    Q = orthonormalize(A)
    return Q @ Q.T


def subspace_distance(A, A_hat) -> float:
    """Frobenius distance between the orthogonal projectors onto two column spans."""
    A = as_finite_matrix(A, "A")
    A_hat = as_finite_matrix(A_hat, "A_hat")
    if A.shape[0] != A_hat.shape[0]:
        raise DimensionMismatch("subspaces live in different ambient dimensions")
    return float(np.linalg.norm(projector(A) - projector(A_hat)))
