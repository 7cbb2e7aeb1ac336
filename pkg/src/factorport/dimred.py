"""Latent-factor weight extraction: PCA, SIMPLS, sparse PCA and sparse PLS.

Every fit centers columns with training-period means and stores them in the
returned basis, so projection of fresh data uses the means seen at fit time.
Weight columns are unit-norm with the largest-magnitude entry positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, RankError, ShapeError

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def deco(func):
            return func

        return deco


@dataclass
class SparsityParams:
    """Penalty strengths for the sparse extractors.

    lambda1/lambda2 drive the sparse-PCA elastic net; eta in [0, 1) is the
    soft-threshold fraction for sparse PLS.
    """

    lambda1: float = 0.0
    lambda2: float = 1e-4
    eta: float = 0.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be nonnegative")
        if not 0.0 <= self.eta < 1.0:
            raise ValueError("eta must lie in [0, 1)")


@dataclass
class FactorBasis:
    """p x K weight matrix plus the centering means used at fit time."""

    weights: np.ndarray
    method: str
    means: np.ndarray
    hyperparams: dict = field(default_factory=dict)
    degenerate: np.ndarray | None = None

    @property
    def n_components(self) -> int:
        return self.weights.shape[1]


def _center(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    means = x.mean(axis=0)
    return x - means, means


def _fix_signs(w: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive."""
    w = w.copy()
    for k in range(w.shape[1]):
        j = np.argmax(np.abs(w[:, k]))
        if w[j, k] < 0:
            w[:, k] = -w[:, k]
    return w


def project(x: np.ndarray, basis: FactorBasis) -> np.ndarray:
    """Factor series F = (X - fit-time means) @ W."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != basis.weights.shape[0]:
        raise ShapeError(
            f"X has {x.shape[1] if x.ndim == 2 else '?'} columns, basis expects {basis.weights.shape[0]}"
        )
    return (x - basis.means) @ basis.weights


def pca_fit(x: np.ndarray, k: int) -> FactorBasis:
    """First k principal-component weight vectors of column-centered X.

    Columns of W are the right singular vectors ordered by decreasing
    singular value; W'W = I. Raises RankError when k exceeds the numerical
    rank, reporting the attainable count.
    """
    xc, means = _center(x)
    t, p = xc.shape
    if k < 1 or k > min(t, p):
        raise RankError(f"k must lie in [1, {min(t, p)}], got {k}")
    u, s, vt = np.linalg.svd(xc, full_matrices=False)
    tol = max(t, p) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int((s > tol).sum())
    if k > rank:
        raise RankError(f"requested {k} components but numerical rank is {rank}")
    w = _fix_signs(vt[:k].T)
    return FactorBasis(weights=w, method="pca", means=means, hyperparams={"k": k, "singular_values": s[:k]})


def simpls_fit(x: np.ndarray, r: np.ndarray, k: int) -> FactorBasis:
    """SIMPLS weight vectors maximizing covariance with the response block.

    The cross-product matrix S = X'R is deflated against an orthonormal
    basis of the x-loadings after each component, which keeps the score
    vectors mutually orthogonal. Weights are re-normalized to unit length.
    """
    xc, means = _center(x)
    rc, _ = _center(r)
    t, p = xc.shape
    if rc.shape[0] != t:
        raise ShapeError("X and R must have the same number of rows")
    if k < 1 or k > p:
        raise RankError(f"k must lie in [1, {p}], got {k}")

    s = xc.T @ rc
    if np.linalg.norm(s) <= 1e-14 * max(1.0, np.linalg.norm(xc) * np.linalg.norm(rc)):
        raise DegenerateInputError("cross-covariance between X and R is numerically zero")

    weights = np.zeros((p, k))
    v_basis = np.zeros((p, k))
    for j in range(k):
        u, _, _ = np.linalg.svd(s, full_matrices=False)
        w = u[:, 0]
        scores = xc @ w
        denom = scores @ scores
        if denom <= 1e-30:
            raise DegenerateInputError(f"component {j + 1} has zero score variance")
        load = xc.T @ scores / denom
        # orthonormalize the loading against earlier ones, then deflate S
        for i in range(j):
            load = load - v_basis[:, i] * (v_basis[:, i] @ load)
        norm = np.linalg.norm(load)
        if norm <= 1e-14:
            raise DegenerateInputError(f"loading of component {j + 1} lies in the span of earlier loadings")
        v = load / norm
        v_basis[:, j] = v
        s = s - np.outer(v, v @ s)
        weights[:, j] = w / np.linalg.norm(w)

    w = _fix_signs(weights)
    return FactorBasis(weights=w, method="pls", means=means, hyperparams={"k": k})


@njit(cache=True)
def _enet_cd_gram(gram, xty, lambda1, lambda2, start, tol, max_passes):
    """Coordinate descent for min ||y - Xc||^2 + lambda2 ||c||^2 + lambda1 ||c||_1.

    Works entirely on gram = X'X and xty = X'y (covariance updates), so a
    pass costs O(p^2) regardless of the sample size.
    """
    p = xty.shape[0]
    c = start.copy()
    gc = gram @ c
    for _ in range(max_passes):
        max_delta = 0.0
        max_c = 1.0
        for j in range(p):
            cj = c[j]
            rho = xty[j] - gc[j] + gram[j, j] * cj
            denom = gram[j, j] + lambda2
            new = 0.0
            if denom > 0.0:
                shrunk = abs(rho) - lambda1 / 2.0
                if shrunk > 0.0:
                    new = np.sign(rho) * shrunk / denom
            if new != cj:
                delta = new - cj
                for m in range(p):
                    gc[m] += gram[m, j] * delta
                c[j] = new
                if abs(delta) > max_delta:
                    max_delta = abs(delta)
            if abs(c[j]) > max_c:
                max_c = abs(c[j])
        if max_delta <= tol * max_c:
            break
    return c


def spca_fit(x: np.ndarray, k: int, params: SparsityParams) -> FactorBasis:
    """Sparse principal components via alternating elastic net / Procrustes.

    Given orthonormal W, each surrogate c_k solves an elastic-net regression
    of the current component scores on X; given C, W is the orthonormal
    Procrustes factor of X'XC. Iterates until the relative objective change
    falls below 1e-6 (200 iterations cap). Weights are the normalized c_k;
    an all-zero surrogate at convergence is flagged degenerate rather than
    raised.
    """
    xc, means = _center(x)
    t, p = xc.shape
    if k < 1 or k > p:
        raise RankError(f"k must lie in [1, {p}], got {k}")
    if p > t and params.lambda2 <= 0:
        raise ValueError("lambda2 must be positive when p > T")

    u, s, vt = np.linalg.svd(xc, full_matrices=False)
    n_lead = min(k, vt.shape[0])
    a = np.zeros((p, k))
    a[:, :n_lead] = vt[:n_lead].T
    for j in range(n_lead, k):
        a[j % p, j] = 1.0
    c = a.copy()
    gram = xc.T @ xc
    total_var = float(np.trace(gram))

    def objective(a_mat, c_mat):
        # ||X - X C A'||^2 for orthonormal A, written in terms of the Gram matrix
        recon = total_var - 2.0 * np.trace(a_mat.T @ gram @ c_mat) + np.trace(c_mat.T @ gram @ c_mat)
        return (
            recon
            + params.lambda2 * np.linalg.norm(c_mat) ** 2
            + params.lambda1 * np.abs(c_mat).sum()
        )

    prev = objective(a, c)
    obj_path = [prev]
    for _ in range(200):
        for j in range(k):
            c[:, j] = _enet_cd_gram(
                gram, gram @ a[:, j], params.lambda1, params.lambda2, c[:, j].copy(), 1e-7, 10_000
            )
        m = gram @ c
        um, _, vtm = np.linalg.svd(m, full_matrices=False)
        a = um @ vtm
        cur = objective(a, c)
        obj_path.append(cur)
        if abs(prev - cur) <= 1e-6 * max(1.0, abs(prev)):
            prev = cur
            break
        prev = cur

    norms = np.linalg.norm(c, axis=0)
    degenerate = norms <= 1e-12
    w = c.copy()
    w[:, ~degenerate] /= norms[~degenerate]
    w = _fix_signs(w)
    return FactorBasis(
        weights=w,
        method="spca",
        means=means,
        hyperparams={
            "k": k,
            "lambda1": params.lambda1,
            "lambda2": params.lambda2,
            "objective_path": obj_path,
        },
        degenerate=degenerate,
    )


def spls_fit(x: np.ndarray, r: np.ndarray, k: int, eta: float) -> FactorBasis:
    """Sparse PLS: soft-threshold the dominant direction of X'RR'X.

    Per component, the surrogate is c_j = sign(z_j) (|z_j| - eta max|z|)+
    where z is the leading singular direction of the current cross-product
    matrix; the support always contains the argmax, so eta < 1 never empties
    it. Deflation matches simpls_fit with scores from the sparse direction.
    """
    if not 0.0 <= eta < 1.0:
        raise ValueError("eta must lie in [0, 1)")
    xc, means = _center(x)
    rc, _ = _center(r)
    t, p = xc.shape
    if rc.shape[0] != t:
        raise ShapeError("X and R must have the same number of rows")
    if k < 1 or k > p:
        raise RankError(f"k must lie in [1, {p}], got {k}")

    s = xc.T @ rc
    if np.linalg.norm(s) <= 1e-14 * max(1.0, np.linalg.norm(xc) * np.linalg.norm(rc)):
        raise DegenerateInputError("cross-covariance between X and R is numerically zero")

    weights = np.zeros((p, k))
    v_basis = np.zeros((p, k))
    for j in range(k):
        u, _, _ = np.linalg.svd(s, full_matrices=False)
        z = u[:, 0]
        thresh = eta * np.max(np.abs(z))
        c = np.sign(z) * np.maximum(np.abs(z) - thresh, 0.0)
        norm = np.linalg.norm(c)
        if norm <= 1e-30:
            raise DegenerateInputError("soft threshold emptied the support")
        w = c / norm
        scores = xc @ w
        denom = scores @ scores
        if denom <= 1e-30:
            raise DegenerateInputError(f"component {j + 1} has zero score variance")
        load = xc.T @ scores / denom
        for i in range(j):
            load = load - v_basis[:, i] * (v_basis[:, i] @ load)
        lnorm = np.linalg.norm(load)
        if lnorm <= 1e-14:
            raise DegenerateInputError(f"loading of component {j + 1} lies in the span of earlier loadings")
        v = load / lnorm
        v_basis[:, j] = v
        s = s - np.outer(v, v @ s)
        weights[:, j] = w

    w = _fix_signs(weights)
    return FactorBasis(weights=w, method="spls", means=means, hyperparams={"k": k, "eta": eta})


def basis_to_csv(basis: FactorBasis, path) -> None:
    """Serialize weights to CSV: p rows, one column per component."""
    header = ",".join(str(j + 1) for j in range(basis.n_components))
    np.savetxt(path, basis.weights, delimiter=",", header=header, comments="")
