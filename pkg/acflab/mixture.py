"""
Finite Gaussian mixtures: Ward-linkage initialization, EM with equal (E) or
per-component (V) axis-aligned variances, and BIC model selection.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.cluster.hierarchy import cut_tree, linkage
from scipy.special import logsumexp

from acflab.errors import InvalidInputError, InvalidParameterError

logger = logging.getLogger(__name__)

MAX_INIT_POINTS = 1024
VARIANCE_FLOOR_FACTOR = 1e-6
# Over-fitted candidates (G above the true count) usually stop at DEFAULT_MAX_ITER.
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 200


class VarianceModel(str, Enum):
    E = "E"  # one variance vector shared by all components
    V = "V"  # a variance vector per component


def n_params(G: int, model: VarianceModel, dim: int = 1) -> int:
    """Free parameters: means, G-1 weights, and the variance terms."""
    variances = dim if VarianceModel(model) is VarianceModel.E else G * dim
    return G * dim + (G - 1) + variances


class MixtureFit(BaseModel):
    G: int
    model: VarianceModel
    dim: int
    n: int
    weights: List[float]
    means: List[List[float]]
    variances: List[List[float]]
    loglik: float
    bic: float
    n_iter: int
    converged: bool
    loglik_trace: List[float] = Field(default_factory=list)

    def arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.array(self.weights), np.array(self.means), np.array(self.variances)


class BicEntry(BaseModel):
    G: int
    model: VarianceModel
    bic: float
    loglik: float
    converged: bool


class BicSurface(BaseModel):
    entries: List[BicEntry]
    best_G: int
    best_model: VarianceModel
    seed: Optional[int] = None

    def value(self, G: int, model: VarianceModel) -> float:
        for e in self.entries:
            if e.G == G and e.model == model:
                return e.bic
        raise KeyError((G, model))


def _as_matrix(data) -> np.ndarray:
    X = np.asarray(data, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidInputError("data must be a non-empty n x dim array")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("data contains non-finite values")
    return X


# ============================================================================
# Agglomerative initialization
# ============================================================================

class _WardTree:
    """Ward dendrogram over a canonical subsample of standardized data."""

    def __init__(self, X: np.ndarray):
        self.n = X.shape[0]
        sd = X.std(axis=0)
        sd[sd == 0] = 1.0
        self.Z = (X - X.mean(axis=0)) / sd

        # lexicographic row order makes the subsample independent of input order
        order = np.lexsort(self.Z.T[::-1])
        m = min(self.n, MAX_INIT_POINTS)
        positions = np.unique(np.round(np.linspace(0, self.n - 1, m)).astype(int))
        self.sub_idx = order[positions]
        self.linkage = linkage(self.Z[self.sub_idx], method="ward") if self.sub_idx.size > 1 else None

    def cut(self, G: int) -> np.ndarray:
        return self.cuts([G])[G]

    def cuts(self, Gs: Sequence[int]) -> Dict[int, np.ndarray]:
        """Partitions for several G from a single pass over the dendrogram."""
        out = {G: np.ones(self.n, dtype=int) for G in Gs if G == 1 or self.linkage is None}
        wanted = sorted(G for G in set(Gs) if G not in out)
        if wanted:
            raw = cut_tree(self.linkage, n_clusters=wanted)
            for j, G in enumerate(wanted):
                out[G] = self._assign(raw[:, j], G)
        return out

    def _assign(self, raw: np.ndarray, G: int) -> np.ndarray:
        # relabel by first appearance in subsample order
        relabel: Dict[int, int] = {}
        for lab in raw:
            relabel.setdefault(int(lab), len(relabel))
        sub_labels = np.array([relabel[int(lab)] for lab in raw])

        sub = self.Z[self.sub_idx]
        centers = np.array([sub[sub_labels == k].mean(axis=0) for k in range(G)])
        d2 = ((self.Z[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        labels[self.sub_idx] = sub_labels
        return labels + 1


def hier_init(data, G: int) -> np.ndarray:
    """Partition into G clusters (labels 1..G) by Ward merging on standardized data."""
    X = _as_matrix(data)
    if G < 1 or X.shape[0] < G:
        raise InvalidInputError(f"cannot form {G} clusters from {X.shape[0]} points")
    if G > MAX_INIT_POINTS:
        raise InvalidInputError(f"G={G} exceeds the initialization subsample size {MAX_INIT_POINTS}")
    return _WardTree(X).cut(G)


# ============================================================================
# EM
# ============================================================================

def _log_density(X, X2, weights, means, variances) -> np.ndarray:
    """log(w_g) + log N(x | mean_g, diag var_g), squares expanded into matrix products."""
    prec = 1.0 / variances
    quad = X2 @ prec.T - 2.0 * (X @ (means * prec).T) + (means * means * prec).sum(axis=1)[None, :]
    log_norm = -0.5 * (np.log(2.0 * np.pi * variances).sum(axis=1)[None, :] + quad)
    with np.errstate(divide="ignore"):
        return log_norm + np.log(weights)[None, :]


def _e_step(X, X2, weights, means, variances) -> Tuple[np.ndarray, float]:
    log_d = _log_density(X, X2, weights, means, variances)
    row = logsumexp(log_d, axis=1)
    resp = np.exp(log_d - row[:, None])
    return resp, float(row.sum())


def _m_step(X, X2, resp, model, floor, prev=None):
    n = X.shape[0]
    nk = resp.sum(axis=0)
    alive = nk > 0
    safe = np.where(alive, nk, 1.0)
    means = (resp.T @ X) / safe[:, None]
    scatter = np.maximum(resp.T @ X2 - nk[:, None] * means * means, 0.0)
    if VarianceModel(model) is VarianceModel.E:
        variances = np.repeat(scatter.sum(axis=0, keepdims=True) / n, len(nk), axis=0)
    else:
        variances = scatter / safe[:, None]
    variances = np.maximum(variances, floor[None, :])
    if prev is not None and not alive.all():
        # a component with no mass keeps its last location
        means[~alive] = prev[1][~alive]
        variances[~alive] = prev[2][~alive]
    return nk / n, means, variances


def em_fit(
    data,
    G: int,
    model: VarianceModel,
    init: Sequence[int],
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> MixtureFit:
    """
    EM from a hard initial partition. Stops when the relative log-likelihood
    change drops below ``tol`` or after ``max_iter`` iterations (returned with
    converged=False).
    """
    X = _as_matrix(data)
    n, dim = X.shape
    if n <= G:
        raise InvalidInputError(f"need more points than components (n={n}, G={G})")
    if not tol > 0:
        raise InvalidParameterError(f"tol must be positive, got {tol}")
    labels = np.asarray(init, dtype=int)
    if labels.shape != (n,) or labels.min() < 1 or labels.max() > G:
        raise InvalidInputError("init must hold one label in 1..G per point")

    total_var = X.var(axis=0)
    floor = np.where(total_var > 0, VARIANCE_FLOOR_FACTOR * total_var, VARIANCE_FLOOR_FACTOR)

    # centered coordinates keep the expanded squares free of cancellation
    center = X.mean(axis=0)
    Xc = X - center
    X2 = Xc * Xc

    resp = np.zeros((n, G))
    resp[np.arange(n), labels - 1] = 1.0
    params = _m_step(Xc, X2, resp, model, floor)
    resp, ll = _e_step(Xc, X2, *params)
    trace = [ll]

    n_iter = 0
    converged = False
    while n_iter < max_iter:
        params = _m_step(Xc, X2, resp, model, floor, prev=params)
        resp, ll_new = _e_step(Xc, X2, *params)
        n_iter += 1
        trace.append(ll_new)
        done = abs(ll_new - ll) < tol * (1.0 + abs(ll_new))
        ll = ll_new
        if done:
            converged = True
            break

    if not converged:
        logger.debug("EM G=%d model=%s stopped at max_iter=%d", G, VarianceModel(model).value, max_iter)

    weights, means, variances = params
    fit = MixtureFit(
        G=G,
        model=VarianceModel(model),
        dim=dim,
        n=n,
        weights=weights.tolist(),
        means=(means + center).tolist(),
        variances=variances.tolist(),
        loglik=ll,
        bic=0.0,
        n_iter=n_iter,
        converged=converged,
        loglik_trace=trace,
    )
    return fit.model_copy(update={"bic": bic(fit, n)})


def bic(fit: MixtureFit, n: int) -> float:
    """2 * loglik - p * ln(n); larger is better."""
    if n <= 0:
        raise InvalidParameterError(f"n must be positive, got {n}")
    return 2.0 * fit.loglik - n_params(fit.G, fit.model, fit.dim) * math.log(n)


def responsibilities(fit: MixtureFit, data) -> np.ndarray:
    X = _as_matrix(data)
    if X.shape[1] != fit.dim:
        raise InvalidInputError(f"data has {X.shape[1]} columns, fit expects {fit.dim}")
    weights, means, variances = fit.arrays()
    center = weights @ means
    Xc = X - center
    resp, _ = _e_step(Xc, Xc * Xc, weights, means - center, variances)
    return resp


def map_labels(fit: MixtureFit, data) -> np.ndarray:
    """Hard labels 1..G by maximum posterior; ties go to the lowest component."""
    return responsibilities(fit, data).argmax(axis=1) + 1


# ============================================================================
# Model selection
# ============================================================================

def _best_key(entry: Tuple[int, VarianceModel, float]):
    G, model, value = entry
    return (-value, G, 0 if model is VarianceModel.E else 1)


def select(
    data,
    G_range: Iterable[int] = range(1, 10),
    models: Iterable[VarianceModel] = (VarianceModel.E, VarianceModel.V),
    seed: Optional[int] = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    workers: int = 1,
) -> Tuple[BicSurface, MixtureFit]:
    """
    Fit every (G, model) candidate from the Ward initialization and keep the
    highest BIC; ties go to smaller G, then E before V.

    The initialization is deterministic, so ``seed`` is only echoed on the
    surface for provenance.
    """
    X = _as_matrix(data)
    Gs = sorted(set(int(g) for g in G_range))
    model_list = [VarianceModel(m) for m in models]
    if not Gs or not model_list:
        raise InvalidParameterError("G_range and models must be non-empty")
    if Gs[0] < 1 or Gs[-1] >= X.shape[0]:
        raise InvalidInputError(f"G_range must lie in 1..{X.shape[0] - 1}")

    tree = _WardTree(X)
    inits = tree.cuts(Gs)
    candidates = [(G, m) for G in Gs for m in model_list]

    def run(candidate):
        G, m = candidate
        return em_fit(X, G, m, inits[G], tol=tol, max_iter=max_iter)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fits = list(pool.map(run, candidates))
    else:
        fits = [run(c) for c in candidates]

    entries = [
        BicEntry(G=f.G, model=f.model, bic=f.bic, loglik=f.loglik, converged=f.converged)
        for f in fits
    ]
    ranked = sorted(
        ((f.G, f.model, f.bic, i) for i, f in enumerate(fits) if math.isfinite(f.bic)),
        key=lambda t: _best_key(t[:3]),
    )
    if not ranked:
        raise InvalidInputError("no candidate produced a finite BIC")
    best = fits[ranked[0][3]]
    logger.info("BIC selected G=%d model=%s (bic=%.3f)", best.G, best.model.value, best.bic)
    surface = BicSurface(entries=entries, best_G=best.G, best_model=best.model, seed=seed)
    return surface, best
