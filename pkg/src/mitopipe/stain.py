"""Stain-matrix estimation by sparse non-negative matrix factorization and
normalization of H&E images to a fixed target stain profile.

The factorization model is OD = W @ H with W a 3x2 matrix of per-channel
absorption vectors (unit-norm columns, hematoxylin first) and H a 2xN matrix
of non-negative per-pixel stain concentrations, fit by minimizing

    ||OD - W @ H||_F^2 + lam * sum(H)     subject to  W >= 0, H >= 0.

Normalization re-renders a source image's concentrations under the target
profile's stain matrix, after matching per-stain 99th-percentile
concentrations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import LN256, OdImage, RgbImage
from .errors import DegenerateInputError, InvalidConfigError, InvalidInputError

#: Ruifrok & Johnston H&E absorption vectors, used to seed the factorization.
RUIFROK_HE = np.array([[0.65, 0.07], [0.70, 0.99], [0.29, 0.11]], dtype=np.float64)

#: Guard for per-stain percentile concentrations of near-single-stain images.
P99_FLOOR = 1e-6


@dataclass(frozen=True)
class SnmfConfig:
    """Hyper-parameters of the factorization and of concentration coding.

    ``lam`` weighs the sparsity penalty during the matrix fit; ``code_lam``
    is the (smaller) penalty used when re-coding pixels against a fixed
    matrix for normalization, where shrinkage would visibly wash out the
    reconstruction.
    """

    lam: float = 0.1
    code_lam: float = 0.01
    outer_iters: int = 50
    tol: float = 1e-4
    max_pixels: int = 100_000
    beta: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0 or self.code_lam < 0:
            raise InvalidConfigError("sparsity weights must be >= 0")
        if self.outer_iters < 1:
            raise InvalidConfigError("outer_iters must be >= 1")
        if not (0.0 < self.beta < LN256):
            raise InvalidConfigError(f"beta must lie in (0, ln 256), got {self.beta}")
        if self.max_pixels < 2:
            raise InvalidConfigError("max_pixels must be >= 2")

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "code_lambda": self.code_lam,
            "outer_iters": self.outer_iters,
            "tol": self.tol,
            "max_pixels": self.max_pixels,
            "beta": self.beta,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SnmfConfig":
        return cls(
            lam=float(d.get("lambda", 0.1)),
            code_lam=float(d.get("code_lambda", 0.01)),
            outer_iters=int(d.get("outer_iters", 50)),
            tol=float(d.get("tol", 1e-4)),
            max_pixels=int(d.get("max_pixels", 100_000)),
            beta=float(d.get("beta", 0.15)),
            seed=int(d.get("seed", 0)),
        )


@dataclass(frozen=True)
class StainMatrix:
    """3x2 stain matrix; column 0 is the hematoxylin-like stain."""

    columns: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.columns, dtype=np.float64)
        if m.shape != (3, 2):
            raise InvalidInputError(f"StainMatrix expects shape (3, 2), got {m.shape}")
        if (m < 0).any():
            raise InvalidInputError("StainMatrix entries must be >= 0")
        norms = np.linalg.norm(m, axis=0)
        if np.abs(norms - 1.0).max() > 1e-9:
            raise InvalidInputError(f"StainMatrix columns must have unit norm, got {norms}")
        m = np.ascontiguousarray(m)
        m.setflags(write=False)
        object.__setattr__(self, "columns", m)


# Per-pixel stain concentrations as a plain (2, n_pixels) non-negative array.
ConcentrationMap = np.ndarray


@dataclass(frozen=True)
class StainProfile:
    """Target stain matrix plus its per-stain 99th-percentile concentrations."""

    matrix: StainMatrix
    p99: np.ndarray
    config: SnmfConfig = field(default_factory=SnmfConfig)

    def __post_init__(self):
        p = np.asarray(self.p99, dtype=np.float64)
        if p.shape != (2,):
            raise InvalidInputError(f"p99 must have shape (2,), got {p.shape}")
        if (p <= 0).any():
            raise InvalidInputError("p99 entries must be > 0")
        p = np.ascontiguousarray(p)
        p.setflags(write=False)
        object.__setattr__(self, "p99", p)

    def to_json(self) -> str:
        doc = {
            "matrix": [list(self.matrix.columns[:, 0]), list(self.matrix.columns[:, 1])],
            "p99": list(self.p99),
            "config": self.config.to_dict(),
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "StainProfile":
        doc = json.loads(text)
        cols = np.asarray(doc["matrix"], dtype=np.float64).T
        return cls(
            matrix=StainMatrix(cols),
            p99=np.asarray(doc["p99"], dtype=np.float64),
            config=SnmfConfig.from_dict(doc.get("config", {})),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "StainProfile":
        return cls.from_json(Path(path).read_text())


@dataclass(frozen=True)
class SnmfFit:
    """Result of ``fit_stain_matrix``: the factorization plus its objective trace."""

    matrix: StainMatrix
    concentrations: ConcentrationMap
    objectives: tuple[float, ...]


@dataclass(frozen=True)
class NormalizeResult:
    image: RgbImage
    warning: str | None = None


def rgb_to_od(image: RgbImage) -> OdImage:
    """Convert intensities to optical density: od = -ln((v + 1) / 256).

    The +1 offset avoids ln(0); white (255) maps to exactly 0 OD and black
    (0) to ln 256.
    """
    v = image.data.astype(np.float64)
    return OdImage(-np.log((v + 1.0) / 256.0))


def od_to_rgb(image: OdImage) -> RgbImage:
    """Invert ``rgb_to_od``: v = clamp(round(256 * exp(-od) - 1), 0, 255)."""
    v = 256.0 * np.exp(-image.data) - 1.0
    v = np.clip(np.floor(v + 0.5), 0.0, 255.0)
    return RgbImage(v.astype(np.uint8))


def tissue_pixels(od: OdImage, beta: float) -> np.ndarray:
    """Row-major indices of pixels whose maximum channel OD is >= beta."""
    if not (0.0 < beta < LN256):
        raise InvalidConfigError(f"beta must lie in (0, ln 256), got {beta}")
    peak = od.data.reshape(-1, 3).max(axis=1)
    return np.flatnonzero(peak >= beta)


def _nn_lasso(pixels: np.ndarray, w: np.ndarray, lam: float,
              h0: np.ndarray | None = None, max_sweeps: int = 500) -> np.ndarray:
    """Non-negative lasso for every pixel by vectorized coordinate descent.

    Solves min_h>=0 ||v - W h||^2 + lam * sum(h) independently per pixel
    (column of the returned (2, n) array). Each coordinate update is an exact
    minimization, so the per-pixel objective never increases; pixels are
    independent, making the result order-independent and safe to shard.
    """
    v = np.ascontiguousarray(pixels, dtype=np.float64)  # (n, 3)
    n = v.shape[0]
    gram = w.T @ w  # (2, 2)
    diag = np.maximum(np.diag(gram), 1e-12)
    corr = v @ w  # (n, 2)
    h = np.zeros((2, n)) if h0 is None else np.array(h0, dtype=np.float64)
    half_lam = 0.5 * lam
    for _ in range(max_sweeps):
        delta = 0.0
        for s in (0, 1):
            t = 1 - s
            num = corr[:, s] - gram[s, t] * h[t] - half_lam
            new = np.maximum(0.0, num / diag[s])
            delta = max(delta, float(np.abs(new - h[s]).max(initial=0.0)))
            h[s] = new
        if delta <= 1e-12 * (1.0 + float(h.max(initial=0.0))):
            break
    return h


def _objective(v: np.ndarray, w: np.ndarray, h: np.ndarray, lam: float) -> float:
    resid = v.T - w @ h
    return float(np.sum(resid * resid) + lam * np.sum(h))


def _order_columns(w: np.ndarray, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Hematoxylin first: larger red-channel OD, ties broken by larger green.
    if (w[0, 1], w[1, 1]) > (w[0, 0], w[1, 0]):
        return w[:, ::-1].copy(), h[::-1].copy()
    return w, h


def fit_stain_matrix(od_pixels: np.ndarray, cfg: SnmfConfig | None = None) -> SnmfFit:
    """Fit the two-stain factorization to a list of OD triplets.

    Alternates an exact non-negative-lasso H step with a multiplicative W
    update (columns renormalized, concentrations rescaled inversely so the
    product is unchanged). A W update that would increase the penalized
    objective is damped and, failing that, skipped, so the objective trace is
    non-increasing by construction.

    Returns the fitted matrix, concentrations for every input pixel, and the
    per-outer-iteration objective values.
    """
    cfg = cfg or SnmfConfig()
    v_all = np.asarray(od_pixels, dtype=np.float64)
    if v_all.ndim != 2 or v_all.shape[1] != 3:
        raise InvalidInputError(f"od_pixels must have shape (n, 3), got {v_all.shape}")
    if np.isnan(v_all).any():
        raise InvalidInputError("od_pixels contains NaN")
    if np.unique(v_all, axis=0).shape[0] < 2:
        raise DegenerateInputError("need at least 2 distinct pixels to fit a stain matrix")

    rng = np.random.default_rng(cfg.seed)
    if v_all.shape[0] > cfg.max_pixels:
        sel = np.sort(rng.choice(v_all.shape[0], size=cfg.max_pixels, replace=False))
        v = v_all[sel]
    else:
        v = v_all

    w = RUIFROK_HE + rng.uniform(0.0, 0.05, size=(3, 2))
    w /= np.linalg.norm(w, axis=0, keepdims=True)

    h = np.zeros((2, v.shape[0]))
    objectives: list[float] = []
    for _ in range(cfg.outer_iters):
        h = _nn_lasso(v, w, cfg.lam, h0=h)
        f = _objective(v, w, h, cfg.lam)

        # W step: exact block-coordinate minimization of the reconstruction
        # term over {w >= 0, ||w|| <= 1} per column (projected update), then
        # renormalization to unit columns with the inverse rescale of H.
        # Because the ball projection leaves ||w|| <= 1, renormalization can
        # only shrink H and with it the sparsity term, so the full step never
        # increases the objective; a guard reverts float-level regressions.
        hht = h @ h.T
        numer = v.T @ h.T
        w_new = w.copy()
        for s in (0, 1):
            denom = max(hht[s, s], 1e-12)
            u = w_new[:, s] + (numer[:, s] - w_new @ hht[:, s]) / denom
            u = np.maximum(u, 0.0)
            nrm = float(np.linalg.norm(u))
            if nrm >= 1e-12:
                w_new[:, s] = u / max(1.0, nrm)
        norms = np.maximum(np.linalg.norm(w_new, axis=0), 1e-12)
        w_new = w_new / norms
        h_new = h * norms[:, None]
        f_new = _objective(v, w_new, h_new, cfg.lam)
        if f_new <= f + 1e-12 * (1.0 + abs(f)):
            w, h, f = w_new, h_new, f_new

        converged = bool(objectives) and objectives[-1] - f < cfg.tol * max(objectives[-1], 1e-12)
        objectives.append(f)
        if converged:
            break

    w, _ = _order_columns(w, h)
    matrix = StainMatrix(w)
    concentrations = _nn_lasso(v_all, w, cfg.lam)
    return SnmfFit(matrix=matrix, concentrations=concentrations, objectives=tuple(objectives))


def sparse_code(od: OdImage, matrix: StainMatrix, lam: float) -> ConcentrationMap:
    """Concentrations of every pixel of ``od`` against a fixed stain matrix."""
    pixels = od.data.reshape(-1, 3)
    return _nn_lasso(pixels, np.asarray(matrix.columns), lam)


def build_profile(target: RgbImage, cfg: SnmfConfig | None = None) -> StainProfile:
    """Estimate the stain profile of a target image.

    Fits the stain matrix on tissue pixels, then records the per-stain 99th
    percentile (linear interpolation) of tissue concentrations coded at
    ``cfg.code_lam``; percentiles are floored at 1e-6 so near-single-stain
    targets stay usable.
    """
    cfg = cfg or SnmfConfig()
    od = rgb_to_od(target)
    idx = tissue_pixels(od, cfg.beta)
    if idx.size < 2:
        raise DegenerateInputError(
            f"target has {idx.size} tissue pixels at beta={cfg.beta}; need at least 2"
        )
    od_tissue = od.data.reshape(-1, 3)[idx]
    fit = fit_stain_matrix(od_tissue, cfg)
    conc = _nn_lasso(od_tissue, np.asarray(fit.matrix.columns), cfg.code_lam)
    p99 = np.maximum(np.percentile(conc, 99, axis=1), P99_FLOOR)
    return StainProfile(matrix=fit.matrix, p99=p99, config=cfg)


def normalize_to_profile(src: RgbImage, profile: StainProfile,
                         cfg: SnmfConfig | None = None) -> NormalizeResult:
    """Re-render ``src`` under the target profile's stains.

    Fits the source stain matrix on tissue pixels, codes all pixels against
    it, scales each concentration row to match the target's 99th percentile,
    and reconstructs through the target matrix. Images with fewer than 2
    tissue pixels come back unchanged with a background-only warning so batch
    jobs can proceed.
    """
    cfg = cfg or profile.config
    od = rgb_to_od(src)
    idx = tissue_pixels(od, cfg.beta)
    if idx.size < 2:
        return NormalizeResult(
            image=src,
            warning=f"background-only: {idx.size} tissue pixels at beta={cfg.beta}, image returned unchanged",
        )
    pixels = od.data.reshape(-1, 3)
    fit = fit_stain_matrix(pixels[idx], cfg)
    h_all = _nn_lasso(pixels, np.asarray(fit.matrix.columns), cfg.code_lam)
    src_p99 = np.maximum(np.percentile(h_all[:, idx], 99, axis=1), P99_FLOOR)
    h_scaled = h_all * (profile.p99 / src_p99)[:, None]
    od_new = np.asarray(profile.matrix.columns) @ h_scaled
    od_new = np.clip(od_new.T.reshape(od.data.shape), 0.0, LN256)
    return NormalizeResult(image=od_to_rgb(OdImage(od_new)))
