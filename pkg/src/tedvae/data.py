"""Datasets for treatment effect estimation: containers, delimited-file IO,
a synthetic generator with known ground truth, and split utilities.

File convention: delimited text with a header row.  The column names
``t`` (binary treatment), ``y`` (observed outcome), ``y0``/``y1``
(potential outcome realisations) and ``mu0``/``mu1`` (noiseless potential
outcome means) are reserved; every other column is a covariate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

__all__ = [
    "RESERVED_COLUMNS",
    "ColumnSchema",
    "infer_schema",
    "Dataset",
    "SynthConfig",
    "generate_synthetic",
    "load_dataset",
    "save_dataset",
    "split_dataset",
    "biased_subsample",
]

RESERVED_COLUMNS = ("t", "y", "y0", "y1", "mu0", "mu1")

CONTINUOUS = "continuous"
BINARY = "binary"
_KINDS = (CONTINUOUS, BINARY)


@dataclass
class ColumnSchema:
    """Names and kinds (continuous or binary) of the covariate columns."""

    names: list
    kinds: list

    def __post_init__(self):
        self.names = list(self.names)
        self.kinds = list(self.kinds)
        if len(self.names) != len(self.kinds):
            raise ValueError(
                f"schema has {len(self.names)} names but {len(self.kinds)} kinds"
            )
        if len(set(self.names)) != len(self.names):
            raise ValueError("schema column names must be unique")
        for name, kind in zip(self.names, self.kinds):
            if kind not in _KINDS:
                raise ValueError(f"column {name!r} has unknown kind {kind!r}")
            if name in RESERVED_COLUMNS:
                raise ValueError(f"column name {name!r} is reserved")

    def __len__(self) -> int:
        return len(self.names)

    @property
    def continuous_index(self) -> np.ndarray:
        return np.array([i for i, k in enumerate(self.kinds) if k == CONTINUOUS], dtype=int)

    @property
    def binary_index(self) -> np.ndarray:
        return np.array([i for i, k in enumerate(self.kinds) if k == BINARY], dtype=int)


def infer_schema(
    x: np.ndarray,
    names: Sequence[str] | None = None,
    overrides: Mapping[str, str] | None = None,
) -> ColumnSchema:
    """Classify covariate columns by value scan.

    A column whose values all lie in {0, 1} is binary, everything else is
    continuous.  ``overrides`` maps column names to kinds and wins over
    the scan.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"covariates must be a 2-D matrix, got shape {x.shape}")
    d = x.shape[1]
    if names is None:
        names = [f"x{i}" for i in range(d)]
    names = list(names)
    if len(names) != d:
        raise ValueError(f"{len(names)} names for {d} columns")
    overrides = dict(overrides or {})
    unknown = set(overrides) - set(names)
    if unknown:
        raise ValueError(f"schema overrides for unknown columns: {sorted(unknown)}")
    kinds = []
    for j, name in enumerate(names):
        if name in overrides:
            kinds.append(overrides[name])
        elif np.isin(x[:, j], (0.0, 1.0)).all():
            kinds.append(BINARY)
        else:
            kinds.append(CONTINUOUS)
    return ColumnSchema(names, kinds)


@dataclass
class Dataset:
    """Covariates, binary treatment and outcome, plus optional ground truth.

    ``mu0``/``mu1`` are noiseless potential outcome means, ``y0``/``y1``
    noisy realisations.  ``tau_true`` prefers the noiseless version.
    """

    x: np.ndarray
    t: np.ndarray
    y: np.ndarray
    schema: ColumnSchema
    y0: np.ndarray | None = None
    y1: np.ndarray | None = None
    mu0: np.ndarray | None = None
    mu1: np.ndarray | None = None
    propensity: np.ndarray | None = None
    provenance: str = ""

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        n = self.x.shape[0] if self.x.ndim == 2 else -1
        if self.x.ndim != 2:
            raise ValueError(f"covariates must be 2-D, got shape {self.x.shape}")
        if n < 1:
            raise ValueError("dataset must contain at least one row")
        if self.x.shape[1] != len(self.schema):
            raise ValueError(
                f"{self.x.shape[1]} covariate columns but schema lists {len(self.schema)}"
            )
        if self.t.shape[0] != n or self.y.shape[0] != n:
            raise ValueError(
                f"row mismatch: x has {n}, t has {self.t.shape[0]}, y has {self.y.shape[0]}"
            )
        bad_t = np.flatnonzero(~np.isin(self.t, (0.0, 1.0)))
        if bad_t.size:
            raise ValueError(
                f"treatment must be 0 or 1; first offending row {bad_t[0]} "
                f"has t={self.t[bad_t[0]]!r}"
            )
        for attr in ("y0", "y1", "mu0", "mu1", "propensity"):
            v = getattr(self, attr)
            if v is not None:
                v = np.asarray(v, dtype=np.float64).reshape(-1)
                if v.shape[0] != n:
                    raise ValueError(f"{attr} has {v.shape[0]} rows, expected {n}")
                setattr(self, attr, v)
        if (self.y0 is None) != (self.y1 is None):
            raise ValueError("y0 and y1 must be given together")
        if (self.mu0 is None) != (self.mu1 is None):
            raise ValueError("mu0 and mu1 must be given together")
        if self.y0 is not None:
            expected = np.where(self.t == 1.0, self.y1, self.y0)
            bad = np.flatnonzero(self.y != expected)
            if bad.size:
                raise ValueError(
                    f"observed outcome must equal the factual potential outcome; "
                    f"first offending row {bad[0]}"
                )

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def has_ground_truth(self) -> bool:
        return self.mu0 is not None or self.y0 is not None

    @property
    def tau_true(self) -> np.ndarray | None:
        if self.mu0 is not None:
            return self.mu1 - self.mu0
        if self.y0 is not None:
            return self.y1 - self.y0
        return None

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        take = lambda v: None if v is None else v[idx]
        return Dataset(
            x=self.x[idx],
            t=self.t[idx],
            y=self.y[idx],
            schema=self.schema,
            y0=take(self.y0),
            y1=take(self.y1),
            mu0=take(self.mu0),
            mu1=take(self.mu1),
            propensity=take(self.propensity),
            provenance=self.provenance,
        )


# ---------------------------------------------------------------------------
# synthetic generation


@dataclass
class SynthConfig:
    """Configuration of the synthetic generator.

    Three independent standard-normal latent factor groups respectively
    drive treatment only (instrument), treatment and outcome (confounder),
    and outcome only (risk).  Covariates are noisy proxies of the factors,
    ``proxies_per_dim`` per factor dimension.  The treatment intercept is
    calibrated so the treated fraction hits ``treated_fraction``.  Effects:
    mu0 = outcome_scale * g0(conf, risk) and
    mu1 = mu0 + effect_scale * (1 + effect_heterogeneity * g1(conf, risk)),
    with g0, g1 linear for link="linear" and sums of tanh features for
    link="nonlinear"; observed outcomes add noise of sd 0.1 * outcome_scale.
    """

    n: int = 3000
    d_instrument: int = 5
    d_confounder: int = 5
    d_risk: int = 5
    proxies_per_dim: int = 2
    proxy_noise: float = 0.3
    treated_fraction: float = 0.5
    outcome_scale: float = 1.0
    effect_scale: float = 1.0
    effect_heterogeneity: float = 1.0
    propensity_scale: float = 1.5
    link: str = "linear"
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be positive, got {self.n}")
        for attr in ("d_instrument", "d_confounder", "d_risk"):
            if getattr(self, attr) < 0:
                raise ValueError(f"{attr} must be non-negative")
        if self.d_instrument + self.d_confounder + self.d_risk == 0:
            raise ValueError("at least one latent factor group must be non-empty")
        if self.proxies_per_dim < 1:
            raise ValueError("proxies_per_dim must be at least 1")
        if self.proxy_noise < 0:
            raise ValueError("proxy_noise must be non-negative")
        if not 0.05 <= self.treated_fraction <= 0.95:
            raise ValueError(
                f"treated_fraction must lie in [0.05, 0.95], got {self.treated_fraction}"
            )
        if self.outcome_scale <= 0:
            raise ValueError("outcome_scale must be positive")
        if self.effect_scale < 0:
            raise ValueError("effect_scale must be non-negative")
        if self.effect_heterogeneity < 0:
            raise ValueError("effect_heterogeneity must be non-negative")
        if self.propensity_scale <= 0:
            raise ValueError("propensity_scale must be positive")
        if self.link not in ("linear", "nonlinear"):
            raise ValueError(f"link must be 'linear' or 'nonlinear', got {self.link!r}")

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "d_instrument": self.d_instrument,
            "d_confounder": self.d_confounder,
            "d_risk": self.d_risk,
            "proxies_per_dim": self.proxies_per_dim,
            "proxy_noise": self.proxy_noise,
            "treated_fraction": self.treated_fraction,
            "outcome_scale": self.outcome_scale,
            "effect_scale": self.effect_scale,
            "effect_heterogeneity": self.effect_heterogeneity,
            "propensity_scale": self.propensity_scale,
            "link": self.link,
            "seed": self.seed,
        }


_OUTCOME_NOISE_FACTOR = 0.1  # outcome noise sd as a fraction of outcome_scale
_TANH_FEATURES = 8  # random features per nonlinear response surface
_CALIBRATION_TOL = 1e-4
_CALIBRATION_STEPS = 100


def _unit_vector(rng, k: int) -> np.ndarray:
    if k == 0:
        return np.zeros(0)
    v = rng.standard_normal(k)
    norm = np.linalg.norm(v)
    while norm == 0.0:  # vanishing draw is astronomically unlikely, but cheap to guard
        v = rng.standard_normal(k)
        norm = np.linalg.norm(v)
    return v / norm


def _proxy_block(rng, z: np.ndarray, per_dim: int, noise: float, link: str) -> np.ndarray:
    n, d = z.shape
    if d == 0:
        return np.zeros((n, 0))
    coupling = np.column_stack([_unit_vector(rng, d) for _ in range(d * per_dim)])
    clean = z @ coupling
    if link == "nonlinear":
        clean = np.tanh(clean)
    return clean + noise * rng.standard_normal((n, d * per_dim))


def _response_surface(rng, z: np.ndarray, link: str) -> np.ndarray:
    """A scalar function of the latent rows, standardised over the sample."""
    n, d = z.shape
    if d == 0:
        return np.zeros(n)
    if link == "linear":
        raw = z @ _unit_vector(rng, d)
    else:
        feats = np.column_stack(
            [np.tanh(z @ _unit_vector(rng, d)) for _ in range(_TANH_FEATURES)]
        )
        raw = feats @ rng.standard_normal(_TANH_FEATURES)
    sd = raw.std()
    if sd > 0:
        return (raw - raw.mean()) / sd
    return raw - raw.mean()


def _calibrate_intercept(u: np.ndarray, target: float) -> float:
    """Bisect the treatment intercept so mean(sigmoid(u + b)) hits target."""

    def mean_prop(b):
        return float(np.mean(0.5 * (1.0 + np.tanh(0.5 * (u + b)))))

    lo, hi = -30.0, 30.0
    if not (mean_prop(lo) <= target <= mean_prop(hi)):
        raise RuntimeError("propensity calibration failed: target outside bracket")
    for _ in range(_CALIBRATION_STEPS):
        mid = 0.5 * (lo + hi)
        if mean_prop(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    b = 0.5 * (lo + hi)
    if abs(mean_prop(b) - target) > _CALIBRATION_TOL:
        raise RuntimeError(
            f"propensity calibration failed after {_CALIBRATION_STEPS} bisection steps: "
            f"reached {mean_prop(b):.4f}, wanted {target:.4f}"
        )
    return b


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    """Draw a dataset with recorded potential outcomes and propensities."""
    rng = np.random.default_rng(cfg.seed)
    z_inst = rng.standard_normal((cfg.n, cfg.d_instrument))
    z_conf = rng.standard_normal((cfg.n, cfg.d_confounder))
    z_risk = rng.standard_normal((cfg.n, cfg.d_risk))

    x_blocks = [
        _proxy_block(rng, z_inst, cfg.proxies_per_dim, cfg.proxy_noise, cfg.link),
        _proxy_block(rng, z_conf, cfg.proxies_per_dim, cfg.proxy_noise, cfg.link),
        _proxy_block(rng, z_risk, cfg.proxies_per_dim, cfg.proxy_noise, cfg.link),
    ]
    x = np.concatenate(x_blocks, axis=1)
    names = (
        [f"inst{j:02d}" for j in range(x_blocks[0].shape[1])]
        + [f"conf{j:02d}" for j in range(x_blocks[1].shape[1])]
        + [f"risk{j:02d}" for j in range(x_blocks[2].shape[1])]
    )
    schema = ColumnSchema(names, [CONTINUOUS] * len(names))

    z_tc = np.concatenate([z_inst, z_conf], axis=1)
    if z_tc.shape[1] > 0:
        u_raw = z_tc @ _unit_vector(rng, z_tc.shape[1])
        sd = u_raw.std()
        u = cfg.propensity_scale * (u_raw - u_raw.mean()) / sd if sd > 0 else u_raw * 0.0
    else:
        u = np.zeros(cfg.n)
    intercept = _calibrate_intercept(u, cfg.treated_fraction)
    propensity = 0.5 * (1.0 + np.tanh(0.5 * (u + intercept)))
    t = rng.binomial(1, propensity).astype(np.float64)

    z_cy = np.concatenate([z_conf, z_risk], axis=1)
    g0 = _response_surface(rng, z_cy, cfg.link)
    g1 = _response_surface(rng, z_cy, cfg.link)
    mu0 = cfg.outcome_scale * g0
    tau = cfg.effect_scale * (1.0 + cfg.effect_heterogeneity * g1)
    mu1 = mu0 + tau

    noise_sd = _OUTCOME_NOISE_FACTOR * cfg.outcome_scale
    y0 = mu0 + noise_sd * rng.standard_normal(cfg.n)
    y1 = mu1 + noise_sd * rng.standard_normal(cfg.n)
    y = np.where(t == 1.0, y1, y0)

    return Dataset(
        x=x,
        t=t,
        y=y,
        schema=schema,
        y0=y0,
        y1=y1,
        mu0=mu0,
        mu1=mu1,
        propensity=propensity,
        provenance=f"synthetic:{cfg.link}:seed={cfg.seed}",
    )


# ---------------------------------------------------------------------------
# file IO


def load_dataset(
    path,
    schema_overrides: Mapping[str, str] | None = None,
    delimiter: str | None = None,
) -> Dataset:
    """Read a delimited text file with a header row into a Dataset.

    Reserved column names are split out; remaining columns become
    covariates, classified binary when their values all lie in {0, 1}.
    Constant covariate columns are dropped with a warning.  The delimiter
    is sniffed when not given.
    """
    if delimiter is None:
        df = pd.read_csv(path, sep=None, engine="python")
    else:
        df = pd.read_csv(path, sep=delimiter)
    if df.shape[0] < 1:
        raise ValueError(f"{path}: no data rows")
    for required in ("t", "y"):
        if required not in df.columns:
            raise ValueError(f"{path}: missing required column {required!r}")

    non_numeric = [c for c in df.columns if not np.issubdtype(df[c].dtype, np.number)]
    if non_numeric:
        raise ValueError(f"{path}: non-numeric columns {non_numeric}")
    na_mask = df.isna().any(axis=1)
    if na_mask.any():
        rows = np.flatnonzero(na_mask.to_numpy())
        cols = [c for c in df.columns if df[c].isna().any()]
        shown = ", ".join(str(r) for r in rows[:10])
        more = "" if rows.size <= 10 else f" (+{rows.size - 10} more)"
        raise ValueError(f"{path}: missing values in columns {cols} at rows [{shown}]{more}")

    t = df["t"].to_numpy(dtype=np.float64)
    bad_t = np.flatnonzero(~np.isin(t, (0.0, 1.0)))
    if bad_t.size:
        raise ValueError(
            f"{path}: treatment column must be 0/1; row {bad_t[0]} has t={t[bad_t[0]]!r}"
        )

    optional = {
        name: df[name].to_numpy(dtype=np.float64) if name in df.columns else None
        for name in ("y0", "y1", "mu0", "mu1")
    }

    cov_names = [c for c in df.columns if c not in RESERVED_COLUMNS]
    kept, dropped = [], []
    for c in cov_names:
        col = df[c].to_numpy(dtype=np.float64)
        if col.size and np.all(col == col[0]):
            dropped.append(c)
        else:
            kept.append(c)
    if dropped:
        warnings.warn(
            f"{path}: dropping constant covariate columns {dropped}", stacklevel=2
        )
    if not kept:
        raise ValueError(f"{path}: no usable covariate columns")
    x = df[kept].to_numpy(dtype=np.float64)
    schema = infer_schema(x, names=kept, overrides=schema_overrides)

    return Dataset(
        x=x,
        t=t,
        y=df["y"].to_numpy(dtype=np.float64),
        schema=schema,
        y0=optional["y0"],
        y1=optional["y1"],
        mu0=optional["mu0"],
        mu1=optional["mu1"],
        provenance=str(path),
    )


def save_dataset(ds: Dataset, path, delimiter: str = ",") -> None:
    """Write a Dataset to delimited text; exact float round-trip."""
    frame = {name: ds.x[:, j] for j, name in enumerate(ds.schema.names)}
    frame["t"] = ds.t
    frame["y"] = ds.y
    for name in ("y0", "y1", "mu0", "mu1"):
        v = getattr(ds, name)
        if v is not None:
            frame[name] = v
    pd.DataFrame(frame).to_csv(path, sep=delimiter, index=False)


# ---------------------------------------------------------------------------
# splitting and subsampling


def split_dataset(
    ds: Dataset,
    fractions: Sequence[float] = (0.6, 0.3, 0.1),
    seed: int = 0,
) -> tuple:
    """Shuffle and split into (train, validation, test).

    Sizes follow largest-remainder rounding of the fractions, so each is
    within one row of exact and they sum to n.  Every split must be
    non-empty.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3:
        raise ValueError(f"need three fractions, got {len(fractions)}")
    if any(f <= 0 for f in fractions):
        raise ValueError(f"fractions must be positive, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got sum {sum(fractions)!r}")
    n = ds.n
    exact = [f * n for f in fractions]
    sizes = [int(np.floor(e)) for e in exact]
    remainders = [e - s for e, s in zip(exact, sizes)]
    for _ in range(n - sum(sizes)):
        j = max(range(3), key=lambda i: (remainders[i], -i))
        sizes[j] += 1
        remainders[j] = -1.0
    if any(s == 0 for s in sizes):
        raise ValueError(f"n={n} is too small for three non-empty splits {fractions}")
    perm = np.random.default_rng(seed).permutation(n)
    bounds = np.cumsum(sizes)
    return (
        ds.subset(perm[: bounds[0]]),
        ds.subset(perm[bounds[0] : bounds[1]]),
        ds.subset(perm[bounds[1] :]),
    )


def biased_subsample(
    ds: Dataset,
    weights: np.ndarray | None = None,
    seed: int = 0,
) -> Dataset:
    """Turn a randomised dataset into an observational one.

    Drops each treated row with probability sigmoid(w . x); control rows
    are always kept.  ``weights`` defaults to a random unit vector.
    """
    rng = np.random.default_rng(seed)
    if weights is None:
        weights = _unit_vector(rng, ds.d)
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if weights.shape[0] != ds.d:
        raise ValueError(f"weights have {weights.shape[0]} entries for {ds.d} covariates")
    drop_prob = 0.5 * (1.0 + np.tanh(0.5 * (ds.x @ weights)))
    drop = (ds.t == 1.0) & (rng.uniform(size=ds.n) < drop_prob)
    keep = np.flatnonzero(~drop)
    if keep.size == 0:
        raise ValueError("biased_subsample removed every row")
    out = ds.subset(keep)
    return replace(out, provenance=f"{ds.provenance}|biased_subsample(seed={seed})")
