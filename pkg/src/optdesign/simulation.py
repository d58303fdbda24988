"""Monte Carlo robustness study over randomly drawn weight vectors.

Each of ``n`` sampled weight vectors is taken in turn as the assumed one
(the candidate ``c``); the other ``n - 1`` play the true weights ``t``. For
every candidate the losses ``R(t, c)`` are summarised by nearest-rank
percentiles and paired with the standardized distance of its variances
to the saturation boundary.
"""
from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .design import triple_products
from .exceptions import OptDesignError, ValidationError
from .links import Link
from .robustness import standardized_distance
from .solver import SolverConfig, solve

log = logging.getLogger(__name__)

__all__ = [
    "StudyConfig",
    "StudyResult",
    "DEFAULT_PERCENTILES",
    "SAMPLES_HEADER",
    "sample_weights",
    "saturated_fraction",
    "nearest_rank",
    "run_study",
    "export_study",
    "read_summary_csv",
    "summary_header",
]

DEFAULT_PERCENTILES = (25.0, 50.0, 75.0, 95.0, 99.0)
SAMPLES_HEADER = (
    "w1", "w2", "w3", "w4", "v1", "v2", "v3", "v4", "p1", "p2", "p3", "p4", "branch", "distance",
)
# Upper sampling bound allowed per link: 0.25 for logit, 0.65 for the rest.
_W_CEILING = {Link.LOGIT: 0.25, Link.PROBIT: 0.65, Link.LOGLOG: 0.65, Link.CLOGLOG: 0.65}


@dataclass(frozen=True)
class StudyConfig:
    link: Link = Link.LOGIT
    w_low: float = 0.05
    w_high: float | None = None
    n_samples: int = 1000
    percentiles: tuple = DEFAULT_PERCENTILES
    seed: int = 0

    def __post_init__(self):
        link = Link.parse(self.link)
        object.__setattr__(self, "link", link)
        if self.w_high is None:
            object.__setattr__(self, "w_high", _W_CEILING[link])
        pct = tuple(float(q) for q in self.percentiles)
        object.__setattr__(self, "percentiles", tuple(sorted(pct)))
        if not 0.0 < self.w_low < self.w_high:
            raise ValidationError(f"need 0 < w_low < w_high, got [{self.w_low}, {self.w_high}]")
        if self.w_high > _W_CEILING[link]:
            raise ValidationError(
                f"w_high={self.w_high} exceeds the {link.value} ceiling {_W_CEILING[link]}"
            )
        if int(self.n_samples) < 2:
            raise ValidationError("n_samples must be at least 2")
        if any(not 0.0 < q <= 100.0 for q in pct):
            raise ValidationError(f"percentiles must lie in (0, 100], got {pct}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be a non-negative 64-bit integer")


@dataclass(eq=False)
class StudyResult:
    config: StudyConfig
    weights: np.ndarray
    variances: np.ndarray
    designs: np.ndarray
    branches: list
    distances: np.ndarray
    L_max: np.ndarray
    candidates: np.ndarray
    summary: np.ndarray
    saturated_fraction: float
    failures: dict = field(default_factory=dict)
    loss_matrix: np.ndarray | None = None

    def percentile_column(self, q) -> np.ndarray:
        return self.summary[:, self.config.percentiles.index(float(q))]


def _sample_rng(seed, index):
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


def sample_weights(cfg: StudyConfig) -> np.ndarray:
    """``(n, 4)`` iid uniform weights; row ``i`` depends only on ``(seed, i)``."""
    out = np.empty((int(cfg.n_samples), 4))
    for i in range(out.shape[0]):
        out[i] = _sample_rng(cfg.seed, i).uniform(cfg.w_low, cfg.w_high, 4)
    return out


def saturated_fraction(samples, tol=1e-10) -> float:
    W = np.atleast_2d(np.asarray(samples, dtype=float))
    if W.size == 0:
        raise ValidationError("no samples")
    V = 1.0 / W
    return float(np.mean(2.0 * V.max(axis=1) >= (1.0 - tol) * V.sum(axis=1)))


def nearest_rank(sorted_values, q) -> float:
    """Nearest-rank percentile: the ``ceil(q/100 * n)``-th smallest value."""
    n = len(sorted_values)
    k = max(1, math.ceil(q / 100.0 * n - 1e-9))
    return float(sorted_values[min(k, n) - 1])


def _solve_one(v, cfg):
    try:
        return solve(v, cfg), None
    except OptDesignError as exc:
        return None, str(exc)


def _loss_block(V, L, T, cols):
    # Column c holds R(t, c) for every t. Written out term by term so the
    # result does not depend on how the candidates are chunked.
    Tc = T[cols]
    num = (
        V[:, 0:1] * Tc[None, :, 0]
        + V[:, 1:2] * Tc[None, :, 1]
        + V[:, 2:3] * Tc[None, :, 2]
        + V[:, 3:4] * Tc[None, :, 3]
    )
    return np.clip(1.0 - np.cbrt(num / L[:, None]), 0.0, 1.0)


def _summarise(block, cols, percentiles):
    out = np.empty((len(cols), len(percentiles)))
    for j, c in enumerate(cols):
        vals = np.sort(np.delete(block[:, j], c))
        out[j] = [nearest_rank(vals, q) for q in percentiles]
    return out


def run_study(cfg: StudyConfig, workers=1, keep_matrix=False,
              solver_cfg: SolverConfig | None = None) -> StudyResult:
    """Solve every sample, then summarise ``R(t, c)`` for each candidate.

    ``workers`` threads split the candidates; the result is bit-identical
    for any number of workers.
    """
    solver_cfg = solver_cfg or SolverConfig()
    W = sample_weights(cfg)
    V = 1.0 / W
    n = V.shape[0]
    workers = max(1, int(workers))
    if workers == 1:
        solved = [_solve_one(v, solver_cfg) for v in V]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            solved = list(pool.map(lambda v: _solve_one(v, solver_cfg), V))

    P = np.full((n, 4), np.nan)
    L = np.full(n, np.nan)
    branches = []
    failures = {}
    for i, (res, err) in enumerate(solved):
        if res is None:
            failures[i] = err
            branches.append("failed")
            continue
        P[i], L[i] = res.p, res.L_max
        branches.append(res.branch.value)
    if failures:
        log.warning("%d of %d samples failed to solve and are excluded", len(failures), n)
    ok = np.array([i for i in range(n) if i not in failures], dtype=int)
    if ok.size < 2:
        raise ValidationError("fewer than two samples solved; nothing to compare")
    distances = np.array([standardized_distance(v) for v in V])

    Vk, Lk = V[ok], L[ok]
    T = np.array([triple_products(p) for p in P[ok]])
    chunk = max(1, math.ceil(ok.size / (4 * workers)))
    blocks = [np.arange(s, min(s + chunk, ok.size)) for s in range(0, ok.size, chunk)]

    def work(cols):
        block = _loss_block(Vk, Lk, T, cols)
        return block, _summarise(block, cols, cfg.percentiles)

    if workers == 1:
        done = [work(cols) for cols in blocks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(work, blocks))
    summary = np.vstack([s for _, s in done])
    matrix = np.hstack([b for b, _ in done]) if keep_matrix else None

    return StudyResult(
        config=cfg,
        weights=W,
        variances=V,
        designs=P,
        branches=branches,
        distances=distances,
        L_max=L,
        candidates=ok,
        summary=summary,
        saturated_fraction=saturated_fraction(W),
        failures=failures,
        loss_matrix=matrix,
    )


def _fmt(x) -> str:
    # Shortest repr that round-trips the double exactly.
    x = float(x)
    return repr(x) if math.isfinite(x) else ""


def summary_header(percentiles=DEFAULT_PERCENTILES):
    return ["candidate_index"] + [f"R_{q:g}" for q in percentiles] + ["distance"]


def _open_for_write(path):
    try:
        return open(path, "w", newline="")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def export_study(result: StudyResult, out_dir, full=False) -> dict:
    """Write ``samples.csv`` and ``summary.csv`` (and ``loss_matrix.csv`` if ``full``).

    ``summary.csv`` starts with ``#``-prefixed metadata lines followed by the
    header row. Returns the written paths keyed by name.
    """
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc.strerror or exc}") from exc
    cfg = result.config
    paths = {
        "samples": os.path.join(out_dir, "samples.csv"),
        "summary": os.path.join(out_dir, "summary.csv"),
    }
    with _open_for_write(paths["samples"]) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SAMPLES_HEADER)
        for i in range(result.weights.shape[0]):
            writer.writerow(
                [_fmt(x) for x in result.weights[i]]
                + [_fmt(x) for x in result.variances[i]]
                + [_fmt(x) for x in result.designs[i]]
                + [result.branches[i], _fmt(result.distances[i])]
            )
    with _open_for_write(paths["summary"]) as fh:
        fh.write(f"# saturated_fraction={_fmt(result.saturated_fraction)}\n")
        fh.write(
            f"# link={cfg.link.value} n_samples={cfg.n_samples} seed={cfg.seed} "
            f"w_low={_fmt(cfg.w_low)} w_high={_fmt(cfg.w_high)} failures={len(result.failures)}\n"
        )
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(summary_header(cfg.percentiles))
        for c, row in zip(result.candidates, result.summary):
            writer.writerow([int(c)] + [_fmt(x) for x in row] + [_fmt(result.distances[c])])
    if full:
        if result.loss_matrix is None:
            raise ValidationError("loss matrix was not kept; rerun with keep_matrix=True")
        paths["loss_matrix"] = os.path.join(out_dir, "loss_matrix.csv")
        with _open_for_write(paths["loss_matrix"]) as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t\\c"] + [int(c) for c in result.candidates])
            for t, row in zip(result.candidates, result.loss_matrix):
                writer.writerow([int(t)] + [_fmt(x) for x in row])
    return paths


def read_summary_csv(path):
    """Parse a ``summary.csv`` back into ``(metadata, header, rows)``."""
    meta, header, rows = {}, None, []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                for item in line[1:].split():
                    key, _, value = item.partition("=")
                    meta[key] = value
                continue
            record = next(csv.reader([line]))
            if header is None:
                header = record
            else:
                rows.append([int(record[0])] + [float(x) for x in record[1:]])
    return meta, header, rows
