"""Profile-backed execution-cost estimator.

A CostTable is a measured (n_q, n) -> milliseconds grid; estimate()
interpolates bilinearly, linear in n_q and linear in log2(n), clamping
outside the grid. The bundled default profile (profiles/a100_d128.csv)
is a d=128 measurement grid over n_q {1,2,5,10,20,50,100} and
n {512..16384}.

CSV format: optional '# key=value' meta comment lines, then a
'n_q,n,cost_ms' header, one row per grid cell, UTF-8, LF endings.
dump_profile writes a canonical form (sorted meta, n-major row order,
shortest-roundtrip float repr) so dump(load(x)) is byte-identical for
files produced here.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DuplicateKnot, IncompleteGrid, NonPositiveCost, ProfileLoadError

DEFAULT_NQ_KNOTS = (1, 2, 5, 10, 20, 50, 100)
DEFAULT_N_KNOTS = (512, 1024, 2048, 4096, 8192, 16384)


@dataclass(frozen=True)
class CostTable:
    nq_knots: tuple[int, ...]
    n_knots: tuple[int, ...]
    cost_ms: np.ndarray  # [len(n_knots), len(nq_knots)]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        grid = np.asarray(self.cost_ms, dtype=np.float64)
        if grid.shape != (len(self.n_knots), len(self.nq_knots)):
            raise IncompleteGrid(
                f"grid {grid.shape} does not match knots ({len(self.n_knots)}, {len(self.nq_knots)})"
            )
        for name, knots in (("n_q", self.nq_knots), ("n", self.n_knots)):
            if any(b <= a for a, b in zip(knots, knots[1:])) or any(k < 1 for k in knots):
                raise DuplicateKnot(f"{name} knots must be strictly ascending positives: {knots}")
        if not (grid > 0).all():
            raise NonPositiveCost("every grid cost must be > 0")
        object.__setattr__(self, "cost_ms", grid)

    def cell(self, n_q: int, n: int) -> float:
        return float(self.cost_ms[self.n_knots.index(n), self.nq_knots.index(n_q)])


def _interp_axis(knots, x):
    """Clamped segment lookup: returns (lo_idx, hi_idx, fraction)."""
    if x <= knots[0]:
        return 0, 0, 0.0
    if x >= knots[-1]:
        last = len(knots) - 1
        return last, last, 0.0
    hi = next(i for i, k in enumerate(knots) if k >= x)
    lo = hi - 1
    return lo, hi, None  # caller computes the fraction in its own space


def estimate(table: CostTable, n_q: int, n: int) -> float:
    """Interpolated cost of one subtask on one block, in ms. Linear in
    n_q, linear in log2(n); outside the grid the nearest knot wins."""
    qlo, qhi, _ = _interp_axis(table.nq_knots, n_q)
    tq = 0.0 if qlo == qhi else (n_q - table.nq_knots[qlo]) / (table.nq_knots[qhi] - table.nq_knots[qlo])
    nlo, nhi, _ = _interp_axis(table.n_knots, n)
    if nlo == nhi:
        tn = 0.0
    else:
        la, lb = math.log2(table.n_knots[nlo]), math.log2(table.n_knots[nhi])
        tn = (math.log2(n) - la) / (lb - la)
    g = table.cost_ms
    c00, c01 = g[nlo, qlo], g[nlo, qhi]
    c10, c11 = g[nhi, qlo], g[nhi, qhi]
    low = c00 + tq * (c01 - c00)
    high = c10 + tq * (c11 - c10)
    return float(low + tn * (high - low))


def profile_synthetic(alpha: float, beta: float, gamma: float,
                      nq_knots=DEFAULT_NQ_KNOTS, n_knots=DEFAULT_N_KNOTS) -> CostTable:
    """Affine proxy table cost = alpha + beta*n + gamma*n*n_q over the
    given knot grid; a hardware-free stand-in for tests and studies.
    Pass dense n_knots when exact linearity between queried points
    matters (interpolation is exact only at knots)."""
    if alpha <= 0 and (beta < 0 or gamma < 0):
        raise NonPositiveCost("need alpha > 0 or positive slope terms")
    nq = np.asarray(nq_knots, dtype=np.float64)
    n = np.asarray(n_knots, dtype=np.float64)
    grid = alpha + beta * n[:, None] + gamma * n[:, None] * nq[None, :]
    return CostTable(tuple(int(x) for x in nq_knots), tuple(int(x) for x in n_knots), grid,
                     meta={"synthetic": f"alpha={alpha!r},beta={beta!r},gamma={gamma!r}"})


def load_profile(source) -> CostTable:
    """Read a profile CSV from a path, text, or file-like object."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        text = Path(source).read_text(encoding="utf-8")
    meta = {}
    rows = []
    lines = text.splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            meta[k.strip()] = v.strip()
        elif line.strip():
            body.append(line)
    if not body:
        raise ProfileLoadError("profile file has no CSV body")
    reader = csv.DictReader(io.StringIO("\n".join(body)))
    if reader.fieldnames != ["n_q", "n", "cost_ms"]:
        raise ProfileLoadError(f"expected header n_q,n,cost_ms, got {reader.fieldnames}")
    try:
        for rec in reader:
            rows.append((int(rec["n_q"]), int(rec["n"]), float(rec["cost_ms"])))
    except (TypeError, ValueError) as exc:
        raise ProfileLoadError(f"bad profile row: {exc}") from exc

    nq_knots = tuple(sorted({r[0] for r in rows}))
    n_knots = tuple(sorted({r[1] for r in rows}))
    cells = {}
    for n_q, n, cost in rows:
        if (n_q, n) in cells:
            raise DuplicateKnot(f"cell (n_q={n_q}, n={n}) appears twice")
        if cost <= 0:
            raise NonPositiveCost(f"cell (n_q={n_q}, n={n}) has non-positive cost {cost}")
        cells[(n_q, n)] = cost
    grid = np.empty((len(n_knots), len(nq_knots)), dtype=np.float64)
    for i, n in enumerate(n_knots):
        for j, n_q in enumerate(nq_knots):
            if (n_q, n) not in cells:
                raise IncompleteGrid(f"grid is missing cell (n_q={n_q}, n={n})")
            grid[i, j] = cells[(n_q, n)]
    return CostTable(nq_knots, n_knots, grid, meta=meta)


def dump_profile(table: CostTable, target) -> None:
    """Write the canonical CSV form (see module docstring)."""
    buf = io.StringIO()
    for key in sorted(table.meta):
        buf.write(f"# {key}={table.meta[key]}\n")
    buf.write("n_q,n,cost_ms\n")
    for i, n in enumerate(table.n_knots):
        for j, n_q in enumerate(table.nq_knots):
            buf.write(f"{n_q},{n},{float(table.cost_ms[i, j])!r}\n")
    text = buf.getvalue()
    if hasattr(target, "write"):
        target.write(text)
    else:
        Path(target).write_text(text, encoding="utf-8")


def default_profile_path() -> Path:
    return Path(resources.files("prefixdec") / "profiles" / "a100_d128.csv")


def load_default_profile() -> CostTable:
    return load_profile(default_profile_path())


def fit_affine(table: CostTable) -> dict:
    """Least-squares fit cost ~ alpha + beta*n + gamma*n*n_q over the
    grid; column scaling keeps the normal equations well conditioned."""
    nq = np.asarray(table.nq_knots, dtype=np.float64)
    n = np.asarray(table.n_knots, dtype=np.float64)
    nn, qq = np.meshgrid(n, nq, indexing="ij")
    cols = np.stack([np.ones(nn.size), nn.ravel(), (nn * qq).ravel()], axis=1)
    y = table.cost_ms.ravel()
    scale = np.abs(cols).max(axis=0)
    coef, *_ = np.linalg.lstsq(cols / scale, y, rcond=None)
    coef = coef / scale
    resid = cols @ coef - y
    return {
        "alpha": float(coef[0]),
        "beta": float(coef[1]),
        "gamma": float(coef[2]),
        "max_residual_ms": float(np.abs(resid).max()),
        "rmse_ms": float(np.sqrt(np.mean(resid**2))),
    }
