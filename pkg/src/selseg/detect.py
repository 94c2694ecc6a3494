"""Break-date detection: likelihood-ratio scan over a window grid, local
refinement, description-length selection, and a globally optimal dynamic
program under the same criterion.

The scan statistic compares the fit of two adjacent windows of radius h
against their union; candidate dates are its local maxima, each candidate is
re-centered on a wider window, and the winning window radius is the one whose
refined break set minimizes the description length.  Detection is fully
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import InvalidSegmentationError, WindowTooShortError
from .regress_core import CumulantTable, Dataset, Segmentation

N_WINDOWS = 30


def yau_zhao_radius(T: int) -> int:
    """Advocated window radius: max{25, (ln T)^2} below T = 800, twice the
    log-square term (floored at 50) above."""
    lt2 = np.log(T) ** 2
    h = max(25.0, lt2) if T < 800 else max(50.0, 2.0 * lt2)
    return int(round(h))


@dataclass(frozen=True)
class ScanConfig:
    """Window grid for the multi-radius scan."""

    n_windows: int = N_WINDOWS
    h_grid: Optional[tuple] = None

    def grid(self, T: int, K: int) -> tuple:
        if self.h_grid is not None:
            hs = [int(h) for h in self.h_grid]
        else:
            h_yz = yau_zhao_radius(T)
            hs = np.round(np.linspace(h_yz / 2.0, 2.0 * h_yz, self.n_windows)).astype(int)
        lo, hi = K + 1, (T - 1) // 2
        if lo > hi:
            raise WindowTooShortError(f"no admissible window radius for T={T}, K={K}")
        hs = sorted({int(min(max(h, lo), hi)) for h in hs})
        return tuple(hs)


@dataclass
class WindowScan:
    """Scan output for one radius: the statistic (1-based, zero outside
    [h, T-h]), its local-maxima candidates, the refined candidates and the
    description length of the refined segmentation."""

    h: int
    statistic: np.ndarray
    candidates: tuple
    refined: tuple
    mdl: float


@dataclass
class ScanResult:
    windows: list = field(default_factory=list)
    chosen_h: Optional[int] = None
    mdl_no_break: float = np.nan


def lr_scan(data: Dataset, h: int, table: Optional[CumulantTable] = None) -> np.ndarray:
    """Likelihood-ratio scan statistic for radius h.

    Returns a 1-based array s of length T+1 with
    s[t] = (L_{t-h+1:t} + L_{t+1:t+h} - L_{t-h+1:t+h}) / h on [h, T-h] and
    zero outside; tiny negative values from round-off are clamped at zero.
    """
    T, K = data.T, data.K
    if not (K + 1 <= h <= (T - 1) // 2):
        raise WindowTooShortError(f"radius {h} outside [K+1, (T-1)//2] for T={T}")
    if table is None:
        table = CumulantTable(data)
    t = np.arange(h, T - h + 1)
    left = table.loglik(t - h + 1, t)
    right = table.loglik(t + 1, t + h)
    both = table.loglik(t - h + 1, t + h)
    s = np.zeros(T + 1)
    s[h : T - h + 1] = np.maximum((left + right - both) / h, 0.0)
    return s


def local_max_candidates(s: np.ndarray, h: int) -> tuple:
    """Dates j in [2h+1, T-h] where the scan equals its maximum over
    [j-h, j+h]; runs of tied admissible maxima within h of each other
    collapse to their smallest index."""
    from scipy.ndimage import maximum_filter1d

    T = s.shape[0] - 1
    lo, hi = 2 * h + 1, T - h
    if lo > hi:
        return ()
    win_max = maximum_filter1d(s, size=2 * h + 1, mode="constant", cval=0.0)
    raw = [int(j) for j in range(lo, hi + 1) if s[j] == win_max[j]]
    out = []
    for j in raw:
        if out and j - out[-1][-1] <= h and s[j] == s[out[-1][0]]:
            out[-1].append(j)  # same tied cluster
        else:
            out.append([j])
    return tuple(cluster[0] for cluster in out)


def _round_half(x: float) -> int:
    """Nearest integer, halves away from zero."""
    return int(np.floor(x + 0.5)) if x >= 0 else -int(np.floor(-x + 0.5))


def refine_candidates(data: Dataset, candidates, h: int,
                      table: Optional[CumulantTable] = None) -> tuple:
    """Re-center each candidate on a window of radius ~1.5h: the refined date
    maximizes the split fit L_{lo:t} + L_{t+1:hi} over t within h of the
    candidate.  Window edges are clipped to the sample and each side keeps at
    least K+1 rows; the refined set is sorted and deduplicated.
    """
    if table is None:
        table = CumulantTable(data)
    T, K = data.T, data.K
    w = _round_half(1.5 * h)
    refined = []
    for tau in candidates:
        lo = max(1, tau - w)
        hi = min(T, tau + w)
        t_lo = max(tau - h, lo + K)
        t_hi = min(tau + h, hi - K - 1)
        if t_lo > t_hi:
            refined.append(int(tau))
            continue
        ts = np.arange(t_lo, t_hi + 1)
        score = table.loglik(np.full_like(ts, lo), ts) + table.loglik(ts + 1, np.full_like(ts, hi))
        refined.append(int(ts[int(np.argmax(score))]))
    return tuple(sorted(set(refined)))


def log_plus(x: float) -> float:
    """ln x for x >= 1 and 0 otherwise, keeping one- and two-regime
    description lengths finite."""
    return float(np.log(x)) if x >= 1.0 else 0.0


def mdl(data: Dataset, seg: Segmentation, table: Optional[CumulantTable] = None) -> float:
    """Description length of a segmentation:
    ln+(m-1) + m ln T + sum_j [ (K+1)/2 ln(len_j) - L_j ]."""
    T, K = data.T, data.K
    seg.validate(T, min_len=K + 1)
    if table is None:
        table = CumulantTable(data)
    b = np.asarray(seg.boundaries(T))
    lens = np.diff(b).astype(float)
    logliks = table.loglik(b[:-1] + 1, b[1:])
    m = seg.m
    return (
        log_plus(m - 1) + m * float(np.log(T))
        + float(np.sum(0.5 * (K + 1) * np.log(lens) - logliks))
    )


def detect_breaks(data: Dataset, cfg: Optional[ScanConfig] = None):
    """Three-step detection: scan every radius in the grid, refine each
    candidate set, and keep the refined set (the empty one included) with the
    smallest description length.

    Returns (segmentation, scan_result).
    """
    cfg = cfg or ScanConfig()
    T, K = data.T, data.K
    if T < 4 * (K + 1):
        raise WindowTooShortError(f"need T >= 4(K+1) = {4 * (K + 1)}")
    table = CumulantTable(data)
    result = ScanResult()
    result.mdl_no_break = mdl(data, Segmentation(()), table=table)
    best = (result.mdl_no_break, Segmentation(()), None)
    for h in cfg.grid(T, K):
        s = lr_scan(data, h, table=table)
        cands = local_max_candidates(s, h)
        refined = refine_candidates(data, cands, h, table=table)
        seg = Segmentation(refined)
        try:
            value = mdl(data, seg, table=table)
        except InvalidSegmentationError:
            value = np.inf  # refinement collided below the minimum duration
        result.windows.append(WindowScan(h=h, statistic=s, candidates=cands,
                                         refined=refined, mdl=value))
        if value < best[0]:
            best = (value, seg, h)
    result.chosen_h = best[2]
    return best[1], result


def dp_mdl_segmentation(data: Dataset, max_breaks: int = 10,
                        min_len: Optional[int] = None) -> Segmentation:
    """Globally minimize the description length by optimal partitioning.

    Segment costs (K+1)/2 ln(len) - L are additive; the regime-count terms
    ln+(m-1) + m ln T are not, so the inner dynamic program runs once per
    regime count and the best count wins.  Minimum regime duration defaults
    to ceil(1.5 (K+1)).
    """
    T, K = data.T, data.K
    if max_breaks < 0:
        raise ValueError("max_breaks must be >= 0")
    d = int(np.ceil(1.5 * (K + 1))) if min_len is None else int(min_len)
    if d > T:
        raise InvalidSegmentationError(f"minimum duration {d} exceeds T={T}")
    if max_breaks == 0:
        return Segmentation(())
    table = CumulantTable(data)

    # cost[a, b] for segment (a, b], b - a >= d
    cost = np.full((T + 1, T + 1), np.inf)
    for a in range(0, T - d + 1):
        bs = np.arange(a + d, T + 1)
        lens = (bs - a).astype(float)
        cost[a, bs] = 0.5 * (K + 1) * np.log(lens) - table.loglik(
            np.full_like(bs, a + 1), bs
        )

    m_max = min(max_breaks + 1, T // d)
    # D[j][b]: best cost of covering (0, b] with j segments
    D = np.full((m_max + 1, T + 1), np.inf)
    arg = np.zeros((m_max + 1, T + 1), dtype=int)
    D[1] = cost[0]
    best_total, best_m = D[1][T] + log_plus(0) + np.log(T), 1
    for j in range(2, m_max + 1):
        prev = D[j - 1]
        for b in range(j * d, T + 1):
            a_lo, a_hi = (j - 1) * d, b - d
            vals = prev[a_lo : a_hi + 1] + cost[a_lo : a_hi + 1, b]
            i = int(np.argmin(vals))
            D[j][b] = vals[i]
            arg[j][b] = a_lo + i
        total = D[j][T] + log_plus(j - 1) + j * np.log(T)
        if total < best_total:
            best_total, best_m = total, j

    taus = []
    b = T
    for j in range(best_m, 1, -1):
        b = int(arg[j][b])
        taus.append(b)
    return Segmentation(tuple(sorted(taus)))
