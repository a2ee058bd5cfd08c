"""Analytic expected-power and expected-TRP bounds under Rayleigh fading.

Gains are unit-free exponential power gains with rate ``lam``. ``kappa2``
is the mean path-loss factor; it scales every ETRP and cancels in every ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy import integrate, special

from .errors import DomainError, NumericalError
from .model import ScenarioConfig, make_rng
from .oracle import DELTA

V_EXACT_CAP = 14
V_MC_SAMPLES = 10**6
_V_MC_SEED = 0x5EED


def _check_counts(n: int, l: int, lam: float) -> None:
    if n < 1 or l < 1:
        raise DomainError(f"need N >= 1 and L >= 1, got N={n}, L={l}")
    if lam <= 0:
        raise DomainError("lambda must be positive")


@lru_cache(maxsize=None)
def gamma(n: int, l: int, lam: float = 1.0) -> float:
    """Expected maximum over ``l`` channels of a sum of ``n`` Exp(lam) gains.

    Each channel total is Erlang(n, lam); the mean of the maximum is the
    integral of ``1 - F(z)^l``, truncated where the tail drops below 1e-10.
    """
    _check_counts(n, l, lam)
    # l * (1 - F) bounds 1 - F^l; solve l * Q(n, z) = 1e-10 for the cutoff
    z_max = float(special.gammainccinv(n, min(1e-10 / l, 0.5)))

    def tail(z):
        return -math.expm1(l * math.log1p(-special.gammaincc(n, z))) if z > 0 else 1.0

    val, err, info = integrate.quad(tail, 0.0, z_max, epsabs=0.0, epsrel=1e-10, limit=500,
                                    full_output=True)[:3]
    if err > 1e-6 * abs(val):
        raise NumericalError(f"quadrature for gamma(N={n}, L={l}) did not converge: "
                             f"value={val}, error={err}, evaluations={info['neval']}")
    return val / lam


def _alternating_block(users: int, channels: int) -> Fraction:
    """Sum over (k_1..k_users) in [0, channels]^users, not all zero, of
    prod C(channels, k_i) (-1)^(1 + sum k) / sum k, grouped by total ``sum k``."""
    row = [math.comb(channels, k) for k in range(channels + 1)]
    poly = [1]
    for _ in range(users):
        poly = np.convolve(np.array(poly, dtype=object), np.array(row, dtype=object)).tolist()
    return sum((Fraction((-1) ** (1 + k) * c, k) for k, c in enumerate(poly) if k > 0), Fraction(0))


@lru_cache(maxsize=None)
def v_factor_exact(l1: int, n: int) -> Fraction:
    """Normalized expected per-user best AP gain under sequential claiming, as a rational."""
    if n < 1 or l1 < n:
        raise DomainError(f"need 1 <= N <= L1, got N={n}, L1={l1}")
    total = sum((_alternating_block(n - m, l1 - m) for m in range(n)), Fraction(0))
    return total / n


def v_factor_mc(l1: int, n: int, samples: int = V_MC_SAMPLES, rng: np.random.Generator | None = None,
                scheme: str = "mixture", chunk: int = 100_000) -> tuple[float, float]:
    """Monte Carlo estimate and standard error of the V factor.

    ``mixture`` averages, over m = 0..N-1, the maximum of a fresh
    ``(N - m) x (L1 - m)`` block of unit exponentials, the distribution whose
    moments the alternating sums encode. ``sequential`` lets user k take the
    best of the channels left by users before it (each user owns its own
    gains), which gives a smaller value for N >= 2.
    """
    if n < 1 or l1 < n:
        raise DomainError(f"need 1 <= N <= L1, got N={n}, L1={l1}")
    if scheme not in ("mixture", "sequential"):
        raise DomainError(f"unknown scheme {scheme!r}")
    rng = rng if rng is not None else make_rng(_V_MC_SEED)
    s1 = s2 = 0.0
    done = 0
    while done < samples:
        k = min(chunk, samples - done)
        acc = np.zeros(k)
        if scheme == "mixture":
            for m in range(n):
                acc += rng.exponential(size=(k, (n - m) * (l1 - m))).max(axis=1)
        else:
            gains = rng.exponential(size=(k, n, l1))
            free = np.ones((k, l1), dtype=bool)
            rows = np.arange(k)
            for i in range(n):
                masked = np.where(free, gains[:, i, :], -np.inf)
                pick = masked.argmax(axis=1)
                acc += masked[rows, pick]
                free[rows, pick] = False
        acc /= n
        s1 += acc.sum()
        s2 += np.square(acc).sum()
        done += k
    mean = s1 / samples
    var = max(s2 / samples - mean**2, 0.0) * samples / max(samples - 1, 1)
    return mean, math.sqrt(var / samples)


@lru_cache(maxsize=None)
def v_factor(l1: int, n: int) -> float:
    """V(L1, N); exact rational evaluation up to ``V_EXACT_CAP`` channels, seeded Monte Carlo beyond."""
    if l1 <= V_EXACT_CAP:
        return float(v_factor_exact(l1, n))
    return v_factor_mc(l1, n)[0]


def app1_sum(n: int, l: int, lam: float = 1.0, start: int = 0) -> float:
    """``sum_{k=start}^{N-1} 1 / (lam N (N - k)(L - 1 - k))``."""
    if l <= n:
        raise DomainError(f"APP1 needs L >= N + 1, got N={n}, L={l}")
    return sum(1.0 / (lam * n * (n - k) * (l - 1 - k)) for k in range(start, n))


def expected_power_app1(n: int, l: int, lam: float = 1.0, p_bar: float = 10.0, start: int = 0) -> float:
    """Expected deception power per user when users talk on their quietest jammer channel.

    ``start=1`` evaluates the variant whose sum skips the first term.
    """
    _check_counts(n, l, lam)
    s = app1_sum(n, l, lam, start)
    return p_bar * s / (s + gamma(n, l, lam))


def expected_power_app2(n: int, l: int, lam: float = 1.0, p_bar: float = 10.0) -> float:
    """Expected deception power per user when users talk on their best AP channel."""
    _check_counts(n, l, lam)
    if l < 2:
        raise DomainError("APP2 needs L >= 2")
    return p_bar / (1.0 + lam * gamma(n, l, lam))


def etrp_app1(n, l, lam=1.0, p_bar=10.0, kappa2=1.0, start=0) -> float:
    g = gamma(n, l, lam)
    s = app1_sum(n, l, lam, start)
    return n * p_bar * g / (s + g) * kappa2 / lam


def etrp_app2(n, l, lam=1.0, p_bar=10.0, kappa2=1.0) -> float:
    lg = lam * gamma(n, l, lam)
    return lg / (1.0 + lg) * p_bar * n * v_factor(l - 1, n) * kappa2 / lam


def c_top(n, l, lam=1.0, p_bar=10.0, kappa2=1.0) -> float:
    return p_bar * n * v_factor(l, n) * kappa2 / lam


def ratio_app1(n: int, l: int, lam: float = 1.0, start: int = 0) -> float:
    g = gamma(n, l, lam)
    return g / (app1_sum(n, l, lam, start) + g) / v_factor(l, n)


def ratio_app2(n: int, l: int, lam: float = 1.0) -> float:
    if l - 1 < n:
        raise DomainError(f"APP2 ratio needs L - 1 >= N, got N={n}, L={l}")
    lg = lam * gamma(n, l, lam)
    return lg * v_factor(l - 1, n) / ((lg + 1.0) * v_factor(l, n))


@dataclass(frozen=True)
class BoundSet:
    n: int
    l: int
    p_bar: float
    gamma: float
    v_factor: float
    ep_app1: float
    ep_app2: float
    c1: float
    c2: float
    c_top: float
    ratio_app1: float
    ratio_app2: float

    @property
    def min_rho_fraction_app1(self) -> float:
        return self.ep_app1 / self.p_bar

    @property
    def min_rho_fraction_app2(self) -> float:
        return self.ep_app2 / self.p_bar


def bound_set(n: int, l: int, lam: float = 1.0, p_bar: float = 10.0, kappa2: float = 1.0) -> BoundSet:
    """All bounds at one grid point; entries undefined at (N, L) are NaN.

    APP1 needs L > N, the APP2 ratio needs L - 1 >= N.
    """
    nan = float("nan")
    app1_ok = l > n
    app2_ok = l - 1 >= n
    return BoundSet(
        n=n, l=l, p_bar=p_bar,
        gamma=gamma(n, l, lam),
        v_factor=v_factor(l, n) if l >= n else nan,
        ep_app1=expected_power_app1(n, l, lam, p_bar) if app1_ok else nan,
        ep_app2=expected_power_app2(n, l, lam, p_bar),
        c1=etrp_app1(n, l, lam, p_bar, kappa2) if app1_ok else nan,
        c2=etrp_app2(n, l, lam, p_bar, kappa2) if app2_ok else nan,
        c_top=c_top(n, l, lam, p_bar, kappa2) if l >= n else nan,
        ratio_app1=ratio_app1(n, l, lam) if app1_ok else nan,
        ratio_app2=ratio_app2(n, l, lam) if app2_ok else nan,
    )


@dataclass(frozen=True)
class Concordance:
    """Monte Carlo behaviour of the linearized allocation under one channel rule."""

    draws: int
    ratio_mean: float
    ratio_se: float
    power_mean: float
    power_se: float
    success_rate: float


def _claim_batch(score: np.ndarray, victim: np.ndarray, best_high: bool) -> np.ndarray:
    draws, n, L = score.shape
    rows = np.arange(draws)
    free = np.ones((draws, L), dtype=bool)
    free[rows, victim] = False
    comm = np.empty((draws, n), dtype=int)
    for i in range(n):
        s = score[:, i, :] if best_high else -score[:, i, :]
        comm[:, i] = np.where(free, s, -np.inf).argmax(axis=1)
        free[rows, comm[:, i]] = False
    return comm


def _modified_batch(w, hp2, rhs, rho):
    """Row-wise linearized solve with bound pinning, via the rank-one closed form."""
    fixed = np.full(w.shape, np.nan)
    free = np.ones(w.shape, dtype=bool)
    p = None
    for _ in range(w.shape[1] + 1):
        wf = np.where(free, w, 0.0)
        r = rhs - np.sum(np.where(free, 0.0, w * np.nan_to_num(fixed)), axis=1, keepdims=True)
        sol = (r - np.sum(wf * r / hp2, axis=1, keepdims=True)
               / (1.0 + np.sum(wf / hp2, axis=1, keepdims=True))) / hp2
        p = np.where(free, sol, fixed)
        low, high = free & (p < 0), free & (p > rho)
        if not (low.any() or high.any()):
            break
        fixed[low] = 0.0
        fixed[high] = rho
        free = np.isnan(fixed)
    return np.clip(p, 0.0, rho)


def modified_concordance(cfg: ScenarioConfig, rule: str, draws: int,
                         rng: np.random.Generator, chunk: int = 20_000) -> Concordance:
    """Replay the linearized allocation against the reactive jammer over random draws.

    Victim: largest summed jammer gain. Communication channels: claimed in
    user order by largest AP gain (``app2``) or smallest jammer gain
    (``app1``). Powers: the linearized solution with the strict-dominance
    slack, clamped to ``[0, rho]``. Per-draw TRP is divided by the
    jammer-free optimum of that draw.
    """
    if rule not in ("app1", "app2"):
        raise DomainError(f"unknown channel rule {rule!r}")
    n, L = cfg.n_users, cfg.n_channels
    if L - 1 < n:
        raise DomainError("need a distinct communication channel per user")
    scale = 1.0 / cfg.lambda_rate
    ratios, powers, hits = [], [], 0
    done = 0
    while done < draws:
        k = min(chunk, draws - done)
        g_c = rng.exponential(scale, size=(k, n, L))
        g_j = rng.exponential(scale, size=(k, n, L))
        rows = np.arange(k)[:, None]
        users = np.arange(n)[None, :]
        v = g_j.sum(axis=1).argmax(axis=1)
        comm = _claim_batch(g_c if rule == "app2" else g_j, v, rule == "app2")
        w = g_j[rows, users, v[:, None]]
        hp2 = g_j[rows, users, comm]
        p = _modified_batch(w, hp2, cfg.p_bar * hp2 + DELTA, cfg.rho)
        amp = np.sqrt(p)
        sensed = np.zeros((k, L))
        sensed[rows, comm] = (cfg.p_bar - p) * hp2
        hj_v = np.sqrt(w)
        sensed[np.arange(k), v] = np.sum(amp * hj_v, axis=1) ** 2
        jammed = sensed.argmax(axis=1)
        x = comm != jammed[:, None]
        trp = np.sum((cfg.p_bar - p) * g_c[rows, users, comm] * x, axis=1)
        top = cfg.p_bar * g_c.max(axis=2).sum(axis=1)
        ratios.append(trp / top)
        powers.append(p.mean(axis=1))
        hits += int(np.sum(jammed == v))
        done += k
    ratios = np.concatenate(ratios)
    powers = np.concatenate(powers)
    return Concordance(draws, float(ratios.mean()), float(ratios.std(ddof=1) / math.sqrt(draws)),
                       float(powers.mean()), float(powers.std(ddof=1) / math.sqrt(draws)), hits / draws)
