"""
ウォーターマーク検出モジュール
グリーントークン数の計数、z統計量、閾値判定、多様性統計、適応的閾値

検出は疑わしい系列と鍵だけを使い、プロンプトやモデルは不要。
"""

import json
import math
from dataclasses import dataclass, asdict

import numpy as np

from certificates import certified_edit_budget, scheme_penalty
from errors import ParameterError, UndefinedStatisticError, UsageError
from vocab_partition import Scheme, bigram_green_list, partition

# ===== 検出パラメータ =====
DEFAULT_TAU = 6.0
# これ未満の語彙数では γ の代わりに ⌊γN⌋/N を使う
EFFECTIVE_GAMMA_LIMIT = 10_000


@dataclass
class DiversityStats:
    c_max: int
    v: float
    n: int

    def to_dict(self):
        return asdict(self)


@dataclass
class DetectionReport:
    n: int
    green_count: int
    z: float
    tau: float
    decision: int
    scheme: str
    stats: DiversityStats
    certified_eta: int = None

    def to_dict(self):
        return asdict(self)


def _as_tokens(seq, vocab_size):
    arr = np.asarray(list(seq), dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= vocab_size):
        bad = int(arr[(arr < 0) | (arr >= vocab_size)][0])
        raise ParameterError(f"トークンID範囲外: {bad} (N={vocab_size})")
    return arr


def count_green(seq, green):
    """Σ_t 1(y_t ∈ G)"""
    arr = _as_tokens(seq, green.vocab_size)
    return int(green.mask[arr].sum())


def z_score(green_count, n, gamma):
    """(|y|_G − γn)/√(nγ(1−γ))"""
    if n < 1:
        raise UndefinedStatisticError("空系列のzは定義できない")
    if not (0.0 < gamma < 1.0):
        raise ParameterError(f"gammaは(0,1): {gamma}")
    return (green_count - gamma * n) / math.sqrt(n * gamma * (1.0 - gamma))


def effective_gamma(key):
    if key.vocab_size < EFFECTIVE_GAMMA_LIMIT:
        return key.green_size / key.vocab_size
    return key.gamma


def diversity_stats(seq):
    """C_max = 最大出現回数、V = (1/n)Σ_i (出現回数)²"""
    seq = list(seq)
    if not seq:
        raise UndefinedStatisticError("空系列の多様性統計は定義できない")
    _, counts = np.unique(np.asarray(seq, dtype=np.int64), return_counts=True)
    n = len(seq)
    return DiversityStats(c_max=int(counts.max()), v=float(np.dot(counts, counts)) / n, n=n)


def adaptive_threshold(stats, gamma, alpha):
    """P[z ≥ τ] ≤ α（ランダムなGについて）を保証する閾値

    τ = √(64·V·log(9/α)/(γ(1−γ))) + C_max·log(9/α)/√(nγ(1−γ))
    """
    if not (0.0 < alpha < 1.0):
        raise ParameterError(f"alphaは(0,1): {alpha}")
    log_term = math.log(9.0 / alpha)
    var = gamma * (1.0 - gamma)
    return (math.sqrt(64.0 * stats.v * log_term / var)
            + stats.c_max * log_term / math.sqrt(stats.n * var))


def robust_adaptive_threshold(stats, gamma, alpha, eta, scheme=Scheme.FIXED_SPLIT):
    """η編集以内の改変を許す攻撃者に対しても誤検出率αを保つ閾値"""
    if eta == 0:
        return adaptive_threshold(stats, gamma, alpha)
    return adaptive_threshold(stats, gamma, alpha) + scheme_penalty(stats.n, gamma, eta, scheme)


def _resolve_tau(stats, gamma, tau, alpha, eta, scheme):
    if eta:
        if alpha is None:
            raise UsageError("etaを指定するときはalphaも必要（頑健な適応的閾値）")
        return robust_adaptive_threshold(stats, gamma, alpha, eta, scheme)
    if alpha is not None:
        return adaptive_threshold(stats, gamma, alpha)
    return float(tau)


def _report(n, green_count, gamma, tau, scheme, stats):
    z = z_score(green_count, n, gamma)
    cert = certified_edit_budget(z, n, gamma, tau, scheme)
    return DetectionReport(
        n=int(n),
        green_count=int(green_count),
        z=float(z),
        tau=float(tau),
        decision=int(z > tau),
        scheme=scheme.value,
        stats=stats,
        certified_eta=cert.certified_eta,
    )


def detect(seq, key, tau=DEFAULT_TAU, alpha=None, eta=0):
    """固定分割スキームの検出。alpha指定時は適応的閾値、さらにeta指定時はη編集に頑健な閾値を使う"""
    if key.scheme is not Scheme.FIXED_SPLIT:
        raise UsageError(f"detectはfixed_split専用（scheme={key.scheme.value}）")
    seq = list(seq)
    if not seq:
        raise UndefinedStatisticError("空系列は検出できない")
    green_count = count_green(seq, partition(key))
    gamma = effective_gamma(key)
    stats = diversity_stats(seq)
    return _report(len(seq), green_count, gamma, _resolve_tau(stats, gamma, tau, alpha, eta, key.scheme),
                   key.scheme, stats)


def bigram_green_count(seq, key):
    """Σ_{t=2}^m 1(u_t ∈ Green(u_{t−1}))"""
    arr = _as_tokens(seq, key.vocab_size)
    return sum(1 for prev, tok in zip(arr[:-1], arr[1:]) if tok in bigram_green_list(key, int(prev)))


def detect_bigram(seq, key, tau=DEFAULT_TAU, alpha=None, eta=0):
    """bigramハッシュ方式の検出。t=2..m の m−1 位置を数える"""
    if key.scheme is not Scheme.BIGRAM_HASH:
        raise UsageError(f"detect_bigramはbigram_hash専用（scheme={key.scheme.value}）")
    seq = list(seq)
    if len(seq) < 2:
        raise UndefinedStatisticError(f"bigram検出には2トークン以上必要: m={len(seq)}")
    green_count = bigram_green_count(seq, key)
    gamma = effective_gamma(key)
    # 多様性統計も数えた位置（2..m）について取る
    stats = diversity_stats(seq[1:])
    return _report(len(seq) - 1, green_count, gamma, _resolve_tau(stats, gamma, tau, alpha, eta, key.scheme),
                   key.scheme, stats)


def detect_sequence(seq, key, tau=DEFAULT_TAU, alpha=None, eta=0):
    if key.scheme is Scheme.FIXED_SPLIT:
        return detect(seq, key, tau=tau, alpha=alpha, eta=eta)
    return detect_bigram(seq, key, tau=tau, alpha=alpha, eta=eta)


def save_report(report, path):
    with open(path, 'w', encoding='utf-8') as f:
        f.write(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
