"""
品質検証モジュール
ウォーターマーク付き分布 p̂ と元の分布 p の間のRényi / KL / TV などのダイバージェンスと、
Rényiダイバージェンスの上界 min{δ, αδ²/8} の検証
"""

import math

import numpy as np
from scipy.special import logsumexp

from errors import DomainError, ParameterError
from synth_lm import PROB_FLOOR
from vocab_partition import green_size_for, sample_green_list
from watermarker import watermarked_probs

DEFAULT_ALPHAS = (0.5, 1.0, 2.0, 10.0, math.inf)
DEFAULT_TRIALS = 10_000
# 数値誤差の許容幅（上界判定用）
BOUND_TOL = 1e-12


def _prepare(p, q):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ParameterError(f"分布の長さが不一致: {p.shape} vs {q.shape}")
    support = p > 0
    if np.any(support & (q <= 0)):
        raise DomainError("pが正の位置でqが0（サポート条件違反）")
    log_p = np.log(np.maximum(p[support], PROB_FLOOR))
    log_q = np.log(np.maximum(q[support], PROB_FLOOR))
    return p[support], log_p, log_q


def renyi_divergence(p, q, alpha):
    """D_α(p‖q) = (1/(α−1))·log Σ_v p^α q^{1−α}

    α=1 はKL、α=inf は max-divergence。
    """
    if not (alpha > 0):
        raise ParameterError(f"alphaは正: {alpha}")
    p_s, log_p, log_q = _prepare(p, q)
    if math.isinf(alpha):
        value = float(np.max(log_p - log_q))
    elif alpha == 1.0:
        value = float(np.dot(p_s, log_p - log_q))
    else:
        value = float(logsumexp(alpha * log_p + (1.0 - alpha) * log_q) / (alpha - 1.0))
    return max(value, 0.0)


def kl_divergence(p, q):
    return renyi_divergence(p, q, 1.0)


def max_divergence(p, q):
    return renyi_divergence(p, q, math.inf)


def total_variation(p, q):
    """½‖p−q‖₁"""
    return 0.5 * float(np.abs(np.asarray(p, dtype=np.float64) - np.asarray(q, dtype=np.float64)).sum())


def hellinger_distance(p, q):
    """H² = 1 − Σ√(pq) = 1 − exp(−D_{1/2}/2)"""
    return math.sqrt(max(-math.expm1(-renyi_divergence(p, q, 0.5) / 2.0), 0.0))


def chi_square_divergence(p, q):
    """χ²(p‖q) = exp(D_2) − 1"""
    return math.expm1(renyi_divergence(p, q, 2.0))


def quality_bound(delta, alpha):
    """min{δ, αδ²/8}（α=inf ならδ）"""
    if math.isinf(alpha):
        return float(delta)
    return min(float(delta), alpha * delta * delta / 8.0)


def alpha_label(alpha):
    return 'inf' if math.isinf(alpha) else repr(float(alpha))


def parse_alphas(text):
    """'0.5,1,2,10,inf' → (0.5, 1.0, 2.0, 10.0, inf)"""
    alphas = []
    for item in text.split(','):
        item = item.strip().lower()
        if not item:
            continue
        try:
            value = math.inf if item in ('inf', 'infinity', '∞') else float(item)
        except ValueError:
            raise ParameterError(f"αが数値ではない: {item}")
        if not (value > 0):
            raise ParameterError(f"αは正: {value}")
        alphas.append(value)
    if not alphas:
        raise ParameterError("αのリストが空")
    return tuple(alphas)


def verify_quality_bound(p, green, delta, alpha_grid=DEFAULT_ALPHAS, horizon=None):
    """p̂ = softmax(log p + δ1_G) について双方向のD_αが上界以下かを検証

    Returns:
        dict: α毎の前向き/逆向きダイバージェンス・上界・余裕、TV・Pinsker・Hellinger・χ²・単調性の判定
    """
    p = np.asarray(p, dtype=np.float64)
    p_hat = watermarked_probs(p, green, delta)

    per_alpha = []
    forward_prev = reverse_prev = -math.inf
    monotone = True
    for alpha in sorted(alpha_grid):
        forward = renyi_divergence(p_hat, p, alpha)
        reverse = renyi_divergence(p, p_hat, alpha)
        bound = quality_bound(delta, alpha)
        worst = max(forward, reverse)
        # D_αはαについて非減少
        if forward < forward_prev - 1e-9 or reverse < reverse_prev - 1e-9:
            monotone = False
        forward_prev, reverse_prev = forward, reverse
        entry = {
            'alpha': alpha_label(alpha),
            'forward': forward,
            'reverse': reverse,
            'bound': bound,
            'margin': bound - worst,
            'pass': worst <= bound + BOUND_TOL,
        }
        if horizon is not None:
            entry['composition_bound'] = horizon * bound
        per_alpha.append(entry)

    tv = total_variation(p_hat, p)
    tv_bound = min(math.sqrt(delta / 2.0), delta / 4.0)
    kl = renyi_divergence(p_hat, p, 1.0)
    tv_pass = tv <= tv_bound + BOUND_TOL
    pinsker_pass = tv * tv <= kl / 2.0 + BOUND_TOL

    # H と χ² はそれぞれ D_{1/2}, D_2 の単調変換なので上界もそこから従う
    hellinger = max(hellinger_distance(p_hat, p), hellinger_distance(p, p_hat))
    hellinger_bound = math.sqrt(-math.expm1(-quality_bound(delta, 0.5) / 2.0))
    chi_square = max(chi_square_divergence(p_hat, p), chi_square_divergence(p, p_hat))
    chi_square_bound = math.expm1(quality_bound(delta, 2.0))
    f_pass = (hellinger ** 2 <= hellinger_bound ** 2 + BOUND_TOL
              and chi_square <= chi_square_bound * (1.0 + BOUND_TOL) + BOUND_TOL)

    return {
        'delta': float(delta),
        'per_alpha': per_alpha,
        'tv': tv,
        'tv_bound': tv_bound,
        'tv_pass': tv_pass,
        'pinsker_pass': pinsker_pass,
        'hellinger': hellinger,
        'hellinger_bound': hellinger_bound,
        'chi_square': chi_square,
        'chi_square_bound': chi_square_bound,
        'f_divergence_pass': f_pass,
        'monotone': monotone,
        'pass': all(e['pass'] for e in per_alpha) and tv_pass and pinsker_pass and f_pass,
    }


def random_distribution(vocab_size, rng):
    """ランダムな集中度のDirichlet分布（0は床値にして正規化）"""
    concentration = 10.0 ** rng.uniform(-1.5, 1.0)
    p = rng.dirichlet(np.full(vocab_size, concentration))
    p = np.maximum(p, PROB_FLOOR)
    return p / p.sum()


def run_quality_check(delta, gamma=0.5, vocab_size=100, trials=DEFAULT_TRIALS,
                      alphas=DEFAULT_ALPHAS, seed=0, horizon=None):
    """ランダムな (p, G) で上界をまとめて検証し、違反数と最悪余裕を集計"""
    if trials < 1:
        raise ParameterError(f"trialsは1以上: {trials}")
    if delta < 0:
        raise ParameterError(f"deltaは非負: {delta}")
    green_size = green_size_for(gamma, vocab_size)
    if green_size < 1:
        raise ParameterError(f"⌊γN⌋が0（gamma={gamma}, N={vocab_size}）")

    rng = np.random.default_rng(seed)
    labels = [alpha_label(a) for a in sorted(alphas)]
    violations = {label: 0 for label in labels}
    worst_margin = {label: math.inf for label in labels}
    tv_violations = pinsker_violations = monotone_violations = f_violations = 0
    worst_tv_margin = math.inf
    max_hellinger = max_chi_square = 0.0

    for _ in range(trials):
        p = random_distribution(vocab_size, rng)
        green = sample_green_list(vocab_size, green_size, rng)
        result = verify_quality_bound(p, green, delta, alphas, horizon=horizon)
        for entry in result['per_alpha']:
            label = entry['alpha']
            if not entry['pass']:
                violations[label] += 1
            worst_margin[label] = min(worst_margin[label], entry['margin'])
        tv_violations += int(not result['tv_pass'])
        pinsker_violations += int(not result['pinsker_pass'])
        monotone_violations += int(not result['monotone'])
        worst_tv_margin = min(worst_tv_margin, result['tv_bound'] - result['tv'])
        f_violations += int(not result['f_divergence_pass'])
        max_hellinger = max(max_hellinger, result['hellinger'])
        max_chi_square = max(max_chi_square, result['chi_square'])

    report = {
        'delta': float(delta),
        'gamma': float(gamma),
        'vocab_size': int(vocab_size),
        'trials': int(trials),
        'seed': int(seed),
        'alphas': labels,
        'bounds': {alpha_label(a): quality_bound(delta, a) for a in sorted(alphas)},
        'violations': violations,
        'worst_margin': worst_margin,
        'tv_violations': tv_violations,
        'worst_tv_margin': worst_tv_margin,
        'pinsker_violations': pinsker_violations,
        'monotonicity_violations': monotone_violations,
        'max_hellinger': max_hellinger,
        'hellinger_bound': math.sqrt(-math.expm1(-quality_bound(delta, 0.5) / 2.0)),
        'max_chi_square': max_chi_square,
        'chi_square_bound': math.expm1(quality_bound(delta, 2.0)),
        'f_divergence_violations': f_violations,
    }
    if horizon is not None:
        report['horizon'] = int(horizon)
        report['composition_bounds'] = {alpha_label(a): horizon * quality_bound(delta, a)
                                        for a in sorted(alphas)}
    report['pass'] = (sum(violations.values()) == 0 and tv_violations == 0
                      and pinsker_violations == 0 and monotone_violations == 0 and f_violations == 0)
    return report
