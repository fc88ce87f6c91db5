"""
頑健性・検出力の閉形式バウンド
編集ペナルティ、認証編集予算、固定分割とbigramハッシュの比較、期待zの下界
"""

import math
from dataclasses import dataclass, asdict

from errors import ParameterError
from vocab_partition import Scheme, parse_scheme

# 第1項 / 第2項の係数（固定分割は1±γ/2、bigramハッシュは2±γ/2）
FIXED_LEAD = 1.0
BIGRAM_LEAD = 2.0


def _check_penalty_args(n, gamma, eta):
    if n < 1:
        raise ParameterError(f"nは1以上: {n}")
    if not (0.0 < gamma < 1.0):
        raise ParameterError(f"gammaは(0,1): {gamma}")
    if eta < 0 or eta >= n:
        raise ParameterError(f"etaは0 ≤ η < n: η={eta}, n={n}")


def _penalty_terms(n, gamma, eta, lead):
    first = (lead + gamma / 2) * eta / math.sqrt(n)
    second = (lead - gamma / 2) * eta / math.sqrt(n - eta)
    return first, second


def count_penalty(n, gamma, eta):
    """max{(1+γ/2)η/√n, (1−γ/2)η/√(n−η)}（(|y|_G−γn)/√n のスケール）"""
    _check_penalty_args(n, gamma, eta)
    return max(_penalty_terms(n, gamma, eta, FIXED_LEAD))


def count_penalty_baseline(n, gamma, eta):
    """bigramハッシュ版: max{(2+γ/2)η/√n, (2−γ/2)η/√(n−η)}"""
    _check_penalty_args(n, gamma, eta)
    return max(_penalty_terms(n, gamma, eta, BIGRAM_LEAD))


def z_penalty(n, gamma, eta):
    """η編集後のzの低下量の上界（z単位 = count_penalty / √(γ(1−γ))）"""
    return count_penalty(n, gamma, eta) / math.sqrt(gamma * (1.0 - gamma))


def z_penalty_baseline(n, gamma, eta):
    """bigramハッシュ版のzの低下量の上界。nは数えた位置数（m−1）"""
    return count_penalty_baseline(n, gamma, eta) / math.sqrt(gamma * (1.0 - gamma))


def _lead_for(scheme):
    return FIXED_LEAD if parse_scheme(scheme) is Scheme.FIXED_SPLIT else BIGRAM_LEAD


def scheme_penalty(n, gamma, eta, scheme):
    if parse_scheme(scheme) is Scheme.FIXED_SPLIT:
        return z_penalty(n, gamma, eta)
    return z_penalty_baseline(n, gamma, eta)


def first_branch_limit(n, gamma, scheme=Scheme.FIXED_SPLIT):
    """第1項が支配的になるηの上限

    固定分割では 2γn/(1+γ/2)²、bigramハッシュでは 4γn/(2+γ/2)²
    """
    lead = _lead_for(scheme)
    ratio = (lead - gamma / 2) / (lead + gamma / 2)
    return n * (1.0 - ratio * ratio)


def binding_branch(n, gamma, eta, scheme=Scheme.FIXED_SPLIT):
    """maxのどちらの項が効いているか: 'none' / 'first' / 'second'"""
    if eta == 0:
        return 'none'
    _check_penalty_args(n, gamma, eta)
    first, second = _penalty_terms(n, gamma, eta, _lead_for(scheme))
    return 'first' if first >= second else 'second'


@dataclass
class RobustnessCertificate:
    z_observed: float
    tau: float
    certified_eta: int
    scheme: str
    branch_used: str
    n: int
    gamma: float

    def to_dict(self):
        return asdict(self)


def certified_edit_budget(z_y, n, gamma, tau, scheme=Scheme.FIXED_SPLIT):
    """z_y − penalty(η) > τ を満たす最大の整数 η < n（ペナルティはηに単調なので二分探索）"""
    if n < 1:
        raise ParameterError(f"nは1以上: {n}")
    scheme = parse_scheme(scheme)

    def survives(eta):
        return z_y - scheme_penalty(n, gamma, eta, scheme) > tau

    if not survives(0):
        eta = 0
    else:
        lo, hi = 0, n - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if survives(mid):
                lo = mid
            else:
                hi = mid - 1
        eta = lo

    return RobustnessCertificate(
        z_observed=float(z_y),
        tau=float(tau),
        certified_eta=int(eta),
        scheme=scheme.value,
        branch_used=binding_branch(n, gamma, eta, scheme),
        n=int(n),
        gamma=float(gamma),
    )


def closed_form_budget(z_y, n, gamma, tau, scheme=Scheme.FIXED_SPLIT):
    """第1項だけを解いた閉形式 √(nγ(1−γ))(z_y−τ)/(lead+γ/2)

    第1項が支配的でない領域（指示関数が0）では0を返す。整数化はしない。
    """
    if z_y <= tau:
        return 0.0
    lead = _lead_for(scheme)
    eta = math.sqrt(n * gamma * (1.0 - gamma)) * (z_y - tau) / (lead + gamma / 2)
    if eta > first_branch_limit(n, gamma, scheme) or eta >= n:
        return 0.0
    return eta


# ===== 検出力（Type II）側のバウンド =====

def green_prob_boost(p_green, delta):
    """p̂(G) = e^δ p(G)/(1+(e^δ−1)p(G))"""
    if not (0.0 <= p_green <= 1.0):
        raise ParameterError(f"p_greenは[0,1]: {p_green}")
    if delta < 0:
        raise ParameterError(f"deltaは非負: {delta}")
    boost = math.expm1(delta)
    return p_green * (1.0 + boost) / (1.0 + boost * p_green)


def xi_threshold(gamma, delta, kappa):
    """期待zの下界が成り立つξの上限 (1−κ)(e^δ−1)/((1+(e^δ−1)γ)e^δ)"""
    boost = math.expm1(delta)
    return (1.0 - kappa) * boost / ((1.0 + boost * gamma) * math.exp(delta))


def kappa_from_xi(gamma, delta, xi):
    """xi_thresholdの逆: 測定したξから使えるκ（≤0なら下界は無意味）"""
    if delta <= 0:
        raise ParameterError(f"κはδ>0でのみ定義: {delta}")
    boost = math.expm1(delta)
    return 1.0 - xi * (1.0 + boost * gamma) * math.exp(delta) / boost


def expected_z_lower_bound(n, gamma, delta, kappa):
    """E[z_y] ≥ κ(e^δ−1)√(nγ(1−γ))/(1+(e^δ−1)γ)"""
    if not (0.0 < kappa < 1.0):
        raise ParameterError(f"kappaは(0,1): {kappa}")
    boost = math.expm1(delta)
    return kappa * boost * math.sqrt(n * gamma * (1.0 - gamma)) / (1.0 + boost * gamma)


def expected_green_lower_bound(n, gamma, delta, xi):
    """E[|y|_G] ≥ nγe^δ/(1+(e^δ−1)γ) − γ(1−γ)e^δ·nξ"""
    if not (0.0 <= xi <= 1.0):
        raise ParameterError(f"xiは[0,1]: {xi}")
    return n * green_prob_boost(gamma, delta) - gamma * (1.0 - gamma) * math.exp(delta) * n * xi
