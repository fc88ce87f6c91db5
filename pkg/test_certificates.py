"""
certificates.py のユニットテスト
編集ペナルティ・認証編集予算・期待値下界の数値例で検証
"""

import sys
import os
import math
sys.path.insert(0, os.path.dirname(__file__))

from certificates import (
    count_penalty,
    count_penalty_baseline,
    z_penalty,
    z_penalty_baseline,
    scheme_penalty,
    first_branch_limit,
    binding_branch,
    certified_edit_budget,
    closed_form_budget,
    green_prob_boost,
    xi_threshold,
    kappa_from_xi,
    expected_z_lower_bound,
    expected_green_lower_bound,
)
from errors import ParameterError
from vocab_partition import Scheme


def test_count_penalty_values():
    """n=100, γ=0.5, η=10 の数値例"""
    fixed = count_penalty(100, 0.5, 10)
    baseline = count_penalty_baseline(100, 0.5, 10)
    assert abs(fixed - 1.25) < 1e-12, f"固定分割ペナルティ: {fixed}"
    assert abs(baseline - 2.25) < 1e-12, f"bigramペナルティ: {baseline}"
    assert abs(baseline / fixed - 1.8) < 1e-12

    # z単位は √(γ(1−γ)) で割る
    assert abs(z_penalty(100, 0.5, 10) - 2.5) < 1e-12
    assert abs(z_penalty_baseline(100, 0.5, 10) - 4.5) < 1e-12
    assert scheme_penalty(100, 0.5, 10, 'fixed_split') == z_penalty(100, 0.5, 10)
    assert scheme_penalty(100, 0.5, 10, Scheme.BIGRAM_HASH) == z_penalty_baseline(100, 0.5, 10)

    # η=0 はペナルティなし
    assert count_penalty(50, 0.3, 0) == 0.0
    print("✅ count_penalty_values: PASS")


def test_penalty_invalid_args():
    """η ≥ n・γ範囲外はParameterError"""
    for args in [(10, 0.5, 10), (10, 0.5, 11), (0, 0.5, 0), (10, 0.0, 1), (10, 1.0, 1), (10, 0.5, -1)]:
        try:
            count_penalty(*args)
            assert False, f"例外が出ない: {args}"
        except ParameterError:
            pass
    print("✅ penalty_invalid_args: PASS")


def test_penalty_monotone_in_eta():
    """ペナルティはηについて単調増加、bigramは常に固定分割以上"""
    for gamma in (0.1, 0.25, 0.5, 0.9):
        prev = -1.0
        for eta in range(0, 199):
            value = z_penalty(200, gamma, eta)
            assert value >= prev
            assert z_penalty_baseline(200, gamma, eta) >= value
            prev = value
    print("✅ penalty_monotone_in_eta: PASS")


def test_first_branch_limit():
    """第1項が効く範囲: n=100 で 64、bigram は狭い"""
    assert abs(first_branch_limit(100, 0.5) - 64.0) < 1e-9
    assert abs(first_branch_limit(200, 0.5) - 128.0) < 1e-9
    limit = first_branch_limit(200, 0.5, Scheme.BIGRAM_HASH)
    assert 78.0 < limit < 80.0, f"bigramの範囲: {limit}"

    assert binding_branch(200, 0.5, 0) == 'none'
    assert binding_branch(200, 0.5, 22) == 'first'
    assert binding_branch(200, 0.5, 150) == 'second'
    print("✅ first_branch_limit: PASS")


def test_certified_budget_example():
    """z=10, τ=6, n=200, γ=0.5: 固定分割22、bigram12"""
    fixed = certified_edit_budget(10.0, 200, 0.5, 6.0, Scheme.FIXED_SPLIT)
    bigram = certified_edit_budget(10.0, 200, 0.5, 6.0, Scheme.BIGRAM_HASH)
    assert fixed.certified_eta == 22, f"固定分割: {fixed.certified_eta}"
    assert bigram.certified_eta == 12, f"bigram: {bigram.certified_eta}"
    assert fixed.certified_eta / bigram.certified_eta >= 1.75
    assert fixed.branch_used == 'first'
    assert bigram.scheme == 'bigram_hash'

    # 閉形式（整数化前）
    cf_fixed = closed_form_budget(10.0, 200, 0.5, 6.0, Scheme.FIXED_SPLIT)
    cf_bigram = closed_form_budget(10.0, 200, 0.5, 6.0, Scheme.BIGRAM_HASH)
    assert abs(cf_fixed - 22.627) < 1e-3, f"閉形式: {cf_fixed}"
    assert abs(cf_bigram - 12.571) < 1e-3, f"閉形式: {cf_bigram}"
    assert fixed.certified_eta == math.ceil(cf_fixed) - 1
    assert bigram.certified_eta == math.ceil(cf_bigram) - 1

    d = fixed.to_dict()
    assert d['certified_eta'] == 22 and d['n'] == 200
    print(f"  固定分割: η={fixed.certified_eta} (閉形式 {cf_fixed:.3f})")
    print(f"  bigram:   η={bigram.certified_eta} (閉形式 {cf_bigram:.3f})")
    print("✅ certified_budget_example: PASS")


def test_certified_budget_is_maximal():
    """認証予算ηは z − penalty(η) > τ を満たし、η+1 は満たさない"""
    for scheme in (Scheme.FIXED_SPLIT, Scheme.BIGRAM_HASH):
        for z in (6.5, 8.0, 12.0, 20.0):
            for n in (50, 200, 1000):
                cert = certified_edit_budget(z, n, 0.25, 6.0, scheme)
                eta = cert.certified_eta
                assert z - scheme_penalty(n, 0.25, eta, scheme) > 6.0
                if eta + 1 < n:
                    assert z - scheme_penalty(n, 0.25, eta + 1, scheme) <= 6.0
    print("✅ certified_budget_is_maximal: PASS")


def test_certified_budget_below_threshold():
    """z ≤ τ なら予算0"""
    cert = certified_edit_budget(5.0, 200, 0.5, 6.0)
    assert cert.certified_eta == 0
    assert cert.branch_used == 'none'
    assert closed_form_budget(5.0, 200, 0.5, 6.0) == 0.0
    # 閉形式がn以上になる領域は0
    assert closed_form_budget(1000.0, 200, 0.5, 6.0) == 0.0
    print("✅ certified_budget_below_threshold: PASS")


def test_power_bounds():
    """グリーン確率の増幅・期待zとグリーン数の下界"""
    assert abs(green_prob_boost(0.5, 2.0) - 0.8808) < 1e-4
    assert green_prob_boost(0.3, 0.0) == 0.3
    assert green_prob_boost(0.0, 5.0) == 0.0

    z_bound = expected_z_lower_bound(200, 0.5, 2.0, 0.99)
    assert abs(z_bound - 10.66) < 0.01, f"期待zの下界: {z_bound}"

    xi = xi_threshold(0.5, 2.0, 0.9)
    assert abs(xi - 0.0206) < 1e-4, f"ξの上限: {xi}"
    assert abs(kappa_from_xi(0.5, 2.0, xi) - 0.9) < 1e-12
    # N ≥ 49 の一様モデルはξ=1/N でκ=0.9を満たす
    assert 1.0 / 49 <= xi

    assert abs(expected_green_lower_bound(200, 0.5, 2.0, 0.0) - 176.16) < 0.01
    assert abs(expected_green_lower_bound(200, 0.5, 2.0, 0.001) - 175.79) < 0.01
    print("✅ power_bounds: PASS")


def test_power_bounds_invalid():
    """κ・ξ・δの範囲外"""
    for fn, args in [
        (expected_z_lower_bound, (200, 0.5, 2.0, 0.0)),
        (expected_z_lower_bound, (200, 0.5, 2.0, 1.0)),
        (expected_z_lower_bound, (200, 0.5, 2.0, 1.5)),
        (expected_green_lower_bound, (200, 0.5, 2.0, -0.1)),
        (kappa_from_xi, (0.5, 0.0, 0.01)),
        (green_prob_boost, (1.5, 2.0)),
    ]:
        try:
            fn(*args)
            assert False, f"例外が出ない: {fn.__name__}{args}"
        except ParameterError:
            pass
    print("✅ power_bounds_invalid: PASS")


if __name__ == '__main__':
    print("=" * 60)
    print("certificates.py テスト実行")
    print("=" * 60)

    test_count_penalty_values()
    test_penalty_invalid_args()
    test_penalty_monotone_in_eta()
    test_first_branch_limit()
    test_certified_budget_example()
    test_certified_budget_is_maximal()
    test_certified_budget_below_threshold()
    test_power_bounds()
    test_power_bounds_invalid()

    print("\n" + "=" * 60)
    print("全テスト PASS")
    print("=" * 60)
