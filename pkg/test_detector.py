"""
detector.py のユニットテスト
z統計量・多様性統計・適応的閾値・検出の判定
"""

import sys
import os
import json
import math
import tempfile
sys.path.insert(0, os.path.dirname(__file__))

import numpy as np

from certificates import scheme_penalty
from detector import (
    DiversityStats,
    z_score,
    count_green,
    effective_gamma,
    diversity_stats,
    adaptive_threshold,
    robust_adaptive_threshold,
    detect,
    detect_bigram,
    detect_sequence,
    bigram_green_count,
    save_report,
)
from errors import ParameterError, UndefinedStatisticError, UsageError
from synth_lm import uniform_lm
from vocab_partition import GreenList, Scheme, bigram_green_list, keygen, partition, sample_green_list
from watermarker import GenerationConfig, generate


def test_z_score():
    """zの数値例"""
    assert abs(z_score(150, 200, 0.5) - 7.0711) < 1e-4
    assert abs(z_score(0, 100, 0.25) - (-5.7735)) < 1e-4
    assert z_score(100, 200, 0.5) == 0.0

    try:
        z_score(0, 0, 0.5)
        assert False, "n=0で例外が出ない"
    except UndefinedStatisticError:
        pass
    print("✅ z_score: PASS")


def test_count_green():
    """グリーントークン数"""
    green = GreenList.from_members([0, 2], 4)
    assert count_green([0, 1, 2, 3, 2], green) == 3
    assert count_green([], green) == 0
    try:
        count_green([0, 4], green)
        assert False, "範囲外トークンで例外が出ない"
    except ParameterError:
        pass
    print("✅ count_green: PASS")


def test_diversity_stats():
    """C_max と V"""
    stats = diversity_stats([5, 5, 5])
    assert stats.c_max == 3 and stats.v == 3.0 and stats.n == 3

    stats = diversity_stats([1, 1, 2])
    assert stats.c_max == 2
    assert abs(stats.v - 5 / 3) < 1e-12

    stats = diversity_stats(range(10))
    assert stats.c_max == 1 and stats.v == 1.0

    try:
        diversity_stats([])
        assert False, "空系列で例外が出ない"
    except UndefinedStatisticError:
        pass
    print("✅ diversity_stats: PASS")


def test_adaptive_threshold():
    """V=1, C_max=1, γ=0.5, n=200, α=0.01 → 約42.69"""
    tau = adaptive_threshold(DiversityStats(c_max=1, v=1.0, n=200), 0.5, 0.01)
    assert abs(tau - 42.69) < 0.01, f"適応的閾値: {tau}"

    # 繰り返しが多いほど閾値は上がる
    loose = adaptive_threshold(DiversityStats(c_max=10, v=5.0, n=200), 0.5, 0.01)
    assert loose > tau

    for alpha in (0.0, 1.0, -0.5):
        try:
            adaptive_threshold(DiversityStats(1, 1.0, 200), 0.5, alpha)
            assert False, f"alpha={alpha}で例外が出ない"
        except ParameterError:
            pass
    print(f"  τ(α=0.01) = {tau:.3f}")
    print("✅ adaptive_threshold: PASS")


def test_robust_adaptive_threshold():
    """η編集を許す閾値は編集ペナルティ分だけ高い"""
    stats = DiversityStats(c_max=2, v=1.5, n=200)
    base = adaptive_threshold(stats, 0.5, 0.05)
    assert robust_adaptive_threshold(stats, 0.5, 0.05, 0) == base
    robust = robust_adaptive_threshold(stats, 0.5, 0.05, 20, Scheme.BIGRAM_HASH)
    assert abs(robust - (base + scheme_penalty(200, 0.5, 20, Scheme.BIGRAM_HASH))) < 1e-12
    print("✅ robust_adaptive_threshold: PASS")


def test_effective_gamma():
    """小さな語彙では ⌊γN⌋/N"""
    assert effective_gamma(keygen(gamma=0.5, vocab_size=5, entropy_source=0)) == 0.4
    assert effective_gamma(keygen(gamma=0.5, vocab_size=1000, entropy_source=0)) == 0.5
    assert effective_gamma(keygen(gamma=0.3, vocab_size=20000, entropy_source=0)) == 0.3
    print("✅ effective_gamma: PASS")


def test_detect_watermarked():
    """ウォーターマーク付き系列は検出、別の鍵では検出されない"""
    key = keygen(gamma=0.5, delta=2.0, vocab_size=1000, entropy_source=1)
    other = keygen(gamma=0.5, delta=2.0, vocab_size=1000, entropy_source=2)
    seq = generate(uniform_lm(1000), [], key, GenerationConfig(horizon=200, seed=3))

    report = detect(seq, key)
    assert report.decision == 1, f"検出されない: z={report.z}"
    assert report.z > 6.0
    assert report.n == 200
    assert report.green_count == count_green(seq, partition(key))
    assert report.certified_eta > 0

    report_other = detect(seq, other)
    assert report_other.decision == 0, f"別の鍵で検出: z={report_other.z}"
    assert report_other.certified_eta == 0

    # 適応的閾値
    report_alpha = detect(seq, key, alpha=0.01)
    assert abs(report_alpha.tau - adaptive_threshold(diversity_stats(seq), 0.5, 0.01)) < 1e-12
    print(f"  z = {report.z:.3f}, 別の鍵: {report_other.z:.3f}")
    print("✅ detect_watermarked: PASS")


def test_detect_errors():
    """空系列・スキーム不一致"""
    fixed_key = keygen(vocab_size=100, entropy_source=0)
    bigram_key = keygen(vocab_size=100, scheme=Scheme.BIGRAM_HASH, entropy_source=0)
    cases = [
        (lambda: detect([], fixed_key), UndefinedStatisticError),
        (lambda: detect([1, 2], bigram_key), UsageError),
        (lambda: detect_bigram([1], bigram_key), UndefinedStatisticError),
        (lambda: detect_bigram([1, 2], fixed_key), UsageError),
        (lambda: detect([1, 200], fixed_key), ParameterError),
    ]
    for fn, exc in cases:
        try:
            fn()
            assert False, f"{exc.__name__}が出ない"
        except exc:
            pass
    print("✅ detect_errors: PASS")


def test_detect_bigram():
    """bigramハッシュはt=2..mを数える"""
    key = keygen(gamma=0.5, delta=2.0, vocab_size=500, scheme=Scheme.BIGRAM_HASH, entropy_source=4)
    seq = generate(uniform_lm(500), [], key, GenerationConfig(horizon=200, seed=5))

    expected = sum(1 for t in range(1, len(seq)) if seq[t] in bigram_green_list(key, seq[t - 1]))
    assert bigram_green_count(seq, key) == expected

    report = detect_sequence(seq, key)
    assert report.scheme == 'bigram_hash'
    assert report.n == 199
    assert report.stats.n == 199
    assert report.decision == 1, f"検出されない: z={report.z}"
    print("✅ detect_bigram: PASS")


def test_null_z_distribution():
    """透かしなし系列のzはほぼ標準正規"""
    rng = np.random.default_rng(0)
    key = keygen(gamma=0.25, vocab_size=1000, entropy_source=7)
    z_values = [detect(rng.integers(0, 1000, size=200).tolist(), key).z for _ in range(400)]
    assert abs(np.mean(z_values)) < 0.2
    assert 0.8 < np.std(z_values) < 1.2
    assert max(z_values) < 6.0
    print("✅ null_z_distribution: PASS")


def test_save_report():
    """検出レポートのJSON保存"""
    key = keygen(vocab_size=100, entropy_source=0)
    report = detect([1, 2, 3, 4, 5], key)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'report.json')
        save_report(report, path)
        with open(path, 'r', encoding='utf-8') as f:
            text = f.read()
    data = json.loads(text)
    assert data['n'] == 5
    assert data['stats']['c_max'] == 1
    assert text.endswith("}\n")
    assert math.isclose(data['z'], report.z)
    print("✅ save_report: PASS")


def test_z_score_strictly_increasing():
    """n, γ を固定すると z はグリーン数について狭義単調増加"""
    for n in (1, 10, 200):
        for gamma in (0.25, 0.5, 0.9):
            z = [z_score(k, n, gamma) for k in range(n + 1)]
            assert all(b > a for a, b in zip(z, z[1:])), f"n={n}, γ={gamma}"
    print("✅ z_score_strictly_increasing: PASS")


def test_null_mean_over_partitions():
    """固定した系列で G をランダムに選ぶと、グリーン数の平均は ⌊γN⌋·n/N"""
    rng = np.random.default_rng(11)
    seq = rng.integers(0, 100, size=50).tolist()
    counts = np.array([count_green(seq, sample_green_list(100, 30, rng)) for _ in range(10_000)])
    se = counts.std(ddof=1) / math.sqrt(counts.size)
    assert abs(counts.mean() - 15.0) < 4 * se, f"平均 {counts.mean():.3f}, SE {se:.4f}"
    z = (counts - 0.3 * 50) / math.sqrt(50 * 0.3 * 0.7)
    assert abs(z.mean()) < 4 * z.std(ddof=1) / math.sqrt(z.size)
    print(f"  グリーン数の平均: {counts.mean():.3f}（期待値 15）")
    print("✅ null_mean_over_partitions: PASS")


def test_adaptive_threshold_type1_tail():
    """固定した系列で P[z ≥ τ(α)] ≤ α（ランダムな G について）"""
    rng = np.random.default_rng(12)
    diverse = rng.integers(0, 1000, size=200).tolist()
    repetitive = rng.integers(0, 5, size=200).tolist()
    for seq in (diverse, repetitive):
        stats = diversity_stats(seq)
        z = np.array([z_score(count_green(seq, sample_green_list(1000, 500, rng)), 200, 0.5)
                      for _ in range(10_000)])
        for alpha in (0.1, 0.01):
            tail = float(np.mean(z >= adaptive_threshold(stats, 0.5, alpha)))
            assert tail <= alpha, f"V={stats.v:.2f}, α={alpha}: {tail}"
    print("✅ adaptive_threshold_type1_tail: PASS")


def test_detect_with_robust_threshold():
    """alphaとetaを指定すると、η編集に頑健な閾値で判定する"""
    for scheme in (Scheme.FIXED_SPLIT, Scheme.BIGRAM_HASH):
        key = keygen(gamma=0.5, delta=2.0, vocab_size=1000, scheme=scheme, entropy_source=13)
        seq = generate(uniform_lm(1000), [], key, GenerationConfig(horizon=200, seed=13))
        plain = detect_sequence(seq, key, alpha=0.01)
        robust = detect_sequence(seq, key, alpha=0.01, eta=10)
        expected = robust_adaptive_threshold(robust.stats, effective_gamma(key), 0.01, 10, scheme)
        assert abs(robust.tau - expected) < 1e-12
        assert robust.tau > plain.tau
        assert robust.z == plain.z
        try:
            detect_sequence(seq, key, eta=10)
            assert False, "alphaなしのetaで例外が出ない"
        except UsageError:
            pass
        try:
            detect_sequence(seq, key, alpha=0.01, eta=robust.n)
            assert False, "η ≥ n で例外が出ない"
        except ParameterError:
            pass
    print("✅ detect_with_robust_threshold: PASS")


if __name__ == '__main__':
    print("=" * 60)
    print("detector.py テスト実行")
    print("=" * 60)

    test_z_score()
    test_count_green()
    test_diversity_stats()
    test_adaptive_threshold()
    test_robust_adaptive_threshold()
    test_effective_gamma()
    test_detect_watermarked()
    test_detect_errors()
    test_detect_bigram()
    test_null_z_distribution()
    test_save_report()
    test_z_score_strictly_increasing()
    test_null_mean_over_partitions()
    test_adaptive_threshold_type1_tail()
    test_detect_with_robust_threshold()

    print("\n" + "=" * 60)
    print("全テスト PASS")
    print("=" * 60)
