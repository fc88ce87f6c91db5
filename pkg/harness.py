"""
実験ハーネス
Type I / Type II / 編集攻撃への頑健性 / パラメータスイープ / 頑健性バウンドの健全性検証を
モンテカルロで実行し、JSON・CSV・Excelのレポートを出力する
"""

import csv
import itertools
import json
import math
import os
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict, fields

import numpy as np
from sklearn import metrics

from attacks import DEFAULT_ATTACK_RATES, edit_distance, edit_neighborhood, parse_mix, random_edit_attack, \
    greenaware_attack, greenaware_bigram_attack, rate_to_eta, run_attack, spoof_attack
from certificates import (certified_edit_budget, expected_green_lower_bound, expected_z_lower_bound,
                          kappa_from_xi, scheme_penalty)
from detector import (DEFAULT_TAU, adaptive_threshold, bigram_green_count, count_green,
                      diversity_stats, effective_gamma, robust_adaptive_threshold, z_score)
from divergence import kl_divergence
from errors import DataError, ParameterError
from synth_lm import entropy_diagnostics, model_from_spec
from token_io import read_corpus
from vocab_partition import (DEFAULT_DELTA, DEFAULT_GAMMA, Scheme, green_list_for, keygen, parse_scheme,
                             partition)
from watermarker import (DEFAULT_HORIZON, GenerationConfig, generate, parse_decoding,
                         sample_uniform_watermarked, sample_uniform_watermarked_bigram, watermarked_probs)

__version__ = '0.1.0'

# ===== デフォルト実験パラメータ =====
DEFAULT_SEQUENCES = 500         # 1アームあたりの系列数
DEFAULT_NULL_KEYS = 20          # Type I で使うランダム鍵の数
DEFAULT_ALPHAS = (0.1, 0.01)
DEFAULT_FPR_POINTS = (0.01, 0.1)
DEFAULT_ENTROPY_ROLLOUTS = 20
DEFAULT_SOUNDNESS_TRIALS = 10_000
EXPERIMENTS = ('type1', 'type2', 'robustness', 'sweep', 'soundness', 'exhaustive')
ATTACK_KINDS = ('random', 'swap', 'greenaware')
# V がこの割合×n を超える系列は低多様性として警告
LOW_DIVERSITY_RATIO = 0.5
# バウンド判定の浮動小数許容幅
BOUND_TOL = 1e-9

TRIAL_CSV_COLUMNS = ['trial', 'scheme', 'n', 'green_count', 'z', 'attacked_eta', 'decision']

# 乱数ストリームの識別子
_STREAM_KEY, _STREAM_NULL, _STREAM_WM, _STREAM_ATTACK, _STREAM_ENTROPY = range(5)


@dataclass
class ExperimentConfig:
    experiment: str = 'type2'
    model: str = 'uniform:1000'
    schemes: list = field(default_factory=lambda: ['fixed_split'])
    gamma: float = DEFAULT_GAMMA
    delta: float = DEFAULT_DELTA
    n: int = DEFAULT_HORIZON
    tau: float = DEFAULT_TAU
    alphas: list = field(default_factory=lambda: list(DEFAULT_ALPHAS))
    sequences: int = DEFAULT_SEQUENCES
    null_keys: int = DEFAULT_NULL_KEYS
    null_corpus: list = field(default_factory=list)
    decoding: str = 'multinomial'
    prompt: list = field(default_factory=list)
    attack: dict = field(default_factory=lambda: {
        'kind': 'random', 'mix': 'rep:1', 'rates': list(DEFAULT_ATTACK_RATES)})
    robust_eta: int = 0
    deltas: list = field(default_factory=lambda: [0.5, 1.0, 2.0, 5.0])
    gammas: list = field(default_factory=lambda: [0.25, 0.5])
    trials: int = DEFAULT_SOUNDNESS_TRIALS
    entropy_rollouts: int = DEFAULT_ENTROPY_ROLLOUTS
    seed: int = 0
    workers: int = 1
    output: str = None
    trials_csv: str = None
    excel: str = None
    include_runtime: bool = False

    def to_dict(self):
        return asdict(self)


# ===== 設定ファイル =====

def validate_experiment_config(data):
    """実験設定のバリデーション

    Returns:
        (valid, warnings): 不正なら valid=False、warnings に理由
    """
    warnings = []
    known = {f.name for f in fields(ExperimentConfig)}
    for name in sorted(set(data) - known):
        warnings.append(f"未知の設定項目: {name}")

    experiment = data.get('experiment', 'type2')
    if experiment not in EXPERIMENTS:
        return False, [f"experimentは {', '.join(EXPERIMENTS)} のいずれか: {experiment}"]

    gamma = data.get('gamma', DEFAULT_GAMMA)
    if not isinstance(gamma, (int, float)) or not (0.0 < gamma < 1.0):
        return False, [f"gammaは(0,1): {gamma}"]
    delta = data.get('delta', DEFAULT_DELTA)
    if not isinstance(delta, (int, float)) or delta < 0:
        return False, [f"deltaは非負: {delta}"]
    for name in ('n', 'sequences', 'null_keys', 'trials', 'entropy_rollouts', 'workers'):
        value = data.get(name, 1)
        if not isinstance(value, int) or value < 1:
            return False, [f"{name}は1以上の整数: {value}"]

    schemes = data.get('schemes', ['fixed_split'])
    try:
        parsed = [parse_scheme(s) for s in schemes]
    except ParameterError as e:
        return False, [str(e)]
    if Scheme.BIGRAM_HASH in parsed and data.get('n', DEFAULT_HORIZON) < 2:
        return False, ["bigram_hashにはn≥2が必要"]
    robust_eta = data.get('robust_eta', 0)
    counted = data.get('n', DEFAULT_HORIZON) - int(Scheme.BIGRAM_HASH in parsed)
    if isinstance(robust_eta, bool) or not isinstance(robust_eta, int) or not (0 <= robust_eta < counted):
        return False, [f"robust_etaは 0 ≤ η < 数える位置数({counted}) の整数: {robust_eta}"]

    for a in data.get('alphas', DEFAULT_ALPHAS):
        if not (0.0 < a < 1.0):
            return False, [f"alphasは(0,1): {a}"]

    attack = data.get('attack', {})
    if attack:
        if attack.get('kind', 'random') not in ATTACK_KINDS:
            return False, [f"attack.kindは {', '.join(ATTACK_KINDS)} のいずれか: {attack.get('kind')}"]
        for r in attack.get('rates', DEFAULT_ATTACK_RATES):
            if not (0.0 <= r <= 1.0):
                return False, [f"attack.ratesは[0,1]: {r}"]
        try:
            parse_mix(attack.get('mix', 'rep:1'))
        except ParameterError as e:
            return False, [str(e)]

    try:
        parse_decoding(data.get('decoding', 'multinomial'))
    except ParameterError as e:
        return False, [str(e)]

    if not data.get('output'):
        warnings.append("outputが未設定のためレポートはファイルに保存されない")
    return True, warnings


def load_experiment_config(path):
    """JSON設定ファイル → ExperimentConfig"""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"設定ファイルのJSON解析エラー: {e}")
    if not isinstance(data, dict):
        raise DataError("設定ファイルはJSONオブジェクトが必要")

    valid, warnings = validate_experiment_config(data)
    if not valid:
        raise DataError(f"設定不正: {warnings}")
    for w in warnings:
        print(f"⚠️  {w}")
    known = {f.name for f in fields(ExperimentConfig)}
    return ExperimentConfig(**{k: v for k, v in data.items() if k in known})


def describe_version():
    """git describe 形式のバージョン文字列（gitがなければパッケージのバージョン）"""
    try:
        result = subprocess.run(
            ['git', 'describe', '--tags', '--always', '--dirty'],
            cwd=os.path.dirname(os.path.abspath(__file__)),
            capture_output=True, text=True, timeout=5,
        )
        if result.returncode == 0 and result.stdout.strip():
            return result.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


# ===== 集計 =====

def z_summary(z_values):
    """z分布の要約（分位点）"""
    z = np.asarray(z_values, dtype=np.float64)
    if z.size == 0:
        return {'count': 0}
    q = np.quantile(z, [0.05, 0.25, 0.5, 0.75, 0.95])
    return {
        'count': int(z.size),
        'mean': float(z.mean()),
        'std': float(z.std(ddof=1)) if z.size > 1 else 0.0,
        'min': float(z.min()),
        'q05': float(q[0]),
        'q25': float(q[1]),
        'median': float(q[2]),
        'q75': float(q[3]),
        'q95': float(q[4]),
        'max': float(z.max()),
    }


def rate(count, trials):
    return {'rate': count / trials if trials else 0.0, 'count': int(count), 'trials': int(trials)}


def _labelled(positive_scores, negative_scores):
    pos = np.asarray(positive_scores, dtype=np.float64)
    neg = np.asarray(negative_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ParameterError("ROCには正例・負例の両方が必要")
    labels = np.concatenate([np.ones(pos.size, dtype=int), np.zeros(neg.size, dtype=int)])
    return labels, np.concatenate([pos, neg])


def roc_curve(positive_scores, negative_scores):
    """閾値スイープによるROC点列（(0,0) から (1,1) まで、同点はまとめる）"""
    labels, scores = _labelled(positive_scores, negative_scores)
    return metrics.roc_curve(labels, scores, drop_intermediate=False)


def auc(fpr, tpr):
    """台形則によるAUC"""
    return float(metrics.auc(fpr, tpr))


def tpr_at_fpr(positive_scores, negative_scores, target_fpr):
    """FPRがtarget以下となる最小閾値での TPR と F1（判定は score > 閾値）"""
    labels, scores = _labelled(positive_scores, negative_scores)
    pos = scores[labels == 1]
    neg = np.sort(scores[labels == 0])[::-1]
    k = int(math.floor(target_fpr * neg.size + 1e-9))
    threshold = float(neg[k]) if k < neg.size else -math.inf
    predicted = (scores > threshold).astype(int)
    return {
        'target_fpr': float(target_fpr),
        'threshold': threshold,
        'tpr': float(metrics.recall_score(labels, predicted, zero_division=0.0)),
        'fpr': float((neg > threshold).mean()),
        'f1': float(metrics.f1_score(labels, predicted, zero_division=0.0)),
        'positives': int(pos.size),
        'negatives': int(neg.size),
    }


def roc_summary(positive_scores, negative_scores, fpr_points=DEFAULT_FPR_POINTS):
    fpr, tpr, _ = roc_curve(positive_scores, negative_scores)
    return {
        'auc': auc(fpr, tpr),
        'roc': [[float(a), float(b)] for a, b in zip(fpr, tpr)],
        'at_fpr': [tpr_at_fpr(positive_scores, negative_scores, p) for p in fpr_points],
    }


# ===== 共通処理 =====

def _rng(seed, *stream):
    return np.random.default_rng([int(seed), *stream])


def _map(fn, items, workers):
    """順序を保った並列map（workers=1なら逐次）"""
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _generation_config(config):
    decoding, top_p = parse_decoding(config.decoding)
    return GenerationConfig(horizon=config.n, decoding=decoding, top_p=top_p, seed=config.seed)


def _make_key(config, scheme, index=0, delta=None, gamma=None, vocab_size=None):
    return keygen(
        gamma=config.gamma if gamma is None else gamma,
        delta=config.delta if delta is None else delta,
        scheme=scheme,
        vocab_size=vocab_size,
        entropy_source=_rng(config.seed, _STREAM_KEY, index),
    )


def score_sequence(seq, key):
    """(数えた位置数, グリーン数, z)。プロンプトもモデルも使わない"""
    gamma = effective_gamma(key)
    if key.scheme is Scheme.FIXED_SPLIT:
        n, green_count = len(seq), count_green(seq, partition(key))
    else:
        n, green_count = len(seq) - 1, bigram_green_count(seq, key)
    return n, green_count, z_score(green_count, n, gamma)


def _generate_arm(model, prompt, key, config, stream, workers):
    gen_config = _generation_config(config)

    def one(i):
        return generate(model, prompt, key, gen_config, rng=_rng(config.seed, stream, i))

    return _map(one, range(config.sequences), workers)


def _null_sequences(model, config):
    """透かしなしの系列。null_corpus があればそれを n トークンに切り詰めて使う"""
    if config.null_corpus:
        corpus = [seq[:config.n] for seq in read_corpus(config.null_corpus) if len(seq) >= 2]
        if not corpus:
            raise DataError("null_corpusに2トークン以上の系列がない")
        return corpus
    return _generate_arm(model, config.prompt, None, config, _STREAM_NULL, config.workers)


def _trial_rows(scheme, scored, attacked_eta=0, tau=DEFAULT_TAU, offset=0):
    return [
        {'trial': offset + i, 'scheme': scheme, 'n': n, 'green_count': g, 'z': z,
         'attacked_eta': attacked_eta, 'decision': int(z > tau)}
        for i, (n, g, z) in enumerate(scored)
    ]


# ===== Type I =====

def run_type1(config):
    """透かしなし系列をランダムな鍵で検出し、τ固定と適応的τでの誤検出率を集計"""
    model = model_from_spec(config.model)
    sequences = _null_sequences(model, config)
    report = {'experiment': 'type1', 'arms': {}, 'tallies': {}}
    rows = []

    for scheme in [parse_scheme(s) for s in config.schemes]:
        z_values = []
        adaptive_hits = {repr(a): 0 for a in config.alphas}
        spoofed_z = []
        robust_hits = {repr(a): 0 for a in config.alphas}
        low_diversity = 0
        stats_list = []
        for seq in sequences:
            counted = seq if scheme is Scheme.FIXED_SPLIT else seq[1:]
            stats = diversity_stats(counted)
            stats_list.append(stats)
            if stats.v > LOW_DIVERSITY_RATIO * stats.n:
                low_diversity += 1

        # 鍵ごとにまとめて処理（bigramのグリーンリストキャッシュを活かす）
        for k in range(config.null_keys):
            key = _make_key(config, scheme, index=k, vocab_size=model.vocab_size)
            gamma = effective_gamma(key)
            scored = [score_sequence(seq, key) for seq in sequences]
            rows.extend(_trial_rows(scheme.value, scored, tau=config.tau, offset=len(rows)))
            for (n, _, z), stats in zip(scored, stats_list):
                z_values.append(z)
                for a in config.alphas:
                    if z >= adaptive_threshold(stats, gamma, a):
                        adaptive_hits[repr(a)] += 1
            if config.robust_eta:
                # η個の赤トークンをグリーンに書き換えた系列を頑健な閾値で判定
                for i, seq in enumerate(sequences):
                    spoofed = spoof_attack(seq, key, config.robust_eta, _rng(config.seed, _STREAM_ATTACK, k, i))
                    n_u, _, z_u = score_sequence(spoofed, key)
                    stats_u = diversity_stats(spoofed if scheme is Scheme.FIXED_SPLIT else spoofed[1:])
                    spoofed_z.append(z_u)
                    for a in config.alphas:
                        if z_u >= robust_adaptive_threshold(stats_u, gamma, a, config.robust_eta, scheme):
                            robust_hits[repr(a)] += 1

        trials = len(z_values)
        false_positives = int(sum(z > config.tau for z in z_values))
        if low_diversity:
            print(f"⚠️  低多様性の系列 {low_diversity}/{len(sequences)}（{scheme.value}）: Type I の保証は弱い")
        report['arms'][scheme.value] = {
            'z': z_summary(z_values),
            'fpr_at_tau': rate(false_positives, trials),
            'fpr_adaptive': {a: rate(c, trials) for a, c in adaptive_hits.items()},
            'low_diversity_sequences': rate(low_diversity, len(sequences)),
            'mean_v': float(np.mean([s.v for s in stats_list])),
            'max_c_max': int(max(s.c_max for s in stats_list)),
        }
        report['tallies'][scheme.value] = {
            'adaptive_fpr_within_alpha': all(
                adaptive_hits[repr(a)] / trials <= a for a in config.alphas),
        }
        if config.robust_eta:
            report['arms'][scheme.value]['spoofed'] = {
                'eta': int(config.robust_eta),
                'z': z_summary(spoofed_z),
                'fpr_robust_adaptive': {a: rate(c, len(spoofed_z)) for a, c in robust_hits.items()},
            }
            report['tallies'][scheme.value]['robust_fpr_within_alpha'] = all(
                robust_hits[repr(a)] / len(spoofed_z) <= a for a in config.alphas)

    report['rows'] = rows
    return report


# ===== Type II =====

def run_type2(config):
    """透かし付き系列の検出力と、グリーン数・zの期待値下界との比較"""
    model = model_from_spec(config.model)
    nulls = _null_sequences(model, config)
    entropy = entropy_diagnostics(model, config.prompt, config.n, config.entropy_rollouts,
                                  _rng(config.seed, _STREAM_ENTROPY))
    report = {'experiment': 'type2', 'entropy': entropy.to_dict(), 'arms': {}, 'tallies': {}}
    rows = []

    for idx, scheme in enumerate(parse_scheme(s) for s in config.schemes):
        key = _make_key(config, scheme, index=idx, vocab_size=model.vocab_size)
        gamma = effective_gamma(key)
        marked = _generate_arm(model, config.prompt, key, config, _STREAM_WM + 10 * idx, config.workers)
        scored = [score_sequence(seq, key) for seq in marked]
        null_scored = [score_sequence(seq, key) for seq in nulls]
        rows.extend(_trial_rows(scheme.value, scored, tau=config.tau, offset=len(rows)))

        z_values = [z for _, _, z in scored]
        green = np.array([g for _, g, _ in scored], dtype=np.float64)
        counted_n = scored[0][0]
        detected = int(sum(z > config.tau for z in z_values))
        arm = {
            'z': z_summary(z_values),
            'null_z': z_summary([z for _, _, z in null_scored]),
            'tpr_at_tau': rate(detected, len(z_values)),
            'fnr_at_tau': rate(len(z_values) - detected, len(z_values)),
            'fpr_at_tau': rate(sum(z > config.tau for _, _, z in null_scored), len(null_scored)),
            'mean_green_count': float(green.mean()),
            'green_count_se': float(green.std(ddof=1) / math.sqrt(green.size)) if green.size > 1 else 0.0,
            'counted_positions': int(counted_n),
        }
        arm.update(roc_summary(z_values, [z for _, _, z in null_scored]))

        # 期待値下界（平均は3標準誤差の余裕で比較）
        xi = min(max(entropy.xi_hat, 0.0), 1.0)
        green_bound = expected_green_lower_bound(counted_n, gamma, key.delta, xi)
        arm['expected_green_lower_bound'] = green_bound
        arm['green_bound_pass'] = bool(arm['mean_green_count'] >= green_bound - 3 * arm['green_count_se'])
        kappa = kappa_from_xi(gamma, key.delta, xi) if key.delta > 0 else 0.0
        arm['kappa'] = kappa
        if 0.0 < kappa < 1.0:
            z_se = arm['z']['std'] / math.sqrt(len(z_values))
            arm['expected_z_lower_bound'] = expected_z_lower_bound(counted_n, gamma, key.delta, kappa)
            arm['z_bound_pass'] = bool(arm['z']['mean'] >= arm['expected_z_lower_bound'] - 3 * z_se)
        else:
            arm['expected_z_lower_bound'] = None
            arm['z_bound_pass'] = None
        report['arms'][scheme.value] = arm
        report['tallies'][scheme.value] = {
            'green_bound_pass': arm['green_bound_pass'],
            'z_bound_pass': arm['z_bound_pass'],
        }

    report['rows'] = rows
    return report


# ===== 編集攻撃への頑健性 =====

def _bound_check(seq, attacked, key, z_y, n_y, tau, certified_eta):
    """攻撃前後で z_u ≥ z_y − penalty(d) と認証予算を検査

    zが定義できないほど短くなった系列は checked=False、z=-inf として扱う。
    """
    result = {'n': None, 'green_count': None, 'z': -math.inf,
              'checked': False, 'violated': False, 'certificate_failure': False}
    min_len = 1 if key.scheme is Scheme.FIXED_SPLIT else 2
    if len(attacked) < min_len:
        return result
    result['n'], result['green_count'], result['z'] = score_sequence(attacked, key)
    d = edit_distance(seq, attacked)
    if d >= n_y:
        return result
    floor = z_y - scheme_penalty(n_y, effective_gamma(key), d, key.scheme)
    result['checked'] = True
    result['violated'] = result['z'] < floor - BOUND_TOL
    result['certificate_failure'] = z_y > tau and d <= certified_eta and not result['z'] > tau
    return result


def run_robustness_sweep(config):
    """攻撃率ごと・スキームごとのROC/AUCと、編集ペナルティの違反数"""
    model = model_from_spec(config.model)
    nulls = _null_sequences(model, config)
    attack = dict(config.attack or {})
    kind = attack.get('kind', 'random')
    mix = parse_mix(attack.get('mix', 'rep:1'))
    rates = [0.0] + [r for r in attack.get('rates', DEFAULT_ATTACK_RATES) if r != 0.0]
    report = {'experiment': 'robustness', 'attack': {'kind': kind, 'mix': list(mix)}, 'arms': {}, 'tallies': {}}
    rows = []

    for idx, scheme in enumerate(parse_scheme(s) for s in config.schemes):
        key = _make_key(config, scheme, index=idx, vocab_size=model.vocab_size)
        gamma = effective_gamma(key)
        marked = _generate_arm(model, config.prompt, key, config, _STREAM_WM + 10 * idx, config.workers)
        scored = [score_sequence(seq, key) for seq in marked]
        null_z = [z for _, _, z in (score_sequence(seq, key) for seq in nulls)]
        certs = [certified_edit_budget(z, n, gamma, config.tau, scheme).certified_eta for n, _, z in scored]

        arm = {}
        violations_total = cert_failures_total = 0
        for r_idx, attack_rate in enumerate(rates):
            attacked_z = []
            checked = violations = cert_failures = 0
            etas = []
            for i, (seq, (n_y, _, z_y)) in enumerate(zip(marked, scored)):
                eta = rate_to_eta(attack_rate, len(seq))
                etas.append(eta)
                rng = _rng(config.seed, _STREAM_ATTACK, idx, r_idx, i)
                attacked = run_attack(kind, seq, eta, key, rng, mix)
                check = _bound_check(seq, attacked, key, z_y, n_y, config.tau, certs[i])
                checked += int(check['checked'])
                violations += int(check['violated'])
                cert_failures += int(check['certificate_failure'])
                attacked_z.append(check['z'])
                rows.append({'trial': len(rows), 'scheme': scheme.value,
                             'n': check['n'], 'green_count': check['green_count'], 'z': check['z'],
                             'attacked_eta': eta, 'decision': int(check['z'] > config.tau)})

            finite = [z for z in attacked_z if math.isfinite(z)]
            entry = {
                'rate': attack_rate,
                'eta': int(max(etas)) if etas else 0,
                'z': z_summary(finite),
                'tpr_at_tau': rate(sum(z > config.tau for z in attacked_z), len(attacked_z)),
                'bound_checks': checked,
                'bound_violations': violations,
                'certificate_failures': cert_failures,
            }
            entry.update(roc_summary(np.nan_to_num(attacked_z, neginf=-1e300), null_z))
            arm[repr(attack_rate)] = entry
            violations_total += violations
            cert_failures_total += cert_failures

        arm['null_z'] = z_summary(null_z)
        arm['mean_certified_eta'] = float(np.mean(certs))
        report['arms'][scheme.value] = arm
        report['tallies'][scheme.value] = {
            'bound_violations': violations_total,
            'certificate_failures': cert_failures_total,
        }

    # 固定分割 ≥ bigram のAUC順序
    if 'fixed_split' in report['arms'] and 'bigram_hash' in report['arms']:
        report['tallies']['auc_ordering'] = {
            repr(r): bool(report['arms']['fixed_split'][repr(r)]['auc']
                          >= report['arms']['bigram_hash'][repr(r)]['auc'])
            for r in rates
        }
    report['rows'] = rows
    return report


# ===== パラメータスイープ =====

def _mean_token_kl(model, prompt, seqs, key):
    """生成系列に沿った (1/n)Σ_t KL(p̂_t‖p_t) の平均"""
    values = []
    for seq in seqs:
        total = 0.0
        for t in range(len(seq)):
            green = green_list_for(key, seq[t - 1] if t else None)
            if green is None:
                continue
            p = model.probs(prompt, seq[:t])
            total += kl_divergence(watermarked_probs(p, green, key.delta), p)
        values.append(total / len(seq))
    return float(np.mean(values)) if values else 0.0


def run_parameter_sweep(config):
    """δ × γ の格子で検出力（τでのTPR）と品質（トークンあたりKL）を比較"""
    model = model_from_spec(config.model)
    report = {'experiment': 'sweep', 'grid': []}
    rows = []
    quality_samples = min(config.sequences, 20)
    for idx, scheme in enumerate(parse_scheme(s) for s in config.schemes):
        for g_idx, gamma in enumerate(config.gammas):
            for d_idx, delta in enumerate(config.deltas):
                key = _make_key(config, scheme, index=1000 + 100 * g_idx + d_idx,
                                delta=delta, gamma=gamma, vocab_size=model.vocab_size)
                stream = _STREAM_WM + 10 * idx + 1000 * (g_idx * len(config.deltas) + d_idx + 1)
                marked = _generate_arm(model, config.prompt, key, config, stream, config.workers)
                scored = [score_sequence(seq, key) for seq in marked]
                z_values = [z for _, _, z in scored]
                rows.extend(_trial_rows(scheme.value, scored, tau=config.tau, offset=len(rows)))
                report['grid'].append({
                    'scheme': scheme.value,
                    'gamma': float(gamma),
                    'delta': float(delta),
                    'z': z_summary(z_values),
                    'tpr_at_tau': rate(sum(z > config.tau for z in z_values), len(z_values)),
                    'mean_token_kl': _mean_token_kl(model, config.prompt, marked[:quality_samples], key),
                })
    report['rows'] = rows
    return report


# ===== 編集ペナルティの健全性検証 =====

def _color_violations(n, eta_max, gamma):
    """色（グリーン=1 / 赤=0）パターンの全列挙による固定分割の検証"""
    checked = violations = 0
    worst = math.inf
    for pattern in itertools.product((0, 1), repeat=n):
        z_y = z_score(sum(pattern), n, gamma)
        for u, d in edit_neighborhood(pattern, eta_max, 2).items():
            if d == 0 or d >= n or len(u) == 0:
                continue
            slack = z_score(sum(u), len(u), gamma) - (z_y - scheme_penalty(n, gamma, d, Scheme.FIXED_SPLIT))
            checked += 1
            worst = min(worst, slack)
            violations += int(slack < -BOUND_TOL)
    return checked, violations, worst


def _vocab_violations(key, n, eta_max):
    """語彙全体の全列挙（bigramハッシュも含む、実際の鍵を使う）"""
    checked = violations = 0
    worst = math.inf
    min_len = 1 if key.scheme is Scheme.FIXED_SPLIT else 2
    gamma = effective_gamma(key)
    for seq in itertools.product(range(key.vocab_size), repeat=n):
        n_y, _, z_y = score_sequence(seq, key)
        for u, d in edit_neighborhood(seq, eta_max, key.vocab_size).items():
            if d == 0 or d >= n_y or len(u) < min_len:
                continue
            _, _, z_u = score_sequence(u, key)
            slack = z_u - (z_y - scheme_penalty(n_y, gamma, d, key.scheme))
            checked += 1
            worst = min(worst, slack)
            violations += int(slack < -BOUND_TOL)
    return checked, violations, worst


def run_exhaustive_soundness(vocab_size=6, n_max=8, eta_max=2, gammas=(1 / 3, 1 / 2),
                             full_vocab_size=4, full_n_max=4, seed=0):
    """編集距離η以内の全系列を列挙して z_u ≥ z_y − penalty を検証

    固定分割のzは各トークンの色だけで決まるため、語彙数Nでは色パターンを列挙する。
    bigramハッシュは小さな語彙で全トークン列を実際の鍵で列挙する。
    """
    report = {'experiment': 'exhaustive', 'checks': [], 'tallies': {}}
    total_violations = 0
    for gamma in gammas:
        key = keygen(gamma=gamma, vocab_size=vocab_size, entropy_source=seed)
        g_eff = effective_gamma(key)
        if not (0 < key.green_size < vocab_size):
            raise ParameterError(f"グリーン・赤の両方が必要: |G|={key.green_size}, N={vocab_size}")
        checked = violations = 0
        worst = math.inf
        for n in range(1, n_max + 1):
            c, v, w = _color_violations(n, eta_max, g_eff)
            checked, violations, worst = checked + c, violations + v, min(worst, w)
        report['checks'].append({'mode': 'color', 'scheme': Scheme.FIXED_SPLIT.value, 'gamma': g_eff,
                                 'vocab_size': vocab_size, 'n_max': n_max, 'eta_max': eta_max,
                                 'checked': checked, 'violations': violations, 'worst_slack': worst})
        total_violations += violations

        for scheme in (Scheme.FIXED_SPLIT, Scheme.BIGRAM_HASH):
            key = keygen(gamma=gamma, vocab_size=full_vocab_size, scheme=scheme, entropy_source=seed)
            checked = violations = 0
            worst = math.inf
            for n in range(2 if scheme is Scheme.BIGRAM_HASH else 1, full_n_max + 1):
                c, v, w = _vocab_violations(key, n, eta_max)
                checked, violations, worst = checked + c, violations + v, min(worst, w)
            report['checks'].append({'mode': 'vocab', 'scheme': scheme.value, 'gamma': effective_gamma(key),
                                     'vocab_size': full_vocab_size, 'n_max': full_n_max, 'eta_max': eta_max,
                                     'checked': checked, 'violations': violations, 'worst_slack': worst})
            total_violations += violations

    report['tallies']['violations'] = total_violations
    report['pass'] = total_violations == 0
    return report


def run_randomized_soundness(trials=DEFAULT_SOUNDNESS_TRIALS, vocab_size=1000, n_max=300,
                             gamma=DEFAULT_GAMMA, delta=DEFAULT_DELTA, seed=0, keys=10):
    """ランダムな透かし付き系列にランダム / グリーンリストを知る攻撃を加え、違反数を集計

    試行を鍵ごとのブロックにまとめ、スキームと攻撃者は試行ごとに交互に切り替える。
    """
    if trials < 1:
        raise ParameterError(f"trialsは1以上: {trials}")
    tallies = {}
    block = max(1, math.ceil(trials / keys))

    for t in range(trials):
        rng = _rng(seed, _STREAM_ATTACK, t)
        scheme = Scheme.FIXED_SPLIT if t % 2 == 0 else Scheme.BIGRAM_HASH
        adversary = 'greenaware' if (t // 2) % 2 == 0 else 'mixed'
        key = keygen(gamma=gamma, delta=delta, scheme=scheme, vocab_size=vocab_size,
                     entropy_source=_rng(seed, _STREAM_KEY, t // block, int(scheme is Scheme.BIGRAM_HASH)))
        n = int(rng.integers(10, n_max + 1))
        if scheme is Scheme.FIXED_SPLIT:
            seq = sample_uniform_watermarked(partition(key), delta, n, rng)
        else:
            seq = sample_uniform_watermarked_bigram(key, delta, n, rng)
        n_y, _, z_y = score_sequence(seq, key)
        eta = int(rng.integers(0, n_y // 2 + 1))
        if adversary == 'greenaware':
            if scheme is Scheme.FIXED_SPLIT:
                attacked = greenaware_attack(seq, partition(key), eta, vocab_size, rng)
            else:
                attacked = greenaware_bigram_attack(seq, key, eta, vocab_size, rng)
        else:
            mix = rng.dirichlet(np.ones(3))
            attacked = random_edit_attack(seq, eta, tuple(mix / mix.sum()), vocab_size, rng)

        bucket = tallies.setdefault(f"{scheme.value}/{adversary}",
                                    {'trials': 0, 'checked': 0, 'violations': 0, 'worst_slack': math.inf})
        bucket['trials'] += 1
        min_len = 1 if scheme is Scheme.FIXED_SPLIT else 2
        if len(attacked) < min_len:
            continue
        d = edit_distance(seq, attacked)
        if d > eta:
            raise AssertionError(f"攻撃が予算を超過: d={d} > η={eta}")
        if d >= n_y:
            continue
        _, _, z_u = score_sequence(attacked, key)
        slack = z_u - (z_y - scheme_penalty(n_y, effective_gamma(key), d, scheme))
        bucket['checked'] += 1
        bucket['violations'] += int(slack < -BOUND_TOL)
        bucket['worst_slack'] = min(bucket['worst_slack'], slack)

    violations = sum(b['violations'] for b in tallies.values())
    return {
        'experiment': 'soundness',
        'trials': int(trials),
        'vocab_size': int(vocab_size),
        'gamma': float(gamma),
        'delta': float(delta),
        'seed': int(seed),
        'buckets': {k: tallies[k] for k in sorted(tallies)},
        'tallies': {'violations': violations},
        'pass': violations == 0,
    }


# ===== 実行とレポート出力 =====

def run_experiment(config):
    """設定に応じて実験を実行し、レポート（dict）を返す。出力先があれば書き出す"""
    started = time.perf_counter()
    if config.experiment == 'type1':
        report = run_type1(config)
    elif config.experiment == 'type2':
        report = run_type2(config)
    elif config.experiment == 'robustness':
        report = run_robustness_sweep(config)
    elif config.experiment == 'sweep':
        report = run_parameter_sweep(config)
    elif config.experiment == 'soundness':
        report = run_randomized_soundness(trials=config.trials, vocab_size=model_from_spec(config.model).vocab_size,
                                          n_max=config.n, gamma=config.gamma, delta=config.delta, seed=config.seed)
    elif config.experiment == 'exhaustive':
        report = run_exhaustive_soundness(seed=config.seed)
    else:
        raise ParameterError(f"未知の実験: {config.experiment}")

    rows = report.pop('rows', [])
    report['config'] = config.to_dict()
    report['seed'] = int(config.seed)
    report['version'] = describe_version()
    if config.include_runtime:
        report['runtime_seconds'] = time.perf_counter() - started

    if config.output:
        emit_report(report, config.output)
    if config.trials_csv:
        write_trials_csv(rows, config.trials_csv)
    if config.excel:
        create_report_excel(report, config.excel)
    return report


def _clean(value):
    # JSON に載らない非有限値は文字列に
    if isinstance(value, float) and not math.isfinite(value):
        return 'nan' if math.isnan(value) else ('inf' if value > 0 else '-inf')
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.generic):
        return _clean(value.item())
    return value


def report_json(report):
    return json.dumps(_clean(report), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def emit_report(report, path):
    """レポートをJSONで書き出す（同じ入力ならバイト単位で同一）"""
    try:
        with open(path, 'w', encoding='utf-8') as f:
            f.write(report_json(report))
        print(f"✅ レポート保存: {path}")
        return True
    except OSError as e:
        print(f"ERROR: レポート保存失敗 {path}: {e}")
        return False


def write_trials_csv(rows, path):
    """試行ごとのCSV（trial, scheme, n, green_count, z, attacked_eta, decision）"""
    try:
        with open(path, 'w', encoding='utf-8', newline='') as f:
            writer = csv.DictWriter(f, fieldnames=TRIAL_CSV_COLUMNS, extrasaction='ignore', lineterminator='\n')
            writer.writeheader()
            for row in rows:
                writer.writerow({k: ('' if row.get(k) is None else _csv_value(row.get(k)))
                                 for k in TRIAL_CSV_COLUMNS})
        return True
    except OSError as e:
        print(f"ERROR: CSV保存失敗 {path}: {e}")
        return False


def _csv_value(value):
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else _clean(value)
    return value


_FAILURE_COUNTS = ('violations', 'bound_violations', 'certificate_failures')
_FAILURE_FLAGS = ('green_bound_pass', 'z_bound_pass', 'adaptive_fpr_within_alpha', 'robust_fpr_within_alpha')


def report_failures(report):
    """上界・保証の違反項目の一覧（空なら合格）。AUCの順序は参考値なので含めない"""
    failures = []
    if report.get('pass') is False:
        failures.append('pass')
    for scope, tally in sorted(report.get('tallies', {}).items()):
        items = tally.items() if isinstance(tally, dict) else [(scope, tally)]
        for name, value in sorted(items):
            label = name if name == scope else f"{scope}.{name}"
            if name in _FAILURE_COUNTS and value:
                failures.append(f"{label}={value}")
            elif name in _FAILURE_FLAGS and value is False:
                failures.append(label)
    return failures


def format_report_summary(report):
    """コンソール表示用のサマリー行"""
    lines = [f"【{report.get('experiment', '')}】 version={report.get('version', '')} seed={report.get('seed', '')}"]
    for scheme, arm in sorted(report.get('arms', {}).items()):
        lines.append(f"[{scheme}]")
        if 'z' in arm:
            lines.append(f"  z平均: {arm['z'].get('mean', float('nan')):.3f}  (n={arm['z'].get('count', 0)})")
        for name in ('tpr_at_tau', 'fpr_at_tau'):
            if name in arm:
                lines.append(f"  {name}: {arm[name]['rate']:.4f} ({arm[name]['count']}/{arm[name]['trials']})")
        if 'auc' in arm:
            lines.append(f"  AUC: {arm['auc']:.4f}")
        for key, entry in sorted(arm.items()):
            if isinstance(entry, dict) and 'rate' in entry and 'auc' in entry:
                lines.append(f"  rate={key}: AUC={entry['auc']:.4f} 違反={entry['bound_violations']}")
    tallies = report.get('tallies')
    if tallies:
        lines.append(f"集計: {json.dumps(_clean(tallies), sort_keys=True, ensure_ascii=False)}")
    if 'pass' in report:
        lines.append("判定: ✅ PASS" if report['pass'] else "判定: ❌ FAIL")
    return lines


def create_report_excel(report, path):
    """評価レポートのExcel版（表示用。バイト単位の再現性はない）

    Returns:
        str: 保存先パス。失敗時はNone
    """
    try:
        from openpyxl import Workbook
        from openpyxl.styles import Font, PatternFill, Alignment, Border, Side

        wb = Workbook()
        title_font = Font(bold=True, size=14)
        header_font = Font(bold=True, size=11, color="FFFFFF")
        header_fill = PatternFill(start_color="4472C4", end_color="4472C4", fill_type="solid")
        pass_fill = PatternFill(start_color="C6EFCE", end_color="C6EFCE", fill_type="solid")
        fail_fill = PatternFill(start_color="FFC7CE", end_color="FFC7CE", fill_type="solid")
        section_font = Font(bold=True, size=12)
        thin_border = Border(
            left=Side(style='thin'), right=Side(style='thin'),
            top=Side(style='thin'), bottom=Side(style='thin')
        )

        # ===== Sheet 1: 概要 =====
        ws1 = wb.active
        ws1.title = "概要"
        ws1.column_dimensions['A'].width = 28
        ws1.column_dimensions['B'].width = 40
        row = 1
        ws1.cell(row=row, column=1, value=f"ウォーターマーク評価: {report.get('experiment', '')}").font = title_font
        row += 1
        ws1.cell(row=row, column=1, value=f"version: {report.get('version', '')}  seed: {report.get('seed', '')}")
        row += 2
        ws1.cell(row=row, column=1, value="設定").font = section_font
        row += 1
        for name, value in sorted(report.get('config', {}).items()):
            ws1.cell(row=row, column=1, value=name).border = thin_border
            cell = ws1.cell(row=row, column=2, value=json.dumps(_clean(value), ensure_ascii=False))
            cell.border = thin_border
            row += 1

        row += 1
        ws1.cell(row=row, column=1, value="バウンド検証").font = section_font
        row += 1
        for scheme, tally in sorted(report.get('tallies', {}).items()):
            items = tally.items() if isinstance(tally, dict) else [('', tally)]
            for name, value in sorted(items, key=lambda kv: str(kv[0])):
                ws1.cell(row=row, column=1, value=f"{scheme} {name}".strip()).border = thin_border
                cell = ws1.cell(row=row, column=2, value=json.dumps(_clean(value)))
                cell.border = thin_border
                ok = value is True or value == 0
                bad = value is False or (isinstance(value, int) and not isinstance(value, bool) and value > 0)
                if ok or bad:
                    cell.fill = pass_fill if ok else fail_fill
                row += 1

        # ===== Sheet 2: アーム別のz分布 =====
        ws2 = wb.create_sheet("検出結果")
        headers = ["スキーム", "条件", "試行数", "z平均", "z中央値", "z 5%", "z 95%", "TPR(τ)", "AUC"]
        for col, h in enumerate(headers, 1):
            c = ws2.cell(row=1, column=col, value=h)
            c.font = header_font
            c.fill = header_fill
            c.border = thin_border
            c.alignment = Alignment(horizontal='center')
        ws2.column_dimensions['A'].width = 14
        ws2.column_dimensions['B'].width = 12
        r = 2
        for scheme, arm in sorted(report.get('arms', {}).items()):
            entries = [('', arm)] if 'z' in arm else []
            entries += [(k, v) for k, v in sorted(arm.items()) if isinstance(v, dict) and 'rate' in v and 'z' in v]
            for label, entry in entries:
                z = entry.get('z', {})
                tpr = entry.get('tpr_at_tau', {}).get('rate')
                values = [scheme, label or '-', z.get('count'), z.get('mean'), z.get('median'),
                          z.get('q05'), z.get('q95'), tpr, entry.get('auc')]
                for col, value in enumerate(values, 1):
                    cell = ws2.cell(row=r, column=col, value=value)
                    cell.border = thin_border
                    if isinstance(value, float):
                        cell.number_format = '0.0000'
                r += 1
        ws2.freeze_panes = 'A2'

        wb.save(path)
        print(f"Excel保存完了: {path}")
        return path

    except Exception as e:
        print(f"Excel作成エラー: {e}")
        import traceback
        traceback.print_exc()
        return None
