"""
合成言語モデルモジュール
次トークン分布のソース（一様 / n-gram / 縮退モデル）と、高エントロピー仮定の診断
"""

import math
from abc import ABC, abstractmethod
from collections import Counter, defaultdict
from dataclasses import dataclass, asdict
from enum import Enum

import numpy as np

from errors import DataError, ParameterError
from token_io import read_corpus

# ===== 数値パラメータ =====
PROB_FLOOR = 1e-30          # log前のクリップ
DEFAULT_EPSILON = 1e-6      # 縮退モデルの残余質量
DEFAULT_SMOOTHING = 1.0
DEFAULT_ORDER = 2           # trigram

# demo:N 指定で学習する疑似コーパス
DEMO_CORPUS_TOKENS = 50_000
DEMO_CORPUS_SEED = 0
DEMO_SMOOTHING = 0.1


def softmax(logits):
    """max減算による安定化softmax"""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - np.max(logits)
    e = np.exp(shifted)
    return e / e.sum()


def safe_log(probs):
    return np.log(np.maximum(np.asarray(probs, dtype=np.float64), PROB_FLOOR))


class NextTokenModel(ABC):
    """(prompt, prefix) → 長さNのロジット。生成後は不変"""

    def __init__(self, vocab_size):
        if int(vocab_size) != vocab_size or vocab_size < 2:
            raise ParameterError(f"vocab_sizeは2以上: {vocab_size}")
        self.vocab_size = int(vocab_size)

    @abstractmethod
    def logits(self, prompt, prefix):
        ...

    def probs(self, prompt, prefix):
        return softmax(self.logits(prompt, prefix))

    def describe(self):
        return type(self).__name__


class UniformLM(NextTokenModel):
    """全ロジット0の最大エントロピーモデル"""

    def __init__(self, vocab_size):
        super().__init__(vocab_size)
        self._logits = np.zeros(self.vocab_size)
        self._logits.setflags(write=False)
        self._probs = np.full(self.vocab_size, 1.0 / self.vocab_size)
        self._probs.setflags(write=False)

    def logits(self, prompt, prefix):
        return self._logits

    def probs(self, prompt, prefix):
        return self._probs

    def describe(self):
        return f"uniform:{self.vocab_size}"


def uniform_lm(vocab_size):
    return UniformLM(vocab_size)


class NGramLM(NextTokenModel):
    """加算スムージング付きn-gram: P(v|ctx) = (c(ctx,v)+α)/(c(ctx)+αN)

    文脈長が不足する系列先頭では短い文脈（系列先頭からの全トークン）を使う。
    """

    def __init__(self, vocab_size, order, alpha, counts, totals, spec=None):
        super().__init__(vocab_size)
        self.order = order
        self.alpha = alpha
        self._counts = counts
        self._totals = totals
        self._spec = spec
        self._uniform_logits = np.full(self.vocab_size, -math.log(self.vocab_size))
        self._uniform_logits.setflags(write=False)

    def context(self, prompt, prefix):
        history = list(prompt) + list(prefix)
        return tuple(history[-self.order:]) if self.order else ()

    def logits(self, prompt, prefix):
        ctx = self.context(prompt, prefix)
        entry = self._counts.get(ctx)
        if entry is None:
            return self._uniform_logits
        ids, values = entry
        denom = self._totals[ctx] + self.alpha * self.vocab_size
        out = np.full(self.vocab_size, math.log(self.alpha / denom))
        out[ids] = np.log((values + self.alpha) / denom)
        return out

    def describe(self):
        return self._spec or f"ngram(order={self.order}, alpha={self.alpha}, N={self.vocab_size})"


def ngram_fit(corpus, order=DEFAULT_ORDER, smoothing_alpha=DEFAULT_SMOOTHING, vocab_size=None, spec=None):
    """コーパス（TokenSeqのリスト）からn-gramモデルを学習"""
    if int(order) != order or order < 1:
        raise ParameterError(f"orderは1以上: {order}")
    if not (smoothing_alpha > 0):
        raise ParameterError(f"smoothing_alphaは正: {smoothing_alpha}")
    sequences = [list(map(int, s)) for s in corpus if len(s) > 0]
    if not sequences:
        raise DataError("コーパスが空")

    max_token = max(max(s) for s in sequences)
    if min(min(s) for s in sequences) < 0:
        raise DataError("負のトークンIDを含む")
    if vocab_size is None:
        vocab_size = max(max_token + 1, 2)
    elif max_token >= vocab_size:
        raise DataError(f"トークンID {max_token} が語彙数 {vocab_size} 以上")

    raw = defaultdict(Counter)
    for seq in sequences:
        for i, token in enumerate(seq):
            raw[tuple(seq[max(0, i - order):i])][token] += 1

    # 文脈ごとに出現したトークンだけを疎に保持
    counts, totals = {}, {}
    for ctx, counter in raw.items():
        ids = np.fromiter(counter.keys(), dtype=np.int64, count=len(counter))
        values = np.fromiter(counter.values(), dtype=np.float64, count=len(counter))
        counts[ctx] = (ids, values)
        totals[ctx] = float(values.sum())

    return NGramLM(vocab_size, int(order), float(smoothing_alpha), counts, totals, spec=spec)


class DegenerateKind(str, Enum):
    REPEAT_TOKEN = 'repeat'
    CYCLE_ALPHABET = 'cycle'


class DegenerateLM(NextTokenModel):
    """1−εの質量を決定的な次トークンに置く低エントロピーモデル"""

    def __init__(self, kind, vocab_size, token=0, cycle_length=26, epsilon=DEFAULT_EPSILON):
        super().__init__(vocab_size)
        self.kind = DegenerateKind(kind)
        if not (0.0 <= epsilon < 1.0):
            raise ParameterError(f"epsilonは[0,1): {epsilon}")
        if self.kind is DegenerateKind.REPEAT_TOKEN and not (0 <= token < self.vocab_size):
            raise ParameterError(f"トークンID範囲外: {token}")
        if self.kind is DegenerateKind.CYCLE_ALPHABET and not (1 <= cycle_length <= self.vocab_size):
            raise ParameterError(f"cycle_lengthは1..N: {cycle_length}")
        self.token = int(token)
        self.cycle_length = int(cycle_length)
        self.epsilon = float(epsilon)
        self.is_point_mass = self.epsilon == 0.0
        if self.is_point_mass:
            print("⚠️  epsilon=0 の縮退モデル（点質量）")

    def target(self, prompt, prefix):
        if self.kind is DegenerateKind.REPEAT_TOKEN:
            return self.token
        history = list(prompt) + list(prefix)
        if not history:
            return 0
        return (int(history[-1]) + 1) % self.cycle_length

    def probs(self, prompt, prefix):
        p = np.full(self.vocab_size, self.epsilon / (self.vocab_size - 1))
        p[self.target(prompt, prefix)] = 1.0 - self.epsilon
        return p

    def logits(self, prompt, prefix):
        return safe_log(self.probs(prompt, prefix))

    def describe(self):
        if self.kind is DegenerateKind.REPEAT_TOKEN:
            return f"repeat:{self.vocab_size}:{self.token}:{self.epsilon!r}"
        return f"cycle:{self.vocab_size}:{self.cycle_length}:{self.epsilon!r}"


def degenerate_lm(kind, vocab_size, token=0, cycle_length=26, epsilon=DEFAULT_EPSILON):
    return DegenerateLM(kind, vocab_size, token=token, cycle_length=cycle_length, epsilon=epsilon)


def model_from_spec(spec):
    """モデル指定文字列からモデルを構築

    uniform:N / repeat:N:TOKEN[:EPS] / cycle:N:LENGTH[:EPS] / ngram:CORPUS:ORDER:ALPHA[:N]
    demo:N[:ORDER[:ALPHA]]（Zipf疑似コーパスで学習したn-gram）
    """
    parts = spec.split(':')
    kind = parts[0]
    try:
        if kind == 'uniform' and len(parts) == 2:
            return uniform_lm(int(parts[1]))
        if kind in ('repeat', 'cycle') and len(parts) in (3, 4):
            eps = float(parts[3]) if len(parts) == 4 else DEFAULT_EPSILON
            if kind == 'repeat':
                return degenerate_lm('repeat', int(parts[1]), token=int(parts[2]), epsilon=eps)
            return degenerate_lm('cycle', int(parts[1]), cycle_length=int(parts[2]), epsilon=eps)
        if kind == 'ngram' and len(parts) in (4, 5):
            vocab_size = int(parts[4]) if len(parts) == 5 else None
            corpus = read_corpus([parts[1]])
            return ngram_fit(corpus, int(parts[2]), float(parts[3]), vocab_size=vocab_size, spec=spec)
        if kind == 'demo' and 2 <= len(parts) <= 4:
            vocab_size = int(parts[1])
            order = int(parts[2]) if len(parts) >= 3 else DEFAULT_ORDER
            alpha = float(parts[3]) if len(parts) == 4 else DEMO_SMOOTHING
            corpus = demo_corpus(vocab_size, DEMO_CORPUS_TOKENS, np.random.default_rng(DEMO_CORPUS_SEED))
            return ngram_fit(corpus, order, alpha, vocab_size=vocab_size, spec=spec)
    except ValueError as e:
        if isinstance(e, (ParameterError, DataError)):
            raise
        raise ParameterError(f"モデル指定の数値が不正: {spec} ({e})")
    raise ParameterError(f"モデル指定が不正: {spec}")


def demo_corpus(vocab_size, length, rng, zipf_exponent=1.1, sentence_length=50):
    """Zipf分布の疑似「人間」コーパス（trigram学習用）"""
    ranks = np.arange(1, vocab_size + 1, dtype=np.float64)
    weights = ranks ** (-zipf_exponent)
    weights /= weights.sum()
    tokens = rng.choice(vocab_size, size=length, p=weights)
    return [tokens[i:i + sentence_length].tolist() for i in range(0, length, sentence_length)]


@dataclass
class EntropyReport:
    xi_hat: float
    xi_se: float
    max_l2: float
    mean_linf: float
    rollouts: int
    horizon: int
    # 高確率版仮定の生統計（合否判定なし、ロールアウト平均）
    sum_l2_sq: float
    norm_sum_l2: float
    sum_linf_sq: float
    norm_sum_linf: float

    def to_dict(self):
        return asdict(self)


def _sample(probs, rng):
    cdf = np.cumsum(probs)
    return int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side='right'), len(probs) - 1))


def entropy_diagnostics(model, prompt, horizon, rollouts, rng):
    """ξ̂ = ロールアウト平均の (1/n)Σ_t ‖p_t‖²（ウォーターマークなしモデルで展開）"""
    if horizon < 1:
        raise ParameterError(f"horizonは1以上: {horizon}")
    if rollouts < 1:
        raise ParameterError(f"rolloutsは1以上: {rollouts}")

    prompt = list(prompt)
    per_rollout_xi = np.empty(rollouts)
    max_l2 = 0.0
    linf_total = 0.0
    sum_l2_sq = np.empty(rollouts)
    norm_sum_l2 = np.empty(rollouts)
    sum_linf_sq = np.empty(rollouts)
    norm_sum_linf = np.empty(rollouts)

    for r in range(rollouts):
        prefix = []
        l2 = np.empty(horizon)
        linf = np.empty(horizon)
        acc = np.zeros(model.vocab_size)
        for t in range(horizon):
            p = model.probs(prompt, prefix)
            l2[t] = float(np.dot(p, p))
            linf[t] = float(p.max())
            acc += p
            prefix.append(_sample(p, rng))
        per_rollout_xi[r] = l2.mean()
        max_l2 = max(max_l2, float(l2.max()))
        linf_total += float(linf.sum())
        sum_l2_sq[r] = l2.sum()
        norm_sum_l2[r] = float(np.linalg.norm(acc))
        sum_linf_sq[r] = float(np.dot(linf, linf))
        norm_sum_linf[r] = float(acc.max())

    if np.ptp(per_rollout_xi) == 0.0:
        xi_hat, xi_se = float(per_rollout_xi[0]), 0.0
    else:
        xi_hat = float(per_rollout_xi.mean())
        xi_se = float(per_rollout_xi.std(ddof=1) / math.sqrt(rollouts)) if rollouts > 1 else float('nan')

    return EntropyReport(
        xi_hat=xi_hat,
        xi_se=xi_se,
        max_l2=max_l2,
        mean_linf=linf_total / (rollouts * horizon),
        rollouts=int(rollouts),
        horizon=int(horizon),
        sum_l2_sq=float(sum_l2_sq.mean()),
        norm_sum_l2=float(norm_sum_l2.mean()),
        sum_linf_sq=float(sum_linf_sq.mean()),
        norm_sum_linf=float(norm_sum_linf.mean()),
    )
