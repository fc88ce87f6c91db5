"""
ウォーターマーク付きテキスト生成
グリーンリストへのロジット加算と、multinomial / greedy / top-p によるサンプリング
"""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from errors import ParameterError
from synth_lm import softmax, safe_log
from vocab_partition import Scheme, bigram_green_list, partition

DEFAULT_HORIZON = 200
DEFAULT_SEED = 0


class Decoding(str, Enum):
    MULTINOMIAL = 'multinomial'
    GREEDY = 'greedy'
    TOP_P = 'topp'


@dataclass(frozen=True)
class GenerationConfig:
    horizon: int = DEFAULT_HORIZON
    decoding: Decoding = Decoding.MULTINOMIAL
    top_p: float = 1.0
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ParameterError(f"horizonは1以上: {self.horizon}")
        object.__setattr__(self, 'decoding', Decoding(self.decoding))
        if self.decoding is Decoding.TOP_P and not (0.0 < self.top_p <= 1.0):
            raise ParameterError(f"top_pは(0,1]: {self.top_p}")

    @property
    def decoding_label(self):
        if self.decoding is Decoding.TOP_P:
            return f"topp:{self.top_p!r}"
        return self.decoding.value


def parse_decoding(text):
    """'multinomial' / 'greedy' / 'topp:P' → (Decoding, top_p)"""
    text = text.strip().lower()
    if text in ('multinomial', 'greedy'):
        return Decoding(text), 1.0
    if text.startswith('topp:'):
        try:
            p = float(text.split(':', 1)[1])
        except ValueError:
            raise ParameterError(f"top_pが数値ではない: {text}")
        if not (0.0 < p <= 1.0):
            raise ParameterError(f"top_pは(0,1]: {p}")
        return Decoding.TOP_P, p
    raise ParameterError(f"未知のデコーディング: {text}")


def bias_logits(logits, green, delta):
    """ℓ̂[v] = ℓ[v] + δ·1(v∈G)"""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape != green.mask.shape:
        raise ParameterError(f"ロジット長 {logits.shape[0]} とグリーンリスト長 {green.vocab_size} が不一致")
    return logits + delta * green.mask


def watermarked_probs(probs, green, delta):
    """p̂ = softmax(log p + δ·1_G)"""
    return softmax(bias_logits(safe_log(probs), green, delta))


def _draw(probs, rng):
    # 逆CDF法（rngの消費は1回/トークン）
    cdf = np.cumsum(probs)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side='right'))
    return min(idx, len(probs) - 1)


def sample_next(logits, decoding, rng, top_p=1.0):
    """次トークンを1つ選ぶ"""
    decoding = Decoding(decoding)
    if decoding is Decoding.GREEDY:
        # 同点は最小ID
        return int(np.argmax(logits))

    probs = softmax(logits)
    if decoding is Decoding.MULTINOMIAL:
        return _draw(probs, rng)

    # nucleus: 累積質量がtop_pに達するまでの最小接頭辞（閾値を跨ぐトークンを含む）
    order = np.argsort(-probs, kind='stable')
    cum = np.cumsum(probs[order])
    k = min(int(np.searchsorted(cum, top_p - 1e-12, side='left')) + 1, len(order))
    nucleus = order[:k]
    kept = probs[nucleus] / probs[nucleus].sum()
    return int(nucleus[_draw(kept, rng)])


def _check_key(model, key):
    if key is not None and key.vocab_size != model.vocab_size:
        raise ParameterError(f"鍵の語彙数 {key.vocab_size} とモデルの語彙数 {model.vocab_size} が不一致")


def generate(model, prompt, key, config, rng=None):
    """テキスト生成ループ（keyがあればグリーンリストへのロジット加算を合成）

    プロンプトは出力に含めない。bigramハッシュは t=1 のみ加算なし。
    """
    _check_key(model, key)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    prompt = list(prompt)
    fixed_green = partition(key) if key is not None and key.scheme is Scheme.FIXED_SPLIT else None

    out = []
    for _ in range(config.horizon):
        logits = model.logits(prompt, out)
        if key is not None:
            if fixed_green is not None:
                logits = bias_logits(logits, fixed_green, key.delta)
            elif out:
                logits = bias_logits(logits, bigram_green_list(key, out[-1]), key.delta)
        out.append(sample_next(logits, config.decoding, rng, config.top_p))
    return out


def spawn_rngs(seed, count):
    """試行ごとに独立なrngを決定的に導出"""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def generate_batch(model, prompt, key, config, count):
    """count本の系列を生成（系列iのrngはseedからspawnしたi番目）"""
    _check_key(model, key)
    return [generate(model, prompt, key, config, rng=rng) for rng in spawn_rngs(config.seed, count)]


def sample_uniform_watermarked(green, delta, n, rng):
    """一様モデル＋固定分割の厳密サンプラ（大規模モンテカルロ用）

    各トークンは確率 p̂(G) = e^δγ'/(1+(e^δ−1)γ')（γ' = |G|/N）でグリーン、その色の中で一様。
    """
    gamma_eff = green.size / green.vocab_size
    p_green = math.exp(delta) * gamma_eff / (1.0 + math.expm1(delta) * gamma_eff)
    is_green = rng.random(n) < p_green
    members, red = green.members, green.red_members
    out = np.where(
        is_green,
        members[rng.integers(0, len(members), size=n)],
        red[rng.integers(0, len(red), size=n)],
    )
    return out.astype(np.int64).tolist()


def sample_uniform_watermarked_bigram(key, delta, n, rng):
    """一様モデル＋bigramハッシュの厳密サンプラ

    先頭トークンは語彙全体で一様、以降は直前トークンのグリーンリストについて
    確率 p̂(G) でグリーン、その色の中で一様。
    """
    if key.scheme is not Scheme.BIGRAM_HASH:
        raise ParameterError(f"bigram_hash専用のサンプラ（scheme={key.scheme.value}）")
    if n < 1:
        return []
    gamma_eff = key.green_size / key.vocab_size
    p_green = math.exp(delta) * gamma_eff / (1.0 + math.expm1(delta) * gamma_eff)
    is_green = rng.random(n) < p_green
    out = [int(rng.integers(0, key.vocab_size))]
    for t in range(1, n):
        green = bigram_green_list(key, out[-1])
        pool = green.members if is_green[t] else green.red_members
        out.append(int(pool[rng.integers(0, len(pool))]))
    return out
