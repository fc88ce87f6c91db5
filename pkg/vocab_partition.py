"""
語彙分割モジュール
ウォーターマーク鍵の生成と、鍵から決定的に導出するグリーンリスト（固定分割 / bigramハッシュ）
"""

import hashlib
import hmac
import json
import math
import secrets
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from errors import DataError, ParameterError, UsageError

# ===== デフォルトパラメータ =====
DEFAULT_GAMMA = 0.5        # グリーンリスト比率
DEFAULT_DELTA = 2.0        # ロジット加算量
DEFAULT_VOCAB_SIZE = 1000  # デスクスケール語彙数
SEED_BYTES = 32            # 256bit

# γN の浮動小数誤差吸収（0.29*100 = 28.999... 対策）
_FLOOR_EPS = 1e-12


class Scheme(str, Enum):
    FIXED_SPLIT = 'fixed_split'
    BIGRAM_HASH = 'bigram_hash'


def parse_scheme(value):
    """文字列 / Scheme を Scheme に変換"""
    if isinstance(value, Scheme):
        return value
    aliases = {
        'fixed_split': Scheme.FIXED_SPLIT, 'fixed': Scheme.FIXED_SPLIT, 'FixedSplit': Scheme.FIXED_SPLIT,
        'bigram_hash': Scheme.BIGRAM_HASH, 'bigram': Scheme.BIGRAM_HASH, 'BigramHash': Scheme.BIGRAM_HASH,
    }
    if value not in aliases:
        raise ParameterError(f"未知のスキーム: {value}")
    return aliases[value]


def green_size_for(gamma, vocab_size):
    """|G| = ⌊γN⌋"""
    return int(math.floor(gamma * vocab_size + _FLOOR_EPS))


@dataclass(frozen=True)
class WatermarkKey:
    seed: bytes
    gamma: float
    delta: float
    scheme: Scheme
    vocab_size: int

    def __post_init__(self):
        if not isinstance(self.seed, bytes) or len(self.seed) != SEED_BYTES:
            raise ParameterError(f"seedは{SEED_BYTES}バイト必要")
        if not (0.0 < self.gamma < 1.0):
            raise ParameterError(f"gammaは(0,1)の範囲: {self.gamma}")
        if not (self.delta >= 0.0) or math.isinf(self.delta):
            raise ParameterError(f"deltaは非負の有限値: {self.delta}")
        if int(self.vocab_size) != self.vocab_size or self.vocab_size < 2:
            raise ParameterError(f"vocab_sizeは2以上の整数: {self.vocab_size}")
        if green_size_for(self.gamma, self.vocab_size) < 1:
            raise ParameterError(f"⌊γN⌋が0（gamma={self.gamma}, N={self.vocab_size}）")
        object.__setattr__(self, 'scheme', parse_scheme(self.scheme))

    @property
    def green_size(self):
        return green_size_for(self.gamma, self.vocab_size)

    @property
    def seed_hex(self):
        return self.seed.hex()

    def to_dict(self):
        return {
            'scheme': self.scheme.value,
            'vocab_size': int(self.vocab_size),
            'gamma': float(self.gamma),
            'delta': float(self.delta),
            'seed': self.seed_hex,
        }

    @classmethod
    def from_dict(cls, data):
        try:
            seed_hex = data['seed']
            if len(seed_hex) != 2 * SEED_BYTES:
                raise DataError(f"seedは{2 * SEED_BYTES}桁のhex: {len(seed_hex)}桁")
            return cls(
                seed=bytes.fromhex(seed_hex),
                gamma=float(data['gamma']),
                delta=float(data['delta']),
                scheme=parse_scheme(data['scheme']),
                vocab_size=int(data['vocab_size']),
            )
        except KeyError as e:
            raise DataError(f"鍵ファイルの項目欠損: {e}")
        except (TypeError, ValueError) as e:
            if isinstance(e, ParameterError):
                raise
            raise DataError(f"鍵ファイル形式不正: {e}")


def _seed_bytes(entropy_source):
    if entropy_source is None:
        return secrets.token_bytes(SEED_BYTES)
    if isinstance(entropy_source, (bytes, bytearray)):
        return hashlib.sha256(bytes(entropy_source)).digest()
    if isinstance(entropy_source, np.random.Generator):
        return entropy_source.bytes(SEED_BYTES)
    if isinstance(entropy_source, (int, np.integer)):
        return np.random.default_rng(int(entropy_source)).bytes(SEED_BYTES)
    raise ParameterError(f"entropy_sourceの型が不正: {type(entropy_source).__name__}")


def keygen(gamma=DEFAULT_GAMMA, delta=DEFAULT_DELTA, scheme=Scheme.FIXED_SPLIT,
           vocab_size=DEFAULT_VOCAB_SIZE, entropy_source=None):
    """ウォーターマーク鍵を生成

    Args:
        entropy_source: None（OS乱数）/ int シード / bytes / numpy Generator
    """
    return WatermarkKey(
        seed=_seed_bytes(entropy_source),
        gamma=float(gamma),
        delta=float(delta),
        scheme=parse_scheme(scheme),
        vocab_size=int(vocab_size),
    )


def save_key(key, path):
    with open(path, 'w', encoding='utf-8') as f:
        f.write(json.dumps(key.to_dict(), sort_keys=True, indent=2) + "\n")


def load_key(path):
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"鍵ファイルのJSON解析エラー: {e}")
    return WatermarkKey.from_dict(data)


class GreenList:
    """グリーンリスト（長さNのビットセット）。生成後は不変"""

    __slots__ = ('mask', 'size')

    def __init__(self, mask):
        mask = np.array(mask, dtype=bool)
        mask.setflags(write=False)
        self.mask = mask
        self.size = int(mask.sum())

    @classmethod
    def from_members(cls, members, vocab_size):
        mask = np.zeros(vocab_size, dtype=bool)
        mask[np.asarray(list(members), dtype=np.int64)] = True
        return cls(mask)

    @property
    def vocab_size(self):
        return int(self.mask.shape[0])

    @property
    def members(self):
        return np.flatnonzero(self.mask)

    @property
    def red_members(self):
        return np.flatnonzero(~self.mask)

    def __contains__(self, token):
        return 0 <= token < self.vocab_size and bool(self.mask[token])

    def __len__(self):
        return self.size

    def __eq__(self, other):
        return isinstance(other, GreenList) and np.array_equal(self.mask, other.mask)

    def __hash__(self):
        return hash(self.mask.tobytes())


def _philox_from_seed(seed, domain):
    # Philox鍵は128bit
    digest = hashlib.sha256(domain + b'|' + seed).digest()
    return np.random.Generator(np.random.Philox(key=int.from_bytes(digest[:16], 'big')))


def partition_from_seed(seed, vocab_size, green_size):
    """シードからFisher–Yatesシャッフルし先頭⌊γN⌋個をグリーンに"""
    rng = _philox_from_seed(seed, b'fixed-split')
    order = rng.permutation(vocab_size)
    mask = np.zeros(vocab_size, dtype=bool)
    mask[order[:green_size]] = True
    return GreenList(mask)


@lru_cache(maxsize=256)
def partition(key):
    """固定分割スキームのグリーンリスト"""
    if key.scheme is not Scheme.FIXED_SPLIT:
        raise UsageError(f"partitionはfixed_split専用（scheme={key.scheme.value}）")
    return partition_from_seed(key.seed, key.vocab_size, key.green_size)


@lru_cache(maxsize=8192)
def bigram_green_list(key, prev_token):
    """bigramハッシュ方式: seed' = HMAC(seed, prev_token) から分割"""
    if key.scheme is not Scheme.BIGRAM_HASH:
        raise UsageError(f"bigram_green_listはbigram_hash専用（scheme={key.scheme.value}）")
    prev_token = int(prev_token)
    if not (0 <= prev_token < key.vocab_size):
        raise ParameterError(f"トークンID範囲外: {prev_token} (N={key.vocab_size})")
    derived = hmac.new(key.seed, prev_token.to_bytes(8, 'big'), hashlib.sha256).digest()
    return partition_from_seed(derived, key.vocab_size, key.green_size)


def green_list_for(key, prev_token=None):
    """スキームに応じたグリーンリスト。bigramで直前トークンなしはNone"""
    if key.scheme is Scheme.FIXED_SPLIT:
        return partition(key)
    if prev_token is None:
        return None
    return bigram_green_list(key, prev_token)


def sample_green_list(vocab_size, green_size, rng):
    """モンテカルロ用: サイズ固定の一様ランダムなグリーンリスト"""
    mask = np.zeros(vocab_size, dtype=bool)
    mask[rng.choice(vocab_size, size=green_size, replace=False)] = True
    return GreenList(mask)
