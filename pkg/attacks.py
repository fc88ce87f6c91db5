"""
編集攻撃モジュール
挿入・削除・置換の回数ηで制限された攻撃者と、トークン列の編集距離
"""

import math

import Levenshtein
import numpy as np

from errors import ParameterError
from vocab_partition import Scheme, bigram_green_list, partition

DEFAULT_MIX = (0.0, 0.0, 1.0)      # (挿入, 削除, 置換)
DEFAULT_ATTACK_RATES = (0.1, 0.3, 0.5)
# bigram向け攻撃で次位置も赤にする置換トークンを探す回数
_BIGRAM_CANDIDATES = 32


# ===== 編集距離 =====

def edit_distance(a, b):
    """トークン列のLevenshtein距離

    Levenshteinパッケージは文字列しか受け付けないので、トークンを1文字ずつに写像する。
    """
    index = {}
    sa = ''.join(chr(index.setdefault(t, len(index))) for t in a)
    sb = ''.join(chr(index.setdefault(t, len(index))) for t in b)
    return Levenshtein.distance(sa, sb)


def levenshtein_dp(a, b):
    """参照用の純Python動的計画法（2行分のみ保持）"""
    a, b = list(a), list(b)
    if len(a) > len(b):
        a, b = b, a
    dists = list(range(len(a) + 1))
    for j, cb in enumerate(b):
        new = [j + 1]
        for i, ca in enumerate(a):
            if ca == cb:
                new.append(dists[i])
            else:
                new.append(1 + min(dists[i], dists[i + 1], new[-1]))
        dists = new
    return dists[-1]


# ===== 攻撃パラメータ =====

def rate_to_eta(rate, n):
    """編集率 → 操作回数（四捨五入、0.5は切り上げ）"""
    if not (0.0 <= rate <= 1.0):
        raise ParameterError(f"rateは[0,1]: {rate}")
    return int(math.floor(round(rate * n, 9) + 0.5))


def _check_mix(mix):
    mix = tuple(float(x) for x in mix)
    if len(mix) != 3 or min(mix) < 0 or abs(sum(mix) - 1.0) > 1e-9:
        raise ParameterError(f"mixは和が1の非負3要素 (ins, del, rep): {mix}")
    return mix


def parse_mix(text):
    """'ins:0.2,del:0.3,rep:0.5' → (0.2, 0.3, 0.5)。省略した操作は0"""
    values = {'ins': 0.0, 'del': 0.0, 'rep': 0.0}
    for item in text.split(','):
        item = item.strip()
        if not item:
            continue
        name, _, value = item.partition(':')
        name = name.strip().lower()
        if name not in values:
            raise ParameterError(f"未知の操作: {name}")
        try:
            values[name] = float(value)
        except ValueError:
            raise ParameterError(f"mixの値が数値ではない: {item}")
    return _check_mix((values['ins'], values['del'], values['rep']))


def _check_eta(eta):
    if int(eta) != eta or eta < 0:
        raise ParameterError(f"etaは非負の整数: {eta}")
    return int(eta)


# ===== 攻撃者 =====

def random_edit_attack(seq, eta, mix=DEFAULT_MIX, vocab_size=None, rng=None):
    """一様ランダムな位置にη回の挿入/削除/置換を加える

    空になった系列への削除・置換は行わない（その分ηを使い切らない）。
    """
    eta = _check_eta(eta)
    p_ins, p_del, p_rep = _check_mix(mix)
    if vocab_size is None or vocab_size < 2:
        raise ParameterError(f"vocab_sizeは2以上: {vocab_size}")
    rng = rng if rng is not None else np.random.default_rng()

    out = list(seq)
    ops = rng.choice(3, size=eta, p=[p_ins, p_del, p_rep]) if eta else []
    for op in ops:
        if op == 0:
            out.insert(int(rng.integers(0, len(out) + 1)), int(rng.integers(0, vocab_size)))
        elif not out:
            continue
        elif op == 1:
            del out[int(rng.integers(0, len(out)))]
        else:
            out[int(rng.integers(0, len(out)))] = int(rng.integers(0, vocab_size))

    if seq and not out:
        print(f"⚠️  攻撃後の系列が空（eta={eta}, n={len(seq)}）")
    return out


def random_swap_attack(seq, eta, rng):
    """ランダムな2位置のトークン交換を⌊η/2⌋回（1回の交換は編集2回分）"""
    eta = _check_eta(eta)
    out = list(seq)
    if len(out) < 2:
        return out
    for _ in range(eta // 2):
        i, j = rng.choice(len(out), size=2, replace=False)
        out[i], out[j] = out[j], out[i]
    return out


def greenaware_attack(seq, green, eta, vocab_size, rng):
    """グリーンリストを知る攻撃者: グリーン位置から最大η個を選び一様な赤トークンに置換"""
    eta = _check_eta(eta)
    if vocab_size != green.vocab_size:
        raise ParameterError(f"語彙数 {vocab_size} とグリーンリスト長 {green.vocab_size} が不一致")
    out = list(seq)
    positions = [t for t, tok in enumerate(out) if tok in green]
    k = min(eta, len(positions))
    if k == 0:
        return out
    red = green.red_members
    chosen = rng.choice(len(positions), size=k, replace=False)
    replacements = red[rng.integers(0, len(red), size=k)]
    for idx, tok in zip(chosen, replacements):
        out[positions[idx]] = int(tok)
    return out


def greenaware_bigram_attack(seq, key, eta, vocab_size, rng):
    """bigramハッシュ方式向けのグリーンリストを知る攻撃者

    数えられているグリーン位置 t を置換し、u_t を Green(u_{t−1}) の外へ、
    できれば u_{t+1} も Green(u_t) の外へ出す。
    """
    eta = _check_eta(eta)
    if key.scheme is not Scheme.BIGRAM_HASH or vocab_size != key.vocab_size:
        raise ParameterError("bigram_hash鍵と一致する語彙数が必要")
    out = list(seq)
    m = len(out)
    status = np.zeros(m, dtype=bool)
    for t in range(1, m):
        status[t] = out[t] in bigram_green_list(key, out[t - 1])

    for _ in range(eta):
        positions = np.flatnonzero(status)
        if positions.size == 0:
            break
        t = int(positions[rng.integers(0, positions.size)])
        red = bigram_green_list(key, out[t - 1]).red_members
        candidates = red[rng.integers(0, len(red), size=_BIGRAM_CANDIDATES)]
        choice = int(candidates[0])
        if t + 1 < m:
            for cand in candidates:
                if out[t + 1] not in bigram_green_list(key, int(cand)):
                    choice = int(cand)
                    break
        out[t] = choice
        status[t] = False
        if t + 1 < m:
            status[t + 1] = out[t + 1] in bigram_green_list(key, choice)
    return out


def spoof_attack(seq, key, eta, rng):
    """なりすまし: 透かしなし系列の赤位置を最大η個グリーンに置換して検出させようとする"""
    eta = _check_eta(eta)
    out = list(seq)
    if key.scheme is Scheme.FIXED_SPLIT:
        green = partition(key)
        positions = [t for t, tok in enumerate(out) if tok not in green]
        k = min(eta, len(positions))
        if k == 0:
            return out
        members = green.members
        chosen = rng.choice(len(positions), size=k, replace=False)
        for idx, tok in zip(chosen, members[rng.integers(0, len(members), size=k)]):
            out[positions[idx]] = int(tok)
        return out

    for _ in range(eta):
        positions = [t for t in range(1, len(out)) if out[t] not in bigram_green_list(key, out[t - 1])]
        if not positions:
            break
        t = positions[int(rng.integers(0, len(positions)))]
        members = bigram_green_list(key, out[t - 1]).members
        out[t] = int(members[rng.integers(0, len(members))])
    return out


def run_attack(kind, seq, eta, key, rng, mix=DEFAULT_MIX):
    """攻撃名でディスパッチ: random / swap / greenaware"""
    if kind == 'random':
        return random_edit_attack(seq, eta, mix, key.vocab_size, rng)
    if kind == 'swap':
        return random_swap_attack(seq, eta, rng)
    if kind == 'greenaware':
        if key.scheme is Scheme.FIXED_SPLIT:
            return greenaware_attack(seq, partition(key), eta, key.vocab_size, rng)
        return greenaware_bigram_attack(seq, key, eta, key.vocab_size, rng)
    raise ParameterError(f"未知の攻撃: {kind}")


def edit_neighborhood(seq, eta, vocab_size):
    """編集距離η以内の全系列 → 編集距離（元の系列は距離0）"""
    eta = _check_eta(eta)
    distances = {tuple(seq): 0}
    frontier = [tuple(seq)]
    for d in range(1, eta + 1):
        nxt = []
        for s in frontier:
            for cand in _single_edits(s, vocab_size):
                if cand not in distances:
                    distances[cand] = d
                    nxt.append(cand)
        frontier = nxt
    return distances


def _single_edits(s, vocab_size):
    for i in range(len(s) + 1):
        for v in range(vocab_size):
            yield s[:i] + (v,) + s[i:]
    for i in range(len(s)):
        yield s[:i] + s[i + 1:]
        for v in range(vocab_size):
            if v != s[i]:
                yield s[:i] + (v,) + s[i + 1:]
