"""
トークンファイル入出力
改行区切り整数のトークンファイル、コーパス読込、空白区切りトークナイザ（語彙ファイル永続化）
"""

import json
from collections import Counter

from errors import DataError

UNK_TOKEN = '<unk>'


def read_tokens(path):
    """1行1トークンのファイルを読む（空行は無視）"""
    tokens = []
    with open(path, 'r', encoding='utf-8') as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                tokens.append(int(line))
            except ValueError:
                raise DataError(f"{path}:{lineno} 整数ではない行: {line[:30]}")
    for t in tokens:
        if t < 0:
            raise DataError(f"{path}: 負のトークンID {t}")
    return tokens


def write_tokens(path, tokens):
    with open(path, 'w', encoding='utf-8') as f:
        f.write(''.join(f"{int(t)}\n" for t in tokens))


def read_corpus(paths):
    """コーパス読込。空行で系列を区切る（1ファイル1系列も可）"""
    corpus = []
    for path in paths:
        current = []
        with open(path, 'r', encoding='utf-8') as f:
            for lineno, line in enumerate(f, 1):
                line = line.strip()
                if not line:
                    if current:
                        corpus.append(current)
                        current = []
                    continue
                try:
                    current.append(int(line))
                except ValueError:
                    raise DataError(f"{path}:{lineno} 整数ではない行: {line[:30]}")
        if current:
            corpus.append(current)
    if not corpus:
        raise DataError(f"コーパスが空: {', '.join(map(str, paths))}")
    return corpus


def write_corpus(path, corpus):
    with open(path, 'w', encoding='utf-8') as f:
        f.write('\n'.join(''.join(f"{int(t)}\n" for t in seq) for seq in corpus))


class WhitespaceTokenizer:
    """単語→IDの空白区切りトークナイザ。ID 0 は未知語"""

    def __init__(self, vocab=None):
        self.vocab = dict(vocab) if vocab else {UNK_TOKEN: 0}
        if self.vocab.get(UNK_TOKEN) != 0:
            raise DataError("語彙ファイルに <unk>=0 がない")
        self._inverse = {i: w for w, i in self.vocab.items()}

    @property
    def vocab_size(self):
        return len(self.vocab)

    def fit(self, texts, max_vocab=None):
        counter = Counter(w for text in texts for w in text.split())
        # 頻度降順、同頻度は辞書順（決定的）
        words = sorted(counter, key=lambda w: (-counter[w], w))
        if max_vocab is not None:
            words = words[:max(max_vocab - 1, 0)]
        self.vocab = {UNK_TOKEN: 0}
        for w in words:
            self.vocab[w] = len(self.vocab)
        self._inverse = {i: w for w, i in self.vocab.items()}
        return self

    def encode(self, text):
        return [self.vocab.get(w, 0) for w in text.split()]

    def decode(self, tokens):
        return ' '.join(self._inverse.get(int(t), UNK_TOKEN) for t in tokens)

    def save(self, path):
        with open(path, 'w', encoding='utf-8') as f:
            f.write(json.dumps(self.vocab, sort_keys=True, indent=2, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path):
        try:
            with open(path, 'r', encoding='utf-8') as f:
                return cls(json.load(f))
        except json.JSONDecodeError as e:
            raise DataError(f"語彙ファイルのJSON解析エラー: {e}")
