"""
コマンドライン
鍵生成・生成・検出・認証・攻撃・品質検証・評価・健全性検証・エントロピー診断・トークナイズ

同じ入力とシードなら出力ファイルはバイト単位で同一になる。
"""

import argparse
import json
import sys

import numpy as np

from attacks import parse_mix, random_edit_attack, random_swap_attack, rate_to_eta, run_attack
from certificates import certified_edit_budget, closed_form_budget
from detector import DEFAULT_TAU, detect_sequence, effective_gamma, save_report
from divergence import DEFAULT_TRIALS, parse_alphas, run_quality_check
from errors import WatermarkError
from harness import (format_report_summary, load_experiment_config, report_json, report_failures,
                     run_exhaustive_soundness, run_experiment, run_randomized_soundness)
from synth_lm import entropy_diagnostics, model_from_spec
from token_io import WhitespaceTokenizer, read_tokens, write_corpus, write_tokens
from vocab_partition import DEFAULT_DELTA, DEFAULT_GAMMA, DEFAULT_VOCAB_SIZE, keygen, load_key, save_key
from watermarker import DEFAULT_HORIZON, GenerationConfig, generate, parse_decoding


def _write_json(data, path):
    text = report_json(data)
    if path:
        with open(path, 'w', encoding='utf-8') as f:
            f.write(text)
        print(f"✅ 保存: {path}")
    else:
        sys.stdout.write(text)


# ===== サブコマンド =====

def cmd_keygen(args):
    entropy = args.seed if args.seed is not None else None
    key = keygen(gamma=args.gamma, delta=args.delta, scheme=args.scheme,
                 vocab_size=args.vocab, entropy_source=entropy)
    save_key(key, args.out)
    print(f"✅ 鍵を保存: {args.out}（{key.scheme.value}, N={key.vocab_size}, |G|={key.green_size}）")
    return 0


def cmd_generate(args):
    model = model_from_spec(args.model)
    key = load_key(args.key) if args.key else None
    decoding, top_p = parse_decoding(args.decoding)
    config = GenerationConfig(horizon=args.n, decoding=decoding, top_p=top_p, seed=args.seed)
    prompt = read_tokens(args.prompt) if args.prompt else []
    tokens = generate(model, prompt, key, config)
    write_tokens(args.out, tokens)
    print(f"✅ {len(tokens)}トークン生成（{config.decoding_label}）: {args.out}")
    return 0


def cmd_detect(args):
    key = load_key(args.key)
    report = detect_sequence(read_tokens(args.input), key, tau=args.tau, alpha=args.alpha, eta=args.eta)
    if args.report:
        save_report(report, args.report)
        print(f"✅ 検出レポート: {args.report}")
    else:
        sys.stdout.write(report_json(report.to_dict()))
    return 0


def cmd_certify(args):
    key = load_key(args.key)
    report = detect_sequence(read_tokens(args.input), key, tau=args.tau)
    gamma = effective_gamma(key)
    cert = certified_edit_budget(report.z, report.n, gamma, args.tau, key.scheme)
    data = cert.to_dict()
    data['closed_form_eta'] = closed_form_budget(report.z, report.n, gamma, args.tau, key.scheme)
    _write_json(data, args.report)
    return 0


def cmd_attack(args):
    seq = read_tokens(args.input)
    if (args.eta is None) == (args.rate is None):
        print("ERROR: --eta と --rate のどちらか一方を指定")
        return 2
    eta = args.eta if args.eta is not None else rate_to_eta(args.rate, len(seq))
    rng = np.random.default_rng(args.seed)

    if args.greenaware:
        if not args.key:
            print("ERROR: --greenaware には --key が必要")
            return 2
        key = load_key(args.key)
        out = run_attack('greenaware', seq, eta, key, rng)
    elif args.swap:
        out = random_swap_attack(seq, eta, rng)
    else:
        vocab = args.vocab
        if vocab is None:
            vocab = load_key(args.key).vocab_size if args.key else DEFAULT_VOCAB_SIZE
        out = random_edit_attack(seq, eta, parse_mix(args.mix), vocab, rng)

    write_tokens(args.out, out)
    print(f"✅ η={eta} の攻撃を適用: {len(seq)} → {len(out)}トークン ({args.out})")
    return 0


def cmd_quality_check(args):
    report = run_quality_check(
        delta=args.delta, gamma=args.gamma, vocab_size=args.vocab, trials=args.trials,
        alphas=parse_alphas(args.alphas), seed=args.seed, horizon=args.horizon,
    )
    _write_json(report, args.report)
    print("判定: ✅ PASS" if report['pass'] else "判定: ❌ FAIL")
    return 0 if report['pass'] else 1


def cmd_evaluate(args):
    config = load_experiment_config(args.config)
    if args.output:
        config.output = args.output
    report = run_experiment(config)
    for line in format_report_summary(report):
        print(line)
    failures = report_failures(report)
    if failures:
        print(f"❌ 上界の違反: {', '.join(failures)}")
        return 1
    return 0


def cmd_soundness(args):
    if args.mode == 'exhaustive':
        report = run_exhaustive_soundness(vocab_size=args.vocab, n_max=args.n_max,
                                          eta_max=args.eta_max, seed=args.seed)
    else:
        report = run_randomized_soundness(trials=args.trials, vocab_size=args.vocab,
                                          n_max=args.n_max, seed=args.seed)
    _write_json(report, args.report)
    print("判定: ✅ PASS" if report['pass'] else "判定: ❌ FAIL")
    return 0 if report['pass'] else 1


def cmd_entropy(args):
    model = model_from_spec(args.model)
    prompt = read_tokens(args.prompt) if args.prompt else []
    report = entropy_diagnostics(model, prompt, args.n, args.rollouts, np.random.default_rng(args.seed))
    _write_json(report.to_dict(), args.report)
    return 0


def cmd_tokenize(args):
    if args.fit:
        texts = []
        for path in args.fit:
            with open(path, 'r', encoding='utf-8') as f:
                texts.extend(line for line in f if line.strip())
        tokenizer = WhitespaceTokenizer().fit(texts, max_vocab=args.max_vocab)
        tokenizer.save(args.vocab)
        print(f"✅ 語彙 {tokenizer.vocab_size}語を保存: {args.vocab}")
        if args.out:
            write_corpus(args.out, [tokenizer.encode(t) for t in texts])
        return 0

    tokenizer = WhitespaceTokenizer.load(args.vocab)
    if args.decode:
        text = tokenizer.decode(read_tokens(args.decode))
        if args.out:
            with open(args.out, 'w', encoding='utf-8') as f:
                f.write(text + "\n")
        else:
            print(text)
        return 0
    if args.encode:
        with open(args.encode, 'r', encoding='utf-8') as f:
            tokens = tokenizer.encode(f.read())
        if args.out:
            write_tokens(args.out, tokens)
        else:
            sys.stdout.write(''.join(f"{t}\n" for t in tokens))
        return 0
    print("ERROR: --fit / --encode / --decode のいずれかを指定")
    return 2


# ===== 引数定義 =====

def build_parser():
    parser = argparse.ArgumentParser(prog='watermark', description="グリーンリスト方式のLLMウォーターマーク")
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('keygen', help="鍵生成")
    p.add_argument('--gamma', type=float, default=DEFAULT_GAMMA)
    p.add_argument('--delta', type=float, default=DEFAULT_DELTA)
    p.add_argument('--scheme', default='fixed_split', help="fixed_split / bigram_hash")
    p.add_argument('--vocab', type=int, default=DEFAULT_VOCAB_SIZE)
    p.add_argument('--seed', type=int, default=None, help="省略時はOS乱数")
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser('generate', help="テキスト生成（--keyでウォーターマーク付き）")
    p.add_argument('--model', required=True, help="uniform:N / ngram:CORPUS:ORDER:ALPHA / demo:N / repeat:N:T / cycle:N:L")
    p.add_argument('--key')
    p.add_argument('--n', type=int, default=DEFAULT_HORIZON)
    p.add_argument('--decoding', default='multinomial', help="multinomial / greedy / topp:P")
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--prompt', help="プロンプトのトークンファイル")
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser('detect', help="検出")
    p.add_argument('--key', required=True)
    p.add_argument('--in', dest='input', required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument('--tau', type=float, default=DEFAULT_TAU)
    group.add_argument('--alpha', type=float, default=None, help="適応的閾値の誤検出率")
    p.add_argument('--eta', type=int, default=0, help="--alphaと併用: η編集以内の改変に頑健な閾値")
    p.add_argument('--report')
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser('certify', help="認証編集予算")
    p.add_argument('--key', required=True)
    p.add_argument('--in', dest='input', required=True)
    p.add_argument('--tau', type=float, default=DEFAULT_TAU)
    p.add_argument('--report')
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser('attack', help="編集攻撃")
    p.add_argument('--in', dest='input', required=True)
    p.add_argument('--eta', type=int, default=None)
    p.add_argument('--rate', type=float, default=None, help="η = round(rate·n)")
    p.add_argument('--mix', default='rep:1', help="ins:I,del:D,rep:R")
    p.add_argument('--greenaware', action='store_true')
    p.add_argument('--swap', action='store_true')
    p.add_argument('--key')
    p.add_argument('--vocab', type=int, default=None)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser('quality-check', help="Rényiダイバージェンス上界の検証")
    p.add_argument('--delta', type=float, default=DEFAULT_DELTA)
    p.add_argument('--gamma', type=float, default=DEFAULT_GAMMA)
    p.add_argument('--vocab', type=int, default=100)
    p.add_argument('--trials', type=int, default=DEFAULT_TRIALS)
    p.add_argument('--alphas', default='0.5,1,2,10,inf')
    p.add_argument('--horizon', type=int, default=None, help="合成バウンド n·min{δ, αδ²/8} を出力")
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--report')
    p.set_defaults(func=cmd_quality_check)

    p = sub.add_parser('evaluate', help="設定ファイルによる実験")
    p.add_argument('--config', required=True)
    p.add_argument('--output', help="設定のoutputを上書き")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser('soundness', help="編集ペナルティの健全性検証")
    p.add_argument('--mode', choices=['exhaustive', 'randomized'], default='exhaustive')
    p.add_argument('--vocab', type=int, default=None)
    p.add_argument('--n-max', dest='n_max', type=int, default=None)
    p.add_argument('--eta-max', dest='eta_max', type=int, default=2)
    p.add_argument('--trials', type=int, default=10_000)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--report')
    p.set_defaults(func=cmd_soundness)

    p = sub.add_parser('entropy', help="高エントロピー仮定の診断")
    p.add_argument('--model', required=True)
    p.add_argument('--n', type=int, default=DEFAULT_HORIZON)
    p.add_argument('--rollouts', type=int, default=20)
    p.add_argument('--prompt')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--report')
    p.set_defaults(func=cmd_entropy)

    p = sub.add_parser('tokenize', help="空白区切りトークナイザ")
    p.add_argument('--vocab', required=True, help="語彙ファイル（JSON）")
    p.add_argument('--fit', nargs='+', help="語彙を学習するテキストファイル")
    p.add_argument('--max-vocab', dest='max_vocab', type=int, default=None)
    p.add_argument('--encode', help="エンコードするテキストファイル")
    p.add_argument('--decode', help="デコードするトークンファイル")
    p.add_argument('--out')
    p.set_defaults(func=cmd_tokenize)

    return parser


def _apply_soundness_defaults(args):
    # モードで既定値が異なる
    if args.command != 'soundness':
        return
    if args.mode == 'exhaustive':
        args.vocab = 6 if args.vocab is None else args.vocab
        args.n_max = 8 if args.n_max is None else args.n_max
    else:
        args.vocab = DEFAULT_VOCAB_SIZE if args.vocab is None else args.vocab
        args.n_max = 300 if args.n_max is None else args.n_max


def main(argv=None):
    args = build_parser().parse_args(argv)
    _apply_soundness_defaults(args)
    try:
        return args.func(args)
    except WatermarkError as e:
        print(f"ERROR: {e}")
        return 2
    except OSError as e:
        print(f"ERROR: ファイル入出力エラー: {e}")
        return 1
    except Exception as e:
        print(f"ERROR: {e}")
        import traceback
        traceback.print_exc()
        return 1


if __name__ == '__main__':
    sys.exit(main())
