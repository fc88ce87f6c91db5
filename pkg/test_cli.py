"""
cli.py のテスト
一時ディレクトリでサブコマンドを順に実行し、終了コードと出力ファイルを検証
"""

import sys
import os
import io
import contextlib
import json
import tempfile
sys.path.insert(0, os.path.dirname(__file__))

from attacks import edit_distance
import cli
from cli import main
from token_io import read_tokens


def _read_json(path):
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def test_keygen_generate_detect():
    """鍵生成 → 生成 → 検出 → 認証"""
    with tempfile.TemporaryDirectory() as tmp:
        key = os.path.join(tmp, 'key.json')
        marked = os.path.join(tmp, 'marked.txt')
        assert main(['keygen', '--vocab', '1000', '--seed', '0', '--out', key]) == 0
        assert main(['generate', '--model', 'uniform:1000', '--key', key, '--n', '200',
                     '--seed', '1', '--out', marked]) == 0
        assert len(read_tokens(marked)) == 200

        report = os.path.join(tmp, 'detect.json')
        assert main(['detect', '--key', key, '--in', marked, '--report', report]) == 0
        data = _read_json(report)
        assert data['decision'] == 1 and data['n'] == 200

        assert main(['detect', '--key', key, '--in', marked, '--alpha', '0.01', '--report', report]) == 0
        assert _read_json(report)['tau'] > 6.0

        cert = os.path.join(tmp, 'cert.json')
        assert main(['certify', '--key', key, '--in', marked, '--report', cert]) == 0
        data = _read_json(cert)
        assert data['certified_eta'] > 0
        assert 'closed_form_eta' in data
    print("✅ keygen_generate_detect: PASS")


def test_generate_deterministic():
    """同じシードなら出力ファイルはバイト単位で同一"""
    with tempfile.TemporaryDirectory() as tmp:
        key = os.path.join(tmp, 'key.json')
        assert main(['keygen', '--vocab', '100', '--scheme', 'bigram_hash', '--seed', '3', '--out', key]) == 0
        outputs = []
        for i in range(2):
            out = os.path.join(tmp, f'out{i}.txt')
            assert main(['generate', '--model', 'uniform:100', '--key', key, '--n', '50',
                         '--seed', '9', '--out', out]) == 0
            with open(out, 'rb') as f:
                outputs.append(f.read())
        assert outputs[0] == outputs[1]
    print("✅ generate_deterministic: PASS")


def test_attack_commands():
    """ランダム攻撃・グリーンリストを知る攻撃・引数エラー"""
    with tempfile.TemporaryDirectory() as tmp:
        key = os.path.join(tmp, 'key.json')
        marked = os.path.join(tmp, 'marked.txt')
        attacked = os.path.join(tmp, 'attacked.txt')
        main(['keygen', '--vocab', '200', '--seed', '0', '--out', key])
        main(['generate', '--model', 'uniform:200', '--key', key, '--n', '100', '--out', marked])
        seq = read_tokens(marked)

        assert main(['attack', '--in', marked, '--rate', '0.1', '--mix', 'ins:0.2,del:0.3,rep:0.5',
                     '--vocab', '200', '--out', attacked]) == 0
        assert edit_distance(seq, read_tokens(attacked)) <= 10

        assert main(['attack', '--in', marked, '--eta', '15', '--greenaware', '--key', key,
                     '--out', attacked]) == 0
        assert edit_distance(seq, read_tokens(attacked)) <= 15

        assert main(['attack', '--in', marked, '--eta', '4', '--swap', '--out', attacked]) == 0
        assert sorted(read_tokens(attacked)) == sorted(seq)

        # --eta と --rate は排他、--greenaware には鍵が必要
        assert main(['attack', '--in', marked, '--eta', '3', '--rate', '0.1', '--out', attacked]) == 2
        assert main(['attack', '--in', marked, '--eta', '3', '--greenaware', '--out', attacked]) == 2
    print("✅ attack_commands: PASS")


def test_error_exit_codes():
    """不正な引数は2、ファイルがなければ1"""
    with tempfile.TemporaryDirectory() as tmp:
        key = os.path.join(tmp, 'key.json')
        assert main(['keygen', '--scheme', 'trigram', '--out', key]) == 2
        assert main(['keygen', '--gamma', '0.0', '--out', key]) == 2
        assert main(['keygen', '--vocab', '50', '--seed', '0', '--out', key]) == 0
        # 語彙数の不一致
        assert main(['generate', '--model', 'uniform:100', '--key', key, '--n', '5',
                     '--out', os.path.join(tmp, 'x.txt')]) == 2
        assert main(['detect', '--key', key, '--in', os.path.join(tmp, 'missing.txt')]) == 1

        # 空の系列は検出できない
        empty = os.path.join(tmp, 'empty.txt')
        with open(empty, 'w', encoding='utf-8') as f:
            f.write("")
        assert main(['detect', '--key', key, '--in', empty]) == 2
    print("✅ error_exit_codes: PASS")


def test_checks_and_diagnostics():
    """品質検証・健全性検証・エントロピー診断"""
    with tempfile.TemporaryDirectory() as tmp:
        report = os.path.join(tmp, 'quality.json')
        assert main(['quality-check', '--delta', '2.0', '--vocab', '20', '--trials', '30',
                     '--horizon', '5', '--report', report]) == 0
        data = _read_json(report)
        assert data['pass'] is True
        assert data['composition_bounds']['inf'] == 10.0

        report = os.path.join(tmp, 'soundness.json')
        assert main(['soundness', '--mode', 'randomized', '--trials', '20', '--vocab', '100',
                     '--n-max', '40', '--report', report]) == 0
        assert _read_json(report)['tallies']['violations'] == 0

        assert main(['soundness', '--mode', 'exhaustive', '--vocab', '4', '--n-max', '3',
                     '--eta-max', '1', '--report', report]) == 0
        assert _read_json(report)['pass'] is True

        report = os.path.join(tmp, 'entropy.json')
        assert main(['entropy', '--model', 'uniform:50', '--n', '10', '--rollouts', '2', '--report', report]) == 0
        assert abs(_read_json(report)['xi_hat'] - 0.02) < 1e-12
    print("✅ checks_and_diagnostics: PASS")


def test_evaluate():
    """設定ファイルによる実験"""
    with tempfile.TemporaryDirectory() as tmp:
        config = os.path.join(tmp, 'config.json')
        output = os.path.join(tmp, 'report.json')
        with open(config, 'w', encoding='utf-8') as f:
            json.dump({'experiment': 'type1', 'model': 'uniform:100', 'n': 30, 'sequences': 5,
                       'null_keys': 2, 'seed': 0}, f)
        assert main(['evaluate', '--config', config, '--output', output]) == 0
        data = _read_json(output)
        assert data['experiment'] == 'type1'
        assert data['seed'] == 0
        assert 'version' in data

        with open(config, 'w', encoding='utf-8') as f:
            json.dump({'experiment': 'paraphrase'}, f)
        assert main(['evaluate', '--config', config]) == 2
    print("✅ evaluate: PASS")


def test_tokenize():
    """語彙学習 → エンコード → デコード"""
    with tempfile.TemporaryDirectory() as tmp:
        text = os.path.join(tmp, 'text.txt')
        vocab = os.path.join(tmp, 'vocab.json')
        tokens = os.path.join(tmp, 'tokens.txt')
        decoded = os.path.join(tmp, 'decoded.txt')
        with open(text, 'w', encoding='utf-8') as f:
            f.write("the cat sat\nthe dog sat\n")
        assert main(['tokenize', '--vocab', vocab, '--fit', text]) == 0
        assert main(['tokenize', '--vocab', vocab, '--encode', text, '--out', tokens]) == 0
        ids = read_tokens(tokens)
        assert len(ids) == 6 and 0 not in ids
        assert main(['tokenize', '--vocab', vocab, '--decode', tokens, '--out', decoded]) == 0
        with open(decoded, 'r', encoding='utf-8') as f:
            assert f.read() == "the cat sat the dog sat\n"
        assert main(['tokenize', '--vocab', vocab]) == 2
    print("✅ tokenize: PASS")


def test_detect_with_robust_threshold():
    """--eta 指定時はη編集に頑健な閾値（--alpha 必須）"""
    with tempfile.TemporaryDirectory() as tmp:
        key = os.path.join(tmp, 'key.json')
        marked = os.path.join(tmp, 'marked.txt')
        report = os.path.join(tmp, 'detect.json')
        main(['keygen', '--vocab', '1000', '--seed', '0', '--out', key])
        main(['generate', '--model', 'uniform:1000', '--key', key, '--n', '200', '--seed', '1', '--out', marked])

        assert main(['detect', '--key', key, '--in', marked, '--alpha', '0.01', '--report', report]) == 0
        plain_tau = _read_json(report)['tau']
        assert main(['detect', '--key', key, '--in', marked, '--alpha', '0.01', '--eta', '10',
                     '--report', report]) == 0
        assert _read_json(report)['tau'] > plain_tau

        assert main(['detect', '--key', key, '--in', marked, '--eta', '10', '--report', report]) == 2
        assert main(['detect', '--key', key, '--in', marked, '--alpha', '0.01', '--eta', '200',
                     '--report', report]) == 2
    print("✅ detect_with_robust_threshold: PASS")


def test_evaluate_exit_code_on_failures():
    """レポートに上界・保証の違反があれば終了コード1"""
    failing = {'experiment': 'type2', 'arms': {},
               'tallies': {'fixed_split': {'green_bound_pass': False, 'auc_ordering': True}}}
    original = cli.run_experiment
    cli.run_experiment = lambda config: failing
    try:
        with tempfile.TemporaryDirectory() as tmp:
            config = os.path.join(tmp, 'config.json')
            with open(config, 'w', encoding='utf-8') as f:
                json.dump({'experiment': 'type2', 'output': os.path.join(tmp, 'r.json')}, f)
            assert main(['evaluate', '--config', config]) == 1

            failing['tallies']['fixed_split']['green_bound_pass'] = True
            assert main(['evaluate', '--config', config]) == 0
    finally:
        cli.run_experiment = original
    print("✅ evaluate_exit_code_on_failures: PASS")


def test_generate_prints_decoding():
    """生成時のメッセージにデコード方式を表示する"""
    with tempfile.TemporaryDirectory() as tmp:
        out = os.path.join(tmp, 'out.txt')
        buffer = io.StringIO()
        with contextlib.redirect_stdout(buffer):
            assert main(['generate', '--model', 'uniform:100', '--n', '10', '--decoding', 'topp:0.9',
                         '--out', out]) == 0
        assert 'topp:0.9' in buffer.getvalue()
        assert len(read_tokens(out)) == 10
    print("✅ generate_prints_decoding: PASS")


if __name__ == '__main__':
    print("=" * 60)
    print("cli.py テスト実行")
    print("=" * 60)

    test_keygen_generate_detect()
    test_generate_deterministic()
    test_attack_commands()
    test_error_exit_codes()
    test_checks_and_diagnostics()
    test_evaluate()
    test_tokenize()
    test_detect_with_robust_threshold()
    test_evaluate_exit_code_on_failures()
    test_generate_prints_decoding()

    print("\n" + "=" * 60)
    print("全テスト PASS")
    print("=" * 60)
