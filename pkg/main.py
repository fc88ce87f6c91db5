"""
Watermark Detector - HTTP Service
トークン列を受け取り、ウォーターマーク検出・認証編集予算・品質検証をJSONで返す
"""

import os
import threading
from typing import Optional

from flask import Flask, request, jsonify

from certificates import certified_edit_budget, closed_form_budget
from detector import DEFAULT_TAU, detect_sequence, effective_gamma
from divergence import DEFAULT_ALPHAS, parse_alphas, run_quality_check
from errors import ParameterError, WatermarkError
from harness import describe_version
from vocab_partition import WatermarkKey, load_key

app = Flask(__name__)

# サービスで受け付ける品質検証の試行数上限
MAX_SERVICE_TRIALS = 2000

# ============================================================
# 鍵キャッシュ（スレッドセーフ）
# ============================================================
_key_lock = threading.Lock()
_cached_key: Optional[WatermarkKey] = None


def get_key() -> WatermarkKey:
    """WATERMARK_KEY_PATH の鍵を一度だけ読み込んで返す。スレッドセーフ。"""
    global _cached_key

    with _key_lock:
        if _cached_key is not None:
            return _cached_key
        path = os.environ.get('WATERMARK_KEY_PATH')
        if not path:
            raise WatermarkError("WATERMARK_KEY_PATH が未設定")
        _cached_key = load_key(path)
        print(f"鍵を読み込み: {path}（{_cached_key.scheme.value}, N={_cached_key.vocab_size}）")
        return _cached_key


def invalidate_key():
    """キャッシュを無効化し、次回呼び出し時に再読込させる"""
    global _cached_key
    with _key_lock:
        _cached_key = None
        print("Key cache invalidated")


def _request_key(data):
    # リクエストに鍵が含まれていればそれを優先
    if data.get('key'):
        return WatermarkKey.from_dict(data['key'])
    return get_key()


def _request_tokens(data):
    tokens = data.get('tokens')
    if not isinstance(tokens, list) or not all(isinstance(t, int) and not isinstance(t, bool) for t in tokens):
        raise WatermarkError("tokens は整数のリストが必要")
    return tokens


def _error(e, status):
    return jsonify({"status": "error", "message": str(e)}), status


@app.route('/', methods=['GET'])
def index():
    """手動検出用WebUI"""
    html = """
    <!DOCTYPE html>
    <html lang="ja">
    <head>
        <meta charset="UTF-8">
        <meta name="viewport" content="width=device-width, initial-scale=1.0">
        <title>Watermark Detector</title>
        <style>
            body {
                font-family: -apple-system, BlinkMacSystemFont, "Segoe UI", Roboto, sans-serif;
                max-width: 800px;
                margin: 50px auto;
                padding: 20px;
                background: #f5f5f5;
            }
            .container {
                background: white;
                padding: 30px;
                border-radius: 8px;
                box-shadow: 0 2px 4px rgba(0,0,0,0.1);
            }
            h1 { color: #333; margin-top: 0; }
            textarea { width: 100%; height: 120px; font-family: monospace; }
            button {
                background: #4285f4;
                color: white;
                border: none;
                padding: 12px 24px;
                font-size: 16px;
                border-radius: 4px;
                cursor: pointer;
            }
            button:disabled { background: #ccc; cursor: not-allowed; }
            #result { margin-top: 20px; padding: 15px; border-radius: 4px; display: none; }
            .success { background: #d4edda; color: #155724; border: 1px solid #c3e6cb; }
            .error { background: #f8d7da; color: #721c24; border: 1px solid #f5c6cb; }
            pre { background: #f5f5f5; padding: 10px; border-radius: 4px; overflow-x: auto; }
        </style>
    </head>
    <body>
        <div class="container">
            <h1>🔍 Watermark Detector</h1>
            <p>トークンID（空白・改行区切り）を貼り付けて検出します</p>
            <textarea id="tokens"></textarea>
            <p>閾値 τ: <input id="tau" value="6.0" size="6"></p>
            <button onclick="runDetect()" id="runBtn">🚀 検出</button>
            <div id="result"></div>
        </div>
        <script>
            async function runDetect() {
                const btn = document.getElementById('runBtn');
                const result = document.getElementById('result');
                const tokens = document.getElementById('tokens').value.trim().split(/\\s+/).map(Number);
                btn.disabled = true;
                result.style.display = 'block';
                try {
                    const response = await fetch('/detect', {
                        method: 'POST',
                        headers: {'Content-Type': 'application/json'},
                        body: JSON.stringify({tokens: tokens, tau: parseFloat(document.getElementById('tau').value)})
                    });
                    const data = await response.json();
                    if (!response.ok) {
                        throw new Error(data.message || '検出に失敗しました');
                    }
                    result.className = 'success';
                    result.innerHTML = `<strong>${data.report.decision ? '✅ ウォーターマークあり' : '❌ 検出されず'}</strong>
                        <pre>${JSON.stringify(data.report, null, 2)}</pre>`;
                } catch (error) {
                    result.className = 'error';
                    result.innerHTML = `<strong>❌ エラー</strong><br>${error.message}`;
                } finally {
                    btn.disabled = false;
                }
            }
        </script>
    </body>
    </html>
    """
    return html


@app.route('/health', methods=['GET'])
def health():
    """ヘルスチェック"""
    return jsonify({"status": "ok", "version": describe_version()})


@app.route('/key-status', methods=['GET'])
def key_status():
    """鍵の読込状態（シードは返さない）"""
    try:
        status = {
            "has_cached_key": _cached_key is not None,
            "key_path_set": bool(os.environ.get('WATERMARK_KEY_PATH')),
        }
        try:
            key = get_key()
            status.update({
                "key_ok": True,
                "scheme": key.scheme.value,
                "vocab_size": key.vocab_size,
                "gamma": key.gamma,
                "delta": key.delta,
            })
        except Exception as e:
            status["key_ok"] = False
            status["key_error"] = str(e)
        return jsonify(status)
    except Exception as e:
        return _error(e, 500)


@app.route('/reload-key', methods=['POST'])
def reload_key():
    """鍵ファイルを差し替えた後の再読込"""
    try:
        invalidate_key()
        key = get_key()
        return jsonify({"status": "success", "scheme": key.scheme.value, "vocab_size": key.vocab_size})
    except WatermarkError as e:
        return _error(e, 400)
    except Exception as e:
        return _error(e, 500)


@app.route('/detect', methods=['POST'])
def detect_endpoint():
    """検出エンドポイント: {"tokens": [...], "tau": 6.0} または {"tokens": [...], "alpha": 0.01, "eta": 5}"""
    try:
        data = request.get_json(silent=True) or {}
        key = _request_key(data)
        eta = data.get('eta', 0)
        if isinstance(eta, bool) or not isinstance(eta, int):
            raise ParameterError(f"etaは整数: {eta!r}")
        report = detect_sequence(_request_tokens(data), key,
                                 tau=float(data.get('tau', DEFAULT_TAU)), alpha=data.get('alpha'), eta=eta)
        return jsonify({"status": "success", "report": report.to_dict()})
    except (WatermarkError, ValueError, TypeError) as e:
        return _error(e, 400)
    except Exception as e:
        import traceback
        print(f"ERROR: {e}")
        print(traceback.format_exc())
        return _error(e, 500)


@app.route('/certify', methods=['POST'])
def certify_endpoint():
    """認証編集予算: z_y − penalty(η) > τ を満たす最大のη"""
    try:
        data = request.get_json(silent=True) or {}
        key = _request_key(data)
        tau = float(data.get('tau', DEFAULT_TAU))
        report = detect_sequence(_request_tokens(data), key, tau=tau)
        gamma = effective_gamma(key)
        cert = certified_edit_budget(report.z, report.n, gamma, tau, key.scheme).to_dict()
        cert['closed_form_eta'] = closed_form_budget(report.z, report.n, gamma, tau, key.scheme)
        return jsonify({"status": "success", "certificate": cert})
    except (WatermarkError, ValueError, TypeError) as e:
        return _error(e, 400)
    except Exception as e:
        import traceback
        print(f"ERROR: {e}")
        print(traceback.format_exc())
        return _error(e, 500)


@app.route('/quality-check', methods=['POST'])
def quality_check_endpoint():
    """品質上界 min{δ, αδ²/8} のランダム検証"""
    try:
        data = request.get_json(silent=True) or {}
        trials = int(data.get('trials', 1000))
        if trials > MAX_SERVICE_TRIALS:
            return _error(f"trialsは{MAX_SERVICE_TRIALS}以下", 400)
        alphas = data.get('alphas')
        alphas = parse_alphas(','.join(str(a) for a in alphas)) if alphas else DEFAULT_ALPHAS
        report = run_quality_check(
            delta=float(data.get('delta', 2.0)),
            gamma=float(data.get('gamma', 0.5)),
            vocab_size=int(data.get('vocab_size', 100)),
            trials=trials,
            alphas=alphas,
            seed=int(data.get('seed', 0)),
        )
        return jsonify({"status": "success", "report": report})
    except (WatermarkError, ValueError, TypeError) as e:
        return _error(e, 400)
    except Exception as e:
        import traceback
        print(f"ERROR: {e}")
        print(traceback.format_exc())
        return _error(e, 500)


if __name__ == '__main__':
    port = int(os.environ.get('PORT', 8080))
    app.run(host='0.0.0.0', port=port)
