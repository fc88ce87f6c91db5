"""
ウォーターマーク処理の例外定義
"""


class WatermarkError(Exception):
    """本パッケージの基底例外"""


class ParameterError(WatermarkError, ValueError):
    """パラメータ範囲外・トークンID範囲外・長さ不一致"""


class UsageError(WatermarkError):
    """スキーム不一致など呼び出し方の誤り"""


class DataError(WatermarkError, ValueError):
    """空コーパス・ファイル形式不正"""


class UndefinedStatisticError(WatermarkError, ArithmeticError):
    """統計量が定義できない（空系列など）"""


class DomainError(WatermarkError, ValueError):
    """ダイバージェンスのサポート条件違反"""
