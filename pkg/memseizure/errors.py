"""模擬器的錯誤類型"""

from typing import Optional


class MemSeizureError(Exception):
    """所有領域錯誤的基類"""


class InvalidParameterError(MemSeizureError, ValueError):
    """參數超出允許範圍"""


class InvalidInputError(MemSeizureError, ValueError):
    """輸入數據無效（例如包含 NaN 或 Inf）"""


class ShapeMismatchError(MemSeizureError, ValueError):
    """張量或向量的維度不一致"""


class EdfParseError(MemSeizureError):
    """EDF 文件解析失敗，附帶出錯的字節偏移"""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (字節偏移 {offset})")
        self.offset = offset


class AnnotationParseError(MemSeizureError):
    """發作摘要文本解析失敗，附帶出錯的行號"""

    def __init__(self, message: str, line_number: int, line: Optional[str] = None):
        detail = f"第 {line_number} 行"
        if line is not None:
            detail += f": {line.strip()!r}"
        super().__init__(f"{message} ({detail})")
        self.line_number = line_number


class TrainingDivergedError(MemSeizureError):
    """訓練損失變為非有限值"""

    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"訓練發散: epoch={epoch} batch={batch} loss={loss}")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss


class ConfigError(MemSeizureError):
    """配置文件或命令列參數無效"""


class MissingInputError(InvalidInputError):
    """需要的輸入文件或目錄不存在"""
