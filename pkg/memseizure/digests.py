import hashlib
from pathlib import Path
from typing import Dict, Union

from .errors import InvalidInputError, InvalidParameterError

CHUNK_SIZE = 1 << 20


class FileDigests:
    """輸出文件的哈希摘要，用來確認重跑結果逐字節一致"""

    def __init__(self, algorithm: str = 'sha256'):
        self.supported_algorithms = ['sha256', 'sha512', 'sha3_256', 'blake2b']
        algorithm = algorithm.lower()
        if algorithm not in self.supported_algorithms:
            raise InvalidParameterError(f"不支持的哈希算法: {algorithm}")
        self.algorithm = algorithm

    def hash_bytes(self, data: bytes) -> str:
        hash_obj = hashlib.new(self.algorithm)
        hash_obj.update(data)
        return hash_obj.hexdigest()

    def hash_file(self, path: Union[str, Path]) -> str:
        """分塊讀取文件並計算摘要"""
        try:
            hash_obj = hashlib.new(self.algorithm)
            with open(path, 'rb') as handle:
                for chunk in iter(lambda: handle.read(CHUNK_SIZE), b''):
                    hash_obj.update(chunk)
            return hash_obj.hexdigest()
        except OSError as e:
            raise InvalidInputError(f"文件哈希計算失敗: {e}") from e

    def hash_directory(self, directory: Union[str, Path]) -> Dict[str, str]:
        """目錄下所有文件（遞歸、按相對路徑排序）的摘要"""
        directory = Path(directory)
        if not directory.is_dir():
            raise InvalidInputError(f"目錄不存在: {directory}")
        return {
            path.relative_to(directory).as_posix(): self.hash_file(path)
            for path in sorted(directory.rglob('*'))
            if path.is_file() and not path.name.startswith('.')
        }

    def verify_file(self, path: Union[str, Path], expected: str) -> bool:
        return self.hash_file(path) == expected.lower()
