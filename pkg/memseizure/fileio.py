"""原子寫文件：先寫到目標目錄裡的臨時文件，再 os.replace"""

import csv
import io
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence, Union

PathLike = Union[str, Path]


def atomic_write_bytes(path: PathLike, data: bytes) -> Path:
    """寫入字節數據；失敗時不留下半寫的文件"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.NamedTemporaryFile(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp", delete=False) as temp_file:
        temp_file.write(data)
        temp_path = temp_file.name
    try:
        os.replace(temp_path, path)
    except OSError:
        os.unlink(temp_path)
        raise
    return path


def atomic_write_text(path: PathLike, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """CSV 使用 \\n 換行，浮點數用 repr 保證重跑時字節一致"""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(value)) if isinstance(value, float) else value for value in row])
    return atomic_write_text(path, buffer.getvalue())
