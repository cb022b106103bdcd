"""
文件锁与原子写入模块
"""
import os
import tempfile
from pathlib import Path
from typing import Union

import portalocker
from loguru import logger
from tenacity import retry, stop_after_attempt, wait_exponential, retry_if_exception_type

from src.config import config


class FileLock:
    """跨平台文件锁，锁文件为 `<path>.lock`，释放后保留"""

    def __init__(self, file_path: Union[str, Path]):
        self.file_path = str(file_path)
        self.lock_file = f"{self.file_path}.lock"
        self.lock = None

    @retry(
        stop=stop_after_attempt(config.get('data.lock_retry_times', 3)),
        wait=wait_exponential(multiplier=config.get('data.lock_retry_interval', 1), min=0, max=10),
        retry=retry_if_exception_type((portalocker.LockException, OSError)),
        reraise=True
    )
    def _acquire(self):
        lock_dir = os.path.dirname(self.lock_file)
        if lock_dir:
            os.makedirs(lock_dir, exist_ok=True)
        self.lock = open(self.lock_file, 'a')
        try:
            portalocker.lock(self.lock, portalocker.LOCK_EX | portalocker.LOCK_NB)
        except (portalocker.LockException, OSError) as e:
            logger.warning(f"获取文件锁失败: {self.lock_file}, {str(e)}")
            self.lock.close()
            self.lock = None
            raise

    def __enter__(self):
        self._acquire()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        try:
            if self.lock:
                portalocker.unlock(self.lock)
                self.lock.close()
                self.lock = None
        except OSError as e:
            # 释放失败不影响主流程
            logger.warning(f"释放文件锁失败: {str(e)}")


def atomic_write_text(path: Union[str, Path], text: str) -> Path:
    """
    原子写入文本文件（临时文件 + 重命名）

    Args:
        path: 目标路径
        text: 文件内容

    Returns:
        Path: 写入的文件路径
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    encoding = config.get('data.file_encoding', 'utf-8')
    with FileLock(path):
        fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=str(path.parent))
        try:
            with os.fdopen(fd, 'w', encoding=encoding, newline='') as f:
                f.write(text)
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp_name, path)
        except BaseException:
            if os.path.exists(tmp_name):
                os.remove(tmp_name)
            raise
    logger.debug(f"已写入文件: {path}")
    return path
