import sys
from pathlib import Path
from loguru import logger
from src.config import config


def setup_logger(level: str = None, log_dir: str = None):
    """
    配置日志

    Args:
        level: 日志级别，为空时读取配置
        log_dir: 日志目录，为空时读取配置
    """
    level = level or config.get('logging.level', 'INFO')
    log_format = config.get(
        'logging.format', '{time:YYYY-MM-DD HH:mm:ss} - {name} - {level} - {message}'
    )

    # 创建日志目录
    log_path = Path(log_dir or config.get('logging.dir', 'logs'))
    log_path.mkdir(parents=True, exist_ok=True)
    log_file = log_path / config.get('logging.filename', 'app.log')

    # 移除默认处理器
    logger.remove()

    # 添加控制台处理器
    if config.get('logging.console', True):
        logger.add(
            sys.stderr,
            format=log_format,
            level=level,
            colorize=True
        )

    # 添加文件处理器
    logger.add(
        str(log_file),
        format=log_format,
        level=level,
        rotation=config.get('logging.rotation', '10 MB'),
        retention=config.get('logging.retention', '30 days'),
        compression=config.get('logging.compression', 'zip'),
        encoding=config.get('data.file_encoding', 'utf-8')
    )
    return logger
