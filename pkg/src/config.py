"""
配置加载模块
"""
import os
import yaml
from typing import Dict, Any, Optional
from dotenv import load_dotenv

# 允许通过 .env 指定配置文件路径
load_dotenv()

CONFIG_ENV_KEY = 'INFLUENCE_ATTACK_CONFIG'


class Config:
    """配置管理类"""
    _instance = None
    _config: Dict[str, Any] = {}

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super(Config, cls).__new__(cls)
        return cls._instance

    def __init__(self):
        self.config = {}
        self.config_path: Optional[str] = None
        self.load_config()

    def load_config(self, config_path: Optional[str] = None):
        """
        加载配置文件

        Args:
            config_path: 配置文件路径，为空时依次尝试环境变量、config.yaml、config.example.yaml
        """
        candidates = [
            config_path,
            os.environ.get(CONFIG_ENV_KEY),
            os.path.join('config', 'config.yaml'),
            os.path.join('config', 'config.example.yaml'),
        ]
        for path in candidates:
            if path and os.path.exists(path):
                with open(path, 'r', encoding='utf-8') as f:
                    self.config = yaml.safe_load(f) or {}
                self.config_path = path
                return
        # 找不到配置文件时使用内置默认值
        self.config = {}
        self.config_path = None

    def get(self, key: str, default: Any = None) -> Any:
        """获取配置值"""
        keys = key.split('.')
        value = self.config
        for k in keys:
            if isinstance(value, dict):
                value = value.get(k)
            else:
                return default
            if value is None:
                return default
        return value


# 创建全局配置实例
config = Config()
