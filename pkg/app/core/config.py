from typing import Optional, Dict, Any, Type
from pydantic_settings import BaseSettings
from pydantic import Field
import os
import yaml
from dotenv import load_dotenv


class SaemSettings(BaseSettings):
    """SAEM 算法配置"""
    m: int = Field(default=20, description="每次迭代的蒙特卡洛样本数 M")
    max_iter: int = Field(default=400, description="最大迭代次数 W")
    cutoff: float = Field(default=0.25, description="无记忆阶段比例 c")
    inner_sweeps: int = Field(default=5, description="截断正态 Gibbs 每次抽样的扫描次数")
    tol: float = Field(default=1e-4, description="参数相对变化容差")
    patience: int = Field(default=3, description="连续满足容差的迭代次数")
    nu_lower: float = Field(default=1.01, description="自由度下界")
    nu_upper: float = Field(default=150.0, description="自由度上界")
    seed: int = Field(default=20240101, description="随机数种子")
    stream_id: int = Field(default=0, description="随机数流编号")

    class Config:
        env_prefix = "CARTP_"
        extra = "ignore"


class SimulationSettings(BaseSettings):
    """模拟研究配置"""
    jobs: int = Field(default=1, description="并行副本数")
    burnin: int = Field(default=200, description="生成序列时丢弃的预热长度")
    max_redraws: int = Field(default=100, description="前 p 个观测被删失时的最大重抽次数")
    missing_frac: float = Field(default=0.20, description="删失观测中转为缺失的比例")

    class Config:
        env_prefix = "CARTP_SIM_"
        extra = "ignore"


class StorageConfig(BaseSettings):
    """存储配置"""
    config_file: str = Field(default="config/default.yaml", description="配置文件路径")
    presets_file: str = Field(default="config/presets.yaml", description="模拟预设文件路径")
    output_dir: str = Field(default="output", description="默认输出目录")

    class Config:
        env_prefix = "STORAGE_"
        extra = "ignore"


class LogConfig(BaseSettings):
    """日志配置"""
    level: str = Field(default="INFO", description="日志级别")
    file: Optional[str] = Field(default=None, description="日志文件路径")

    class Config:
        env_prefix = "LOG_"
        extra = "ignore"


def load_yaml_config(config_file: str) -> Dict[str, Any]:
    """加载YAML配置文件

    Args:
        config_file: 配置文件路径

    Returns:
        配置字典
    """
    if not os.path.exists(config_file):
        return {}

    try:
        with open(config_file, 'r', encoding='utf-8') as f:
            return yaml.safe_load(f) or {}
    except Exception as e:
        print(f"加载配置文件失败: {e}")
        return {}


def apply_yaml_section(settings: BaseSettings, section: Dict[str, Any]) -> BaseSettings:
    """用YAML中的值填充未被环境变量设置的字段

    环境变量优先级高于YAML配置，YAML配置高于字段默认值。

    Args:
        settings: 已从环境变量构造的配置实例
        section: YAML中对应的配置段

    Returns:
        合并后的配置实例
    """
    prefix = settings.model_config.get('env_prefix', '')
    updates = {}
    for name in type(settings).model_fields:
        if name not in section:
            continue
        if os.getenv(f"{prefix}{name}".upper()) is not None:
            continue
        updates[name] = section[name]
    if not updates:
        return settings
    # 重新校验，确保YAML中的类型错误能被发现
    merged = settings.model_dump()
    merged.update(updates)
    return type(settings).model_validate(merged)


class AppConfig(BaseSettings):
    """应用全局配置"""
    saem: SaemSettings = SaemSettings()
    simulation: SimulationSettings = SimulationSettings()
    storage: StorageConfig = StorageConfig()
    log: LogConfig = LogConfig()

    class Config:
        env_nested_delimiter = "__"
        case_sensitive = False


def build_config(config_file: Optional[str] = None) -> AppConfig:
    """构造应用配置

    Args:
        config_file: YAML配置文件路径，默认取 STORAGE_CONFIG_FILE 或 config/default.yaml

    Returns:
        应用配置实例
    """
    # .env 中的变量不覆盖已存在的环境变量
    load_dotenv(override=False)
    storage_config = StorageConfig()
    yaml_config = load_yaml_config(config_file or storage_config.config_file)

    sections: Dict[str, Type[BaseSettings]] = {
        'saem': SaemSettings,
        'simulation': SimulationSettings,
        'storage': StorageConfig,
        'log': LogConfig,
    }
    built = {}
    for key, settings_cls in sections.items():
        built[key] = apply_yaml_section(settings_cls(), yaml_config.get(key, {}) or {})

    return AppConfig(**built)


# 创建最终的配置实例
config = build_config()
