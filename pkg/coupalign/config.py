import hashlib
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, computed_field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict
from sqlalchemy import make_url

from coupalign.utils.errors import ConfigError


class DatabaseConfig(BaseSettings):
    """运行记录数据库配置类"""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore"
    )

    url: str = Field(default="sqlite:///./coupalign.db", alias="DATABASE_URL")

    def __str__(self) -> str:
        """返回不包含密码的连接信息"""
        return make_url(self.url).render_as_string(hide_password=True)


class AppConfig(BaseSettings):
    """应用配置类"""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore"
    )

    debug: bool = Field(default=False, alias="DEBUG")
    log_level: str = Field(default="INFO", alias="LOG_LEVEL")
    registry_enabled: bool = Field(default=True, alias="REGISTRY_ENABLED")
    api_host: str = Field(default="127.0.0.1", alias="API_HOST")
    api_port: int = Field(default=8000, alias="API_PORT")
    model_cache_size: int = Field(default=4, ge=1, alias="MODEL_CACHE_SIZE")

    @computed_field
    @property
    def database(self) -> DatabaseConfig:
        """数据库配置"""
        return DatabaseConfig()


# 创建全局配置实例
config = AppConfig()


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class DataConfig(_Section):
    dir: str = "data"
    height: int = Field(64, gt=0)
    width: int = Field(64, gt=0)
    t_max: int = Field(16, gt=1)
    n_train: int = Field(500, gt=0)
    n_val: int = Field(100, gt=0)
    n_test: int = Field(100, gt=0)


class ModelConfig(_Section):
    patch_size: int = Field(4, gt=0)
    c1: int = Field(16, gt=0, description="第 1 级视觉通道数 C_1")
    d_lang: int = Field(32, gt=0, description="语言隐藏维度 D")
    d_joint: int = Field(32, gt=0, description="WPA 联合嵌入维度 d")
    d_q: int = Field(32, gt=0, description="掩码生成器隐藏维度")
    d_s: int = Field(16, gt=0, description="分割头通道数")
    n_queries: int = Field(16, description="掩码提议数 N")
    heads: int = Field(2, gt=0)
    mlp_ratio: int = Field(2, gt=0)
    decoder_layers: int = Field(2, gt=0)
    rho_order: Literal["relu_bn", "bn_relu"] = "relu_bn"
    precision: Literal["f32", "f64"] = "f32"


class WpaConfig(_Section):
    mode: Literal["bi", "uni", "off"] = "bi"
    stages: list[int] = Field(default_factory=lambda: [1, 2, 3, 4])

    @field_validator("stages", mode="before")
    @classmethod
    def _split_stages(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [int(part) for part in value.replace(" ", "").split(",") if part]
        return value

    @field_validator("stages")
    @classmethod
    def _check_stages(cls, value: list[int]) -> list[int]:
        if any(stage not in (1, 2, 3, 4) for stage in value):
            raise ValueError(f"WPA 阶段必须属于 1..4，实际 {value}")
        return sorted(set(value))

    def enabled(self, stage: int) -> bool:
        return self.mode != "off" and stage in self.stages


class FusionConfig(_Section):
    heads: int = Field(2, gt=0)


class SmaConfig(_Section):
    enabled: bool = True


class AuxConfig(_Section):
    enabled: bool = True
    normalize: bool = True


class LossConfig(_Section):
    lam: float = Field(0.1, ge=0, description="辅助损失权重 λ")
    tau: float = Field(0.07, gt=0, description="InfoNCE 温度 τ")


class OptimConfig(_Section):
    lr0: float = Field(3e-5, ge=0)
    lr_end: float = Field(1.5e-5, ge=0)
    max_decay_epoch: float = Field(25, gt=0)
    power: float = Field(0.9, gt=0)
    weight_decay: float = Field(0.01, ge=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)

    @model_validator(mode="after")
    def _check_lr(self) -> "OptimConfig":
        if self.lr_end > self.lr0:
            raise ValueError(f"lr_end ({self.lr_end}) 不能大于 lr0 ({self.lr0})")
        return self


class ScheduleConfig(_Section):
    epochs: int = Field(30, gt=0)
    batch_size: int = Field(16, gt=0)


class RunConfig(_Section):
    seed: int = Field(0, ge=0, lt=2 ** 64)

    seed: int = 0
    data: DataConfig = Field(default_factory=DataConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    wpa: WpaConfig = Field(default_factory=WpaConfig)
    fusion: FusionConfig = Field(default_factory=FusionConfig)
    sma: SmaConfig = Field(default_factory=SmaConfig)
    aux: AuxConfig = Field(default_factory=AuxConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    optim: OptimConfig = Field(default_factory=OptimConfig)
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)

    @model_validator(mode="after")
    def _check_geometry(self) -> "RunConfig":
        unit = 16 * self.model.patch_size
        if self.data.height % unit or self.data.width % unit:
            raise ValueError(f"输入尺寸 {self.data.height}x{self.data.width} 必须能被 {unit} 整除")
        if self.model.n_queries < 1:
            raise ValueError(f"掩码提议数 N 必须 >= 1，实际 {self.model.n_queries}")
        for name, dim in (("d_lang", self.model.d_lang), ("d_q", self.model.d_q), ("c1", self.model.c1)):
            if dim % self.model.heads:
                raise ValueError(f"model.{name}={dim} 必须能被 heads={self.model.heads} 整除")
        if self.model.d_lang % self.fusion.heads:
            raise ValueError(f"model.d_lang 必须能被 fusion.heads={self.fusion.heads} 整除")
        return self

    def flatten(self) -> dict[str, Any]:
        return _flatten(self.model_dump())

    def resolved_text(self) -> str:
        lines = []
        for key, value in sorted(self.flatten().items()):
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = str(value).lower()
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.resolved_text().encode("utf-8")).hexdigest()

    def with_overrides(self, overrides: dict[str, Any]) -> "RunConfig":
        merged = _flatten(self.model_dump())
        merged.update(overrides)
        return build_run_config(merged)


def _flatten(tree: dict[str, Any], prefix: str = "") -> dict[str, Any]:
    flat: dict[str, Any] = {}
    for key, value in tree.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, f"{name}."))
        else:
            flat[name] = value
    return flat


def _nest(flat: dict[str, Any]) -> dict[str, Any]:
    tree: dict[str, Any] = {}
    for key, value in flat.items():
        node = tree
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"配置键冲突: {key}")
        node[parts[-1]] = value
    return tree


def parse_config_text(text: str, source: str = "<text>") -> dict[str, str]:
    """解析 `key = value` 格式的配置文本，# 开头为注释"""
    values: dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}: 缺少 '=': {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{number}: 键为空")
        values[key] = value
    return values


def build_run_config(flat: dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(_nest(flat))
    except ValidationError as e:
        raise ConfigError(f"配置无效: {e}") from e


def load_run_config(path: Optional[Path] = None, overrides: Optional[dict[str, Any]] = None) -> RunConfig:
    """默认值 < 配置文件 < 命令行覆盖"""
    flat: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"配置文件不存在: {path}")
        flat.update(parse_config_text(path.read_text(encoding="utf-8"), str(path)))
    flat.update(overrides or {})
    return build_run_config(flat)
