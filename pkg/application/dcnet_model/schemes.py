from enum import Enum

from pydantic import BaseModel, Field, field_validator, model_validator

ENCODER_DOWNSAMPLE = 4


class Ablation(str, Enum):
    """Варианты модели для абляции: полный и без одного из контрастных модулей."""

    FULL = "full"
    NO_RULE_CONTRAST = "no_rule_contrast"
    NO_CHOICE_CONTRAST = "no_choice_contrast"


class DCNetConfig(BaseModel):
    """
    Конфигурация DCNet.
    Attrs:
        image_size (int): Сторона панели; кратна 4, не меньше 16.
        channels (tuple[int, int]): Каналы первого слоя и остаточного блока.
        pooled_size (int): Сторона карты признаков после адаптивного пулинга.
        mlp_input_dim (int): Вход MLP, равен channels[-1] * pooled_size ** 2.
        hidden_dim (int): Скрытый слой MLP.
        dropout_p (float): Вероятность dropout в MLP.
        ablation (Ablation): Отключаемый контрастный модуль.
        identity_phi (bool): Заменить адаптивный блок выбора тождественным
            (только для проверок, не для обучения).
        zero_head (bool): Инициализировать последний линейный слой нулями.
        seed (int): Зерно инициализации весов и dropout.
    """

    image_size: int = Field(default=32, ge=16)
    channels: tuple[int, int] = (64, 128)
    pooled_size: int = Field(default=2, ge=1)
    mlp_input_dim: int = 512
    hidden_dim: int = Field(default=256, ge=1)
    dropout_p: float = Field(default=0.5, ge=0.0, lt=1.0)
    ablation: Ablation = Ablation.FULL
    identity_phi: bool = False
    zero_head: bool = True
    seed: int = Field(default=0, ge=0)

    @field_validator("image_size")
    @classmethod
    def check_image_size(cls, value: int) -> int:
        if value % ENCODER_DOWNSAMPLE:
            raise ValueError(f"image_size должен делиться на 4, получено {value}")
        return value

    @model_validator(mode="after")
    def check_mlp_input(self) -> "DCNetConfig":
        pooled = self.channels[-1] * self.pooled_size**2
        if self.mlp_input_dim != pooled:
            raise ValueError(
                f"mlp_input_dim={self.mlp_input_dim}, а пулинг даёт {pooled}"
            )
        if self.pooled_size > self.image_size // ENCODER_DOWNSAMPLE:
            raise ValueError("pooled_size больше карты признаков энкодера")
        return self

    @property
    def feature_size(self) -> int:
        return self.image_size // ENCODER_DOWNSAMPLE
