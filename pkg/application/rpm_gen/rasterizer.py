import math
from typing import Optional

import numpy as np
from PIL import Image, ImageDraw

from rpm_gen.models import GRID_SLOTS, AttributeVector, PanelConfig, ShapeType

MIN_IMAGE_SIZE = 16
BACKGROUND = 255
OUTLINE = 0

SIDES = {
    ShapeType.TRIANGLE: 3,
    ShapeType.SQUARE: 4,
    ShapeType.PENTAGON: 5,
    ShapeType.HEXAGON: 6,
}


def fill_gray(fill_level: int) -> int:
    """Уровень 1 - белая заливка, уровень 5 - почти чёрная."""
    return BACKGROUND - (fill_level - 1) * 51


def slot_centers(config: PanelConfig, image_size: int) -> list[tuple[float, float]]:
    half = image_size / 2.0
    if config is PanelConfig.CENTER:
        return [(half, half)]
    quarter = image_size / 4.0
    return [
        (quarter + (slot % 2) * half, quarter + (slot // 2) * half)
        for slot in range(GRID_SLOTS)
    ]


def shape_radius(size_level: int, config: PanelConfig, image_size: int) -> float:
    slot_half = 0.9 * image_size / (2.0 if config is PanelConfig.CENTER else 4.0)
    return slot_half * (0.3 + 0.13 * size_level)


def polygon(
    sides: int, cx: float, cy: float, radius: float
) -> list[tuple[float, float]]:
    # Первая вершина вверху, фигуры стоят на основании.
    start = -math.pi / 2.0
    if sides % 2 == 0:
        start += math.pi / sides
    return [
        (
            cx + radius * math.cos(start + 2.0 * math.pi * k / sides),
            cy + radius * math.sin(start + 2.0 * math.pi * k / sides),
        )
        for k in range(sides)
    ]


def rasterize(
    attrs: AttributeVector,
    image_size: int,
    rng: Optional[np.random.Generator] = None,
    config: Optional[PanelConfig] = None,
) -> np.ndarray:
    """
    Рисует панель: контуры фигур в занятых слотах на белом фоне.
    Args:
        attrs (AttributeVector): Атрибуты панели.
        image_size (int): Сторона изображения в пикселях, не меньше 16.
        rng (Optional[np.random.Generator]): Источник сдвига центра на ±1 пиксель;
            без него сдвига нет.
        config (Optional[PanelConfig]): Раскладка; по умолчанию Center для
            одиночной фигуры в первом слоте и Grid2x2 иначе.
    Returns:
        np.ndarray: [S, S] uint8.
    Raises:
        ValueError: Если image_size меньше 16.
    """
    if image_size < MIN_IMAGE_SIZE:
        raise ValueError(
            f"Размер панели должен быть >= {MIN_IMAGE_SIZE}, получено {image_size}"
        )
    if config is None:
        single = attrs.fits(PanelConfig.CENTER)
        config = PanelConfig.CENTER if single else PanelConfig.GRID2X2
    image = Image.new("L", (image_size, image_size), BACKGROUND)
    draw = ImageDraw.Draw(image)
    radius = shape_radius(attrs.size_level, config, image_size)
    gray = fill_gray(attrs.fill_level)
    for slot, (cx, cy) in enumerate(slot_centers(config, image_size)):
        if not attrs.position_mask >> slot & 1:
            continue
        if rng is not None:
            dx, dy = rng.integers(-1, 2, size=2)
            cx, cy = cx + int(dx), cy + int(dy)
        if attrs.shape_type is ShapeType.CIRCLE:
            box = (cx - radius, cy - radius, cx + radius, cy + radius)
            draw.ellipse(box, fill=gray, outline=OUTLINE)
        else:
            points = polygon(SIDES[attrs.shape_type], cx, cy, radius)
            draw.polygon(points, fill=gray, outline=OUTLINE)
    return np.asarray(image, dtype=np.uint8).copy()
