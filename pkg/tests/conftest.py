from __future__ import annotations

import numpy as np
import pytest

from stationwatch import RawTensorSet, TensorStreamHeader

BACKGROUND_LOGIT = -20.0


def _background_frame(header: TensorStreamHeader, index: int) -> RawTensorSet:
    """A frame whose every cell is dead: no detections at any threshold."""
    outputs = []
    for level in range(3):
        grid_h, grid_w = header.grid_shape(level)
        grid = np.zeros((grid_h, grid_w, header.channels), dtype=np.float32)
        grid[..., 4:] = BACKGROUND_LOGIT
        outputs.append(grid)
    return RawTensorSet(
        frame_index=index,
        outputs=tuple(outputs),
        image_width=header.image_width,
        image_height=header.image_height,
    )


@pytest.fixture
def background_frame():
    return _background_frame
