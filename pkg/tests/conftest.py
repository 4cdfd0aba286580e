import numpy as np
import pytest

from disfluent.model import ConvBlockSpec, ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def mini_config():
    """Two blocks, 8 recurrent units: the miniature gradcheck architecture."""
    return ModelConfig(
        input_freq_bins=16,
        stem_channels=4,
        stem_kernel=3,
        block_specs=(ConvBlockSpec((3, 4, 4), (2, 2)),
                     ConvBlockSpec((4, 6, 6), (2, 2))),
        recurrent_units=8,
        recurrent_layers=2,
        dropout_rates=(0.0, 0.0),
    )


@pytest.fixture
def tiny_pipeline_config():
    """Small-but-complete model for fast CLI and pipeline tests: accepts the
    canonical 257-bin spectrograms but with few channels and units."""
    return ModelConfig(
        input_freq_bins=256,
        stem_channels=8,
        stem_kernel=3,
        block_specs=(ConvBlockSpec((8, 8, 8), (2, 2)),
                     ConvBlockSpec((8, 8, 8), (2, 2)),
                     ConvBlockSpec((8, 8, 8), (2, 2))),
        recurrent_units=16,
        recurrent_layers=2,
        dropout_rates=(0.2, 0.4),
    )
