"""Per-class binary detector: residual conv stack + bidirectional LSTM head.

The conv module is a 7x7/64 stem followed by six blocks of three 3x3
convolutions, each conv wrapped in batch norm + ReLU, with an additive skip
per block (identity when shapes match, else a 1x1 stride-matched projection
with its own batch norm). Block outputs walk the channel/stride schedule
32-64-64 / ... / 32-16-16 so a 256-bin input leaves the stack at 8 frequency
rows, 16 channels, and 1/64 of the input frames.

Each time step's (channels x freq) slab is flattened into the recurrent
input; two bidirectional LSTM layers follow, with dropout after each. The
classifier reads the last layer's endpoint states (final forward state and
the position-0 backward state) through a dense layer to 2-way softmax.

Parameter naming (stable, used by the checkpoint format):
  stem.conv.w / stem.conv.b / stem.bn.gamma / stem.bn.beta
  block{k}.conv{j}.w|b and block{k}.bn{j}.gamma|beta   (k, j 1-based)
  block{k}.proj.conv.w|b and block{k}.proj.bn.gamma|beta
  lstm{l}.fwd.W|R|b and lstm{l}.bwd.W|R|b              (l 1-based)
  head.w / head.b
Batch-norm running statistics ride along as <bn>.run_mean / <bn>.run_var.
"""

from contextlib import nullcontext
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import InvalidConfig, ShapeMismatch
from .tensor import Tensor, dropout, no_grad

STUTTER_CLASSES = ("S", "W", "PH", "R", "I", "PR")


@dataclass(frozen=True)
class ConvBlockSpec:
    """Three conv widths and the stride applied by the block's first conv."""

    channels: tuple[int, int, int]
    stride: tuple[int, int]


CANONICAL_BLOCKS = (
    ConvBlockSpec((32, 64, 64), (2, 2)),
    ConvBlockSpec((64, 128, 128), (2, 2)),
    ConvBlockSpec((128, 128, 128), (1, 2)),
    ConvBlockSpec((128, 64, 64), (2, 2)),
    ConvBlockSpec((64, 64, 32), (2, 2)),
    ConvBlockSpec((32, 16, 16), (2, 2)),
)


@dataclass(frozen=True)
class ModelConfig:
    input_freq_bins: int = 256
    stem_channels: int = 64
    stem_kernel: int = 7
    block_specs: tuple = CANONICAL_BLOCKS
    recurrent_units: int = 512
    recurrent_layers: int = 2
    dropout_rates: tuple = (0.2, 0.4)
    num_classes: int = 2

    def validate(self) -> None:
        if not self.block_specs:
            raise InvalidConfig("at least one conv block required")
        for spec in self.block_specs:
            if len(spec.channels) != 3:
                raise InvalidConfig(f"block channels must be a triple: {spec}")
            if spec.stride[0] not in (1, 2) or spec.stride[1] not in (1, 2):
                raise InvalidConfig(f"block strides must be 1 or 2: {spec}")
        if self.recurrent_layers != len(self.dropout_rates):
            raise InvalidConfig("need one dropout rate per recurrent layer")
        if self.recurrent_units < 1 or self.num_classes < 2:
            raise InvalidConfig("recurrent_units >= 1 and num_classes >= 2")
        if self.input_freq_bins % self.freq_reduction:
            raise InvalidConfig(
                f"input_freq_bins {self.input_freq_bins} not divisible by the "
                f"frequency reduction {self.freq_reduction}"
            )

    @property
    def freq_reduction(self) -> int:
        out = 1
        for spec in self.block_specs:
            out *= spec.stride[0]
        return out

    @property
    def time_reduction(self) -> int:
        out = 1
        for spec in self.block_specs:
            out *= spec.stride[1]
        return out

    def conv_layer_count(self, include_stem: bool = False,
                         include_projections: bool = False) -> int:
        """Convolution depth of the feature extractor.

        The default convention counts the residual blocks' convolutions only:
        the stem and the 1x1 skip projections are excluded, giving 18 for the
        canonical six-block configuration.
        """
        count = 3 * len(self.block_specs)
        if include_stem:
            count += 1
        if include_projections:
            count += sum(1 for _ in self._projection_blocks())
        return count

    def _projection_blocks(self):
        in_ch = self.stem_channels
        for spec in self.block_specs:
            if in_ch != spec.channels[2] or spec.stride != (1, 1):
                yield spec
            in_ch = spec.channels[2]


class StutterDetector:
    """One binary detector; the same architecture serves every class label."""

    def __init__(self, class_label: str, config: ModelConfig = ModelConfig(),
                 seed: int = 0):
        if class_label not in STUTTER_CLASSES:
            raise InvalidConfig(f"unknown class label {class_label!r}")
        config.validate()
        self.class_label = class_label
        self.config = config
        self.params: dict[str, Tensor] = {}
        self.state: dict[str, np.ndarray] = {}
        self._init_params(np.random.default_rng(seed))

    # -- construction -----------------------------------------------------------

    def _add_param(self, name, data):
        self.params[name] = Tensor(data, requires_grad=True)

    def _add_conv(self, name, c_out, c_in, k):
        # no conv biases: every convolution feeds a batch norm whose shift
        # subsumes them
        self._add_param(f"{name}.w",
                        nn.he_uniform(self._rng, (c_out, c_in, k, k),
                                      fan_in=c_in * k * k))

    def _add_bn(self, name, c):
        self._add_param(f"{name}.gamma", np.ones(c, dtype=np.float32))
        self._add_param(f"{name}.beta", np.zeros(c, dtype=np.float32))
        self.state[f"{name}.run_mean"] = np.zeros(c, dtype=np.float32)
        self.state[f"{name}.run_var"] = np.ones(c, dtype=np.float32)

    def _init_params(self, rng):
        self._rng = rng
        cfg = self.config
        self._add_conv("stem.conv", cfg.stem_channels, 1, cfg.stem_kernel)
        self._add_bn("stem.bn", cfg.stem_channels)

        in_ch = cfg.stem_channels
        for k, spec in enumerate(cfg.block_specs, start=1):
            c1, c2, c3 = spec.channels
            self._add_conv(f"block{k}.conv1", c1, in_ch, 3)
            self._add_bn(f"block{k}.bn1", c1)
            self._add_conv(f"block{k}.conv2", c2, c1, 3)
            self._add_bn(f"block{k}.bn2", c2)
            self._add_conv(f"block{k}.conv3", c3, c2, 3)
            self._add_bn(f"block{k}.bn3", c3)
            if in_ch != c3 or spec.stride != (1, 1):
                self._add_conv(f"block{k}.proj.conv", c3, in_ch, 1)
                self._add_bn(f"block{k}.proj.bn", c3)
            in_ch = c3

        u = cfg.recurrent_units
        dim = self.lstm_input_dim
        for layer in range(1, cfg.recurrent_layers + 1):
            for direction in ("fwd", "bwd"):
                w, r, b = nn.lstm_init(rng, u, dim)
                self._add_param(f"lstm{layer}.{direction}.W", w)
                self._add_param(f"lstm{layer}.{direction}.R", r)
                self._add_param(f"lstm{layer}.{direction}.b", b)
            dim = 2 * u

        self._add_param("head.w",
                        nn.he_uniform(rng, (2 * u, cfg.num_classes),
                                      fan_in=2 * u))
        self._add_param("head.b", np.zeros(cfg.num_classes, dtype=np.float32))
        del self._rng

    @property
    def lstm_input_dim(self) -> int:
        cfg = self.config
        final_freq = cfg.input_freq_bins // cfg.freq_reduction
        return cfg.block_specs[-1].channels[2] * final_freq

    # -- forward ----------------------------------------------------------------

    def conv_module_forward(self, x: Tensor, mode: str = "eval") -> Tensor:
        """Residual conv stack on (N,C,H,W); H must divide by the frequency
        reduction and W by the time reduction."""
        n, c, h, w = x.data.shape
        self._check_extents(h, w)
        out = self._conv_stack(x.permute(1, 0, 2, 3), mode)
        return out.permute(1, 0, 2, 3)

    def _check_extents(self, h, w):
        cfg = self.config
        if h % cfg.freq_reduction or w % cfg.time_reduction:
            raise ShapeMismatch(
                f"conv module needs H divisible by {cfg.freq_reduction} and "
                f"W by {cfg.time_reduction}, got {h}x{w}"
            )

    def _conv_stack(self, x: Tensor, mode: str, bn_momentum=None) -> Tensor:
        """Channel-major (C,N,H,W) residual stack, the layout of the batched
        GEMM conv path."""
        cfg = self.config
        pad = cfg.stem_kernel // 2
        out = nn.conv2d_cnhw(x, self.params["stem.conv.w"],
                             stride=(1, 1), padding=(pad, pad))
        out = self._bn("stem.bn", out, mode, bn_momentum).relu()
        for k, spec in enumerate(cfg.block_specs, start=1):
            out = self._block(k, spec, out, mode, bn_momentum)
        return out

    def _bn(self, name, x, mode, momentum=None):
        return nn.batch_norm(x, self.params[f"{name}.gamma"],
                             self.params[f"{name}.beta"],
                             self.state[f"{name}.run_mean"],
                             self.state[f"{name}.run_var"], mode,
                             momentum=0.9 if momentum is None else momentum,
                             channel_axis=0)

    def _block(self, k, spec, x, mode, bn_momentum=None):
        p = self.params
        out = nn.conv2d_cnhw(x, p[f"block{k}.conv1.w"],
                             stride=spec.stride, padding=(1, 1))
        out = self._bn(f"block{k}.bn1", out, mode, bn_momentum).relu()
        out = nn.conv2d_cnhw(out, p[f"block{k}.conv2.w"],
                             stride=(1, 1), padding=(1, 1))
        out = self._bn(f"block{k}.bn2", out, mode, bn_momentum).relu()
        out = nn.conv2d_cnhw(out, p[f"block{k}.conv3.w"],
                             stride=(1, 1), padding=(1, 1))
        out = self._bn(f"block{k}.bn3", out, mode, bn_momentum)

        if f"block{k}.proj.conv.w" in p:
            skip = nn.conv2d_cnhw(x, p[f"block{k}.proj.conv.w"],
                                  stride=spec.stride, padding=(0, 0))
            skip = self._bn(f"block{k}.proj.bn", skip, mode, bn_momentum)
        else:
            skip = x
        return (out + skip).relu()

    def reset_running_stats(self) -> None:
        for name, arr in self.state.items():
            arr[...] = 1.0 if name.endswith("run_var") else 0.0

    def accumulate_running_stats(self, batch, batch_index: int) -> None:
        """One cumulative-average update of the batch-norm running
        statistics from a (N,1,F,T) batch; no parameters change.

        Feeding batches with batch_index = 0..B-1 leaves the running
        buffers at the plain mean of the per-batch statistics, removing the
        warm-up bias of the momentum-0.9 updates after short trainings.
        """
        x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch, dtype=np.float32))
        n, _, f, t = x.data.shape
        if f % 2:
            x = x.narrow(2, 0, f - 1)
            f -= 1
        pad_t = (-t) % self.config.time_reduction
        if pad_t:
            zeros = Tensor(np.zeros((n, 1, f, pad_t), dtype=x.dtype))
            x = nn.concat([x, zeros], dim=3)
        momentum = batch_index / (batch_index + 1.0)
        with no_grad():
            self._conv_stack(x.permute(1, 0, 2, 3), "train", momentum)

    def forward_logits(self, batch, mode: str = "eval", rng=None) -> Tensor:
        """(N,1,F,T) spectrogram batch -> (N,num_classes) logits.

        An odd frequency extent drops its top (Nyquist) row; time is
        right-padded with zeros to the next multiple of the reduction factor.
        """
        x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch, dtype=np.float32))
        if x.data.ndim != 4 or x.data.shape[1] != 1:
            raise ShapeMismatch(f"expected (N,1,F,T), got {x.shape}")
        n, _, f, t = x.data.shape
        if f % 2:
            x = x.narrow(2, 0, f - 1)
            f -= 1
        cfg = self.config
        if f != cfg.input_freq_bins:
            raise ShapeMismatch(
                f"frequency extent {f} != configured {cfg.input_freq_bins}"
            )
        pad_t = (-t) % cfg.time_reduction
        if pad_t:
            zeros = Tensor(np.zeros((n, 1, f, pad_t), dtype=x.dtype))
            x = nn.concat([x, zeros], dim=3)

        ctx = no_grad() if mode == "eval" else nullcontext()
        with ctx:
            self._check_extents(f, t + pad_t)
            out = self._conv_stack(x.permute(1, 0, 2, 3), mode)
            ch, nb, fr, steps = out.data.shape
            seq = out.permute(1, 3, 0, 2).reshape(nb, steps, ch * fr)

            u = cfg.recurrent_units
            for layer in range(1, cfg.recurrent_layers + 1):
                fwd = self._lstm_params(layer, "fwd")
                bwd = self._lstm_params(layer, "bwd")
                seq = nn.bilstm_layer(seq, fwd, bwd)
                last = layer == cfg.recurrent_layers
                if not last:
                    seq = dropout(seq, cfg.dropout_rates[layer - 1], mode, rng)
            t_len = seq.data.shape[1]
            h_fwd_end = seq.narrow(1, t_len - 1, 1).narrow(2, 0, u).reshape(nb, u)
            h_bwd_start = seq.narrow(1, 0, 1).narrow(2, u, u).reshape(nb, u)
            feats = nn.concat([h_fwd_end, h_bwd_start], dim=1)
            feats = dropout(feats, cfg.dropout_rates[-1], mode, rng)
            return nn.dense(feats, self.params["head.w"], self.params["head.b"])

    def forward(self, batch, mode: str = "eval", rng=None) -> np.ndarray:
        """Class probabilities (N,num_classes); rows sum to 1."""
        logits = self.forward_logits(batch, mode, rng)
        return nn.softmax(logits.data)

    def _lstm_params(self, layer, direction):
        p = self.params
        return {"W": p[f"lstm{layer}.{direction}.W"],
                "R": p[f"lstm{layer}.{direction}.R"],
                "b": p[f"lstm{layer}.{direction}.b"]}

    # -- persistence ------------------------------------------------------------

    def param_arrays(self) -> dict[str, np.ndarray]:
        arrays = {name: t.data for name, t in self.params.items()}
        arrays.update(self.state)
        return arrays

    def load_param_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self.params.items():
            if name not in arrays:
                raise InvalidConfig(f"checkpoint missing parameter {name!r}")
            if arrays[name].shape != t.data.shape:
                raise InvalidConfig(
                    f"checkpoint shape {arrays[name].shape} != {t.data.shape} "
                    f"for {name!r}"
                )
            t.data = arrays[name].astype(np.float32)
        for name in self.state:
            if name in arrays:
                self.state[name] = arrays[name].astype(np.float32)


def build_model(config: ModelConfig, rng_seed: int,
                class_label: str = "S") -> StutterDetector:
    """Allocate and initialize one detector; same seed, same parameters."""
    return StutterDetector(class_label, config, seed=rng_seed)
