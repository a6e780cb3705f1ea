"""U-Former: convolutional U-Net over RI spectrograms with attention at the
bottleneck and on every skip connection, followed by a learnable overlap-add
synthesis decoder."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import dsp
from . import tensor as tt
from .attention import MHCA, MHSA
from .tensor import Tensor
from .tensor.conv import conv_output_size
from .tensor.nn import BatchNorm2d, Conv2d, ConvTranspose2d, Module, parameter


@dataclass
class UFormerConfig:
    enc_channels: list[int] = field(default_factory=lambda: [16, 32, 64, 128, 256])
    # the last entry counts complex output channels; each becomes a real/imag pair
    dec_channels: list[int] = field(default_factory=lambda: [128, 64, 32, 16, 1])
    kernel: tuple[int, int] = (3, 5)
    stride: tuple[int, int] = (1, 2)
    leaky_slope: float = 0.2
    heads: int = 4
    span: int = 7
    alpha: float = 0.8
    use_mhsa: bool = True
    use_mhca: bool = True
    fft_size: int = 512
    hop: int = 256
    value_pos_sign: float = -1.0
    attn_scale: str = "none"
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        self.enc_channels = [int(c) for c in self.enc_channels]
        self.dec_channels = [int(c) for c in self.dec_channels]
        self.kernel = tuple(int(k) for k in self.kernel)
        self.stride = tuple(int(s) for s in self.stride)
        self.validate()

    def validate(self) -> None:
        if len(self.enc_channels) != 5 or len(self.dec_channels) != 5:
            raise ValueError("enc_channels and dec_channels need 5 entries each")
        if self.dec_channels[:4] != self.enc_channels[3::-1]:
            raise ValueError(f"decoder ladder {self.dec_channels} does not mirror encoder {self.enc_channels}")
        if self.stride[0] != 1:
            raise ValueError("the time axis must not be downsampled (time stride 1)")
        if self.kernel[0] % 2 == 0 or self.kernel[1] % 2 == 0:
            raise ValueError(f"kernel extents must be odd, got {self.kernel}")
        if self.value_pos_sign not in (-1.0, 1.0):
            raise ValueError("value_pos_sign must be -1 or +1")
        if self.fft_size % self.hop:
            raise ValueError("fft_size must be a multiple of hop")

    @property
    def bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def padding(self) -> tuple[int, int]:
        return self.kernel[0] // 2, self.kernel[1] // 2

    def freq_ladder(self) -> list[int]:
        """Frequency bins after each encoder stage, starting from the input."""
        bins = [self.bins]
        for _ in self.enc_channels:
            bins.append(conv_output_size(bins[-1], self.kernel[1], self.stride[1], self.padding[1]))
        return bins

    def to_dict(self) -> dict:
        return asdict(self)


def irfft_matrix(k: int) -> np.ndarray:
    """(2*(k//2+1), k) matrix taking stacked [re; im] onesided bins to a real frame."""
    bins = k // 2 + 1
    n = np.arange(k)
    f = np.arange(bins)[:, None]
    weight = np.full((bins, 1), 2.0)
    weight[0] = weight[-1] = 1.0
    ang = 2.0 * np.pi * f * n[None, :] / k
    return np.concatenate([weight * np.cos(ang), -weight * np.sin(ang)], axis=0) / k


def synthesis_window(k: int, hop: int) -> np.ndarray:
    """Hann window divided by its periodic squared-window overlap sum."""
    w = dsp.hann_window(k)
    env = np.zeros(k)
    for shift in range(0, k, hop):
        env += np.roll(w ** 2, shift)
    return w / env


class EncoderStage(Module):
    def __init__(self, rng, c_in, c_out, cfg: UFormerConfig):
        self.conv = Conv2d(rng, c_in, c_out, cfg.kernel, cfg.stride, cfg.padding)
        self.bn = BatchNorm2d(c_out, cfg.bn_eps, cfg.bn_momentum)
        self.slope = cfg.leaky_slope

    def forward(self, x):
        return tt.leaky_relu(self.bn(self.conv(x)), self.slope)


class DecoderStage(Module):
    def __init__(self, rng, c_in, c_out, cfg: UFormerConfig, final: bool = False):
        self.conv = ConvTranspose2d(rng, c_in, c_out, cfg.kernel, cfg.stride, cfg.padding)
        self.bn = None if final else BatchNorm2d(c_out, cfg.bn_eps, cfg.bn_momentum)
        self.slope = cfg.leaky_slope

    def forward(self, x, out_bins: int):
        t = x.shape[2]
        y = self.conv(x, output_size=(t, out_bins))
        if self.bn is None:
            return y
        return tt.leaky_relu(self.bn(y), self.slope)


class SynthesisDecoder(Module):
    """Per-frame linear projection of RI bins to a frame, then overlap-add by a
    transposed 1-D convolution with kernel = window length and stride = hop.

    At initialization the pair reproduces weighted overlap-add inverse STFT.
    """

    def __init__(self, fft_size: int, hop: int):
        self.fft_size, self.hop = fft_size, hop
        self.proj = parameter(irfft_matrix(fft_size))
        self.kernel = parameter(np.diag(synthesis_window(fft_size, hop))[:, None, :])

    def forward(self, spec: Tensor) -> Tensor:
        """(N, T, F, 2) -> (N, (T-1)*hop + K) padded waveform."""
        n, t, f, _ = spec.shape
        frames = tt.reshape(tt.transpose(spec, (0, 1, 3, 2)), (n, t, 2 * f))
        frames = tt.transpose(tt.matmul(frames, self.proj), (0, 2, 1))
        wave = tt.conv_transpose1d(frames, self.kernel, self.hop)
        return tt.reshape(wave, (n, wave.shape[-1]))


class UFormer(Module):
    def __init__(self, cfg: UFormerConfig, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        enc = cfg.enc_channels
        self.encoder = [EncoderStage(rng, c_in, c_out, cfg)
                        for c_in, c_out in zip([2] + enc[:-1], enc)]
        self.mhsa = MHSA(rng, enc[-1], cfg.heads, cfg.span, cfg.value_pos_sign, cfg.attn_scale) \
            if cfg.use_mhsa else None
        dec_out = cfg.dec_channels[:4] + [2 * cfg.dec_channels[4]]
        dec_in = [enc[-1]] + [2 * c for c in cfg.dec_channels[:4]]
        self.decoder = [DecoderStage(rng, ci, co, cfg, final=(i == 4))
                        for i, (ci, co) in enumerate(zip(dec_in, dec_out))]
        self.mhca = [MHCA(rng, c, cfg.heads) for c in cfg.dec_channels[:4]] if cfg.use_mhca else None
        self.synthesis = SynthesisDecoder(cfg.fft_size, cfg.hop)
        if dec_out[-1] != 2:
            raise ValueError("final decoder stage must emit one complex (RI) channel")

    def spectral(self, y_ri: Tensor) -> Tensor:
        """(N, T, F, 2) noisy RI -> (N, T, F, 2) enhanced RI."""
        if not np.all(np.isfinite(y_ri.data)):
            raise ValueError("non-finite values in the input spectrogram")
        n, t, f, two = y_ri.shape
        if f != self.cfg.bins or two != 2:
            raise tt.ShapeError(f"expected (N, T, {self.cfg.bins}, 2) input, got {y_ri.shape}")
        ladder = self.cfg.freq_ladder()
        x = tt.transpose(y_ri, (0, 3, 1, 2))
        skips = []
        for i, stage in enumerate(self.encoder):
            x = stage(x)
            assert x.shape[2:] == (t, ladder[i + 1]), (x.shape, ladder)
            skips.append(x)
        if self.mhsa is not None:
            x = self.mhsa(x)
        for i, stage in enumerate(self.decoder):
            x = stage(x, ladder[4 - i])
            if i < 4:
                skip = skips[3 - i]
                assert x.shape == skip.shape, (x.shape, skip.shape)
                x = self.mhca[i](x, skip) if self.mhca is not None else tt.concat([x, skip], axis=1)
        return tt.transpose(x, (0, 2, 3, 1))

    def forward(self, y_ri, length: int) -> tuple[Tensor, Tensor]:
        """Return the enhanced RI spectrogram and the waveform trimmed to ``length``."""
        y_ri = tt.as_tensor(y_ri)
        if y_ri.ndim == 3:
            y_ri = tt.reshape(y_ri, (1,) + y_ri.shape)
        s_ri = self.spectral(y_ri)
        wave = self.synthesis(s_ri)
        k = self.cfg.fft_size
        return s_ri, wave[:, k:k + length]


def build(cfg: UFormerConfig | None = None, seed: int = 0) -> UFormer:
    return UFormer(cfg or UFormerConfig(), seed)


def count_params(model: Module) -> int:
    return int(sum(p.size for p in model.parameters()))


def analyze(x: np.ndarray, cfg: UFormerConfig) -> np.ndarray:
    return dsp.stft(x, cfg.fft_size, cfg.hop).astype(np.float32)


def enhance(model: UFormer, noisy: np.ndarray) -> np.ndarray:
    """Enhance one waveform in inference mode; output has the input's length."""
    was_training = model.training
    model.eval()
    try:
        _, wave = model.forward(analyze(noisy, model.cfg), len(noisy))
    finally:
        model.train(was_training)
    return wave.data[0].astype(np.float64)
