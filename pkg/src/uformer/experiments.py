"""Desk-scale experiments: single-mixture overfit, ablation variants, parameter count."""
from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np

from . import dsp, synth
from .model import UFormerConfig, build, count_params, enhance
from .train import TrainConfig, train_loop

REFERENCE_PARAMS = 2.03e6

VARIANTS = {
    "full": dict(use_mhsa=True, use_mhca=True),
    "w/o-MHSA": dict(use_mhsa=False, use_mhca=True),
    "w/o-MHCA": dict(use_mhsa=True, use_mhca=False),
    "w/o-MHCA&MHSA": dict(use_mhsa=False, use_mhca=False),
}


def mixture(seconds: float = 4.0, snr: float = 0.0, kind: str = "white", seed: int = 0):
    """Synthetic (clean, noisy) pair as float32."""
    clean = synth.speech_like(seconds, seed=seed)
    noisy, _ = dsp.mix_at_snr(clean, synth.noise(seconds, kind, seed=seed + 1), snr)
    return clean.astype(np.float32), noisy.astype(np.float32)


def ssnr_gain(model, clean, noisy) -> tuple[float, float]:
    """(SSNR of the enhanced mixture, SSNR of the noisy input), both in dB."""
    est = enhance(model, noisy)
    return dsp.ssnr(clean, est), dsp.ssnr(clean, noisy)


@dataclass
class OverfitResult:
    steps: int
    initial_loss: float
    final_loss: float
    ssnr_noisy: float
    ssnr_enhanced: float
    seconds: float
    losses: list[float] = field(default_factory=list)

    @property
    def loss_ratio(self) -> float:
        return self.final_loss / self.initial_loss

    @property
    def gain(self) -> float:
        return self.ssnr_enhanced - self.ssnr_noisy


def overfit(max_steps: int = 500, check_every: int = 25, target_ratio: float = 0.1,
            target_gain: float = 5.0, seed: int = 0, model_cfg: UFormerConfig | None = None,
            log=print) -> OverfitResult:
    """Train the default model on one 4 s, 0 dB mixture.

    Every ``check_every`` steps the loss drop and SSNR gain are measured; the
    run ends once both targets are met or after ``max_steps`` steps.
    """
    clean, noisy = mixture(4.0, 0.0, seed=seed)
    model = build(model_cfg or UFormerConfig(), seed=seed)
    cfg = TrainConfig(batch_size=1, max_epochs=max_steps, max_steps=max_steps, seed=seed)
    state = {"gain": (float("-inf"), 0.0)}
    losses: list[float] = []
    t0 = time.perf_counter()

    def on_step(step, loss):
        losses.append(loss)
        if step % check_every and step != max_steps:
            return False
        state["gain"] = ssnr_gain(model, clean, noisy)
        ratio = loss / losses[0]
        enh, ref = state["gain"]
        log(f"step {step:4d}  loss {loss:.5f}  ratio {ratio:.3f}  ssnr gain {enh - ref:+.2f} dB"
            f"  ({time.perf_counter() - t0:.0f} s)")
        return ratio <= target_ratio and enh - ref >= target_gain

    train_loop(model, [(clean, noisy)], [(clean, noisy)], cfg, on_step=on_step)
    enh, ref = state["gain"]
    return OverfitResult(len(losses), losses[0], losses[-1], ref, enh, time.perf_counter() - t0, losses)


@dataclass
class VariantReport:
    name: str
    params: int
    steps: int
    train_loss: float
    valid_loss: float
    ssnr_noisy: float
    ssnr_enhanced: float


def ablation(steps: int = 50, seconds: float = 1.0, n_train: int = 4, n_valid: int = 2,
             seed: int = 0, log=print) -> list[VariantReport]:
    """Train each architecture variant for ``steps`` steps on the same small synthetic set."""
    kinds = ("white", "pink", "brown")
    snrs = (-5.0, 0.0, 5.0, 10.0)
    data = [mixture(seconds, snrs[i % 4], kinds[i % 3], seed=100 + 2 * i) for i in range(n_train + n_valid)]
    train_set, valid_set = data[:n_train], data[n_train:]
    reports = []
    for name, flags in VARIANTS.items():
        cfg = dataclasses.replace(UFormerConfig(), **flags)
        model = build(cfg, seed=seed)
        tcfg = TrainConfig(max_steps=steps, max_epochs=10 * steps, chunk_seconds=seconds, seed=seed)
        history = train_loop(model, train_set, valid_set, tcfg)
        enh = np.mean([dsp.ssnr(c, enhance(model, n)) for c, n in valid_set])
        ref = np.mean([dsp.ssnr(c, n) for c, n in valid_set])
        rep = VariantReport(name, count_params(model), len(history.step_losses),
                            history.records[-1].train_loss, history.records[-1].valid_loss,
                            float(ref), float(enh))
        log(f"{name:<15s} params {rep.params:>9,d}  steps {rep.steps}  train {rep.train_loss:.5f}"
            f"  valid {rep.valid_loss:.5f}  ssnr {rep.ssnr_enhanced:+.2f} dB (noisy {rep.ssnr_noisy:+.2f})")
        reports.append(rep)
    order = sorted(reports, key=lambda r: -r.ssnr_enhanced)
    log("ordering by validation SSNR: " + " > ".join(r.name for r in order))
    return reports
