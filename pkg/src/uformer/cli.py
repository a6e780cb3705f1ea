"""Command-line entry point: mix, train, enhance, eval, verify.

Exit codes: 0 success, 1 usage error, 2 data error, 3 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
import typing
from pathlib import Path

import numpy as np

from . import dsp
from .loss import LossConfig
from .model import UFormerConfig, build, enhance
from .train import (CheckpointError, TrainConfig, TrainingAborted, load_checkpoint,
                    model_from_checkpoint, save_checkpoint, train_loop)

log = logging.getLogger("uformer")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- manifests -------------------------------------------------------------------

def read_manifest(path) -> list[list[str]]:
    """Tab-separated rows; blank lines and lines starting with '#' are skipped.
    Relative paths resolve against the manifest's directory."""
    path = Path(path)
    if not path.is_file():
        raise dsp.DataError(f"manifest not found: {path}")
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        rows.append((lineno, line.rstrip("\n").split("\t")))
    base = path.parent
    out = []
    for lineno, cols in rows:
        out.append([str(base / c) if i != 2 and c and not Path(c).is_absolute() else c
                    for i, c in enumerate(cols)] + [str(lineno)])
    return out


def load_pairs(manifest) -> list[tuple[np.ndarray, np.ndarray]]:
    """Read a clean/noise/SNR manifest into (clean, noisy) float arrays, mixing on the fly."""
    pairs = []
    for row in read_manifest(manifest):
        *cols, lineno = row
        if len(cols) not in (3, 4):
            raise dsp.DataError(f"{manifest}:{lineno}: expected 3 or 4 tab-separated columns, got {len(cols)}")
        try:
            snr = float(cols[2])
        except ValueError:
            raise dsp.DataError(f"{manifest}:{lineno}: SNR {cols[2]!r} is not a number") from None
        clean, noise = dsp.read_wav(cols[0]), dsp.read_wav(cols[1])
        noisy, _ = dsp.mix_at_snr(clean, noise, snr)
        pairs.append((clean.astype(np.float32), noisy.astype(np.float32)))
    if not pairs:
        raise dsp.DataError(f"{manifest}: no entries")
    return pairs


# -- config overrides ------------------------------------------------------------

_SECTIONS = {"model": UFormerConfig, "train": TrainConfig, "loss": LossConfig}


def _field_types(cls) -> dict[str, typing.Any]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def _parse_value(raw: str, hint, key: str):
    raw = raw.strip()
    origin, args = typing.get_origin(hint), typing.get_args(hint)
    if origin is typing.Union:
        if raw.lower() in ("none", "null", ""):
            return None
        hint = next(a for a in args if a is not type(None))
        origin, args = typing.get_origin(hint), typing.get_args(hint)
    if origin in (list, tuple):
        items = [s for s in raw.strip("[]()").split(",") if s.strip()]
        vals = [_parse_value(s, args[0], key) for s in items]
        return vals if origin is list else tuple(vals)
    if hint is bool:
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise UsageError(f"{key}: expected a boolean, got {raw!r}")
    if hint in (int, float):
        try:
            return hint(raw)
        except ValueError:
            raise UsageError(f"{key}: expected {hint.__name__}, got {raw!r}") from None
    return raw


def resolve_key(key: str) -> tuple[str, str]:
    """Map ``section.name`` or a bare ``name`` to its config section."""
    if "." in key:
        section, name = key.split(".", 1)
        if section not in _SECTIONS or name not in _field_types(_SECTIONS[section]):
            raise UsageError(f"unknown config key {key!r}")
        return section, name
    hits = [s for s, cls in _SECTIONS.items() if key in _field_types(cls) and key != "loss"]
    if not hits:
        raise UsageError(f"unknown config key {key!r}")
    if key == "alpha":
        return "loss", key
    if len(hits) > 1:
        raise UsageError(f"ambiguous config key {key!r}; use one of {[f'{s}.{key}' for s in hits]}")
    return hits[0], key


def parse_assignments(lines: list[str], source: str) -> list[tuple[str, str, str]]:
    out = []
    for i, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{i}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out.append((*resolve_key(key), value))
    return out


def build_configs(config_file: str | None, overrides: list[str]) -> tuple[UFormerConfig, TrainConfig]:
    """Defaults, then the config file, then ``--set`` overrides, last one wins."""
    assignments = []
    if config_file:
        p = Path(config_file)
        if not p.is_file():
            raise UsageError(f"config file not found: {p}")
        assignments += parse_assignments(p.read_text().splitlines(), str(p))
    assignments += parse_assignments(overrides, "--set")
    values: dict[str, dict] = {s: {} for s in _SECTIONS}
    for section, name, raw in assignments:
        values[section][name] = _parse_value(raw, _field_types(_SECTIONS[section])[name], f"{section}.{name}")
    try:
        loss = LossConfig(**values["loss"])
        if "alpha" not in values["model"]:
            values["model"]["alpha"] = loss.alpha
        elif "alpha" not in values["loss"]:
            loss = dataclasses.replace(loss, alpha=values["model"]["alpha"])
        model_cfg = UFormerConfig(**values["model"])
        train_cfg = TrainConfig(**values["train"], loss=loss)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    return model_cfg, train_cfg


# -- commands --------------------------------------------------------------------

def cmd_mix(args) -> int:
    clean_files = sorted(Path(args.clean_dir).glob("*.wav"))
    noise_files = sorted(Path(args.noise_dir).glob("*.wav"))
    if not clean_files or not noise_files:
        raise dsp.DataError("clean and noise directories must each contain .wav files")
    try:
        snrs = [float(s) for s in args.snr_list.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--snr-list: cannot parse {args.snr_list!r}") from None
    if not snrs:
        raise UsageError("--snr-list is empty")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for ci, clean_path in enumerate(clean_files):
        clean = dsp.read_wav(clean_path)
        for si, snr in enumerate(snrs):
            rng = np.random.default_rng((args.seed, ci, si))
            noise_path = noise_files[int(rng.integers(len(noise_files)))]
            noisy, _ = dsp.mix_at_snr(clean, dsp.read_wav(noise_path), snr)
            peak = float(np.max(np.abs(noisy)))
            if peak >= 1.0:
                log.warning("%s at %g dB clips (peak %.3f)", clean_path.name, snr, peak)
            noisy_path = out / f"{clean_path.stem}_snr{snr:+g}.wav"
            dsp.write_wav(noisy_path, noisy)
            rows.append((clean_path.resolve(), noise_path.resolve(), f"{snr:g}", noisy_path.resolve()))
    manifest = out / "manifest.tsv"
    manifest.write_text("".join("\t".join(map(str, r)) + "\n" for r in rows))
    print(f"wrote {len(rows)} mixtures and {manifest}")
    return EXIT_OK


def cmd_train(args) -> int:
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
    model_cfg, train_cfg = build_configs(args.config, overrides)
    train_set = load_pairs(args.train_manifest)
    valid_set = load_pairs(args.valid_manifest)
    out = Path(args.out)
    last = out.with_name(out.stem + ".last" + out.suffix)
    hist_path = out.with_name(out.stem + ".history.csv")
    resume = None
    if args.resume:
        resume = load_checkpoint(args.resume)
        model_cfg = UFormerConfig(**resume.model_config)
    model = build(model_cfg, seed=train_cfg.seed)
    records = []
    if resume is not None and hist_path.is_file():
        records = hist_path.read_text().splitlines()[1:][:resume.epoch]

    def on_epoch(ckpt, is_best):
        save_checkpoint(last, ckpt)
        if is_best:
            save_checkpoint(out, ckpt)

    history = train_loop(model, train_set, valid_set, train_cfg, resume=resume, on_epoch=on_epoch)
    lines = history.to_csv().splitlines()
    hist_path.write_text("\n".join([lines[0]] + records + lines[1:]) + "\n")
    for line in lines[1:]:
        print(line)
    print(f"best checkpoint {out}, last checkpoint {last}, history {hist_path}")
    return EXIT_OK


def cmd_enhance(args) -> int:
    model = model_from_checkpoint(load_checkpoint(args.checkpoint))
    noisy = dsp.read_wav(args.input)
    out = enhance(model, noisy.astype(np.float32))
    peak = float(np.max(np.abs(out))) if out.size else 0.0
    if peak >= 1.0:
        log.warning("enhanced output clips (peak %.3f)", peak)
    dsp.write_wav(args.out, out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    rows = []
    for row in read_manifest(args.pairs):
        *cols, lineno = row
        if len(cols) != 2:
            raise dsp.DataError(f"{args.pairs}:{lineno}: expected clean<TAB>estimate")
        clean, est = dsp.read_wav(cols[0]), dsp.read_wav(cols[1])
        gap = abs(len(clean) - len(est))
        if gap > dsp.HOP:
            raise dsp.DataError(f"{cols[1]}: length {len(est)} differs from reference {len(clean)} "
                                f"by more than one hop")
        n = min(len(clean), len(est))
        rows.append((cols[1], dsp.ssnr(clean[:n], est[:n])))
    width = max(len(p) for p, _ in rows)
    print(f"{'path':<{width}}  ssnr_db")
    for path, v in rows:
        print(f"{path:<{width}}  {v:7.3f}")
    print(f"{'mean':<{width}}  {np.mean([v for _, v in rows]):7.3f}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "ssnr_db"])
            w.writerows((p, f"{v:.6f}") for p, v in rows)
    return EXIT_OK


def cmd_verify(args) -> int:
    from . import verify
    checks = verify.run(args.suite)
    for c in checks:
        print(c.line())
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return EXIT_VERIFY if failed else EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="uformer", description="U-Former speech enhancement on a numpy autodiff engine")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    m = sub.add_parser("mix", help="build noisy mixtures and a manifest")
    m.add_argument("--clean-dir", required=True)
    m.add_argument("--noise-dir", required=True)
    m.add_argument("--snr-list", default="-5,0,5,10")
    m.add_argument("--out-dir", required=True)
    m.add_argument("--seed", type=int, default=0)
    m.set_defaults(func=cmd_mix)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", help="file of key=value lines")
    t.add_argument("--train-manifest", required=True)
    t.add_argument("--valid-manifest", required=True)
    t.add_argument("--out", required=True, help="best checkpoint path")
    t.add_argument("--set", action="extend", nargs="+", metavar="KEY=VALUE",
                   help="config overrides; later ones win")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("enhance", help="enhance one WAV file")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--in", dest="input", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_enhance)

    v = sub.add_parser("eval", help="segmental SNR of estimates against references")
    v.add_argument("--pairs", required=True, help="manifest of clean<TAB>estimate")
    v.add_argument("--csv")
    v.set_defaults(func=cmd_eval)

    c = sub.add_parser("verify", help="run invariant suites")
    c.add_argument("--suite", choices=["gradcheck", "dsp", "attention", "all"], default="all")
    c.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"uformer: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (dsp.DataError, CheckpointError, TrainingAborted, FileNotFoundError) as exc:
        print(f"uformer: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
