"""Command-line entry point.

Subcommands: train, enhance, evaluate, correlate, export-features, selftest.
Settings merge three layers (defaults < config file < CLI flags) into a flat
dotted-key table; every run serializes the effective table to
run_config.resolved inside the output directory. Exit codes: 0 success,
1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import torch

from . import analysis, data, dsp, losses, metrics, trainer, unet, wasserstein
from .encoder import TINY_CONV_SPEC, load_encoder
from .exceptions import PfplError

DEFAULTS: dict[str, str] = {
    "stft.window_length": "1024",
    "stft.hop_length": "256",
    "stft.window": "hann",
    "stft.centered": "true",
    "model.arch": "small10",
    "model.seed": "0",
    "encoder.source": "random:0",
    "loss.name": "pfpl",
    "train.steps": "1000",
    "train.batch_size": "4",
    "train.learning_rate": "1e-4",
    "train.seed": "0",
    "train.grad_clip": "5.0",
    "train.crop_length": "16384",
    "train.checkpoint_interval": "0",
    "train.deterministic": "true",
    "data.root": "",
    "output.dir": "runs",
    "pesq.tool": "",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


class RunConfig:
    """Flat dotted-key settings with defaults < file < flags precedence."""

    def __init__(self, values: dict[str, str]):
        self.values = values

    @classmethod
    def resolve(cls, config_path: str | None, overrides: dict[str, str]) -> "RunConfig":
        values = dict(DEFAULTS)
        if config_path:
            values.update(parse_config_file(config_path))
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(values)

    def get(self, key: str) -> str:
        return self.values[key]

    def get_int(self, key: str) -> int:
        return int(self.values[key])

    def get_float(self, key: str) -> float:
        return float(self.values[key])

    def get_bool(self, key: str) -> bool:
        return self.values[key].strip().lower() in ("1", "true", "yes", "on")

    def stft_config(self) -> dsp.StftConfig:
        return dsp.StftConfig(
            window_length=self.get_int("stft.window_length"),
            hop_length=self.get_int("stft.hop_length"),
            window=self.get("stft.window"),
            centered=self.get_bool("stft.centered"),
        )

    def write_resolved(self, out_dir: Path) -> Path:
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "run_config.resolved"
        lines = [f"{k} = {self.values[k]}" for k in sorted(self.values)]
        path.write_text("\n".join(lines) + "\n")
        return path


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Flat `key = value` lines; '#' starts a comment; blank lines ignored."""
    result: dict[str, str] = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        result[key.strip()] = value.strip()
    return result


def _build_parser() -> _Parser:
    parser = _Parser(prog="pfpl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--data-root", help="corpus root (clean_*/noisy_* dirs)")
        p.add_argument("--encoder", help="random:<seed> | ckpt:<path> | identity")
        p.add_argument("--encoder-ckpt", help="shorthand for --encoder ckpt:<path>")
        p.add_argument("--loss", help="mae|mse|wsdr|pfpl|pfpl_w|pfpl_w_mae")
        p.add_argument("--ckpt", help="model checkpoint path")
        p.add_argument("--out-dir", help="output directory")
        p.add_argument("--deterministic", action="store_true", default=None)
        p.add_argument("--pesq-tool", help="external PESQ binary path")

    p_train = sub.add_parser("train", help="train an enhancer")
    common(p_train)
    p_train.add_argument("--steps", type=int)
    p_train.add_argument("--resume", help="resume from checkpoint")

    p_enh = sub.add_parser("enhance", help="enhance one WAV file")
    common(p_enh)
    p_enh.add_argument("--in", dest="infile", required=True)
    p_enh.add_argument("--out", dest="outfile", required=True)

    p_eval = sub.add_parser("evaluate", help="score the test split")
    common(p_eval)

    p_corr = sub.add_parser("correlate", help="loss vs metric correlation study")
    common(p_corr)
    p_corr.add_argument(
        "--losses", default="mae,mse,wsdr,pfpl,pfpl_w,pfpl_w_mae",
        help="comma-separated loss names",
    )

    p_exp = sub.add_parser("export-features", help="dump labeled encoder features")
    common(p_exp)

    p_self = sub.add_parser("selftest", help="quick property checks")
    common(p_self)
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, str | None]:
    encoder = getattr(args, "encoder", None)
    if getattr(args, "encoder_ckpt", None):
        encoder = f"ckpt:{args.encoder_ckpt}"
    return {
        "data.root": getattr(args, "data_root", None),
        "encoder.source": encoder,
        "loss.name": getattr(args, "loss", None),
        "output.dir": getattr(args, "out_dir", None),
        "pesq.tool": getattr(args, "pesq_tool", None),
        "train.steps": None if getattr(args, "steps", None) is None else str(args.steps),
        "train.deterministic": "true" if getattr(args, "deterministic", None) else None,
    }


def _encoder_from(cfg: RunConfig):
    source = cfg.get("encoder.source")
    if source.startswith("ckpt:"):
        source = source[len("ckpt:"):]
    return load_encoder(source)


def _adapter_from(cfg: RunConfig):
    tool = cfg.get("pesq.tool")
    return metrics.PesqAdapter(tool) if tool else None


def _require(cfg: RunConfig, key: str, flag: str) -> str:
    value = cfg.get(key)
    if not value:
        raise UsageError(f"missing {flag} (config key {key})")
    return value


def _model_from_args(args) -> unet.MaskEstimator:
    if not getattr(args, "ckpt", None):
        raise UsageError("missing --ckpt")
    model, _, _ = trainer.load_checkpoint(args.ckpt)
    return model


def _cmd_train(args, cfg: RunConfig) -> int:
    out_dir = Path(cfg.get("output.dir"))
    cfg.write_resolved(out_dir)
    corpus = data.scan_corpus(_require(cfg, "data.root", "--data-root"))
    encoder = _encoder_from(cfg)
    model = unet.build_model(cfg.get("model.arch"), seed=cfg.get_int("model.seed"))
    train_cfg = trainer.TrainConfig(
        loss=cfg.get("loss.name"),
        steps=cfg.get_int("train.steps"),
        batch_size=cfg.get_int("train.batch_size"),
        learning_rate=cfg.get_float("train.learning_rate"),
        grad_clip=cfg.get_float("train.grad_clip"),
        seed=cfg.get_int("train.seed"),
        crop=data.SegmentSpec(length=cfg.get_int("train.crop_length")),
        stft=cfg.stft_config(),
        checkpoint_interval=cfg.get_int("train.checkpoint_interval"),
        checkpoint_dir=out_dir / "checkpoints",
        deterministic=cfg.get_bool("train.deterministic"),
    )
    report = trainer.train(train_cfg, corpus, model, encoder, resume=args.resume)
    final = out_dir / "model.pfpl"
    trainer.save_checkpoint(model, None, train_cfg.steps, final)
    log_path = out_dir / "loss_log.csv"
    with open(log_path, "w") as fh:
        fh.write("step,total\n")
        for entry in report.steps:
            fh.write(f"{entry['step']},{entry['total']:.8g}\n")
    print(f"trained {train_cfg.steps} steps; "
          f"loss {report.initial_loss:.5g} -> {report.final_loss:.5g}")
    print(f"checkpoint: {final}")
    return 0


def _cmd_enhance(args, cfg: RunConfig) -> int:
    model = _model_from_args(args)
    wave = dsp.read_wav(args.infile)
    out = unet.enhance(model, wave, cfg.stft_config())
    out_path = Path(args.outfile)
    dsp.write_wav(out_path, out)
    out_dir = Path(cfg.get("output.dir")) if args.out_dir else out_path.parent
    cfg.write_resolved(out_dir)
    print(f"wrote {out_path} ({len(out)} samples)")
    return 0


def _cmd_evaluate(args, cfg: RunConfig) -> int:
    out_dir = Path(cfg.get("output.dir"))
    cfg.write_resolved(out_dir)
    corpus = data.scan_corpus(_require(cfg, "data.root", "--data-root"))
    model = _model_from_args(args)
    adapter = _adapter_from(cfg)
    stft_cfg = cfg.stft_config()
    ids = sorted(corpus.ids("test")) or sorted(corpus.ids())
    rows = []
    for utterance_id in ids:
        clean, noisy = data.load_pair(corpus, utterance_id)
        enhanced = unet.enhance(model, noisy, stft_cfg)
        rows.append((utterance_id, metrics.evaluate_pair(clean, enhanced, adapter)))
    csv_path = out_dir / "metrics.csv"
    metrics.write_metrics_csv(csv_path, rows)
    print(f"wrote {csv_path} ({len(rows)} utterances)")
    return 0


def _cmd_correlate(args, cfg: RunConfig) -> int:
    out_dir = Path(cfg.get("output.dir"))
    cfg.write_resolved(out_dir)
    corpus = data.scan_corpus(_require(cfg, "data.root", "--data-root"))
    model = _model_from_args(args)
    encoder = _encoder_from(cfg)
    specs = []
    for name in args.losses.split(","):
        name = name.strip()
        enc = encoder if name.startswith("pfpl") else None
        specs.append(losses.LossSpec(name, encoder=enc))
    report = analysis.correlation_report(
        corpus, model, specs, adapter=_adapter_from(cfg),
        stft_cfg=cfg.stft_config(), out_dir=out_dir,
    )
    print(f"wrote correlation_report.csv and pcc_matrix.csv to {out_dir} "
          f"({len(report.rows)} utterances)")
    return 0


def _cmd_export_features(args, cfg: RunConfig) -> int:
    out_dir = Path(cfg.get("output.dir"))
    cfg.write_resolved(out_dir)
    corpus = data.scan_corpus(_require(cfg, "data.root", "--data-root"))
    encoder = _encoder_from(cfg)
    items = []
    for utterance_id in sorted(corpus.ids("test")) or sorted(corpus.ids()):
        clean, noisy = data.load_pair(corpus, utterance_id)
        items.append((clean, "clean"))
        items.append((noisy, "noisy"))
    path = analysis.export_features(encoder, items, out_dir / "features.csv")
    print(f"wrote {path} ({len(items)} waveforms)")
    return 0


def _cmd_selftest(args, cfg: RunConfig) -> int:
    rng = np.random.default_rng(0)
    checks: list[tuple[str, bool]] = []

    diffs = []
    for _ in range(100):
        n = int(rng.integers(2, 9))
        a, b = rng.normal(size=n), rng.normal(size=n)
        diffs.append(abs(float(wasserstein.w1_1d(a, b)) - wasserstein.w1_oracle(a, b, 1)))
    checks.append(("w1 sorting matches coupling oracle", max(diffs) < 1e-9))

    errs = []
    for _ in range(10):
        n = int(rng.integers(1000, 20000))
        w = dsp.Waveform(rng.normal(size=n).astype(np.float64))
        r = dsp.istft(dsp.stft(w))
        errs.append(np.linalg.norm(r.samples - w.samples) / np.linalg.norm(w.samples))
    checks.append(("stft round trip < 1e-6", max(errs) < 1e-6))

    csig, cbak, covl = metrics.composite(2.0, 1.0, 50.0, 5.0)
    checks.append(
        ("composite regression anchors",
         abs(csig - 2.820) < 1e-3 and abs(cbak - 2.555) < 1e-3 and abs(covl - 2.342) < 1e-3)
    )

    x = torch.tensor([[1.0, 1.0]])
    y = torch.tensor([[1.0, 0.0]])
    y_hat = torch.tensor([[1.0, 0.5]])
    anchor = float(losses.wsdr_loss(x, y, y_hat))
    ident = float(losses.wsdr_loss(x, y, y))
    checks.append(("wsdr anchors", abs(anchor + 0.9472) < 1e-4 and abs(ident + 1.0) < 1e-6))

    model = unet.build_model("small10", seed=0)
    spec = dsp.stft(dsp.Waveform(100 * rng.normal(size=8000).astype(np.float32)))
    mask = unet.estimate_mask(model, spec)
    checks.append(("mask magnitude < 1", float(np.abs(mask.values).max()) < 1.0))

    u, v = rng.normal(size=32), rng.normal(size=32)
    affine = abs(analysis.pearson_cc(2.5 * u + 1, v) - analysis.pearson_cc(u, v))
    checks.append(("pearson affine invariance", affine < 1e-12))

    enc = load_encoder("random:7", conv=TINY_CONV_SPEC)
    spec_l = losses.LossSpec("pfpl", encoder=enc)
    yv = torch.tensor(rng.normal(size=2000)[None, :], dtype=torch.float32)
    value = losses.compute_loss(spec_l, yv, yv, yv)
    checks.append(("pfpl(y, y) == 0", float(value.total) == 0.0))

    failed = 0
    for label, ok in checks:
        print(f"[{'PASS' if ok else 'FAIL'}] {label}")
        failed += 0 if ok else 1
    return 0 if failed == 0 else 2


_COMMANDS = {
    "train": _cmd_train,
    "enhance": _cmd_enhance,
    "evaluate": _cmd_evaluate,
    "correlate": _cmd_correlate,
    "export-features": _cmd_export_features,
    "selftest": _cmd_selftest,
}


def dispatch(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError(parser.format_usage())
        cfg = RunConfig.resolve(getattr(args, "config", None), _overrides(args))
        if cfg.get_bool("train.deterministic"):
            torch.use_deterministic_algorithms(True)
        return _COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except PfplError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
