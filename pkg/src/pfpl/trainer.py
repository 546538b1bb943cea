"""Optimization loop binding model, loss, and data, plus checkpoint persistence.

Batches are sampled with a per-step RNG derived from (seed, step), so a run
resumed from a checkpoint replays exactly the batches the uninterrupted run
would have seen. Checkpoints are a little-endian binary format: magic `PFPL`,
u32 version, a JSON header (model config, step counter, optimizer
hyperparameters, config hash), then length-prefixed named float32 tensor
records; writes are atomic (temp file + rename) and verified by readback.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from .data import CorpusIndex, SegmentSpec, load_pair, random_crop_pair
from .dsp import StftConfig
from .encoder import EncoderBackend
from .exceptions import (
    ConfigError,
    IntegrityError,
    FormatError,
    IoError,
    TrainingDiverged,
    VersionError,
)
from .losses import LossSpec, compute_loss
from .unet import MaskEstimator, ModelConfig, build_model, enhance_tensor

CHECKPOINT_MAGIC = b"PFPL"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "pfpl"
    loss_weights: dict = field(default_factory=dict)
    steps: int = 1000
    batch_size: int = 4
    learning_rate: float = 1e-4
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    grad_clip: float = 5.0
    seed: int = 0
    crop: SegmentSpec = field(default_factory=lambda: SegmentSpec(length=16384))
    stft: StftConfig = field(default_factory=StftConfig)
    checkpoint_interval: int = 0  # 0 disables periodic saves
    checkpoint_dir: Path | None = None
    deterministic: bool = True

    def __post_init__(self):
        if self.steps < 0 or self.batch_size <= 0 or self.learning_rate <= 0:
            raise ConfigError("steps must be >= 0; batch size and rate positive")


@dataclass
class TrainReport:
    steps: list[dict] = field(default_factory=list)
    wall_seconds: float = 0.0

    @property
    def initial_loss(self) -> float:
        return self.steps[0]["total"] if self.steps else float("nan")

    @property
    def final_loss(self) -> float:
        return self.steps[-1]["total"] if self.steps else float("nan")

    def totals(self) -> list[float]:
        return [s["total"] for s in self.steps]


def _step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=(seed, step)))


def _sample_batch(cfg: TrainConfig, corpus: CorpusIndex, cache: dict, step: int):
    rng = _step_rng(cfg.seed, step)
    ids = corpus.ids("train") or corpus.ids()
    chosen = [ids[int(i)] for i in rng.integers(0, len(ids), size=cfg.batch_size)]
    cleans, noisies = [], []
    for utterance_id in chosen:
        if utterance_id not in cache:
            cache[utterance_id] = load_pair(corpus, utterance_id)
        clean, noisy = cache[utterance_id]
        c, n = random_crop_pair(clean, noisy, cfg.crop.length, rng)
        cleans.append(torch.as_tensor(c, dtype=torch.float32))
        noisies.append(torch.as_tensor(n, dtype=torch.float32))
    return chosen, torch.stack(cleans), torch.stack(noisies)


def train(
    cfg: TrainConfig,
    corpus: CorpusIndex,
    model: MaskEstimator,
    encoder: EncoderBackend | None,
    resume: str | Path | None = None,
) -> TrainReport:
    """Run the optimization loop; returns the per-step loss log.

    The encoder stays frozen: it is never registered with the optimizer and
    its parameters carry requires_grad=False. NaN/Inf losses abort with the
    offending step and batch ids.
    """
    if len(corpus) == 0:
        raise ConfigError("corpus is empty")
    loss_spec = LossSpec(cfg.loss, dict(cfg.loss_weights), encoder)
    if cfg.deterministic:
        torch.use_deterministic_algorithms(True)

    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=cfg.learning_rate,
        betas=cfg.adam_betas,
        eps=cfg.adam_eps,
    )
    start_step = 0
    if resume is not None:
        loaded_model, opt_state, start_step = load_checkpoint(resume)
        model.load_state_dict(loaded_model.state_dict())
        if opt_state:
            optimizer.load_state_dict(opt_state)

    report = TrainReport()
    cache: dict = {}
    t0 = time.monotonic()
    model.train()
    for step in range(start_step, cfg.steps):
        batch_ids, clean, noisy = _sample_batch(cfg, corpus, cache, step)
        enhanced = enhance_tensor(model, noisy, cfg.stft)
        loss = compute_loss(loss_spec, noisy, clean, enhanced)
        total = loss.total
        if not torch.isfinite(total):
            raise TrainingDiverged(step, batch_ids)
        report.steps.append(
            {"step": step, "total": float(total.detach()), "batch": batch_ids}
            | {k: float(v.detach()) for k, v in loss.components.items()}
        )
        optimizer.zero_grad()
        total.backward()
        if cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        optimizer.step()
        if (
            cfg.checkpoint_interval > 0
            and cfg.checkpoint_dir is not None
            and (step + 1) % cfg.checkpoint_interval == 0
        ):
            save_checkpoint(
                model,
                optimizer.state_dict(),
                step + 1,
                Path(cfg.checkpoint_dir) / f"step{step + 1:08d}.pfpl",
            )
    model.eval()
    report.wall_seconds = time.monotonic() - t0
    return report


# --- checkpoint serialization ----------------------------------------------


def _config_json(config: ModelConfig) -> dict:
    return asdict(config)


def _config_hash(payload: dict) -> str:
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True).encode()
    ).hexdigest()


def _tensor_records(model: MaskEstimator, optimizer_state: dict | None):
    for name, tensor in model.state_dict().items():
        yield f"model.{name}", tensor
    if optimizer_state:
        for idx, state in sorted(optimizer_state.get("state", {}).items()):
            for key, value in sorted(state.items()):
                tensor = value if torch.is_tensor(value) else torch.tensor(float(value))
                yield f"optim.{idx}.{key}", tensor


def save_checkpoint(
    model: MaskEstimator,
    optimizer_state: dict | None,
    step: int,
    path: str | Path,
) -> None:
    """Atomically write model + optimizer state; verify by readback."""
    path = Path(path)
    cfg_json = _config_json(model.config)
    header = {
        "model_config": cfg_json,
        "step": int(step),
        "config_hash": _config_hash(cfg_json),
        "param_groups": _jsonable_param_groups(optimizer_state),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()

    records = list(_tensor_records(model, optimizer_state))
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", CHECKPOINT_VERSION)
    blob += struct.pack("<I", len(header_bytes))
    blob += header_bytes
    blob += struct.pack("<I", len(records))
    for name, tensor in records:
        data = tensor.detach().to(torch.float32).contiguous().numpy()
        name_bytes = name.encode()
        blob += struct.pack("<H", len(name_bytes))
        blob += name_bytes
        blob += struct.pack("<B", data.ndim)
        blob += struct.pack(f"<{data.ndim}I", *data.shape) if data.ndim else b""
        blob += data.astype("<f4").tobytes()

    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(bytes(blob))
            fh.flush()
            os.fsync(fh.fileno())
        _validate_readback(tmp_name, bytes(blob))
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def _jsonable_param_groups(optimizer_state: dict | None) -> list:
    if not optimizer_state:
        return []
    return json.loads(json.dumps(optimizer_state.get("param_groups", []), default=list))


def _validate_readback(tmp_name: str, expected: bytes) -> None:
    with open(tmp_name, "rb") as fh:
        if fh.read() != expected:
            raise IoError("checkpoint readback mismatch; refusing to commit")


class _Reader:
    def __init__(self, data: bytes, path: Path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise IntegrityError(
                f"{self.path}: truncated at byte {self.pos} (need {n} more)"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str | Path):
    """Read a checkpoint; returns (model, optimizer_state_dict, step)."""
    path = Path(path)
    if not path.exists():
        raise IoError(f"no such checkpoint: {path}")
    reader = _Reader(path.read_bytes(), path)
    if reader.take(4) != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic; not a checkpoint file")
    (version,) = reader.unpack("<I")
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"{path}: unsupported version {version}")
    (header_len,) = reader.unpack("<I")
    try:
        header = json.loads(reader.take(header_len).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"{path}: corrupt header: {exc}") from exc
    (n_records,) = reader.unpack("<I")
    tensors: dict[str, torch.Tensor] = {}
    for _ in range(n_records):
        (name_len,) = reader.unpack("<H")
        try:
            name = reader.take(name_len).decode()
        except UnicodeDecodeError as exc:
            raise IntegrityError(f"{path}: corrupt record name: {exc}") from exc
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I") if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        payload = reader.take(count * 4)
        array = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
        tensors[name] = torch.from_numpy(array)
    if reader.pos != len(reader.data):
        raise IntegrityError(f"{path}: {len(reader.data) - reader.pos} trailing bytes")

    config = ModelConfig(
        **{
            k: _detuple(k, v)
            for k, v in header["model_config"].items()
        }
    )
    model = build_model(config, seed=0)
    state = {}
    for name, tensor in tensors.items():
        if name.startswith("model."):
            state[name[len("model."):]] = tensor
    expected_shapes = {k: tuple(v.shape) for k, v in model.state_dict().items()}
    got_shapes = {k: tuple(v.shape) for k, v in state.items()}
    if expected_shapes != got_shapes:
        raise IntegrityError(
            f"{path}: parameter table inconsistent with embedded model config"
        )
    model.load_state_dict(state)
    model.eval()

    opt_state: dict = {"state": {}, "param_groups": header.get("param_groups", [])}
    for name, tensor in tensors.items():
        if not name.startswith("optim."):
            continue
        _, idx, key = name.split(".", 2)
        entry = opt_state["state"].setdefault(int(idx), {})
        entry[key] = tensor if tensor.dim() else tensor.clone()
    if not opt_state["state"] and not opt_state["param_groups"]:
        opt_state = {}
    return model, opt_state, int(header["step"])


def _detuple(key: str, value):
    # JSON turns tuples into lists; ModelConfig wants tuples back
    if isinstance(value, list):
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    return value
