"""Training loop: noise a mask, regress the noise, update with AdamW.

Also owns the checkpoint format: magic + version header, a JSON block with
configs and the array manifest, then raw little-endian float64 payloads.
"""

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import augment_sample
from .errors import CheckpointError
from .forward_process import sample_xt
from .model import ConditionalDenoiser, ModelConfig, init_params
from .schedule import DiffusionSchedule, make_schedule
from .tensor import Tensor, mse_loss

CKPT_MAGIC = b"SGDFCKPT"
CKPT_VERSION = 1


@dataclass
class TrainConfig:
    T: int = 100
    batch_size: int = 8
    lr: float = 1e-4
    weight_decay: float = 1e-4
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    max_steps: int = 10000
    seed: int = 0
    augment_hflip: bool = False
    augment_vflip: bool = False
    augment_rotate: bool = False
    augment_scale: bool = False
    log_every: int = 50
    checkpoint_every: int = 0  # 0: only final

    def __post_init__(self):
        self.adam_betas = tuple(self.adam_betas)
        b1, b2 = self.adam_betas
        if self.lr <= 0 or not (0 <= b1 < 1 and 0 <= b2 < 1) or self.max_steps < 1:
            raise ValueError("invalid training configuration")

    @property
    def augment_flags(self):
        return {
            "hflip": self.augment_hflip,
            "vflip": self.augment_vflip,
            "rotate": self.augment_rotate,
            "scale": self.augment_scale,
        }


class AdamW:
    """Adam with decoupled weight decay: the decay term hits the parameter
    directly, not the gradient moments."""

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                g = 0.0
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= self.lr * (update + self.weight_decay * p.data)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def draw_timesteps(rng, T, size):
    """Draw uniform timesteps from {1, ..., T}, one per batch element."""
    return rng.integers(1, T + 1, size=size)


def training_step(batch, model, opt, sched, rng):
    """One optimization step on a list of samples; returns the scalar loss."""
    if not batch:
        raise ValueError("empty batch")
    images = Tensor(np.stack([s.image for s in batch]))
    x0 = Tensor(np.stack([s.mask for s in batch]))
    t = draw_timesteps(rng, sched.T, len(batch))
    noised = sample_xt(x0, t, sched, rng)
    pred = model(noised.x_t, images, t)
    loss = mse_loss(pred, noised.epsilon)
    value = float(loss.data)
    if not np.isfinite(value):
        raise FloatingPointError(
            f"loss diverged (value {value}) at optimizer step {opt.step_count + 1}"
        )
    opt.zero_grad()
    loss.backward()
    opt.step()
    return value


def train_loop(
    dataset,
    train_cfg: TrainConfig,
    model_cfg: ModelConfig,
    checkpoint_path=None,
    resume_from=None,
    progress=None,
):
    """Run ``max_steps`` training steps over shuffled minibatches.

    Returns (model, losses) with one (step, loss) pair per ``log_every``
    steps. Minibatch order within an epoch is a pure function of the seed and
    epoch index, so resuming from a checkpoint replays the same stream.
    """
    if not dataset:
        raise ValueError("empty dataset")
    sched = make_schedule(train_cfg.T)
    if resume_from is not None:
        state = load_checkpoint(resume_from)
        model = state["model"]
        opt = _make_opt(model, train_cfg)
        _restore_opt(opt, state)
        start_step = state["step"]
        rng = np.random.default_rng()
        rng.bit_generator.state = state["rng_state"]
    else:
        model = init_params(model_cfg, train_cfg.T, train_cfg.seed)
        opt = _make_opt(model, train_cfg)
        start_step = 0
        rng = np.random.default_rng(train_cfg.seed)

    n = len(dataset)
    bs = train_cfg.batch_size
    batches_per_epoch = max(1, n // bs)
    losses = []
    for step in range(start_step, train_cfg.max_steps):
        epoch, pos = divmod(step, batches_per_epoch)
        perm = np.random.default_rng((train_cfg.seed, epoch)).permutation(n)
        idx = perm[pos * bs : pos * bs + bs]
        batch = [dataset[i] for i in idx]
        if any(train_cfg.augment_flags.values()):
            batch = [augment_sample(s, rng, train_cfg.augment_flags) for s in batch]
        loss = training_step(batch, model, opt, sched, rng)
        done = step + 1
        if done % train_cfg.log_every == 0 or done == train_cfg.max_steps:
            losses.append((done, loss))
            if progress is not None:
                progress(done, loss)
        if (
            checkpoint_path is not None
            and train_cfg.checkpoint_every
            and done % train_cfg.checkpoint_every == 0
            and done != train_cfg.max_steps
        ):
            save_checkpoint(f"{checkpoint_path}.step{done}", model, opt, sched,
                            model_cfg, train_cfg, step=done, rng=rng)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model, opt, sched, model_cfg, train_cfg,
                        step=train_cfg.max_steps, rng=rng)
    return model, losses


def _make_opt(model, cfg):
    return AdamW(
        model.params(),
        lr=cfg.lr,
        betas=cfg.adam_betas,
        eps=cfg.adam_eps,
        weight_decay=cfg.weight_decay,
    )


def _restore_opt(opt, state):
    opt.step_count = state["opt_step"]
    for i, (m, v) in enumerate(zip(state["opt_m"], state["opt_v"])):
        opt.m[i][...] = m
        opt.v[i][...] = v


# ---------------------------------------------------------------------------
# Checkpoint I/O


def save_checkpoint(path, model, opt, sched, model_cfg, train_cfg, step=0, rng=None):
    """Write model + optimizer + schedule state losslessly."""
    arrays = []
    for name, p in model.named_params():
        arrays.append((f"param.{name}", p.data))
    for i, (m, v) in enumerate(zip(opt.m, opt.v)):
        arrays.append((f"opt.m.{i}", m))
        arrays.append((f"opt.v.{i}", v))
    for name in ("beta", "alpha", "alpha_bar", "beta_tilde"):
        arrays.append((f"sched.{name}", getattr(sched, name)))

    manifest = []
    offset = 0
    for name, arr in arrays:
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8

    header = {
        "model_config": _cfg_to_json(model_cfg),
        "train_config": asdict(train_cfg),
        "T": sched.T,
        "step": step,
        "opt_step": opt.step_count,
        "rng_state": _rng_state_to_json(rng) if rng is not None else None,
        "manifest": manifest,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<IQ", CKPT_VERSION, len(blob)))
        f.write(blob)
        for _, arr in arrays:
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint back into a fresh model/optimizer/schedule."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if len(raw) < 20 or raw[:8] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version, blob_len = struct.unpack("<IQ", raw[8:20])
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[20 : 20 + blob_len])
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: corrupt header JSON: {e}") from e
    payload = raw[20 + blob_len :]

    data = {}
    for entry in header["manifest"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=start)
        data[entry["name"]] = arr.reshape(shape).astype(np.float64)

    model_cfg = _cfg_from_json(header["model_config"])
    train_cfg = TrainConfig(**header["train_config"])
    T = header["T"]
    model = init_params(model_cfg, T, seed=0)
    for name, p in model.named_params():
        p.data[...] = data[f"param.{name}"]

    sched = make_schedule(T)
    for name in ("beta", "alpha", "alpha_bar", "beta_tilde"):
        stored = data[f"sched.{name}"]
        if not np.array_equal(stored, getattr(sched, name)):
            raise CheckpointError(f"{path}: stored schedule table {name} is inconsistent")

    n_params = len(model.params())
    opt_m = [data[f"opt.m.{i}"] for i in range(n_params)]
    opt_v = [data[f"opt.v.{i}"] for i in range(n_params)]
    return {
        "model": model,
        "model_config": model_cfg,
        "train_config": train_cfg,
        "sched": sched,
        "step": header["step"],
        "opt_step": header["opt_step"],
        "opt_m": opt_m,
        "opt_v": opt_v,
        "rng_state": _rng_state_from_json(header["rng_state"]),
    }


def _cfg_to_json(cfg: ModelConfig):
    d = asdict(cfg)
    d["attention_resolutions"] = sorted(cfg.attention_resolutions)
    return d


def _cfg_from_json(d):
    d = dict(d)
    d["attention_resolutions"] = frozenset(d["attention_resolutions"])
    d["channel_multipliers"] = tuple(d["channel_multipliers"])
    d["input_size"] = tuple(d["input_size"])
    return ModelConfig(**d)


def _rng_state_to_json(rng):
    state = rng.bit_generator.state
    return json.loads(json.dumps(state, default=int))


def _rng_state_from_json(state):
    return state
