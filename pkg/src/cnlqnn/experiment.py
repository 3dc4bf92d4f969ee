"""Config-driven experiment pipelines behind the command line.

Every pipeline reads an `ExperimentConfig`, writes a manifest first, then its
artifacts, each file atomically.  Column orders are fixed and documented in
``docs/formats.md``.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import hashlib
import io
import json
import logging
import math
import os
import tempfile
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .attacks import AttackConfig, Method, attack, blackbox_transfer
from .baseline import MLP, MLPConfig, mlp_train
from .data import DataFormatError, DatasetSplit, load_cifar_pool, load_idx_pool, make_split, synthetic_dataset
from .model import CNLConfig, ModelConfig, ParamStore, QuantumModel, check_architecture, encode_ops, layer_ops
from .rng import stream
from .search import SearchConfig, SearchResult, search_run
from .simcore import FULL_POOL, GateKind, NoiseKind, NoiseSpec, mean_z_batch, run_noisy_batch, zero_batch

log = logging.getLogger(__name__)

DATASETS = ("mnist", "fashion", "cifar10", "synthetic")
# keys that never change results
_UNHASHED = ("out", "threads", "deterministic")

HISTORY_COLUMNS = ["epoch", "tau", "mean_loss", "val_accuracy"]
ATTACK_COLUMNS = ["dataset", "model", "method", "epsilon", "clean_acc", "robust_acc", "mean_linf"]
NOISE_COLUMNS = ["dataset", "model", "channel", "prob", "mean_acc", "std_acc"]
ABLATION_COLUMNS = ["dataset", "model", "clean_acc", "robust_acc"]


class ConfigError(ValueError):
    exit_code = 2


class DataError(RuntimeError):
    exit_code = 3


class MissingArtifactError(FileNotFoundError):
    exit_code = 4


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "synthetic"
    data_dir: Optional[str] = None
    class_pair: Tuple[int, int] = (0, 1)
    grid: int = 2
    n_qubits: Optional[int] = None
    n_train: int = 2000
    n_test: int = 500
    # model
    n_layers: int = 6
    gate_pool: Tuple[str, ...] = tuple(g.value for g in FULL_POOL)
    # search
    lr_omega: float = 0.01
    lr_alpha: float = 0.01
    batch_size: int = 32
    n_arch: int = 3
    n_iter: Optional[int] = None
    epochs: int = 5
    tau0: float = 5.0
    tau_decay: float = 0.95
    patience: int = 5
    final_epochs: int = 5
    val_fraction: float = 0.2
    selection: str = "argmax"
    # classical noise layer
    cnl_enabled: bool = True
    h: float = 0.02
    gamma: float = 1.0
    # attacks
    attacks: Tuple[str, ...] = ("FGSM", "PGD", "BIM", "MIM")
    epsilons: Tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5)
    attack_steps: int = 10
    mim_mu: float = 1.0
    attack_samples: Optional[int] = None
    blackbox: Tuple[str, ...] = ("FGSM", "PGD")
    baseline: bool = True
    mlp_hidden: int = 32
    mlp_lr: float = 0.05
    mlp_epochs: int = 50
    ablation_epsilon: float = 0.3
    # circuit noise
    noise_channels: Tuple[str, ...] = ("DEPOLARIZING", "BITFLIP", "PHASEFLIP")
    noise_probs: Tuple[float, ...] = (0.05, 0.08, 0.10)
    trajectories: int = 100
    noise_samples: Optional[int] = None
    bootstrap: int = 50
    # run
    seed: int = 0
    out: str = "runs/default"
    threads: int = 1
    deterministic: bool = False

    def __post_init__(self):
        for name in ("class_pair", "gate_pool", "attacks", "epsilons", "blackbox", "noise_channels", "noise_probs"):
            value = getattr(self, name)
            if isinstance(value, (str, int, float)):
                raise ConfigError(f"{name} must be a list")
            object.__setattr__(self, name, tuple(value))
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        if self.dataset != "synthetic" and not self.data_dir:
            raise ConfigError(f"dataset {self.dataset!r} needs data_dir")
        if len(self.class_pair) != 2:
            raise ConfigError("class_pair needs exactly two labels")
        if self.grid < 1:
            raise ConfigError("grid must be positive")
        if self.n_qubits is not None and self.n_qubits != self.grid**2:
            raise ConfigError(f"n_qubits={self.n_qubits} but grid {self.grid} gives {self.grid**2}")
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError("n_train and n_test must be positive")
        try:
            for g in self.gate_pool:
                GateKind(g)
            for m in self.attacks + self.blackbox:
                Method(m)
            for c in self.noise_channels:
                NoiseKind(c)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if any(not 0 <= e <= 1 for e in self.epsilons + (self.ablation_epsilon,)):
            raise ConfigError("epsilons must lie in [0, 1]")
        if any(not 0 <= p <= 1 for p in self.noise_probs):
            raise ConfigError("noise probabilities must lie in [0, 1]")
        if self.trajectories < 1 or self.bootstrap < 2 or self.attack_steps < 1 or self.threads < 1:
            raise ConfigError("trajectories, attack_steps and threads must be positive; bootstrap >= 2")
        try:
            self.model_config()
            self.search_config()
            self.cnl_config()
            self.mlp_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    # -- conversions ---------------------------------------------------
    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path, overrides: Optional[dict] = None) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        raw.update(overrides or {})
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def config_hash(self) -> str:
        semantic = {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}
        blob = json.dumps(semantic, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    # -- component configs ----------------------------------------------
    def model_config(self) -> ModelConfig:
        return ModelConfig(self.grid**2, self.n_layers, tuple(GateKind(g) for g in self.gate_pool))

    def search_config(self) -> SearchConfig:
        return SearchConfig(
            lr_omega=self.lr_omega, lr_alpha=self.lr_alpha, batch_size=self.batch_size,
            n_arch=self.n_arch, n_iter=self.n_iter, epochs=self.epochs, tau0=self.tau0,
            tau_decay=self.tau_decay, patience=self.patience, final_epochs=self.final_epochs,
            val_fraction=self.val_fraction, selection=self.selection,
        )

    def cnl_config(self) -> CNLConfig:
        if not self.cnl_enabled:
            return CNLConfig(h=0.0, gamma=0.0)
        return CNLConfig(h=self.h, gamma=self.gamma)

    def mlp_config(self) -> MLPConfig:
        return MLPConfig(hidden=self.mlp_hidden, lr=self.mlp_lr, epochs=self.mlp_epochs, batch=self.batch_size)

    @property
    def model_name(self) -> str:
        return "CNL-QNN" if self.cnl_enabled else "QNN"


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def atomic_write(path, data) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, columns: Sequence[str], rows: Iterable[dict]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    atomic_write(path, buf.getvalue())


def read_csv(path) -> List[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class Manifest:
    """Run manifest, written when the run starts and refreshed at the end."""

    def __init__(self, cfg: ExperimentConfig, command: str, out: Path):
        self.path = Path(out) / f"manifest_{command}.json"
        self.data = {
            "command": command,
            "config_hash": cfg.config_hash(),
            "seed": cfg.seed,
            "version": __version__,
            "deterministic": cfg.deterministic,
            "start": _now(),
            "end": None,
            "status": "running",
            "phases": {},
        }
        write_json(self.path, self.data)

    @contextmanager
    def phase(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.data["phases"][name] = round(time.perf_counter() - t0, 3)

    def finish(self, status: str = "ok") -> None:
        self.data["end"] = _now()
        self.data["status"] = status
        write_json(self.path, self.data)


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


# ---------------------------------------------------------------------------
# Data and model artifacts
# ---------------------------------------------------------------------------


def load_split(cfg: ExperimentConfig) -> DatasetSplit:
    rng = stream(cfg.seed, "data")
    if cfg.dataset == "synthetic":
        return synthetic_dataset(cfg.grid, cfg.n_train, cfg.n_test, rng)
    try:
        if cfg.dataset == "cifar10":
            images, labels = load_cifar_pool(cfg.data_dir)
        else:
            images, labels = load_idx_pool(cfg.data_dir)
        return make_split(images, labels, cfg.class_pair, cfg.n_train, cfg.n_test, cfg.grid, rng)
    except (OSError, DataFormatError, ValueError) as exc:
        raise DataError(f"{cfg.dataset}: {exc}") from exc


def save_model(out: Path, cfg: ExperimentConfig, result: SearchResult) -> None:
    mcfg = cfg.model_config()
    write_json(out / "architecture.json", {
        "n_qubits": mcfg.n_qubits,
        "n_layers": mcfg.n_layers,
        "gate_pool": [g.value for g in mcfg.gate_pool],
        "architecture": [mcfg.gate_pool[i].value for i in result.arch],
        "val_accuracy": result.val_accuracy,
    })
    omega = np.ascontiguousarray(result.store.omega, dtype="<f8")
    atomic_write(out / "omega.bin", omega.tobytes())
    write_json(out / "omega.json", {"dtype": "<f8", "order": "C", "shape": list(omega.shape)})
    write_csv(out / "history.csv", HISTORY_COLUMNS, (
        {"epoch": r.epoch, "tau": r.tau, "mean_loss": r.mean_loss, "val_accuracy": r.val_accuracy}
        for r in result.history
    ))
    # run-local settings stay out so identical runs leave identical files
    write_json(out / "config.json", {k: v for k, v in cfg.to_dict().items() if k not in _UNHASHED})


def load_model(model_dir) -> QuantumModel:
    model_dir = Path(model_dir)
    try:
        arch_doc = json.loads((model_dir / "architecture.json").read_text())
        shape_doc = json.loads((model_dir / "omega.json").read_text())
        raw = (model_dir / "omega.bin").read_bytes()
    except FileNotFoundError as exc:
        raise MissingArtifactError(f"missing model artifact: {exc.filename}") from None
    pool = tuple(GateKind(g) for g in arch_doc["gate_pool"])
    mcfg = ModelConfig(arch_doc["n_qubits"], arch_doc["n_layers"], pool)
    shape = tuple(shape_doc["shape"])
    if len(raw) != 8 * math.prod(shape):
        raise MissingArtifactError(f"omega.bin holds {len(raw)} bytes, shape {shape} needs {8 * math.prod(shape)}")
    omega = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    arch = check_architecture([pool.index(GateKind(g)) for g in arch_doc["architecture"]], mcfg)
    return QuantumModel(mcfg, arch, ParamStore(omega))


def model_config_for(model_dir, overrides: Optional[dict], config_path=None) -> ExperimentConfig:
    """The training config stored with a model, overlaid by a config file and flags.

    Output goes to the model directory unless the file or flags say otherwise.
    """
    stored = Path(model_dir) / "config.json"
    if not stored.exists():
        raise MissingArtifactError(f"missing model artifact: {stored}")
    raw = json.loads(stored.read_text())
    raw["out"] = str(model_dir)
    if config_path is not None:
        try:
            raw.update(json.loads(Path(config_path).read_text()))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {config_path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{config_path}: invalid JSON ({exc})") from None
    raw.update(overrides or {})
    return ExperimentConfig.from_dict(raw)


def _eval_rows(split: DatasetSplit, limit: Optional[int]):
    n = len(split.y_test) if limit is None else min(limit, len(split.y_test))
    return split.x_test[:n], split.y_test[:n]


# ---------------------------------------------------------------------------
# Pipelines
# ---------------------------------------------------------------------------


def train(cfg: ExperimentConfig, split: DatasetSplit) -> Tuple[QuantumModel, SearchResult]:
    result = search_run(split.x_train, split.y_train, cfg.model_config(), cfg.search_config(),
                        cfg.cnl_config(), cfg.seed)
    return QuantumModel(cfg.model_config(), result.arch, result.store), result


def run_search(cfg: ExperimentConfig) -> Dict[str, float]:
    out = Path(cfg.out)
    manifest = Manifest(cfg, "search", out)
    with manifest.phase("data"):
        split = load_split(cfg)
    with manifest.phase("search"):
        model, result = train(cfg, split)
    with manifest.phase("write"):
        save_model(out, cfg, result)
    manifest.finish()
    return {"val_accuracy": result.val_accuracy, "test_accuracy": model.accuracy(split.x_test, split.y_test)}


def train_surrogate(cfg: ExperimentConfig, split: DatasetSplit) -> MLP:
    return mlp_train(split.x_train, split.y_train, cfg.mlp_config(), stream(cfg.seed, "surrogate"),
                     split.x_test, split.y_test)


def _attack_cfg(cfg: ExperimentConfig, method: str, eps: float) -> AttackConfig:
    return AttackConfig(Method(method), eps, steps=cfg.attack_steps, mu=cfg.mim_mu)


def attack_rows(cfg: ExperimentConfig, model, name: str, X, y, surrogate: Optional[MLP] = None) -> List[dict]:
    rows = []
    for method in cfg.attacks:
        for eps in cfg.epsilons:
            res = attack(X, y, model, _attack_cfg(cfg, method, eps))
            rows.append(_attack_row(cfg, name, method, eps, res))
    if surrogate is not None:
        for method in cfg.blackbox:
            for eps in cfg.epsilons:
                res = blackbox_transfer(X, y, surrogate, model, _attack_cfg(cfg, method, eps))
                rows.append(_attack_row(cfg, name, f"BB-{method}", eps, res))
    return rows


def _attack_row(cfg, name, method, eps, res) -> dict:
    return {"dataset": cfg.dataset, "model": name, "method": method, "epsilon": float(eps),
            "clean_acc": res.clean_accuracy, "robust_acc": res.robust_accuracy, "mean_linf": res.mean_linf}


def run_attack(cfg: ExperimentConfig, model_dir) -> List[dict]:
    out = Path(cfg.out)
    model = load_model(model_dir)
    manifest = Manifest(cfg, "attack", out)
    with manifest.phase("data"):
        split = load_split(cfg)
        X, y = _eval_rows(split, cfg.attack_samples)
    surrogate = None
    if cfg.baseline or cfg.blackbox:
        with manifest.phase("surrogate"):
            surrogate = train_surrogate(cfg, split)
    with manifest.phase("attack"):
        rows = attack_rows(cfg, model, cfg.model_name, X, y, surrogate if cfg.blackbox else None)
        if cfg.baseline:
            rows += attack_rows(cfg.replace(blackbox=()), surrogate, "MLP", X, y)
    write_csv(out / "attack.csv", ATTACK_COLUMNS, rows)
    manifest.finish()
    return rows


def noisy_readouts(model: QuantumModel, X: np.ndarray, noise: NoiseSpec, trajectories: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Mean-Z readout of each sample on ``trajectories`` independent noisy runs, shape (B, T)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    var_ops, _ = layer_ops(model.arch, model.store, model.cfg)
    n = model.cfg.n_qubits
    reps = np.repeat(X, trajectories, axis=0)
    out = np.empty(len(reps))
    step = max(1, 2**21 // 2**n)
    for start in range(0, len(reps), step):
        part = reps[start : start + step]
        psi = run_noisy_batch(zero_batch(n, len(part)), encode_ops(part) + var_ops, noise, rng)
        out[start : start + len(part)] = mean_z_batch(psi)
    return out.reshape(len(X), trajectories)


def noise_accuracy(model: QuantumModel, X, y, noise: NoiseSpec, trajectories: int,
                   rng: np.random.Generator, bootstrap: int = 50) -> Tuple[float, float]:
    """Accuracy of the trajectory-averaged prediction and its bootstrap spread.

    The spread resamples trajectories with replacement per sample.  Without
    noise every trajectory is the clean circuit, so the clean prediction is
    used directly and the spread is zero.
    """
    y = np.asarray(y, dtype=np.float64)
    if noise.prob == 0:
        return model.accuracy(X, y), 0.0
    vals = noisy_readouts(model, X, noise, trajectories, rng)
    mean_acc = float(np.mean(np.where(vals.mean(axis=1) >= 0, 1.0, -1.0) == y))
    accs = np.empty(bootstrap)
    for b in range(bootstrap):
        idx = rng.integers(trajectories, size=vals.shape)
        pred = np.take_along_axis(vals, idx, axis=1).mean(axis=1)
        accs[b] = np.mean(np.where(pred >= 0, 1.0, -1.0) == y)
    return mean_acc, float(np.std(accs, ddof=1))


def run_noise(cfg: ExperimentConfig, model_dir) -> List[dict]:
    out = Path(cfg.out)
    model = load_model(model_dir)
    manifest = Manifest(cfg, "noise", out)
    with manifest.phase("data"):
        split = load_split(cfg)
        X, y = _eval_rows(split, cfg.noise_samples)
    rows = []
    with manifest.phase("noise"):
        for ci, channel in enumerate(cfg.noise_channels):
            for pi, prob in enumerate(cfg.noise_probs):
                rng = stream(cfg.seed, "noise", index=ci * 1000 + pi)
                mean_acc, std_acc = noise_accuracy(model, X, y, NoiseSpec(NoiseKind(channel), prob),
                                                   cfg.trajectories, rng, cfg.bootstrap)
                rows.append({"dataset": cfg.dataset, "model": cfg.model_name, "channel": channel,
                             "prob": float(prob), "mean_acc": mean_acc, "std_acc": std_acc})
    write_csv(out / "noise.csv", NOISE_COLUMNS, rows)
    manifest.finish()
    return rows


def run_ablate(cfg: ExperimentConfig) -> List[dict]:
    """Same pipeline with and without the noise layer; clean and FGSM robust accuracy."""
    out = Path(cfg.out)
    manifest = Manifest(cfg, "ablate", out)
    with manifest.phase("data"):
        split = load_split(cfg)
        X, y = _eval_rows(split, cfg.attack_samples)
    fgsm = AttackConfig(Method.FGSM, cfg.ablation_epsilon)
    rows = []
    for enabled in (True, False):
        variant = cfg.replace(cnl_enabled=enabled)
        with manifest.phase(variant.model_name):
            model, _ = train(variant, split)
            res = attack(X, y, model, fgsm)
        rows.append({"dataset": cfg.dataset, "model": variant.model_name,
                     "clean_acc": res.clean_accuracy, "robust_acc": res.robust_accuracy})
    rows.append({"dataset": cfg.dataset, "model": "delta",
                 "clean_acc": rows[0]["clean_acc"] - rows[1]["clean_acc"],
                 "robust_acc": rows[0]["robust_acc"] - rows[1]["robust_acc"]})
    write_csv(out / "ablation.csv", ABLATION_COLUMNS, rows)
    manifest.finish()
    return rows
