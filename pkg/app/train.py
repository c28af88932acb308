"""
Joint training of TailNet and its preference mechanism.

Each batch runs one forward/backward per (prefix, target) pair on its own tape,
against a read-only snapshot of the parameters. Pairs are handed to worker
processes in fixed-size chunks; chunk sums are reduced in batch order and
applied with a single Adam step, so a run is bit-for-bit reproducible for a
given seed whatever the worker count.

Model selection keeps the parameters with the best validation MRR@20 and stops
after `early_stop_patience` epochs without improvement.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from app import codec
from app.config import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPS,
    BATCH_SIZE,
    CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
    EARLY_STOP_PATIENCE,
    EMBED_DIM,
    EPOCHS,
    GRADIENT_CHUNK,
    L2,
    LEARNING_RATE,
    SEED,
    SELECTION_K,
)
from app.errors import (
    ConfigError,
    DataError,
    DimensionError,
    FormatError,
    NumericError,
    TrainingError,
)
from app.ingest import Dataset, ItemCatalog, Pair, catalog_sections, read_catalog
from app.metrics import evaluate
from app.model import BIAS_NAMES, ModelParams, TailNetRecommender, forward, param_shapes
from app.numkernel import backward
from app.tasks import map_processes

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    d: int = EMBED_DIM
    learning_rate: float = LEARNING_RATE
    batch_size: int = BATCH_SIZE
    epochs: int = EPOCHS
    l2: float = L2
    seed: int = SEED
    use_pm: bool = True
    early_stop_patience: int = EARLY_STOP_PATIENCE

    def __post_init__(self) -> None:
        checks = {
            "d": self.d >= 1,
            "learning_rate": self.learning_rate > 0,
            "batch_size": self.batch_size >= 1,
            "epochs": self.epochs >= 0,
            "l2": self.l2 >= 0,
            "seed": self.seed >= 0,
            "early_stop_patience": self.early_stop_patience >= 1,
        }
        bad = [name for name, ok in checks.items() if not ok]
        if bad:
            raise ConfigError(f"Invalid training setting(s): {', '.join(bad)}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> TrainConfig:
        return cls(**dict(data))


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams | Mapping[str, np.ndarray]) -> OptimizerState:
        tensors = params.tensors if isinstance(params, ModelParams) else params
        return cls(
            m={k: np.zeros_like(v) for k, v in tensors.items()},
            v={k: np.zeros_like(v) for k, v in tensors.items()},
        )


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    valid_mrr: float
    seconds: float = field(default=0.0, compare=False)


@dataclass(eq=False)
class Checkpoint:
    config: TrainConfig
    catalog: ItemCatalog
    params: ModelParams
    best_valid_mrr: float
    epoch: int
    version: int = CHECKPOINT_VERSION


def optimizer_step(
    params: ModelParams | dict[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    l2: float,
) -> tuple[ModelParams | dict[str, np.ndarray], OptimizerState]:
    """
    Adam with bias correction, updating `params` in place.

    Weight decay is decoupled (p -= lr·l2·p) and skips the bias vectors.
    """
    tensors = params.tensors if isinstance(params, ModelParams) else params
    state.step += 1
    c1 = 1.0 - ADAM_BETA1 ** state.step
    c2 = 1.0 - ADAM_BETA2 ** state.step

    for name, p in tensors.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise DimensionError(f"Gradient {name!r} has shape {g.shape}, parameter {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        if l2 and name not in BIAS_NAMES:
            update = update + l2 * p
        p -= lr * update
    return params, state


def _accumulate(total: dict[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if name in total:
            total[name] += g
        else:
            total[name] = g.copy()


def chunk_gradients(
    pairs: Sequence[Pair], params: ModelParams, catalog: ItemCatalog, use_pm: bool
) -> tuple[float, dict[str, np.ndarray]]:
    """Summed loss and gradients over a run of pairs, one tape per pair, in order."""
    loss_sum = 0.0
    total: dict[str, np.ndarray] = {}
    for pair in pairs:
        loss, _, trace = forward(pair.prefix, pair.target, params, catalog, use_pm)
        _accumulate(total, backward(trace.tape, trace.loss_ref))
        loss_sum += loss
    return loss_sum, total


def batch_gradients(
    pairs: Sequence[Pair],
    params: ModelParams,
    catalog: ItemCatalog,
    use_pm: bool,
    threads: int | None = 1,
) -> tuple[float, dict[str, np.ndarray]]:
    """
    Summed loss and gradients over `pairs`.

    Pairs are summed in chunks of GRADIENT_CHUNK and the chunk sums in batch
    order, so the result is the same for any worker count.
    """
    chunks = [pairs[i:i + GRADIENT_CHUNK] for i in range(0, len(pairs), GRADIENT_CHUNK)]
    results = map_processes(chunk_gradients, chunks, threads, params, catalog, use_pm)

    loss_sum = 0.0
    total: dict[str, np.ndarray] = {}
    for loss, grads in results:
        loss_sum += loss
        _accumulate(total, grads)
    return loss_sum, total


def validation_mrr(
    dataset: Dataset, params: ModelParams, use_pm: bool, threads: int | None = 1
) -> float:
    if not dataset.valid:
        return math.nan
    recommender = TailNetRecommender(params, dataset.catalog, use_pm)
    report = evaluate(
        recommender, dataset.valid, dataset.catalog, ks=(SELECTION_K,), threads=threads
    )
    return report.get("mrr", SELECTION_K)


def train(
    dataset: Dataset,
    config: TrainConfig,
    threads: int | None = 1,
    on_epoch: Callable[[EpochStats], None] | None = None,
) -> tuple[Checkpoint, list[EpochStats]]:
    if not dataset.train:
        raise DataError("Cannot train on an empty training split")
    catalog = dataset.catalog

    init_seq, shuffle_seq = np.random.SeedSequence(config.seed).spawn(2)
    params = ModelParams.initialize(config.d, catalog.num_items, np.random.default_rng(init_seq))
    shuffle_rng = np.random.default_rng(shuffle_seq)
    state = OptimizerState.zeros_like(params)
    select = bool(dataset.valid)
    if not select:
        logger.warning("No validation pairs: keeping the last epoch instead of the best one")

    best_mrr = validation_mrr(dataset, params, config.use_pm, threads)
    best_params, best_epoch = params.copy(), 0
    history = [EpochStats(epoch=0, train_loss=math.nan, valid_mrr=best_mrr)]
    if on_epoch:
        on_epoch(history[0])

    stale = 0
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        order = shuffle_rng.permutation(len(dataset.train))
        loss_sum = 0.0

        for batch_no, start in enumerate(range(0, len(order), config.batch_size)):
            batch = [dataset.train[i] for i in order[start:start + config.batch_size]]
            try:
                batch_loss, grads = batch_gradients(batch, params, catalog, config.use_pm, threads)
            except NumericError as exc:
                raise TrainingError(f"Diverged in epoch {epoch}, batch {batch_no}: {exc}") from exc
            if not math.isfinite(batch_loss):
                raise TrainingError(
                    f"Diverged in epoch {epoch}, batch {batch_no}: loss {batch_loss}"
                )
            optimizer_step(params, grads, state, config.learning_rate, config.l2)
            loss_sum += batch_loss

        mrr = validation_mrr(dataset, params, config.use_pm, threads)
        stats = EpochStats(
            epoch=epoch,
            train_loss=loss_sum / len(dataset.train),
            valid_mrr=mrr,
            seconds=time.perf_counter() - started,
        )
        history.append(stats)
        if on_epoch:
            on_epoch(stats)
        logger.info(
            "Epoch %d: train_loss=%.5f valid_mrr@%d=%.3f (%.1fs)",
            epoch, stats.train_loss, SELECTION_K, mrr, stats.seconds,
        )

        if not select or mrr > best_mrr:
            best_mrr, best_params, best_epoch, stale = mrr, params.copy(), epoch, 0
            continue
        stale += 1
        if stale >= config.early_stop_patience:
            logger.info("Early stop after epoch %d (best epoch %d)", epoch, best_epoch)
            break

    checkpoint = Checkpoint(
        config=config,
        catalog=catalog,
        params=best_params,
        best_valid_mrr=best_mrr,
        epoch=best_epoch,
    )
    return checkpoint, history


# ---------------------------------------------------------------------------
# TLNT checkpoint file
# ---------------------------------------------------------------------------

def _checkpoint_writer(cp: Checkpoint) -> codec.ContainerWriter:
    writer = codec.ContainerWriter(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    writer.section(codec.pack_json(cp.config.to_dict()))
    writer.section(codec.pack_json({
        "epoch": cp.epoch,
        "d": cp.params.d,
        "num_items": cp.params.num_items,
        "names": cp.params.names(),
    }))
    writer.section(codec.pack_array(np.array([cp.best_valid_mrr], dtype=np.float64)))
    for payload in catalog_sections(cp.catalog):
        writer.section(payload)
    for name in cp.params.names():
        writer.section(codec.pack_array(cp.params.tensors[name]))
    return writer


def checkpoint_bytes(cp: Checkpoint) -> bytes:
    return _checkpoint_writer(cp).getvalue()


def save_checkpoint(cp: Checkpoint, path: str | Path) -> Path:
    return _checkpoint_writer(cp).save(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    reader = codec.ContainerReader.open(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, "Checkpoint")
    try:
        config = TrainConfig.from_dict(codec.unpack_json(reader.section()))
        meta = codec.unpack_json(reader.section())
        best = codec.unpack_array(reader.section())
        catalog = read_catalog(reader)
        d, num_items = int(meta["d"]), int(meta["num_items"])
        expected = list(param_shapes(d, num_items))
        if meta["names"] != expected:
            raise FormatError(f"Checkpoint: unexpected parameter list {meta['names']}")
        tensors = {name: codec.unpack_array(reader.section()) for name in expected}
        reader.finish()
        params = ModelParams(d=d, num_items=num_items, tensors=tensors)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"Checkpoint: corrupt content ({exc})") from exc

    if params.num_items != catalog.num_items or best.shape != (1,):
        raise FormatError("Checkpoint: catalog and parameters disagree")
    return Checkpoint(
        config=config,
        catalog=catalog,
        params=params,
        best_valid_mrr=float(best[0]),
        epoch=int(meta["epoch"]),
    )
