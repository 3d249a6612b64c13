"""Continual-learning engine: task sequencing, rehearsal buffers,
generative replay, and the per-episode training loops.

Episodes see the current task's training data plus, depending on strategy,
a buffer of stored past samples or a replay set drawn from the previous
generator. They never touch other tasks' raw data; every read of the task
sequence goes through accessors that record what was touched.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import gmm as gmm_mod
from .data import MelSegment
from .losses import bce_per_sample, cross_entropy, kl_per_sample
from .models import (AutoencoderModel, ClassifierModel, LATENT_DIM, N_CLASSES,
                     VaeModel)
from .optim import Adam
from .tensor import Tensor

log = logging.getLogger(__name__)

CLASS_PAIRS = ((0, 1), (2, 3), (4, 5), (6, 7), (8, 9))


# ---- task sequencing --------------------------------------------------------

@dataclass
class TaskDataset:
    index: int                 # 1-based position in the sequence
    classes: tuple[int, int]
    train: list[MelSegment]
    val: list[MelSegment]
    test: list[MelSegment]


class TaskSequence:
    """Ordered episodes of two classes each; reads are logged so tests can
    verify that an episode never touched another task's raw data."""

    def __init__(self, tasks: list[TaskDataset], permutation: tuple[int, ...]):
        self.tasks = tasks
        self.permutation = permutation
        self.access_log: list[tuple[str, int]] = []

    def __len__(self):
        return len(self.tasks)

    def classes_of(self, t: int) -> tuple[int, int]:
        return self.tasks[t - 1].classes

    def classes_upto(self, t: int) -> list[int]:
        out: list[int] = []
        for task in self.tasks[:t]:
            out.extend(task.classes)
        return out

    def train_data(self, t: int) -> list[MelSegment]:
        self.access_log.append(("train", t))
        return self.tasks[t - 1].train

    def val_data(self, t: int) -> list[MelSegment]:
        self.access_log.append(("val", t))
        return self.tasks[t - 1].val

    def test_data_upto(self, t: int) -> list[MelSegment]:
        out: list[MelSegment] = []
        for k in range(1, t + 1):
            self.access_log.append(("test", k))
            out.extend(self.tasks[k - 1].test)
        return out


def make_task_sequence(train: list[MelSegment], val: list[MelSegment],
                       test: list[MelSegment],
                       permutation_seed: int) -> TaskSequence:
    """Group classes into the fixed label-index pairs, then shuffle the
    order of the pairs with the permutation seed."""
    present = {seg.label for seg in train}
    missing = set(range(N_CLASSES)) - present
    if missing:
        raise ValueError(f"training data is missing classes {sorted(missing)}")

    rng = np.random.default_rng(permutation_seed)
    order = tuple(int(i) for i in rng.permutation(len(CLASS_PAIRS)))
    tasks = []
    for position, pair_index in enumerate(order, start=1):
        pair = CLASS_PAIRS[pair_index]
        tasks.append(TaskDataset(
            index=position,
            classes=pair,
            train=[s for s in train if s.label in pair],
            val=[s for s in val if s.label in pair],
            test=[s for s in test if s.label in pair],
        ))
    return TaskSequence(tasks, order)


# ---- batching helpers -------------------------------------------------------

def one_hot(labels: np.ndarray, n_classes: int = N_CLASSES) -> np.ndarray:
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def segments_to_arrays(segments: list[MelSegment]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([seg.values for seg in segments])
    y = np.array([seg.label for seg in segments], dtype=np.int64)
    return x, y


def _minibatches(n: int, batch_size: int, rng) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


# ---- rehearsal --------------------------------------------------------------

class ReplayBuffer:
    """Stored real samples per past task; grows only at task boundaries."""

    def __init__(self, percent: float):
        if not 0 < percent <= 100:
            raise ValueError(f"percent must be in (0, 100], got {percent}")
        self.percent = percent
        self.stores: dict[int, list[MelSegment]] = {}
        self.chosen_indices: dict[int, list[int]] = {}

    def absorb(self, task_index: int, train_segments: list[MelSegment], rng,
               indices: list[int] | None = None):
        """Store round(p% * |train|) samples of a finished task."""
        if task_index in self.stores:
            raise ValueError(f"task {task_index} already absorbed")
        if indices is None:
            count = int(round(self.percent / 100.0 * len(train_segments)))
            count = min(count, len(train_segments))
            indices = sorted(int(i) for i in
                             rng.choice(len(train_segments), size=count,
                                        replace=False))
        self.chosen_indices[task_index] = list(indices)
        self.stores[task_index] = [train_segments[i] for i in indices]

    def total_stored(self) -> int:
        return sum(len(v) for v in self.stores.values())

    def storage_bytes(self) -> int:
        # float64 payload of every stored 128x16 segment
        return sum(seg.values.size * 8 for store in self.stores.values()
                   for seg in store)

    def draw(self, batch_size: int, rng) -> dict[int, tuple[np.ndarray, np.ndarray]]:
        """One balanced batch: each slot picks a past task uniformly, then a
        stored sample of that task (with replacement), grouped per task."""
        if not self.stores:
            return {}
        tasks = sorted(self.stores)
        slot_tasks = rng.integers(len(tasks), size=batch_size)
        batches: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        for pos, task in enumerate(tasks):
            count = int((slot_tasks == pos).sum())
            if count == 0:
                continue
            store = self.stores[task]
            picks = rng.integers(len(store), size=count)
            chosen = [store[i] for i in picks]
            batches[task] = segments_to_arrays(chosen)
        return batches


def rehearsal_loss(classifier: ClassifierModel,
                   current_batch: tuple[np.ndarray, np.ndarray],
                   past_batches: dict[int, tuple[np.ndarray, np.ndarray]],
                   ) -> tuple[Tensor, float, float]:
    """Current-task mean cross-entropy plus one separately-normalized mean
    cross-entropy per past task. Returns (loss, current term, rehearsal
    term) with the terms as plain floats for logging."""
    x, y = current_batch
    current = cross_entropy(classifier.forward(x), Tensor(one_hot(y)))
    loss = current
    rehearsal_total = 0.0
    for task in sorted(past_batches):
        xk, yk = past_batches[task]
        term = cross_entropy(classifier.forward(xk), Tensor(one_hot(yk)))
        rehearsal_total += term.item()
        loss = loss + term
    return loss, current.item(), rehearsal_total


# ---- generative replay ------------------------------------------------------

@dataclass
class GeneratorModel:
    """AE or VAE weights plus, for the two-step variant, the Gaussian
    mixture fitted on its latent embeddings."""

    model: AutoencoderModel
    gmm: gmm_mod.GmmModel | None

    @property
    def kind(self) -> str:
        return self.model.kind

    def sample_segments(self, n: int, rng) -> np.ndarray:
        """Decode n latent draws: GMM samples for the AE, unit-Gaussian
        samples for the VAE prior. Degenerate all-zero decodes are
        dropped (logged)."""
        if self.gmm is not None:
            z = gmm_mod.sample(self.gmm, n, rng)
        else:
            z = rng.standard_normal((n, LATENT_DIM))
        x = self.model.decode(z).data
        alive = np.linalg.norm(x.reshape(len(x), -1), axis=1) > 1e-8
        if not alive.all():
            log.warning("dropping %d degenerate generated segments",
                        int((~alive).sum()))
            x = x[alive]
        return x


@dataclass
class ReplaySet:
    """Generated inputs with the frozen previous classifier's soft outputs
    as distillation targets."""

    inputs: np.ndarray        # n x 128 x 16, values in (0,1)
    soft_targets: np.ndarray  # n x 10, rows sum to 1

    def __len__(self):
        return len(self.inputs)


def make_replay_set(generator: GeneratorModel, frozen_prev: ClassifierModel,
                    n: int, rng) -> ReplaySet:
    inputs = generator.sample_segments(n, rng)
    logits = frozen_prev.predict_logits(inputs)
    soft = Tensor(logits).softmax().data
    return ReplaySet(inputs=inputs, soft_targets=soft)


def generative_replay_classifier_loss(f_t: ClassifierModel,
                                      f_frozen_prev: ClassifierModel | None,
                                      current_batch: tuple[np.ndarray, np.ndarray],
                                      replay: ReplaySet | None,
                                      ) -> tuple[Tensor, float, float]:
    """Current-task cross-entropy plus soft-target distillation on the
    replay set; both terms are batch means."""
    if replay is not None and len(replay) and f_frozen_prev is None:
        raise ValueError("replay data supplied at the first task: no previous "
                         "classifier exists to distill from")
    x, y = current_batch
    current = cross_entropy(f_t.forward(x), Tensor(one_hot(y)))
    if replay is None or not len(replay):
        return current, current.item(), 0.0
    distill = cross_entropy(f_t.forward(replay.inputs),
                            Tensor(replay.soft_targets))
    return current + distill, current.item(), distill.item()


# ---- episode loops ----------------------------------------------------------

@dataclass
class EpisodeRecord:
    task: int
    epoch: int
    current_loss: float
    replay_loss: float
    wall_time: float
    seed: int
    eval_accuracy: float | None = None


@dataclass
class EpisodeResult:
    records: list[EpisodeRecord] = field(default_factory=list)


def _epoch_record(records, task, epoch, cur, rep, started, seed):
    records.append(EpisodeRecord(task=task, epoch=epoch,
                                 current_loss=cur, replay_loss=rep,
                                 wall_time=time.time() - started, seed=seed))


def classifier_episode(f_prev: ClassifierModel | None,
                       current_train: list[MelSegment],
                       strategy: str,
                       *,
                       buffer: ReplayBuffer | None = None,
                       generator_prev: GeneratorModel | None = None,
                       epochs: int,
                       batch_size: int,
                       lr: float,
                       n_replay: int = 0,
                       rng,
                       task_index: int,
                       seed: int = -1,
                       result: EpisodeResult | None = None,
                       ) -> ClassifierModel:
    """Train the classifier for one task under the given strategy.

    Strategies: "none", "rehearsal" (reads the buffer), "generative_replay"
    (distills against the frozen previous classifier on generated data).
    "joint" is rehearsal with a 100% buffer and is handled by the caller's
    buffer construction.
    """
    if strategy not in ("none", "rehearsal", "generative_replay"):
        raise ValueError(f"unknown strategy {strategy!r}")
    if strategy == "rehearsal" and buffer is None:
        raise ValueError("rehearsal strategy requires a buffer")
    if strategy == "generative_replay" and generator_prev is not None and f_prev is None:
        raise ValueError("replay at the first task is rejected: no previous "
                         "classifier exists")

    model = f_prev.clone() if f_prev is not None else ClassifierModel(rng)
    frozen_prev = f_prev.clone().freeze() if f_prev is not None else None
    optimizer = Adam(model.params(), lr=lr)
    x_all, y_all = segments_to_arrays(current_train)
    records = result.records if result is not None else []

    for epoch in range(1, epochs + 1):
        started = time.time()
        replay = None
        if strategy == "generative_replay" and generator_prev is not None and n_replay > 0:
            # fresh samples every epoch so the model never overfits one draw
            replay = make_replay_set(generator_prev, frozen_prev, n_replay, rng)
        cur_sum = rep_sum = 0.0
        steps = 0
        for batch_idx in _minibatches(len(x_all), batch_size, rng):
            batch = (x_all[batch_idx], y_all[batch_idx])
            if strategy == "rehearsal" and buffer is not None:
                past = buffer.draw(batch_size, rng)
                loss, cur, rep = rehearsal_loss(model, batch, past)
            elif strategy == "generative_replay" and replay is not None:
                picks = rng.integers(len(replay), size=min(batch_size, len(replay)))
                sub = ReplaySet(replay.inputs[picks], replay.soft_targets[picks])
                loss, cur, rep = generative_replay_classifier_loss(
                    model, frozen_prev, batch, sub)
            else:
                loss, cur, rep = generative_replay_classifier_loss(
                    model, None, batch, None)
            model.zero_grad()
            loss.backward()
            optimizer.step()
            cur_sum += cur
            rep_sum += rep
            steps += 1
        _epoch_record(records, task_index, epoch, cur_sum / steps,
                      rep_sum / steps, started, seed)
    return model


def generator_episode(g_prev: GeneratorModel | None,
                      current_train: list[MelSegment],
                      generator_kind: str,
                      *,
                      epochs: int,
                      batch_size: int,
                      lr: float,
                      n_replay: int = 0,
                      gmm_components: int = 4,
                      gmm_max_iter: int = 100,
                      rng,
                      task_index: int,
                      seed: int = -1,
                      result: EpisodeResult | None = None,
                      ) -> GeneratorModel:
    """Train the generator on current data plus its own replay, then (for
    the two-step variant) refit the mixture on the union's embeddings."""
    if generator_kind not in ("ae_gmm", "vae"):
        raise ValueError(f"unknown generator kind {generator_kind!r}")
    is_vae = generator_kind == "vae"

    if g_prev is not None:
        model = g_prev.model.clone()
    else:
        model = VaeModel(rng) if is_vae else AutoencoderModel(rng)
    optimizer = Adam(model.params(), lr=lr)
    x_cur, _ = segments_to_arrays(current_train)
    records = result.records if result is not None else []

    union = x_cur
    for epoch in range(1, epochs + 1):
        started = time.time()
        if g_prev is not None and n_replay > 0:
            replayed = g_prev.sample_segments(n_replay, rng)
            union = np.concatenate([x_cur, replayed], axis=0)
        else:
            union = x_cur
        cur_sum = rep_sum = 0.0
        n_current = len(x_cur)
        steps = 0
        for batch_idx in _minibatches(len(union), batch_size, rng):
            xb = union[batch_idx]
            if is_vae:
                recon, mu, logvar = model.forward(xb, rng)
                per = bce_per_sample(recon, Tensor(xb)) + kl_per_sample(mu, logvar)
            else:
                per = bce_per_sample(model.forward(xb), Tensor(xb))
            loss = per.mean()
            model.zero_grad()
            loss.backward()
            optimizer.step()
            from_current = batch_idx < n_current
            if from_current.any():
                cur_sum += float(per.data[from_current].mean())
            if (~from_current).any():
                rep_sum += float(per.data[~from_current].mean())
            steps += 1
        _epoch_record(records, task_index, epoch, cur_sum / steps,
                      rep_sum / steps, started, seed)

    fitted = None
    if not is_vae:
        latents = model.encode(union).data
        k = min(gmm_components, len(latents))
        fitted = gmm_mod.fit_em(latents, k, max_iter=gmm_max_iter, rng=rng)
    return GeneratorModel(model=model, gmm=fitted)


# ---- evaluation -------------------------------------------------------------

def evaluate(classifier: ClassifierModel, sequence: TaskSequence,
             t: int, batch_size: int = 200) -> float:
    """Accuracy over the union of test segments of tasks 1..t (argmax over
    all 10 logits)."""
    if not 1 <= t <= len(sequence):
        raise ValueError(f"task index {t} outside 1..{len(sequence)}")
    segments = sequence.test_data_upto(t)
    x, y = segments_to_arrays(segments)
    logits = classifier.predict_logits(x, batch_size=batch_size)
    return float((logits.argmax(axis=1) == y).mean())


def accuracy_on(classifier: ClassifierModel, segments: list[MelSegment],
                batch_size: int = 200) -> float:
    x, y = segments_to_arrays(segments)
    logits = classifier.predict_logits(x, batch_size=batch_size)
    return float((logits.argmax(axis=1) == y).mean())
