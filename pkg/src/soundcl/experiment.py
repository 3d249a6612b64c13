"""Experiment orchestration: configs, the (strategy x seed) grid, resumable
cell runs, metrics aggregation, and sample generation.

Every artifact that the determinism guarantee covers (metrics files, task
checkpoints, generated archives) is a pure function of the config and its
seeds. Episode logs carry wall-clock times and sit outside that guarantee.
"""

from __future__ import annotations

import dataclasses
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .continual import (EpisodeResult, GeneratorModel, ReplayBuffer,
                        classifier_episode, evaluate, generator_episode,
                        make_task_sequence)
from .data import (MelSegment, apply_split_sidecar, read_archive,
                   sidecar_path, split_segments, write_archive)
from .gmm import gmm_arrays, gmm_from_arrays
from .models import (AutoencoderModel, ClassifierModel, VaeModel, param_count,
                     write_model_card, INIT_SCHEME)
from .synthetic import make_synthetic_segments

SEGMENT_SCALARS = 128 * 16


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


# ---- strategies -------------------------------------------------------------

@dataclass(frozen=True)
class Strategy:
    label: str
    kind: str                      # none | rehearsal | generative_replay
    percent: float | None = None
    generator: str | None = None   # ae_gmm | vae


def parse_strategy(text: str) -> Strategy:
    """Grammar: none | rehearsal:P | joint | genreplay:ae_gmm | genreplay:vae."""
    head, _, arg = text.partition(":")
    if head == "none" and not arg:
        return Strategy(label="none", kind="none")
    if head == "joint" and not arg:
        return Strategy(label="joint_100", kind="rehearsal", percent=100.0)
    if head == "rehearsal":
        try:
            pct = float(arg)
        except ValueError:
            raise ConfigError(f"bad rehearsal percentage in {text!r}") from None
        if not 0 < pct <= 100:
            raise ConfigError(f"rehearsal percentage out of (0,100]: {text!r}")
        label = f"rehearsal_{arg}" if pct != 100 else "joint_100"
        return Strategy(label=label, kind="rehearsal", percent=pct)
    if head == "genreplay" and arg in ("ae_gmm", "vae"):
        return Strategy(label=f"genreplay_{arg}", kind="generative_replay",
                        generator=arg)
    raise ConfigError(f"unknown strategy {text!r}")


# ---- configuration ----------------------------------------------------------

@dataclass
class ExperimentConfig:
    dataset: dict
    strategies: list[str]
    seeds: list[int]
    output_dir: str
    classifier_epochs: int = 300
    generator_epochs: int = 1700
    batch_size: int = 100
    classifier_lr: float = 5e-4
    generator_lr: float = 1e-3
    gmm_components_per_class: int = 2
    gmm_max_iter: int = 100
    classifier_replay: str | float = "balanced"   # size policy for the replay set
    generator_replay_ratio: str | float = 1.0     # generated per current sample
    split_seed: int = 1234
    split_ratio: tuple[int, int, int] = (7, 2, 1)
    init_scheme: str = INIT_SCHEME

    def validate(self):
        if not self.strategies:
            raise ConfigError("no strategies configured")
        for text in self.strategies:
            parse_strategy(text)
        if not self.seeds:
            raise ConfigError("no seeds configured")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds must be distinct, got {self.seeds}")
        if self.batch_size < 1 or self.classifier_epochs < 1 or self.generator_epochs < 1:
            raise ConfigError("epochs and batch size must be positive")
        kind = self.dataset.get("kind")
        if kind == "archive":
            path = self.dataset.get("path")
            if not path:
                raise ConfigError("archive dataset needs a 'path'")
            if not Path(path).exists():
                raise ConfigError(f"dataset archive does not exist: {path}")
        elif kind != "synthetic":
            raise ConfigError(f"dataset kind must be 'synthetic' or 'archive', "
                              f"got {kind!r}")
        if isinstance(self.classifier_replay, str) and self.classifier_replay != "balanced":
            raise ConfigError("classifier_replay must be 'balanced' or a ratio")
        if isinstance(self.generator_replay_ratio, str) and \
                self.generator_replay_ratio != "balanced":
            raise ConfigError("generator_replay_ratio must be 'balanced' or a ratio")

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["split_ratio"] = list(self.split_ratio)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        missing = {"dataset", "strategies", "seeds", "output_dir"} - set(doc)
        if missing:
            raise ConfigError(f"missing config keys: {sorted(missing)}")
        doc = dict(doc)
        if "split_ratio" in doc:
            doc["split_ratio"] = tuple(doc["split_ratio"])
        return cls(**doc)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
        return cls.from_dict(doc)


def quick_config(output_dir, **overrides) -> ExperimentConfig:
    """Desk-scale profile: small synthetic corpus, epochs scaled ~10x down.

    Batch size and generator learning rate deviate from the full-protocol
    defaults because the autoencoder's latent space needs more optimizer
    steps per epoch than the reduced budget would otherwise provide.
    """
    base = dict(
        dataset={"kind": "synthetic", "recordings_per_class": 10,
                 "segments_per_recording": 8, "seed": 97},
        strategies=["none", "rehearsal:5", "rehearsal:10", "rehearsal:20",
                    "joint"],
        seeds=[0, 1, 2, 3, 4],
        output_dir=str(output_dir),
        classifier_epochs=30,
        generator_epochs=170,
        batch_size=50,
        generator_lr=2e-3,
        gmm_components_per_class=3,
        gmm_max_iter=60,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


# ---- metrics ----------------------------------------------------------------

@dataclass
class MetricsRecord:
    strategy: str
    seed: int
    task: int
    accuracy: float
    buffer_bytes: int
    generator_param_bytes: int

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "MetricsRecord":
        return cls(**json.loads(line))


def read_metrics(path) -> list[MetricsRecord]:
    records = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            records.append(MetricsRecord.from_json(line))
    return records


# ---- dataset loading --------------------------------------------------------

def load_dataset(config: ExperimentConfig):
    """Returns the (train, val, test) split the experiment will sequence."""
    kind = config.dataset["kind"]
    if kind == "synthetic":
        params = {k: v for k, v in config.dataset.items() if k != "kind"}
        segments = make_synthetic_segments(**params)
        split = split_segments(segments, seed=config.split_seed,
                               ratio=config.split_ratio)
    else:
        path = config.dataset["path"]
        try:
            segments, _header = read_archive(path)
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read segment archive {path}: {exc}") from None
        if sidecar_path(path).exists():
            split = apply_split_sidecar(segments, path)
        else:
            split = split_segments(segments, seed=config.split_seed,
                                   ratio=config.split_ratio)
    if not split.train or not split.test:
        raise DataError("dataset produced an empty train or test split")
    return split


# ---- cell state (resume) ----------------------------------------------------

def _cell_rng_seed(strategy_label: str, seed: int) -> list[int]:
    return [seed, zlib.crc32(strategy_label.encode())]


def _save_cell_checkpoint(path, *, strategy: Strategy, seed: int, task: int,
                          classifier, generator, buffer, past_sizes,
                          records, rng):
    arrays = {}
    for name, value in classifier.state_dict().items():
        arrays[f"classifier/{name}"] = value
    if generator is not None:
        for name, value in generator.model.state_dict().items():
            arrays[f"generator/{name}"] = value
        if generator.gmm is not None:
            arrays.update(gmm_arrays(generator.gmm))
    meta = {
        "model_kind": "cell",
        "strategy": strategy.label,
        "generator_kind": generator.model.kind if generator else None,
        "gmm_version": 1 if generator is not None and generator.gmm is not None
                       else None,
        "seed": seed,
        "task_index": task,
        "rng_state": rng.bit_generator.state,
        "buffer_indices": {str(k): v for k, v in
                           (buffer.chosen_indices if buffer else {}).items()},
        "past_sizes": past_sizes,
        "metrics": [dataclasses.asdict(r) for r in records],
    }
    save_checkpoint(path, arrays, meta)


def _load_cell_checkpoint(path, strategy: Strategy, sequence):
    arrays, meta = load_checkpoint(path)
    classifier = ClassifierModel(rng=None)
    classifier.load_state_dict(
        {k.split("/", 1)[1]: v for k, v in arrays.items()
         if k.startswith("classifier/")})
    generator = None
    gen_state = {k.split("/", 1)[1]: v for k, v in arrays.items()
                 if k.startswith("generator/")}
    if gen_state:
        model = (VaeModel(rng=None) if meta.get("generator_kind") == "vae"
                 else AutoencoderModel(rng=None))
        model.load_state_dict(gen_state)
        mixture = None
        if any(k.startswith("gmm/") for k in arrays):
            mixture = gmm_from_arrays(arrays)
        generator = GeneratorModel(model=model, gmm=mixture)
    buffer = None
    if strategy.kind == "rehearsal":
        buffer = ReplayBuffer(strategy.percent)
        for key in sorted(meta["buffer_indices"], key=int):
            k = int(key)
            buffer.absorb(k, sequence.train_data(k), rng=None,
                          indices=[int(i) for i in meta["buffer_indices"][key]])
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng_state"]
    records = [MetricsRecord(**r) for r in meta["metrics"]]
    return classifier, generator, buffer, meta["past_sizes"], records, rng


def _replay_count(policy, past_sizes: list[int], current_size: int) -> int:
    if not past_sizes:
        return 0
    if policy == "balanced":
        return int(round(float(np.mean(past_sizes)) * len(past_sizes)))
    return int(round(float(policy) * current_size))


# ---- the grid ---------------------------------------------------------------

def run_experiment(config: ExperimentConfig, stop_after_task: int | None = None
                   ) -> Path:
    """Run every (strategy, seed) cell, resumable at task boundaries.

    ``stop_after_task`` is a testing hook that abandons each cell after the
    given task, simulating a killed run; the next invocation resumes.
    Returns the merged metrics path.
    """
    config.validate()
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.json").write_text(
        json.dumps(config.to_dict(), indent=2, sort_keys=True))

    split = load_dataset(config)
    (out / "metrics.meta.json").write_text(json.dumps({
        "train_segments": len(split.train),
        "val_segments": len(split.val),
        "test_segments": len(split.test),
    }, indent=2, sort_keys=True))

    all_records: list[MetricsRecord] = []
    complete = True
    for strategy_text in config.strategies:
        strategy = parse_strategy(strategy_text)
        for seed in config.seeds:
            cell_dir = out / "cells" / f"{strategy.label}-s{seed}"
            records = _run_cell(config, strategy, seed, split, cell_dir,
                                stop_after_task)
            if records is None:
                complete = False
                continue
            all_records.extend(records)

    metrics_path = out / "metrics.jsonl"
    if complete:
        metrics_path.write_text(
            "".join(r.to_json() + "\n" for r in all_records))
    return metrics_path


def _run_cell(config: ExperimentConfig, strategy: Strategy, seed: int,
              split, cell_dir: Path, stop_after_task: int | None
              ) -> list[MetricsRecord] | None:
    cell_dir.mkdir(parents=True, exist_ok=True)
    sequence = make_task_sequence(split.train, split.val, split.test,
                                  permutation_seed=seed)
    n_tasks = len(sequence)

    classifier = None
    generator = None
    buffer = ReplayBuffer(strategy.percent) if strategy.kind == "rehearsal" else None
    past_sizes: list[int] = []
    records: list[MetricsRecord] = []
    rng = np.random.default_rng(_cell_rng_seed(strategy.label, seed))
    start_task = 1
    for t in range(n_tasks, 0, -1):
        ckpt = cell_dir / f"task{t}.ckpt"
        if ckpt.exists():
            classifier, generator, buffer, past_sizes, records, rng = \
                _load_cell_checkpoint(ckpt, strategy, sequence)
            start_task = t + 1
            break

    for t in range(start_task, n_tasks + 1):
        current = sequence.train_data(t)
        episode = EpisodeResult()
        if strategy.kind in ("none", "rehearsal"):
            mode = "rehearsal" if strategy.kind == "rehearsal" else "none"
            classifier = classifier_episode(
                classifier, current, mode, buffer=buffer,
                epochs=config.classifier_epochs, batch_size=config.batch_size,
                lr=config.classifier_lr, rng=rng, task_index=t, seed=seed,
                result=episode)
            if buffer is not None:
                buffer.absorb(t, current, rng)
        else:
            n_replay = _replay_count(config.classifier_replay, past_sizes,
                                     len(current))
            classifier = classifier_episode(
                classifier, current, "generative_replay",
                generator_prev=generator, n_replay=n_replay,
                epochs=config.classifier_epochs, batch_size=config.batch_size,
                lr=config.classifier_lr, rng=rng, task_index=t, seed=seed,
                result=episode)
            gen_replay = _replay_count(config.generator_replay_ratio,
                                       past_sizes, len(current))
            generator = generator_episode(
                generator, current, strategy.generator,
                epochs=config.generator_epochs, batch_size=config.batch_size,
                lr=config.generator_lr, n_replay=gen_replay,
                gmm_components=config.gmm_components_per_class * 2 * t,
                gmm_max_iter=config.gmm_max_iter, rng=rng, task_index=t,
                seed=seed, result=episode)

        accuracy = evaluate(classifier, sequence, t,
                            batch_size=config.batch_size)
        gen_bytes = 0
        if generator is not None:
            scalars = param_count(generator.model)
            if generator.gmm is not None:
                scalars += (generator.gmm.weights.size +
                            generator.gmm.means.size +
                            generator.gmm.variances.size)
            gen_bytes = scalars * 8
        records.append(MetricsRecord(
            strategy=strategy.label, seed=seed, task=t, accuracy=accuracy,
            buffer_bytes=buffer.storage_bytes() if buffer else 0,
            generator_param_bytes=gen_bytes))
        past_sizes.append(len(current))

        if episode.records:
            episode.records[-1].eval_accuracy = accuracy
        (cell_dir / f"episodes-task{t}.jsonl").write_text(
            "".join(json.dumps(dataclasses.asdict(r), sort_keys=True) + "\n"
                    for r in episode.records))
        _save_cell_checkpoint(cell_dir / f"task{t}.ckpt", strategy=strategy,
                              seed=seed, task=t, classifier=classifier,
                              generator=generator, buffer=buffer,
                              past_sizes=past_sizes, records=records, rng=rng)
        if stop_after_task is not None and t >= stop_after_task:
            return None

    write_model_card(cell_dir / "classifier.card.json", classifier,
                     task_index=n_tasks, seed=seed)
    if generator is not None:
        write_model_card(cell_dir / "generator.card.json", generator.model,
                         task_index=n_tasks, seed=seed)
    (cell_dir / "metrics.jsonl").write_text(
        "".join(r.to_json() + "\n" for r in records))
    return records


# ---- summarize ----------------------------------------------------------------

@dataclass
class Report:
    cells: dict[tuple[str, int], tuple[float, float, int]]  # (strategy, task)
    strategies: list[str]
    tasks: list[int]
    missing: list[tuple[str, int]]
    variance_by_task: dict[int, float]
    storage_rows: list[dict] = field(default_factory=list)


def summarize(metrics_paths, out_dir=None, train_segments: int | None = None
              ) -> Report:
    """Per-strategy per-task mean/sd plus the storage-cost table."""
    records: list[MetricsRecord] = []
    for path in metrics_paths:
        records.extend(read_metrics(path))
        meta_path = Path(path).parent / "metrics.meta.json"
        if train_segments is None and meta_path.exists():
            train_segments = json.loads(meta_path.read_text())["train_segments"]
    if not records:
        raise DataError("no metrics records found")

    strategies: list[str] = []
    for r in records:
        if r.strategy not in strategies:
            strategies.append(r.strategy)
    tasks = sorted({r.task for r in records})

    cells: dict[tuple[str, int], tuple[float, float, int]] = {}
    missing: list[tuple[str, int]] = []
    for strat in strategies:
        for task in tasks:
            accs = [r.accuracy for r in records
                    if r.strategy == strat and r.task == task]
            if not accs:
                missing.append((strat, task))
                continue
            cells[(strat, task)] = (float(np.mean(accs)), float(np.std(accs)),
                                    len(accs))

    variance_by_task = {
        task: float(np.mean([cells[(s, task)][1] for s in strategies
                             if (s, task) in cells]))
        for task in tasks
    }

    storage_rows = []
    final_task = tasks[-1]
    for strat in strategies:
        rows = [r for r in records
                if r.strategy == strat and r.task == final_task]
        if not rows:
            continue
        buffer_bytes = int(np.mean([r.buffer_bytes for r in rows]))
        gen_bytes = int(np.mean([r.generator_param_bytes for r in rows]))
        fraction = None
        if strat.startswith("rehearsal_"):
            fraction = float(strat.split("_", 1)[1]) / 100.0
        elif strat == "joint_100":
            fraction = 1.0
        elif strat == "none":
            fraction = 0.0
        elif gen_bytes and train_segments:
            fraction = (gen_bytes / 8) / SEGMENT_SCALARS / train_segments
        storage_rows.append({
            "strategy": strat,
            "buffer_bytes": buffer_bytes,
            "generator_param_bytes": gen_bytes,
            "stored_fraction_of_train": fraction,
        })

    report = Report(cells=cells, strategies=strategies, tasks=tasks,
                    missing=missing, variance_by_task=variance_by_task,
                    storage_rows=storage_rows)
    if out_dir is not None:
        _write_report(report, Path(out_dir))
    return report


def _write_report(report: Report, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["strategy,task,mean_accuracy,std_accuracy,n_runs"]
    for strat in report.strategies:
        for task in report.tasks:
            if (strat, task) not in report.cells:
                continue
            mean, sd, n = report.cells[(strat, task)]
            lines.append(f"{strat},{task},{mean:.6f},{sd:.6f},{n}")
    (out_dir / "summary.csv").write_text("\n".join(lines) + "\n")

    rows = ["strategy,buffer_bytes,generator_param_bytes,stored_fraction_of_train"]
    for row in report.storage_rows:
        frac = ("" if row["stored_fraction_of_train"] is None
                else f"{row['stored_fraction_of_train']:.6f}")
        rows.append(f"{row['strategy']},{row['buffer_bytes']},"
                    f"{row['generator_param_bytes']},{frac}")
    (out_dir / "storage.csv").write_text("\n".join(rows) + "\n")

    md = ["# Accuracy by task", "",
          "| strategy | " + " | ".join(f"task {t}" for t in report.tasks) + " |",
          "|---|" + "---|" * len(report.tasks)]
    for strat in report.strategies:
        row = [strat]
        for task in report.tasks:
            if (strat, task) in report.cells:
                mean, sd, _ = report.cells[(strat, task)]
                row.append(f"{mean:.3f} ± {sd:.3f}")
            else:
                row.append("MISSING")
        md.append("| " + " | ".join(row) + " |")
    md += ["", "## Accuracy spread per task (mean sd across strategies)", ""]
    for task in report.tasks:
        md.append(f"- task {task}: {report.variance_by_task[task]:.4f}")
    if report.missing:
        md += ["", "## Missing cells", ""]
        md += [f"- {s} task {t}" for s, t in report.missing]
    (out_dir / "summary.md").write_text("\n".join(md) + "\n")


# ---- sample generation --------------------------------------------------------

def save_generator(path, generator: GeneratorModel, metadata: dict | None = None):
    arrays = dict(generator.model.state_dict())
    if generator.gmm is not None:
        arrays.update(gmm_arrays(generator.gmm))
    meta = dict(metadata or {})
    meta["model_kind"] = generator.model.kind
    meta["gmm_version"] = 1 if generator.gmm is not None else None
    meta.setdefault("task_index", -1)
    meta.setdefault("seed", -1)
    save_checkpoint(path, arrays, meta)


def load_generator(path) -> GeneratorModel:
    arrays, meta = load_checkpoint(path)
    if meta.get("model_kind") == "cell":
        model_arrays = {k.split("/", 1)[1]: v for k, v in arrays.items()
                        if k.startswith("generator/")}
        kind = meta.get("generator_kind")
        if not model_arrays:
            raise CheckpointError(f"no generator stored in {path}")
    else:
        model_arrays = {k: v for k, v in arrays.items()
                        if not k.startswith("gmm/")}
        kind = meta.get("model_kind")
    model = VaeModel(rng=None) if kind == "vae" else AutoencoderModel(rng=None)
    model.load_state_dict(model_arrays)
    mixture = gmm_from_arrays(arrays) if any(k.startswith("gmm/")
                                             for k in arrays) else None
    return GeneratorModel(model=model, gmm=mixture)


def generate_samples(checkpoint_path, n: int, out_path, seed: int = 0) -> Path:
    """Decode n fresh latent draws into a segment archive (labels are not
    meaningful for generated data and are written as 0)."""
    generator = load_generator(checkpoint_path)
    rng = np.random.default_rng(seed)
    values = generator.sample_segments(n, rng)
    segments = [MelSegment(values=v, label=0,
                           recording_id=f"gen-{seed}", segment_index=i)
                for i, v in enumerate(values)]
    write_archive(out_path, segments, seed=seed)
    return Path(out_path)
