"""Config-driven experiment drivers: task matrices, the ablation ladder, sweeps and reports.

Layout of an output directory::

    experiment.yaml               resolved spec, run kind, variant order, hash
    sources/<domain>-seed<k>-<hash>/source.pt
    runs/<variant>/<source>_to_<target>/seed<k>/
        config.yaml  run_record.json  metrics.jsonl  confusion.csv  target.pt
    <kind>.csv / .md / .txt       the report table
    sweep.csv                     sweep runs only: one row per (point, task)
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
import logging
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, DataError
from .network import EncoderConfig, SDALRNet, load_checkpoint, predict
from .pseudo_label import assign_labels
from .signals import (
    JNU_DOMAINS,
    PU_DOMAINS,
    DomainDataset,
    DomainShift,
    SynthConfig,
    TransferTask,
    load_jnu,
    load_pu,
    synth_domain,
)
from .training import AdaptationConfig, RunRecord, adapt_target, config_digest, stratified_split, train_source

log = logging.getLogger(__name__)

DATASETS = ("synth", "pu", "jnu")

SWEEP_AXES = {
    "beta": tuple(round(0.1 * k, 2) for k in range(1, 11)),
    "threshold": tuple(round(0.5 + 0.05 * k, 2) for k in range(10)),
}

# Each rung adds one module on top of the previous one.
ABLATION_LADDER = (
    ("lsc+im", dict(use_car=False, use_voting=False, use_uem=False)),
    ("+car", dict(use_car=True, use_voting=False, use_uem=False)),
    ("+voting", dict(use_car=True, use_voting=True, use_uem=False)),
    ("+voting+uem", dict(use_car=True, use_voting=True, use_uem=True)),
)

SOURCE_ONLY = "source-only"
FULL_METHOD = "sdalr"

# Fields of AdaptationConfig that change the source model; the cache key uses only these.
_SOURCE_FIELDS = ("batch_size", "source_lr", "source_epochs", "momentum", "weight_decay",
                  "lr_gamma", "lr_power", "val_fraction", "strict_determinism")
_SOURCE_DATA_FIELDS = ("dataset", "data_root", "window_len", "per_class_cap", "stride", "channel",
                       "synth", "synth_domains", "encoder")


def _default_domains():
    return {"S": {"speed_factor": 1.0, "noise_factor": 1.0}, "T": {"speed_factor": 1.35, "noise_factor": 3.0}}


def default_tasks(dataset: str, domains=None) -> list[str]:
    if dataset == "pu":
        ids = list(PU_DOMAINS)
    elif dataset == "jnu":
        ids = list(JNU_DOMAINS)
    else:
        ids = list(domains or _default_domains())
        return [f"{ids[0]}->{t}" for t in ids[1:]]
    return [f"{s}->{t}" for s, t in itertools.permutations(ids, 2)]


@dataclass
class ExperimentSpec:
    dataset: str = "synth"
    data_root: str | None = None
    tasks: list[str] | None = None  # None: every ordered pair (real data) or first domain -> rest (synth)
    window_len: int | None = None  # None: 2048 for real data, the generator's length for synth
    per_class_cap: int | None = 2000
    stride: int | None = None
    channel: str | None = None
    synth: dict = field(default_factory=dict)
    synth_domains: dict = field(default_factory=_default_domains)
    adaptation: dict = field(default_factory=dict)
    encoder: dict = field(default_factory=dict)
    sweep: str | None = None
    sweep_values: list[float] | None = None
    seeds: list[int] = field(default_factory=lambda: [0])
    eval_holdout: float = 0.0  # >0: adapt on the rest of the target, score on this stratified fraction
    output_dir: str = "runs/experiment"
    overwrite: bool = False
    parallel_tasks: int = 1
    plots: bool = False

    # -- construction ---------------------------------------------------------

    @classmethod
    def from_dict(cls, d: dict | None) -> "ExperimentSpec":
        d = dict(d or {})
        d.pop("spec_hash", None)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(**d).validate()

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "ExperimentSpec":
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text()) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path} must hold a mapping at top level")
        return cls.from_dict(apply_overrides(raw, overrides or {}))

    def replace(self, **changes) -> "ExperimentSpec":
        return dataclasses.replace(self, **changes).validate()

    # -- derived configs -------------------------------------------------------

    def adaptation_config(self, **changes) -> AdaptationConfig:
        return AdaptationConfig.from_dict({**self.adaptation, **changes})

    def encoder_config(self) -> EncoderConfig:
        try:
            return EncoderConfig.from_dict(self.encoder)
        except TypeError as exc:
            raise ConfigError(f"bad encoder settings: {exc}") from None

    def synth_config(self) -> SynthConfig:
        d = dict(self.synth)
        if self.window_len is not None:
            d["window_len"] = self.window_len
        try:
            return SynthConfig(**d).validate()
        except TypeError as exc:
            raise ConfigError(f"bad synth settings: {exc}") from None

    def domain_ids(self) -> list[str]:
        return {"pu": list(PU_DOMAINS), "jnu": list(JNU_DOMAINS)}.get(self.dataset) or list(self.synth_domains)

    def task_list(self) -> list[TransferTask]:
        names = self.tasks if self.tasks is not None else default_tasks(self.dataset, self.synth_domains)
        return [TransferTask.parse(t) for t in names]

    def sweep_points(self) -> tuple[float, ...]:
        if self.sweep is None:
            raise ConfigError("no sweep axis set; use sweep: beta or sweep: threshold")
        return tuple(self.sweep_values) if self.sweep_values else SWEEP_AXES[self.sweep]

    # -- checks ----------------------------------------------------------------

    def validate(self) -> "ExperimentSpec":
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        if self.dataset != "synth" and not self.data_root:
            raise ConfigError(f"dataset {self.dataset} needs data_root")
        if self.dataset == "synth":
            if len(self.synth_domains) < 2:
                raise ConfigError("synth_domains needs at least two domains")
            for name, shift in self.synth_domains.items():
                try:
                    DomainShift(**shift).validate()
                except TypeError as exc:
                    raise ConfigError(f"bad shift for synth domain {name}: {exc}") from None
            self.synth_config()
        valid = set(self.domain_ids())
        tasks = self.task_list()
        if not tasks:
            raise ConfigError("task list is empty")
        for t in tasks:
            for d in (t.source_domain, t.target_domain):
                if d not in valid:
                    raise ConfigError(f"task {t} references domain {d}, not one of {sorted(valid)}")
        if self.sweep is not None and self.sweep not in SWEEP_AXES:
            raise ConfigError(f"sweep axis must be one of {sorted(SWEEP_AXES)}, got {self.sweep!r}")
        if self.sweep is not None and self.sweep in self.adaptation:
            raise ConfigError(f"{self.sweep} is both swept and fixed in adaptation")
        if self.sweep_values is not None and self.sweep is None:
            raise ConfigError("sweep_values given without a sweep axis")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if not 0.0 <= self.eval_holdout < 1.0:
            raise ConfigError("eval_holdout must lie in [0, 1)")
        if self.parallel_tasks < 1:
            raise ConfigError("parallel_tasks must be >= 1")
        self.adaptation_config()
        self.encoder_config()
        return self

    def check_data(self):
        """Fail fast on a missing dataset root, before anything trains."""
        if self.dataset != "synth" and not Path(self.data_root).is_dir():
            raise DataError(f"dataset root {self.data_root} does not exist")

    # -- serialization -----------------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def resolved(self) -> dict:
        """Spec with every default spelled out, so a saved run describes itself."""
        d = self.to_dict()
        d["tasks"] = [f"{t.source_domain}->{t.target_domain}" for t in self.task_list()]
        d["adaptation"] = self.adaptation_config().to_dict()
        if self.sweep is not None:
            d["adaptation"].pop(self.sweep)  # set per sweep point
        d["encoder"] = self.encoder_config().to_dict()
        if self.dataset == "synth":
            d["synth"] = dataclasses.asdict(self.synth_config())
        d["spec_hash"] = config_digest(d)
        return d

    def digest(self) -> str:
        return self.resolved()["spec_hash"]


def apply_overrides(raw: dict, overrides: dict) -> dict:
    """Apply dotted ``{"adaptation.beta": 0.3}`` style overrides to a nested dict."""
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in raw.items()}
    for key, value in overrides.items():
        node = out
        *parents, leaf = key.split(".")
        for p in parents:
            child = node.get(p)
            if child is None:
                child = node[p] = {}
            elif not isinstance(child, dict):
                raise ConfigError(f"cannot set {key}: {p} is not a mapping")
            node = child
        node[leaf] = value
    return out


def parse_assignments(items) -> dict:
    """``["a.b=1", "c=x"]`` -> ``{"a.b": 1, "c": "x"}`` with YAML value typing."""
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not key=value")
        try:
            out[key.strip()] = yaml.safe_load(value)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse override {item!r}: {exc}") from None
    return out


# --- data -----------------------------------------------------------------------


def load_domain(spec: ExperimentSpec, domain: str, seed: int = 0) -> DomainDataset:
    """One labeled domain of the experiment's dataset. Synthetic domains are redrawn per seed."""
    if spec.dataset == "synth":
        ids = list(spec.synth_domains)
        if domain not in ids:
            raise ConfigError(f"unknown synth domain {domain}")
        seq = np.random.SeedSequence(seed).spawn(len(ids))[ids.index(domain)]
        return synth_domain(spec.synth_config(), DomainShift(**spec.synth_domains[domain]), seq, domain)
    spec.check_data()
    kw = dict(window_len=spec.window_len or 2048, per_class_cap=spec.per_class_cap, stride=spec.stride)
    if spec.channel:
        kw["channel"] = spec.channel
    loader = load_pu if spec.dataset == "pu" else load_jnu
    return loader(spec.data_root, domain, **kw)


# --- report tables ----------------------------------------------------------------


@dataclass
class ReportTable:
    """Accuracy (%) per variant and task; ``std`` is across seeds."""

    title: str
    rows: list[str]
    columns: list[str]
    cells: np.ndarray  # (rows, tasks)
    std: np.ndarray | None = None
    n_seeds: np.ndarray | None = None

    @property
    def average(self) -> np.ndarray:
        return self.cells.mean(axis=1)

    def cell(self, row: str, column: str) -> float:
        return float(self.cells[self.rows.index(row), self.columns.index(column)])

    def row_average(self, row: str) -> float:
        return float(self.average[self.rows.index(row)])

    def to_csv(self, path):
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", *self.columns, "average"])
            for name, vals, avg in zip(self.rows, self.cells, self.average):
                w.writerow([name, *map(repr, map(float, vals)), repr(float(avg))])
        return path

    @classmethod
    def from_csv(cls, path, title: str = "") -> "ReportTable":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        cells = np.array([[float(v) for v in r[1:-1]] for r in body]).reshape(len(body), len(header) - 2)
        return cls(title, [r[0] for r in body], header[1:-1], cells)

    def _formatted(self) -> list[list[str]]:
        out = []
        for i, name in enumerate(self.rows):
            vals = []
            for j in range(len(self.columns)):
                v = f"{self.cells[i, j]:.2f}"
                if self.std is not None and self.n_seeds is not None and self.n_seeds[i, j] > 1:
                    v += f" ± {self.std[i, j]:.2f}"
                vals.append(v)
            out.append([name, *vals, f"{self.average[i]:.2f}"])
        return out

    def to_markdown(self) -> str:
        header = ["Method", *self.columns, "Average"]
        lines = [f"**{self.title}**", ""] if self.title else []
        lines.append("| " + " | ".join(header) + " |")
        lines.append("|" + "|".join(["---"] + ["---:"] * (len(header) - 1)) + "|")
        lines += ["| " + " | ".join(r) + " |" for r in self._formatted()]
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        table = [["Method", *self.columns, "Average"], *self._formatted()]
        widths = [max(len(r[k]) for r in table) for k in range(len(table[0]))]
        lines = [self.title] if self.title else []
        for n, r in enumerate(table):
            lines.append("  ".join(c.ljust(w) if k == 0 else c.rjust(w) for k, (c, w) in enumerate(zip(r, widths))))
            if n == 0:
                lines.append("  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"

    def write(self, out_dir, stem: str):
        out_dir = Path(out_dir)
        self.to_csv(out_dir / f"{stem}.csv")
        (out_dir / f"{stem}.md").write_text(self.to_markdown())
        (out_dir / f"{stem}.txt").write_text(self.to_text())


def _task_label(task: TransferTask) -> str:
    return f"{task.source_domain}→{task.target_domain}"


def _task_slug(task: TransferTask) -> str:
    return f"{task.source_domain}_to_{task.target_domain}"


# --- running ---------------------------------------------------------------------


@dataclass(frozen=True)
class _Job:
    variant: str
    overrides: tuple  # sorted (key, value) pairs applied on top of the experiment's adaptation settings
    task: str
    seed: int


def _prepare_output(spec: ExperimentSpec, kind: str, variants: list[str], extra: dict | None = None) -> Path:
    out = Path(spec.output_dir)
    if out.exists() and any(out.iterdir()) and not spec.overwrite:
        raise ConfigError(f"output directory {out} already exists; pass --overwrite to reuse it")
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"kind": kind, "variants": variants, **(extra or {}), "spec": spec.resolved()}
    (out / "experiment.yaml").write_text(yaml.safe_dump(manifest, sort_keys=False, allow_unicode=True))
    return out


class _Workspace:
    """Data and source-model caches for one output directory."""

    def __init__(self, spec: ExperimentSpec):
        self.spec = spec
        self.out = Path(spec.output_dir)
        self._data: dict = {}
        self._sources: dict = {}

    def data(self, domain: str, seed: int) -> DomainDataset:
        key = (domain, seed if self.spec.dataset == "synth" else None)
        if key not in self._data:
            self._data[key] = load_domain(self.spec, domain, seed)
        return self._data[key]

    def target_split(self, domain: str, seed: int):
        """(adaptation set, evaluation set); both are the full domain unless eval_holdout is set."""
        data = self.data(domain, seed)
        if self.spec.eval_holdout == 0:
            return data, None
        adapt_idx, eval_idx = stratified_split(data.labels, self.spec.eval_holdout, np.random.default_rng(seed))
        return data.subset(adapt_idx), data.subset(eval_idx)

    def source_dir(self, domain: str, seed: int) -> Path:
        cfg = self.spec.adaptation_config(seed=seed).to_dict()
        resolved = self.spec.resolved()
        key = {k: resolved[k] for k in _SOURCE_DATA_FIELDS}
        key["train"] = {k: cfg[k] for k in _SOURCE_FIELDS}
        return self.out / "sources" / f"{domain}-seed{seed}-{config_digest(key)}"

    def source(self, domain: str, seed: int) -> SDALRNet:
        if (domain, seed) in self._sources:
            return self._sources[(domain, seed)]
        d = self.source_dir(domain, seed)
        ckpt = d / "source.pt"
        encoder = self.spec.encoder_config()
        if ckpt.is_file():
            model = load_checkpoint(ckpt, encoder=encoder)
        else:
            log.info("training source model for %s (seed %d)", domain, seed)
            model = train_source(self.data(domain, seed), self.spec.adaptation_config(seed=seed), encoder=encoder, run_dir=d)
        self._sources[(domain, seed)] = model
        return model

    def run_dir(self, job: _Job) -> Path:
        return self.out / "runs" / job.variant / _task_slug(TransferTask.parse(job.task)) / f"seed{job.seed}"

    def run(self, job: _Job) -> dict:
        task = TransferTask.parse(job.task)
        cfg = self.spec.adaptation_config(**dict(job.overrides), seed=job.seed)
        run_dir = self.run_dir(job)
        run_dir.mkdir(parents=True, exist_ok=True)
        info = {"variant": job.variant, "task": job.task, "seed": job.seed,
                "config_hash": cfg.digest(), "adaptation": cfg.to_dict()}
        (run_dir / "config.yaml").write_text(yaml.safe_dump(info, sort_keys=False))
        source = self.source(task.source_domain, job.seed)
        log.info("adapting %s [%s] seed %d", task, job.variant, job.seed)
        target, held_out = self.target_split(task.target_domain, job.seed)
        _, record = adapt_target(source, target, cfg, run_dir=run_dir, eval_data=held_out)
        write_confusion(run_dir / "confusion.csv", np.asarray(record.final["confusion"]))
        return {"variant": job.variant, "task": job.task, "seed": job.seed,
                "accuracy": record.final_accuracy, "source_only": record.source_accuracy}


def _run_job_in_subprocess(spec_dict: dict, job: _Job) -> dict:
    return _Workspace(ExperimentSpec.from_dict(spec_dict)).run(job)


def _execute(spec: ExperimentSpec, jobs: list[_Job]) -> list[dict]:
    spec.check_data()
    ws = _Workspace(spec)
    # Load every domain and train every source model up front: a bad file fails
    # before adaptation starts, and parallel workers never race on the cache.
    for job in jobs:
        task = TransferTask.parse(job.task)
        ws.data(task.target_domain, job.seed)
        ws.source(task.source_domain, job.seed)
    if spec.parallel_tasks == 1 or len(jobs) == 1:
        return [ws.run(job) for job in jobs]
    spec_dict = spec.to_dict()
    ctx = multiprocessing.get_context("spawn")
    with ProcessPoolExecutor(max_workers=spec.parallel_tasks, mp_context=ctx) as pool:
        return list(pool.map(_run_job_in_subprocess, [spec_dict] * len(jobs), jobs))


def _jobs(spec: ExperimentSpec, variants) -> list[_Job]:
    return [
        _Job(name, tuple(sorted(overrides.items())), f"{t.source_domain}->{t.target_domain}", seed)
        for name, overrides in variants
        for t in spec.task_list()
        for seed in spec.seeds
    ]


def run_matrix(spec: ExperimentSpec) -> ReportTable:
    """Adapt every task with the configured method; rows are the source-only baseline and the method."""
    spec.validate().check_data()
    out = _prepare_output(spec, "matrix", [SOURCE_ONLY, FULL_METHOD])
    _execute(spec, _jobs(spec, [(FULL_METHOD, {})]))
    return report(out)


def run_ablation(spec: ExperimentSpec) -> ReportTable:
    """The four-rung ladder of loss and labeling modules, one row per rung."""
    spec.validate().check_data()
    out = _prepare_output(spec, "ablation", [name for name, _ in ABLATION_LADDER])
    _execute(spec, _jobs(spec, ABLATION_LADDER))
    return report(out)


def _sweep_variant(axis: str, value: float) -> str:
    return f"{axis}={value:g}"


def run_sweep(spec: ExperimentSpec) -> ReportTable:
    """Vary one hyperparameter; writes ``sweep.csv`` (points x tasks rows) and the usual table."""
    spec.validate().check_data()
    points = spec.sweep_points()
    variants = [(_sweep_variant(spec.sweep, v), {spec.sweep: float(v)}) for v in points]
    out = _prepare_output(spec, "sweep", [name for name, _ in variants],
                          {"sweep_axis": spec.sweep, "sweep_points": [float(v) for v in points]})
    _execute(spec, _jobs(spec, variants))
    return report(out)


# --- reports ---------------------------------------------------------------------


def write_confusion(path, confusion: np.ndarray):
    np.savetxt(path, confusion, fmt="%d", delimiter=",")


def _collect(out: Path, variants: list[str], tasks: list[TransferTask]):
    """variant -> task label -> list of RunRecords (one per seed found on disk)."""
    found = {v: {_task_label(t): [] for t in tasks} for v in variants}
    for path in sorted((out / "runs").glob("*/*/seed*/run_record.json")):
        info = yaml.safe_load((path.parent / "config.yaml").read_text())
        rec = RunRecord.load(path)
        if rec.final is None:
            continue  # interrupted run
        variant, task = info["variant"], _task_label(TransferTask.parse(info["task"]))
        if variant in found and task in found[variant]:
            found[variant][task].append(rec)
    return found


def _table(title: str, rows: list[str], tasks: list[TransferTask], values) -> ReportTable:
    cols = [_task_label(t) for t in tasks]
    mean = np.full((len(rows), len(cols)), np.nan)
    std = np.full_like(mean, np.nan)
    n = np.zeros(mean.shape, dtype=int)
    for i, r in enumerate(rows):
        for j, c in enumerate(cols):
            v = np.asarray(values(r, c), dtype=float) * 100.0
            if len(v):
                mean[i, j], std[i, j], n[i, j] = v.mean(), v.std(), len(v)
    return ReportTable(title, rows, cols, mean, std, n)


def report(output_dir) -> ReportTable:
    """Rebuild the table (and sweep CSV) of a run directory from its persisted run records."""
    out = Path(output_dir)
    manifest_path = out / "experiment.yaml"
    if not manifest_path.is_file():
        raise DataError(f"{out} has no experiment.yaml; not an experiment directory")
    manifest = yaml.safe_load(manifest_path.read_text())
    spec = ExperimentSpec.from_dict(manifest["spec"])
    tasks = spec.task_list()
    kind = manifest["kind"]
    method_rows = [v for v in manifest["variants"] if v != SOURCE_ONLY]
    found = _collect(out, method_rows, tasks)

    def values(row, col):
        if row == SOURCE_ONLY:
            # every variant shares the same source model; take the first one's baseline per seed
            return [r.source_accuracy for r in found[method_rows[0]][col]]
        return [r.final_accuracy for r in found[row][col]]

    title = {"matrix": "Accuracy (%) per task", "ablation": "Ablation (%)", "sweep": f"Sweep over {spec.sweep} (%)"}[kind]
    table = _table(title, manifest["variants"], tasks, values)
    table.write(out, kind)
    if kind == "sweep":
        _write_sweep_csv(out / "sweep.csv", manifest, table, spec.plots)
    return table


def _write_sweep_csv(path: Path, manifest: dict, table: ReportTable, plot: bool):
    axis, points = manifest["sweep_axis"], manifest["sweep_points"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["axis", "value", "task", "accuracy", "std", "n_seeds"])
        for i, v in enumerate(points):
            for j, task in enumerate(table.columns):
                w.writerow([axis, v, task, repr(float(table.cells[i, j])), repr(float(table.std[i, j])), int(table.n_seeds[i, j])])
    if plot:
        plot_sweep(path.with_suffix(".png"), axis, points, table)


def plot_sweep(path, axis: str, points, table: ReportTable):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for j, task in enumerate(table.columns):
        ax.plot(points, table.cells[:, j], marker="o", label=task)
    ax.plot(points, table.average, "k--", label="average")
    ax.set_xlabel(axis)
    ax.set_ylabel("accuracy (%)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _pyplot():
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise ConfigError("plotting needs matplotlib; install the 'plot' extra") from None
    return plt


# --- per-model exports ---------------------------------------------------------------


def _open_for_write(path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.touch()
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc.strerror}") from None
    return path


def export_embeddings(model: SDALRNet, dataset: DomainDataset, out, *, pseudo_labels=None, plot=None) -> Path:
    """CSV of sample id, true label, pseudo label and the encoder features, one row per sample.

    Missing labels are written as empty fields. ``plot`` names an optional PNG
    with a 2-D principal-component scatter of the features.
    """
    path = _open_for_write(out)
    feats, _ = predict(model, dataset.waveforms)
    n, dim = feats.shape
    truth = dataset.labels
    pseudo = None if pseudo_labels is None else np.asarray(pseudo_labels)
    if pseudo is not None and len(pseudo) != n:
        raise ConfigError(f"{len(pseudo)} pseudo labels for {n} samples")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "true_label", "pseudo_label", *(f"f{k}" for k in range(dim))])
        for i in range(n):
            w.writerow([i, "" if truth is None else int(truth[i]), "" if pseudo is None else int(pseudo[i]),
                        *map(repr, feats[i].astype(float))])
    if plot:
        _plot_embeddings(plot, feats, truth if truth is not None else pseudo)
    return path


def _plot_embeddings(path, feats: np.ndarray, colors):
    plt = _pyplot()
    centered = feats - feats.mean(0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    xy = centered @ vt[:2].T
    fig, ax = plt.subplots(figsize=(5, 5))
    if colors is None:
        ax.scatter(xy[:, 0], xy[:, 1], s=6)
    else:
        ax.scatter(xy[:, 0], xy[:, 1], c=colors, s=6, cmap="tab10")
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(_open_for_write(path), dpi=120)
    plt.close(fig)


def inspect_pseudo_labels(model: SDALRNet, dataset: DomainDataset, config: AdaptationConfig, out) -> Path:
    """One refresh of the labeler written as CSV: ballots, top similarity and the voted label."""
    path = _open_for_write(out)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
    a = assign_labels(model, dataset.without_labels(), config.threshold, rng,
                      use_voting=config.use_voting, params=config.augment_params())
    names = ["original", "flip", "random_zero", "cyclic_shift"][: a.ballots.shape[1]]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "true_label", "label", "similarity", "argmax", *(f"ballot_{b}" for b in names)])
        for i in range(len(dataset)):
            truth = "" if dataset.labels is None else int(dataset.labels[i])
            w.writerow([i, truth, int(a.labels[i]), repr(float(a.similarity[i])), int(a.probs[i].argmax()),
                        *map(int, a.ballots[i])])
    return path
