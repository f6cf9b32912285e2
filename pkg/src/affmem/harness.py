"""Experiment harness: configuration, PK training runs, the discriminator
ablation matrix, personalization runs, gradient checks and evaluation.

Every command writes its outputs under ``out_dir``. Tables carry the resolved
configuration and a build identifier in ``#`` comment lines, JSON reports carry
them as keys. Nothing time- or host-dependent is written, so reruns with the
same configuration are byte-identical.
"""
from __future__ import annotations

import copy
import csv
import dataclasses
import hashlib
import json
import logging
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from . import pk as pkm
from .gwr import GwrParams
from .metrics import REPORT_COLUMNS, ccc_av, write_report_csv
from .numerics import ContractError, NonFiniteError
from .pipeline import PipelineConfig, run_stream
from .synthdata import SynthWorld, read_stream_csv, sample_arrays, sample_person_stream

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


class ConfigError(ValueError):
    """Invalid configuration or missing input; maps to exit code 1."""


class GradcheckFailure(RuntimeError):
    """Some gradient component exceeded the tolerance; maps to exit code 2."""


# -- configuration -----------------------------------------------------------------------


@dataclass
class WorldSettings:
    input_dim: int = 24
    style_dim: int = 4
    noise_scale: float = 0.05
    walk_step: float = 0.02
    style_scale: float = 1.0
    seed: int = 0

    def build(self) -> SynthWorld:
        return SynthWorld(**asdict(self))


@dataclass
class TrainSettings:
    steps: int = 20000
    n_train: int = 4000
    n_heldout: int = 1000
    # training pictures come from many different people, one style each
    many_people: bool = True
    log_every: int = 100
    # read-out training for variants without D_em
    probe_steps: int = 4000
    probe_alpha: float = 1e-3
    probe_beta1: float = 0.9


@dataclass
class AblateSettings:
    # None: the run seed only
    seeds: list[int] | None = None


@dataclass
class PersonalizeSettings:
    n_streams: int = 10
    stream_length: int = 500
    # None: <out_dir>/pk_checkpoint.json
    checkpoint: str | None = None


@dataclass
class GradcheckSettings:
    n_seeds: int = 10
    batch: int = 6
    per_block: int = 6
    tolerance: float = 1e-4
    eps: float = 1e-5
    bias_jitter: float = 0.1


@dataclass
class EvalSettings:
    checkpoint: str | None = None
    # optional stream CSV; default is the synthetic held-out split
    input_csv: str | None = None


@dataclass
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "runs"
    workers: int = 1
    variant: str = "PK_all"
    pk: pkm.PkConfig = field(default_factory=pkm.PkConfig)
    world: WorldSettings = field(default_factory=WorldSettings)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    train: TrainSettings = field(default_factory=TrainSettings)
    ablate: AblateSettings = field(default_factory=AblateSettings)
    personalize: PersonalizeSettings = field(default_factory=PersonalizeSettings)
    gradcheck: GradcheckSettings = field(default_factory=GradcheckSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _build(cls, data: Any, path: str):
    """Instantiate dataclass ``cls`` from a (possibly partial) dict, recursively."""
    if dataclasses.is_dataclass(data):
        data = asdict(data)
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(data).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown config field {'.'.join(filter(None, [path, unknown[0]]))!r}")
    kwargs = {}
    for name, value in data.items():
        sub = _NESTED.get((cls, name))
        where = ".".join(filter(None, [path, name]))
        kwargs[name] = _build(sub, value, where) if sub else value
    try:
        return cls(**kwargs)
    except (ContractError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


_NESTED = {
    (ExperimentConfig, "pk"): pkm.PkConfig,
    (ExperimentConfig, "world"): WorldSettings,
    (ExperimentConfig, "pipeline"): PipelineConfig,
    (ExperimentConfig, "train"): TrainSettings,
    (ExperimentConfig, "ablate"): AblateSettings,
    (ExperimentConfig, "personalize"): PersonalizeSettings,
    (ExperimentConfig, "gradcheck"): GradcheckSettings,
    (ExperimentConfig, "eval"): EvalSettings,
    (PipelineConfig, "gwr"): GwrParams,
}


def _set_path(d: dict, dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    for k in keys[:-1]:
        nxt = d.setdefault(k, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"cannot set {dotted!r}: {k!r} is not an object")
        d = nxt
    d[keys[-1]] = value


def parse_assignment(text: str) -> tuple[str, Any]:
    """``"train.steps=100"`` -> ``("train.steps", 100)``; the value is parsed
    as JSON and kept as a string if that fails."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def load_config(path: str | None = None, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """Defaults, then the JSON file at ``path``, then dotted ``overrides``."""
    data: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path!r}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path!r} is not valid JSON: {exc}") from None
    data = copy.deepcopy(data)
    for key, value in (overrides or {}).items():
        _set_path(data, key, value)
    cfg = _build(ExperimentConfig, data, "")
    try:
        validate(cfg)
    except TypeError as exc:
        raise ConfigError(f"config field has the wrong type: {exc}") from None
    cfg._provenance = {"file": path, "overrides": overrides or {}}  # type: ignore[attr-defined]
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    """Cross-field checks, run before any work starts."""
    if cfg.variant not in pkm.VARIANTS:
        raise ConfigError(f"variant: unknown {cfg.variant!r}; choose from {sorted(pkm.VARIANTS)}")
    if cfg.world.input_dim != cfg.pk.input_dim:
        raise ConfigError("world.input_dim must equal pk.input_dim")
    if cfg.workers < 1:
        raise ConfigError("workers must be at least 1")
    t = cfg.train
    if t.steps < 0 or t.probe_steps < 0 or t.n_train < 1 or t.n_heldout < 2:
        raise ConfigError("train: steps >= 0, probe_steps >= 0, n_train >= 1, n_heldout >= 2")
    if cfg.personalize.n_streams < 0 or cfg.personalize.stream_length < 1:
        raise ConfigError("personalize: n_streams >= 0 and stream_length >= 1")
    g = cfg.gradcheck
    if g.n_seeds < 1 or g.batch < 1 or g.per_block < 1 or g.tolerance <= 0:
        raise ConfigError("gradcheck: n_seeds, batch, per_block and tolerance must be positive")


# -- provenance ---------------------------------------------------------------------------


def build_id() -> str:
    """Package version plus a digest of the package sources."""
    h = hashlib.sha256()
    root = Path(__file__).parent
    for p in sorted(root.glob("*.py")) + sorted(root.glob("*.pyx")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return f"affmem-{__version__}+g{h.hexdigest()[:12]}"


def _provenance(cfg: ExperimentConfig) -> dict:
    prov = getattr(cfg, "_provenance", {"file": None, "overrides": {}})
    return {"build": build_id(), "config": cfg.to_dict(), "config_file": prov["file"], "overrides": prov["overrides"]}


def _header(cfg: ExperimentConfig) -> str:
    prov = _provenance(cfg)
    return "\n".join(
        [
            f"build: {prov['build']}",
            f"config: {json.dumps(prov['config'], sort_keys=True)}",
            f"config_file: {json.dumps(prov['config_file'])}",
            f"overrides: {json.dumps(prov['overrides'], sort_keys=True)}",
        ]
    )


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- shared pieces ------------------------------------------------------------------------


def data_splits(cfg: ExperimentConfig, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """``(X_train, Y_train, X_heldout, Y_heldout)`` for one run seed."""
    world = cfg.world.build()
    t = cfg.train
    X, Y = sample_arrays(world, t.n_train, 2 * seed, t.many_people)
    Xh, Yh = sample_arrays(world, t.n_heldout, 2 * seed + 1, t.many_people)
    return X, Y, Xh, Yh


def train_variant(cfg: ExperimentConfig, variant: str, seed: int):
    """Train one ablation variant; returns ``(model, history)``."""
    flags = pkm.VARIANTS[variant]
    model = pkm.init_model(pkm.ablation_config(cfg.pk, *flags), seed=seed)
    X, Y, _, _ = data_splits(cfg, seed)
    history = pkm.fit(model, X, Y, cfg.train.steps, seed=seed, log_every=cfg.train.log_every)
    return model, history


def _probe(cfg: ExperimentConfig, model: pkm.PkModel, X, Y, seed: int):
    t = cfg.train
    return pkm.train_probe(model, X, Y, t.probe_steps, seed=seed, alpha=t.probe_alpha, beta1=t.probe_beta1)


def heldout_ccc(cfg: ExperimentConfig, model: pkm.PkModel, seed: int) -> tuple[tuple[float, float], str]:
    """Held-out CCC through D_em, or through a post-trained read-out when the
    model has no D_em. Returns ``(ccc, evaluator)``."""
    X, Y, Xh, Yh = data_splits(cfg, seed)
    if model.config.use_em:
        return ccc_av(pkm.affect_readout(model, Xh), Yh), "D_em"
    probe = _probe(cfg, model, X, Y, seed)
    return ccc_av(pkm.affect_readout(model, Xh, probe), Yh), "probe"


def _map(cfg: ExperimentConfig, fn: Callable, tasks: list) -> list:
    """Ordered map over ``tasks``, in a process pool when ``workers > 1``.
    Results never depend on the worker count."""
    if cfg.workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(cfg.workers, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


# -- train-pk ---------------------------------------------------------------------------


def cmd_train_pk(cfg: ExperimentConfig) -> Path:
    """Train ``cfg.variant``; writes ``pk_checkpoint.json`` and ``train_log.csv``."""
    out = _out_dir(cfg)
    t0 = time.perf_counter()
    model, history = train_variant(cfg, cfg.variant, cfg.seed)
    log.info("trained %s for %d steps in %.1fs", cfg.variant, cfg.train.steps, time.perf_counter() - t0)
    ckpt = out / "pk_checkpoint.json"
    pkm.save_model(model, ckpt)
    with open(out / "train_log.csv", "w", newline="") as fh:
        for line in _header(cfg).splitlines():
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(("step",) + pkm.LOSS_COLUMNS)
        for step, lb in history:
            w.writerow([step] + [repr(float(getattr(lb, c))) for c in pkm.LOSS_COLUMNS])
    return ckpt


# -- ablate -----------------------------------------------------------------------------


def _ablation_task(args) -> dict:
    cfg, variant, seed = args
    model, history = train_variant(cfg, variant, seed)
    (a, v), evaluator = heldout_ccc(cfg, model, seed)
    return {
        "variant": variant,
        "seed": seed,
        "evaluator": evaluator,
        "ccc_arousal": a,
        "ccc_valence": v,
        "final_l_rec": history[-1][1].l_rec if history else None,
        "saturation_events": model.saturation_events,
    }


def ablation_seeds(cfg: ExperimentConfig) -> list[int]:
    return list(cfg.ablate.seeds) if cfg.ablate.seeds else [cfg.seed]


def cmd_ablate(cfg: ExperimentConfig) -> Path:
    """All eight discriminator variants on shared seeds; median held-out CCC
    per variant in ``ablation.csv``, per-seed results in ``ablation.json``."""
    out = _out_dir(cfg)
    seeds = ablation_seeds(cfg)
    tasks = [(cfg, name, s) for name in pkm.VARIANTS for s in seeds]
    t0 = time.perf_counter()
    results = _map(cfg, _ablation_task, tasks)
    log.info("ablation: %d runs in %.1fs", len(tasks), time.perf_counter() - t0)
    rows = []
    for name in pkm.VARIANTS:
        mine = [r for r in results if r["variant"] == name]
        rows.append(
            (
                name,
                float(np.median([r["ccc_arousal"] for r in mine])),
                float(np.median([r["ccc_valence"] for r in mine])),
                cfg.train.n_heldout,
            )
        )
    path = out / "ablation.csv"
    write_report_csv(path, rows, _header(cfg) + f"\nseeds: {json.dumps(seeds)}\nstatistic: median over seeds")
    _write_json(out / "ablation.json", {**_provenance(cfg), "seeds": seeds, "runs": results})
    return path


# -- personalize -------------------------------------------------------------------------


def _checkpoint_path(cfg: ExperimentConfig, explicit: str | None) -> Path:
    path = Path(explicit) if explicit else Path(cfg.out_dir) / "pk_checkpoint.json"
    if not path.is_file():
        raise ConfigError(f"missing PK checkpoint {str(path)!r}; run train-pk first")
    return path


def _load_checkpoint(path: Path) -> pkm.PkModel:
    try:
        return pkm.load_model(path)
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"unreadable PK checkpoint {str(path)!r}: {exc}") from None


def _stream_task(args) -> dict:
    cfg, model, person_seed = args
    frames = sample_person_stream(cfg.world.build(), person_seed, cfg.personalize.stream_length)
    return run_stream(model, frames, config=cfg.pipeline).to_dict()


def cmd_personalize(cfg: ExperimentConfig) -> Path:
    """Run every synthetic person stream through its own affective memory.

    Writes ``personalization.csv`` (median and pooled rows for the PK alone and
    with the memory, then one pair of rows per stream) and one JSON report per
    stream under ``streams/``.
    """
    ckpt = _checkpoint_path(cfg, cfg.personalize.checkpoint)
    model = _load_checkpoint(ckpt)
    if model.config.input_dim != cfg.world.input_dim:
        raise ConfigError("checkpoint input_dim does not match world.input_dim")
    out = _out_dir(cfg)
    pk_name = pkm.variant_name(model.config.use_prior, model.config.use_real, model.config.use_em)
    m = cfg.personalize.n_streams
    path = out / "personalization.csv"
    if m == 0:
        warnings.warn("personalize: no person streams configured; writing an empty table", stacklevel=2)
        write_report_csv(path, [], _header(cfg))
        return path

    t0 = time.perf_counter()
    reports = _map(cfg, _stream_task, [(cfg, model, p) for p in range(m)])
    log.info("personalization: %d streams in %.1fs", m, time.perf_counter() - t0)

    sdir = out / "streams"
    sdir.mkdir(exist_ok=True)
    per_stream = []
    for rep in reports:
        _write_json(sdir / f"{rep['person_id']}.json", {"build": build_id(), **rep})
        s = rep["summary"]
        per_stream.append(
            (
                rep["person_id"],
                rep["n_frames"],
                (s["pk_only"]["ccc_arousal"], s["pk_only"]["ccc_valence"]),
                (s["p_affmem"]["ccc_arousal"], s["p_affmem"]["ccc_valence"]),
            )
        )

    def pooled(key_a, key_v):
        pred = np.concatenate([np.column_stack((r[key_a], r[key_v])) for r in reports])
        truth = np.concatenate([np.column_stack((r["truth_a"], r["truth_v"])) for r in reports])
        return ccc_av(pred, truth)

    n_total = sum(r["n_frames"] for r in reports)
    med = lambda k, i: float(np.median([row[k][i] for row in per_stream]))  # noqa: E731
    rows = [
        (pk_name, med(2, 0), med(2, 1), n_total),
        ("P-AffMem", med(3, 0), med(3, 1), n_total),
        (f"pooled:{pk_name}", *pooled("baseline_a", "baseline_v"), n_total),
        ("pooled:P-AffMem", *pooled("prediction_a", "prediction_v"), n_total),
    ]
    for pid, n, base, mem in per_stream:
        rows.append((f"{pid}:{pk_name}", *base, n))
        rows.append((f"{pid}:P-AffMem", *mem, n))
    write_report_csv(path, rows, _header(cfg) + f"\ncheckpoint: {ckpt.name}\nstatistic: median over streams")
    return path


# -- gradcheck --------------------------------------------------------------------------


GRADCHECK_COMPONENTS = (
    ("l_rec", "reconstruction"),
    ("l_iden", "identity"),
    ("l_em", "affect (encoder)"),
    ("l_em_d", "affect (D_em)"),
    ("l_prior_g", "prior (encoder)"),
    ("l_prior_d", "prior (D_prior)"),
    ("l_img_g", "realism (generator)"),
    ("l_img_d", "realism (D_real)"),
    ("total", "weighted total"),
)


def _jittered_model(cfg: ExperimentConfig, seed: int) -> pkm.PkModel:
    """Fresh model with biases moved off zero so no relu sits on its kink."""
    model = pkm.init_model(pkm.ablation_config(cfg.pk, *pkm.VARIANTS[cfg.variant]), seed=seed)
    rng = np.random.default_rng([seed, 23])
    jitter = cfg.gradcheck.bias_jitter
    for net in model.networks().values():
        net.set_params([p if i % 2 == 0 else p + rng.normal(0.0, jitter, p.shape) for i, p in enumerate(net.params())])
    return model


def run_gradcheck(cfg: ExperimentConfig) -> dict[str, float]:
    """Worst relative error per component over ``gradcheck.n_seeds`` seeds."""
    g = cfg.gradcheck
    world = cfg.world.build()
    worst: dict[str, float] = {}
    for seed in range(cfg.seed, cfg.seed + g.n_seeds):
        model = _jittered_model(cfg, seed)
        X, Y = sample_arrays(world, g.batch, 10_000 + seed, cfg.train.many_people)
        rng = np.random.default_rng([seed, 29])
        res = pkm.gradcheck_components(model, X, Y, rng, eps=g.eps, per_block=g.per_block)
        for k, v in res.items():
            worst[k] = max(worst.get(k, 0.0), v)
    return worst


def cmd_gradcheck(cfg: ExperimentConfig) -> Path:
    """Writes ``gradcheck.txt`` (one line per loss component) and raises
    :class:`GradcheckFailure` if any component exceeds the tolerance."""
    out = _out_dir(cfg)
    t0 = time.perf_counter()
    worst = run_gradcheck(cfg)
    log.info("gradcheck: %d seeds in %.1fs", cfg.gradcheck.n_seeds, time.perf_counter() - t0)
    tol = cfg.gradcheck.tolerance
    lines, failed = [], []
    for key, label in GRADCHECK_COMPONENTS:
        if key not in worst:
            lines.append(f"SKIP {key:<10} {label} (disabled in {cfg.variant})")
            continue
        ok = worst[key] < tol
        if not ok:
            failed.append(key)
        lines.append(f"{'PASS' if ok else 'FAIL'} {key:<10} max_rel_err={worst[key]:.3e} tol={tol:g} {label}")
    path = out / "gradcheck.txt"
    path.write_text(f"# build: {build_id()}\n" + "\n".join(lines) + "\n")
    for line in lines:
        print(line)
    if failed:
        raise GradcheckFailure(f"gradient check failed for {', '.join(failed)}")
    return path


# -- eval -------------------------------------------------------------------------------


def cmd_eval(cfg: ExperimentConfig) -> Path:
    """Score a checkpoint. Uses D_em when present, otherwise a read-out
    post-trained on the synthetic training split. Writes ``eval.csv``."""
    ckpt = _checkpoint_path(cfg, cfg.eval.checkpoint)
    model = _load_checkpoint(ckpt)
    out = _out_dir(cfg)
    name = pkm.variant_name(model.config.use_prior, model.config.use_real, model.config.use_em)
    probe = None
    if not model.config.use_em:
        X, Y, _, _ = data_splits(cfg, cfg.seed)
        probe = _probe(cfg, model, X, Y, cfg.seed)
    if cfg.eval.input_csv:
        try:
            samples = read_stream_csv(cfg.eval.input_csv)
        except OSError as exc:
            raise ConfigError(f"cannot read {cfg.eval.input_csv!r}: {exc.strerror}") from None
        if not samples or any(s.y is None for s in samples):
            raise ConfigError("eval input needs labelled rows")
        Xe = np.array([s.x for s in samples])
        Ye = np.array([s.y.as_array() for s in samples])
        source = Path(cfg.eval.input_csv).name
    else:
        _, _, Xe, Ye = data_splits(cfg, cfg.seed)
        source = "heldout"
    if Xe.shape[1] != model.config.input_dim:
        raise ConfigError("input feature count does not match the checkpoint")
    a, v = ccc_av(pkm.affect_readout(model, Xe, probe), Ye)
    path = out / "eval.csv"
    evaluator = "D_em" if probe is None else "probe"
    write_report_csv(
        path, [(name, a, v, len(Xe))], _header(cfg) + f"\ncheckpoint: {ckpt.name}\ndata: {source}\nevaluator: {evaluator}"
    )
    return path


COMMANDS: dict[str, Callable[[ExperimentConfig], Path]] = {
    "train-pk": cmd_train_pk,
    "ablate": cmd_ablate,
    "personalize": cmd_personalize,
    "gradcheck": cmd_gradcheck,
    "eval": cmd_eval,
}


def run(command: str, cfg: ExperimentConfig) -> int:
    """Run one command and map failures to exit codes."""
    try:
        COMMANDS[command](cfg)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except (GradcheckFailure, NonFiniteError) as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC
    return EXIT_OK


__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "GradcheckFailure",
    "REPORT_COLUMNS",
    "cmd_ablate",
    "cmd_eval",
    "cmd_gradcheck",
    "cmd_personalize",
    "cmd_train_pk",
    "load_config",
    "run",
]
