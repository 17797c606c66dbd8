"""Training orchestration: source pretraining, the adaptation strategies
(baseline full fine-tune, one-stage joint, two-stage prompt-then-encoder),
prompt-length sweeps, evaluation and report emission."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import statistics
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .encoder import EncoderConfig, Vocabulary, encode_image, encode_text, init_encoder_params, pad_batch, patchify, tokenize
from .losses import LossConfig, id_loss, infonce, l_itc, logit_scale
from .metrics import MetricsReport, compute_report, dump_rankings, rank_gallery
from .optim import AdamState, LrSchedule, ParamStore, adam_step, group_lr, lr_at
from .prompts import (CLASSIFIER_PREFIX, PROMPT_PREFIX, TEXT_KEY, PromptSet, add_prompts_to_params, apply_prompt_dropout,
                      init_prompts, set_stage_trainability)
from .synthetic import (DataConfig, DatasetSplit, Partition, corpus_words, make_domain_pair, save_corpus, source_style,
                        target_style)

log = logging.getLogger(__name__)

STRATEGIES = ("baseline", "one_stage", "two_stage")
CLASSIFIER_KEY = CLASSIFIER_PREFIX + "weight"
_STAGE_SALT = {"baseline": 11, "one_stage": 23, "stage1": 37, "stage2": 41}


class FreezeViolation(RuntimeError):
    """A parameter that must stay frozen changed during a stage."""


@dataclass
class ExperimentConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    data: DataConfig = field(default_factory=DataConfig)
    prompt_len_text: int = 2
    prompt_len_image: int = 2
    prompt_dropout: float = 0.3
    lam: float = 0.1
    # adaptation schedule, applied identically to every stage
    epochs: int = 15
    base_lr: float = 7e-4
    warmup_epochs: int = 5
    warmup_start_lr: float = 7e-5
    min_lr: float = 0.0
    classifier_multiplier: float = 5.0
    # prompt vectors are a tiny parameter group and need a far larger step than the encoders
    prompt_multiplier: float = 70.0
    per_step_lr: bool = False
    # source pretraining
    pretrain_epochs: int = 20
    pretrain_lr: float = 1e-3
    pretrain_warmup_epochs: int = 2
    pretrain_warmup_start_lr: float = 1e-4
    batch_size: int = 32
    ids_per_batch: int = 8
    seeds: tuple = (0, 1, 2)
    data_seed: int = 0
    strategy: str = "two_stage"
    out_dir: str = "runs"

    def adapt_schedule(self) -> LrSchedule:
        return LrSchedule(self.base_lr, self.warmup_epochs, self.warmup_start_lr, self.epochs,
                          self.min_lr, self.classifier_multiplier)

    def pretrain_schedule(self) -> LrSchedule:
        return LrSchedule(self.pretrain_lr, self.pretrain_warmup_epochs, self.pretrain_warmup_start_lr,
                          self.pretrain_epochs, 0.0, 1.0)

    def loss_config(self) -> LossConfig:
        return LossConfig(lam=self.lam)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        enc = EncoderConfig(**d.pop("encoder", {}))
        data = DataConfig(**d.pop("data", {}))
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "seeds" in d:
            d["seeds"] = tuple(d["seeds"])
        return cls(encoder=enc, data=data, **d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    def config_hash(self) -> str:
        d = self.to_dict()
        for k in ("out_dir", "seeds", "strategy"):
            d.pop(k, None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# data plumbing
# ---------------------------------------------------------------------------

def build_vocab() -> Vocabulary:
    return Vocabulary(corpus_words(source_style(), target_style()))


@dataclass
class Encoded:
    """A partition pre-tokenized and pre-patchified for fast batching."""

    part: Partition
    tokens: list
    patches: np.ndarray

    @classmethod
    def of(cls, part: Partition, vocab: Vocabulary, cfg: EncoderConfig) -> "Encoded":
        toks = [tokenize(c, vocab, cfg.max_len) for c in part.captions]
        patches = patchify(part.images, cfg.patch) if len(part.images) else np.zeros((0, cfg.num_patches, cfg.patch_dim))
        return cls(part, toks, patches)

    def text_batch(self, idx) -> tuple[np.ndarray, np.ndarray]:
        return pad_batch([self.tokens[i] for i in idx], 0)


def random_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    nb = max(1, n // batch_size)
    return [perm[i * batch_size:(i + 1) * batch_size] for i in range(nb)]


def pk_batches(ids: np.ndarray, p: int, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Batches of ``p`` chunks, each chunk ``k`` samples of one identity, so every anchor has a positive."""
    chunks = []
    for pid in np.unique(ids):
        members = rng.permutation(np.flatnonzero(ids == pid))
        for i in range(0, len(members) - k + 1, k):
            chunks.append(members[i:i + k])
        rest = len(members) % k
        if rest >= 2:
            chunks.append(members[-rest:])
    order = rng.permutation(len(chunks))
    batches = []
    for i in range(0, len(order) - p + 1, p):
        batches.append(np.concatenate([chunks[j] for j in order[i:i + p]]))
    return batches


# ---------------------------------------------------------------------------
# model state
# ---------------------------------------------------------------------------

@dataclass
class TrainLog:
    rows: list = field(default_factory=list)

    def add(self, **row) -> None:
        self.rows.append(row)

    def write_csv(self, path) -> None:
        if not self.rows:
            return
        keys: list[str] = []
        for r in self.rows:
            keys.extend(k for k in r if k not in keys)
        with Path(path).open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            w.writerows(self.rows)


def encode_partition(params: ParamStore, cfg: EncoderConfig, enc: Encoded,
                     prompts: Optional[PromptSet] = None, chunk: int = 128) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode features for every caption and every image of a partition."""
    tf, vf = [], []
    with T.no_grad():
        for s in range(0, len(enc.tokens), chunk):
            ids, lengths = enc.text_batch(range(s, min(s + chunk, len(enc.tokens))))
            tf.append(encode_text(ids, params, cfg, prompts, lengths)[1].data)
        for s in range(0, len(enc.patches), chunk):
            vf.append(encode_image(enc.patches[s:s + chunk], params, cfg, prompts)[1].data)
    return np.concatenate(tf), np.concatenate(vf)


def evaluate(params: ParamStore, cfg: EncoderConfig, enc: Encoded, prompts: Optional[PromptSet] = None,
             meta: Optional[dict] = None, rankings_path=None) -> MetricsReport:
    """Captions query the partition's image gallery; returns Rank-1/5/10, mAP and mINP."""
    if len(enc.tokens) == 0 or len(enc.patches) == 0:
        raise ValueError(f"cannot evaluate empty split {enc.part.domain}/{enc.part.name}")
    tf, vf = encode_partition(params, cfg, enc, prompts)
    sim = tf @ vf.T
    meta = dict(meta or {})
    meta.setdefault("split", f"{enc.part.domain}-{enc.part.name}")
    report = compute_report(sim, enc.part.caption_ids, enc.part.image_ids, meta)
    if rankings_path is not None:
        dump_rankings(rank_gallery(sim, enc.part.caption_ids, enc.part.image_ids), rankings_path)
    return report


def _step_lr(schedule: LrSchedule, epoch: int, step: int, steps: int, per_step: bool) -> float:
    return lr_at(schedule, epoch + step / steps if per_step else epoch)


def train_loop(params: ParamStore, loss_fn: Callable, batch_fn: Callable, schedule: LrSchedule, stage: str,
               train_log: TrainLog, seed: int, per_step: bool = False,
               multipliers: Optional[dict] = None) -> AdamState:
    """Run ``schedule.total_epochs`` epochs of Adam; ``loss_fn(idx, rng)`` returns (loss, components)."""
    rng = np.random.default_rng(seed)
    state = AdamState()
    step_no = 0
    for epoch in range(schedule.total_epochs):
        batches = batch_fn(rng)
        for bi, idx in enumerate(batches):
            lr = _step_lr(schedule, epoch, bi, len(batches), per_step)
            params.zero_grad()
            loss, parts = loss_fn(idx, rng)
            loss.backward()
            adam_step(params, state, lr, multipliers)
            row = {"step": step_no, "stage": stage, "epoch": epoch, "lr": lr, "loss": loss.item()}
            if multipliers and CLASSIFIER_KEY in params:
                row["classifier_lr"] = group_lr(CLASSIFIER_KEY, lr, multipliers)
            if multipliers and TEXT_KEY in params and params.is_trainable(TEXT_KEY):
                row["prompt_lr"] = group_lr(TEXT_KEY, lr, multipliers)
            row.update(parts)
            train_log.add(**row)
            step_no += 1
        if batches:
            log.info("%s epoch %d/%d lr %.3g loss %.4f", stage, epoch + 1, schedule.total_epochs, lr,
                     train_log.rows[-1]["loss"])
    params.zero_grad()
    return state


# ---------------------------------------------------------------------------
# pretraining and adaptation
# ---------------------------------------------------------------------------

@dataclass
class Workspace:
    """Everything a run needs in memory: config, vocabulary and encoded corpora."""

    config: ExperimentConfig
    vocab: Vocabulary
    source: DatasetSplit
    target: DatasetSplit
    enc: dict = field(default_factory=dict)

    def encoded(self, domain: str, split: str) -> Encoded:
        key = (domain, split)
        if key not in self.enc:
            ds = self.source if domain == "source" else self.target
            self.enc[key] = Encoded.of(ds.partition(split), self.vocab, self.config.encoder)
        return self.enc[key]


def make_workspace(config: ExperimentConfig, source: DatasetSplit, target: DatasetSplit) -> Workspace:
    return Workspace(config, build_vocab(), source, target)


def _contrastive_features(params, cfg, enc: Encoded, idx, prompts):
    ids, lengths = enc.text_batch(idx)
    img_idx = enc.part.caption_image[idx]
    _, tf = encode_text(ids, params, cfg, prompts, lengths)
    _, vf = encode_image(enc.patches[img_idx], params, cfg, prompts)
    return tf, vf


def pretrain_source(ws: Workspace, seed: int, train_log: Optional[TrainLog] = None) -> Checkpoint:
    """Train the dual encoder from random init on source/train with symmetric InfoNCE."""
    cfg = ws.config
    ecfg = cfg.encoder
    params = init_encoder_params(ecfg, len(ws.vocab), seed)
    enc = ws.encoded("source", "train")
    lcfg = cfg.loss_config()
    train_log = train_log if train_log is not None else TrainLog()

    def loss_fn(idx, rng):
        tf, vf = _contrastive_features(params, ecfg, enc, idx, None)
        loss = infonce(tf, vf, logit_scale(params, lcfg))
        return loss, {"infonce": loss.item()}

    train_loop(params, loss_fn, lambda rng: random_batches(len(enc.tokens), cfg.batch_size, rng),
               cfg.pretrain_schedule(), "pretrain", train_log, seed, cfg.per_step_lr)
    return Checkpoint(params, stage="pretrain", epoch=cfg.pretrain_epochs, config_hash=cfg.config_hash(),
                      meta={"seed": seed})


def _labels(enc: Encoded) -> tuple[np.ndarray, int]:
    uniq = np.unique(enc.part.image_ids)
    lookup = {int(p): i for i, p in enumerate(uniq)}
    return np.array([lookup[int(p)] for p in enc.part.caption_ids]), len(uniq)


def _add_classifier(params: ParamStore, cfg: ExperimentConfig, n_cls: int, seed: int) -> None:
    if CLASSIFIER_KEY in params:
        return
    rng = np.random.default_rng([seed, 17])
    params.add(CLASSIFIER_KEY, rng.normal(0.0, 0.01, (cfg.encoder.joint_dim, n_cls)))


def _add_prompts(params: ParamStore, cfg: ExperimentConfig, seed: int,
                 lengths: Optional[tuple] = None) -> PromptSet:
    n_t, n_i = lengths or (cfg.prompt_len_text, cfg.prompt_len_image)
    rng = np.random.default_rng([seed, 5])
    fresh = init_prompts(n_t, n_i, cfg.encoder.text_width, cfg.encoder.image_width, rng, cfg.prompt_dropout)
    return add_prompts_to_params(params, fresh)


def _frozen_digest(params: ParamStore, stage: str) -> str:
    if stage == "stage1":
        return params.digest(exclude_prefix=PROMPT_PREFIX)
    return params.digest(prefix=PROMPT_PREFIX)


def adapt(ws: Workspace, backbone: Checkpoint, stage: str, seed: int, train_log: TrainLog,
          prompt_lengths: Optional[tuple] = None) -> Checkpoint:
    """One adaptation stage on target/train.

    ``backbone`` is left untouched. ``stage`` is one of stage1, stage2,
    baseline, one_stage; stage1/stage2 verify their freeze contract and raise
    :class:`FreezeViolation` if it is broken.
    """
    cfg = ws.config
    ecfg = cfg.encoder
    lcfg = cfg.loss_config()
    params = backbone.params.copy()
    enc = ws.encoded("target", "train")
    labels, n_cls = _labels(enc)

    if stage == "stage1":
        _add_prompts(params, cfg, seed, prompt_lengths)
    elif stage == "one_stage":
        _add_prompts(params, cfg, seed, prompt_lengths)
        _add_classifier(params, cfg, n_cls, seed)
    elif stage == "stage2":
        if "prompt.text.vectors" not in params:
            raise ValueError("stage2 needs a stage-1 checkpoint with prompts")
        _add_classifier(params, cfg, n_cls, seed)
    set_stage_trainability(params, stage)
    prompts = PromptSet.from_params(params, cfg.prompt_dropout)
    multipliers = {CLASSIFIER_PREFIX: cfg.classifier_multiplier, PROMPT_PREFIX: cfg.prompt_multiplier}

    if stage == "baseline":
        def loss_fn(idx, rng):
            tf, vf = _contrastive_features(params, ecfg, enc, idx, None)
            loss = infonce(tf, vf, logit_scale(params, lcfg))
            return loss, {"infonce": loss.item()}

        def batch_fn(rng):
            return random_batches(len(enc.tokens), cfg.batch_size, rng)
    else:
        k = max(2, cfg.batch_size // cfg.ids_per_batch)

        def batch_fn(rng):
            return pk_batches(enc.part.caption_ids, cfg.ids_per_batch, k, rng)

        def loss_fn(idx, rng):
            live = apply_prompt_dropout(prompts, True, rng)
            tf, vf = _contrastive_features(params, ecfg, enc, idx, live)
            ids = enc.part.caption_ids[idx]
            scale = logit_scale(params, lcfg)
            if stage == "stage1":
                loss = l_itc(tf, vf, ids, scale)
                return loss, {"itc": loss.item()}
            itc = l_itc(tf, vf, ids, scale)
            both = T.concat([tf, vf], axis=0)
            lab = labels[idx]
            idl = id_loss(both, np.concatenate([lab, lab]), params[CLASSIFIER_KEY])
            return itc + lcfg.lam * idl, {"itc": itc.item(), "id": idl.item()}

    before = _frozen_digest(params, stage) if stage in ("stage1", "stage2") else None
    adam = train_loop(params, loss_fn, batch_fn, cfg.adapt_schedule(), stage, train_log,
                      seed * 1000 + _STAGE_SALT[stage], cfg.per_step_lr, multipliers)
    if before is not None and _frozen_digest(params, stage) != before:
        what = "encoder" if stage == "stage1" else "prompt"
        raise FreezeViolation(f"{stage} modified {what} parameters")
    return Checkpoint(params, stage=stage, epoch=cfg.epochs, config_hash=cfg.config_hash(), adam=adam,
                      meta={"seed": seed})


def stage1_prompt_tune(ws: Workspace, backbone: Checkpoint, seed: int, train_log: TrainLog,
                       prompt_lengths: Optional[tuple] = None) -> Checkpoint:
    return adapt(ws, backbone, "stage1", seed, train_log, prompt_lengths)


def stage2_finetune(ws: Workspace, stage1: Checkpoint, seed: int, train_log: TrainLog) -> Checkpoint:
    return adapt(ws, stage1, "stage2", seed, train_log)


def prompts_of(ckpt: Checkpoint, cfg: ExperimentConfig) -> Optional[PromptSet]:
    return PromptSet.from_params(ckpt.params, cfg.prompt_dropout)


def eval_checkpoint(ws: Workspace, ckpt: Checkpoint, domain: str = "target", split: str = "test",
                    meta: Optional[dict] = None, rankings_path=None) -> MetricsReport:
    m = {"stage": ckpt.stage, "config_hash": ckpt.config_hash, **ckpt.meta, **(meta or {})}
    return evaluate(ckpt.params, ws.config.encoder, ws.encoded(domain, split), prompts_of(ckpt, ws.config),
                    m, rankings_path)


@dataclass
class StrategyRun:
    strategy: str
    seed: int
    report: MetricsReport
    checkpoint: Checkpoint
    log: TrainLog
    stage_reports: dict = field(default_factory=dict)


def run_one(ws: Workspace, strategy: str, backbone: Checkpoint, seed: int,
            prompt_lengths: Optional[tuple] = None) -> StrategyRun:
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    tlog = TrainLog()
    stage_reports = {}
    if strategy == "baseline":
        final = adapt(ws, backbone, "baseline", seed, tlog)
    elif strategy == "one_stage":
        final = adapt(ws, backbone, "one_stage", seed, tlog, prompt_lengths)
    else:
        s1 = stage1_prompt_tune(ws, backbone, seed, tlog, prompt_lengths)
        stage_reports["stage1"] = eval_checkpoint(ws, s1, meta={"strategy": strategy, "seed": seed})
        final = stage2_finetune(ws, s1, seed, tlog)
    report = eval_checkpoint(ws, final, meta={"strategy": strategy, "seed": seed})
    return StrategyRun(strategy, seed, report, final, tlog, stage_reports)


def aggregate(reports: Sequence[MetricsReport]) -> dict:
    out = {}
    for key in ("rank1", "rank5", "rank10", "mAP", "mINP"):
        vals = [getattr(r, key) for r in reports]
        out[key] = {"median": statistics.median(vals), "min": min(vals), "max": max(vals)}
    return out


def run_strategy(ws: Workspace, strategy: str, backbone: Checkpoint, seeds: Sequence[int],
                 out_dir=None) -> tuple[list[StrategyRun], dict]:
    """Run ``strategy`` once per seed; optionally write per-seed artifacts under ``out_dir``."""
    runs = [run_one(ws, strategy, backbone, s) for s in seeds]
    agg = aggregate([r.report for r in runs])
    if out_dir is not None:
        write_strategy_outputs(Path(out_dir), runs, agg)
    return runs, agg


def write_strategy_outputs(out: Path, runs: Sequence[StrategyRun], agg: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for r in runs:
        d = out / f"{r.strategy}_seed{r.seed}"
        d.mkdir(exist_ok=True)
        save_checkpoint(r.checkpoint, d / "checkpoint")
        r.log.write_csv(d / "train_log.csv")
        r.report.to_json(d / "metrics.json")
        r.report.append_csv(out / "metrics.csv")
    if runs:
        (out / f"{runs[0].strategy}_aggregate.json").write_text(json.dumps(agg, indent=1))


def ablate_prompt_length(ws: Workspace, backbone: Checkpoint, lengths: Sequence, seeds: Sequence[int],
                         out_dir=None) -> list[dict]:
    """Two-stage runs per prompt length; ``lengths`` items are ints (symmetric) or (N_txt, N_img) pairs.

    The symmetric default length 2 is always part of the sweep.
    """
    pairs = [(int(x), int(x)) if isinstance(x, (int, np.integer)) else tuple(map(int, x)) for x in lengths]
    if (2, 2) not in pairs:
        pairs.insert(0, (2, 2))
    rows = []
    for n_t, n_i in pairs:
        for seed in seeds:
            run = run_one(ws, "two_stage", backbone, seed, (n_t, n_i))
            r = run.report
            rows.append({"n_text": n_t, "n_image": n_i, "seed": seed, "rank1": r.rank1, "mAP": r.mAP,
                         "mINP": r.mINP})
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "prompt_length_sweep.csv").open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
        plot_sweep(rows, out / "prompt_length_sweep.svg")
    return rows


def plot_sweep(rows: Sequence[dict], path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    keys = sorted({(r["n_text"], r["n_image"]) for r in rows})
    labels = [f"{t}" if t == i else f"{t}/{i}" for t, i in keys]
    fig, ax = plt.subplots(figsize=(5, 3))
    for metric in ("rank1", "mAP", "mINP"):
        med = [statistics.median(r[metric] for r in rows if (r["n_text"], r["n_image"]) == k) for k in keys]
        ax.plot(range(len(keys)), med, marker="o", label=metric)
    ax.set_xticks(range(len(keys)), labels)
    ax.set_xlabel("prompt length (text/image)")
    ax.set_ylabel("%")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def ordering_check(zero_shot: float, medians: dict, margin: float = 1.0) -> dict:
    """The strategy-ordering claim on median Rank-1: two_stage >= one_stage >= baseline >= zero-shot."""
    chain = [medians["two_stage"], medians["one_stage"], medians["baseline"], zero_shot]
    ordered = all(a >= b for a, b in zip(chain, chain[1:]))
    gap = medians["two_stage"] - medians["baseline"]
    return {"zero_shot": zero_shot, **medians, "ordered": ordered, "two_stage_minus_baseline": gap,
            "holds": ordered and gap >= margin}


def run_pipeline(config: ExperimentConfig, out_dir, data_seed: int = 0, model_seed: int = 0,
                 strategies: Sequence[str] = STRATEGIES) -> dict:
    """gen-data, source pretraining, then every strategy over ``config.seeds``; returns the summary."""
    import time

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.json")
    timings = {}
    t0 = time.perf_counter()
    source, target = make_domain_pair(config.data, data_seed)
    save_corpus(out / "corpus", source, target, config.data, data_seed)
    timings["gen_data"] = time.perf_counter() - t0

    t = time.perf_counter()
    ws = make_workspace(config, source, target)
    plog = TrainLog()
    backbone = pretrain_source(ws, model_seed, plog)
    save_checkpoint(backbone, out / "backbone")
    plog.write_csv(out / "pretrain_log.csv")
    timings["pretrain"] = time.perf_counter() - t

    src_report = eval_checkpoint(ws, backbone, "source", "test", {"eval": "source-test"})
    zs_report = eval_checkpoint(ws, backbone, "target", "test", {"eval": "zero-shot"})
    src_report.to_json(out / "source_test.json")
    zs_report.to_json(out / "zero_shot.json")

    medians, aggregates = {}, {}
    for strategy in strategies:
        t = time.perf_counter()
        runs, agg = run_strategy(ws, strategy, backbone, config.seeds, out / strategy)
        timings[strategy] = time.perf_counter() - t
        medians[strategy] = agg["rank1"]["median"]
        aggregates[strategy] = agg
        for r in runs:
            for name, rep in r.stage_reports.items():
                rep.to_json(out / strategy / f"{r.strategy}_seed{r.seed}" / f"{name}_metrics.json")
    timings["total"] = time.perf_counter() - t0
    summary = {"source_test_rank1": src_report.rank1, "zero_shot_rank1": zs_report.rank1,
               "aggregates": aggregates, "timings_s": timings}
    if set(strategies) == set(STRATEGIES):
        summary["ordering"] = ordering_check(zs_report.rank1, medians)
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    return summary
