"""Multi-task training loop: curriculum schedule, Adam, fit/evaluate.

Five CTC tasks share one network: the phoneme recogniser (PR) plus four
articulatory streams read off the same frame embedding. Two combination
strategies exist: AllAtOnce trains every head from step 0; Sequential runs
PR alone for a warmup, then pairs it with one articulatory task at a time,
switching at a fixed interval and holding the last task once the order is
exhausted.

Batches are processed one utterance at a time in a fixed order (loss and
gradient averages are identical to padded-and-masked batch processing, and
the fixed reduction order keeps runs bitwise reproducible).
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .af_inventory import AF_STREAMS, load_af_table, map_sequence
from .corpusio import read_features
from .ctc import ctc_loss, greedy_decode, min_frames
from .evalmetrics import score_corpus
from .netops import ModelParams, NetConfig, backward, forward, prepare_input

log = logging.getLogger(__name__)

PR = "PR"
ALL_TASKS = (PR,) + AF_STREAMS

_LOSS_KEYS = {
    PR: "loss_pr",
    "AF_M": "loss_af_m",
    "AF_P": "loss_af_p",
    "AF_HL": "loss_af_hl",
    "AF_FB": "loss_af_fb",
}


class TrainingDivergedError(RuntimeError):
    """Raised when a loss or activation stops being finite."""


@dataclass(frozen=True)
class AllAtOnce:
    """Every task active at every step."""


@dataclass(frozen=True)
class Sequential:
    """PR-only warmup, then PR plus one articulatory task per interval."""

    warmup: int = 2000
    interval: int = 2000
    order: tuple = AF_STREAMS

    def __post_init__(self):
        if self.warmup < 1 or self.interval < 1:
            raise ValueError("warmup and interval must be >= 1")
        if sorted(self.order) != sorted(AF_STREAMS):
            raise ValueError(f"order must be a permutation of {AF_STREAMS}")


def active_tasks(step, strategy):
    """Task set for a 0-based step, as a tuple with PR first."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if isinstance(strategy, AllAtOnce):
        return ALL_TASKS
    if step < strategy.warmup:
        return (PR,)
    k = min((step - strategy.warmup) // strategy.interval, len(strategy.order) - 1)
    return (PR, strategy.order[k])


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 10000
    lr: float = 4e-5
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    strategy: object = field(default_factory=Sequential)
    eval_every: int = 200
    patience: int = 10
    loss_combination: str = "mean"

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.eval_every < 1 or self.patience < 1:
            raise ValueError("counts must be positive (steps may be 0)")
        if self.lr <= 0 or self.eps <= 0:
            raise ValueError("lr and eps must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")
        if self.loss_combination not in ("mean", "sum"):
            raise ValueError("loss_combination must be 'mean' or 'sum'")

    def to_dict(self):
        if isinstance(self.strategy, AllAtOnce):
            strat = {"kind": "all"}
        else:
            strat = {"kind": "seq", "warmup": self.strategy.warmup,
                     "interval": self.strategy.interval,
                     "order": list(self.strategy.order)}
        return {
            "steps": self.steps, "lr": self.lr, "batch_size": self.batch_size,
            "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
            "seed": self.seed, "strategy": strat, "eval_every": self.eval_every,
            "patience": self.patience, "loss_combination": self.loss_combination,
        }


@dataclass
class LossReport:
    """Per-task batch losses plus their combination; skipped counts
    utterances dropped for CTC infeasibility under the active task set."""

    losses: dict
    combined: float
    skipped: int = 0


@dataclass(frozen=True)
class PreparedUtterance:
    """An utterance with its network input and CTC targets precomputed.

    The stacked input depends only on the features, never on the parameters,
    so it is built once up front instead of on every visit.
    """

    id: str
    stacked: np.ndarray
    pr_target: tuple
    af_targets: dict
    canonical: tuple
    perceived: tuple

    @property
    def frames(self):
        return self.stacked.shape[0]

    def target_for(self, task):
        return self.pr_target if task == PR else self.af_targets[task]


def prepare_utterance(rec, base_dir, table, net_cfg):
    mono = read_features(Path(base_dir) / rec.mono_path)
    multi = read_features(Path(base_dir) / rec.multi_path)
    stacked = prepare_input(mono, multi, net_cfg)
    inv = table.inventory
    phone_ids = [inv.id_of(p) for p in rec.perceived]
    pr_target = tuple(i + 1 for i in phone_ids)
    af_targets = {}
    for stream in AF_STREAMS:
        af_targets[stream] = tuple(c + 1 for c in map_sequence(phone_ids, stream, table))
    return PreparedUtterance(
        id=rec.id,
        stacked=stacked,
        pr_target=pr_target,
        af_targets=af_targets,
        canonical=rec.canonical,
        perceived=rec.perceived,
    )


def prepare_dataset(records, base_dir, table=None, net_cfg=None):
    table = table or load_af_table()
    net_cfg = net_cfg or NetConfig()
    return [prepare_utterance(r, base_dir, table, net_cfg) for r in records]


@dataclass
class AdamState:
    m: ModelParams
    v: ModelParams
    t: int = 0

    @classmethod
    def init(cls, params):
        return cls(m=params.zeros_like(), v=params.zeros_like(), t=0)


def adam_step(params, grads, state, config):
    """One bias-corrected Adam update, in place."""
    state.t += 1
    bc1 = 1.0 - config.beta1 ** state.t
    bc2 = 1.0 - config.beta2 ** state.t
    p_arrs = dict(params.named_arrays())
    g_arrs = dict(grads.named_arrays())
    m_arrs = dict(state.m.named_arrays())
    v_arrs = dict(state.v.named_arrays())
    for name, p in p_arrs.items():
        g = g_arrs[name]
        m = m_arrs[name]
        v = v_arrs[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * g * g
        p -= config.lr * (m / bc1) / (np.sqrt(v / bc2) + config.eps)


def _feasible(utt, tasks):
    return all(utt.frames >= min_frames(utt.target_for(t)) for t in tasks)


def train_step(params, batch, step, config, adam_state, net_cfg):
    """Forward, multi-task CTC, backprop, Adam. Returns (params, state, report)."""
    tasks = active_tasks(step, config.strategy)
    usable = []
    for utt in batch:
        if _feasible(utt, tasks):
            usable.append(utt)
        else:
            log.warning("step %d: skipping %s, %d frames infeasible for %s",
                        step, utt.id, utt.frames, tasks)
    if not usable:
        log.warning("step %d: entire batch infeasible, no update", step)
        return params, adam_state, LossReport(losses={}, combined=0.0, skipped=len(batch))

    n_tasks = len(tasks)
    n_utts = len(usable)
    # d(combined)/d(per-utterance CTC loss) under mean-over-tasks of mean-over-batch
    grad_scale = 1.0 / n_utts if config.loss_combination == "sum" else 1.0 / (n_tasks * n_utts)
    totals = {t: 0.0 for t in tasks}
    grads = params.zeros_like()
    for utt in usable:
        pr_logits, af_logits, cache = forward(utt.stacked, params, net_cfg)
        if not np.isfinite(pr_logits).all():
            raise TrainingDivergedError(f"non-finite logits at step {step}, utterance {utt.id}")
        d_pr = None
        d_af = {}
        for task in tasks:
            logits = pr_logits if task == PR else af_logits[task]
            res = ctc_loss(logits, utt.target_for(task))
            if not math.isfinite(res.loss):
                raise TrainingDivergedError(
                    f"non-finite {task} loss at step {step}, utterance {utt.id}")
            totals[task] += res.loss
            if task == PR:
                d_pr = grad_scale * res.grad_logits
            else:
                d_af[task] = grad_scale * res.grad_logits
        utt_grads = backward(d_pr, d_af, params, cache)
        for (_, acc), (_, g) in zip(grads.named_arrays(), utt_grads.named_arrays()):
            acc += g

    losses = {t: totals[t] / n_utts for t in tasks}
    if config.loss_combination == "sum":
        combined = sum(losses.values())
    else:
        combined = sum(losses.values()) / n_tasks
    adam_step(params, grads, adam_state, config)
    return params, adam_state, LossReport(losses=losses, combined=combined,
                                          skipped=len(batch) - n_utts)


def evaluate_model(params, net_cfg, utts, table=None, insertion_mode="exclude",
                   average="micro"):
    """Greedy-decode every utterance and score against canonical + perceived."""
    table = table or load_af_table()
    inv = table.inventory
    triples = []
    for utt in utts:
        pr_logits, _, _ = forward(utt.stacked, params, net_cfg)
        labels = greedy_decode(pr_logits)
        predicted = tuple(inv.from_labels(labels))
        triples.append((utt.canonical, utt.perceived, predicted))
    return score_corpus(triples, inventory=inv, insertion_mode=insertion_mode,
                        average=average)


def _make_batches(utts, batch_size):
    """Chunk utterances into batches of similar frame counts."""
    order = sorted(range(len(utts)), key=lambda i: (utts[i].frames, utts[i].id))
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


@dataclass
class FitResult:
    params: ModelParams        # lowest-dev-PER snapshot
    final_params: ModelParams  # parameters after the last executed step
    log: list
    best_dev_per: float
    best_step: int
    stopped_early: bool = False


def fit(train_utts, dev_utts, config, net_cfg=None, table=None, init_params=None):
    """Run the training loop; model selection keeps the lowest dev PER."""
    if not train_utts or not dev_utts:
        raise ValueError("train and dev splits must be non-empty")
    net_cfg = net_cfg or NetConfig()
    table = table or load_af_table()
    rng = np.random.default_rng(config.seed)
    params = init_params.copy() if init_params is not None else ModelParams.initialize(net_cfg, rng)
    if config.steps == 0:
        return FitResult(params=params.copy(), final_params=params, log=[],
                         best_dev_per=float("inf"), best_step=-1)

    batches = _make_batches(train_utts, config.batch_size)
    state = AdamState.init(params)
    records = []
    best = params.copy()
    best_per = float("inf")
    best_step = -1
    evals_since_improve = 0
    stopped_early = False
    epoch_order = []
    cursor = 0

    for step in range(config.steps):
        if cursor >= len(epoch_order):
            epoch_order = rng.permutation(len(batches))
            cursor = 0
        batch = [train_utts[i] for i in batches[epoch_order[cursor]]]
        cursor += 1

        tasks = active_tasks(step, config.strategy)
        params, state, report = train_step(params, batch, step, config, state, net_cfg)
        rec = {"step": step, "active_tasks": list(tasks)}
        for task, key in _LOSS_KEYS.items():
            rec[key] = report.losses.get(task)
        rec["combined"] = report.combined if report.losses else None
        if report.skipped:
            rec["skipped"] = report.skipped
        records.append(rec)

        if (step + 1) % config.eval_every == 0 or step == config.steps - 1:
            dev = evaluate_model(params, net_cfg, dev_utts, table=table)
            records.append({"step": step, "dev_per": dev["per"], "dev_f1": dev["f1"]})
            if dev["per"] < best_per:
                best_per = dev["per"]
                best = params.copy()
                best_step = step
                evals_since_improve = 0
            else:
                evals_since_improve += 1
                if evals_since_improve >= config.patience:
                    log.info("early stop at step %d: no dev PER gain in %d evals",
                             step, config.patience)
                    stopped_early = True
                    break

    return FitResult(params=best, final_params=params, log=records,
                     best_dev_per=best_per, best_step=best_step,
                     stopped_early=stopped_early)
