"""Joint training of generator and discriminator over all enabled courses.

One step builds every view from the same batch, runs the generator on the
masked/swapped/inserted/regeneration inputs and the discriminator on the
spliced and rediscrimination inputs, backprops the lambda-balanced sum of
all enabled losses, and applies one clipped AdamW update. Metrics mirror
the replace-rate / replace-accuracy diagnostics plus confusion-cell counts.
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import courses as crs
from . import correction as corr
from .errors import ConfigError, InputError, NonFiniteLossError

log = logging.getLogger(__name__)

G_LOSSES = ("mlm", "slm", "re_mlm", "re_slm")
D_LOSSES = ("rtd", "std", "itd", "re_rtd", "re_std")
LOSS_NAMES = G_LOSSES + D_LOSSES

METRICS_COLUMNS = (
    ("step",)
    + tuple(f"loss_{n}" for n in LOSS_NAMES)
    + ("replace_rate", "replace_accuracy", "pos1", "pos2", "pos3", "pos4", "lr")
)


@dataclass(frozen=True)
class TrainConfig:
    lambda_disc: float = 50.0
    learning_rate: float = 5e-4
    warmup_steps: int = 400
    total_steps: int = 5000
    batch_size: int = 32
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_epsilon: float = 1e-6
    grad_clip_norm: float = 2.0
    weight_decay: float = 0.01
    seed: int = 0
    std_course: bool = True
    itd_course: bool = True
    re_mlm: bool = True
    re_rtd: bool = True
    re_slm: bool = True
    re_std: bool = True
    correction_start_step: int = 0
    checkpoint_every: int = 0  # 0 = final checkpoint only
    # per-loss weights, unit by default; lambda_disc additionally scales D losses
    weight_mlm: float = 1.0
    weight_slm: float = 1.0
    weight_re_mlm: float = 1.0
    weight_re_slm: float = 1.0
    weight_rtd: float = 1.0
    weight_std: float = 1.0
    weight_itd: float = 1.0
    weight_re_rtd: float = 1.0
    weight_re_std: float = 1.0

    def __post_init__(self):
        if self.lambda_disc <= 0:
            raise ConfigError(f"lambda_disc must be positive, got {self.lambda_disc}")
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ConfigError(
                f"warmup_steps {self.warmup_steps} must be below total_steps {self.total_steps}"
            )
        if (self.re_slm or self.re_std) and not self.std_course:
            raise ConfigError("re_slm/re_std need the swap course enabled")

    def enabled_losses(self):
        on = {"mlm": True, "rtd": True, "slm": self.std_course, "std": self.std_course,
              "itd": self.itd_course, "re_mlm": self.re_mlm, "re_rtd": self.re_rtd,
              "re_slm": self.re_slm, "re_std": self.re_std}
        return tuple(n for n in LOSS_NAMES if on[n])


@dataclass
class MetricsRecord:
    step: int
    losses: dict
    total_loss: float
    replace_rate: float | None
    replace_accuracy: float | None
    pos_counts: tuple
    learning_rate: float
    # label-balance diagnostics across the discriminator streams
    d_nonoriginal: int = 0
    d_corrupted: int = 0
    itd_nonoriginal: int = 0
    itd_positions: int = 0

    def csv_row(self):
        def fmt(v):
            return "" if v is None else (f"{v:.6g}" if isinstance(v, float) else str(v))
        row = [self.step]
        row += [fmt(self.losses.get(n, 0.0)) for n in LOSS_NAMES]
        row += [fmt(self.replace_rate), fmt(self.replace_accuracy)]
        row += list(self.pos_counts)
        row.append(fmt(self.learning_rate))
        return row


@dataclass(eq=False)
class StepInfo:
    """Detached per-step artifacts shared by losses, correction, and metrics."""
    originals: list
    plans: list
    batch: crs.CourseBatch = None
    rtd_probs: list = field(default_factory=list)   # per-sequence arrays
    std_probs: list = field(default_factory=list)
    rtd_notebooks: list = field(default_factory=list)
    std_notebooks: list = field(default_factory=list)


def build_views(seqs, rates, rng, max_seq_len):
    """Corruption plans plus the mask/swap/insert views for one batch."""
    plans = [crs.plan_corruption(x, rates, rng) for x in seqs]
    batch = crs.CourseBatch(originals=seqs, plans=plans,
                            masked=[crs.apply_mask(x, p) for x, p in zip(seqs, plans)],
                            swapped=[crs.apply_swap(x, p) for x, p in zip(seqs, plans)])
    for i, (x, p) in enumerate(zip(seqs, plans)):
        try:
            batch.inserted.append(crs.apply_insert(x, p, max_len=max_seq_len))
            batch.itd_kept.append(i)
        except InputError:
            log.warning("skipping sequence %d in insert course: extension overflows max_seq_len", i)
    return batch


def step_losses(model, seqs, cfg: TrainConfig, rates, rng, step=0):
    """All enabled losses for one batch, recorded on the active tape.

    Returns (losses, info); losses maps enabled loss names to scalar
    tensors, info carries the detached views/probabilities for metrics.
    """
    max_len = model.config.max_seq_len
    batch = build_views(seqs, rates, rng, max_len)
    plans = batch.plans
    info = StepInfo(originals=seqs, plans=plans, batch=batch)
    losses = {}
    correcting = step >= cfg.correction_start_step

    # generator: cloze course
    ids, mask = crs.pad_batch(batch.masked)
    h_mask = model.encode_generator(ids, mask, rng)
    losses["mlm"] = crs.loss_mlm(model, h_mask, plans, seqs)
    batch.rtd_views = [
        crs.splice_generator_samples(model, v, h_mask.data[i, : len(v.ids)], p.mask_positions, rng)
        for i, (v, p) in enumerate(zip(batch.masked, plans))
    ]

    # generator: rearrangement course
    if cfg.std_course:
        ids, mask = crs.pad_batch(batch.swapped)
        h_swap = model.encode_generator(ids, mask, rng)
        losses["slm"] = crs.loss_slm(model, h_swap, plans, seqs)
        batch.std_views = [
            crs.splice_generator_samples(model, v, h_swap.data[i, : len(v.ids)], p.swap_positions, rng)
            for i, (v, p) in enumerate(zip(batch.swapped, plans))
        ]

    # generator: insertion course (sampling only, no generation loss exists there)
    if cfg.itd_course and batch.itd_kept:
        ids, mask = crs.pad_batch(batch.inserted)
        with ad.no_tape():
            h_ins = model.encode_generator(ids, mask, rng)
        batch.itd_views = [
            crs.splice_generator_samples(
                model, v, h_ins.data[i, : len(v.ids)], plans[j].insert_positions, rng)
            for i, (j, v) in enumerate(zip(batch.itd_kept, batch.inserted))
        ]

    # discriminator losses + detached probabilities for notebooks/metrics
    ids, mask = crs.pad_batch(batch.rtd_views)
    h_rtd = model.encode_discriminator(ids, mask, rng)
    losses["rtd"] = crs.loss_rtd(model, h_rtd, batch.rtd_views, seqs)
    probs = model.detection_probs_detached(h_rtd.data, "rtd")
    info.rtd_probs = [probs[i, : len(v.ids)] for i, v in enumerate(batch.rtd_views)]

    if cfg.std_course:
        ids, mask = crs.pad_batch(batch.std_views)
        h_std = model.encode_discriminator(ids, mask, rng)
        losses["std"] = crs.loss_std(model, h_std, batch.std_views, seqs)
        probs = model.detection_probs_detached(h_std.data, "std")
        info.std_probs = [probs[i, : len(v.ids)] for i, v in enumerate(batch.std_views)]

    if cfg.itd_course and batch.itd_views:
        ids, mask = crs.pad_batch(batch.itd_views)
        h_itd = model.encode_discriminator(ids, mask, rng)
        kept_plans = [plans[j] for j in batch.itd_kept]
        losses["itd"] = crs.loss_itd(model, h_itd, batch.itd_views, kept_plans)

    # confusion notebooks from the same detached discriminator outputs
    info.rtd_notebooks = [
        corr.classify_confusion(x, v, p, plan.mask_positions, course="rtd")
        for x, v, p, plan in zip(seqs, batch.rtd_views, info.rtd_probs, plans)
    ]
    if cfg.std_course:
        info.std_notebooks = [
            corr.classify_confusion(x, v, p, plan.swap_positions, course="std")
            for x, v, p, plan in zip(seqs, batch.std_views, info.std_probs, plans)
        ]

    # self-correction courses
    if correcting and (cfg.re_mlm or cfg.re_rtd):
        regen = [corr.build_regeneration(x, p.mask_positions, nb)
                 for x, p, nb in zip(seqs, plans, info.rtd_notebooks)]
        redisc = [corr.build_rediscrimination(x, v, nb)
                  for x, v, nb in zip(seqs, batch.rtd_views, info.rtd_notebooks)]
        if cfg.re_mlm:
            ids, mask = crs.pad_batch([r[0] for r in regen])
            h = model.encode_generator(ids, mask, rng)
            losses["re_mlm"] = corr.loss_regeneration(model, h, regen)
        if cfg.re_rtd:
            ids, mask = crs.pad_batch([r[0] for r in redisc])
            h = model.encode_discriminator(ids, mask, rng)
            losses["re_rtd"] = corr.loss_rediscrimination(model, h, "rtd", redisc)

    if correcting and (cfg.re_slm or cfg.re_std):
        regen = [corr.build_regeneration(x, p.swap_positions, nb)
                 for x, p, nb in zip(seqs, plans, info.std_notebooks)]
        redisc = [corr.build_rediscrimination(x, v, nb)
                  for x, v, nb in zip(seqs, batch.std_views, info.std_notebooks)]
        if cfg.re_slm:
            ids, mask = crs.pad_batch([r[0] for r in regen])
            h = model.encode_generator(ids, mask, rng)
            losses["re_slm"] = corr.loss_regeneration(model, h, regen)
        if cfg.re_std:
            ids, mask = crs.pad_batch([r[0] for r in redisc])
            h = model.encode_discriminator(ids, mask, rng)
            losses["re_std"] = corr.loss_rediscrimination(model, h, "std", redisc)

    return losses, info


def evaluate_losses(model, info: StepInfo, cfg: TrainConfig, rng=None):
    """Recompute enabled losses from a captured step's frozen views.

    Unlike step_losses this resamples nothing: spliced views, notebooks,
    and hence the regeneration/rediscrimination inputs are data. Used for
    gradient checking and fixed-point evaluations.
    """
    seqs, plans, batch = info.originals, info.plans, info.batch
    losses = {}

    ids, mask = crs.pad_batch(batch.masked)
    losses["mlm"] = crs.loss_mlm(model, model.encode_generator(ids, mask, rng), plans, seqs)
    if cfg.std_course:
        ids, mask = crs.pad_batch(batch.swapped)
        losses["slm"] = crs.loss_slm(model, model.encode_generator(ids, mask, rng), plans, seqs)

    ids, mask = crs.pad_batch(batch.rtd_views)
    losses["rtd"] = crs.loss_rtd(model, model.encode_discriminator(ids, mask, rng),
                                 batch.rtd_views, seqs)
    if cfg.std_course:
        ids, mask = crs.pad_batch(batch.std_views)
        losses["std"] = crs.loss_std(model, model.encode_discriminator(ids, mask, rng),
                                     batch.std_views, seqs)
    if cfg.itd_course and batch.itd_views:
        ids, mask = crs.pad_batch(batch.itd_views)
        kept_plans = [plans[j] for j in batch.itd_kept]
        losses["itd"] = crs.loss_itd(model, model.encode_discriminator(ids, mask, rng),
                                     batch.itd_views, kept_plans)

    if cfg.re_mlm or cfg.re_rtd:
        regen = [corr.build_regeneration(x, p.mask_positions, nb)
                 for x, p, nb in zip(seqs, plans, info.rtd_notebooks)]
        redisc = [corr.build_rediscrimination(x, v, nb)
                  for x, v, nb in zip(seqs, batch.rtd_views, info.rtd_notebooks)]
        if cfg.re_mlm:
            ids, mask = crs.pad_batch([r[0] for r in regen])
            losses["re_mlm"] = corr.loss_regeneration(
                model, model.encode_generator(ids, mask, rng), regen)
        if cfg.re_rtd:
            ids, mask = crs.pad_batch([r[0] for r in redisc])
            losses["re_rtd"] = corr.loss_rediscrimination(
                model, model.encode_discriminator(ids, mask, rng), "rtd", redisc)
    if cfg.re_slm or cfg.re_std:
        regen = [corr.build_regeneration(x, p.swap_positions, nb)
                 for x, p, nb in zip(seqs, plans, info.std_notebooks)]
        redisc = [corr.build_rediscrimination(x, v, nb)
                  for x, v, nb in zip(seqs, batch.std_views, info.std_notebooks)]
        if cfg.re_slm:
            ids, mask = crs.pad_batch([r[0] for r in regen])
            losses["re_slm"] = corr.loss_regeneration(
                model, model.encode_generator(ids, mask, rng), regen)
        if cfg.re_std:
            ids, mask = crs.pad_batch([r[0] for r in redisc])
            losses["re_std"] = corr.loss_rediscrimination(
                model, model.encode_discriminator(ids, mask, rng), "std", redisc)
    return losses


def total_loss(losses, cfg: TrainConfig):
    """Unit-weight generator losses plus lambda-weighted discriminator losses.

    Absent (disabled) courses contribute exactly zero. Any non-finite
    component aborts the step before gradients exist.
    """
    for name, t in losses.items():
        if not np.isfinite(t.data):
            raise NonFiniteLossError(f"loss {name} is {float(t.data)} — aborting step")
    parts = []
    for name in G_LOSSES:
        if name in losses:
            parts.append(ad.scale(losses[name], getattr(cfg, f"weight_{name}")))
    for name in D_LOSSES:
        if name in losses:
            parts.append(ad.scale(losses[name], cfg.lambda_disc * getattr(cfg, f"weight_{name}")))
    return ad.add_n(parts)


# -- optimizer ---------------------------------------------------------------


def learning_rate_at(step, cfg: TrainConfig):
    """Linear warmup to the peak, then linear decay to zero; step is 1-based."""
    if step <= cfg.warmup_steps:
        return cfg.learning_rate * step / max(cfg.warmup_steps, 1)
    return cfg.learning_rate * (cfg.total_steps - step) / (cfg.total_steps - cfg.warmup_steps)


def active_parameter_names(model, cfg: TrainConfig):
    """All parameters except dedicated heads of courses that never run."""
    skip = set()
    if not cfg.std_course:
        skip |= {"head.std.w", "head.std.b"}
    if not cfg.itd_course:
        skip |= {"head.itd.w", "head.itd.b"}
    return [n for n in model.named_parameters() if n not in skip]


def clip_gradients(tensors, max_norm):
    """Scale gradients in place so the global norm is at most max_norm."""
    total = np.sqrt(sum(float((t.grad.astype(np.float64) ** 2).sum())
                        for t in tensors if t.grad is not None))
    if max_norm > 0 and total > max_norm:
        factor = np.float32(max_norm / total)
        for t in tensors:
            if t.grad is not None:
                t.grad = t.grad * factor
    return total


class Adam:
    """AdamW with bias correction and the linear warmup/decay schedule."""

    def __init__(self, model, cfg: TrainConfig):
        self.cfg = cfg
        self.names = active_parameter_names(model, cfg)
        params = model.named_parameters()
        self.m = {n: np.zeros_like(params[n].data) for n in self.names}
        self.v = {n: np.zeros_like(params[n].data) for n in self.names}
        self.t = 0

    def step(self, model):
        """One decoupled-weight-decay Adam update over the active parameters."""
        self.t += 1
        cfg = self.cfg
        lr = np.float32(learning_rate_at(self.t, cfg))
        b1, b2 = np.float32(cfg.adam_beta1), np.float32(cfg.adam_beta2)
        eps = np.float32(cfg.adam_epsilon)
        wd = np.float32(cfg.weight_decay)
        c1 = np.float32(1.0 - cfg.adam_beta1 ** self.t)
        c2 = np.float32(1.0 - cfg.adam_beta2 ** self.t)
        params = model.named_parameters()
        for n in self.names:
            p = params[n]
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[n] = b1 * self.m[n] + (np.float32(1) - b1) * g
            v = self.v[n] = b2 * self.v[n] + (np.float32(1) - b2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + eps)
            p.data = p.data - lr * (update + wd * p.data)
        return float(lr)


# -- metrics -------------------------------------------------------------------


def compute_metrics(step, losses, total, info: StepInfo, lr, cfg: TrainConfig):
    """Replace rate/accuracy on the rtd stream, confusion-cell counts, and
    the discriminator label-balance tallies. Reads detached data only."""
    replaced = kept = 0
    caught = 0
    for x, view, plan, probs in zip(info.originals, info.batch.rtd_views, info.plans, info.rtd_probs):
        r = plan.mask_positions
        kept += len(r)
        is_replaced = view.ids[r] != x.ids[r]
        replaced += int(is_replaced.sum())
        caught += int((probs[r][is_replaced] < 0.5).sum())
    replace_rate = replaced / kept if kept else None
    replace_accuracy = caught / replaced if replaced else None

    cells = [0, 0, 0, 0]
    for nb in info.rtd_notebooks:
        for i, cell in enumerate(nb.cells()):
            cells[i] += len(cell)

    d_nonorig = replaced
    d_corrupted = kept
    if cfg.std_course:
        for x, view, plan in zip(info.originals, info.batch.std_views, info.plans):
            s = plan.swap_positions
            d_corrupted += len(s)
            d_nonorig += int((view.ids[s] != x.ids[s]).sum())
    itd_nonorig = itd_total = 0
    if cfg.itd_course:
        for j in info.batch.itd_kept:
            plan = info.plans[j]
            itd_nonorig += len(plan.insert_positions)
            itd_total += plan.extended_length
        d_nonorig += itd_nonorig
        d_corrupted += itd_nonorig

    return MetricsRecord(
        step=step,
        losses={n: float(losses[n].data) if n in losses else 0.0 for n in LOSS_NAMES},
        total_loss=total,
        replace_rate=replace_rate,
        replace_accuracy=replace_accuracy,
        pos_counts=tuple(cells),
        learning_rate=lr,
        d_nonoriginal=d_nonorig,
        d_corrupted=d_corrupted,
        itd_nonoriginal=itd_nonorig,
        itd_positions=itd_total,
    )


# -- the step and the loop -----------------------------------------------------


def train_step(model, seqs, opt: Adam, cfg: TrainConfig, rates, rng, step=0):
    """One co-training step; a non-finite loss aborts before any update."""
    model.zero_grad()
    with ad.Tape() as tape:
        losses, info = step_losses(model, seqs, cfg, rates, rng, step)
        total = total_loss(losses, cfg)
        tape.backward(total)
    params = model.named_parameters()
    clip_gradients([params[n] for n in opt.names], cfg.grad_clip_norm)
    lr = opt.step(model)
    return compute_metrics(step, losses, float(total.data), info, lr, cfg)


class MetricsWriter:
    """Appends one fixed-schema CSV row per step."""

    def __init__(self, path):
        self.path = Path(path)
        new = not self.path.exists()
        self._fh = open(self.path, "a", newline="", encoding="utf-8")
        self._writer = csv.writer(self._fh)
        if new:
            self._writer.writerow(METRICS_COLUMNS)

    def append(self, record: MetricsRecord):
        self._writer.writerow(record.csv_row())
        self._fh.flush()

    def close(self):
        self._fh.close()


def load_corpus_sequences(path, vocab, max_seq_len, min_tokens=2):
    """Tokenize a one-sentence-per-line corpus into trainable sequences."""
    seqs = []
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            ids = vocab.encode(line.strip())
            if len(ids) < min_tokens:
                skipped += 1
                continue
            seqs.append(crs.TokenSequence.from_ids(ids[:max_seq_len]))
    if not seqs:
        raise InputError(f"corpus {path} has no usable sentences")
    if skipped:
        log.info("dropped %d sentences shorter than %d tokens", skipped, min_tokens)
    return seqs


class BatchSampler:
    """Epoch-shuffled index cycling, deterministic under the step rng."""

    def __init__(self, n_sequences, batch_size):
        self.n = n_sequences
        self.batch_size = batch_size
        self._pool = []

    def next_indices(self, rng):
        out = []
        while len(out) < self.batch_size:
            if not self._pool:
                self._pool = list(rng.permutation(self.n))
            out.append(self._pool.pop())
        return out


def train(model, sequences, cfg: TrainConfig, rates, run_dir=None, vocab=None,
          step_callback=None):
    """Run cfg.total_steps of co-training; returns the metric records.

    Writes metrics.csv and periodic/final checkpoints into run_dir when
    given (checkpoints need `vocab` for a self-contained file).
    """
    from .checkpoint import save_checkpoint

    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model, cfg)
    sampler = BatchSampler(len(sequences), cfg.batch_size)
    writer = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        writer = MetricsWriter(run_dir / "metrics.csv")
    records = []
    try:
        for step in range(cfg.total_steps):
            batch = [sequences[i] for i in sampler.next_indices(rng)]
            try:
                rec = train_step(model, batch, opt, cfg, rates, rng, step)
            except NonFiniteLossError:
                log.exception("non-finite loss at step %d; parameters left unchanged", step)
                raise
            records.append(rec)
            if writer:
                writer.append(rec)
            if step_callback:
                step_callback(rec)
            if run_dir is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(run_dir / f"checkpoint_step{step + 1}.bin", model, vocab)
            if step % 200 == 0:
                log.info("step %d total_loss %.4f mlm %.4f rtd %.4f", step, rec.total_loss,
                         rec.losses["mlm"], rec.losses["rtd"])
        if run_dir is not None:
            save_checkpoint(run_dir / "checkpoint_final.bin", model, vocab)
    finally:
        if writer:
            writer.close()
    return records
