"""Three-stage training orchestration.

Stage 1 trains both classification branches on the summed cross-entropy
with the hider frozen. At the stage boundary, selected weight matrices are
split into a frozen top-rank part and a trainable residual. Stage 2 updates
only the feature-lifting side under the alignment loss. Stage 3 jointly
fine-tunes the analysis network and the hider under classification plus a
sigmoid-ramped alignment weight, feeding the auxiliary head raw-secret
features instead of stego features.

Also home to the adaptive-moment optimizer, the line-delimited metric log
records, and the binary checkpoint format ("STGF", version, then
length-prefixed named float64 tensors, all little-endian).
"""

import math
import struct
from dataclasses import dataclass

import numpy as np

from . import align as align_mod
from . import detector as det_mod
from . import hider as hider_mod
from . import lowrank, metrics
from .errors import ContractError, DimensionError, NumericError
from .tensor import Tensor, concat, gradient_of

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CHECKPOINT_MAGIC = b"STGF"
CHECKPOINT_VERSION = 1

LOG_FIELDS = ("stage", "epoch", "step", "L_CLS", "L_d", "L_a", "L_SDA", "mu", "L_total")


@dataclass
class TrainConfig:
    """Stage lengths, learning rates and the knobs of one training run."""

    e1: int = 10
    e2: int = 5
    e3: int = 5
    lr1: float = 2e-4
    lr2: float = 1e-4
    lr3: float = 1e-5
    batch: int = 8
    gamma_s: float = 10.0
    seed: int = 0
    lod_enabled: bool = True
    lod_residual_rank: int = 16
    sda_preset: str = "default"

    def __post_init__(self):
        if min(self.e1, self.e2, self.e3) < 1:
            raise ContractError("stage epoch counts must be >= 1")
        if min(self.lr1, self.lr2, self.lr3) <= 0:
            raise ContractError("learning rates must be positive")
        if self.batch < 1:
            raise ContractError("batch size must be >= 1")


@dataclass
class ScheduleState:
    """Progress through the final stage, in optimizer steps."""

    s_t: int
    s_T: int

    def __post_init__(self):
        if self.s_T <= 0:
            raise ContractError("total step count must be positive")
        if not 0 <= self.s_t <= self.s_T:
            raise ContractError("current step outside [0, total]")


def mu(state, gamma_s):
    """Sigmoid ramp from 0 toward 1 across the stage: 2/(1+e^(-g*t/T)) - 1."""
    return 2.0 / (1.0 + math.exp(-gamma_s * state.s_t / state.s_T)) - 1.0


def total_loss(l_cls, l_sda, mu_value):
    """Classification loss plus the ramped alignment loss."""
    if isinstance(l_cls, Tensor) or isinstance(l_sda, Tensor):
        return l_cls + mu_value * l_sda
    return l_cls + mu_value * l_sda


class AdamState:
    """First/second moment accumulators keyed by parameter name."""

    def __init__(self):
        self.m = {}
        self.v = {}
        self.t = 0


def adam_step(params, grads, lr, state):
    """Bias-corrected adaptive-moment update; returns new parameter tensors."""
    state.t += 1
    t = state.t
    out = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ContractError("gradient shape %s does not match parameter %s"
                                % (tuple(g.shape), tuple(p.shape)))
        m = state.m.get(name)
        if m is None:
            m = np.zeros(p.shape)
            state.v[name] = np.zeros(p.shape)
        v = state.v[name]
        m = ADAM_BETA1 * m + (1 - ADAM_BETA1) * g
        v = ADAM_BETA2 * v + (1 - ADAM_BETA2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1 - ADAM_BETA1 ** t)
        v_hat = v / (1 - ADAM_BETA2 ** t)
        out[name] = Tensor(p.data - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS),
                           grad_enabled=True)
    return out


# ---------------------------------------------------------------------------
# staged loss computation


def _pooled(fs):
    return concat(fs, axis=0)


def _alignment_terms(fs, fsec, attns, attns_sec, acfg):
    l_d = l_a = None
    if acfg.fa_enabled:
        l_d = align_mod.feature_alignment_loss(_pooled(fs), _pooled(fsec), acfg)
    if acfg.aa_enabled and attns[0] is not None:
        l_a = align_mod.attention_alignment_loss(attns, attns_sec, acfg)
    if l_d is None and l_a is None:
        raise ContractError("no alignment term computable for this configuration")
    l_sda = l_d if l_a is None else (l_a if l_d is None else l_d + l_a)
    return l_d, l_a, l_sda


def compute_stage_losses(stage, secrets, covers, labels, det, hcfg, hparams,
                         acfg, mu_value, compute_all=False):
    """Loss tensors for one batch at the given stage.

    ``compute_all`` evaluates every branch regardless of stage (the literal
    per-iteration schedule) so tests can confirm the skipping of unused
    branches never changes the optimized loss.
    """
    secret_batch = hider_mod.ImageBatch(data=secrets, role=hider_mod.ROLE_SECRET)
    cover_batch = hider_mod.ImageBatch(data=covers, role=hider_mod.ROLE_COVER)
    stego = hider_mod.hide(secret_batch, cover_batch, hcfg, hparams)
    fs, attns = det_mod.lift(stego, det)

    need_secret = compute_all or stage >= 2
    fsec = attns_sec = None
    if need_secret and (acfg.any_enabled or compute_all or stage == 3):
        fsec, attns_sec = det_mod.lift_secret(secret_batch.data, det)

    out = {"L_CLS": None, "L_d": None, "L_a": None, "L_SDA": None,
           "L_total": None, "mu": mu_value}

    if stage == 1 or compute_all:
        y = det_mod.classify_batch(fs, det.slot("head_m.w"), det.slot("head_m.b"))
        yp = det_mod.classify_batch(fs, det.slot("head_mp.w"), det.slot("head_mp.b"))
        out["L_CLS"] = det_mod.cls_loss(y, yp, labels)
    if (stage == 2 or compute_all) and acfg.any_enabled:
        l_d, l_a, l_sda = _alignment_terms(fs, fsec, attns, attns_sec, acfg)
        out["L_d"], out["L_a"], out["L_SDA"] = l_d, l_a, l_sda
    if stage == 3:
        y = det_mod.classify_batch(fs, det.slot("head_m.w"), det.slot("head_m.b"))
        yp = det_mod.classify_batch(fsec, det.slot("head_mp.w"),
                                    det.slot("head_mp.b"))
        out["L_CLS"] = det_mod.cls_loss(y, yp, labels)
        if acfg.any_enabled:
            l_d, l_a, l_sda = _alignment_terms(fs, fsec, attns, attns_sec, acfg)
            out["L_d"], out["L_a"], out["L_SDA"] = l_d, l_a, l_sda
            out["L_total"] = total_loss(out["L_CLS"], l_sda, mu_value)
        else:
            out["L_total"] = out["L_CLS"]
    elif stage == 1:
        out["L_total"] = out["L_CLS"]
    elif stage == 2:
        out["L_total"] = out["L_SDA"]
    return out


# ---------------------------------------------------------------------------
# parameter bookkeeping


def _stage_slot_names(det, stage):
    if stage == 1:
        return det.names_m() + det.names_m_prime()
    if stage == 2:
        return det.names_lifting()
    return det.names_m()


def _trainable_params(det, names, hparams=None):
    """name -> trainable tensor map (split weights expose their residual)."""
    slots = det.all_slots()
    out = {}
    for name in names:
        slot = slots[name]
        if isinstance(slot, lowrank.SplitWeight):
            out[name + ".delta"] = slot.delta
        else:
            out[name] = slot
    if hparams is not None:
        out.update(hparams.slots())
    return out


def _write_back(det, hparams, updated):
    slots = det.all_slots()
    hider_slots = hparams.slots() if hparams is not None else {}
    for name, tensor in updated.items():
        if name in hider_slots:
            if name == "hider.alpha":
                hparams.alpha = tensor
            else:
                hparams.gains[name[len("hider.gain_"):]] = tensor
        elif name.endswith(".delta"):
            slots[name[: -len(".delta")]].delta = tensor
        else:
            det.set_slot(name, tensor)


def apply_lod(det, residual_rank):
    """Split the allowlisted matrices; returns the names actually split."""
    done = []
    for name in det.projection_slot_names():
        slot = det.all_slots()[name]
        if isinstance(slot, lowrank.SplitWeight) or slot.ndim != 2:
            continue
        rr = lowrank.desk_scale_residual_rank(slot.shape, residual_rank)
        if rr < 1:
            continue
        det.set_slot(name, lowrank.decompose(slot, rr))
        done.append(name)
    return done


# ---------------------------------------------------------------------------
# the training loop


def _loss_value(entry):
    return float(entry.item()) if entry is not None else 0.0


def run_training(cfg, dataset, det, hcfg, hparams):
    """Run the three stages; returns one metric record per epoch.

    The alignment stage is skipped entirely when the preset disables every
    alignment term. Aborts with a stage/step diagnostic on non-finite loss.
    """
    acfg = align_mod.preset(cfg.sda_preset)
    rng = np.random.default_rng(cfg.seed)
    n = dataset.secrets.shape[0]
    if n < 1:
        raise ContractError("empty training set")
    batches = [(s, min(s + cfg.batch, n)) for s in range(0, n, cfg.batch)]
    s_total = cfg.e3 * len(batches)

    records = []
    global_step = 0
    stage3_step = 0
    epoch_global = 0

    for stage, epochs, lr in ((1, cfg.e1, cfg.lr1), (2, cfg.e2, cfg.lr2),
                              (3, cfg.e3, cfg.lr3)):
        if stage == 2:
            if cfg.lod_enabled:
                apply_lod(det, cfg.lod_residual_rank)
            if not acfg.any_enabled:
                continue
        names = _stage_slot_names(det, stage)
        stage_hider = hparams if stage == 3 else None
        adam = AdamState()
        for _ in range(epochs):
            epoch_global += 1
            order = rng.permutation(n)
            cover_order = rng.permutation(n)
            sums = {k: 0.0 for k in ("L_CLS", "L_d", "L_a", "L_SDA", "L_total")}
            mu_value = 0.0
            for lo, hi in batches:
                idx = order[lo:hi]
                cidx = cover_order[lo:hi]
                if stage == 3:
                    mu_value = mu(ScheduleState(stage3_step, s_total), cfg.gamma_s)
                try:
                    losses = compute_stage_losses(
                        stage, Tensor(dataset.secrets[idx]),
                        Tensor(dataset.covers[cidx]), dataset.labels[idx],
                        det, hcfg, hparams, acfg, mu_value)
                    loss = losses["L_total"]
                    params = _trainable_params(det, names, stage_hider)
                    grads = gradient_of(loss, list(params.values()))
                except NumericError as err:
                    raise NumericError(
                        "training aborted at stage %d epoch %d step %d: %s"
                        % (stage, epoch_global, global_step, err)) from err
                grad_map = {k: g.data for k, g in zip(params, grads)}
                _write_back(det, stage_hider,
                            adam_step(params, grad_map, lr, adam))
                for k in sums:
                    sums[k] += _loss_value(losses[k])
                global_step += 1
                if stage == 3:
                    stage3_step += 1
            nb = len(batches)
            records.append({
                "stage": stage, "epoch": epoch_global, "step": global_step,
                "L_CLS": sums["L_CLS"] / nb, "L_d": sums["L_d"] / nb,
                "L_a": sums["L_a"] / nb, "L_SDA": sums["L_SDA"] / nb,
                "mu": mu_value, "L_total": sums["L_total"] / nb,
            })
    return records


def evaluate(det, hcfg, hparams, dataset, batch=32):
    """Scores/labels of the main head over a dataset (identity cover pairing)."""
    n = dataset.secrets.shape[0]
    scores = []
    for lo in range(0, n, batch):
        hi = min(lo + batch, n)
        secret_batch = hider_mod.ImageBatch(
            data=Tensor(dataset.secrets[lo:hi]), role=hider_mod.ROLE_SECRET)
        cover_batch = hider_mod.ImageBatch(
            data=Tensor(dataset.covers[lo:hi]), role=hider_mod.ROLE_COVER)
        stego = hider_mod.hide(secret_batch, cover_batch, hcfg, hparams)
        fs, _ = det_mod.lift(stego, det)
        y = det_mod.classify_batch(fs, det.slot("head_m.w"), det.slot("head_m.b"))
        scores.extend(float(v) for v in y.data.reshape(-1))
    return np.asarray(scores), dataset.labels.copy()


def evaluation_record(det, hcfg, hparams, dataset, batch=32):
    """{auc, acc, ap, eer, n_real, n_fake} over a held-out dataset."""
    scores, labels = evaluate(det, hcfg, hparams, dataset, batch=batch)
    n_fake = int(labels.sum())
    record = metrics.binary_metrics(scores, labels)
    record["n_real"] = len(labels) - n_fake
    record["n_fake"] = n_fake
    return record


# ---------------------------------------------------------------------------
# checkpoint format


def checkpoint_blob(det, hparams):
    """All parameter tensors by name (split weights as two entries)."""
    out = {}
    for name, slot in det.all_slots().items():
        if isinstance(slot, lowrank.SplitWeight):
            out[name + ".w_r"] = slot.w_r.data
            out[name + ".delta"] = slot.delta.data
        else:
            out[name] = slot.data
    for name, t in hparams.slots().items():
        out[name] = t.data
    return out


def write_checkpoint(path, blob):
    """Binary dump: magic, version, then sorted little-endian tensor records."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", CHECKPOINT_VERSION))
        for name in sorted(blob):
            arr = np.ascontiguousarray(blob[name], dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<Q", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<Q", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(arr.tobytes())


def read_checkpoint(path):
    """Inverse of :func:`write_checkpoint`; bit-exact round-trip."""
    blob = {}
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ContractError("not a checkpoint file: bad magic %r" % magic)
        (version,) = struct.unpack("<Q", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ContractError("unsupported checkpoint version %d" % version)
        while True:
            head = fh.read(8)
            if not head:
                break
            (name_len,) = struct.unpack("<Q", head)
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<Q", fh.read(8))
            shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(rank))
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(count * 8), dtype="<f8").reshape(shape)
            blob[name] = data.copy()
    return blob


def load_checkpoint_into(det, hparams, blob):
    """Restore parameters (reconstituting low-rank splits) from a blob."""
    hider_names = set(hparams.slots())
    grouped = {}
    for name, arr in blob.items():
        if name.endswith(".w_r") or name.endswith(".delta"):
            base, part = name.rsplit(".", 1)
            grouped.setdefault(base, {})[part] = arr
        elif name in hider_names:
            grouped[name] = arr
        else:
            grouped[name] = arr
    hider_updates = {}
    for name, entry in grouped.items():
        if isinstance(entry, dict):
            if set(entry) != {"w_r", "delta"}:
                raise ContractError("incomplete split weight %r in checkpoint" % name)
            w_r = entry["w_r"]
            sv = np.linalg.svd(w_r, compute_uv=False)
            tol = 1e-8 * (sv[0] if sv.size and sv[0] > 0 else 1.0)
            r = int((sv > tol).sum())
            det.set_slot(name, lowrank.SplitWeight(
                w_r=Tensor(w_r, grad_enabled=False),
                delta=Tensor(entry["delta"], grad_enabled=True),
                r=r, residual_rank=min(w_r.shape) - r))
        elif name in hider_names:
            hider_updates[name] = Tensor(entry, grad_enabled=True)
        else:
            det.set_slot(name, Tensor(entry, grad_enabled=True))
    if hider_updates:
        hparams.load_slots(hider_updates)


def format_log_record(record):
    """One metric-log line: stable key order, full-precision floats."""
    parts = []
    for key in LOG_FIELDS:
        value = record[key]
        parts.append('"%s": %s' % (key, repr(value) if isinstance(value, float)
                                   else str(value)))
    return "{" + ", ".join(parts) + "}"
