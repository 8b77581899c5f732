"""Central-finite-difference verification of every differentiable operation.

Each registered check builds a small random setup and a scalar loss
function of explicit parameter tensors; the runner compares reverse-mode
gradients against central differences on sampled coordinates and reports
the worst relative error per operation.
"""

import time
import zlib

import numpy as np

from . import align as align_mod
from . import detector as det_mod
from . import hider as hider_mod
from . import lfad, sfda, trainer
from .sfda import AttentionMap
from .tensor import Tensor, gradient_of, tsum

DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-4
SAMPLES_PER_TENSOR = 6

CHECKS = {}


def register(name):
    def wrap(builder):
        CHECKS[name] = builder
        return builder

    return wrap


def _probe(rng, shape):
    return Tensor(rng.standard_normal(shape))


def _param(rng, shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, grad_enabled=True)


def _perturbed(params, i, idx, delta):
    out = list(params)
    arr = params[i].data.copy()
    arr.reshape(-1)[idx] += delta
    out[i] = Tensor(arr, grad_enabled=True)
    return out


def max_rel_error(loss_fn, params, rng, samples=SAMPLES_PER_TENSOR,
                  step=DEFAULT_STEP, corrupt=False):
    """Worst relative error between taped and central-difference gradients."""
    loss = loss_fn(*params)
    grads = gradient_of(loss, params)
    worst = 0.0
    for i, p in enumerate(params):
        n = p.size
        picks = range(n) if n <= samples else sorted(
            rng.choice(n, size=samples, replace=False))
        for idx in picks:
            up = loss_fn(*_perturbed(params, i, idx, step)).item()
            down = loss_fn(*_perturbed(params, i, idx, -step)).item()
            numeric = (up - down) / (2.0 * step)
            analytic = float(grads[i].data.reshape(-1)[idx])
            if corrupt:
                analytic += 1e-2
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# checks, one per differentiable operation


@register("conv")
def _build_conv(rng):
    probe = _probe(rng, (2, 3, 5, 6))
    x = _param(rng, (2, 2, 5, 6))
    w = _param(rng, (3, 2, 3, 3), 0.4)

    def loss(xv, wv):
        from .tensor import conv2d_3x3

        return tsum(conv2d_3x3(xv, wv) * probe)

    return loss, [x, w]


@register("softmax")
def _build_softmax(rng):
    probe = _probe(rng, (4, 5))
    x = _param(rng, (4, 5))

    def loss(xv):
        from .tensor import softmax_rows

        return tsum(softmax_rows(xv) * probe)

    return loss, [x]


@register("rms_norm")
def _build_rms(rng):
    probe = _probe(rng, (3, 7))
    x = _param(rng, (3, 7))
    gain = _param(rng, (7,), 0.5)

    def loss(xv, gv):
        from .tensor import rms_normalize

        return tsum(rms_normalize(xv, gain=gv) * probe)

    return loss, [x, gain]


@register("matmul")
def _build_matmul(rng):
    probe = _probe(rng, (3, 4))
    a = _param(rng, (3, 5))
    b = _param(rng, (5, 4))

    def loss(av, bv):
        from .tensor import matmul

        return tsum(matmul(av, bv) * probe)

    return loss, [a, b]


@register("lfad_apply")
def _build_lfad(rng):
    probe = _probe(rng, (1, 3, 4, 4))
    feats = _param(rng, (1, 3, 4, 4))
    conv_w = _param(rng, (9, 3, 3, 3), 0.3)

    def loss(fv, wv):
        bank = lfad.predict_lowpass_filters(fv, wv)
        return tsum(lfad.apply_filters(fv, bank) * probe)

    return loss, [feats, conv_w]


def _tiny_attn(rng, wfda_enabled):
    return sfda.init_diff_attn(rng, channels=4, heads=2, head_dim=3,
                               wfda_enabled=wfda_enabled)


def _attn_param_list(p, names=None):
    names = names or sorted(p.slots)
    return names, [p.slots[n] for n in names]


def _with_slots(p, names, values):
    clone = sfda.DiffAttnParams(
        heads=p.heads, head_dim=p.head_dim, channels=p.channels,
        lambda_init=p.lambda_init, lambda_d=p.lambda_d,
        wfda_enabled=p.wfda_enabled, slots=dict(p.slots))
    for n, v in zip(names, values):
        clone.slots[n] = v
    return clone


@register("wfda")
def _build_wfda(rng):
    p = _tiny_attn(rng, wfda_enabled=True)
    x_map = _param(rng, (4, 4, 4))
    names = [n for n in sorted(p.slots) if ".wh" in n or ".wl" in n]
    names = [n for n in names if any(b in n for b in ("hh", "hl", "lh", "ll"))]
    tensors = [p.slots[n] for n in names]
    probe = _probe(rng, (16, 16))

    def loss(xv, *slot_values):
        maps = sfda.wfda(xv, _with_slots(p, names, slot_values))
        total = None
        for m in maps:
            term = tsum(m * probe)
            total = term if total is None else total + term
        return total

    return loss, [x_map] + tensors


@register("diff_attention")
def _build_diff_attention(rng):
    p = _tiny_attn(rng, wfda_enabled=True)
    x = _param(rng, (16, 4))
    xl = _param(rng, (16, 4))
    x_map = _probe(rng, (4, 4, 4))
    names, tensors = _attn_param_list(p)
    probe = _probe(rng, (16, 16))

    def loss(xv, xlv, *slot_values):
        attn = sfda.diff_attention(xv, xlv, x_map, _with_slots(p, names, slot_values))
        total = None
        for m in attn.maps:
            term = tsum(m * probe)
            total = term if total is None else total + term
        return total

    return loss, [x, xl] + tensors


@register("multi_head_block")
def _build_block(rng):
    p = _tiny_attn(rng, wfda_enabled=True)
    x = _param(rng, (16, 4))
    xl = _param(rng, (16, 4))
    x_map = _probe(rng, (4, 4, 4))
    names, tensors = _attn_param_list(p)
    probe = _probe(rng, (16, 4))

    def loss(xv, xlv, *slot_values):
        f, _ = sfda.sfda_block(xv, xlv, x_map, _with_slots(p, names, slot_values))
        return tsum(f * probe)

    return loss, [x, xl] + tensors


@register("coral")
def _build_coral(rng):
    a = _param(rng, (6, 3))
    b = _param(rng, (6, 3))

    def loss(av, bv):
        return align_mod.coral_distance(av, bv)

    return loss, [a, b]


@register("mmd")
def _build_mmd(rng):
    a = _param(rng, (5, 3))
    b = _param(rng, (5, 3))

    def loss(av, bv):
        return align_mod.mmd_distance(av, bv)

    return loss, [a, b]


@register("sda_distance")
def _build_sda_distance(rng):
    cfg = align_mod.AlignmentConfig()
    a = _param(rng, (6, 3), 0.5)
    b = _param(rng, (6, 3), 0.5)

    def loss(av, bv):
        return align_mod.sda_distance(av, bv, cfg)

    return loss, [a, b]


@register("attention_alignment")
def _build_attention_alignment(rng):
    cfg = align_mod.preset("aa_sda")
    m1 = _param(rng, (6, 6), 0.5)
    m2 = _param(rng, (6, 6), 0.5)
    m3 = _param(rng, (6, 6), 0.5)
    m4 = _param(rng, (6, 6), 0.5)

    def loss(a1, a2, b1, b2):
        stego = AttentionMap(maps=[a1, a2], maps_plain=[a1, a2])
        secret = AttentionMap(maps=[b1, b2], maps_plain=[b1, b2])
        return align_mod.attention_alignment_loss(stego, secret, cfg)

    return loss, [m1, m2, m3, m4]


@register("cls_loss")
def _build_cls_loss(rng):
    labels = np.array([0, 1, 1, 0])
    logits = _param(rng, (4, 1))
    logits_p = _param(rng, (4, 1))

    def loss(lv, lpv):
        from .tensor import sigmoid

        return det_mod.cls_loss(sigmoid(lv), sigmoid(lpv), labels)

    return loss, [logits, logits_p]


@register("hider")
def _build_hider(rng):
    cfg = hider_mod.HiderConfig(alpha=0.05)
    secret = Tensor(rng.uniform(0.35, 0.65, (1, 1, 8, 8)), grad_enabled=True)
    cover = Tensor(rng.uniform(0.35, 0.65, (1, 1, 8, 8)), grad_enabled=True)
    alpha = Tensor(0.05, grad_enabled=True)
    gains = {b: Tensor(1.0, grad_enabled=True) for b in cfg.bands}
    gain_list = [gains[b] for b in cfg.bands]
    probe = _probe(rng, (1, 1, 8, 8))

    def loss(sv, cv, av, *gv):
        params = hider_mod.HiderParams(
            alpha=av, gains=dict(zip(cfg.bands, gv)))
        stego = hider_mod.hide(
            hider_mod.ImageBatch(data=sv, role=hider_mod.ROLE_SECRET),
            hider_mod.ImageBatch(data=cv, role=hider_mod.ROLE_COVER),
            cfg, params)
        return tsum(stego.data * probe)

    return loss, [secret, cover, alpha] + gain_list


@register("composed_loss")
def _build_composed(rng):
    cfg = det_mod.DetectorConfig(image_channels=1, image_size=8, width=4,
                                 heads=2, head_dim=2)
    det = det_mod.init_detector(rng, cfg)
    hcfg = hider_mod.HiderConfig(alpha=0.08)
    hparams = hider_mod.HiderParams.from_config(hcfg)
    acfg = align_mod.preset("fa_l2+aa_sda")
    secrets = Tensor(rng.uniform(0.3, 0.7, (2, 1, 8, 8)))
    covers = Tensor(rng.uniform(0.3, 0.7, (2, 1, 8, 8)))
    labels = np.array([0, 1])

    # a representative slice of every parameter family
    names = ["enc.w1", "lfad.w", "head_m.w", "sfda.h0.wq", "sfda.h0.whhq",
             "sfda.lam_q1", "sfda.ffn.w1", "sfda.w_o", "da.h0.wlk"]
    slots = det.all_slots()
    tensors = [slots[n] for n in names]
    hider_tensors = [hparams.alpha] + [hparams.gains[b] for b in hcfg.bands]

    def loss(*values):
        for n, v in zip(names, values[: len(names)]):
            det.set_slot(n, v)
        hv = values[len(names):]
        params = hider_mod.HiderParams(
            alpha=hv[0], gains=dict(zip(hcfg.bands, hv[1:])))
        losses = trainer.compute_stage_losses(
            3, secrets, covers, labels, det, hcfg, params, acfg, mu_value=0.5)
        return losses["L_total"]

    return loss, tensors + hider_tensors


def run_all(seed=0, corrupt=None, tol=DEFAULT_TOL):
    """Run every registered check; returns (name, max_rel_err, elapsed) rows."""
    rows = []
    for name in sorted(CHECKS):
        rng = np.random.default_rng(seed + zlib.crc32(name.encode()) % 1000)
        loss_fn, params = CHECKS[name](rng)
        start = time.perf_counter()
        err = max_rel_error(loss_fn, params, rng, corrupt=(corrupt == name))
        rows.append((name, err, time.perf_counter() - start))
    return rows


def report_lines(rows, tol=DEFAULT_TOL):
    lines = []
    for name, err, elapsed in rows:
        status = "ok" if err <= tol else "FAIL"
        lines.append("%-22s max_rel_err=%.3e  [%s]  (%.2fs)"
                     % (name, err, status, elapsed))
    return lines
