"""Training losses with analytic gradients.

Six components feed the weighted total:

* domain-energy loss: pull the true domain's energy down, push the others
  above a margin (hinge);
* label-energy loss: same contrastive structure over class energies;
* prototype loss: attract features to their class prototype, repel from the
  mean of the others;
* orthogonality loss: squared Frobenius norm of w_d^T w_l, with the
  closed-form gradients 2*w_l*w_l^T*w_d and 2*w_d*w_d^T*w_l;
* adversarial-consistency loss: KL between the clean predictive distribution
  (held fixed) and the distribution after a feature-space perturbation;
* discriminator loss: domain cross-entropy whose gradient is negated on its
  way into the encoder (gradient reversal).

Single-sample operations implement the exact scalar contracts; the batched
``losses_and_grads`` path reproduces their means and carries hand-written
reverse-mode gradients for every parameter tensor. ``grad_check`` is the
independent finite-difference oracle used to audit those gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import frob_norm_sq
from .model import (
    EncodeCache,
    MlpCache,
    ModelParams,
    discriminate_domain_batch,
    domain_energy_batch,
    encode_with_cache,
    label_energy_batch,
    proto_sq_dists,
    softmax,
)


@dataclass
class Margins:
    """Hinge margins of the three contrastive losses."""

    m_d: float = 1.0
    m_l1: float = 1.0
    m_l2: float = 1.0

    def __post_init__(self):
        if self.m_d < 0 or self.m_l1 < 0 or self.m_l2 < 0:
            raise ValueError("margins must be non-negative")


@dataclass
class LossBreakdown:
    """The scalar loss components and their weighted total."""

    l_dse: float = 0.0
    l_cl: float = 0.0
    l_proto: float = 0.0
    l_lse: float = 0.0
    l_ortho: float = 0.0
    l_reg: float = 0.0
    l_disc: float = 0.0
    l_total: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {k: float(getattr(self, k)) for k in
                ("l_dse", "l_cl", "l_proto", "l_lse", "l_ortho", "l_reg", "l_disc", "l_total")}


def loss_dse(e_d: np.ndarray, true_domain: int, m_d: float) -> float:
    """Contrastive domain-energy loss for one sample.

    true-domain energy plus hinge terms pushing every other domain's energy
    above the margin.
    """
    e_d = np.asarray(e_d, dtype=np.float64)
    n = e_d.shape[0]
    if not 0 <= true_domain < n:
        raise IndexError(f"true_domain {true_domain} out of range [0, {n})")
    others = np.delete(e_d, true_domain)
    return float(e_d[true_domain] + np.sum(np.maximum(0.0, m_d - others)))


def loss_cl(e_y: np.ndarray, true_label: int, m_l1: float) -> float:
    """Contrastive label-energy loss for one sample (same hinge structure)."""
    e_y = np.asarray(e_y, dtype=np.float64)
    n = e_y.shape[0]
    if not 0 <= true_label < n:
        raise IndexError(f"true_label {true_label} out of range [0, {n})")
    others = np.delete(e_y, true_label)
    return float(e_y[true_label] + np.sum(np.maximum(0.0, m_l1 - others)))


def loss_proto(f0: np.ndarray, prototypes: np.ndarray, true_label: int, m_l2: float,
               repulsion_clamp: float | None = None) -> float:
    """Prototype contrast for one sample: attract to own class, repel others.

    Squared distance to the true prototype minus the mean over other classes
    of (squared distance + margin). Unbounded below by construction; the
    optional ``repulsion_clamp`` caps each repelled squared distance at a
    fixed radius so that far-away classes stop rewarding further repulsion
    (off by default).
    """
    prototypes = np.asarray(prototypes, dtype=np.float64)
    n_c = prototypes.shape[0]
    if n_c < 2:
        raise ValueError("prototype loss undefined for single class")
    if not 0 <= true_label < n_c:
        raise IndexError(f"true_label {true_label} out of range [0, {n_c})")
    f0 = np.asarray(f0, dtype=np.float64)
    d2 = np.sum((prototypes - f0[None, :]) ** 2, axis=1)
    others = np.delete(d2, true_label)
    if repulsion_clamp is not None:
        others = np.minimum(others, repulsion_clamp)
    return float(d2[true_label] - np.mean(others + m_l2))


def loss_lse(f0: np.ndarray, e_y: np.ndarray, prototypes: np.ndarray,
             true_label: int, m_l1: float, m_l2: float) -> float:
    """Label-side loss: contrastive energy term plus prototype contrast."""
    return loss_cl(e_y, true_label, m_l1) + loss_proto(f0, prototypes, true_label, m_l2)


def loss_ortho(w_d: np.ndarray, w_l: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Squared Frobenius norm of w_d^T w_l and its gradients in both matrices."""
    w_d = np.asarray(w_d, dtype=np.float64)
    w_l = np.asarray(w_l, dtype=np.float64)
    if w_d.shape != w_l.shape:
        raise ValueError(f"shape mismatch: w_d {w_d.shape} vs w_l {w_l.shape}")
    cross = w_d.T @ w_l
    value = frob_norm_sq(cross)
    grad_wd = 2.0 * (w_l @ (w_l.T @ w_d))
    grad_wl = 2.0 * (w_d @ (w_d.T @ w_l))
    return value, grad_wd, grad_wl


def loss_reg(p_clean: np.ndarray, p_adv: np.ndarray) -> float:
    """KL(p_clean || p_adv) with the 0*log(0/.) = 0 convention.

    The clean distribution is a fixed reference: no gradient ever flows
    through it, only through the perturbed branch.
    """
    p = np.asarray(p_clean, dtype=np.float64)
    q = np.asarray(p_adv, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("distributions must have the same length")
    for name, v in (("p_clean", p), ("p_adv", q)):
        if np.any(v < 0):
            raise ValueError(f"{name} has negative entries")
        if abs(v.sum() - 1.0) > 1e-9:
            raise ValueError(f"{name} is not normalized (sum={v.sum()!r})")
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def loss_disc(logits: np.ndarray, true_domain: int) -> float:
    """Softmax cross-entropy of the domain discriminator for one sample."""
    logits = np.asarray(logits, dtype=np.float64)
    n = logits.shape[0]
    if not 0 <= true_domain < n:
        raise IndexError(f"true_domain {true_domain} out of range [0, {n})")
    shifted = logits - logits.max()
    return float(np.log(np.sum(np.exp(shifted))) - shifted[true_domain])


def loss_total(l_dse: float, l_cl: float, l_proto: float, l_ortho: float,
               l_reg: float, l_disc: float,
               lam1: float, lam2: float, lam_adv: float) -> LossBreakdown:
    """Assemble the weighted total from the individual components."""
    if lam1 < 0 or lam2 < 0 or lam_adv < 0:
        raise ValueError("loss weights must be non-negative")
    l_lse = l_cl + l_proto
    total = lam1 * l_dse + lam2 * l_lse + l_ortho + l_reg + lam_adv * l_disc
    return LossBreakdown(l_dse=l_dse, l_cl=l_cl, l_proto=l_proto, l_lse=l_lse,
                         l_ortho=l_ortho, l_reg=l_reg, l_disc=l_disc, l_total=total)


# ---------------------------------------------------------------------------
# Batched forward/backward machinery
# ---------------------------------------------------------------------------

@dataclass
class BatchForward:
    """Everything the clean forward pass produces for one batch."""

    f0: np.ndarray
    enc_cache: EncodeCache
    e_d: np.ndarray
    dom_cache: MlpCache
    e_y: np.ndarray
    lab_cache: MlpCache
    dist2: np.ndarray
    c_y: np.ndarray
    probs: np.ndarray


def batch_forward(params: ModelParams, x: np.ndarray) -> BatchForward:
    f0, enc_cache = encode_with_cache(params, x)
    e_d, dom_cache = domain_energy_batch(params, f0)
    e_y, lab_cache = label_energy_batch(params, f0)
    dist2 = proto_sq_dists(params, f0)
    c_y = e_y + dist2
    probs = softmax(-c_y, axis=1)
    return BatchForward(f0, enc_cache, e_d, dom_cache, e_y, lab_cache, dist2, c_y, probs)


def _mlp3_backward(cache: MlpCache, w1, w2, w3, d_out):
    """Backward through the two-hidden-layer MLP; returns (d_input, grads)."""
    dh2 = d_out @ w3.T
    dw3 = cache.h2.T @ d_out
    db3 = d_out.sum(axis=0)
    dp2 = dh2 * (cache.p2 > 0)
    dw2 = cache.h1.T @ dp2
    db2 = dp2.sum(axis=0)
    dh1 = dp2 @ w2.T
    dp1 = dh1 * (cache.p1 > 0)
    dw1 = cache.z.T @ dp1
    db1 = dp1.sum(axis=0)
    dz = dp1 @ w1.T
    return dz, (dw1, db1, dw2, db2, dw3, db3)


def _conv1d_same_backward(x, w, dz):
    """Gradients of the stride-1 same-padded conv: returns (dw, db, dx)."""
    B, Cin, T = x.shape
    Cout, _, K = w.shape
    pad = (K - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    dw = np.empty_like(w)
    for k in range(K):
        dw[:, :, k] = np.einsum("bot,bit->oi", dz, xp[:, :, k:k + T])
    db = dz.sum(axis=(0, 2))
    dxp = np.zeros_like(xp)
    for k in range(K):
        dxp[:, :, k:k + T] += np.einsum("bot,oi->bit", dz, w[:, :, k])
    return dw, db, dxp[:, :, pad:pad + T]


def _encoder_backward(params: ModelParams, cache: EncodeCache,
                      d_f0: np.ndarray, grads: dict[str, np.ndarray]) -> None:
    """Accumulate encoder gradients given d(loss)/d(f0)."""
    grads["enc_w"] += cache.pooled.T @ d_f0
    grads["enc_b"] += d_f0.sum(axis=0)
    dpooled = d_f0 @ params["enc_w"].T
    a_last = cache.activations[-1]
    T = a_last.shape[2]
    da = np.broadcast_to(dpooled[:, :, None] / T, a_last.shape).copy()
    for l in range(params.arch.n_conv_layers - 1, -1, -1):
        dz = da * (cache.preacts[l] > 0)
        dw, db, da = _conv1d_same_backward(cache.activations[l], params[f"conv{l}_w"], dz)
        grads[f"conv{l}_w"] += dw
        grads[f"conv{l}_b"] += db


def _proto_dist_backward(f0, protos, ddist2):
    """Backward through squared prototype distances; returns (df0, dprotos)."""
    row_sums = ddist2.sum(axis=1, keepdims=True)       # [B, 1]
    col_sums = ddist2.sum(axis=0, keepdims=True).T     # [N_y, 1]
    df0 = 2.0 * (f0 * row_sums - ddist2 @ protos)
    dprotos = 2.0 * (protos * col_sums - ddist2.T @ f0)
    return df0, dprotos


def _hinge_energy_seeds(energies: np.ndarray, labels: np.ndarray, margin: float):
    """Mean loss value and d(mean loss)/d(energies) for the contrastive form."""
    n, k = energies.shape
    idx = np.arange(n)
    true_e = energies[idx, labels]
    hinge = np.maximum(0.0, margin - energies)
    hinge[idx, labels] = 0.0
    value = float(np.mean(true_e + hinge.sum(axis=1)))
    seeds = np.where(hinge > 0, -1.0, 0.0)
    seeds[idx, labels] = 1.0
    return value, seeds / n


def _proto_loss_seeds(dist2: np.ndarray, labels: np.ndarray,
                      repulsion_clamp: float | None = None):
    """Mean prototype-contrast value and d(mean)/d(dist2) seed matrix."""
    n, n_c = dist2.shape
    if n_c < 2:
        raise ValueError("prototype loss undefined for single class")
    idx = np.arange(n)
    own = dist2[idx, labels]
    if repulsion_clamp is None:
        eff = dist2
        seeds = np.full_like(dist2, -1.0 / (n_c - 1))
    else:
        clamped = dist2 > repulsion_clamp
        eff = np.where(clamped, repulsion_clamp, dist2)
        seeds = np.where(clamped, 0.0, -1.0 / (n_c - 1))
    total_others = eff.sum(axis=1) - eff[idx, labels]
    value = float(np.mean(own - (total_others / (n_c - 1))))
    seeds[idx, labels] = 1.0
    return value, seeds / n


def kl_grad_wrt_offset(params: ModelParams, f0: np.ndarray, p_ref: np.ndarray,
                       offset: np.ndarray) -> np.ndarray:
    """Per-sample gradient of KL(p_ref || predict(f0 + r)) with respect to r.

    Evaluated at r = offset; p_ref is a constant. Used by the perturbation
    power iteration.
    """
    f0a = f0 + offset
    e_y, cache = label_energy_batch(params, f0a)
    q = softmax(-(e_y + proto_sq_dists(params, f0a)), axis=1)
    d_c = p_ref - q                                    # d KL / d C_adv, per sample
    dzl, _ = _mlp3_backward(cache, params["lab_w1"], params["lab_w2"], params["lab_w3"], d_c)
    dfa = dzl @ params["w_l"].T
    dfa += 2.0 * (f0a * d_c.sum(axis=1, keepdims=True) - d_c @ params["protos"])
    return dfa


_DOM_NAMES = ("dom_w1", "dom_b1", "dom_w2", "dom_b2", "dom_w3", "dom_b3")
_LAB_NAMES = ("lab_w1", "lab_b1", "lab_w2", "lab_b2", "lab_w3", "lab_b3")


def _domain_branch_backward(params, fwd: BatchForward, d_e_d, grads) -> np.ndarray:
    """Accumulate domain-branch grads for seed d(loss)/d(E_d); returns df0."""
    dzd, mg = _mlp3_backward(fwd.dom_cache, params["dom_w1"], params["dom_w2"],
                             params["dom_w3"], d_e_d)
    for name, g in zip(_DOM_NAMES, mg):
        grads[name] += g
    grads["w_d"] += fwd.f0.T @ dzd
    return dzd @ params["w_d"].T


def _label_branch_backward(params, f0_in, cache, d_e_y, grads) -> np.ndarray:
    """Accumulate label-branch grads for seed d(loss)/d(E_y); returns df0.

    f0_in is the branch input (f0, or f0 + r for the perturbed pass)."""
    dzl, mg = _mlp3_backward(cache, params["lab_w1"], params["lab_w2"],
                             params["lab_w3"], d_e_y)
    for name, g in zip(_LAB_NAMES, mg):
        grads[name] += g
    grads["w_l"] += f0_in.T @ dzl
    return dzl @ params["w_l"].T


def _adv_kl_forward(params, f0, r_adv, p_ref):
    """Perturbed label pass and the log-space KL pieces."""
    f0a = f0 + r_adv
    e_y_adv, adv_cache = label_energy_batch(params, f0a)
    dist2_adv = proto_sq_dists(params, f0a)
    c_adv = e_y_adv + dist2_adv
    neg = -c_adv
    shifted = neg - neg.max(axis=1, keepdims=True)
    log_q = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    q = np.exp(log_q)
    safe_p = np.where(p_ref > 0, p_ref, 1.0)
    kl = float(np.sum(np.where(p_ref > 0, p_ref * (np.log(safe_p) - log_q), 0.0)))
    return f0a, e_y_adv, adv_cache, dist2_adv, c_adv, q, kl


def _disc_forward(params, f0, d):
    logits, g1 = discriminate_domain_batch(params, f0)
    n = f0.shape[0]
    sm = softmax(logits, axis=1)
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    value = float(np.mean(lse - shifted[np.arange(n), d]))
    return logits, g1, sm, value


def component_loss_and_grads(params: ModelParams, x, y, d, component: str, *,
                             margins: Margins, r_adv=None, p_clean=None,
                             repulsion_clamp: float | None = None):
    """Value and full parameter gradient of one loss component on a batch.

    Components: dse, cl, proto, lse, ortho, reg, disc. The discriminator
    gradient is the plain gradient of its scalar value (no reversal). reg
    needs r_adv; p_clean defaults to the clean predictive distribution and is
    always a constant.
    """
    y = np.asarray(y, dtype=np.int64)
    d = np.asarray(d, dtype=np.int64)
    grads = params.zeros_like()
    if component == "ortho":
        value, gwd, gwl = loss_ortho(params["w_d"], params["w_l"])
        grads["w_d"] += gwd
        grads["w_l"] += gwl
        return value, grads
    fwd = batch_forward(params, x)
    n = fwd.f0.shape[0]
    df0 = np.zeros_like(fwd.f0)
    if component == "dse":
        value, seeds = _hinge_energy_seeds(fwd.e_d, d, margins.m_d)
        df0 += _domain_branch_backward(params, fwd, seeds, grads)
    elif component in ("cl", "lse"):
        value, seeds = _hinge_energy_seeds(fwd.e_y, y, margins.m_l1)
        df0 += _label_branch_backward(params, fwd.f0, fwd.lab_cache, seeds, grads)
        if component == "lse":
            raw, pseeds = _proto_loss_seeds(fwd.dist2, y, repulsion_clamp)
            value += raw - margins.m_l2
            pf0, pprotos = _proto_dist_backward(fwd.f0, params["protos"], pseeds)
            df0 += pf0
            grads["protos"] += pprotos
    elif component == "proto":
        raw, pseeds = _proto_loss_seeds(fwd.dist2, y, repulsion_clamp)
        value = raw - margins.m_l2
        pf0, pprotos = _proto_dist_backward(fwd.f0, params["protos"], pseeds)
        df0 += pf0
        grads["protos"] += pprotos
    elif component == "reg":
        if r_adv is None:
            raise ValueError("reg component requires r_adv")
        p_ref = fwd.probs if p_clean is None else np.asarray(p_clean, dtype=np.float64)
        f0a, _, adv_cache, _, _, q, kl = _adv_kl_forward(params, fwd.f0, r_adv, p_ref)
        value = kl / n
        d_c = (p_ref - q) / n
        df0 += _label_branch_backward(params, f0a, adv_cache, d_c, grads)
        pf0a, pprotos = _proto_dist_backward(f0a, params["protos"], d_c)
        df0 += pf0a
        grads["protos"] += pprotos
    elif component == "disc":
        logits, g1, sm, value = _disc_forward(params, fwd.f0, d)
        dlogits = sm.copy()
        dlogits[np.arange(n), d] -= 1.0
        dlogits /= n
        grads["disc_w2"] += g1.T @ dlogits
        grads["disc_b2"] += dlogits.sum(axis=0)
        dg1 = dlogits @ params["disc_w2"].T
        dp1 = dg1 * (g1 > 0)
        grads["disc_w1"] += fwd.f0.T @ dp1
        grads["disc_b1"] += dp1.sum(axis=0)
        df0 += dp1 @ params["disc_w1"].T
    else:
        raise ValueError(f"unknown loss component {component!r}")
    _encoder_backward(params, fwd.enc_cache, df0, grads)
    return value, grads


@dataclass
class LossAux:
    """Secondary outputs of losses_and_grads, for logging and tests."""

    forward: BatchForward
    adv_forward: BatchForward | None = None  # only f0/e_y/dist2/c_y/probs fields used
    p_clean: np.ndarray | None = None
    disc_logits: np.ndarray | None = None


def losses_and_grads(
    params: ModelParams,
    x: np.ndarray,
    y: np.ndarray,
    d: np.ndarray,
    *,
    lam1: float,
    lam2: float,
    lam_adv: float,
    margins: Margins,
    enable_dse: bool = True,
    enable_lse: bool = True,
    enable_ortho: bool = True,
    enable_ag: bool = True,
    r_adv: np.ndarray | None = None,
    p_clean: np.ndarray | None = None,
    reverse_disc: bool = True,
    repulsion_clamp: float | None = None,
) -> tuple[LossBreakdown, dict[str, np.ndarray], LossAux]:
    """Batch loss values plus analytic gradients in every parameter tensor.

    Disabled components contribute zero value and zero gradient. The
    adversarial branch needs ``r_adv`` (one offset row per sample, treated as
    a constant); ``p_clean`` defaults to the clean predictive distribution of
    the current parameters and is always treated as a constant.
    ``reverse_disc=False`` skips the gradient reversal so that the returned
    gradient is the plain gradient of the scalar total (the form a
    finite-difference audit checks); training uses ``reverse_disc=True``.
    """
    if lam1 < 0 or lam2 < 0 or lam_adv < 0:
        raise ValueError("loss weights must be non-negative")
    y = np.asarray(y, dtype=np.int64)
    d = np.asarray(d, dtype=np.int64)
    fwd = batch_forward(params, x)
    n = fwd.f0.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    grads = params.zeros_like()
    df0 = np.zeros_like(fwd.f0)
    aux = LossAux(forward=fwd)

    l_dse = 0.0
    if enable_dse:
        l_dse, seeds = _hinge_energy_seeds(fwd.e_d, d, margins.m_d)
        df0 += _domain_branch_backward(params, fwd, lam1 * seeds, grads)

    l_cl = 0.0
    l_proto = 0.0
    if enable_lse:
        l_cl, cl_seeds = _hinge_energy_seeds(fwd.e_y, y, margins.m_l1)
        df0 += _label_branch_backward(params, fwd.f0, fwd.lab_cache, lam2 * cl_seeds, grads)
        raw_proto, proto_seeds = _proto_loss_seeds(fwd.dist2, y, repulsion_clamp)
        l_proto = raw_proto - margins.m_l2  # margin enters only as a constant shift
        pf0, pprotos = _proto_dist_backward(fwd.f0, params["protos"], lam2 * proto_seeds)
        df0 += pf0
        grads["protos"] += pprotos

    l_ortho = 0.0
    if enable_ortho:
        l_ortho, gwd, gwl = loss_ortho(params["w_d"], params["w_l"])
        grads["w_d"] += gwd
        grads["w_l"] += gwl

    l_reg = 0.0
    l_disc = 0.0
    if enable_ag:
        if r_adv is None:
            raise ValueError("enable_ag requires r_adv")
        p_ref = fwd.probs if p_clean is None else np.asarray(p_clean, dtype=np.float64)
        aux.p_clean = p_ref
        f0a, e_y_adv, adv_cache, dist2_adv, c_adv, q, kl = _adv_kl_forward(
            params, fwd.f0, r_adv, p_ref)
        aux.adv_forward = BatchForward(f0a, fwd.enc_cache, fwd.e_d, fwd.dom_cache,
                                       e_y_adv, adv_cache, dist2_adv, c_adv, q)
        l_reg = kl / n
        d_c_adv = (p_ref - q) / n
        # r_adv is a constant, so d f0a / d f0 = identity
        df0 += _label_branch_backward(params, f0a, adv_cache, d_c_adv, grads)
        pf0a, pprotos_a = _proto_dist_backward(f0a, params["protos"], d_c_adv)
        df0 += pf0a
        grads["protos"] += pprotos_a

        logits, g1, sm, l_disc = _disc_forward(params, fwd.f0, d)
        aux.disc_logits = logits
        dlogits = sm.copy()
        dlogits[np.arange(n), d] -= 1.0
        dlogits *= lam_adv / n
        grads["disc_w2"] += g1.T @ dlogits
        grads["disc_b2"] += dlogits.sum(axis=0)
        dg1 = dlogits @ params["disc_w2"].T
        dp1 = dg1 * (g1 > 0)
        grads["disc_w1"] += fwd.f0.T @ dp1
        grads["disc_b1"] += dp1.sum(axis=0)
        df0_disc = dp1 @ params["disc_w1"].T
        df0 += -df0_disc if reverse_disc else df0_disc

    _encoder_backward(params, fwd.enc_cache, df0, grads)

    breakdown = loss_total(l_dse, l_cl, l_proto, l_ortho, l_reg, l_disc, lam1, lam2, lam_adv)
    if not np.isfinite(breakdown.l_total):
        bad = [k for k, v in breakdown.as_dict().items() if not np.isfinite(v)]
        raise FloatingPointError(f"non-finite loss component(s): {', '.join(bad)}")
    return breakdown, grads, aux


def grad_check(loss_and_grad_fn, x0: np.ndarray, eps: float) -> float:
    """Max relative disagreement between analytic and central-difference grads.

    ``loss_and_grad_fn(x) -> (value, grad)`` over a flat parameter vector; the
    finite-difference probe uses only the value. Relative error per coordinate
    is |a - n| / max(|a|, |n|, 1e-8); the max over coordinates is returned.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    x0 = np.asarray(x0, dtype=np.float64)
    value, analytic = loss_and_grad_fn(x0)
    if not np.isfinite(value):
        raise FloatingPointError("loss is non-finite at the base point")
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.empty_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xp[i] += eps
        xm = x0.copy()
        xm[i] -= eps
        fp, _ = loss_and_grad_fn(xp)
        fm, _ = loss_and_grad_fn(xm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite loss at probe coordinate {i}")
        numeric[i] = (fp - fm) / (2.0 * eps)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
