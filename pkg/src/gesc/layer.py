"""One message-passing layer over complex node states.

Per arc j->i and head m, with h = current node states and one learned phase
theta per undirected edge (the reverse arc uses the negated phase, so the
two transport factors are complex conjugates):

    transported   ht = e^{i * orient * theta} W h_j
    cancellation  r  = ht - eta * P_eps(h_i) ht          (rank-1 Tikhonov)
    pre score     s  = <Q h_i, r>
    alignment     rho = Re(s) / (||Q h_i|| ||r|| + eps_n)
    sign gate     xi  = sigmoid(c * rho + d)
    residual gate g   = sigmoid(a . [log1p||xi r||, log1p||ht||, log1p|s|] + b)
    message       mh  = g * (xi * r) + (1 - g) * ht
    post score    st  = <Q h_i, mh>
    logit         hybrid:      gamma * (lam |st|/sqrt(d) + (1-lam) Re(st)/nu~)
                  phase_aided: gamma * (|st| + kappa cos(angle st)) / sqrt(d)
                  phase_norm:  gamma * cos(angle st) * min(1, |st|/delta)
    weights       alpha = softmax of logits over i's surviving in-arcs

then h_i <- modReLU(NodeNorm(h_i + sum_m sum_j alpha * mh)).  All scalar
quantities above depend only on inner products and norms, so they are
invariant under per-node phase changes; the vector quantities co-rotate,
which is the layer's equivariance property.

Everything here runs on trailing-2 complex arrays and works identically on
tape ``Var`` objects (training) or bare ndarrays (inference/verification).
``layer_forward(..., collect=True)`` additionally returns every per-arc
intermediate for the verification module.

The ``additive`` mode strips the mechanism down to plain attention over
transported features: eta = 0, xi = 1, g = 0, theta pinned at zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .graphs import ArcSet

__all__ = [
    "LayerConfig",
    "NumericError",
    "init_layer_params",
    "head_matrix",
    "node_norm",
    "mod_relu",
    "complex_lift",
    "softmax_per_node",
    "layer_forward",
    "ATTENTION_MODES",
]

ATTENTION_MODES = ("hybrid", "phase_aided", "phase_norm")


class NumericError(RuntimeError):
    """Non-finite values appeared at a named stage of the forward pass."""


@dataclass(frozen=True)
class LayerConfig:
    """Layer hyperparameters shared by every layer of a model.

    ``epsilon`` regularizes the cancellation projector; ``norm_epsilon``
    guards the gate/attention normalizers, NodeNorm, and the modReLU
    denominator.  ``lambda_mix`` is a fixed scalar, not learned.
    """

    dim: int
    heads: int
    eta_sic: float = 0.5
    epsilon: float = 1e-4
    norm_epsilon: float = 1e-6
    lambda_mix: float = 0.5
    attention_mode: str = "hybrid"
    kappa: float = 0.5
    delta: float = 1.0
    param_mode: str = "full"       # full | diagonal
    mode: str = "full"             # full | additive
    sic_position: str = "pre"      # pre | post  (cancellation before scoring, or on mh)
    sic_rank: int = 1

    def __post_init__(self) -> None:
        if not (0.0 <= self.eta_sic <= 1.0):
            raise ValueError(f"eta_sic must be in [0,1], got {self.eta_sic}")
        if self.epsilon <= 0 or self.norm_epsilon <= 0:
            raise ValueError("epsilon and norm_epsilon must be > 0")
        if not (0.0 <= self.lambda_mix <= 1.0):
            raise ValueError(f"lambda_mix must be in [0,1], got {self.lambda_mix}")
        if self.attention_mode not in ATTENTION_MODES:
            raise ValueError(f"attention_mode must be one of {ATTENTION_MODES}")
        if self.kappa < 0 or self.delta <= 0:
            raise ValueError("kappa must be >= 0 and delta > 0")
        if self.param_mode not in ("full", "diagonal"):
            raise ValueError(f"param_mode must be full|diagonal, got {self.param_mode}")
        if self.mode not in ("full", "additive"):
            raise ValueError(f"mode must be full|additive, got {self.mode}")
        if self.sic_position not in ("pre", "post"):
            raise ValueError(f"sic_position must be pre|post, got {self.sic_position}")
        if not (1 <= self.sic_rank <= 4):
            raise ValueError("sic_rank must be in 1..4")


def init_layer_params(
    cfg: LayerConfig, num_edges: int, rng: np.random.Generator
) -> dict[str, np.ndarray]:
    """Fresh parameters for one layer, keyed without a layer prefix.

    Neutral start: zero transport phases, unit sign-gate slope, zero gate
    biases and log-temperatures, so the first forward pass behaves like a
    plain attention layer.  W/Q real and imaginary parts are scaled-uniform
    with variance 1/(2d) each, giving complex entries standard fan-in
    variance.  Diagonal mode draws magnitudes near 1 and small phases to
    break head symmetry while staying close to the identity map.
    """
    d, m = cfg.dim, cfg.heads
    out: dict[str, np.ndarray] = {"theta": np.zeros(num_edges), "act_bias": np.zeros(d)}
    bound = np.sqrt(3.0 / (2.0 * d))
    for h in range(m):
        p = f"heads.{h}."
        if cfg.param_mode == "full":
            out[p + "w"] = rng.uniform(-bound, bound, size=(d, d, 2))
            out[p + "q"] = rng.uniform(-bound, bound, size=(d, d, 2))
        else:
            out[p + "w_mag"] = rng.uniform(0.5, 1.5, size=d)
            out[p + "w_phase"] = rng.uniform(-0.5, 0.5, size=d)
            out[p + "q_mag"] = rng.uniform(0.5, 1.5, size=d)
            out[p + "q_phase"] = rng.uniform(-0.5, 0.5, size=d)
        out[p + "gate_scale"] = np.array(1.0)
        out[p + "gate_shift"] = np.array(0.0)
        out[p + "mix_w"] = np.zeros(3)
        out[p + "mix_b"] = np.array(0.0)
        out[p + "log_temp"] = np.array(0.0)
    return out


def head_matrix(lp: dict, head: int, which: str, dim: int) -> np.ndarray:
    """Materialize head ``which`` in {w, q} as a dense (d, d, 2) array.

    For the diagonal parameterization this builds diag(R * e^{i Phi}); it is
    a diagnostic path (spectral-norm checks, equivalence tests), not part of
    the forward pass.
    """
    p = f"heads.{head}."
    if p + which in lp:
        return np.asarray(ad.value_of(lp[p + which]))
    mag = ad.value_of(lp[p + which + "_mag"])
    phase = ad.value_of(lp[p + which + "_phase"])
    out = np.zeros((dim, dim, 2))
    out[np.arange(dim), np.arange(dim), 0] = mag * np.cos(phase)
    out[np.arange(dim), np.arange(dim), 1] = mag * np.sin(phase)
    return out


def _apply_head_transform(lp: dict, head: int, which: str, h, diag: bool):
    """P = W h (or Q h) for one head; O(N d^2) dense or O(N d) diagonal."""
    p = f"heads.{head}."
    if not diag:
        return ad.cmatmul(h, lp[p + which])
    rotated = ad.crotate(h, lp[p + which + "_phase"])
    mag = ad.reshape(lp[p + which + "_mag"], (-1, 1))
    return ad.mul(rotated, mag)


def _check_finite(x, stage: str) -> None:
    v = ad.value_of(x)
    if not np.all(np.isfinite(v)):
        raise NumericError(f"non-finite values produced at stage: {stage}")


def complex_lift(features, lift_w):
    """Real input features to complex states: h0 = X W_lift (X treated real)."""
    xr = ad.matmul(features, ad.creal(lift_w))
    xi = ad.matmul(features, ad.cimag(lift_w))
    return ad.cstack(xr, xi)


def node_norm(h, eps: float):
    """Center by the complex mean over dims, scale by deviation + eps.

    Phase-equivariant: rotating every entry of a node by one phase rotates
    the output identically (mean and deviation co-transform).
    """
    mu = ad.reduce_mean(h, axis=-2, keepdims=True)
    cent = ad.sub(h, mu)
    d = ad.value_of(h).shape[-2]
    sig = ad.sqrt(ad.scale(ad.csqnorm(cent), 1.0 / d))
    denom = ad.reshape(ad.add(sig, eps), ad.value_of(sig).shape + (1, 1))
    return ad.div(cent, denom)


def mod_relu(h, bias, eps: float):
    """max(|z| + b, 0) * z / |z| per entry, with phase preserved.

    The denominator is floored at ``eps`` only to keep the zero entry (whose
    output is exactly zero anyway) well defined.
    """
    mag = ad.cabs(h)
    num = ad.relu(ad.add(mag, bias))
    denom = ad.maximum_const(mag, eps)
    return ad.mul(ad.reshape(ad.div(num, denom), ad.value_of(mag).shape + (1,)), h)


def _sic_anchors(h, cfg: LayerConfig):
    """Orthogonalized cancellation directions per node, highest rank first.

    Rank 1 is the node state itself.  Higher ranks extend the anchor family
    with the elementwise conjugate and phase-ramped copies
    (e^{2 pi i k/d} per dim), Gram-Schmidt-orthogonalized with
    Tikhonov-damped coefficients; an approximate, documented construction
    used only by the rank ablation.
    """
    if cfg.sic_rank == 1:
        return [h]
    d = ad.value_of(h).shape[-2]
    ramp = 2.0 * np.pi * np.arange(d) / d
    candidates = [h, ad.conj(h), ad.crotate(h, ramp), ad.crotate(ad.conj(h), ramp)]
    if cfg.sic_rank > len(candidates):
        raise ValueError(f"sic_rank up to {len(candidates)} supported, got {cfg.sic_rank}")
    basis = []
    for cand in candidates[: cfg.sic_rank]:
        u = cand
        for b in basis:
            coef = _proj_coef(b, u, cfg.epsilon)
            u = ad.sub(u, ad.cmul(_cexpand(coef), b))
        basis.append(u)
    return basis


def _cexpand(s):
    """(..., 2) complex scalars -> (..., 1, 2) for row-wise complex scaling."""
    shape = ad.value_of(s).shape
    return ad.reshape(s, shape[:-1] + (1, 2))


def _proj_coef(anchor, x, eps: float):
    """<anchor, x> / (||anchor||^2 + eps) as a complex (..., 2) scalar."""
    s = ad.cinner(anchor, x)
    denom = ad.add(ad.csqnorm(anchor), eps)
    return ad.div(s, ad.reshape(denom, ad.value_of(denom).shape + (1,)))


def _sic_apply_arcs(anchors_at_dst: list, x, cfg: LayerConfig):
    """prod_t (I - eta P_eps(u_t)) x over the per-arc anchor family.

    Applied sequentially rather than as a summed projector: every factor is
    a contraction on its own, so the result never exceeds ||x|| even when
    the damped anchors retain a residual overlap.  For rank 1 the two forms
    coincide.
    """
    out = x
    for u in anchors_at_dst:
        coef = _proj_coef(u, out, cfg.epsilon)
        proj = ad.cmul(_cexpand(coef), u)
        out = ad.add_scaled(out, proj, -cfg.eta_sic)
    return out


def _norms(x):
    """Euclidean norms of the rows of a (..., d, 2) array."""
    return ad.sqrt(ad.csqnorm(x))


def softmax_per_node(logit, arcs: ArcSet):
    """Softmax over each destination's surviving in-arcs (max-shifted)."""
    lv = ad.value_of(logit)
    mx = ad.segment_max_values(lv, arcs.indptr, arcs.num_nodes)
    shifted = ad.sub(logit, mx[arcs.dst])
    e = ad.exp(shifted)
    denom = ad.segment_sum(e, arcs.dst, arcs.indptr, arcs.num_nodes)
    return ad.div(e, ad.gather(denom, arcs.dst))


def layer_forward(
    lp: dict,
    arcs: ArcSet,
    h,
    cfg: LayerConfig,
    collect: bool = False,
):
    """Run one layer; returns dict with "h_out" plus internals if collected.

    ``lp`` maps the names from ``init_layer_params`` to Vars or ndarrays;
    ``h`` is the (N, d, 2) node state.  Dropped edges are absent from
    ``arcs``; nodes with no surviving in-arcs take the residual path only.
    """
    n, d = arcs.num_nodes, cfg.dim
    diag = cfg.param_mode == "diagonal"
    additive = cfg.mode == "additive"
    eps_n = cfg.norm_epsilon
    out: dict = {"heads": [{} for _ in range(cfg.heads)]}

    agg = None
    if arcs.num_arcs > 0:
        if not additive and (cfg.eta_sic > 0.0):
            anchors = _sic_anchors(h, cfg)
            anchors_dst = [ad.gather(a, arcs.dst) for a in anchors]
        else:
            anchors_dst = None
        theta_arc = None
        if not additive:
            theta_arc = ad.mul(ad.gather(lp["theta"], arcs.edge), arcs.orient)

        for m in range(cfg.heads):
            p = _apply_head_transform(lp, m, "w", h, diag)
            qh = _apply_head_transform(lp, m, "q", h, diag)
            transported = ad.gather(p, arcs.src)
            if theta_arc is not None:
                transported = ad.crotate(transported, theta_arc)
            q_dst = ad.gather(qh, arcs.dst)
            nq = ad.gather(_norms(qh), arcs.dst)

            if additive:
                mhat = transported
                xi = np.ones(arcs.num_arcs)
                g = np.zeros(arcs.num_arcs)
                r = transported
                rho = s = None
            else:
                if anchors_dst is not None and cfg.sic_position == "pre":
                    r = _sic_apply_arcs(anchors_dst, transported, cfg)
                else:
                    r = transported
                s = ad.cinner(q_dst, r)
                abs_s = ad.cabs(s)
                nr = _norms(r)
                nu = ad.add(ad.mul(nq, nr), eps_n)
                rho = ad.div(ad.creal(s), nu)
                hp = f"heads.{m}."
                xi = ad.sigmoid(ad.add(ad.mul(rho, lp[hp + "gate_scale"]),
                                       lp[hp + "gate_shift"]))
                nh = _norms(transported)
                nrbar = ad.mul(xi, nr)  # ||xi r|| = xi ||r|| since xi >= 0
                a0 = ad.gather(lp[hp + "mix_w"], np.array([0]))
                a1 = ad.gather(lp[hp + "mix_w"], np.array([1]))
                a2 = ad.gather(lp[hp + "mix_w"], np.array([2]))
                gpre = ad.add(
                    ad.add(ad.mul(ad.log1p(nrbar), a0), ad.mul(ad.log1p(nh), a1)),
                    ad.add(ad.mul(ad.log1p(abs_s), a2), lp[hp + "mix_b"]),
                )
                g = ad.sigmoid(gpre)
                gxi = ad.reshape(ad.mul(g, xi), (-1, 1, 1))
                gneg = ad.reshape(ad.sub(1.0, g), (-1, 1, 1))
                mhat = ad.lincomb2(gxi, r, gneg, transported)
                if anchors_dst is not None and cfg.sic_position == "post":
                    mhat = _sic_apply_arcs(anchors_dst, mhat, cfg)
            _check_finite(mhat, f"head {m} message")

            st = ad.cinner(q_dst, mhat)
            abs_st = ad.cabs(st)
            gamma = ad.exp(lp[f"heads.{m}.log_temp"])
            if cfg.attention_mode == "hybrid":
                nm = _norms(mhat)
                nut = ad.add(ad.mul(nq, nm), eps_n)
                cos_t = ad.div(ad.creal(st), nut)
                logit = ad.mul(gamma, ad.add(
                    ad.scale(abs_st, cfg.lambda_mix / np.sqrt(d)),
                    ad.scale(cos_t, 1.0 - cfg.lambda_mix),
                ))
            else:
                cos_ang = ad.div(ad.creal(st), ad.maximum_const(abs_st, eps_n))
                if cfg.attention_mode == "phase_aided":
                    logit = ad.mul(gamma, ad.scale(
                        ad.add(abs_st, ad.scale(cos_ang, cfg.kappa)), 1.0 / np.sqrt(d)
                    ))
                else:  # phase_norm
                    clipped = ad.minimum_const(ad.scale(abs_st, 1.0 / cfg.delta), 1.0)
                    logit = ad.mul(gamma, ad.mul(cos_ang, clipped))
            alpha = softmax_per_node(logit, arcs)
            _check_finite(alpha, f"head {m} attention")

            contrib = ad.segment_weighted_sum(alpha, mhat, arcs.dst, arcs.indptr, n)
            agg = contrib if agg is None else ad.add(agg, contrib)

            if collect:
                out["heads"][m] = {
                    "transported": transported, "r": r, "s": s, "rho": rho,
                    "xi": xi, "g": g, "mhat": mhat, "s_post": st,
                    "logit": logit, "alpha": alpha,
                }

    pre_norm = h if agg is None else ad.add(h, agg)
    _check_finite(pre_norm, "residual update")
    normed = node_norm(pre_norm, eps_n)
    h_out = mod_relu(normed, lp["act_bias"], eps_n)
    _check_finite(h_out, "layer output")
    out["pre_norm"] = pre_norm
    out["h_out"] = h_out
    return out
