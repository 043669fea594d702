"""Executable checks for the properties the architecture is built around.

Each checker draws randomized instances, measures the claimed inequality or
identity directly, and returns a ``VerificationReport`` whose pass flag is
exactly ``max_deviation <= threshold``.  Nothing here mutates model
parameters, and every function is deterministic given its seed.

Checkers:

- ``gauge_fuzz``: per-node phase perturbations with compensating transport
  shifts leave scalars (gates, attention) bit-stable and rotate hidden
  states exactly; the ablation that skips the transport shift degrades.
- ``check_perhead_bound``: per-head aggregated messages never exceed the
  spectral norm of the transform times the largest neighbor state norm.
- ``check_self_component``: the component of each message parallel to the
  receiver shrinks by at least the gated cancellation factor.
- ``check_lipschitz``: empirical expansion ratios of the frozen-gate linear
  path stay below the analytic bound, globally and directionally.
- ``spectral_notch_probe``: band energies of hidden states over the
  eigenmodes of the symmetric normalized Laplacian, with and without
  cancellation.
- ``depth_sweep`` / ``sic_ablation_grid``: trained-accuracy tables for
  depth and cancellation-strength ablations.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace as dc_replace

import numpy as np

from .graphs import Dataset, Graph, make_rng
from .layer import (
    LayerConfig,
    complex_lift,
    head_matrix,
    init_layer_params,
    layer_forward,
)
from .model import (
    ModelConfig,
    TrainConfig,
    accuracy_from_logits,
    init_model_params,
    layer_params_view,
    readout_logits,
    train,
)
from . import autodiff as ad

__all__ = [
    "GaugePerturbation",
    "VerificationReport",
    "apply_gauge",
    "gauge_fuzz",
    "spectral_norm",
    "check_perhead_bound",
    "check_self_component",
    "check_lipschitz",
    "spectral_notch_probe",
    "depth_sweep",
    "sic_ablation_grid",
    "write_csv_rows",
]

KL_FLOOR = 1e-300


# ---------------------------------------------------------------------------
# Gauge transformations
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GaugePerturbation:
    """Random per-node phases psi_i ~ U[0, 2 pi * alpha_scale)."""

    node_phases: np.ndarray
    alpha_scale: float
    rng_seed: int

    def __post_init__(self) -> None:
        if not (0.0 <= self.alpha_scale <= 1.0):
            raise ValueError(f"alpha_scale must be in [0,1], got {self.alpha_scale}")
        hi = 2.0 * np.pi * self.alpha_scale
        if self.node_phases.size and (self.node_phases.min() < 0.0
                                      or (hi > 0.0 and self.node_phases.max() >= hi)
                                      or (hi == 0.0 and self.node_phases.max() > 0.0)):
            raise ValueError("node phases must lie in [0, 2 pi * alpha_scale)")

    @classmethod
    def draw(cls, num_nodes: int, alpha_scale: float, seed: int,
             stream: int = 0) -> "GaugePerturbation":
        rng = make_rng(seed, stream)
        phases = rng.uniform(0.0, 2.0 * np.pi, size=num_nodes) * alpha_scale
        return cls(node_phases=phases, alpha_scale=alpha_scale, rng_seed=seed)


def apply_gauge(
    pert: GaugePerturbation,
    h: np.ndarray,
    theta: np.ndarray,
    edges: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Rotate node states and shift edge phases by the same gauge.

    For a stored edge (u, v), whose canonical arc transports u -> v, the
    phase shifts by psi_v - psi_u; the reverse arc picks up the negated
    shift through its orientation sign.  Under this rule every transported
    message acquires exactly the phase of its destination node.
    """
    psi = pert.node_phases
    h2 = np.asarray(ad.value_of(ad.crotate(np.asarray(h, dtype=np.float64), psi)))
    theta2 = np.asarray(theta, dtype=np.float64) + psi[edges[:, 1]] - psi[edges[:, 0]]
    return h2, theta2


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class VerificationReport:
    """Outcome of one property check; ``passed == (max_deviation <= threshold)``."""

    name: str
    trials: int
    max_deviation: float
    threshold: float
    passed: bool = field(init=False)
    metrics: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.passed = bool(self.max_deviation <= self.threshold)

    def to_dict(self) -> dict:
        return {
            "name": self.name, "trials": self.trials,
            "max_deviation": self.max_deviation, "threshold": self.threshold,
            "passed": self.passed, "metrics": dict(self.metrics),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VerificationReport":
        rep = cls(name=d["name"], trials=int(d["trials"]),
                  max_deviation=float(d["max_deviation"]),
                  threshold=float(d["threshold"]), metrics=dict(d.get("metrics", {})))
        if bool(d.get("passed", rep.passed)) != rep.passed:
            raise ValueError(f"inconsistent pass flag in serialized report {d['name']!r}")
        return rep

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "VerificationReport":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def write_csv_rows(path, rows: list[dict], fieldnames: list[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


# ---------------------------------------------------------------------------
# Shared numpy-side helpers (verification never needs the tape)
# ---------------------------------------------------------------------------

def _to_c(x) -> np.ndarray:
    x = np.asarray(ad.value_of(x))
    return x[..., 0] + 1j * x[..., 1]


def _stack_states(params: dict, features: np.ndarray, arcs, cfg: ModelConfig):
    """Run lift + all layers, returning per-layer states and attentions."""
    lcfg = cfg.layer_config()
    h = ad.value_of(complex_lift(features, params["lift.w"]))
    states = [h]
    alphas: list[list[np.ndarray]] = []
    for layer in range(cfg.num_layers):
        out = layer_forward(layer_params_view(params, layer), arcs, h, lcfg,
                            collect=True)
        h = ad.value_of(out["h_out"])
        states.append(h)
        alphas.append([np.asarray(ad.value_of(head["alpha"]))
                       for head in out["heads"]])
    return states, alphas


def _neighborhood_kl(alpha_p: np.ndarray, alpha_q: np.ndarray, indptr: np.ndarray) -> float:
    """Max KL(p||q) over destination neighborhoods."""
    worst = 0.0
    p = np.maximum(alpha_p, KL_FLOOR)
    q = np.maximum(alpha_q, KL_FLOOR)
    terms = alpha_p * np.log(p / q)
    for k in range(indptr.size - 1):
        lo, hi = indptr[k], indptr[k + 1]
        if hi > lo:
            worst = max(worst, float(terms[lo:hi].sum()))
    return worst


def _shift_layer_phases(params: dict, cfg: ModelConfig, shift: np.ndarray) -> dict:
    out = dict(params)
    for layer in range(cfg.num_layers):
        key = f"layers.{layer}.theta"
        out[key] = params[key] + shift
    return out


# ---------------------------------------------------------------------------
# Gauge fuzzing
# ---------------------------------------------------------------------------

def gauge_fuzz(
    params: dict,
    data: Dataset,
    cfg: ModelConfig,
    alpha_scales: tuple = (0.25, 0.5, 0.75, 1.0),
    trials: int = 100,
    seed: int = 0,
    shift_transports: bool = True,
) -> list[VerificationReport]:
    """Phase-perturb inputs and compare against the rotated baseline.

    With ``shift_transports`` the edge phases are co-transformed and every
    deviation must vanish: hidden states match the phase-rotated originals,
    attention distributions match bit-for-bit up to float error, and the
    back-rotated readout reproduces the baseline logits and predictions.
    Without it (transport left untouched) the same metrics measure how
    badly equivariance breaks, which should grow with ``alpha_scale``.

    One report per scale; ``max_deviation`` is the worst of hidden-state
    deviation and attention KL, thresholded at 1e-9.
    """
    features = data.features
    edges = data.graph.edges
    arcs = data.graph.arcs
    lcfg = cfg.layer_config()
    base_states, base_alphas = _stack_states(params, features, arcs, cfg)
    base_c = [_to_c(s) for s in base_states]
    base_logits = np.asarray(ad.value_of(
        readout_logits(params, base_states[-1], cfg)))
    base_pred = np.argmax(base_logits, axis=1)
    h_lift = np.asarray(ad.value_of(complex_lift(features, params["lift.w"])))
    theta0 = np.asarray(params["layers.0.theta"])

    reports = []
    for scale_idx, scale in enumerate(alpha_scales):
        worst_hidden = worst_kl = worst_logit = 0.0
        hidden_means = []
        agree = 1.0
        for trial in range(trials):
            pert = GaugePerturbation.draw(data.graph.num_nodes, scale, seed,
                                          stream=scale_idx * trials + trial)
            psi = pert.node_phases
            h_rot, theta0_shifted = apply_gauge(pert, h_lift, theta0, edges)
            if shift_transports:
                run_params = _shift_layer_phases(params, cfg,
                                                 theta0_shifted - theta0)
            else:
                run_params = params

            h = h_rot
            rot = np.exp(1j * psi)[:, None]
            trial_hidden = 0.0
            for layer in range(cfg.num_layers):
                out = layer_forward(layer_params_view(run_params, layer), arcs,
                                    h, lcfg, collect=True)
                h = ad.value_of(out["h_out"])
                want = rot * base_c[layer + 1]
                dev = float(np.abs(_to_c(h) - want).max()) if want.size else 0.0
                trial_hidden = max(trial_hidden, dev)
                for m, head in enumerate(out["heads"]):
                    kl = _neighborhood_kl(base_alphas[layer][m],
                                          np.asarray(ad.value_of(head["alpha"])),
                                          arcs.indptr)
                    worst_kl = max(worst_kl, kl)
            worst_hidden = max(worst_hidden, trial_hidden)
            hidden_means.append(trial_hidden)

            compensated = _to_c(h) * np.exp(-1j * psi)[:, None]
            comp_pair = np.stack([compensated.real, compensated.imag], axis=-1)
            logits = np.asarray(ad.value_of(readout_logits(params, comp_pair, cfg)))
            worst_logit = max(worst_logit, float(
                np.linalg.norm(logits - base_logits, axis=1).max()))
            agree = min(agree, float(np.mean(np.argmax(logits, axis=1) == base_pred)))

        tag = "equivariance" if shift_transports else "ablation_no_transport_shift"
        reports.append(VerificationReport(
            name=f"gauge_{tag}[alpha={scale}]",
            trials=trials,
            max_deviation=max(worst_hidden, worst_kl),
            threshold=1e-9,
            metrics={
                "alpha_scale": float(scale),
                "prediction_agreement": agree,
                "max_hidden_deviation": worst_hidden,
                "mean_hidden_deviation": float(np.mean(hidden_means)),
                "max_attention_kl": worst_kl,
                "max_logit_l2": worst_logit,
            },
        ))
    return reports


# ---------------------------------------------------------------------------
# Norm bounds
# ---------------------------------------------------------------------------

def spectral_norm(mat: np.ndarray, iters: int = 60, tol: float = 1e-10) -> float:
    """Largest singular value by power iteration on M^H M.

    Runs at least 50 iterations and continues until successive estimates
    agree to ``tol`` relative; the caller adds the documented 1% margin
    when using the result as a certified upper bound.
    """
    mat = np.asarray(mat)
    if mat.size == 0 or not np.any(mat):
        return 0.0
    rng = make_rng(12345, 0)
    v = rng.normal(size=mat.shape[1]) + 1j * rng.normal(size=mat.shape[1])
    v /= np.linalg.norm(v)
    est = 0.0
    for it in range(max(iters, 50) * 4):
        w = mat.conj().T @ (mat @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        new_est = np.sqrt(nw)
        if it >= max(iters, 50) and abs(new_est - est) <= tol * max(new_est, 1.0):
            return float(new_est)
        est = new_est
    return float(est)


def _random_instance(rng: np.random.Generator, cfg_kw: dict | None = None):
    """Small random graph + layer params + states for bound checking."""
    n = int(rng.integers(5, 11))
    d = int(rng.integers(2, 7))
    heads = int(rng.integers(1, 3))
    pairs = set()
    target = min(int(rng.integers(n, 2 * n)), n * (n - 1) // 2)
    while len(pairs) < target:
        u, v = rng.integers(0, n, size=2)
        if u != v:
            pairs.add((min(u, v), max(u, v)))
    graph = Graph.build(n, np.asarray(sorted(pairs), dtype=np.int64))
    kw = dict(dim=d, heads=heads)
    if cfg_kw:
        kw.update(cfg_kw)
    cfg = LayerConfig(**kw)
    seed = int(rng.integers(0, 2**31))
    lp = dict(init_layer_params(cfg, graph.edges.shape[0], make_rng(seed, 0)))
    lp["theta"] = rng.uniform(-np.pi, np.pi, size=graph.edges.shape[0])
    for m in range(heads):
        p = f"heads.{m}."
        lp[p + "gate_scale"] = np.array(rng.normal(1.0, 0.5))
        lp[p + "gate_shift"] = np.array(rng.normal(0.0, 0.5))
        lp[p + "mix_w"] = rng.normal(0.0, 1.0, size=3)
        lp[p + "mix_b"] = np.array(rng.normal(0.0, 0.5))
        lp[p + "log_temp"] = np.array(rng.uniform(-0.5, 0.5))
    h = rng.normal(size=(n, d, 2)) * rng.uniform(0.3, 2.0)
    return graph, lp, h, cfg


def check_perhead_bound(trials: int = 1000, seed: int = 0) -> VerificationReport:
    """||sum_j alpha m_hat|| <= ||W||_2 * max_j ||h_j|| per head and node.

    Attention weights are convex and each message is a gated blend of
    contracted copies of the transported state, so the aggregate can never
    exceed the best neighbor through the head transform.  The spectral norm
    comes from power iteration with a 1% certification margin.
    """
    worst = -np.inf
    for trial in range(trials):
        rng = make_rng(seed, trial)
        graph, lp, h, cfg = _random_instance(rng)
        out = layer_forward(lp, graph.arcs, h, cfg, collect=True)
        hc = _to_c(h)
        norms = np.linalg.norm(hc, axis=1)
        arcs = graph.arcs
        for m in range(cfg.heads):
            wnorm = spectral_norm(_to_c(head_matrix(lp, m, "w", cfg.dim)).T) * 1.01
            alpha = np.asarray(ad.value_of(out["heads"][m]["alpha"]))
            mhat = _to_c(out["heads"][m]["mhat"])
            for i in range(graph.num_nodes):
                lo, hi = arcs.indptr[i], arcs.indptr[i + 1]
                if hi == lo:
                    continue
                agg = (alpha[lo:hi, None] * mhat[lo:hi]).sum(axis=0)
                bound = wnorm * norms[arcs.src[lo:hi]].max()
                worst = max(worst, float(np.linalg.norm(agg) - bound))
    return VerificationReport(
        name="perhead_aggregation_bound", trials=trials,
        max_deviation=worst, threshold=1e-9,
        metrics={"certification_margin": 0.01},
    )


def check_self_component(trials: int = 1000, seed: int = 0) -> VerificationReport:
    """Receiver-parallel message energy shrinks by (1 - g xi eta lambda).

    For every arc, the component of the blended message parallel to the
    destination state obeys
    ||P m_hat|| <= (1 - g * xi * eta * lambda_i) * ||P transported|| with
    P the damped rank-1 projector and lambda_i its eigenvalue at the
    destination.
    """
    worst = -np.inf
    for trial in range(trials):
        rng = make_rng(seed, trial)
        graph, lp, h, cfg = _random_instance(rng, {"eta_sic": float(rng.uniform(0.0, 1.0))})
        out = layer_forward(lp, graph.arcs, h, cfg, collect=True)
        hc = _to_c(h)
        arcs = graph.arcs
        sq = np.einsum("ij,ij->i", hc.real, hc.real) + np.einsum("ij,ij->i", hc.imag, hc.imag)
        lam = sq / (sq + cfg.epsilon)
        for m in range(cfg.heads):
            head = out["heads"][m]
            transported = _to_c(head["transported"])
            mhat = _to_c(head["mhat"])
            xi = np.asarray(ad.value_of(head["xi"]))
            g = np.asarray(ad.value_of(head["g"]))
            for a in range(arcs.num_arcs):
                i = arcs.dst[a]
                anchor = hc[i]
                denom = sq[i] + cfg.epsilon
                p_m = np.abs(np.vdot(anchor, mhat[a])) / denom * np.linalg.norm(anchor)
                p_t = np.abs(np.vdot(anchor, transported[a])) / denom * np.linalg.norm(anchor)
                factor = 1.0 - g[a] * xi[a] * cfg.eta_sic * lam[i]
                worst = max(worst, float(p_m - factor * p_t))
    return VerificationReport(
        name="self_component_nonamplification", trials=trials,
        max_deviation=worst, threshold=1e-9, metrics={},
    )


# ---------------------------------------------------------------------------
# Lipschitz estimation
# ---------------------------------------------------------------------------

def _frozen_linear_apply(lp, arcs, base_out, x, cfg: LayerConfig, anchors_sq):
    """Pre-normalization update with gates, attention, and anchors frozen.

    With those scalars pinned at their base-state values the map
    x -> x + sum alpha m_hat(x) is linear in x, which is the regime the
    Lipschitz bound analyzes.  Returns the (N, d) complex output.
    """
    n = x.shape[0]
    out = x.copy()
    hc_base, lam_anchor = anchors_sq
    for m in range(cfg.heads):
        head = base_out["heads"][m]
        alpha = np.asarray(ad.value_of(head["alpha"]))
        xi = np.asarray(ad.value_of(head["xi"]))
        g = np.asarray(ad.value_of(head["g"]))
        w = _to_c(head_matrix(lp, m, "w", cfg.dim))
        theta = np.asarray(ad.value_of(lp["theta"]))
        phases = np.exp(1j * arcs.orient * theta[arcs.edge])
        transported = phases[:, None] * (x[arcs.src] @ w)
        if cfg.eta_sic > 0.0:
            anchor = hc_base[arcs.dst]
            denom = lam_anchor[arcs.dst][:, None]
            coef = np.einsum("ij,ij->i", anchor.conj(), transported)[:, None] / denom
            r = transported - cfg.eta_sic * coef * anchor
        else:
            r = transported
        mhat = (g * xi)[:, None] * r + (1.0 - g)[:, None] * transported
        contrib = np.zeros((n, cfg.dim), dtype=np.complex128)
        np.add.at(contrib, arcs.dst, alpha[:, None] * mhat)
        out += contrib
    return out


def check_lipschitz(trials: int = 300, seed: int = 0) -> VerificationReport:
    """Frozen-path expansion never beats 1 + sum_m alpha_max Delta ||W||_2.

    Also checks the directional refinement: for perturbations of a single
    source node, the receiver-parallel component of the output deviation
    obeys the tightened bound with the (1 - g_min xi_min eta lambda_i)
    factor.
    """
    worst = -np.inf
    worst_dir = -np.inf
    for trial in range(trials):
        rng = make_rng(seed, trial)
        graph, lp, h, cfg = _random_instance(rng, {"eta_sic": float(rng.uniform(0.0, 1.0))})
        arcs = graph.arcs
        base_out = layer_forward(lp, arcs, h, cfg, collect=True)
        hc = _to_c(h)
        sq = np.einsum("ij,ij->i", hc.real, hc.real) + np.einsum("ij,ij->i", hc.imag, hc.imag)
        anchors_sq = (hc, sq + cfg.epsilon)
        lam = sq / (sq + cfg.epsilon)

        indeg = np.diff(arcs.indptr)
        delta = int(indeg.max()) if indeg.size else 0
        wnorms = [spectral_norm(_to_c(head_matrix(lp, m, "w", cfg.dim)).T) * 1.01
                  for m in range(cfg.heads)]
        bound = 1.0 + delta * sum(wnorms)  # alpha_max = 1 (conservative)

        fx = _frozen_linear_apply(lp, arcs, base_out, hc, cfg, anchors_sq)
        for _ in range(4):
            dx = rng.normal(size=hc.shape) + 1j * rng.normal(size=hc.shape)
            fy = _frozen_linear_apply(lp, arcs, base_out, hc + dx, cfg, anchors_sq)
            num = np.linalg.norm(fy - fx)          # matrix-wide l2 over all nodes
            den = np.linalg.norm(dx)
            worst = max(worst, float(num / den - bound))

        # directional: perturb one source node, watch one receiver's
        # parallel component
        if arcs.num_arcs:
            a = int(rng.integers(0, arcs.num_arcs))
            j, i = arcs.src[a], arcs.dst[a]
            dx = np.zeros_like(hc)
            dx[j] = rng.normal(size=cfg.dim) + 1j * rng.normal(size=cfg.dim)
            fy = _frozen_linear_apply(lp, arcs, base_out, hc + dx, cfg, anchors_sq)
            dev = fy[i] - fx[i]
            anchor = hc[i]
            p_dev = np.abs(np.vdot(anchor, dev)) / (sq[i] + cfg.epsilon) \
                * np.linalg.norm(anchor)
            gmin = ximin = 1.0
            alpha_sum = 0.0
            for m in range(cfg.heads):
                head = base_out["heads"][m]
                sel = np.flatnonzero((arcs.dst == i) & (arcs.src == j))
                alpha = np.asarray(ad.value_of(head["alpha"]))
                g = np.asarray(ad.value_of(head["g"]))
                xi = np.asarray(ad.value_of(head["xi"]))
                gmin = min(gmin, float(g[sel].min()))
                ximin = min(ximin, float(xi[sel].min()))
                alpha_sum += float((alpha[sel] * wnorms[m]).sum())
            factor = 1.0 - gmin * ximin * cfg.eta_sic * lam[i]
            tight = factor * alpha_sum * np.linalg.norm(dx[j])
            worst_dir = max(worst_dir, float(p_dev - tight))
    return VerificationReport(
        name="lipschitz_frozen_path", trials=trials,
        max_deviation=max(worst, worst_dir), threshold=1e-9,
        metrics={"global_worst_slack": worst, "directional_worst_slack": worst_dir},
    )


# ---------------------------------------------------------------------------
# Spectral probe
# ---------------------------------------------------------------------------

def spectral_notch_probe(
    data: Dataset,
    cfg: ModelConfig,
    depth: int = 6,
    seed: int = 0,
    etas: tuple = (0.0, 0.5),
    csv_path=None,
) -> list[dict]:
    """Band energies of hidden states over graph-Laplacian eigenmodes.

    Both runs share one parameter draw and differ only in the cancellation
    strength.  Bands are thirds of the ascending eigenvalues of
    L_sym = I - D^{-1/2} A D^{-1/2}; the ``adjacency_band`` column gives
    the same band named under the normalized-adjacency convention (where
    low frequency means large eigenvalue), since the eigenvectors coincide.
    """
    n = data.graph.num_nodes
    if n > 2000:
        raise ValueError(f"spectral probe supports up to 2000 nodes, got {n}")
    adj = np.zeros((n, n))
    adj[data.graph.edges[:, 0], data.graph.edges[:, 1]] = 1.0
    adj[data.graph.edges[:, 1], data.graph.edges[:, 0]] = 1.0
    deg = adj.sum(axis=1)
    dinv = np.where(deg > 0, 1.0 / np.sqrt(np.maximum(deg, 1.0)), 0.0)
    lap = np.eye(n) - dinv[:, None] * adj * dinv[None, :]
    eigvals, eigvecs = np.linalg.eigh(lap)
    bands = np.array_split(np.arange(n), 3)
    band_names = ["low", "mid", "high"]
    adjacency_names = {"low": "high", "mid": "mid", "high": "low"}

    if depth < 0:
        raise ValueError(f"depth must be >= 0, got {depth}")
    run_cfg = dc_replace(cfg, num_layers=max(depth, 1))
    params = init_model_params(run_cfg, data.graph.edges.shape[0], make_rng(seed, 0))
    energies: dict[float, list[dict]] = {}
    for eta in etas:
        eta_cfg = dc_replace(run_cfg, eta_sic=float(eta))
        states, _ = _stack_states(params, data.features, data.graph.arcs, eta_cfg)
        per_depth = []
        for t, h in enumerate(states[:depth + 1]):
            coef = eigvecs.T @ _to_c(h)
            mode_energy = np.abs(coef) ** 2
            per_depth.append({name: float(mode_energy[idx].sum())
                              for name, idx in zip(band_names, bands)})
        energies[float(eta)] = per_depth

    rows = []
    base_eta, alt_eta = float(etas[0]), float(etas[-1])
    for t in range(depth + 1):
        for name in band_names:
            e0 = energies[base_eta][t][name]
            e1 = energies[alt_eta][t][name]
            rows.append({
                "depth": t,
                "laplacian_band": name,
                "adjacency_band": adjacency_names[name],
                f"energy_eta_{base_eta}": repr(e0),
                f"energy_eta_{alt_eta}": repr(e1),
                "energy_ratio": repr(e1 / e0 if e0 > 0 else float("nan")),
            })
    if csv_path is not None:
        write_csv_rows(csv_path, rows, list(rows[0].keys()))
    return rows


# ---------------------------------------------------------------------------
# Training ablations
# ---------------------------------------------------------------------------

def depth_sweep(
    data: Dataset,
    cfg: ModelConfig,
    tcfg: TrainConfig,
    depths: tuple = (2, 4, 8, 12),
    modes: tuple = ("full", "additive"),
    csv_path=None,
) -> list[dict]:
    """Train at each depth in each mode with identical seeds and budgets."""
    rows = []
    for depth in depths:
        for mode in modes:
            run_cfg = dc_replace(cfg, num_layers=int(depth), mode=mode)
            params, history = train(data, run_cfg, tcfg)
            best = max(history, key=lambda r: (r["val_acc"], -r["epoch"]))
            rows.append({
                "depth": int(depth), "mode": mode,
                "val_acc": best["val_acc"], "test_acc": best["test_acc"],
                "epochs": len(history),
            })
    if csv_path is not None:
        write_csv_rows(csv_path, rows, ["depth", "mode", "val_acc", "test_acc", "epochs"])
    return rows


GRID_SETTINGS = (
    {"name": "A1", "eta_sic": 0.0, "epsilon": 1e-4, "sic_position": "pre", "sic_rank": 1},
    {"name": "A2", "eta_sic": 0.25, "epsilon": 1e-4, "sic_position": "pre", "sic_rank": 1},
    {"name": "A3", "eta_sic": 0.5, "epsilon": 1e-4, "sic_position": "pre", "sic_rank": 1},
    {"name": "A4", "eta_sic": 0.75, "epsilon": 1e-4, "sic_position": "pre", "sic_rank": 1},
    {"name": "A5", "eta_sic": 1.0, "epsilon": 1e-4, "sic_position": "pre", "sic_rank": 1},
    {"name": "B1", "eta_sic": 0.5, "epsilon": 1e-6, "sic_position": "pre", "sic_rank": 1},
    {"name": "B2", "eta_sic": 0.5, "epsilon": 1e-2, "sic_position": "pre", "sic_rank": 1},
    {"name": "C1", "eta_sic": 0.5, "epsilon": 1e-4, "sic_position": "post", "sic_rank": 1},
    {"name": "C2", "eta_sic": 0.5, "epsilon": 1e-4, "sic_position": "pre", "sic_rank": 4},
)


def sic_ablation_grid(
    data: Dataset,
    cfg: ModelConfig,
    tcfg: TrainConfig,
    seeds: tuple = (0,),
    csv_path=None,
) -> list[dict]:
    """Accuracy over cancellation strength/damping/position/rank settings.

    Rows A1-A5 sweep eta at fixed damping; B1/B2 vary the damping; C1 moves
    cancellation after the gating blend; C2 uses the rank-4 anchor family.
    Accuracies are means over ``seeds``.
    """
    rows = []
    for setting in GRID_SETTINGS:
        run_cfg = dc_replace(cfg, eta_sic=setting["eta_sic"],
                             epsilon=setting["epsilon"],
                             sic_position=setting["sic_position"],
                             sic_rank=setting["sic_rank"])
        val_accs, test_accs = [], []
        for s in seeds:
            _, history = train(data, run_cfg, dc_replace(tcfg, seed=int(s)))
            best = max(history, key=lambda r: (r["val_acc"], -r["epoch"]))
            val_accs.append(best["val_acc"])
            test_accs.append(best["test_acc"])
        rows.append({
            "name": setting["name"], "eta_sic": setting["eta_sic"],
            "epsilon": setting["epsilon"], "sic_position": setting["sic_position"],
            "sic_rank": setting["sic_rank"],
            "val_acc": float(np.mean(val_accs)),
            "test_acc": float(np.mean(test_accs)),
            "num_seeds": len(seeds),
        })
    if csv_path is not None:
        write_csv_rows(csv_path, rows, list(rows[0].keys()))
    return rows
