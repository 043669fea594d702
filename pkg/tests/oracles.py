"""Independent numerical oracles shared across the test suite.

These deliberately avoid the library's own fast paths: gradients come from
central finite differences, projectors from dense complex outer products,
and reference network math (in test modules) from NumPy complex128 loops.
"""

import numpy as np


def dense_projector(anchor: np.ndarray, epsilon: float) -> np.ndarray:
    """P = a a^H / (||a||^2 + eps) as an explicit complex matrix."""
    a = np.asarray(anchor, dtype=np.complex128)
    return np.outer(a, a.conj()) / (np.vdot(a, a).real + epsilon)


def fd_gradients(
    f, params: dict[str, np.ndarray], step: float = 1e-6
) -> dict[str, np.ndarray]:
    """Central-difference gradients of a scalar function of named arrays.

    ``f`` must read the arrays in ``params`` afresh on every call; entries
    are perturbed in place and restored.
    """
    grads: dict[str, np.ndarray] = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gf = g.ravel()
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            fp = f(params)
            flat[k] = orig - step
            fm = f(params)
            flat[k] = orig
            gf[k] = (fp - fm) / (2.0 * step)
        grads[name] = g
    return grads


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + np.exp(-x))


def _ref_node_norm(z: np.ndarray, eps_n: float) -> np.ndarray:
    mu = z.mean()
    dev = z - mu
    sig = np.sqrt(np.mean(np.abs(dev) ** 2))
    return dev / (sig + eps_n)


def _ref_mod_relu(z: np.ndarray, bias: np.ndarray, eps_n: float) -> np.ndarray:
    mag = np.abs(z)
    return np.maximum(mag + bias, 0.0) / np.maximum(mag, eps_n) * z


def _ref_anchors(hvec: np.ndarray, rank: int, eps: float) -> list[np.ndarray]:
    d = hvec.shape[0]
    ramp = np.exp(2j * np.pi * np.arange(d) / d)
    cands = [hvec, hvec.conj(), hvec * ramp, hvec.conj() * ramp][:rank]
    basis: list[np.ndarray] = []
    for cand in cands:
        u = cand.copy()
        for b in basis:
            u = u - (np.vdot(b, u) / (np.vdot(b, b).real + eps)) * b
        basis.append(u)
    return basis


def _ref_sic(anchors: list[np.ndarray], x: np.ndarray, eta: float, eps: float) -> np.ndarray:
    out = x.copy()
    for u in anchors:
        out = out - eta * (np.vdot(u, out) / (np.vdot(u, u).real + eps)) * u
    return out


def reference_layer(h, arc_src, arc_dst, arc_edge, arc_orient, params, cfg):
    """Slow complex128 per-arc re-implementation of one layer.

    ``h``: complex (N, d).  ``params``: dict with lists per head "w", "q"
    (complex d x d), scalars "gate_scale", "gate_shift", "mix_b",
    "log_temp", vectors "mix_w" (3,), plus shared "theta" (E,) and
    "act_bias" (d,).  ``cfg``: dict with eta_sic, epsilon, norm_epsilon,
    lambda_mix, attention_mode, kappa, delta, mode, and optional
    sic_position / sic_rank.

    Returns dict with "h_out", "pre_norm", and per-head per-arc lists of
    (xi, g, mhat, alpha, logit).
    """
    h = np.asarray(h, dtype=np.complex128)
    n, d = h.shape
    num_heads = len(params["w"])
    num_arcs = len(arc_src)
    eta = cfg["eta_sic"]
    eps = cfg["epsilon"]
    eps_n = cfg["norm_epsilon"]
    lam = cfg["lambda_mix"]
    mode = cfg["attention_mode"]
    additive = cfg.get("mode", "full") == "additive"
    sic_pos = cfg.get("sic_position", "pre")
    rank = cfg.get("sic_rank", 1)

    anchors_by_node = [_ref_anchors(h[i], rank, eps) for i in range(n)]
    agg = np.zeros((n, d), dtype=np.complex128)
    per_head = []
    for m in range(num_heads):
        w_mat = params["w"][m]
        q_mat = params["q"][m]
        xi_arr = np.zeros(num_arcs)
        g_arr = np.zeros(num_arcs)
        logit_arr = np.zeros(num_arcs)
        mh_arr = np.zeros((num_arcs, d), dtype=np.complex128)
        for a in range(num_arcs):
            j, i = int(arc_src[a]), int(arc_dst[a])
            if additive:
                ht = w_mat @ h[j]
                mh, xi, g = ht, 1.0, 0.0
            else:
                phase = arc_orient[a] * params["theta"][arc_edge[a]]
                ht = np.exp(1j * phase) * (w_mat @ h[j])
                if eta > 0.0 and sic_pos == "pre":
                    r = _ref_sic(anchors_by_node[i], ht, eta, eps)
                else:
                    r = ht
                qh = q_mat @ h[i]
                s = np.vdot(qh, r)
                nu = np.linalg.norm(qh) * np.linalg.norm(r) + eps_n
                rho = s.real / nu
                xi = _sigmoid(params["gate_scale"][m] * rho + params["gate_shift"][m])
                feats = np.array([
                    np.log1p(xi * np.linalg.norm(r)),
                    np.log1p(np.linalg.norm(ht)),
                    np.log1p(np.abs(s)),
                ])
                g = _sigmoid(params["mix_w"][m] @ feats + params["mix_b"][m])
                mh = g * xi * r + (1.0 - g) * ht
                if eta > 0.0 and sic_pos == "post":
                    mh = _ref_sic(anchors_by_node[i], mh, eta, eps)
            qh = q_mat @ h[i]
            st = np.vdot(qh, mh)
            gamma = np.exp(params["log_temp"][m])
            if mode == "hybrid":
                nut = np.linalg.norm(qh) * np.linalg.norm(mh) + eps_n
                logit = gamma * (lam * np.abs(st) / np.sqrt(d) + (1 - lam) * st.real / nut)
            elif mode == "phase_aided":
                cosang = st.real / max(np.abs(st), eps_n)
                logit = gamma * (np.abs(st) + cfg["kappa"] * cosang) / np.sqrt(d)
            else:
                cosang = st.real / max(np.abs(st), eps_n)
                logit = gamma * cosang * min(1.0, np.abs(st) / cfg["delta"])
            xi_arr[a], g_arr[a], logit_arr[a] = xi, g, logit
            mh_arr[a] = mh
        alpha_arr = np.zeros(num_arcs)
        for i in range(n):
            sel = np.flatnonzero(arc_dst == i)
            if sel.size == 0:
                continue
            z = logit_arr[sel] - logit_arr[sel].max()
            e = np.exp(z)
            alpha_arr[sel] = e / e.sum()
            agg[i] += (alpha_arr[sel, None] * mh_arr[sel]).sum(axis=0)
        per_head.append({"xi": xi_arr, "g": g_arr, "logit": logit_arr,
                         "alpha": alpha_arr, "mhat": mh_arr})

    pre = h + agg
    out = np.zeros_like(pre)
    for i in range(n):
        out[i] = _ref_mod_relu(_ref_node_norm(pre[i], eps_n), params["act_bias"], eps_n)
    return {"h_out": out, "pre_norm": pre, "heads": per_head}


def relative_gradient_errors(
    got: dict[str, np.ndarray],
    want: dict[str, np.ndarray],
    magnitude_floor: float = 1e-6,
) -> dict[str, float]:
    """Worst relative deviation per parameter, ignoring sub-floor entries.

    For entries where both gradients are below the floor the comparison is
    skipped (relative error of noise against noise is meaningless).
    """
    out: dict[str, float] = {}
    for name in want:
        a = got[name].ravel()
        b = want[name].ravel()
        denom = np.maximum(np.abs(a), np.abs(b))
        mask = denom > magnitude_floor
        if not mask.any():
            out[name] = 0.0
            continue
        out[name] = float(np.max(np.abs(a - b)[mask] / denom[mask]))
    return out
