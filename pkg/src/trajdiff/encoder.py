"""Shared history encoder.

A recurrent cell summarises the target agent's observed track (ego-relative
positions plus finite-difference velocities); a second cell summarises each
neighbour's track of per-step offsets from the ego.  Neighbour summaries are
averaged, so the feature is invariant to neighbour order, and an empty
neighbour set contributes an exact zero block.  Both the preference scorer
and the denoiser condition on the same feature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

import trajdiff.autodiff as ad


@dataclass
class EncoderParams:
    d_e: int           # ego hidden width
    d_n: int           # edge hidden width
    n: int             # expected history length
    dt: float
    weights: dict      # name -> parameter Node

    @property
    def feature_dim(self):
        return self.d_e + self.d_n


def init_encoder(d_e=64, d_n=32, n=8, dt=0.4, seed=0):
    rng = np.random.default_rng(seed)
    weights = {}

    def cell(prefix, din, hid):
        s = 1.0 / np.sqrt(hid)
        weights[f"{prefix}.wx"] = ad.parameter(rng.uniform(-s, s, size=(din, 3 * hid)))
        weights[f"{prefix}.wh"] = ad.parameter(rng.uniform(-s, s, size=(hid, 3 * hid)))
        weights[f"{prefix}.b"] = ad.parameter(np.zeros(3 * hid))

    cell("enc.ego", 4, d_e)
    cell("enc.edge", 2, d_n)
    return EncoderParams(d_e, d_n, n, dt, weights)


def _gru_step(x, h, wx, wh, b, hid):
    # gates packed [update | reset | candidate]; reset applied after the
    # hidden matmul (the usual fused-kernel convention)
    gx = ad.add(ad.matmul(x, wx), b)
    gh = ad.matmul(h, wh)
    z = ad.sigmoid(ad.add(ad.slice_axis(gx, 1, 0, hid), ad.slice_axis(gh, 1, 0, hid)))
    r = ad.sigmoid(ad.add(ad.slice_axis(gx, 1, hid, 2 * hid),
                          ad.slice_axis(gh, 1, hid, 2 * hid)))
    c = ad.tanh(ad.add(ad.slice_axis(gx, 1, 2 * hid, 3 * hid),
                       ad.mul(r, ad.slice_axis(gh, 1, 2 * hid, 3 * hid))))
    one = ad.constant(1.0)
    return ad.add(ad.mul(ad.sub(one, z), h), ad.mul(z, c))


def _gru_sequence(inputs, wx, wh, b, hid):
    """Run a cell over (B, T, din) constant inputs; return final hidden (B, hid)."""
    bsz, steps, _ = inputs.shape
    h = ad.constant(np.zeros((bsz, hid)))
    for t in range(steps):
        x = ad.constant(np.ascontiguousarray(inputs[:, t, :]))
        h = _gru_step(x, h, wx, wh, b, hid)
    return h


def _ego_inputs(histories, dt):
    vel = np.diff(histories, axis=1) / dt
    vel = np.concatenate([vel[:, :1], vel], axis=1)          # repeat first step
    rel = histories - histories[:, -1:, :]                   # last point at origin
    return np.concatenate([rel, vel], axis=2)


def _canonical_neighbor_order(rels):
    """Deterministic neighbor ordering so aggregation order never varies."""
    return sorted(range(len(rels)), key=lambda k: rels[k].tobytes())


def encode_batch(histories, neighbor_lists, params):
    """Encode B histories (B, n, 2) with per-sample neighbor lists.

    Returns a differentiable (B, d_e + d_n) node.  Neighbour tracks are
    expressed as per-step offsets from the ego track, so the whole feature
    is unchanged by translating a scene.
    """
    histories = np.asarray(histories, dtype=float)
    if histories.ndim != 3 or histories.shape[1] != params.n or histories.shape[2] != 2:
        raise ad.ShapeError(f"encode: histories shape {histories.shape}, "
                            f"expected (B, {params.n}, 2)")
    if len(neighbor_lists) != histories.shape[0]:
        raise ad.ShapeError("encode: one neighbor list per history required")
    w = params.weights
    bsz = histories.shape[0]

    h_ego = _gru_sequence(_ego_inputs(histories, params.dt),
                          w["enc.ego.wx"], w["enc.ego.wh"], w["enc.ego.b"], params.d_e)

    flat, weights_rows = [], []
    for i, nbrs in enumerate(neighbor_lists):
        rels = []
        for q in nbrs:
            q = np.asarray(q, dtype=float)
            if q.shape != (params.n, 2):
                raise ad.ShapeError(f"encode: neighbor shape {q.shape}, "
                                    f"expected ({params.n}, 2)")
            rels.append(q - histories[i])
        for k in _canonical_neighbor_order(rels):
            flat.append(rels[k])
            weights_rows.append(i)
    if flat:
        seqs = np.stack(flat)
        h_edge = _gru_sequence(seqs, w["enc.edge.wx"], w["enc.edge.wh"],
                               w["enc.edge.b"], params.d_n)
        mix = np.zeros((bsz, len(flat)))
        counts = np.bincount(weights_rows, minlength=bsz)
        for j, i in enumerate(weights_rows):
            mix[i, j] = 1.0 / counts[i]
        agg = ad.matmul(ad.constant(mix), h_edge)
    else:
        agg = ad.constant(np.zeros((bsz, params.d_n)))
    return ad.concat([h_ego, agg], axis=1)


def encode(history, neighbors, params):
    """Feature vector of length d_e + d_n for a single history."""
    history = np.asarray(history, dtype=float)
    if history.ndim != 2:
        raise ad.ShapeError(f"encode: history shape {history.shape}, expected (n, 2)")
    out = encode_batch(history[None], [list(neighbors)], params)
    return out.value[0].copy()
