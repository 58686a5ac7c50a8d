"""JSON checkpoint container for actor and critic parameters.

Layout (version 1)::

    {"format": "qprl-checkpoint", "version": 1,
     "levels": [...], "target_index": j,
     "actor":  {"head", "sigma", "entropy_coef", "conc_bias", "net": NET},
     "critic": {"order_penalty", "rho", "online": NET, "target": NET},
     "meta": {...}}

    NET = {"sizes": [n_in, h1, ..., n_out], "activations": [...], "l2": x,
           "params": [W1 row-major, b1, W2, b2, ...]}

Floats are written with full round-trip precision.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .actor import ActorParams
from .critic import CriticParams
from .errors import ConfigError
from .mathcore import MlpParams
from .quantile_dp import QuantileGrid

FORMAT = "qprl-checkpoint"
VERSION = 1


def _net_to_dict(net: MlpParams) -> dict:
    return {"sizes": net.sizes, "activations": list(net.activations), "l2": net.l2,
            "params": net.flat().tolist()}


def _net_from_dict(d: dict) -> MlpParams:
    sizes = d["sizes"]
    ws = [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
    bs = [np.zeros(b) for b in sizes[1:]]
    return MlpParams(ws, bs, list(d["activations"]), float(d["l2"])).with_flat(d["params"])


def save_checkpoint(path, actor: ActorParams, critic: CriticParams, meta=None) -> None:
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "levels": list(critic.grid.levels),
        "target_index": critic.grid.target_index,
        "actor": {"head": actor.head, "sigma": actor.sigma, "entropy_coef": actor.entropy_coef,
                  "conc_bias": actor.conc_bias, "net": _net_to_dict(actor.net)},
        "critic": {"order_penalty": critic.order_penalty, "rho": critic.rho,
                   "online": _net_to_dict(critic.online), "target": _net_to_dict(critic.target)},
        "meta": meta or {},
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_checkpoint(path):
    """Returns ``(actor, critic, meta)``."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format") != FORMAT or doc.get("version") != VERSION:
        raise ConfigError(f"{path}: not a version-{VERSION} checkpoint")
    grid = QuantileGrid(tuple(doc["levels"]), int(doc["target_index"]))
    a = doc["actor"]
    actor = ActorParams(_net_from_dict(a["net"]), a["head"], a["sigma"], a["entropy_coef"],
                        a["conc_bias"])
    c = doc["critic"]
    critic = CriticParams(_net_from_dict(c["online"]), _net_from_dict(c["target"]), grid,
                          c["order_penalty"], c["rho"])
    return actor, critic, doc.get("meta", {})
