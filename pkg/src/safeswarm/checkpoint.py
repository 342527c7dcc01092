"""Versioned checkpoint files: named float64 segments plus run settings."""

from __future__ import annotations

import base64
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .graphs import RadiiConfig
from .nets import GnnConfig, NetConfig, init_actor_params, init_critic_params
from .policy import PolicyBundle
from .world import ScenarioSpec

FORMAT_VERSION = 1


def _encode_group(params: dict[str, np.ndarray]) -> list[dict]:
    out = []
    for name, arr in params.items():
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        out.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "data": base64.b64encode(arr.astype("<f8").tobytes()).decode("ascii"),
            }
        )
    return out


def _decode_group(items: list[dict], template: dict[str, np.ndarray], label: str) -> dict[str, np.ndarray]:
    got = {}
    for item in items:
        shape = tuple(item["shape"])
        raw = base64.b64decode(item["data"])
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
        if arr.size != int(np.prod(shape)):
            raise CheckpointError(f"{label}:{item['name']} data does not match shape {shape}")
        got[item["name"]] = arr.reshape(shape)
    for name, ref in template.items():
        if name not in got:
            raise CheckpointError(f"{label} is missing parameter {name!r}")
        if got[name].shape != ref.shape:
            raise CheckpointError(
                f"{label}:{name} has shape {got[name].shape}, expected {ref.shape}"
            )
    extra = set(got) - set(template)
    if extra:
        raise CheckpointError(f"{label} has unexpected parameters {sorted(extra)}")
    return {name: got[name] for name in template}


def save_checkpoint(path: str | Path, bundle: PolicyBundle) -> None:
    groups = {}
    for i, actor in enumerate(bundle.actor_params):
        groups[f"actor.{i}"] = _encode_group(actor)
    groups["critic"] = _encode_group(bundle.critic_params)
    for j, cc in enumerate(bundle.cost_critic_params):
        groups[f"cost_critic.{j}"] = _encode_group(cc)

    payload = {
        "format_version": FORMAT_VERSION,
        "net": {
            "gnn": asdict(bundle.cfg.gnn),
            "lstm_hidden": bundle.cfg.lstm_hidden,
            "head_hidden": bundle.cfg.head_hidden,
            "action_dim": bundle.cfg.action_dim,
            "log_std_init": bundle.cfg.log_std_init,
        },
        "scenario": asdict(bundle.scenario),
        "radii": asdict(bundle.radii),
        "share_policy": bundle.share_policy,
        "n_actor_sets": len(bundle.actor_params),
        "n_cost_critics": len(bundle.cost_critic_params),
        "param_groups": groups,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, separators=(",", ":")))


def load_checkpoint(path: str | Path) -> PolicyBundle:
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if payload.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {payload.get('format_version')}")

    net = payload["net"]
    cfg = NetConfig(
        gnn=GnnConfig(**net["gnn"]),
        lstm_hidden=net["lstm_hidden"],
        head_hidden=net["head_hidden"],
        action_dim=net["action_dim"],
        log_std_init=net["log_std_init"],
    )
    scenario = ScenarioSpec(**payload["scenario"])
    radii = RadiiConfig(**payload["radii"])

    rng = np.random.default_rng(0)
    actor_template = init_actor_params(cfg, rng)
    critic_template = init_critic_params(cfg, rng)

    groups = payload["param_groups"]
    actors = [
        _decode_group(groups[f"actor.{i}"], actor_template, f"actor.{i}")
        for i in range(payload["n_actor_sets"])
    ]
    critic = _decode_group(groups["critic"], critic_template, "critic")
    cost_critics = [
        _decode_group(groups[f"cost_critic.{j}"], critic_template, f"cost_critic.{j}")
        for j in range(payload["n_cost_critics"])
    ]
    return PolicyBundle(
        cfg=cfg,
        scenario=scenario,
        radii=radii,
        share_policy=payload["share_policy"],
        actor_params=actors,
        critic_params=critic,
        cost_critic_params=cost_critics,
    )
