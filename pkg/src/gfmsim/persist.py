"""Binary dataset/checkpoint files and CSV emitters.

Trajectory files (little-endian throughout)::

    magic "GFMT" | u32 version
    u16 len + utf-8 scenario name
    u32 joint_dim | u32 n_bodies | n_bodies x u8 kind (0 planar, 1 spatial)
    f8 control_rate | u64 seed | u32 n_trajectories | u32 dropped
    per trajectory:
        u32 T
        (T+1) records: f8 time, q, v, diag_q, diag_v
        T records:     action (joint_dim), f8 reward, f8 gain

Policy checkpoints reuse the approximator checkpoint with a JSON header in
its trailing block.
"""
from __future__ import annotations

import io
import json
import os
import struct
from pathlib import Path

import numpy as np

from gfmsim.approximator import _Reader, dumps_checkpoint, loads_checkpoint
from gfmsim.data import Trajectory, TrajectoryDataset
from gfmsim.dynamics.model import PLANAR, SPATIAL, ManifoldSpec
from gfmsim.errors import CorruptFileError
from gfmsim.rl.networks import GaussianPolicy

DATASET_MAGIC = b"GFMT"
DATASET_VERSION = 1
_KIND_CODES = {PLANAR: 0, SPATIAL: 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


def dumps_dataset(ds: TrajectoryDataset) -> bytes:
    buf = io.BytesIO()
    buf.write(DATASET_MAGIC)
    buf.write(struct.pack("<I", DATASET_VERSION))
    name = ds.scenario.encode()
    buf.write(struct.pack("<H", len(name)))
    buf.write(name)
    spec = ds.spec
    buf.write(struct.pack("<II", spec.joint_dim, len(spec.free_bodies)))
    buf.write(bytes(_KIND_CODES[k] for k in spec.free_bodies))
    buf.write(struct.pack("<dQII", float(ds.control_rate), int(ds.seed) & (2 ** 64 - 1), len(ds), int(ds.dropped)))
    for tr in ds:
        tr.check(spec)
        T = len(tr)
        buf.write(struct.pack("<I", T))
        states = np.column_stack([tr.times, tr.q, tr.v, tr.diag_q, tr.diag_v])
        buf.write(np.ascontiguousarray(states, dtype="<f8").tobytes())
        ticks = np.column_stack([tr.actions, tr.rewards, tr.gains])
        buf.write(np.ascontiguousarray(ticks, dtype="<f8").tobytes())
    return buf.getvalue()


def loads_dataset(data: bytes) -> TrajectoryDataset:
    r = _Reader(data)
    if r.take(4) != DATASET_MAGIC:
        raise CorruptFileError("not a trajectory file (bad magic)")
    (version,) = r.unpack("<I")
    if version != DATASET_VERSION:
        raise CorruptFileError(f"field 'version': unsupported trajectory file version {version}")
    (n_name,) = r.unpack("<H")
    try:
        scenario = r.take(n_name).decode()
    except UnicodeDecodeError as exc:
        raise CorruptFileError("field 'scenario': not valid utf-8") from exc
    joint_dim, n_bodies = r.unpack("<II")
    kinds = []
    for code in r.take(n_bodies):
        if code not in _KIND_NAMES:
            raise CorruptFileError(f"field 'body_kind': unknown code {code}")
        kinds.append(_KIND_NAMES[code])
    if joint_dim < 1:
        raise CorruptFileError("field 'joint_dim': must be >= 1")
    spec = ManifoldSpec(joint_dim, tuple(kinds))
    rate, seed, n_traj, dropped = r.unpack("<dQII")
    nq, nv, nj = spec.q_dim, spec.v_dim, spec.joint_dim
    width = 1 + 2 * (nq + nv)
    trajectories = []
    for _ in range(n_traj):
        (T,) = r.unpack("<I")
        states = r.array((T + 1, width))
        ticks = r.array((T, nj + 2))
        o = 1
        q = states[:, o:o + nq]; o += nq
        v = states[:, o:o + nv]; o += nv
        dq = states[:, o:o + nq]; o += nq
        dv = states[:, o:o + nv]
        trajectories.append(Trajectory(q.copy(), v.copy(), ticks[:, :nj].copy(), ticks[:, nj].copy(),
                                       states[:, 0].copy(), dq.copy(), dv.copy(), ticks[:, nj + 1].copy()))
    if r.pos != len(data):
        raise CorruptFileError(f"{len(data) - r.pos} trailing bytes after the last trajectory")
    return TrajectoryDataset(scenario, spec, rate, int(seed), trajectories, int(dropped))


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def save_dataset(path, ds: TrajectoryDataset) -> None:
    _atomic_write(path, dumps_dataset(ds))


def load_dataset(path) -> TrajectoryDataset:
    return loads_dataset(Path(path).read_bytes())


def save_policy(path, policy: GaussianPolicy, meta: dict | None = None) -> None:
    header = {"kind": "policy", "action_dim": policy.action_dim, "meta": meta or {}}
    _atomic_write(path, dumps_checkpoint(policy.params, None, json.dumps(header, sort_keys=True).encode()))


def load_policy(path) -> tuple[GaussianPolicy, dict]:
    params, _, extra = loads_checkpoint(Path(path).read_bytes())
    try:
        header = json.loads(extra.decode())
    except ValueError as exc:
        raise CorruptFileError(f"{path}: policy header is not valid JSON") from exc
    if header.get("kind") != "policy":
        raise CorruptFileError(f"{path}: not a policy checkpoint")
    return GaussianPolicy(params, int(header["action_dim"])), header.get("meta", {})


def write_text(path, text: str) -> None:
    _atomic_write(path, text.encode())


def curve_csv(curve, extra_columns: tuple[str, ...] = ()) -> str:
    """Learning curve rows: episode, return, critic loss, KL, temperature (+ extras)."""
    cols = ["episode", "return", "critic_loss", "kl", "eta", *extra_columns]
    lines = [",".join(cols)]
    for rec in curve:
        row = [str(rec.episode), f"{rec.ret:.9g}", f"{rec.critic_loss:.9g}", f"{rec.kl:.9g}", f"{rec.eta:.9g}"]
        row += [_fmt(rec.extra.get(c, "")) for c in extra_columns]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.9g}"
    return str(x)


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    lines = Path(path).read_text().strip().splitlines()
    if not lines:
        raise CorruptFileError(f"{path} is empty")
    return lines[0].split(","), [ln.split(",") for ln in lines[1:]]
