"""End-to-end stages with on-disk artifacts under one run directory.

Stage artifacts::

    config.cfg                 the resolved run configuration
    dataset.gfmt               real-system trajectories (training chunks, then held-out)
    reference.csv              waypoint references (reacher-joint only)
    sysid.csv                  fitted parameters and losses
    gfm_<k>.ckpt / gfm_curve_<k>.csv
    policy_<variant>.ckpt / curve_<variant>.csv
    eval_<variant>.csv         per-attempt results
    rollout_errors.csv         mean free/teacher-forced errors per model
    summary.csv / summary.txt
    fig3.csv / fig6.csv        plot data
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gfmsim.config import RunConfig
from gfmsim.data import TrajectoryDataset
from gfmsim.dynamics.model import SystemModel
from gfmsim.dynamics.scenarios import ScenarioPair, make_scenario
from gfmsim.errors import ConfigurationError, CorruptFileError
from gfmsim.harness import (
    CurriculumSchedule,
    EvalReport,
    TaskPolicyRunner,
    TaskSpec,
    WaypointPolicy,
    collect_real_trajectories,
    evaluate,
    partition_dataset,
    random_force_baseline,
    train_gfm_ensemble,
    train_task_policy,
)
from gfmsim.hybrid import GeneralizedForceModel, HybridModel
from gfmsim.persist import (
    curve_csv,
    load_dataset,
    load_policy,
    read_csv,
    save_dataset,
    save_policy,
    write_text,
)
from gfmsim.sysid import SysIdProblem, identify, rollout_error

log = logging.getLogger(__name__)

HOLDOUT = 5
FIG3_COLUMNS = ("time", "reference", "real", "default-model", "sysid", "hybrid")
FIG6_COLUMNS = ("episode", "return", "gain", "variant")


@dataclass
class Run:
    config: RunConfig
    directory: Path
    pair: ScenarioPair = field(init=False)

    def __post_init__(self):
        self.directory = Path(self.directory)
        self.pair = make_scenario(self.config.scenario, self.config.seed)

    @classmethod
    def create(cls, config: RunConfig) -> "Run":
        run = cls(config, config.run_dir())
        run.directory.mkdir(parents=True, exist_ok=True)
        write_text(run.path("config.cfg"), config.dumps())
        return run

    def path(self, name: str) -> Path:
        return self.directory / name

    def require(self, name: str, stage: str) -> Path:
        p = self.path(name)
        if not p.exists():
            raise ConfigurationError(f"missing artifact {p.name}: run the '{stage}' stage first")
        return p

    @property
    def task(self) -> TaskSpec:
        t = self.config.task
        if self.config.scenario == "pusher-pose" and not t.is_pose:
            t = t.replace(task="pose_match")
        return t

    @property
    def is_reacher(self) -> bool:
        return self.config.scenario == "reacher-joint"


# ---------------------------------------------------------------- stage 2: data


def stage_collect(run: Run) -> TrajectoryDataset:
    cfg = run.config.run
    n = cfg.ensemble_size * cfg.chunk_size + (HOLDOUT if run.is_reacher else 0)
    if run.is_reacher:
        controller = WaypointPolicy(run.pair, cfg.collect_ticks)
        refs = []

        class _Recording(WaypointPolicy):
            def begin(self, rng):
                super().begin(rng)
                refs.append(self.reference.copy())

        controller = _Recording(run.pair, cfg.collect_ticks)
    else:
        policy, _ = load_policy(run.require("policy_default.ckpt", "train-policy"))
        controller = TaskPolicyRunner(run.pair, policy, run.task, cfg.collect_ticks)
    ds = collect_real_trajectories(run.pair, controller, n, seed=run.config.seed, ticks=cfg.collect_ticks)
    save_dataset(run.path("dataset.gfmt"), ds)
    if run.is_reacher:
        # keep only references of surviving trajectories (dropped ones are re-drawn)
        refs = refs[-n:] if ds.dropped == 0 else refs[ds.dropped:]
        lines = ["trajectory,tick," + ",".join(f"ref_{j}" for j in range(run.pair.spec.joint_dim))]
        for i, ref in enumerate(refs[:n]):
            for t, row in enumerate(ref):
                lines.append(f"{i},{t}," + ",".join(f"{x:.9g}" for x in row))
        write_text(run.path("reference.csv"), "\n".join(lines) + "\n")
    return ds


def _split(run: Run, ds: TrajectoryDataset) -> tuple[list[TrajectoryDataset], TrajectoryDataset]:
    cfg = run.config.run
    n_train = cfg.ensemble_size * cfg.chunk_size
    if len(ds) < n_train:
        raise ConfigurationError(f"dataset holds {len(ds)} trajectories, need {n_train}")
    chunks = partition_dataset(ds.subset(range(n_train)), cfg.chunk_size)
    return chunks, ds.subset(range(n_train, len(ds)))


# ---------------------------------------------------------------- sysid


def stage_sysid(run: Run) -> dict:
    ds = load_dataset(run.require("dataset.gfmt", "collect"))
    chunks, _ = _split(run, ds)
    train = [tr for c in chunks for tr in c]
    problem = SysIdProblem(run.pair.sim_model, run.pair, train, weights=run.config.weights,
                           starts=run.config.run.sysid_starts, seed=run.config.seed)
    res = identify(problem)
    lines = ["parameter,value"] + [f"{k},{v:.9g}" for k, v in res.parameters.items()]
    lines += [f"loss,{res.loss:.9g}", f"template_loss,{res.template_loss:.9g}", f"diverged_starts,{res.starts_diverged}"]
    write_text(run.path("sysid.csv"), "\n".join(lines) + "\n")
    return res.parameters


def load_sysid_model(run: Run) -> SystemModel:
    _, rows = read_csv(run.require("sysid.csv", "sysid"))
    params = {r[0]: float(r[1]) for r in rows if r[0] not in ("loss", "template_loss", "diverged_starts")}
    model = run.pair.sim_model
    changes = {}
    for k, v in params.items():
        cur = getattr(model, k)
        changes[k] = tuple(v for _ in cur) if isinstance(cur, tuple) else v
    return model.replace(**changes)


# ---------------------------------------------------------------- stage 3: GFMs


def stage_train_gfm(run: Run) -> HybridModel:
    ds = load_dataset(run.require("dataset.gfmt", "collect"))
    chunks, _ = _split(run, ds)
    cfg = run.config
    hybrid, reports = train_gfm_ensemble(
        run.pair, run.pair.sim_model, chunks, cfg.gfm_learner, cfg.run.gfm_episodes, cfg.weights, cfg.limits,
        cfg.seed, critic_features=cfg.run.gfm_critic_features, select_every=cfg.run.gfm_select_every)
    lines = ["chunk,chunk_error,zero_error,max_force_fraction,mean_force_fraction,flagged"]
    for gfm, rep in zip(hybrid.gfms, reports):
        k = rep.chunk_id
        lines.append(f"{k},{rep.chunk_error:.9g},{rep.zero_error:.9g},{rep.max_force_fraction:.9g},"
                     f"{rep.mean_force_fraction:.9g},{int(rep.flagged)}")
        run.path(f"gfm_{k}.ckpt").write_bytes(gfm.dumps())
        write_text(run.path(f"gfm_curve_{k}.csv"), curve_csv(rep.curve, ("chunk_error",)))
    write_text(run.path("gfm_stats.csv"), "\n".join(lines) + "\n")
    return hybrid


def load_hybrid(run: Run) -> HybridModel:
    gfms = []
    for k in range(run.config.run.ensemble_size):
        p = run.require(f"gfm_{k}.ckpt", "train-gfm")
        gfm = GeneralizedForceModel.loads(p.read_bytes())
        if gfm.chunk_id != k:
            raise CorruptFileError(f"{p.name} records chunk {gfm.chunk_id}, expected {k}")
        gfms.append(gfm)
    return HybridModel(run.pair.sim_model, gfms)


# ---------------------------------------------------------------- stage 1/4: task policies


def variant_model(run: Run, variant: str):
    if variant in ("default", "default-nocurriculum"):
        return run.pair.sim_model
    if variant == "random-force":
        return random_force_baseline(run.pair.sim_model, run.config.limits)
    if variant == "hybrid":
        return load_hybrid(run)
    raise ConfigurationError(f"unknown variant {variant!r}")


def stage_train_policy(run: Run, variant: str) -> None:
    cfg = run.config
    schedule = cfg.curriculum
    if variant == "default-nocurriculum":
        schedule = CurriculumSchedule.fixed(cfg.curriculum.end)
    episodes = cfg.run.task_episodes or cfg.curriculum.total_episodes
    seed = cfg.seed * 7919 + {"default": 1, "default-nocurriculum": 2, "random-force": 3, "hybrid": 4}[variant]
    policy, curve = train_task_policy(run.pair, variant_model(run, variant), run.task, schedule, cfg.task_learner,
                                      episodes, seed, variant)
    save_policy(run.path(f"policy_{variant}.ckpt"), policy, {"variant": variant, "seed": seed})
    write_text(run.path(f"curve_{variant}.csv"), curve_csv(curve, ("gain", "variant", "success")))


def stage_eval(run: Run, variant: str) -> EvalReport:
    policy, _ = load_policy(run.require(f"policy_{variant}.ckpt", "train-policy"))
    rep = evaluate(run.pair, policy, run.task, run.config.run.eval_trials, seed=run.config.seed + 1,
                   policy_id=variant, model_id="real")
    write_text(run.path(f"eval_{variant}.csv"), rep.to_csv())
    return rep


# ---------------------------------------------------------------- reacher reporting


def stage_rollout_report(run: Run) -> dict:
    ds = load_dataset(run.require("dataset.gfmt", "collect"))
    chunks, held = _split(run, ds)
    models = {"default-model": run.pair.sim_model, "sysid": load_sysid_model(run), "hybrid": load_hybrid(run)}
    w = run.config.weights
    lines = ["model,split,free_error,teacher_forced_error"]
    out = {}
    splits = {f"chunk{k}": list(c) for k, c in enumerate(chunks)}
    splits["heldout"] = list(held)
    for name, model in models.items():
        for split, trajs in splits.items():
            if not trajs:
                continue
            if name == "hybrid" and split.startswith("chunk"):
                # each GFM on its own chunk
                k = int(split[5:])
                free = [rollout_error(run.pair, model, tr, w, gfm_index=k).mean for tr in trajs]
                tf = [rollout_error(run.pair, model, tr, w, teacher_forced=True, gfm_index=k).mean for tr in trajs]
            else:
                free, tf = [], []
                for tr in trajs:
                    idx = range(len(model)) if isinstance(model, HybridModel) else [0]
                    free.append(np.mean([rollout_error(run.pair, model, tr, w, gfm_index=i).mean for i in idx]))
                    tf.append(np.mean([rollout_error(run.pair, model, tr, w, True, gfm_index=i).mean for i in idx]))
            out[(name, split)] = (float(np.mean(free)), float(np.mean(tf)))
            lines.append(f"{name},{split},{np.mean(free):.9g},{np.mean(tf):.9g}")
    write_text(run.path("rollout_errors.csv"), "\n".join(lines) + "\n")
    return out


def emit_fig3(run: Run) -> Path:
    """Base-joint angle of the first held-out trajectory against every model's free rollout."""
    ds = load_dataset(run.require("dataset.gfmt", "collect"))
    _, held = _split(run, ds)
    if not len(held):
        raise ConfigurationError("fig3 needs a held-out trajectory")
    _, ref_rows = read_csv(run.require("reference.csv", "collect"))
    idx = len(ds) - len(held)
    ref = [float(r[2]) for r in ref_rows if int(r[0]) == idx]
    tr = held[0]
    models = {"default-model": run.pair.sim_model, "sysid": load_sysid_model(run), "hybrid": load_hybrid(run)}
    preds = {}
    for name, model in models.items():
        res = rollout_error(run.pair, model, tr, run.config.weights, gfm_index=0)
        preds[name] = [tr.q[0, 0]] + [s.q[0] for s in res.states]
    lines = [",".join(FIG3_COLUMNS)]
    for t in range(len(tr) + 1):
        r = ref[min(t, len(ref) - 1)]
        row = [tr.times[t], r, tr.q[t, 0]] + [preds[n][t] for n in ("default-model", "sysid", "hybrid")]
        lines.append(",".join(f"{x:.9g}" for x in row))
    p = run.path("fig3.csv")
    write_text(p, "\n".join(lines) + "\n")
    return p


def emit_fig6(run: Run) -> Path:
    lines = [",".join(FIG6_COLUMNS)]
    found = False
    for variant in run.config.run.variants:
        p = run.path(f"curve_{variant}.csv")
        if not p.exists():
            continue
        found = True
        header, rows = read_csv(p)
        e, r, g = header.index("episode"), header.index("return"), header.index("gain")
        for row in rows:
            lines.append(f"{row[e]},{row[r]},{row[g]},{variant}")
    if not found:
        raise ConfigurationError("missing artifact curve_<variant>.csv: run the 'train-policy' stage first")
    p = run.path("fig6.csv")
    write_text(p, "\n".join(lines) + "\n")
    return p


def final_average_return(run: Run, variant: str, fraction: float = 0.1) -> float:
    header, rows = read_csv(run.require(f"curve_{variant}.csv", "train-policy"))
    rets = [float(r[header.index("return")]) for r in rows]
    k = max(1, int(math.ceil(fraction * len(rets))))
    return float(np.mean(rets[-k:]))


def emit_summary(run: Run) -> Path:
    lines = ["item,value"]
    if run.is_reacher:
        _, rows = read_csv(run.require("rollout_errors.csv", "report"))
        for r in rows:
            lines.append(f"error:{r[0]}:{r[1]}:free,{r[2]}")
    else:
        for variant in run.config.run.variants:
            p = run.path(f"eval_{variant}.csv")
            if not p.exists():
                continue
            _, rows = read_csv(p)
            succ = [int(r[2]) for r in rows]
            n = len(succ)
            rate = 100.0 * sum(succ) / n
            std = 100.0 * math.sqrt((sum(succ) / n) * (1 - sum(succ) / n) / n)
            lines.append(f"success:{variant},{rate:.6g}")
            lines.append(f"std:{variant},{std:.6g}")
            lines.append(f"final_return:{variant},{final_average_return(run, variant):.9g}")
    p = run.path("summary.csv")
    write_text(p, "\n".join(lines) + "\n")
    write_text(run.path("summary.txt"), "\n".join(l.replace(",", " = ", 1) for l in lines[1:]) + "\n")
    return p


def emit_plot_data(run: Run) -> list[Path]:
    out = []
    if run.is_reacher:
        stage_rollout_report(run)
        out.append(emit_fig3(run))
    else:
        out.append(emit_fig6(run))
    out.append(emit_summary(run))
    return out


# ---------------------------------------------------------------- whole pipeline


def run_pipeline(config: RunConfig) -> Run:
    run = Run.create(config)
    if run.is_reacher:
        stage_collect(run)
        stage_sysid(run)
        stage_train_gfm(run)
    else:
        variants = config.run.variants
        # step 1: policy on the default model, step 2: real data with it
        stage_train_policy(run, "default")
        stage_collect(run)
        stage_train_gfm(run)
        for v in variants:
            if v != "default":
                stage_train_policy(run, v)
        for v in variants:
            stage_eval(run, v)
    emit_plot_data(run)
    return run


def gates(run: Run) -> list[tuple[str, bool, str]]:
    """Self-check gates used by ``pipeline --check``."""
    out = []
    _, rows = read_csv(run.require("summary.csv", "report"))
    vals = {r[0]: float(r[1]) for r in rows}
    if run.is_reacher:
        d = vals.get("error:default-model:heldout:free")
        s = vals.get("error:sysid:heldout:free")
        h = vals.get("error:hybrid:heldout:free")
        if None not in (d, s, h):
            out.append(("default > sysid by 10%", s <= 0.9 * d, f"default={d:.4g} sysid={s:.4g}"))
            out.append(("sysid > hybrid by 10%", h <= 0.9 * s, f"sysid={s:.4g} hybrid={h:.4g}"))
    else:
        g = lambda k: vals.get(f"success:{k}")
        if g("hybrid") is not None and g("default") is not None:
            margin = 10.0 if run.task.is_pose else 15.0
            out.append((f"hybrid >= default + {margin:.0f} pts", g("hybrid") >= g("default") + margin,
                        f"hybrid={g('hybrid'):.1f} default={g('default'):.1f}"))
        if g("hybrid") is not None and g("random-force") is not None:
            out.append(("hybrid >= random-force", g("hybrid") >= g("random-force"),
                        f"hybrid={g('hybrid'):.1f} random={g('random-force'):.1f}"))
        fr = lambda k: vals.get(f"final_return:{k}")
        if fr("default") is not None and fr("default-nocurriculum") is not None:
            out.append(("curriculum beats no curriculum", fr("default") > fr("default-nocurriculum"),
                        f"curriculum={fr('default'):.3f} none={fr('default-nocurriculum'):.3f}"))
    return out
