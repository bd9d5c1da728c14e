"""Experiment orchestration: workload schedules, the observe/detect/guard/
act/learn control loop, baselines, metric aggregation, and CSV emission.

A run is driven by an `ExperimentConfig` and produces a `RunSummary` plus
(if `out_dir` is set) `timeseries.csv`, `detections.csv`, `summary.csv`,
and per-environment expert checkpoints. Identical config + seed gives
byte-identical outputs.

Default sizes are desk scale: the paper-scale epoch budgets shrink by
roughly 25-50x so a full scenario finishes in minutes on one core, while
every schedule keeps its shape (switch periods expressed in units of the
convergence span T_c). Paper-scale values are plain config fields.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import abr as abr_mod
from . import straggler as st
from .a2c import A2cLearner, EpisodeBatch, Trajectory
from .dqn import DqnLearner, RewardScaler
from .errors import ConfigError, DivergenceError
from .framework import ExpertManager, GmmDetector, SafetyMonitor, augment_observation
from .nets import DeepSetsEncoder, Mlp
from .replay import Experience, make_buffer
from .stats import BoxStats

# --------------------------------------------------------------------------
# scenarios


@dataclass
class Scenario:
    """A schedule of (workload key, epochs) dwells."""

    name: str
    dwells: list

    def __post_init__(self):
        if not self.dwells or any(n <= 0 for _, n in self.dwells):
            raise ConfigError("scenario needs positive-length dwells")
        self._epoch_key = []
        for key, n in self.dwells:
            self._epoch_key.extend([key] * n)
        order = []
        for key, _ in self.dwells:
            if key not in order:
                order.append(key)
        self.keys = order
        self.label_of = {k: i for i, k in enumerate(order)}

    @property
    def total_epochs(self):
        return len(self._epoch_key)

    def workload_at(self, epoch):
        key = self._epoch_key[epoch]
        return key, self.label_of[key]

    def to_json(self):
        return {"name": self.name, "dwells": [list(d) for d in self.dwells]}

    @classmethod
    def from_json(cls, obj):
        return cls(obj["name"], [tuple(d) for d in obj["dwells"]])


def scenario_stationary(key, epochs, name=None):
    return Scenario(name or f"stationary-{key}", [(key, epochs)])


def scenario_cyclic(t_sw, keys=("A", "B", "C"), cycles=2, name="I"):
    """Scenario I: cycle through the workloads, each active T_sw at a time."""
    return Scenario(name, [(k, t_sw) for _ in range(cycles) for k in keys])


def scenario_new_workload(t_sw, common=("A", "B"), rare="C", pre_switches=6,
                          rare_epochs=None, post_cycles=2, name="II"):
    """Scenario II: two workloads alternate until a new one appears; once it
    has converged, all three rotate so each can be evaluated."""
    dwells = [(common[i % 2], t_sw) for i in range(pre_switches)]
    dwells.append((rare, rare_epochs if rare_epochs is not None else 2 * t_sw))
    for _ in range(post_cycles):
        dwells += [(k, t_sw) for k in (*common, rare)]
    return Scenario(name, dwells)


def scenario_rare_reoccur(t_sw, keys=("A", "B", "C"), rare="C", pre_cycles=2,
                          dormant_switches=6, name="III"):
    """Scenario III: cyclic at first, then the rare workload goes dormant
    for a long stretch and finally reoccurs."""
    common = [k for k in keys if k != rare]
    dwells = [(k, t_sw) for _ in range(pre_cycles) for k in keys]
    dwells += [(common[i % len(common)], t_sw) for i in range(dormant_switches)]
    dwells.append((rare, t_sw))
    return Scenario(name, dwells)


def scenario_drift(epochs, name="SmoothDrift"):
    return Scenario(name, [("drift", epochs)])


def scenario_fastswitch(epochs, name="FastSwitch"):
    return Scenario(name, [("fastswitch", epochs)])


# --------------------------------------------------------------------------
# experiment config


@dataclass
class ExperimentConfig:
    scenario: Scenario
    env: str = "straggler"              # straggler | abr
    learner: str = "a2c"                # a2c | dqn
    expert_mode: str = "multi"          # single | multi | oracle
    buffer: str = "ltst"                # dqn replay strategy
    workload_info: bool = False
    safeguard: bool = True
    detector: str = "truth"             # truth | gmm
    label_noise: float = 0.0
    seed: int = 0
    out_dir: str = ""

    # schedule scale
    t_c: int = 120                      # convergence span = one-time exploration span
    episode_len: int = 48
    episodes_per_update: int = 1

    # learner hyperparameters
    lr: float = 0.02
    gamma: float = 0.9
    lam: float = 0.95
    weight_decay: float = 1e-4
    entropy_start: float = 0.1
    entropy_epochs: int = 100
    normalize_advantages: bool = True
    reward_scale: float = 1000.0        # training-reward divisor (a2c)
    eps_random_epochs: int = 20
    eps_decay_epochs: int = 100
    dqn_lr: float = 0.001
    polyak_alpha: float = 0.01
    batch_size: int = 64
    train_every: int = 2
    buffer_capacity: int = 1_000_000   # large / per-environment rings
    ltst_long_capacity: int = 8_000    # ~1.4x T_c of desk-scale samples
    small_capacity: int = 2_000        # ~0.35x T_c
    dqn_reward_scaling: bool = True

    # nets
    phi_widths: tuple = (16, 8)
    rho_hidden: tuple = (16, 8)
    abr_hidden: tuple = (64, 32)

    # environment
    n_servers: int = 10
    mu: float = abr_mod.DEFAULT_MU
    guard_cap: float = 20.0
    guard_calibration_epochs: int = 5
    guard_anneal_epochs: int = 133

    # detection
    detector_dwell: int = 4
    detector_warmup_epochs: int = 6
    detector_components: int = 0        # 0 -> one per scenario workload

    def to_json(self):
        d = asdict(self)
        d["scenario"] = self.scenario.to_json()
        for k in ("phi_widths", "rho_hidden", "abr_hidden"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_json(cls, obj):
        obj = dict(obj)
        obj["scenario"] = Scenario.from_json(obj["scenario"])
        for k in ("phi_widths", "rho_hidden", "abr_hidden"):
            if k in obj:
                obj[k] = tuple(obj[k])
        return cls(**obj)


def abr_defaults(scenario, **overrides):
    """Desk-scale ABR configuration (Table-3 shapes, scaled epochs).

    The guard anneal runs past T_c (1.3x) at this scale: the desk agent
    sees far fewer samples per threshold step, so a proportionally faster
    anneal would hand over control while the policy is still noisy.
    """
    cfg = ExperimentConfig(
        scenario=scenario, env="abr", gamma=0.96, lr=0.01, t_c=200,
        episode_len=98, entropy_start=0.25, entropy_epochs=133,
        reward_scale=10.0, guard_anneal_epochs=260,
    )
    return replace(cfg, **overrides)


def paper_scale(cfg):
    """The paper's full-size epoch budgets (hours-to-days of compute)."""
    if cfg.env == "straggler":
        return replace(cfg, t_c=6000, episode_len=128, lr=0.001,
                       entropy_epochs=5000, eps_random_epochs=1000,
                       eps_decay_epochs=5000, episodes_per_update=8)
    return replace(cfg, t_c=3000, episode_len=490, lr=0.001,
                   entropy_epochs=2000, guard_anneal_epochs=2000,
                   episodes_per_update=8)


# --------------------------------------------------------------------------
# run artifacts


@dataclass
class RunSummary:
    config: ExperimentConfig
    per_workload: dict                  # key -> BoxStats over post-convergence epochs
    epoch_metric: list
    epoch_workload: list
    epoch_detected: list
    epoch_controller: list
    training_log: list                  # per-epoch routing audit
    post_convergence_from: int          # first epoch with every workload explored
    explored_at: dict = field(default_factory=dict)  # label -> completion epoch
    epoch_rebuffer: list = field(default_factory=list)  # real rebuffer s (abr)
    diverged: bool = False
    wall_clock_s: float = 0.0
    experts: dict = field(default_factory=dict)   # label -> learner (in memory)
    out_dir: str = ""

    def metric_values(self, workload, post_convergence=True, own_exploration_only=False):
        """Per-epoch metrics for one workload.

        The default filter starts once *every* workload has finished its
        exploration span (the red-box rule). With `own_exploration_only`
        the filter instead excludes only the workload's own exploration
        span, which stays well-defined when delayed exploration (e.g.
        under label noise) outlasts a workload's final dwell.
        """
        if not post_convergence:
            lo = 0
        elif own_exploration_only:
            label = self.config.scenario.label_of[workload]
            done = self.explored_at.get(label)
            lo = len(self.epoch_metric) if done is None else done + 1
        else:
            lo = self.post_convergence_from
        return [m for e, (m, w) in enumerate(zip(self.epoch_metric, self.epoch_workload))
                if w == workload and e >= lo and m is not None]


# --------------------------------------------------------------------------
# environment/learner wiring


def make_env(cfg, seed):
    if cfg.env == "straggler":
        key = cfg.scenario.workload_at(0)[0]
        return st.StragglerSim(st.WORKLOAD_PRESETS[key], n_servers=cfg.n_servers,
                               seed=seed, safeguard_enabled=cfg.safeguard)
    if cfg.env == "abr":
        key = cfg.scenario.workload_at(0)[0]
        guard = None
        if cfg.safeguard:
            guard = abr_mod.FakeReplayGuard(
                cap=cfg.guard_cap, calibration_epochs=cfg.guard_calibration_epochs,
                anneal_epochs=cfg.guard_anneal_epochs)
            guard.set_epoch(0)
        return abr_mod.AbrEnv(abr_mod.USER_GROUPS[key], mu=cfg.mu, seed=seed,
                              guard=guard)
    raise ConfigError(f"unknown env {cfg.env!r}")


def obs_width(cfg):
    if cfg.env == "straggler":
        base = 2 * cfg.n_servers + 14
    else:
        base = 2 * abr_mod.HISTORY_K + 3 + len(abr_mod.BITRATES_KBPS)
    n_feat = (2 if cfg.env == "straggler" else 4) if cfg.workload_info else 0
    return base + n_feat


def feature_scales(cfg):
    if cfg.env == "straggler":
        return st.FEATURE_SCALES
    return (2000.0, 600.0, 2000.0, 600.0)


def make_learner(cfg, label, seed):
    rng = np.random.default_rng((seed, label, 0xA11CE))
    width = obs_width(cfg)
    if cfg.env == "straggler":
        tail = width - 2 * cfg.n_servers
        n_actions = len(st.TIMEOUTS_MS)
        def net(head, out):
            return DeepSetsEncoder(2, tail, out, phi_widths=cfg.phi_widths,
                                   rho_hidden=cfg.rho_hidden, head=head,
                                   n_set=cfg.n_servers, rng=rng)
    else:
        n_actions = len(abr_mod.BITRATES_KBPS)
        def net(head, out):
            return Mlp([width, *cfg.abr_hidden, out], head=head, rng=rng)
    if cfg.learner == "a2c":
        return A2cLearner(net("softmax", n_actions), net("identity", 1),
                          gamma=cfg.gamma, lam=cfg.lam, lr=cfg.lr,
                          entropy_start=cfg.entropy_start,
                          entropy_epochs=cfg.entropy_epochs,
                          weight_decay=cfg.weight_decay,
                          normalize_advantages=cfg.normalize_advantages)
    if cfg.learner == "dqn":
        return DqnLearner(net("identity", n_actions), gamma=cfg.gamma,
                          lr=cfg.dqn_lr, polyak_alpha=cfg.polyak_alpha,
                          batch_size=cfg.batch_size,
                          random_epochs=cfg.eps_random_epochs,
                          decay_epochs=cfg.eps_decay_epochs,
                          weight_decay=cfg.weight_decay)
    raise ConfigError(f"unknown learner {cfg.learner!r}")


def _buffer_for(cfg):
    if cfg.buffer == "large":
        return make_buffer("large", capacity=cfg.buffer_capacity)
    if cfg.buffer == "small":
        return make_buffer("small", capacity=cfg.small_capacity)
    if cfg.buffer == "ltst":
        return make_buffer("ltst", long_capacity=cfg.ltst_long_capacity,
                           short_capacity=cfg.small_capacity)
    if cfg.buffer == "multi":
        return make_buffer("multi", capacity_each=cfg.buffer_capacity)
    raise ConfigError(f"unknown buffer strategy {cfg.buffer!r}")


# --------------------------------------------------------------------------
# the control loop


class _Detector:
    """Environment labeling: noisy ground truth (decided per epoch) or an
    online-fitted GMM over per-window workload features (which therefore
    reacts to switches with the feature-window + dwell lag)."""

    def __init__(self, cfg, n_labels, rng):
        self.cfg = cfg
        self.n_labels = n_labels
        self.rng = rng
        self.mode = cfg.detector
        self.gmm = None
        self.history = []
        self.reported = 0
        if self.mode == "gmm":
            k = cfg.detector_components or n_labels
            self.gmm = GmmDetector(k, dwell=cfg.detector_dwell, seed=cfg.seed)

    def epoch_label(self, true_label):
        """The environment index used to route this epoch's experience."""
        if self.mode == "truth":
            label = true_label
            if self.cfg.label_noise > 0 and self.rng.random() < self.cfg.label_noise:
                others = [i for i in range(max(self.n_labels, 2)) if i != label]
                label = int(others[self.rng.integers(len(others))])
            self.reported = label
        return self.reported

    def observe_window(self, features):
        """Per-window detector update; returns (reported, posterior) to log."""
        if self.mode == "truth":
            post = np.zeros(max(self.n_labels, self.reported + 1))
            post[self.reported] = 1.0
            return self.reported, post
        self.history.append(np.asarray(features, dtype=np.float64))
        if self.gmm.fitted:
            self.reported = self.gmm.classify(features)
            return self.reported, self.gmm.posterior(features)
        return self.reported, np.zeros(self.gmm.n_components)

    def maybe_fit(self, epoch):
        if (self.mode == "gmm" and not self.gmm.fitted
                and epoch >= self.cfg.detector_warmup_epochs
                and len(self.history) >= 10 * self.gmm.n_components):
            self.gmm.fit(np.asarray(self.history))


def _pretrain_oracle_experts(cfg):
    """One converged expert per scenario workload, trained on a stationary
    run with the same settings (this is exactly a plain single-workload
    training run, reused as the oracle baseline)."""
    experts = {}
    for key in cfg.scenario.keys:
        sub = replace(
            cfg, scenario=scenario_stationary(key, cfg.t_c),
            expert_mode="multi", detector="truth", label_noise=0.0,
            out_dir="", seed=cfg.seed + 7919 * (cfg.scenario.label_of[key] + 1),
        )
        summary = run_experiment(sub)
        experts[cfg.scenario.label_of[key]] = summary.experts[0]
    return experts


def run_experiment(cfg):
    """Execute the full control loop; returns a RunSummary (and writes CSV
    artifacts when cfg.out_dir is set)."""
    t_start = time.perf_counter()
    scenario = cfg.scenario
    seed_root = np.random.SeedSequence(cfg.seed)
    _, s_act, s_guard, s_noise, s_dqn = [
        np.random.default_rng(s) for s in seed_root.spawn(5)
    ]
    env = make_env(cfg, cfg.seed)
    detector = _Detector(cfg, len(scenario.keys), s_noise)
    monitor = SafetyMonitor() if (cfg.env == "straggler" and cfg.safeguard) else None

    oracle = cfg.expert_mode == "oracle"
    if oracle:
        if cfg.detector != "truth" or cfg.label_noise > 0:
            raise ConfigError("oracle mode requires clean ground-truth labels")
        pretrained = _pretrain_oracle_experts(cfg)
        manager = ExpertManager(lambda idx: pretrained[idx], cfg.t_c, mode="multi")
        for label in pretrained:
            rec = manager.signal(label)
            rec.exploration_epochs = cfg.t_c
    else:
        manager = ExpertManager(lambda idx: make_learner(cfg, idx, cfg.seed),
                                cfg.t_c,
                                mode="single" if cfg.expert_mode == "single" else "multi")

    buffer = _buffer_for(cfg) if cfg.learner == "dqn" else None
    scaler = RewardScaler(enabled=cfg.dqn_reward_scaling) if cfg.learner == "dqn" else None

    f_scales = feature_scales(cfg)
    is_straggler = cfg.env == "straggler"
    obs = augment_observation(env.observe(), env.workload_features(),
                              cfg.workload_info, f_scales)

    epoch_metric, epoch_workload, epoch_detected, epoch_controller = [], [], [], []
    epoch_rebuffer = []
    training_log = []
    detection_rows = []
    explored_at = {}
    diverged = False

    total = scenario.total_epochs
    for epoch in range(total):
        wkey, true_label = scenario.workload_at(epoch)
        if is_straggler:
            env.set_workload(st.WORKLOAD_PRESETS[wkey])
        else:
            env.set_group(abr_mod.USER_GROUPS[wkey])
            if env.guard is not None:
                env.guard.set_epoch(epoch)
        detector.maybe_fit(epoch)
        label = detector.epoch_label(true_label)
        rec = manager.signal(label)
        learner = rec.learner

        batch = EpisodeBatch()
        seg_obs, seg_act, seg_rew = [], [], []
        epoch_latencies = []
        epoch_qoe = []
        rebuffer_s = 0.0
        default_windows = 0

        def close_segment(final_obs, terminal):
            if seg_obs:
                batch.add(Trajectory(np.asarray(seg_obs), np.asarray(seg_act),
                                     np.asarray(seg_rew), final_obs, terminal))
                seg_obs.clear()
                seg_act.clear()
                seg_rew.clear()

        try:
            for w in range(cfg.episode_len):
                if is_straggler:
                    controller = "agent"
                    if monitor is not None:
                        controller = monitor.step(env.last_window_max_queue,
                                                  t=env.now)
                    if controller == "default":
                        action = st.default_policy_action()
                    elif cfg.learner == "a2c":
                        action = learner.act(obs, s_act)
                    else:
                        action = learner.act(obs, s_act,
                                             schedule_epoch=rec.exploration_epochs)
                    res = env.step(action)
                    reward_raw = res.reward
                    done = False
                    epoch_latencies.extend(res.stats["latencies"])
                else:
                    if cfg.learner == "a2c":
                        agent_action = learner.act(obs, s_act)
                    else:
                        agent_action = learner.act(obs, s_act,
                                                   schedule_epoch=rec.exploration_epochs)
                    if env.guard is not None:
                        action, _, controller = abr_mod.guard_step(
                            env.guard, env.real_buffer(), agent_action,
                            env.default_action(), s_guard)
                    else:
                        action, controller = agent_action, "agent"
                    res = env.step(action)
                    reward_raw = res.reward
                    done = res.done
                    epoch_qoe.append(res.stats["qoe"])
                    rebuffer_s += res.stats["rebuffer_s"]

                feats = env.workload_features()
                next_obs = augment_observation(res.obs, feats,
                                               cfg.workload_info, f_scales)
                detected, post = detector.observe_window(feats)
                if cfg.out_dir:
                    t_now = env.now if is_straggler else env.session.clock_s * 1000.0
                    detection_rows.append((t_now, post, detected, controller))

                if controller == "agent":
                    seg_obs.append(obs)
                    seg_act.append(action)
                    seg_rew.append(reward_raw / cfg.reward_scale)
                    if done:
                        close_segment(next_obs, True)
                else:
                    close_segment(obs, False)
                    default_windows += 1

                if cfg.learner == "dqn":
                    buffer.insert(Experience(obs, action, reward_raw, next_obs,
                                             done, env_index=label))
                    if scaler is not None and not scaler.frozen(label):
                        scaler.observe(label, reward_raw)
                    if w % cfg.train_every == 0 and len(buffer) >= cfg.batch_size:
                        learner.train_from(buffer, s_dqn, scaler)
                obs = next_obs

            close_segment(obs, False)
            n_steps = batch.n_steps()
            if cfg.learner == "a2c" and not oracle and n_steps > 0:
                learner.update(batch, schedule_epoch=rec.exploration_epochs)
        except DivergenceError:
            diverged = True

        if not oracle:
            manager.note_epoch()
            if (scaler is not None and manager.exploration_complete(label)
                    and not scaler.frozen(label)):
                scaler.freeze(label)
        if manager.exploration_complete(label) and label not in explored_at:
            explored_at[label] = epoch

        if is_straggler:
            metric = (st.nearest_rank(epoch_latencies, 95)
                      if epoch_latencies else None)
        else:
            metric = float(np.mean(epoch_qoe)) if epoch_qoe else None
        epoch_metric.append(metric)
        epoch_rebuffer.append(rebuffer_s)
        epoch_workload.append(wkey)
        epoch_detected.append(label)
        epoch_controller.append("default" if default_windows > cfg.episode_len // 2
                                else "agent")
        training_log.append({
            "epoch": epoch, "workload_true": wkey, "label_used": label,
            "expert": label if cfg.expert_mode != "single" else 0,
            "n_steps": 0 if (oracle or cfg.learner != "a2c") else batch.n_steps(),
            "controller_windows_default": default_windows,
        })
        if diverged:
            break

    all_labels = [scenario.label_of[k] for k in scenario.keys]
    if oracle:
        post_from = 0
    else:
        seen = [e for label in all_labels
                for e in [explored_at.get(label)] if e is not None]
        post_from = (max(seen) + 1) if len(seen) == len(all_labels) else total

    summary = RunSummary(cfg, {}, epoch_metric, epoch_workload, epoch_detected,
                         epoch_controller, training_log, post_from,
                         explored_at=dict(explored_at),
                         epoch_rebuffer=epoch_rebuffer, diverged=diverged,
                         wall_clock_s=time.perf_counter() - t_start,
                         experts={i: r.learner for i, r in manager.records.items()},
                         out_dir=cfg.out_dir)
    for key in scenario.keys:
        vals = summary.metric_values(key)
        if vals:
            summary.per_workload[key] = BoxStats.from_values(vals)
    if cfg.out_dir:
        _write_artifacts(summary, detection_rows, detector)
    return summary


# --------------------------------------------------------------------------
# artifacts


def _fmt(x):
    return f"{x:.6f}"


def _write_artifacts(summary, detection_rows, detector):
    cfg = summary.config
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)

    with open(os.path.join(out, "config.json"), "w") as fh:
        json.dump(cfg.to_json(), fh, indent=2, sort_keys=True)

    with open(os.path.join(out, "timeseries.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "t_ms", "workload_true", "workload_detected",
                    "controller", "metric"])
        if cfg.env == "straggler":
            epoch_ms = st.WINDOW_MS * cfg.episode_len
        else:
            epoch_ms = abr_mod.CHUNK_S * 1000.0 * cfg.episode_len  # playback time
        for e, (metric, wkey, det, ctl) in enumerate(zip(
                summary.epoch_metric, summary.epoch_workload,
                summary.epoch_detected, summary.epoch_controller)):
            w.writerow([e, _fmt(e * epoch_ms), wkey, det, ctl,
                        _fmt(metric) if metric is not None else ""])

    n_comp = max((len(p) for _, p, _, _ in detection_rows), default=0)
    with open(os.path.join(out, "detections.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_ms"] + [f"posterior_{i}" for i in range(n_comp)]
                   + ["reported", "controller"])
        for t, post, reported, controller in detection_rows:
            padded = list(post) + [0.0] * (n_comp - len(post))
            w.writerow([_fmt(t)] + [_fmt(p) for p in padded]
                       + [reported, controller])

    with open(os.path.join(out, "summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "workload", "expert_mode", "buffer", "seed",
                    "p1", "p25", "p50", "p75", "p99", "mean"])
        buf = cfg.buffer if cfg.learner == "dqn" else "-"
        for key in cfg.scenario.keys:
            stats = summary.per_workload.get(key)
            if stats is None:
                continue
            w.writerow([cfg.scenario.name, key, cfg.expert_mode, buf, cfg.seed]
                       + [_fmt(v) for v in stats.row()])

    with open(os.path.join(out, "status.json"), "w") as fh:
        json.dump({"diverged": summary.diverged,
                   "post_convergence_from": summary.post_convergence_from}, fh)

    for label, learner in summary.experts.items():
        d = os.path.join(out, "experts", f"env_{label}")
        os.makedirs(d, exist_ok=True)
        if isinstance(learner, A2cLearner):
            learner.actor.save(os.path.join(d, "actor.npz"))
            learner.critic.save(os.path.join(d, "critic.npz"))
        elif isinstance(learner, DqnLearner):
            learner.online.save(os.path.join(d, "qnet.npz"))
    if detector.gmm is not None and detector.gmm.fitted:
        detector.gmm.save(os.path.join(out, "detector.npz"))


# --------------------------------------------------------------------------
# frozen-policy evaluation and cross-workload evaluation


def evaluate_policy(cfg, policy_fn, workload_key, epochs, seed):
    """Mean per-epoch tail latency (or mean QoE) of a fixed policy."""
    sub = replace(cfg, scenario=scenario_stationary(workload_key, epochs), seed=seed)
    env = make_env(sub, seed)
    rng = np.random.default_rng(seed + 1)
    f_scales = feature_scales(sub)
    obs = augment_observation(env.observe(), env.workload_features(),
                              sub.workload_info, f_scales)
    monitor = SafetyMonitor() if (sub.env == "straggler" and sub.safeguard) else None
    metrics = []
    for _ in range(epochs):
        lat, qoes = [], []
        for _ in range(sub.episode_len):
            if sub.env == "straggler":
                controller = ("agent" if monitor is None
                              else monitor.step(env.last_window_max_queue, t=env.now))
                action = (st.default_policy_action() if controller == "default"
                          else policy_fn(obs, rng))
                res = env.step(action)
                lat.extend(res.stats["latencies"])
            else:
                res = env.step(policy_fn(obs, rng))
                qoes.append(res.stats["qoe"])
            obs = augment_observation(res.obs, env.workload_features(),
                                      sub.workload_info, f_scales)
        if sub.env == "straggler":
            if lat:
                metrics.append(st.nearest_rank(lat, 95))
        else:
            metrics.append(float(np.mean(qoes)))
    return float(np.mean(metrics))


def pretrain_checkpoint(cfg, workload_key, ckpt_dir, seed=None):
    """Train on one stationary workload and save the policy checkpoint."""
    sub = replace(cfg, scenario=scenario_stationary(workload_key, cfg.t_c),
                  expert_mode="multi", detector="truth", out_dir="",
                  seed=cfg.seed if seed is None else seed)
    summary = run_experiment(sub)
    learner = summary.experts[0]
    d = os.path.join(ckpt_dir, workload_key)
    os.makedirs(d, exist_ok=True)
    if isinstance(learner, A2cLearner):
        learner.actor.save(os.path.join(d, "actor.npz"))
        learner.critic.save(os.path.join(d, "critic.npz"))
    else:
        learner.online.save(os.path.join(d, "qnet.npz"))
    return summary


def _greedy_policy_from_checkpoint(cfg, ckpt_dir, workload_key):
    from .nets import load_net
    actor_path = os.path.join(ckpt_dir, workload_key, "actor.npz")
    qnet_path = os.path.join(ckpt_dir, workload_key, "qnet.npz")
    path = actor_path if os.path.exists(actor_path) else qnet_path
    if not os.path.exists(path):
        raise ConfigError(f"no checkpoint for workload {workload_key!r} in {ckpt_dir}")
    net = load_net(path)
    return lambda obs, rng: int(np.argmax(net.forward(obs)))


def cross_eval(train_key, test_key, ckpt_dir, cfg, eval_epochs=25, seed=1234):
    """Normalized frozen-policy transfer metric.

    1 means the train->test policy matches the policy trained on the test
    workload itself; 0 means it is no better than never hedging; below 0 is
    worse than never hedging.
    """
    policy = _greedy_policy_from_checkpoint(cfg, ckpt_dir, train_key)
    matched = _greedy_policy_from_checkpoint(cfg, ckpt_dir, test_key)
    no_hedge = lambda obs, rng: st.default_policy_action()
    l_policy = evaluate_policy(cfg, policy, test_key, eval_epochs, seed)
    l_matched = evaluate_policy(cfg, matched, test_key, eval_epochs, seed)
    l_nohedge = evaluate_policy(cfg, no_hedge, test_key, eval_epochs, seed)
    denom = l_nohedge - l_matched
    if abs(denom) < 1e-9:
        raise ConfigError("degenerate normalization: matched policy equals no-hedging")
    return (l_nohedge - l_policy) / denom


# --------------------------------------------------------------------------
# aggregation


def aggregate_boxstats(groups):
    """Pooled box statistics per group: {key: values} -> rows of
    [group, p1, p25, p50, p75, p99, mean, count]; empty groups are omitted."""
    rows = []
    for key in sorted(groups):
        vals = [v for v in groups[key] if v is not None]
        if not vals:
            continue
        stats = BoxStats.from_values(vals)
        rows.append([key] + [_fmt(v) for v in stats.row()] + [stats.count])
    return rows


def aggregate_timeseries_files(paths, group_col="workload_true",
                               value_col="metric"):
    """Pool metric values from timeseries.csv files, grouped by a column."""
    groups = {}
    for path in paths:
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                if row[value_col] == "":
                    continue
                groups.setdefault(row[group_col], []).append(float(row[value_col]))
    return groups
