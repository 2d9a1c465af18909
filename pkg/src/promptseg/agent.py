"""The prompting MDP: episode environment, DQN training with replay and a
target network, acquisition baselines, the stop criterion, and policy
evaluation curves.

Reward is the per-step Dice increment, so episode returns telescope to
Dice(final) - Dice(initial) exactly.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core.types import LabeledCase, PromptSet
from .errors import EpisodeFinished, InvalidConfig, RepeatedAction
from .features import (
    RegionPool,
    _dist_from_bits,
    _gradient_summary,
    build_region_pool,
    build_state,
    compute_feature_maps,
    kl_binary,
    region_to_prompt,
)
from .metrics import dice, hd95
from .nn import GatedQNetwork, SgdConfig, eval_action_scores, qnet_gradients, sgd_update
from .segmenter.core import (
    EnsembleConfig,
    SegmenterConfig,
    binarize,
    ensemble_predict,
    predict,
)

BASELINE_MODES = ("bald", "entropy", "uniform", "random")


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.99
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05  # reached after the first half of episodes
    batch_size: int = 32
    target_sync: int = 500  # gradient steps between target-network copies
    episodes: int = 500
    budget: int = 10
    seed: int = 0
    kl_mode: str = "max"
    replay_capacity: int = 10000
    grid: tuple[int, int] = (8, 8)
    # ground-truth class distributions for the labeled-KL feature during
    # training; off by default so the training MDP matches deployment,
    # where only predictions are available
    truth_features: bool = False
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    sgd: SgdConfig = field(default_factory=SgdConfig)

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0):
            raise InvalidConfig("gamma must be in [0, 1]")
        if not (0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0):
            raise InvalidConfig("epsilon schedule must satisfy 0 <= end <= start <= 1")
        if self.batch_size < 2:
            raise InvalidConfig("batch_size must be >= 2 for batchnorm")
        if self.episodes < 1 or self.budget < 1:
            raise InvalidConfig("episodes and budget must be >= 1")
        if self.target_sync < 1 or self.replay_capacity < self.batch_size:
            raise InvalidConfig("bad target_sync or replay_capacity")
        if self.kl_mode not in ("max", "sum"):
            raise InvalidConfig(f"unknown kl_mode {self.kl_mode!r}")


@dataclass(frozen=True)
class StopCriterion:
    q_threshold: float = 0.01
    patience: int = 2

    def __post_init__(self):
        if self.q_threshold < 0 or self.patience < 1:
            raise InvalidConfig("need q_threshold >= 0 and patience >= 1")


@dataclass
class Transition:
    state: np.ndarray
    action_features: np.ndarray
    action_index: int
    reward: float
    next_state: np.ndarray
    done: bool
    # action features of the legal moves in the next state; kept so TD
    # targets can be computed from the buffer without replaying the episode
    next_action_features: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring of transitions with seeded uniform sampling."""

    def __init__(self, capacity: int = 10000):
        self.capacity = capacity
        self._items: list[Transition] = []
        self._cursor = 0

    def __len__(self) -> int:
        return len(self._items)

    def push(self, tr: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(tr)
        else:
            self._items[self._cursor] = tr
            self._cursor = (self._cursor + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        if len(self._items) < batch_size:
            raise InvalidConfig("not enough transitions to sample a batch")
        idx = rng.choice(len(self._items), size=batch_size, replace=False)
        return [self._items[int(i)] for i in idx]


class PromptEnv:
    """One prompting episode over a labeled case.

    `truth_features=True` lets the labeled-set KL feature use ground-truth
    class distributions (training); evaluation uses predictions only.
    """

    def __init__(self, case: LabeledCase, pool: RegionPool, seg_cfg: SegmenterConfig,
                 budget: int = 10, kl_mode: str = "max", truth_features: bool = False):
        self.case = case
        self.pool = pool
        self.seg_cfg = seg_cfg
        self.budget = budget
        self.kl_mode = kl_mode
        self.truth_features = truth_features
        self.selected: list[int] = []
        self.prompts = PromptSet()
        self.step = 0
        self.current_map = predict(case.image, self.prompts, seg_cfg)
        self._maps = compute_feature_maps(self.current_map)
        self.dice = dice(binarize(self.current_map), case.truth)

    # --- views ---------------------------------------------------------------

    def legal_actions(self) -> list[int]:
        taken = set(self.selected)
        return [r.index for r in self.pool.regions if r.index not in taken]

    def state(self) -> np.ndarray:
        return build_state(self.current_map, self.pool, self._maps)

    def action_features(self) -> tuple[np.ndarray, list[int]]:
        """(m, 5) feature rows for the legal actions, plus their indices.

        Mirrors features.build_action with labeled = selected regions and
        unlabeled = the other unselected regions (candidate excluded).
        """
        legal = self.legal_actions()
        maps = self._maps
        regions = self.pool.regions
        areas = np.array([r.area for r in regions], dtype=np.float64)
        fg_counts = np.empty(len(regions))
        ent_sums = np.empty(len(regions))
        grad_sums = np.empty(len(regions))
        for r in regions:
            sy, sx = r.slices()
            fg_counts[r.index] = maps.fg[sy, sx].sum()
            ent_sums[r.index] = maps.entropy[sy, sx].sum()
            grad_sums[r.index] = _gradient_summary(maps, r).total

        p_fg = fg_counts / areas
        truth_mask = self.case.truth if self.truth_features else None
        if self.selected:
            if truth_mask is not None:
                labeled_fg = np.array(
                    [_dist_from_bits(truth_mask.bits, regions[i])[0] for i in self.selected]
                )
            else:
                labeled_fg = p_fg[self.selected]
        else:
            labeled_fg = None

        legal_arr = np.array(legal, dtype=int)
        unsel_fg_total = fg_counts[legal_arr].sum()
        unsel_area_total = areas[legal_arr].sum()

        cand_fg = p_fg[legal_arr]
        if labeled_fg is None:
            kl_lab = np.zeros(len(legal))
        else:
            grid = kl_binary(cand_fg[:, None], labeled_fg[None, :])
            kl_lab = grid.max(axis=1) if self.kl_mode == "max" else grid.sum(axis=1)
        rest_area = unsel_area_total - areas[legal_arr]
        pooled_fg = np.divide(unsel_fg_total - fg_counts[legal_arr],
                              rest_area, out=np.zeros(len(legal)), where=rest_area > 0)
        kl_unl = np.where(rest_area > 0, kl_binary(cand_fg, pooled_fg), 0.0)

        rows = np.column_stack([
            ent_sums[legal_arr], grad_sums[legal_arr], cand_fg, kl_lab, kl_unl,
        ])
        return rows, legal


def env_reset(case: LabeledCase, pool: RegionPool, seg_cfg: SegmenterConfig,
              budget: int = 10, kl_mode: str = "max",
              truth_features: bool = False) -> tuple[PromptEnv, np.ndarray]:
    env = PromptEnv(case, pool, seg_cfg, budget, kl_mode, truth_features)
    return env, env.state()


def env_step(env: PromptEnv, region_index: int) -> tuple[np.ndarray, float, bool]:
    """Prompt at the chosen region's maximum-entropy pixel, re-segment, and
    reward the Dice increment. Deterministic."""
    if env.step >= env.budget:
        raise EpisodeFinished(f"episode ended after {env.budget} steps")
    if region_index in env.selected:
        raise RepeatedAction(f"region {region_index} was already selected")
    region = env.pool.regions[region_index]
    prompt = region_to_prompt(region, env.current_map)
    prompts = env.prompts.extended(prompt)
    new_map = predict(env.case.image, prompts, env.seg_cfg)
    new_dice = dice(binarize(new_map), env.case.truth)
    reward = new_dice - env.dice

    env.selected.append(region_index)
    env.prompts = prompts
    env.current_map = new_map
    env._maps = compute_feature_maps(new_map)
    env.dice = new_dice
    env.step += 1
    done = env.step >= env.budget
    return env.state(), reward, done


def select_action(net: GatedQNetwork, state: np.ndarray, env: PromptEnv, epsilon: float,
                  rng: np.random.Generator,
                  cached: tuple[np.ndarray, list[int]] | None = None) -> int:
    """Epsilon-greedy over the unselected regions; greedy ties go to the
    smallest region index."""
    feats, legal = cached if cached is not None else env.action_features()
    if not legal:
        raise EpisodeFinished("no legal action remains")
    if epsilon > 0 and rng.random() < epsilon:
        return int(legal[rng.integers(len(legal))])
    q = eval_action_scores(net, state, feats)
    return int(legal[int(np.argmax(q))])


def baseline_select(mode: str, env: PromptEnv, ens: EnsembleConfig,
                    rng: np.random.Generator) -> int:
    """Acquisition baselines over the unselected regions: summed BALD score,
    summed entropy, or seeded uniform draws ("uniform" and "random" differ
    only in their seed streams)."""
    legal = env.legal_actions()
    if not legal:
        raise EpisodeFinished("no legal action remains")
    if mode in ("uniform", "random"):
        return int(legal[rng.integers(len(legal))])
    if mode == "entropy":
        score_map = env._maps.entropy
    elif mode == "bald":
        from .features import bald_map

        members = ensemble_predict(env.case.image, env.prompts, env.seg_cfg, ens)
        score_map = bald_map(members)
    else:
        raise InvalidConfig(f"unknown baseline mode {mode!r}")
    scores = []
    for idx in legal:
        sy, sx = env.pool.regions[idx].slices()
        scores.append(score_map[sy, sx].sum())
    return int(legal[int(np.argmax(scores))])


def should_stop(q_values: Sequence[float], history: Sequence[float],
                crit: StopCriterion) -> bool:
    """True when no legal action remains (pass empty q_values) or the max
    legal Q stayed below the threshold for `patience` consecutive decisions.
    `history` holds the previous decisions' max-Q values."""
    if len(q_values) == 0:
        return True
    track = list(history) + [max(q_values)]
    if len(track) < crit.patience:
        return False
    return all(v < crit.q_threshold for v in track[-crit.patience :])


# --- DQN training -------------------------------------------------------------


@dataclass(frozen=True)
class EpisodeLog:
    episode: int
    ep_return: float
    final_dice: float
    epsilon: float
    loss_mean: float


@dataclass
class TrainLog:
    episodes: list[EpisodeLog] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["episode,return,final_dice,epsilon,loss_mean"]
        for e in self.episodes:
            lines.append(
                f"{e.episode},{e.ep_return!r},{e.final_dice!r},{e.epsilon!r},{e.loss_mean!r}"
            )
        return "\n".join(lines) + "\n"


def _td_targets(target_net: GatedQNetwork, batch: list[Transition], gamma: float) -> np.ndarray:
    """r + gamma * max_a' Q_target(s', a') with 0 at terminal states."""
    targets = np.array([tr.reward for tr in batch], dtype=np.float64)
    for i, tr in enumerate(batch):
        if tr.done or len(tr.next_action_features) == 0:
            continue
        q = eval_action_scores(target_net, tr.next_state, tr.next_action_features)
        targets[i] += gamma * float(q.max())
    return targets


def _epsilon_at(cfg: AgentConfig, episode: int) -> float:
    half = max(1, cfg.episodes // 2)
    frac = min(1.0, episode / half)
    return cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac


def train_agent(train_cases: Sequence[LabeledCase], cfg: AgentConfig,
                net: GatedQNetwork) -> tuple[GatedQNetwork, TrainLog]:
    """Standard DQN loop: per environment step store a transition, sample a
    replay batch, regress on the target-network TD target, and apply one
    momentum-SGD update. Bit-reproducible for a fixed config seed."""
    if len(train_cases) == 0:
        raise InvalidConfig("training needs at least one case")
    rng = np.random.default_rng([cfg.seed, 0x5EED])
    target = net.clone()
    buffer = ReplayBuffer(cfg.replay_capacity)
    velocity: dict[str, np.ndarray] = {}
    log = TrainLog()
    grad_steps = 0

    for ep in range(cfg.episodes):
        case = train_cases[ep % len(train_cases)]
        pool = build_region_pool(case.image.width, case.image.height, cfg.grid)
        env, state = env_reset(case, pool, cfg.segmenter, cfg.budget, cfg.kl_mode,
                               truth_features=cfg.truth_features)
        eps = _epsilon_at(cfg, ep)
        feats, legal = env.action_features()
        ep_return = 0.0
        losses = []
        done = False
        while not done:
            action = select_action(net, state, env, eps, rng, cached=(feats, legal))
            pos = legal.index(action)
            action_feat = feats[pos]
            next_state, reward, done = env_step(env, action)
            if done:
                next_feats, next_legal = np.empty((0, 5)), []
            else:
                next_feats, next_legal = env.action_features()
            buffer.push(
                Transition(state, action_feat, action, reward, next_state, done, next_feats)
            )
            ep_return += reward
            if len(buffer) >= cfg.batch_size:
                batch = buffer.sample(cfg.batch_size, rng)
                targets = _td_targets(target, batch, cfg.gamma)
                grads, loss = qnet_gradients(
                    net,
                    np.stack([tr.state for tr in batch]),
                    np.stack([tr.action_features for tr in batch]),
                    targets,
                )
                sgd_update(net.parameters(), grads, velocity, cfg.sgd)
                losses.append(loss)
                grad_steps += 1
                if grad_steps % cfg.target_sync == 0:
                    target = net.clone()
            state, feats, legal = next_state, next_feats, next_legal
        log.episodes.append(
            EpisodeLog(ep, ep_return, env.dice, eps, float(np.mean(losses)) if losses else 0.0)
        )
    return net, log


# --- evaluation ----------------------------------------------------------------


@dataclass
class PolicyEvaluation:
    """Dice-vs-prompt-count curve plus per-case end-of-episode metrics."""

    label: str
    per_case_dice: np.ndarray  # (n_cases, budget + 1)
    per_case_hd95: list[float | None]
    per_case_seconds: list[float]

    @property
    def mean_curve(self) -> np.ndarray:
        return self.per_case_dice.mean(axis=0)

    @property
    def sd_curve(self) -> np.ndarray:
        if self.per_case_dice.shape[0] < 2:
            return np.zeros(self.per_case_dice.shape[1])
        return self.per_case_dice.std(axis=0, ddof=1)


_ARM_STREAM = {"uniform": 1, "random": 2}


def evaluate_policy(policy, cases: Sequence[LabeledCase], budget: int, seed: int,
                    seg_cfg: SegmenterConfig | None = None,
                    grid: tuple[int, int] = (8, 8),
                    ens: EnsembleConfig | None = None,
                    kl_mode: str = "max") -> PolicyEvaluation:
    """Roll out a trained network (greedy) or a named baseline on every case
    and record Dice after t = 0..budget prompts. Deterministic given `seed`
    (wall times excluded)."""
    if len(cases) == 0:
        raise InvalidConfig("evaluation needs at least one case")
    seg_cfg = seg_cfg or SegmenterConfig()
    is_net = isinstance(policy, GatedQNetwork)
    if not is_net and policy not in BASELINE_MODES:
        raise InvalidConfig(f"unknown policy {policy!r}")
    label = "agent" if is_net else str(policy)

    curves = np.zeros((len(cases), budget + 1))
    hd_final: list[float | None] = []
    seconds: list[float] = []
    for ci, case in enumerate(cases):
        pool = build_region_pool(case.image.width, case.image.height, grid)
        rng = np.random.default_rng([seed, ci, _ARM_STREAM.get(label, 0)])
        case_ens = None
        if not is_net:
            base = ens or EnsembleConfig()
            member_seed = int(np.random.SeedSequence([seed, ci]).generate_state(1)[0])
            case_ens = replace(base, jitter_seed=member_seed)
        t0 = time.perf_counter()
        env, state = env_reset(case, pool, seg_cfg, budget, kl_mode, truth_features=False)
        curves[ci, 0] = env.dice
        for t in range(budget):
            if is_net:
                action = select_action(policy, state, env, 0.0, rng)
            else:
                action = baseline_select(policy, env, case_ens, rng)
            state, _, _ = env_step(env, action)
            curves[ci, t + 1] = env.dice
        seconds.append(time.perf_counter() - t0)
        final_mask = binarize(env.current_map)
        if final_mask.is_empty():
            hd_final.append(None)
        else:
            hd_final.append(hd95(final_mask, case.truth, case.image.spacing))
    return PolicyEvaluation(label, curves, hd_final, seconds)
