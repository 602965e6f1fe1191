"""Model-based RL agent: KL-regularized PPO plus a quantile dynamics model.

The agent interleaves three kinds of work per training update:

* a rollout of real environment steps followed by a PPO update on it,
* a supervised update of the two-headed quantile model on replayed
  transitions (one head predicts the next observation, one the reward,
  each as a vector of quantiles trained with the quantile Huber loss),
* once past the warm-up step count, additional PPO updates on one-step
  transitions simulated by the model from start states drawn uniformly
  from the replay buffer of really-visited states.

The model doubles as a short-range forecaster: observations handed to the
policy/value networks are augmented with the model's median-mode forecast
of the next ``l`` (load, pv) pairs (zero padding before warm-up).

With ``plan_n = 0``, ``l = 0`` and model training disabled the trainer *is*
the plain PPO baseline; all stochastic streams are separated per concern so
that enabling the model changes nothing about the policy path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .nn import Adam, DenseNet, QuantileSpec, quantile_huber, quantile_huber_grad


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.99
    beta: float = 30.0  # KL penalty scale; the penalty weight is 1/beta
    lr_policy: float = 3e-4
    lr_value: float = 1e-3
    lr_model: float = 1e-3
    epochs: int = 4
    minibatch: int = 64
    rollout_len: int = 256
    updates: int = 100
    warmup_b: int = 2048  # real steps before planning/forecasting kicks in
    plan_n: int = 8  # simulated one-step updates per real step
    q: int = 32
    huber_k: float = 1.0
    h: int = 24  # history length the env was built with
    l: int = 24  # forecast-augmentation horizon
    buffer_cap: int = 100_000
    hidden: tuple = (64, 64)
    model_hidden: tuple = (64, 64)
    kl_ceiling: float = 0.05
    model_batches: int = 16
    train_model: bool | None = None  # None: plan_n > 0 or l > 0
    reward_scale: float = 1.0
    eval_every: int = 5

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.beta <= 0 or self.kl_ceiling <= 0:
            raise ValueError("beta and kl_ceiling must be positive")
        if min(self.plan_n, self.warmup_b, self.l) < 0:
            raise ValueError("plan_n, warmup_b and l must be >= 0")
        if min(self.epochs, self.minibatch, self.rollout_len, self.updates, self.q) < 1:
            raise ValueError("schedule parameters must be >= 1")
        if self.reward_scale <= 0:
            raise ValueError("reward_scale must be positive")

    @property
    def model_enabled(self) -> bool:
        return self.train_model if self.train_model is not None else (
            self.plan_n > 0 or self.l > 0
        )


def ppo_config(cfg: AgentConfig) -> AgentConfig:
    """The model-free baseline: same agent with every model path disabled."""
    return replace(cfg, plan_n=0, l=0, train_model=False)


class TransitionBuffer:
    """Bounded FIFO of (obs, action, reward, next_obs, done) records."""

    def __init__(self, cap: int, obs_dim: int):
        if cap < 1:
            raise ValueError("capacity must be >= 1")
        self.cap = cap
        self.obs = np.zeros((cap, obs_dim))
        self.act = np.zeros(cap, dtype=np.int64)
        self.rew = np.zeros(cap)
        self.obs2 = np.zeros((cap, obs_dim))
        self.done = np.zeros(cap)
        self.size = 0
        self._head = 0

    def add(self, obs, act, rew, obs2, done) -> None:
        i = self._head
        self.obs[i] = obs
        self.act[i] = act
        self.rew[i] = rew
        self.obs2[i] = obs2
        self.done[i] = done
        self._head = (i + 1) % self.cap
        self.size = min(self.size + 1, self.cap)

    def sample_indices(self, rng: np.random.Generator, k: int) -> np.ndarray:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return rng.integers(0, self.size, size=k)

    def contains_obs(self, obs: np.ndarray) -> bool:
        return bool((np.abs(self.obs[: self.size] - obs) < 1e-12).all(axis=1).any())


def policy_logits(policy: DenseNet, obs: np.ndarray) -> np.ndarray:
    z = policy.forward(obs)
    if not np.isfinite(z).all():
        raise FloatingPointError("non-finite policy logits")
    return z


def policy_probs(policy: DenseNet, obs: np.ndarray):
    """(probs, log_probs) with a numerically stable softmax."""
    z = policy_logits(policy, obs)
    z = z - z.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    return np.exp(logp), logp


def policy_act(policy: DenseNet, obs: np.ndarray, rng: np.random.Generator, greedy=False):
    """Sample (action index, log-probability) from the softmax policy."""
    probs, logp = policy_probs(policy, obs)
    if greedy:
        a = int(np.argmax(probs))
    else:
        a = int(np.searchsorted(np.cumsum(probs), rng.random() * probs.sum()))
        a = min(a, probs.size - 1)
    return a, float(logp[a])


def advantage(r: float, v_s: float, v_s2: float, gamma: float) -> float:
    """One-step advantage estimate r + gamma*V(s') - V(s)."""
    return r + gamma * v_s2 - v_s


@dataclass
class DynamicsModel:
    """Shared trunk with a transition head (d*q outputs) and a reward head
    (q outputs); both heads emit quantile vectors."""

    trunk: DenseNet
    head_obs: DenseNet
    head_rew: DenseNet
    obs_dim: int
    n_actions: int
    quantiles: QuantileSpec

    @classmethod
    def create(cls, obs_dim, n_actions, hidden, spec: QuantileSpec, rng) -> "DynamicsModel":
        sizes = [obs_dim + n_actions, *hidden]
        trunk = DenseNet.create(sizes, ["tanh"] * (len(sizes) - 1), rng)
        head_obs = DenseNet.create([hidden[-1], obs_dim * spec.q], ["linear"], rng)
        head_rew = DenseNet.create([hidden[-1], spec.q], ["linear"], rng)
        return cls(trunk, head_obs, head_rew, obs_dim, n_actions, spec)

    def _input(self, obs: np.ndarray, act: np.ndarray) -> np.ndarray:
        onehot = np.zeros((act.size, self.n_actions))
        onehot[np.arange(act.size), act] = 1.0
        return np.concatenate([np.atleast_2d(obs), onehot], axis=1)

    def predict(self, obs: np.ndarray, act: np.ndarray):
        """Quantile tensors (B, d, q) for the next obs and (B, q) for reward."""
        x = self._input(obs, np.asarray(act, dtype=np.int64).reshape(-1))
        hid = self.trunk.forward(x)
        p = self.head_obs.forward(hid).reshape(x.shape[0], self.obs_dim, self.quantiles.q)
        r = self.head_rew.forward(hid)
        return p, r

    def sample(self, obs, act, rng: np.random.Generator = None, median=False):
        """Draw (next_obs, reward); independent uniform quantile index per
        output dimension, or the median index in deterministic mode."""
        p, r = self.predict(obs, act)
        b, d, q = p.shape
        if median or q == 1:
            idx = np.full((b, d), self.quantiles.median_index)
            ridx = np.full(b, self.quantiles.median_index)
        else:
            idx = rng.integers(0, q, size=(b, d))
            ridx = rng.integers(0, q, size=b)
        nxt = np.take_along_axis(p, idx[:, :, None], axis=2)[:, :, 0]
        rew = r[np.arange(b), ridx]
        return nxt, rew


def model_update(model: DynamicsModel, batch: dict, opts: dict) -> float:
    """One descent step on the summed quantile Huber losses of both heads."""
    obs, act = batch["obs"], batch["act"]
    if obs.shape[0] == 0:
        raise ValueError("empty model batch")
    n = obs.shape[0]
    spec = model.quantiles
    taus = spec.taus

    x = model._input(obs, act)
    hid, cache_t = model.trunk.forward_cached(x)
    p_flat, cache_p = model.head_obs.forward_cached(hid)
    r_q, cache_r = model.head_rew.forward_cached(hid)
    p = p_flat.reshape(n, model.obs_dim, spec.q)

    u_p = batch["obs2"][:, :, None] - p  # (B, d, q)
    u_r = batch["rew"][:, None] - r_q  # (B, q)
    loss = float(
        quantile_huber(u_p, taus[None, None, :], spec.huber_k).sum(axis=(1, 2)).mean()
        + quantile_huber(u_r, taus[None, :], spec.huber_k).sum(axis=1).mean()
    )
    g_p = -quantile_huber_grad(u_p, taus[None, None, :], spec.huber_k) / n
    g_r = -quantile_huber_grad(u_r, taus[None, :], spec.huber_k) / n

    grads_p, gin_p = model.head_obs.backward(cache_p, g_p.reshape(n, -1))
    grads_r, gin_r = model.head_rew.backward(cache_r, g_r)
    grads_t, _ = model.trunk.backward(cache_t, gin_p + gin_r)
    opts["head_obs"].step(model.head_obs, grads_p)
    opts["head_rew"].step(model.head_rew, grads_r)
    opts["trunk"].step(model.trunk, grads_t)
    return loss


def _net_snapshot(net: DenseNet, opt: Adam):
    return (
        [w.copy() for w in net.weights],
        [b.copy() for b in net.biases],
        [m.copy() for m in opt.m],
        [v.copy() for v in opt.v],
        opt.t,
    )


def _net_restore(net: DenseNet, opt: Adam, snap) -> None:
    ws, bs, ms, vs, t = snap
    net.weights = [w.copy() for w in ws]
    net.biases = [b.copy() for b in bs]
    opt.m = [m.copy() for m in ms]
    opt.v = [v.copy() for v in vs]
    opt.t = t


def ppo_update(
    policy: DenseNet,
    value: DenseNet,
    batch: dict,
    cfg: AgentConfig,
    opt_policy: Adam,
    opt_value: Adam,
    rng: np.random.Generator,
) -> dict:
    """Epochs of minibatch ascent on the KL-penalized surrogate plus descent
    on the squared one-step advantage. The old policy and the value snapshot
    used for advantages are frozen at batch start. Non-finite losses roll the
    networks back to the batch-start parameters.
    """
    obs, act = batch["obs"], batch["act"]
    n = obs.shape[0]
    if n == 0:
        raise ValueError("empty PPO batch")

    snap_p = _net_snapshot(policy, opt_policy)
    snap_v = _net_snapshot(value, opt_value)

    v_s = value.forward(obs)[:, 0]
    v_s2 = value.forward(batch["obs2"])[:, 0]
    target = batch["rew"] + cfg.gamma * v_s2 * (1.0 - batch["done"])
    adv = target - v_s
    probs_old, logp_old = policy_probs(policy, obs)
    p_old_a = probs_old[np.arange(n), act]

    def batch_kl() -> float:
        probs, logp = policy_probs(policy, obs)
        terms = np.where(probs > 1e-12, probs * (logp - logp_old), 0.0)
        return float(terms.sum(axis=1).mean())

    stats = {"kl": 0.0, "loss_policy": 0.0, "loss_value": 0.0, "epochs_run": 0, "diverged": False}
    try:
        for _ in range(cfg.epochs):
            order = rng.permutation(n)
            for lo in range(0, n, cfg.minibatch):
                idx = order[lo : lo + cfg.minibatch]
                b = idx.size
                mb_obs = obs[idx]
                mb_act = act[idx]
                mb_adv = adv[idx]

                probs, logp = policy_probs(policy, mb_obs)
                p_a = probs[np.arange(b), mb_act]
                ratio = p_a / np.maximum(p_old_a[idx], 1e-12)
                kl_i = np.where(
                    probs > 1e-12, probs * (logp - logp_old[idx]), 0.0
                ).sum(axis=1)
                surrogate = float((ratio * mb_adv).mean() - kl_i.mean() / cfg.beta)
                if not np.isfinite(surrogate):
                    raise FloatingPointError("non-finite surrogate")

                onehot = np.zeros_like(probs)
                onehot[np.arange(b), mb_act] = 1.0
                g_ratio = (ratio * mb_adv)[:, None] * (onehot - probs) / b
                g_kl = probs * (logp - logp_old[idx] - kl_i[:, None]) / b
                grad_logits = -(g_ratio - g_kl / cfg.beta)  # minimize -J
                _, cache = policy.forward_cached(mb_obs)
                grads, _ = policy.backward(cache, grad_logits)
                opt_policy.step(policy, grads)

                v_pred, cache_v = value.forward_cached(mb_obs)
                err = v_pred[:, 0] - target[idx]
                loss_v = float(0.5 * (err**2).mean())
                if not np.isfinite(loss_v):
                    raise FloatingPointError("non-finite value loss")
                grads_v, _ = value.backward(cache_v, (err / b)[:, None])
                opt_value.step(value, grads_v)

                stats["loss_policy"] = -surrogate
                stats["loss_value"] = loss_v
            stats["epochs_run"] += 1
            stats["kl"] = batch_kl()
            if stats["kl"] > cfg.kl_ceiling:
                break  # truncate the update rather than drift too far
    except FloatingPointError:
        _net_restore(policy, opt_policy, snap_p)
        _net_restore(value, opt_value, snap_v)
        stats["diverged"] = True
    return stats


@dataclass
class TrainResult:
    policy: DenseNet
    value: DenseNet
    model: DynamicsModel | None
    curve: list
    buffer: TransitionBuffer
    cfg: AgentConfig
    obs_scale: float
    final_eval: float
    diverged: int


class Agent:
    """Bundles the trained networks with the observation pipeline."""

    def __init__(self, cfg: AgentConfig, policy, value, model, obs_scale: float):
        self.cfg = cfg
        self.policy = policy
        self.value = value
        self.model = model
        self.obs_scale = obs_scale

    def augment(self, obs_n: np.ndarray, past_warmup: bool) -> np.ndarray:
        return forecast_augment(
            self.model, self.policy, obs_n, self.cfg, past_warmup=past_warmup
        )

    def act_greedy(self, obs: np.ndarray, past_warmup: bool = True) -> int:
        obs_n = np.asarray(obs) / self.obs_scale
        aug = self.augment(obs_n[None, :], past_warmup)[0]
        probs, _ = policy_probs(self.policy, aug)
        return int(np.argmax(probs))

    def save(self, path) -> None:
        doc = {
            "obs_scale": self.obs_scale,
            "cfg": {
                "q": self.cfg.q,
                "h": self.cfg.h,
                "l": self.cfg.l,
                "huber_k": self.cfg.huber_k,
            },
            "policy": self.policy.to_dict(),
            "value": self.value.to_dict(),
        }
        if self.model is not None:
            doc["model"] = {
                "trunk": self.model.trunk.to_dict(),
                "head_obs": self.model.head_obs.to_dict(),
                "head_rew": self.model.head_rew.to_dict(),
                "obs_dim": self.model.obs_dim,
                "n_actions": self.model.n_actions,
            }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)

    @classmethod
    def load(cls, path, cfg: AgentConfig) -> "Agent":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        policy = DenseNet.from_dict(doc["policy"])
        value = DenseNet.from_dict(doc["value"])
        model = None
        if "model" in doc:
            spec = QuantileSpec(q=doc["cfg"]["q"], huber_k=doc["cfg"]["huber_k"])
            m = doc["model"]
            model = DynamicsModel(
                DenseNet.from_dict(m["trunk"]),
                DenseNet.from_dict(m["head_obs"]),
                DenseNet.from_dict(m["head_rew"]),
                m["obs_dim"],
                m["n_actions"],
                spec,
            )
        return cls(cfg, policy, value, model, float(doc["obs_scale"]))


def forecast_augment(
    model: DynamicsModel | None,
    policy: DenseNet,
    obs_n: np.ndarray,
    cfg: AgentConfig,
    past_warmup: bool,
) -> np.ndarray:
    """Append the model's median-mode l-step (load, pv) forecast to a batch of
    normalized base observations; zero padding before warm-up.

    Greedy actions inside the forecast rollout are taken on zero-padded
    inputs, since the forecast that would complete them is what is being
    built. Output width is fixed at base + 2l.
    """
    obs_n = np.atleast_2d(obs_n)
    b, d = obs_n.shape
    if cfg.l == 0:
        return obs_n
    pad = np.zeros((b, 2 * cfg.l))
    if not past_warmup or model is None:
        return np.concatenate([obs_n, pad], axis=1)
    load_pos = 1
    pv_pos = 1 + (cfg.h + 1)
    cur = obs_n
    cols = []
    for _ in range(cfg.l):
        probs, _ = policy_probs(policy, np.concatenate([cur, np.zeros((b, 2 * cfg.l))], axis=1))
        acts = probs.argmax(axis=1)
        cur, _ = model.sample(cur, acts, median=True)
        cols.append(cur[:, load_pos])
        cols.append(cur[:, pv_pos])
    return np.concatenate([obs_n, np.stack(cols, axis=1)], axis=1)


def _evaluate(env, agent: Agent, past_warmup: bool) -> float:
    obs = env.reset()
    total = 0.0
    done = False
    while not done:
        a = agent.act_greedy(obs, past_warmup=past_warmup)
        obs, rew, done = env.step(a)
        total += rew
    return total


def dyna_train(env, cfg: AgentConfig, seed: int, eval_env_factory=None) -> TrainResult:
    """Train on ``env`` (reset() -> obs; step(a) -> (obs, reward, done);
    attributes n_actions, obs_dim). Returns networks plus the per-update
    learning curve. Bit-for-bit reproducible from (seed, cfg).
    """
    ss = np.random.SeedSequence(seed)
    streams = ss.spawn(6)
    rng_init = np.random.default_rng(streams[0])
    rng_act = np.random.default_rng(streams[1])
    rng_ppo = np.random.default_rng(streams[2])
    rng_model = np.random.default_rng(streams[3])
    rng_plan = np.random.default_rng(streams[4])
    rng_plan_ppo = np.random.default_rng(streams[5])

    base_dim = env.obs_dim
    aug_dim = base_dim + 2 * cfg.l
    n_actions = env.n_actions
    obs_scale = float(getattr(env, "obs_scale", 1.0))

    policy = DenseNet.create(
        [aug_dim, *cfg.hidden, n_actions], ["tanh"] * len(cfg.hidden) + ["linear"], rng_init
    )
    value = DenseNet.create(
        [aug_dim, *cfg.hidden, 1], ["tanh"] * len(cfg.hidden) + ["linear"], rng_init
    )
    model = None
    if cfg.model_enabled:
        spec = QuantileSpec(q=cfg.q, huber_k=cfg.huber_k)
        model = DynamicsModel.create(base_dim, n_actions, cfg.model_hidden, spec, rng_init)
    opt_p = Adam(policy, cfg.lr_policy)
    opt_v = Adam(value, cfg.lr_value)
    opts_m = (
        {
            "trunk": Adam(model.trunk, cfg.lr_model),
            "head_obs": Adam(model.head_obs, cfg.lr_model),
            "head_rew": Adam(model.head_rew, cfg.lr_model),
        }
        if model is not None
        else None
    )
    agent = Agent(cfg, policy, value, model, obs_scale)
    buffer = TransitionBuffer(cfg.buffer_cap, base_dim)

    curve = []
    diverged = 0
    real_t = 0
    obs_n = np.asarray(env.reset()) / obs_scale
    final_eval = float("nan")

    for update in range(cfg.updates):
        past_warmup = real_t >= cfg.warmup_b
        # ---- collect one rollout of real transitions
        base_s = np.zeros((cfg.rollout_len, base_dim))
        base_s2 = np.zeros((cfg.rollout_len, base_dim))
        acts = np.zeros(cfg.rollout_len, dtype=np.int64)
        rews = np.zeros(cfg.rollout_len)
        dones = np.zeros(cfg.rollout_len)
        aug_s = np.zeros((cfg.rollout_len, aug_dim))
        rollout_reward = 0.0
        for i in range(cfg.rollout_len):
            aug = forecast_augment(model, policy, obs_n[None, :], cfg, past_warmup)[0]
            a, _ = policy_act(policy, aug, rng_act)
            nxt, rew, done = env.step(a)
            nxt_n = np.asarray(nxt) / obs_scale
            r_scaled = rew / cfg.reward_scale
            base_s[i] = obs_n
            base_s2[i] = nxt_n
            acts[i] = a
            rews[i] = r_scaled
            dones[i] = float(done)
            aug_s[i] = aug
            buffer.add(obs_n, a, r_scaled, nxt_n, float(done))
            rollout_reward += rew
            real_t += 1
            obs_n = np.asarray(env.reset()) / obs_scale if done else nxt_n
        aug_s2 = forecast_augment(model, policy, base_s2, cfg, past_warmup)

        # ---- model-free update on the real rollout
        batch = {"obs": aug_s, "act": acts, "rew": rews, "obs2": aug_s2, "done": dones}
        stats = ppo_update(policy, value, batch, cfg, opt_p, opt_v, rng_ppo)
        if stats["diverged"]:
            diverged += 1
            opt_p.lr *= 0.5
            opt_v.lr *= 0.5

        # ---- supervised model update on replayed transitions
        loss_model = float("nan")
        if model is not None:
            for _ in range(cfg.model_batches):
                idx = buffer.sample_indices(rng_model, cfg.minibatch)
                loss_model = model_update(
                    model,
                    {
                        "obs": buffer.obs[idx],
                        "act": buffer.act[idx],
                        "rew": buffer.rew[idx],
                        "obs2": buffer.obs2[idx],
                    },
                    opts_m,
                )

        # ---- planning: PPO on one-step simulated transitions
        if model is not None and cfg.plan_n > 0 and real_t >= cfg.warmup_b:
            k = cfg.plan_n * cfg.rollout_len
            idx = buffer.sample_indices(rng_plan, k)
            start = buffer.obs[idx]
            start_aug = forecast_augment(model, policy, start, cfg, True)
            probs, _ = policy_probs(policy, start_aug)
            u = rng_plan.random((k, 1))
            plan_acts = (np.cumsum(probs, axis=1) < u).sum(axis=1)
            plan_acts = np.minimum(plan_acts, n_actions - 1)
            sim_next, sim_rew = model.sample(start, plan_acts, rng_plan)
            sim_next_aug = forecast_augment(model, policy, sim_next, cfg, True)
            plan_batch = {
                "obs": start_aug,
                "act": plan_acts,
                "rew": sim_rew,
                "obs2": sim_next_aug,
                "done": np.zeros(k),
            }
            plan_stats = ppo_update(policy, value, plan_batch, cfg, opt_p, opt_v, rng_plan_ppo)
            if plan_stats["diverged"]:
                diverged += 1
                opt_p.lr *= 0.5
                opt_v.lr *= 0.5

        # ---- periodic greedy evaluation
        ret_eval = float("nan")
        if eval_env_factory is not None and (
            (update + 1) % cfg.eval_every == 0 or update == cfg.updates - 1
        ):
            ret_eval = _evaluate(eval_env_factory(), agent, past_warmup)
            final_eval = ret_eval
        curve.append(
            {
                "update": update,
                "step": real_t,
                "return_train": rollout_reward,
                "return_eval": ret_eval,
                "kl": stats["kl"],
                "loss_policy": stats["loss_policy"],
                "loss_value": stats["loss_value"],
                "loss_model": loss_model,
            }
        )

    return TrainResult(
        policy=policy,
        value=value,
        model=model,
        curve=curve,
        buffer=buffer,
        cfg=cfg,
        obs_scale=obs_scale,
        final_eval=final_eval,
        diverged=diverged,
    )
