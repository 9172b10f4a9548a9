from pathlib import Path
from typing import Dict, List

import numpy as np
import pandas as pd

from dwm_lab.algo.errors import TrainingDivergedError
from dwm_lab.algo.utils import write_table
from dwm_lab.env import get_environment
from dwm_lab.env.watermark_env import WatermarkEnvironment
from dwm_lab.log import get_logger
from dwm_lab.rl.checkpoint import load_bundle, save_checkpoint
from dwm_lab.rl.ddpg_agent import AgentBundle, DdpgHyperparameters, train_step
from dwm_lab.run_config import RunConfig

LEARNING_CURVE_COLUMNS = ["episode", "return", "ou_sigma", "critic1_loss", "critic2_loss", "actor_loss",
                          "alarms", "energy", "mean_U"]


class LabTrain:
    """
    Trains the DDPG watermark policy on the configured twin. Every episode uses its own replication stream of the
    training seed; the checkpoint is rewritten every ddpg.checkpoint_every episodes and at the end.
    """

    def __init__(self, run_config: RunConfig, args: List[str] = None):
        self.run_config = run_config
        self.args = args or []
        self.output_dir = run_config.output_dir / "train"
        self.episodes = run_config.ddpg.episodes or run_config.twin.train_episodes
        self.checkpoint_path = self.output_dir / run_config.ddpg.checkpoint_name

    def _environment(self, episode: int) -> WatermarkEnvironment:
        return get_environment(self.run_config, replication=episode, alpha=self.run_config.ddpg.alpha)

    def _new_bundle(self, env: WatermarkEnvironment) -> AgentBundle:
        hyper = DdpgHyperparameters.from_section(self.run_config.ddpg)
        return AgentBundle.create(env.observation_dim, env.c, self.run_config.twin.hidden, self.run_config.twin.u_max,
                                  hyper, seed=self.run_config.config.seed)

    def run(self) -> Path:
        env = self._environment(0)
        bundle = self._new_bundle(env)
        start = 0
        if self.run_config.ddpg.resume:
            start = load_bundle(self.run_config.ddpg.resume, bundle, self.run_config.env_hash)
            get_logger().info(f"Resuming training from {self.run_config.ddpg.resume} at episode {start}")

        curve: List[Dict[str, float]] = []
        for episode in range(start, self.episodes):
            env = self._environment(episode)
            try:
                row = self._train_episode(env, bundle, episode)
            except TrainingDivergedError as e:
                self._dump_batch(e, episode)
                raise
            curve.append(row)
            get_logger().info(f"Episode {episode + 1}/{self.episodes}: return {row['return']:.4f}, "
                              f"mean U {row['mean_U']:.3e}")
            get_logger().info(f"train episode {episode + 1}", telemetry=True, episode=row)
            if (episode + 1) % self.run_config.ddpg.checkpoint_every == 0:
                save_checkpoint(self.checkpoint_path, bundle, self.run_config.env_hash, episode + 1)

        save_checkpoint(self.checkpoint_path, bundle, self.run_config.env_hash, self.episodes)
        write_table(pd.DataFrame(curve, columns=LEARNING_CURVE_COLUMNS),
                    self.output_dir / f"learning_curve_from{start:04d}.csv",
                    {"config_hash": self.run_config.hash, "env_hash": self.run_config.env_hash})
        get_logger().info(f"Policy checkpoint written to {self.checkpoint_path}")
        return self.checkpoint_path

    def _train_episode(self, env: WatermarkEnvironment, bundle: AgentBundle, episode: int) -> Dict[str, float]:
        scale = self.run_config.twin.state_scale
        batch_size = self.run_config.ddpg.batch_size
        state = env.reset(recording_policy=bundle.policy(scale))
        bundle.noise.reset()
        losses: List[Dict[str, float]] = []
        actions = []
        done = False
        while not done:
            obs = state.observation(scale)
            if bundle.normalizer is not None:
                bundle.normalizer.update(obs)
            U = bundle.act(obs, explore=True)
            actions.append(float(np.mean(U)))
            state, reward, done, _ = env.step_decision(np.diag(U))
            bundle.buffer.add(obs, U / bundle.u_max, reward, state.observation(scale), done)
            if len(bundle.buffer) >= batch_size:
                losses.append(train_step(bundle, bundle.buffer.sample(batch_size, bundle.rng)))
        result = env.result()
        sigma = bundle.noise.sigma
        bundle.noise.end_episode()
        mean_loss = {key: float(np.mean([loss[key] for loss in losses])) if losses else float("nan")
                     for key in ("critic1", "critic2", "actor")}
        return {
            "episode": episode,
            "return": result.total_return,
            "ou_sigma": sigma,
            "critic1_loss": mean_loss["critic1"],
            "critic2_loss": mean_loss["critic2"],
            "actor_loss": mean_loss["actor"],
            "alarms": int(result.alarms.sum()),
            "energy": result.energy,
            "mean_U": float(np.mean(actions)) if actions else 0.0,
        }

    def _dump_batch(self, error: TrainingDivergedError, episode: int):
        path = self.output_dir / "diverged_batch.npz"
        path.parent.mkdir(parents=True, exist_ok=True)
        batch = getattr(error, "batch", None)
        if batch is not None:
            with open(path, "wb") as f:
                np.savez(f, episode=np.array(episode), **batch.as_arrays())
        get_logger().error(f"Training diverged in episode {episode}: {error}. Offending batch dumped to {path}")
