"""Stage-wise training and checkpoints.

Stage 1 pretrains the appearance stream on RGB frames, stage 2 the motion
stream on flow images, and stage 3 fine-tunes the full two-stream network
initialized from both.
"""

from __future__ import annotations

import copy
import logging
import random
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch
from torch import nn
from torch.utils.data import DataLoader
from tqdm import tqdm

from .backbone import Branch
from .config import PSNetConfig, TrainStageSpec
from .data import SaliencyDataset, VideoSample, load_dataset
from .exceptions import CheckpointError, ConfigError, NonFiniteLossError
from .losses import LossBundle, stream_loss, total_loss
from .network import PSNet, SingleStreamNet

logger = logging.getLogger(__name__)

STAGE_BRANCH = {1: Branch.APPEARANCE, 2: Branch.MOTION}
# parameter-name prefixes that form one component, by depth of the dotted name
_COMPONENT_DEPTH = {"encoders": 2, "projections": 2, "branches": 3}


def component_of(name: str) -> str:
    parts = name.split(".")
    return ".".join(parts[: _COMPONENT_DEPTH.get(parts[0], 1)])


@dataclass
class Checkpoint:
    """Model state split into components plus everything needed to resume."""

    components: dict[str, dict[str, torch.Tensor]]
    config: dict[str, Any]
    stage: int
    global_step: int = 0
    epoch: int = 0
    rng_state: dict[str, Any] = field(default_factory=dict)
    optimizer: dict[str, Any] | None = None
    scheduler: dict[str, Any] | None = None
    path: Path | None = None

    @classmethod
    def from_model(
        cls, model: nn.Module, config: PSNetConfig, stage: int, **kwargs: Any
    ) -> Checkpoint:
        components: dict[str, dict[str, torch.Tensor]] = {}
        for name, tensor in model.state_dict().items():
            components.setdefault(component_of(name), {})[name] = tensor.detach().clone()
        return cls(components=components, config=config.to_dict(), stage=stage, **kwargs)

    def state_dict(self) -> dict[str, torch.Tensor]:
        merged: dict[str, torch.Tensor] = {}
        for part in self.components.values():
            merged.update(part)
        return merged

    def prefixed(self, prefix: str) -> dict[str, torch.Tensor]:
        """Entries under ``prefix`` with the prefix stripped."""
        cut = len(prefix) + 1
        return {k[cut:]: v for k, v in self.state_dict().items() if k.startswith(prefix + ".")}

    def to_dict(self) -> dict[str, Any]:
        return {
            "components": self.components,
            "config": self.config,
            "stage": self.stage,
            "global_step": self.global_step,
            "epoch": self.epoch,
            "rng_state": self.rng_state,
            "optimizer": self.optimizer,
            "scheduler": self.scheduler,
        }


def save_checkpoint(checkpoint: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(checkpoint.to_dict(), path)
    checkpoint.path = path
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"Checkpoint not found: {path}")
    try:
        raw = torch.load(path, map_location="cpu", weights_only=True)
        return Checkpoint(**raw, path=path)
    except CheckpointError:
        raise
    except Exception as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e


def check_compatible(checkpoint: Checkpoint, config: PSNetConfig) -> None:
    """Decoder width and backbone must match for parameters to load."""
    saved = checkpoint.config.get("model", {})
    current = config.to_dict()["model"]
    for key in ("decoder_width", "dyn_kernel_size"):
        if saved.get(key) != current[key]:
            raise CheckpointError(
                f"Checkpoint {checkpoint.path} has {key}={saved.get(key)}, config has {current[key]}"
            )
    saved_bb, current_bb = saved.get("backbone", {}), current["backbone"]
    for key in ("name", "width", "depth"):
        if key == "name" or current_bb["name"] == "tiny":
            if saved_bb.get(key) != current_bb[key]:
                raise CheckpointError(
                    f"Checkpoint {checkpoint.path} has backbone {key}={saved_bb.get(key)}, "
                    f"config has {current_bb[key]}"
                )


def build_model(config: PSNetConfig, stage: int) -> nn.Module:
    if stage == 3:
        return PSNet(config.model)
    return SingleStreamNet(config.model, STAGE_BRANCH[stage])


def load_model(checkpoint: Checkpoint, config: PSNetConfig | None = None) -> nn.Module:
    """Rebuild the network a checkpoint was saved from and load its parameters."""
    if config is None:
        config = PSNetConfig.from_dict(checkpoint.config)
    else:
        check_compatible(checkpoint, config)
    model = build_model(config, checkpoint.stage)
    try:
        model.load_state_dict(checkpoint.state_dict())
    except RuntimeError as e:
        raise CheckpointError(f"Checkpoint {checkpoint.path} does not fit the model: {e}") from e
    return model


def init_from_streams(model: PSNet, spatial: Checkpoint, temporal: Checkpoint) -> None:
    """Copy stage-1 and stage-2 parameters into the matching branches of ``model``."""
    for checkpoint, stage in ((spatial, 1), (temporal, 2)):
        if checkpoint.stage != stage:
            raise CheckpointError(
                f"{checkpoint.path} is a stage-{checkpoint.stage} checkpoint, expected stage {stage}"
            )
        branch = STAGE_BRANCH[stage]
        for name, module in model.stream_modules(branch).items():
            state = checkpoint.prefixed(name)
            if not state:
                raise CheckpointError(f"{checkpoint.path} has no '{name}' parameters")
            try:
                module.load_state_dict(state)
            except RuntimeError as e:
                raise CheckpointError(
                    f"Cannot load '{name}' from {checkpoint.path} into the {branch.value} branch: {e}"
                ) from e
        logger.info("Initialized the %s branch from %s", branch.value, checkpoint.path)


def finite_state(state: dict[str, torch.Tensor]) -> bool:
    return all(
        bool(torch.isfinite(t).all()) for t in state.values() if t.is_floating_point()
    )


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)


@dataclass
class StepRecord:
    step: int
    epoch: int
    lr: float
    loss: float
    terms: dict[str, float]


class StageTrainer:
    """Runs one training stage with SGD and a step learning-rate schedule."""

    def __init__(
        self,
        config: PSNetConfig,
        spec: TrainStageSpec,
        sequences: Sequence[Sequence[VideoSample]] | None = None,
        progress: bool = False,
    ) -> None:
        self.config = config
        self.spec = spec
        self.progress = progress
        seed_everything(spec.seed)
        self.model = build_model(config, spec.stage)
        if spec.stage == 3:
            self._init_stage3()
        if sequences is None:
            sequences = self._load_sequences()
        modalities = (STAGE_BRANCH[spec.stage],) if spec.stage in STAGE_BRANCH else tuple(Branch)
        self.dataset = SaliencyDataset(
            sequences, config.data, augment=spec.augment, seed=spec.seed, modalities=modalities
        )
        self.shuffle = torch.Generator().manual_seed(spec.seed)
        self.loader = DataLoader(
            self.dataset,
            batch_size=spec.batch_size,
            shuffle=True,
            generator=self.shuffle,
            num_workers=config.data.num_workers,
        )
        self.optimizer = torch.optim.SGD(
            self.model.parameters(),
            lr=spec.lr,
            momentum=spec.momentum,
            weight_decay=spec.weight_decay,
        )
        self.scheduler = torch.optim.lr_scheduler.StepLR(
            self.optimizer, step_size=spec.lr_decay_period, gamma=spec.lr_decay_factor
        )
        self.global_step = 0
        self.epoch = 0
        self.history: list[StepRecord] = []
        self.last_good: Path | None = None
        self._good_state: tuple[int, dict, dict] | None = None
        self._snapshot()

    def _load_sequences(self) -> list:
        if self.spec.dataset_root is None:
            raise ConfigError(f"stages.{self.spec.stage}.dataset_root is not set")
        require = {1: ("rgb", "gt"), 2: ("flow", "gt"), 3: ("rgb", "flow", "gt")}[self.spec.stage]
        return load_dataset(
            self.spec.dataset_root, input_size=self.config.model.input_size, require=require
        )

    def _init_stage3(self) -> None:
        spec = self.spec
        if spec.from_scratch:
            logger.info("Stage 3 starts from scratch")
            return
        if spec.spatial_checkpoint is None or spec.temporal_checkpoint is None:
            raise ConfigError(
                "Stage 3 needs spatial_checkpoint and temporal_checkpoint (or from_scratch: true)"
            )
        spatial = load_checkpoint(spec.spatial_checkpoint)
        temporal = load_checkpoint(spec.temporal_checkpoint)
        for ckpt in (spatial, temporal):
            check_compatible(ckpt, self.config)
        init_from_streams(self.model, spatial, temporal)

    @property
    def checkpoint_dir(self) -> Path:
        return Path(self.spec.checkpoint_dir)

    def checkpoint(self) -> Checkpoint:
        return Checkpoint.from_model(
            self.model,
            self.config,
            self.spec.stage,
            global_step=self.global_step,
            epoch=self.epoch,
            rng_state={"torch": torch.get_rng_state(), "shuffle": self.shuffle.get_state()},
            optimizer=self.optimizer.state_dict(),
            scheduler=self.scheduler.state_dict(),
        )

    def save(self, name: str) -> Path:
        path = save_checkpoint(self.checkpoint(), self.checkpoint_dir / name)
        logger.info("Saved checkpoint %s", path)
        return path

    def resume(self, checkpoint: Checkpoint) -> None:
        check_compatible(checkpoint, self.config)
        if checkpoint.stage != self.spec.stage:
            raise CheckpointError(
                f"Cannot resume stage {self.spec.stage} from a stage-{checkpoint.stage} checkpoint"
            )
        self.model.load_state_dict(checkpoint.state_dict())
        if checkpoint.optimizer is not None:
            self.optimizer.load_state_dict(checkpoint.optimizer)
        if checkpoint.scheduler is not None:
            self.scheduler.load_state_dict(checkpoint.scheduler)
        if "torch" in checkpoint.rng_state:
            torch.set_rng_state(checkpoint.rng_state["torch"])
        if "shuffle" in checkpoint.rng_state:
            self.shuffle.set_state(checkpoint.rng_state["shuffle"])
        self.global_step = checkpoint.global_step
        self.epoch = checkpoint.epoch
        self.last_good = checkpoint.path
        self._snapshot()
        logger.info("Resumed stage %d at step %d from %s", self.spec.stage, self.global_step,
                    checkpoint.path)

    def _snapshot(self) -> None:
        """Remember the current weights and optimizer state if every weight is finite."""
        state = self.model.state_dict()
        if not finite_state(state):
            return
        self._good_state = (
            self.global_step,
            copy.deepcopy(state),
            copy.deepcopy(self.optimizer.state_dict()),
        )

    def _restore_good_state(self) -> bool:
        """Roll the model back to the last finite snapshot; False when there is none."""
        if self._good_state is None:
            return False
        step, model_state, optimizer_state = self._good_state
        self.model.load_state_dict(model_state)
        self.optimizer.load_state_dict(optimizer_state)
        self.global_step = step
        return True

    def compute_loss(self, batch: dict[str, torch.Tensor]) -> LossBundle:
        model_cfg = self.config.model
        if self.spec.stage == 3:
            output = self.model(batch["rgb"], batch["flow"])
            return total_loss(output, batch["gt"], model_cfg.lambda1, model_cfg.lambda2)
        branch = STAGE_BRANCH[self.spec.stage]
        image = batch["rgb"] if branch is Branch.APPEARANCE else batch["flow"]
        return stream_loss(self.model(image), batch["gt"], branch.value, model_cfg.lambda1)

    def step(self, batch: dict[str, torch.Tensor]) -> LossBundle:
        self.model.train()
        self.optimizer.zero_grad()
        try:
            bundle = self.compute_loss(batch)
        except NonFiniteLossError as e:
            if self._restore_good_state():
                self.last_good = self.save(f"stage{self.spec.stage}_step{self.global_step}.pt")
            raise NonFiniteLossError(e.term, self.last_good) from e
        bundle.l_total.backward()
        self.optimizer.step()
        self.global_step += 1
        self._snapshot()
        lr = self.optimizer.param_groups[0]["lr"]
        self.history.append(
            StepRecord(self.global_step, self.epoch, lr, bundle.l_total.item(), bundle.terms)
        )
        logger.info(
            "step=%d stage=%d epoch=%d lr=%.6g %s",
            self.global_step, self.spec.stage, self.epoch, lr, bundle.log_fields(),
        )
        every = self.spec.checkpoint_every
        if every and self.global_step % every == 0:
            self.last_good = self.save(f"stage{self.spec.stage}_step{self.global_step}.pt")
        return bundle

    def _done(self) -> bool:
        max_steps = self.spec.max_steps
        return self.epoch >= self.spec.max_epochs or (
            max_steps is not None and self.global_step >= max_steps
        )

    def fit(self) -> Checkpoint:
        epochs = tqdm(
            total=self.spec.max_epochs, initial=self.epoch, disable=not self.progress,
            desc=f"stage {self.spec.stage}",
        )
        with epochs:
            while not self._done():
                self.dataset.set_epoch(self.epoch)
                for batch in self.loader:
                    self.step(batch)
                    if self._done():
                        break
                else:
                    self.epoch += 1
                    self.scheduler.step()
                    epochs.update(1)
        path = self.save(f"stage{self.spec.stage}_final.pt")
        return load_checkpoint(path)

    def losses(self) -> list[float]:
        return [r.loss for r in self.history]


def train_stage(
    spec: TrainStageSpec,
    config: PSNetConfig,
    sequences: Sequence[Sequence[VideoSample]] | None = None,
    resume: str | Path | None = None,
    progress: bool = False,
) -> Checkpoint:
    """Train one stage and return its final checkpoint."""
    trainer = StageTrainer(config, spec, sequences, progress=progress)
    if resume is not None:
        trainer.resume(load_checkpoint(resume))
    return trainer.fit()
