"""Iterative soft-braid refiner

One set of weights is shared by all refinement iterations:

    phi_enc   initial trajectory encoder (centered origin, heading, lifted local future)
    phi_tt    soft-braid trajectory-trajectory feature encoder, 10 -> D
    attn_tt   cross-attention over neighboring trajectories of the same mode
    phi_tl    lane key encoder, 2P + 6 -> D
    attn_tl   cross-attention over nearby lanes
    head      offset head, D -> 2 T+, in the agent frame

Each iteration attends trajectory-to-trajectory, then trajectory-to-lane,
predicts local offsets, rotates them to the global frame and adds them to
the previous trajectories. Topology is recomputed from the refined
trajectories before the next iteration unless ``topology_update`` is off.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from src.app.nn.archive import ParameterArchive
from src.app.nn.autodiff import LayerNormalize, Parameter, Tensor, concat, no_grad
from src.app.nn.layers import (
    Mlp3Params,
    MhcaParams,
    init_mhca,
    init_mlp3,
    mhca,
    mlp3,
    named_parameters,
)
from src.app.refiner.batching import SceneBatch
from src.app.refiner.features import SceneTopology, rotate_rows, scene_topology
from src.app.scene.topology import TL_FEATURE_DIM, TT_FEATURE_DIM
from src.config.run_config import RefinerConfig
from src.core.errors import ConfigError, ShapeError
from src.core.logging import get_logger

logger = get_logger(__name__)


def positional_lift(coords: np.ndarray, mode: str, bands: int, scale: float) -> np.ndarray:
    """Lift each coordinate c to [c/s, sin(c 2^b / s), cos(c 2^b / s) for b < bands]"""
    scaled = coords / scale
    if mode == "raw":
        return scaled
    freqs = 2.0 ** np.arange(bands)
    angles = scaled[..., None] * freqs
    lifted = np.concatenate([scaled[..., None], np.sin(angles), np.cos(angles)], axis=-1)
    return lifted.reshape(coords.shape[:-1] + (-1,))


def encoder_input_dim(config: RefinerConfig, future_len: int) -> int:
    per_coord = 1 if config.pe_mode == "raw" else 1 + 2 * config.pe_bands
    return 3 + future_len * 2 * per_coord


@dataclass
class RefinementResult:
    """Refined trajectories of every iteration plus the topology each one used"""

    outputs: List[Tensor]
    topologies: List[SceneTopology] = field(default_factory=list)

    @property
    def final(self) -> Tensor:
        return self.outputs[-1]


class SoftBraidRefiner:
    """Weights and forward pass of the refiner"""

    def __init__(self, config: RefinerConfig, future_len: int, seed: int = 0):
        if future_len < 3:
            raise ConfigError(f"future_len must be at least 3, got {future_len}")
        self.config = config
        self.future_len = future_len
        self.seed = seed
        rng = np.random.default_rng(seed)
        d = config.embed_dim
        self.phi_enc: Mlp3Params = init_mlp3(rng, encoder_input_dim(config, future_len), d, d)
        self.phi_tt: Mlp3Params = init_mlp3(rng, TT_FEATURE_DIM, d, d)
        self.attn_tt: MhcaParams = init_mhca(rng, d, config.heads, residual_norm=config.residual_norm)
        self.phi_tl: Mlp3Params = init_mlp3(rng, 2 * config.lane_points + TL_FEATURE_DIM, d, d)
        self.attn_tl: MhcaParams = init_mhca(rng, d, config.heads, residual_norm=config.residual_norm)
        self.head: Mlp3Params = init_mlp3(rng, d, d, 2 * future_len)
        self._parameters = named_parameters(
            phi_enc=self.phi_enc,
            phi_tt=self.phi_tt,
            attn_tt=self.attn_tt,
            phi_tl=self.phi_tl,
            attn_tl=self.attn_tl,
            head=self.head,
        )

    # -- parameters ------------------------------------------------------------

    def parameters(self) -> Dict[str, Parameter]:
        return self._parameters

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self._parameters.values()))

    def zero_grad(self) -> None:
        for param in self._parameters.values():
            param.zero_grad()

    def zero_head(self) -> None:
        """Zero the offset head so every iteration returns its input unchanged"""
        for layer in self.head.layers:
            layer.weight.data[...] = 0.0
            layer.bias.data[...] = 0.0

    def archive_config(self) -> Dict:
        return {
            "refiner": self.config.model_dump(mode="json"),
            "future_len": self.future_len,
            "seed": self.seed,
        }

    def to_archive(self, step: int = 0, extra: Optional[Dict[str, np.ndarray]] = None) -> ParameterArchive:
        tensors = {name: p.data.copy() for name, p in self._parameters.items()}
        if extra:
            tensors.update(extra)
        return ParameterArchive(tensors=tensors, config=self.archive_config(), step=step)

    def load_parameters(self, arrays: Dict[str, np.ndarray]) -> None:
        missing = sorted(set(self._parameters) - set(arrays))
        if missing:
            raise ShapeError(f"checkpoint is missing parameters: {', '.join(missing[:5])}")
        for name, param in self._parameters.items():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != param.shape:
                raise ShapeError(f"{name}: checkpoint shape {value.shape} != model shape {param.shape}")
            param.data[...] = value

    @classmethod
    def from_archive(cls, archive: ParameterArchive) -> "SoftBraidRefiner":
        try:
            config = RefinerConfig.model_validate(archive.config["refiner"])
            future_len = int(archive.config["future_len"])
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"checkpoint config is incomplete: {e}") from e
        model = cls(config, future_len, seed=int(archive.config.get("seed", 0)))
        model.load_parameters(archive.parameters())
        logger.debug(
            "Refiner restored from checkpoint",
            extra={"step": archive.step, "parameters": model.parameter_count()},
        )
        return model

    # -- forward ---------------------------------------------------------------

    def encode_initial(self, batch: SceneBatch) -> Tensor:
        """F0 of shape (B, K, N, D) from centered origins, headings and local futures"""
        if batch.future_len != self.future_len:
            raise ShapeError(f"model expects T+={self.future_len}, batch has {batch.future_len}")
        B, K, N = batch.modes.shape[:3]
        cfg = self.config
        pe = positional_lift(batch.local_modes(), cfg.pe_mode, cfg.pe_bands, cfg.pe_scale_m)
        pe = pe.reshape(B, K, N, -1)
        centered = np.broadcast_to(batch.centered_origins()[:, None], (B, K, N, 2))
        heading = np.broadcast_to(batch.headings[:, None, :, None], (B, K, N, 1))
        inputs = np.concatenate([centered, heading, pe], axis=-1)
        return mlp3(self.phi_enc, Tensor(inputs))

    def tt_attention(self, embeddings: Tensor, topology: SceneTopology) -> Tensor:
        """Attend each (mode, agent) over its trajectory neighbors of the same mode"""
        keys = embeddings.reshape(embeddings.shape[:2] + (1,) + embeddings.shape[2:])
        keys = keys + mlp3(self.phi_tt, topology.tt_features)
        if self.config.residual_norm:
            keys = LayerNormalize.apply(keys)
        return mhca(self.attn_tt, embeddings, keys, keys, mask=topology.tt_mask)

    def lane_keys(self, batch: SceneBatch, topology: SceneTopology) -> Tensor:
        """(B, K, N, M, 2P + 6) lane inputs: local lane points then the lane feature"""
        B, K, N, M = topology.tl_mask.shape
        points = batch.lane_points_local.reshape(B, 1, N, M, -1)
        points = np.broadcast_to(points, (B, K, N, M, points.shape[-1])).copy()
        return concat([Tensor(points), topology.tl_features], axis=-1)

    def tl_attention(self, embeddings: Tensor, lane_keys: Tensor, topology: SceneTopology) -> Tensor:
        """Attend each (mode, agent) over its nearby lanes"""
        keys = mlp3(self.phi_tl, lane_keys)
        return mhca(self.attn_tl, embeddings, keys, keys, mask=topology.tl_mask)

    def refine_once(
        self,
        embeddings: Tensor,
        trajs: Tensor,
        batch: SceneBatch,
        topology: SceneTopology,
    ):
        """One iteration: returns (F_l, Y_l)"""
        if self.config.use_tt_attention:
            embeddings = self.tt_attention(embeddings, topology)
        if self.config.use_tl_attention:
            embeddings = self.tl_attention(embeddings, self.lane_keys(batch, topology), topology)
        B, K, N = trajs.shape[:3]
        local = mlp3(self.head, embeddings).reshape(B, K, N, self.future_len, 2)
        to_global = np.swapaxes(batch.rotations, -1, -2)[:, None]
        offsets = rotate_rows(local, to_global[:, :, :, None]) * batch.agent_mask[:, None, :, None, None].astype(np.float64)
        return embeddings, trajs + offsets

    def refine(self, batch: SceneBatch, keep_topology: bool = False) -> RefinementResult:
        """Run all iterations from the batch's coarse modes"""
        trajs = Tensor(batch.modes)
        embeddings = self.encode_initial(batch)
        cached: Optional[SceneTopology] = None
        outputs: List[Tensor] = []
        topologies: List[SceneTopology] = []
        for _ in range(self.config.iterations):
            if self.config.topology_update or cached is None:
                topology = scene_topology(trajs, batch, self.config)
                if not self.config.topology_update:
                    cached = topology
            else:
                topology = cached
            embeddings, trajs = self.refine_once(embeddings, trajs, batch, topology)
            outputs.append(trajs)
            if keep_topology:
                topologies.append(topology)
        return RefinementResult(outputs=outputs, topologies=topologies)

    def predict(self, batch: SceneBatch) -> np.ndarray:
        """Final refined modes (B, K, N, T, 2) without recording a graph"""
        with no_grad():
            return self.refine(batch).final.data.copy()
