"""The full two-stage model: Stage I channels, fusion, Stage II and the shared decoder."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .first_order import MotionEnergyBank, stage1_forward, to_gray
from .graph import FlowDecoder, GatedUpdateUnit, MotionGraph, stage2_forward
from .higher_order import FusionLayer, HigherOrderChannel
from .tensor import Tensor
from .tensor.checkpoint import load_checkpoint, save_checkpoint

CHANNELS = ("first_order", "dual")


@dataclass
class ModelOutput:
    flows: list  # F_0 (Stage I decode) then one per Stage II iteration, each [B, 2, H, W]
    energies: dict = field(default_factory=dict)  # "E1", "E2", "Em", then "E^1".. per iteration
    adjacency: Tensor | None = None


class DualMotionModel:
    """Two-stage motion model.

    ``channel="first_order"`` feeds Stage II with E1 alone; ``"dual"`` adds the
    higher-order channel and fuses both. The same decoder instance decodes the
    Stage I energies and every Stage II iteration.
    """

    def __init__(self, channel: str = "dual", seed: int = 0, dtype=np.float32, iterations: int = 4):
        if channel not in CHANNELS:
            raise ValueError(f"channel must be one of {CHANNELS}, got {channel!r}")
        self.channel = channel
        self.seed = seed
        self.iterations = iterations
        self.dtype = np.dtype(dtype)
        ss = np.random.SeedSequence(seed).spawn(5)
        seeds = [int(s.generate_state(1)[0]) for s in ss]
        self.bank = MotionEnergyBank(seed=seeds[0], dtype=dtype)
        self.hoc = HigherOrderChannel(seed=seeds[1], dtype=dtype) if channel == "dual" else None
        self.fusion = FusionLayer(dtype=dtype) if channel == "dual" else None
        self.graph = MotionGraph(seed=seeds[2], dtype=dtype)
        self.gru = GatedUpdateUnit(seed=seeds[3], dtype=dtype)
        self.decoder = FlowDecoder(seed=seeds[4], dtype=dtype)

    # ---------------------------------------------------------- parameters
    def modules(self) -> dict:
        mods = {"fo": self.bank, "graph": self.graph, "gru": self.gru, "decoder": self.decoder}
        if self.channel == "dual":
            mods["ho"] = self.hoc
            mods["fusion"] = self.fusion
        return mods

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for prefix, mod in self.modules().items():
            for k, v in mod.parameters().items():
                out[f"{prefix}.{k}"] = v
        return out

    def clamp(self) -> None:
        """Project every constrained parameter back to its valid range."""
        self.bank.clamp()
        self.graph.clamp()
        self.decoder.clamp()
        if self.channel == "dual":
            self.hoc.clamp()
            self.fusion.clamp()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"state is missing parameters: {sorted(missing)[:5]}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise ValueError(f"parameter {k}: shape {state[k].shape} does not match {p.shape}")
            p.data = np.asarray(state[k], dtype=self.dtype).copy()

    def meta(self) -> dict:
        return {"channel": self.channel, "seed": self.seed, "iterations": self.iterations, "dtype": self.dtype.name}

    def save(self, path, extra: dict | None = None) -> None:
        meta = self.meta()
        meta.update(extra or {})
        save_checkpoint(path, self.state_dict(), meta)

    @classmethod
    def load(cls, path) -> "DualMotionModel":
        params, meta = load_checkpoint(path)
        model = cls(channel=meta["channel"], seed=meta.get("seed", 0), dtype=np.dtype(meta.get("dtype", "float32")),
                    iterations=meta.get("iterations", 4))
        model.load_state_dict(params)
        return model

    # ------------------------------------------------------------- forward
    def energies(self, rgb) -> dict[str, Tensor]:
        """Stage I energies from RGB sequences [B, T, 3, H, W] (values in [0, 1])."""
        rgb = np.asarray(rgb, dtype=self.dtype)
        if rgb.ndim == 4:
            rgb = rgb[None]
        gray = to_gray(rgb).astype(self.dtype)
        out = {"E1": stage1_forward(self.bank, gray)}
        if self.channel == "dual":
            out["E2"] = self.hoc.forward(rgb)
            out["Em"] = self.fusion.forward(out["E1"], out["E2"])
        else:
            out["Em"] = out["E1"]
        return out

    def forward(self, rgb, iterations: int | None = None) -> ModelOutput:
        iterations = self.iterations if iterations is None else iterations
        rgb = np.asarray(rgb, dtype=self.dtype)
        if rgb.ndim == 4:
            rgb = rgb[None]
        size = rgb.shape[-2:]
        E = self.energies(rgb)
        flows = [self.decoder(E["Em"], size)]
        s2 = stage2_forward(E["Em"], self.graph, self.gru, self.decoder, iterations, size)
        flows.extend(s2.flows)
        for i, st in enumerate(s2.states, start=1):
            E[f"E^{i}"] = st
        return ModelOutput(flows, E, s2.adjacency)

    __call__ = forward

    def predict(self, rgb, iterations: int | None = None) -> np.ndarray:
        """Final flow as [B, H, W, 2] numpy array, no graph recorded."""
        with T.no_grad():
            out = self.forward(rgb, iterations)
        return np.moveaxis(out.flows[-1].data, 1, -1)
