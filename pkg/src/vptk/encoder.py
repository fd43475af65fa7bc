"""Reference implementation of the coordinate visual prompt encoder.

The encoder turns a variable-length set of point/box prompts into a fixed
grid of tokens ready for an LLM's input sequence:

  1. each prompt's coordinates get a random Fourier feature encoding
     gamma(v) = [cos(2 pi B v), sin(2 pi B v)] with a frozen Gaussian
     frequency matrix B;
  2. corner-role embeddings are added (center for points, top-left and
     bottom-right for boxes) and a per-type linear layer maps both prompt
     types into one hidden width;
  3. a shared unifying linear layer plus a learnable valid-slot vector
     produce the slot embedding; empty slots are filled with a learnable
     invalid-slot vector so the output shape never depends on N;
  4. learnable start/end tokens bracket the capacity slots and everything
     passes through a two-layer GELU projector into the LLM width.

Everything runs in float64 numpy so the analytic backward pass can be
checked against central finite differences to tight tolerances. Parameter
values are quantized to the float32 grid at initialization, which keeps
the on-disk format (raw little-endian float32) a bit-exact round trip.

Params are immutable after creation; `embed_prompts` and
`encoder_backward` are pure functions, safe for concurrent use of one
shared params value.
"""

from __future__ import annotations

import io
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .geometry import BoxPrompt, FreeFormPrompt, PointPrompt, VisualPromptSet, enclosing_box

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

PARAMS_MAGIC = "VPE1"


class EmptyPromptSet(ValueError):
    """Encoder input held zero prompts."""


class CapacityExceeded(ValueError):
    """More prompts than capacity slots."""


class BadGradShape(ValueError):
    """Upstream gradient shape does not match the encoder output."""


class BadParamsFile(ValueError):
    """Parameter file is truncated, corrupt, or dimensionally incompatible."""


@dataclass(frozen=True)
class EncoderConfig:
    """Dimensions and init settings; `pe_dim` is derived as 2*num_frequencies."""

    num_frequencies: int = 64
    hidden_dim: int = 256
    llm_dim: int = 512
    capacity: int = 16
    fourier_sigma: float = 1.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.num_frequencies < 1:
            raise ValueError("num_frequencies must be >= 1")
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if self.hidden_dim < 1 or self.llm_dim < 1:
            raise ValueError("hidden_dim and llm_dim must be >= 1")

    @property
    def pe_dim(self) -> int:
        return 2 * self.num_frequencies


# Serialization order; every tensor except B is learnable.
_TENSOR_ORDER = (
    "B",
    "E_center",
    "E_tl",
    "E_br",
    "W_pt",
    "b_pt",
    "W_box",
    "b_box",
    "W_unify",
    "b_unify",
    "V_valid",
    "V_invalid",
    "T_start",
    "T_end",
    "P_W1",
    "P_b1",
    "P_W2",
    "P_b2",
)
LEARNABLE_TENSORS = tuple(n for n in _TENSOR_ORDER if n != "B")


@dataclass(frozen=True)
class EncoderParams:
    """All encoder tensors, float64 values on the float32 grid.

    B is the frozen Fourier frequency matrix and receives no gradient.
    """

    config: EncoderConfig
    tensors: dict[str, np.ndarray] = field(repr=False)

    def __post_init__(self) -> None:
        expected = set(_TENSOR_ORDER)
        if set(self.tensors) != expected:
            missing = expected.symmetric_difference(self.tensors)
            raise ValueError(f"tensor set mismatch: {sorted(missing)}")
        frozen = {}
        for name, arr in self.tensors.items():
            arr = np.asarray(arr, dtype=np.float64).copy()
            arr.setflags(write=False)
            frozen[name] = arr
        object.__setattr__(self, "tensors", frozen)

    def __getattr__(self, name: str) -> np.ndarray:
        tensors = object.__getattribute__(self, "tensors")
        if name in tensors:
            return tensors[name]
        raise AttributeError(name)

    def equals(self, other: "EncoderParams") -> bool:
        return self.config == other.config and all(
            np.array_equal(self.tensors[n], other.tensors[n]) for n in _TENSOR_ORDER
        )


@dataclass(frozen=True)
class PromptEmbeddingBatch:
    """Encoder output: a (capacity+2, llm_dim) token matrix.

    Row 0 is the start token, rows 1..capacity are prompt slots (the first
    N valid, the rest identical invalid fillers), the last row is the end
    token. `validity` flags the capacity slots only.
    """

    tokens: np.ndarray
    validity: tuple[bool, ...]

    @property
    def n_prompts(self) -> int:
        return sum(self.validity)


def _tensor_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    pe, dv, dl = cfg.pe_dim, cfg.hidden_dim, cfg.llm_dim
    return {
        "B": (cfg.num_frequencies, 2),
        "E_center": (pe,),
        "E_tl": (pe,),
        "E_br": (pe,),
        "W_pt": (dv, pe),
        "b_pt": (dv,),
        "W_box": (dv, 2 * pe),
        "b_box": (dv,),
        "W_unify": (dv, dv),
        "b_unify": (dv,),
        "V_valid": (dv,),
        "V_invalid": (dv,),
        "T_start": (dv,),
        "T_end": (dv,),
        "P_W1": (dl, dv),
        "P_b1": (dl,),
        "P_W2": (dl, dl),
        "P_b2": (dl,),
    }


def init_params(cfg: EncoderConfig) -> EncoderParams:
    """Draw fresh parameters from cfg.rng_seed.

    Weight matrices use 1/sqrt(fan_in) Gaussian scaling, vectors a small
    0.02 scale, biases 0.01; B is N(0, fourier_sigma^2) and stays frozen.
    All values are snapped to float32 before use (see module docstring).
    """
    rng = np.random.Generator(np.random.PCG64(cfg.rng_seed))
    shapes = _tensor_shapes(cfg)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in shapes.items():
        if name == "B":
            scale = cfg.fourier_sigma
        elif name.startswith("W_") or name in ("P_W1", "P_W2"):
            scale = 1.0 / np.sqrt(shape[1])
        elif name.startswith("b_") or name in ("P_b1", "P_b2"):
            scale = 0.01
        else:  # corner/validity/start/end embeddings
            scale = 0.02
        arr = rng.normal(0.0, scale, size=shape)
        tensors[name] = arr.astype(np.float32).astype(np.float64)
    return EncoderParams(config=cfg, tensors=tensors)


def fourier_encode(coord: tuple[float, float] | np.ndarray, B: np.ndarray) -> np.ndarray:
    """gamma(v) = [cos(2 pi B v), sin(2 pi B v)] for a normalized 2-D coord.

    Returns a vector of length 2m whose first m entries are cosines. The
    squared norm is always exactly m per cos^2 + sin^2 = 1.
    """
    v = np.asarray(coord, dtype=np.float64)
    phase = 2.0 * np.pi * (B @ v)
    return np.concatenate([np.cos(phase), np.sin(phase)])


def _gelu(z: np.ndarray) -> np.ndarray:
    return 0.5 * z * (1.0 + erf(z / _SQRT2))


def _gelu_grad(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(z / _SQRT2)) + z * np.exp(-0.5 * z * z) * _INV_SQRT_2PI


def _slot_embedding(prompt, p: EncoderParams) -> np.ndarray:
    """Pre-unify embedding e_i for one prompt (free-form reduced to its box)."""
    if isinstance(prompt, FreeFormPrompt):
        prompt = enclosing_box(prompt)
    if isinstance(prompt, PointPrompt):
        pe = fourier_encode((prompt.x, prompt.y), p.B) + p.E_center
        return p.W_pt @ pe + p.b_pt
    if isinstance(prompt, BoxPrompt):
        tl = fourier_encode((prompt.x1, prompt.y1), p.B) + p.E_tl
        br = fourier_encode((prompt.x2, prompt.y2), p.B) + p.E_br
        return p.W_box @ np.concatenate([tl, br]) + p.b_box
    raise TypeError(f"unsupported prompt type {type(prompt).__name__}")


def _pre_projector_rows(prompts: VisualPromptSet, p: EncoderParams) -> np.ndarray:
    """Rows entering the projector: start, C slots, end; shape (C+2, d_vp)."""
    cfg = p.config
    n = len(prompts)
    rows = np.empty((cfg.capacity + 2, cfg.hidden_dim), dtype=np.float64)
    rows[0] = p.T_start
    for i in range(cfg.capacity):
        if i < n:
            e = _slot_embedding(prompts[i], p)
            rows[1 + i] = p.W_unify @ e + p.b_unify + p.V_valid
        else:
            rows[1 + i] = p.V_invalid
    rows[cfg.capacity + 1] = p.T_end
    return rows


def embed_prompts(prompts: VisualPromptSet, params: EncoderParams) -> PromptEmbeddingBatch:
    """Encode a prompt set into the fixed (capacity+2, llm_dim) token grid."""
    cfg = params.config
    n = len(prompts)
    if n == 0:
        raise EmptyPromptSet("no prompts to embed")
    if n > cfg.capacity:
        raise CapacityExceeded(f"{n} prompts exceed capacity {cfg.capacity}")
    x = _pre_projector_rows(prompts, params)
    z = x @ params.P_W1.T + params.P_b1
    g = _gelu(z)
    y = g @ params.P_W2.T + params.P_b2
    validity = tuple(i < n for i in range(cfg.capacity))
    return PromptEmbeddingBatch(tokens=y, validity=validity)


def encoder_backward(
    prompts: VisualPromptSet,
    params: EncoderParams,
    upstream_grad: np.ndarray,
) -> dict[str, np.ndarray]:
    """Gradients of sum(upstream_grad * output) for every tensor.

    Recomputes the forward pass internally, then routes gradients back
    through the projector, the unify layer, and the per-type embedding
    paths. B is frozen: its entry in the result is always zeros.
    """
    cfg = params.config
    n = len(prompts)
    if n == 0:
        raise EmptyPromptSet("no prompts to differentiate through")
    if n > cfg.capacity:
        raise CapacityExceeded(f"{n} prompts exceed capacity {cfg.capacity}")
    dy = np.asarray(upstream_grad, dtype=np.float64)
    out_shape = (cfg.capacity + 2, cfg.llm_dim)
    if dy.shape != out_shape:
        raise BadGradShape(f"upstream grad shape {dy.shape} != {out_shape}")

    p = params
    x = _pre_projector_rows(prompts, p)
    z = x @ p.P_W1.T + p.P_b1
    g = _gelu(z)

    grads = {name: np.zeros_like(p.tensors[name]) for name in _TENSOR_ORDER}

    # projector
    grads["P_W2"] += dy.T @ g
    grads["P_b2"] += dy.sum(axis=0)
    dg = dy @ p.P_W2
    dz = dg * _gelu_grad(z)
    grads["P_W1"] += dz.T @ x
    grads["P_b1"] += dz.sum(axis=0)
    dx = dz @ p.P_W1  # (C+2, d_vp)

    # routing into the pre-projector rows
    grads["T_start"] += dx[0]
    grads["T_end"] += dx[cfg.capacity + 1]
    for i in range(n, cfg.capacity):
        grads["V_invalid"] += dx[1 + i]

    for i in range(n):
        du = dx[1 + i]
        grads["V_valid"] += du
        grads["b_unify"] += du
        prompt = prompts[i]
        if isinstance(prompt, FreeFormPrompt):
            prompt = enclosing_box(prompt)
        e = _slot_embedding(prompt, p)
        grads["W_unify"] += np.outer(du, e)
        de = p.W_unify.T @ du
        if isinstance(prompt, PointPrompt):
            pe = fourier_encode((prompt.x, prompt.y), p.B) + p.E_center
            grads["W_pt"] += np.outer(de, pe)
            grads["b_pt"] += de
            grads["E_center"] += p.W_pt.T @ de
        else:
            tl = fourier_encode((prompt.x1, prompt.y1), p.B) + p.E_tl
            br = fourier_encode((prompt.x2, prompt.y2), p.B) + p.E_br
            q = np.concatenate([tl, br])
            grads["W_box"] += np.outer(de, q)
            grads["b_box"] += de
            dq = p.W_box.T @ de
            grads["E_tl"] += dq[: cfg.pe_dim]
            grads["E_br"] += dq[cfg.pe_dim :]
    return grads


# --- gradient verification ----------------------------------------------------


def _check_prompt_set(cfg: EncoderConfig, rng: np.random.Generator) -> VisualPromptSet:
    """A small mixed point/box set with coordinates off any symmetry point."""
    n = min(3, cfg.capacity)
    prompts = []
    for i in range(n):
        if i % 2 == 0:
            prompts.append(PointPrompt(float(rng.uniform(0.05, 0.95)), float(rng.uniform(0.05, 0.95))))
        else:
            x1, y1 = rng.uniform(0.05, 0.45, size=2)
            x2, y2 = rng.uniform(0.55, 0.95, size=2)
            prompts.append(BoxPrompt(float(x1), float(y1), float(x2), float(y2)))
    return VisualPromptSet(tuple(prompts))


def grad_check(
    cfg: EncoderConfig,
    seed: int,
    epsilon: float = 1e-4,
    samples_per_tensor: int = 12,
) -> float:
    """Compare analytic gradients to central finite differences.

    Builds random params and a mixed prompt set from ``seed``, takes
    loss = sum(output^2), and for up to ``samples_per_tensor`` coordinates
    of every learnable tensor (all of them when the tensor is small)
    evaluates (loss(theta+eps) - loss(theta-eps)) / 2 eps. Returns the max
    error relative to max(1, |analytic|, |numeric|). Deterministic in
    (cfg, seed).
    """
    params = init_params(
        EncoderConfig(
            num_frequencies=cfg.num_frequencies,
            hidden_dim=cfg.hidden_dim,
            llm_dim=cfg.llm_dim,
            capacity=cfg.capacity,
            fourier_sigma=cfg.fourier_sigma,
            rng_seed=seed,
        )
    )
    rng = np.random.Generator(np.random.PCG64(seed + 0x5EED))
    prompts = _check_prompt_set(params.config, rng)

    def loss_for(tensors: dict[str, np.ndarray]) -> float:
        q = EncoderParams(config=params.config, tensors=tensors)
        out = embed_prompts(prompts, q).tokens
        return float(np.sum(out * out))

    upstream = 2.0 * embed_prompts(prompts, params).tokens
    analytic = encoder_backward(prompts, params, upstream)

    max_err = 0.0
    for name in LEARNABLE_TENSORS:
        base = params.tensors[name]
        flat_size = base.size
        if flat_size <= samples_per_tensor:
            idxs = np.arange(flat_size)
        else:
            idxs = rng.choice(flat_size, size=samples_per_tensor, replace=False)
        for flat_idx in idxs:
            idx = np.unravel_index(int(flat_idx), base.shape)
            bumped = {k: v for k, v in params.tensors.items()}
            plus = base.copy()
            plus[idx] += epsilon
            bumped[name] = plus
            f_plus = loss_for(bumped)
            minus = base.copy()
            minus[idx] -= epsilon
            bumped[name] = minus
            f_minus = loss_for(bumped)
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            a = float(analytic[name][idx])
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            max_err = max(max_err, err)
    return max_err


# --- parameter file format ------------------------------------------------------

_HEADER_RE = re.compile(
    r"^VPE1 m=(\d+) d_vp=(\d+) d_llm=(\d+) capacity=(\d+) sigma_b=([0-9.eE+-]+) seed=(-?\d+)$"
)


def save_params(params: EncoderParams, path: str) -> None:
    """Write the header line plus raw little-endian float32 tensor data.

    Tensors are concatenated in the fixed serialization order; values are
    already on the float32 grid so the round trip is bit-exact.
    """
    cfg = params.config
    header = (
        f"{PARAMS_MAGIC} m={cfg.num_frequencies} d_vp={cfg.hidden_dim} "
        f"d_llm={cfg.llm_dim} capacity={cfg.capacity} sigma_b={cfg.fourier_sigma!r} "
        f"seed={cfg.rng_seed}\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        for name in _TENSOR_ORDER:
            f.write(params.tensors[name].astype("<f4").tobytes())


def load_params(path: str, expect: EncoderConfig | None = None) -> EncoderParams:
    """Read a parameter file; BadParamsFile on any structural problem.

    When ``expect`` is given, its dimensions must match the file header
    exactly (seed is informational and not compared).
    """
    with open(path, "rb") as f:
        data = f.read()
    newline = data.find(b"\n")
    if newline < 0:
        raise BadParamsFile("missing header line")
    try:
        header = data[:newline].decode("ascii")
    except UnicodeDecodeError as exc:
        raise BadParamsFile("header is not ascii") from exc
    m = _HEADER_RE.match(header)
    if not m:
        raise BadParamsFile(f"bad header: {header!r}")
    cfg = EncoderConfig(
        num_frequencies=int(m.group(1)),
        hidden_dim=int(m.group(2)),
        llm_dim=int(m.group(3)),
        capacity=int(m.group(4)),
        fourier_sigma=float(m.group(5)),
        rng_seed=int(m.group(6)),
    )
    if expect is not None:
        same = (
            expect.num_frequencies == cfg.num_frequencies
            and expect.hidden_dim == cfg.hidden_dim
            and expect.llm_dim == cfg.llm_dim
            and expect.capacity == cfg.capacity
        )
        if not same:
            raise BadParamsFile(f"file dimensions {cfg} do not match expected {expect}")
    payload = data[newline + 1 :]
    shapes = _tensor_shapes(cfg)
    total_floats = sum(int(np.prod(s)) for s in shapes.values())
    if len(payload) != 4 * total_floats:
        raise BadParamsFile(
            f"payload holds {len(payload)} bytes, expected {4 * total_floats}"
        )
    tensors: dict[str, np.ndarray] = {}
    offset = 0
    for name in _TENSOR_ORDER:
        shape = shapes[name]
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        tensors[name] = arr.astype(np.float64).reshape(shape)
        offset += 4 * count
    return EncoderParams(config=cfg, tensors=tensors)
