"""Deterministic stimulus generators.

Everything here is a pure function of its parameters and seed. Frames are
float arrays in [0, 1], laid out [T, 3, H, W] (grayscale stimuli replicate the
luminance into three channels). Ground-truth flow is [T, H, W, 2] with
``flow[t]`` the displacement of each pixel from frame ``t`` to ``t + 1`` in
pixels per frame; component 0 is ``u`` (along columns), 1 is ``v`` (along rows).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

MODULATIONS = ("noise", "blur", "water", "fourier_shuffle", "pixel_shuffle", "swirl", "drift_balanced")
CARRIER_FRAMES = 16
MAX_SPEED = 3.0


@dataclass
class StimulusSequence:
    frames: np.ndarray  # [T, 3, H, W]
    gt_flow: np.ndarray | None = None  # [T, H, W, 2]
    meta: dict = field(default_factory=dict)
    region: np.ndarray | None = None  # optional [T, H, W] boolean mask of the moving region

    @property
    def gray(self) -> np.ndarray:
        f = self.frames
        return 0.299 * f[:, 0] + 0.587 * f[:, 1] + 0.114 * f[:, 2]

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def _rgb(gray: np.ndarray) -> np.ndarray:
    return np.repeat(gray[:, None], 3, axis=1)


def _coords(size: int):
    c = (size - 1) / 2.0
    y, x = np.mgrid[0:size, 0:size].astype(float)
    return x - c, y - c


def _constant_flow(T: int, size: int, u: float, v: float) -> np.ndarray:
    flow = np.empty((T, size, size, 2))
    flow[..., 0] = u
    flow[..., 1] = v
    return flow


# ------------------------------------------------------------------ gratings
def drifting_gabor(f_s: float, theta: float, speed: float, size: int = 64, T: int = 16, contrast: float = 1.0,
                   envelope_sd: float | None = None, phase: float = 0.0) -> StimulusSequence:
    """Sinusoidal grating drifting along ``theta`` under a Gaussian envelope.

    ``envelope_sd=None`` uses ``size / 4``; ``np.inf`` gives a full-field grating.
    """
    if not 0 < f_s < 0.25:
        raise ValueError(f"spatial frequency must be in (0, 0.25), got {f_s}")
    if not 0 < contrast <= 1:
        raise ValueError(f"contrast must be in (0, 1], got {contrast}")
    if f_s * abs(speed) >= 0.5:
        raise ValueError(f"temporal frequency {f_s * abs(speed):.3f} cycles/frame aliases (must be < 0.5)")
    x, y = _coords(size)
    sd = size / 4.0 if envelope_sd is None else envelope_sd
    env = np.ones_like(x) if np.isinf(sd) else np.exp(-(x * x + y * y) / (2 * sd * sd))
    pos = x * np.cos(theta) + y * np.sin(theta)
    t = np.arange(T)[:, None, None]
    lum = 0.5 + 0.5 * contrast * env * np.cos(2 * np.pi * f_s * (pos - speed * t) + phase)
    flow = _constant_flow(T, size, speed * np.cos(theta), speed * np.sin(theta))
    meta = {"kind": "gabor", "f_s": f_s, "theta": theta, "speed": speed, "contrast": contrast}
    return StimulusSequence(_rgb(lum), flow, meta)


def plaid(f_s: float, base_dir: float, speed: float, size: int = 64, T: int = 16, contrast: float = 1.0,
          envelope_sd: float | None = None, half_angle: float = np.pi / 6) -> StimulusSequence:
    """Mean of two gratings at ``base_dir +- 30 deg``; the pattern moves along ``base_dir`` at ``speed``."""
    comp_speed = speed * np.cos(half_angle)
    a = drifting_gabor(f_s, base_dir + half_angle, comp_speed, size, T, contrast, envelope_sd)
    b = drifting_gabor(f_s, base_dir - half_angle, comp_speed, size, T, contrast, envelope_sd)
    flow = _constant_flow(T, size, speed * np.cos(base_dir), speed * np.sin(base_dir))
    meta = {"kind": "plaid", "f_s": f_s, "base_dir": base_dir, "speed": speed, "components": 2}
    return StimulusSequence((a.frames + b.frames) / 2.0, flow, meta)


# ------------------------------------------------------------ toy datasets
def slow_speed(rng: np.random.Generator, max_speed: float = MAX_SPEED) -> float:
    """Speeds biased towards zero: ``max_speed * u**2`` with u uniform."""
    return max_speed * rng.uniform() ** 2


def _grating_sample(rng: np.random.Generator, size: int, T: int) -> StimulusSequence:
    while True:
        f_s = float(np.exp(rng.uniform(np.log(0.03), np.log(0.15))))
        speed = slow_speed(rng)
        theta = float(rng.uniform(0, 2 * np.pi))
        contrast = float(rng.uniform(0.3, 1.0))
        phase = float(rng.uniform(0, 2 * np.pi))
        if f_s * speed <= 0.25:  # keep within the sensors' temporal band
            return drifting_gabor(f_s, theta, speed, size, T, contrast, np.inf, phase)


def _soft_ellipse(x, y, cx, cy, a, b, rot, edge=0.75):
    """Coverage in [0, 1] of an ellipse with a soft edge about ``edge`` px wide."""
    c, s = np.cos(rot), np.sin(rot)
    dx, dy = x - cx, y - cy
    xr, yr = c * dx + s * dy, -s * dx + c * dy
    r = np.sqrt((xr / a) ** 2 + (yr / b) ** 2)
    dist = (r - 1.0) * min(a, b)  # approximate signed distance in pixels
    return 1.0 / (1.0 + np.exp(dist / (edge / 2.0)))


def _shape_specs(rng: np.random.Generator, size: int, T: int, n_shapes: int):
    specs = []
    for _ in range(n_shapes):
        speed = slow_speed(rng)
        ang = rng.uniform(0, 2 * np.pi)
        u, v = speed * np.cos(ang), speed * np.sin(ang)
        a, b = rng.uniform(0.12, 0.25, 2) * size
        rot = rng.uniform(0, np.pi)
        mid = T // 2
        # place the shape so that it is near the centre region at the midpoint frame
        cx = rng.uniform(-0.2, 0.2) * size - u * mid
        cy = rng.uniform(-0.2, 0.2) * size - v * mid
        specs.append({"u": u, "v": v, "a": a, "b": b, "rot": rot, "cx": cx, "cy": cy})
    return specs


def _render_shapes(size, T, specs, background, paint):
    x, y = _coords(size)
    frames = np.repeat(background[None], T, axis=0).astype(float)
    flow = np.zeros((T, size, size, 2))
    region = np.zeros((T, size, size), bool)
    for t in range(T):
        for i, s in enumerate(specs):
            cx, cy = s["cx"] + s["u"] * t, s["cy"] + s["v"] * t
            cov = _soft_ellipse(x, y, cx, cy, s["a"], s["b"], s["rot"])
            colour = paint(i, t, x - cx, y - cy)
            frames[t] = frames[t] * (1 - cov) + colour * cov
            inside = cov > 0.5
            flow[t][inside] = (s["u"], s["v"])
            region[t] |= inside
    return np.clip(frames, 0.0, 1.0), flow, region


def _shapes_sample(rng: np.random.Generator, size: int, T: int) -> StimulusSequence:
    bg_col = rng.uniform(0.1, 0.9, 3)
    background = np.broadcast_to(bg_col[:, None, None], (3, size, size))
    n = int(rng.integers(1, 3))
    specs = _shape_specs(rng, size, T, n)
    cols = []
    for _ in specs:
        c = rng.uniform(0.05, 0.95, 3)
        while np.abs(c - bg_col).mean() < 0.2:
            c = rng.uniform(0.05, 0.95, 3)
        cols.append(c)
    frames, flow, region = _render_shapes(size, T, specs, background,
                                          lambda i, t, dx, dy: cols[i][:, None, None])
    return StimulusSequence(frames, flow, {"kind": "B", "shapes": specs}, region)


def toy_dataset(kind: str, n: int, seed: int, size: int = 64, T: int = 15) -> list[StimulusSequence]:
    """Dataset B (flat translating shapes) or C (full-field drifting gratings)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if kind not in ("B", "C"):
        raise ValueError(f"kind must be 'B' or 'C', got {kind!r}")
    out = []
    for child in np.random.SeedSequence([seed, ord(kind)]).spawn(n):
        rng = np.random.default_rng(child)
        out.append(_grating_sample(rng, size, T) if kind == "C" else _shapes_sample(rng, size, T))
    return out


# ----------------------------------------------------------------- textures
def procedural_texture(size: int, seed: int, beta: float = 1.1, colour: bool = True) -> np.ndarray:
    """Fractal (1/f^beta) noise texture in [0.15, 0.85], shaped [3, size, size]."""
    rng = np.random.default_rng(seed)
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.rfftfreq(size)[None, :]
    f = np.hypot(fx, fy)
    f[0, 0] = 1.0
    amp = f ** (-beta)
    amp[0, 0] = 0.0
    chans = 3 if colour else 1
    noise = rng.standard_normal((chans, size, size))
    tex = np.fft.irfft2(np.fft.rfft2(noise) * amp, s=(size, size))
    if colour:
        tex = 0.6 * tex + 0.4 * tex.mean(axis=0, keepdims=True)
    else:
        tex = np.repeat(tex, 3, axis=0)
    tex -= tex.min()
    tex /= max(tex.max(), 1e-12)
    return 0.15 + 0.7 * tex


# ---------------------------------------------------------- carrier traces
@dataclass
class CarrierTrace:
    velocities: np.ndarray  # [T, 2], (U, V) px/frame
    step_sd: float
    seed: int

    def positions(self, start) -> np.ndarray:
        """Region centres for every frame: start + cumulative sum of earlier velocities."""
        steps = np.vstack([np.zeros((1, 2)), np.cumsum(self.velocities[:-1], axis=0)])
        return np.asarray(start, float)[None] + steps


def markov_carrier(T: int = CARRIER_FRAMES, step_sd: float = 0.15, seed: int = 0,
                   base_mean=(0.0, 0.0), base_sd: float = 1.0) -> CarrierTrace:
    """Gaussian random-walk velocity trace: S(0) ~ N(mean, base_sd^2 I), S(t) ~ N(S(t-1), step_sd^2 I)."""
    if step_sd < 0:
        raise ValueError("step_sd must be >= 0")
    rng = np.random.default_rng(seed)
    s0 = np.asarray(base_mean, float) + base_sd * rng.standard_normal(2)
    steps = step_sd * rng.standard_normal((T - 1, 2))
    vel = np.vstack([s0, s0 + np.cumsum(steps, axis=0)])
    return CarrierTrace(vel, step_sd, seed)


# ----------------------------------------------------------------- water
def water_wave_height(f, xi, gamma, delta, centers, t, x, y) -> np.ndarray:
    """K summed over wave centres at positions (x, y)."""
    out = np.zeros(np.broadcast(x, y).shape)
    temporal = np.cos(2 * np.pi * xi * t) * np.exp(-delta * t * t)
    for cx, cy in centers:
        r = np.hypot(x - cx, y - cy)
        out += np.cos(2 * np.pi * f * r) * np.exp(-gamma * r * r) * temporal
    return out


def water_wave_field(f, xi, gamma, delta, centers, t, x, y) -> np.ndarray:
    """Analytic spatial gradient [dK/dx, dK/dy] of the summed wave height, shape [..., 2]."""
    if gamma <= 0 or delta <= 0:
        raise ValueError("gamma and delta must be positive")
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    out = np.zeros(x.shape + (2,))
    temporal = np.cos(2 * np.pi * xi * t) * np.exp(-delta * t * t)
    w = 2 * np.pi * f
    for cx, cy in centers:
        dx, dy = x - cx, y - cy
        r = np.hypot(dx, dy)
        # dK/dr / r, using sin(w r)/r = w * sinc(2 f r) to stay finite at r = 0
        radial = (-w * w * np.sinc(2 * f * r) - 2 * gamma * np.cos(w * r)) * np.exp(-gamma * r * r) * temporal
        out[..., 0] += radial * dx
        out[..., 1] += radial * dy
    return out


def translating_square(size: int = 64, T: int = 15, side: int = 24, velocity=(2.0, 0.0),
                       seed: int = 0) -> StimulusSequence:
    """Textured square moving rigidly over a static textured background.

    The square is centred at the midpoint frame T//2; ``region`` marks it per frame.
    """
    if side < 1 or side > size:
        raise ValueError(f"side must be in [1, {size}], got {side}")
    u, v = float(velocity[0]), float(velocity[1])
    bg = procedural_texture(size, seed)
    fg = procedural_texture(size, seed + 1)
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    x0 = (size - side) / 2.0 - u * (T // 2)
    y0 = (size - side) / 2.0 - v * (T // 2)
    frames = np.empty((T, 3, size, size))
    region = np.zeros((T, size, size), bool)
    flow = np.zeros((T, size, size, 2))
    for t in range(T):
        ox, oy = x0 + u * t, y0 + v * t
        inside = (xx >= ox) & (xx < ox + side) & (yy >= oy) & (yy < oy + side)
        moved = _warp(fg, np.full((size, size), -u * t), np.full((size, size), -v * t))
        frames[t] = np.where(inside, moved, bg)
        region[t] = inside
        flow[t][inside] = (u, v)
    meta = {"kind": "square", "side": side, "velocity": [u, v], "seed": seed}
    return StimulusSequence(frames, flow, meta, region)


# ------------------------------------------------------------ modulation
def _warp(img: np.ndarray, dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Backward warp [3, H, W]: out(x) = img(x + d(x)), bilinear, edges clamped."""
    H, W = img.shape[-2:]
    yy, xx = np.mgrid[0:H, 0:W].astype(float)
    coords = np.stack([yy + dy, xx + dx])
    return np.stack([ndimage.map_coordinates(c, coords, order=1, mode="nearest") for c in img])


def _disk(size, centre, radius):
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    return (xx - centre[0]) ** 2 + (yy - centre[1]) ** 2 <= radius * radius


def carrier_start(trace: CarrierTrace, size: int, radius: float):
    """Start centre that keeps the whole path centred in the frame, or None if it cannot fit."""
    rel = trace.positions((0.0, 0.0))
    lo, hi = rel.min(axis=0), rel.max(axis=0)
    if np.any(hi - lo > size - 1 - 2 * radius):
        return None
    return (size - 1) / 2.0 - (lo + hi) / 2.0


def _balanced_signs(rng, inside: np.ndarray) -> np.ndarray:
    """Per-pixel +-1 signs over the frames each pixel spends inside, summing to zero.

    Pixels inside an odd number of frames get one 0 so the sum stays exactly zero.
    """
    T = inside.shape[0]
    signs = np.zeros(inside.shape)
    counts = inside.sum(axis=0)
    keys = rng.random(inside.shape)
    keys[~inside] = np.inf
    order = np.argsort(keys, axis=0)  # inside frames first, in random order
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(T)[:, None, None].repeat(inside.shape[1], 1).repeat(inside.shape[2], 2), 0)
    half = counts // 2
    signs[(rank < half[None]) & inside] = 1.0
    signs[(rank >= half[None]) & (rank < 2 * half[None]) & inside] = -1.0
    return signs


def apply_modulation(image: np.ndarray, carrier: CarrierTrace, kind: str, radius: float = 12.0, seed: int = 0,
                     strength: float = 1.0, start=None) -> StimulusSequence:
    """A disk carrying a second-order modulation slides over a static image along the carrier path.

    ``image`` is [3, H, W] (or [H, W]) in [0, 1]. Outside the union of disk
    positions every frame equals the image exactly.
    """
    if kind not in MODULATIONS:
        raise ValueError(f"unknown modulation {kind!r}; expected one of {MODULATIONS}")
    img = np.asarray(image, float)
    if img.ndim == 2:
        img = np.repeat(img[None], 3, axis=0)
    size = img.shape[-1]
    if img.shape[-2] != size:
        raise ValueError("image must be square")
    T = carrier.velocities.shape[0]
    if start is None:
        start = carrier_start(carrier, size, radius)
        if start is None:
            raise ValueError("carrier path does not fit inside the frame")
    centres = carrier.positions(start)
    if np.any(centres - radius < 0) or np.any(centres + radius > size - 1):
        raise ValueError("modulated region leaves the frame")
    rng = np.random.default_rng(seed)
    inside = np.stack([_disk(size, c, radius) for c in centres])
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    frames = np.repeat(img[None], T, axis=0)

    if kind == "drift_balanced":
        # per-channel amplitude keeps every channel inside [0, 1], so no clipping breaks the balance
        amp = 0.9 * strength * np.minimum(img, 1.0 - img)
        signs = _balanced_signs(rng, inside)
        frames = frames + amp[None] * signs[:, None]
    else:
        blurred = ndimage.gaussian_filter(img, (0, 2.0 * strength, 2.0 * strength)) if kind == "blur" else None
        waves = None
        if kind == "water":
            waves = [(rng.uniform(-0.6, 0.6, 2) * radius, rng.uniform(0.06, 0.12), rng.uniform(0.05, 0.15))
                     for _ in range(3)]
        for t, c in enumerate(centres):
            m = inside[t]
            dx_c, dy_c = xx - c[0], yy - c[1]
            if kind == "noise":
                sparse = rng.random((size, size)) < 0.3
                mod = img + strength * 0.35 * rng.standard_normal((3, size, size)) * sparse
            elif kind == "blur":
                mod = blurred
            elif kind == "water":
                field = np.zeros((size, size, 2))
                for off, f, xi in waves:
                    field += water_wave_field(f, xi, 0.01, 0.002, [tuple(c + off)], t - T / 2, xx, yy)
                amp = 6.0 * strength
                mod = _warp(img, amp * field[..., 0], amp * field[..., 1])
            elif kind == "fourier_shuffle":
                dx = ndimage.gaussian_filter(rng.standard_normal((size, size)), 1.5) * 6 * strength
                dy = ndimage.gaussian_filter(rng.standard_normal((size, size)), 1.5) * 6 * strength
                spec = np.fft.fft2(img)
                # perturb the phase with a smooth random displacement field
                fy, fx = np.meshgrid(np.fft.fftfreq(size), np.fft.fftfreq(size), indexing="ij")
                phase = 2 * np.pi * (fx * dx + fy * dy)
                mod = np.real(np.fft.ifft2(spec * np.exp(1j * phase)))
            elif kind == "pixel_shuffle":
                dx = rng.standard_normal((size, size)) * 2.5 * strength
                dy = rng.standard_normal((size, size)) * 2.5 * strength
                mod = _warp(img, dx, dy)
            else:  # swirl
                r = np.hypot(dx_c, dy_c)
                ang = 2.5 * strength * np.clip(1 - r / radius, 0, 1) ** 2 * np.cos(0.5 * t)
                ca, sa = np.cos(ang), np.sin(ang)
                mod = _warp(img, ca * dx_c - sa * dy_c - dx_c, sa * dx_c + ca * dy_c - dy_c)
            frames[t][:, m] = mod[:, m]
    frames = np.clip(frames, 0.0, 1.0)
    flow = np.zeros((T, size, size, 2))
    for t in range(T):
        flow[t][inside[t]] = carrier.velocities[t]
    meta = {"kind": kind, "radius": radius, "start": list(map(float, start)), "seed": seed,
            "carrier": carrier.velocities.tolist(), "carrier_seed": carrier.seed, "step_sd": carrier.step_sd}
    return StimulusSequence(frames, flow, meta, inside)


def second_order_benchmark(n_per_kind: int, seed: int, size: int = 64, radius: float = 12.0,
                           step_sd: float = 0.15, base_sd: float = 1.0, kinds=MODULATIONS) -> dict:
    """``{kind: [StimulusSequence, ...]}`` with fresh backgrounds and carriers per sample."""
    out = {}
    for k_i, kind in enumerate(kinds):
        seqs = []
        ss = np.random.SeedSequence([seed, k_i])
        attempt = 0
        while len(seqs) < n_per_kind:
            child = ss.spawn(1)[0]
            s = int(child.generate_state(1)[0])
            attempt += 1
            trace = markov_carrier(CARRIER_FRAMES, step_sd, s, base_sd=base_sd)
            if carrier_start(trace, size, radius) is None:
                continue
            bg = procedural_texture(size, s + 1)
            seqs.append(apply_modulation(bg, trace, kind, radius, seed=s + 2))
        out[kind] = seqs
    return out


# --------------------------------------------------------- material proxy
def proxy_nondiffuse_dataset(n: int, seed: int, mode: str = "diffuse", size: int = 64,
                             T: int = 15) -> list[StimulusSequence]:
    """Textured shapes translating over a static textured background.

    ``nondiffuse`` adds, inside each object, contrast-reversing flicker that is
    refreshed every frame and specular-like highlights drifting independently
    of the object. Geometry and ground truth come from a random stream that is
    shared by both modes, so the two modes have identical ``gt_flow``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if mode not in ("diffuse", "nondiffuse"):
        raise ValueError(f"mode must be 'diffuse' or 'nondiffuse', got {mode!r}")
    out = []
    for child in np.random.SeedSequence([seed, 0xD1FF]).spawn(n):
        geo_seed, tex_seed, fx_seed = (int(s.generate_state(1)[0]) for s in child.spawn(3))
        rng = np.random.default_rng(geo_seed)
        specs = _shape_specs(rng, size, T, int(rng.integers(1, 3)))
        background = procedural_texture(size, tex_seed) * 0.8 + 0.1
        textures = [procedural_texture(2 * size, tex_seed + 1 + i) for i in range(len(specs))]
        fx = np.random.default_rng(fx_seed)
        flicker = [fx.choice([-1.0, 1.0], size=(T, 2 * size, 2 * size)) for _ in specs]
        spots = [(fx.uniform(-0.3, 0.3, 2) * size, slow_speed(fx, 2.0), fx.uniform(0, 2 * np.pi)) for _ in specs]
        c = size  # texture centre in object coordinates

        def paint(i, t, dx, dy):
            # texture is attached to the object: sample it at object-relative coordinates
            ix = np.clip(np.round(dx + c).astype(int), 0, 2 * size - 1)
            iy = np.clip(np.round(dy + c).astype(int), 0, 2 * size - 1)
            tex = textures[i][:, iy, ix]
            if mode == "diffuse":
                return tex
            mean = tex.mean(axis=(1, 2), keepdims=True)
            col = mean + (tex - mean) * 1.5 * flicker[i][t][iy, ix][None]
            off, sp, ang = spots[i]
            hx = off[0] + sp * np.cos(ang) * t - specs[i]["u"] * t
            hy = off[1] + sp * np.sin(ang) * t - specs[i]["v"] * t
            spot = np.exp(-((dx - hx) ** 2 + (dy - hy) ** 2) / (2 * 3.0 ** 2))
            return col + 0.6 * spot[None]

        frames, flow, region = _render_shapes(size, T, specs, background, paint)
        out.append(StimulusSequence(frames, flow, {"kind": f"proxy-{mode}", "shapes": specs}, region))
    return out
