"""Synthetic multi-tab direction-trace generator with known labels.

The generative model, bottom up:

* A page is a profile: an alternating sequence of bursts (maximal runs of
  one direction), outgoing requests short, incoming responses long. The
  sequence of burst lengths is the class signature.
* Classes are grouped into "sites" of `site_size` subpages that share their
  first `shared_prefix_bursts` bursts, so subpages of one site look alike
  at the start and differ later (low inter-class variance on purpose).
* A session loads `tab_count` pages with gaps between start offsets; where
  loads overlap, cells interleave deterministically in proportion to each
  stream's remaining length. The generator keeps per-cell provenance (which
  tab emitted each cell) so tests can audit the interleaving.

No fidelity claim versus real traffic; the point is labeled, reproducible
multi-tab structure at controllable scale.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from adwpf.core_types import Dataset, Sample, encode_labels, pad_or_truncate

# heavier weight on 1-2 tabs with a long tail to 5, the shape real
# multi-tab browsing data shows
EMPIRICAL_TAB_WEIGHTS: dict[int, float] = {1: 2913, 2: 2517, 3: 1145, 4: 437, 5: 77}


@dataclass(frozen=True)
class PageProfile:
    class_id: int
    burst_lengths: tuple[int, ...]   # nominal cells per burst, all >= 1
    burst_directions: tuple[int, ...]  # +-1, alternating, starts with +1
    jitter: float                    # in [0,1): max fractional length noise

    def __post_init__(self) -> None:
        if len(self.burst_lengths) != len(self.burst_directions) or not self.burst_lengths:
            raise ValueError("burst lengths and directions must align and be non-empty")
        if any(length < 1 for length in self.burst_lengths):
            raise ValueError("burst lengths must be positive")
        if any(direction not in (-1, 1) for direction in self.burst_directions):
            raise ValueError("burst directions must be -1/+1")
        if not 0.0 <= self.jitter < 1.0:
            raise ValueError("jitter must be in [0, 1)")


@dataclass(frozen=True)
class SessionSpec:
    """How one multi-tab session is laid out.

    gap_range is in cell positions; None means each gap is drawn as a
    uniform fraction (gap_fraction_range of the generator) of the preceding
    tab's rendered length. seed drives composition when no rng is passed.
    """

    tab_count: int
    gap_range: tuple[int, int] | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if not 1 <= self.tab_count <= 5:
            raise ValueError("tab_count must be in [1, 5]")
        if self.gap_range is not None:
            lo, hi = (int(v) for v in self.gap_range)
            object.__setattr__(self, "gap_range", (lo, hi))
            if not 0 <= lo <= hi:
                raise ValueError("gap_range must satisfy 0 <= lo <= hi")


@dataclass(frozen=True)
class GeneratorConfig:
    """Knobs for profile synthesis and session layout.

    Defaults target 10000-cell traces (pages of roughly 2-3k cells); tests
    shrink bursts_per_page and the response range for shorter traces.
    """

    trace_length: int = 10000
    site_size: int = 10                      # subpages per synthetic site
    shared_prefix_bursts: int = 4            # bursts identical within a site
    bursts_per_page: tuple[int, int] = (60, 100)
    request_length_range: tuple[int, int] = (1, 8)    # outgoing bursts
    response_length_range: tuple[int, int] = (8, 120)  # incoming bursts
    jitter: float = 0.1
    gap_fraction_range: tuple[float, float] = (0.1, 0.6)
    open_world: bool = False                 # reserve the last class as "unmonitored"
    keep_provenance: bool = True             # store per-cell run-length tags in meta

    def __post_init__(self) -> None:
        if self.trace_length < 1:
            raise ValueError("trace_length must be positive")
        if self.site_size < 1:
            raise ValueError("site_size must be positive")
        if self.bursts_per_page[0] <= self.shared_prefix_bursts:
            raise ValueError("bursts_per_page minimum must exceed the shared prefix")
        if not 0.0 <= self.jitter < 1.0:
            raise ValueError("jitter must be in [0, 1)")


def _draw_bursts(rng: np.random.Generator, count: int, first_direction: int,
                 cfg: GeneratorConfig) -> tuple[list[int], list[int]]:
    lengths, directions = [], []
    direction = first_direction
    for _ in range(count):
        lo, hi = (cfg.request_length_range if direction == 1 else cfg.response_length_range)
        lengths.append(int(rng.integers(lo, hi + 1)))
        directions.append(direction)
        direction = -direction
    return lengths, directions


def make_page_profile(class_id: int, seed: int, cfg: GeneratorConfig | None = None) -> PageProfile:
    """Deterministic profile for (class_id, seed); site-mates share a prefix."""
    if class_id < 0:
        raise ValueError("class_id must be >= 0")
    if seed < 0:
        raise ValueError("seed must be >= 0")
    cfg = cfg or GeneratorConfig()
    site_id = class_id // cfg.site_size
    site_rng = np.random.default_rng((seed, 1, site_id))
    page_rng = np.random.default_rng((seed, 2, class_id))

    prefix_len, prefix_dir = _draw_bursts(site_rng, cfg.shared_prefix_bursts, 1, cfg)
    total = int(page_rng.integers(cfg.bursts_per_page[0], cfg.bursts_per_page[1] + 1))
    next_direction = 1 if cfg.shared_prefix_bursts % 2 == 0 else -1
    body_len, body_dir = _draw_bursts(page_rng, total - cfg.shared_prefix_bursts,
                                      next_direction, cfg)
    return PageProfile(
        class_id=class_id,
        burst_lengths=tuple(prefix_len + body_len),
        burst_directions=tuple(prefix_dir + body_dir),
        jitter=cfg.jitter,
    )


def render_single_tab(profile: PageProfile, rng: np.random.Generator) -> np.ndarray:
    """One page load: bursts concatenated with per-burst length noise.

    The noise is an integer cell delta drawn uniformly in
    [-floor(jitter*len), +floor(jitter*len)], so every rendered burst stays
    within +-jitter of nominal exactly and never drops below one cell.
    """
    parts = []
    for length, direction in zip(profile.burst_lengths, profile.burst_directions):
        spread = int(profile.jitter * length)
        if spread:
            length = length + int(rng.integers(-spread, spread + 1))
        parts.append(np.full(length, direction, dtype=np.int8))
    return np.concatenate(parts)


def _fair_merge(streams: list[np.ndarray], offsets: list[int]) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic proportional interleave of started streams.

    Each step, every active stream (started, not exhausted) earns credit
    equal to its remaining length; the highest credit emits the next cell
    (ties to the lower tab index). A stream whose offset is still ahead
    when everything active has drained starts immediately: direction traces
    carry no time, so dead air between tabs is invisible.
    """
    n = len(streams)
    remaining = [len(s) for s in streams]
    pos = [0] * n
    credit = [0] * n
    start_at = list(offsets)
    total = sum(remaining)
    out = np.empty(total, dtype=np.int8)
    prov = np.empty(total, dtype=np.int16)
    for t in range(total):
        active = [k for k in range(n) if remaining[k] > 0 and start_at[k] <= t]
        if not active:
            k = min((k for k in range(n) if remaining[k] > 0), key=lambda k: (start_at[k], k))
            start_at[k] = t
            active = [k]
        for k in active:
            credit[k] += remaining[k]
        k = max(active, key=lambda k: (credit[k], -k))
        credit[k] -= sum(remaining[j] for j in active)
        out[t] = streams[k][pos[k]]
        prov[t] = k
        pos[k] += 1
        remaining[k] -= 1
    return out, prov


def compose_session(
    profiles: Sequence[PageProfile],
    spec: SessionSpec,
    rng: np.random.Generator | None = None,
    *,
    trace_length: int = 10000,
    class_count: int | None = None,
    gap_fraction_range: tuple[float, float] = (0.1, 0.6),
    sample_id: str = "session",
    max_attempts: int = 100,
) -> tuple[Sample, np.ndarray]:
    """Render, offset, and interleave one session's tabs into a Sample.

    Returns (sample, provenance) where provenance[i] is the index into
    `profiles` of the tab that emitted cell i (before padding). Truncation
    to trace_length must leave every tab at least one cell; otherwise the
    layout is redrawn, up to max_attempts.
    """
    if len(profiles) != spec.tab_count:
        raise ValueError(f"need {spec.tab_count} profiles, got {len(profiles)}")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    class_ids = [p.class_id for p in profiles]
    if len(set(class_ids)) != len(class_ids):
        raise ValueError("session tabs must load distinct pages")
    width = class_count if class_count is not None else max(class_ids) + 1

    for _ in range(max_attempts):
        streams = [render_single_tab(p, rng) for p in profiles]
        offsets = [0]
        for k in range(1, len(streams)):
            if spec.gap_range is not None:
                gap = int(rng.integers(spec.gap_range[0], spec.gap_range[1] + 1))
            else:
                fraction = rng.uniform(*gap_fraction_range)
                gap = int(round(fraction * len(streams[k - 1])))
            offsets.append(offsets[-1] + gap)
        merged, prov = _fair_merge(streams, offsets)
        merged, prov = merged[:trace_length], prov[:trace_length]
        if len(set(prov.tolist())) != len(profiles):
            continue  # truncation swallowed a whole tab; redraw the layout
        sample = Sample(
            id=sample_id,
            trace=pad_or_truncate(merged, trace_length),
            labels=encode_labels(class_ids, width),
            tab_count=spec.tab_count,
        )
        return sample, prov
    raise RuntimeError(
        f"could not fit {spec.tab_count} tabs into {trace_length} cells "
        f"after {max_attempts} attempts"
    )


def _provenance_runs(prov: np.ndarray) -> list[list[int]]:
    """Run-length encode per-cell tab tags: [[tab_index, run_length], ...]."""
    runs: list[list[int]] = []
    for tag in prov.tolist():
        if runs and runs[-1][0] == tag:
            runs[-1][1] += 1
        else:
            runs.append([int(tag), 1])
    return runs


def _fresh_profile(class_id: int, rng: np.random.Generator, cfg: GeneratorConfig) -> PageProfile:
    # unmonitored pages get a new random signature every session
    total = int(rng.integers(cfg.bursts_per_page[0], cfg.bursts_per_page[1] + 1))
    lengths, directions = _draw_bursts(rng, total, 1, cfg)
    return PageProfile(class_id=class_id, burst_lengths=tuple(lengths),
                       burst_directions=tuple(directions), jitter=cfg.jitter)


def generate_dataset(
    class_count: int,
    n_samples: int,
    seed: int = 0,
    cfg: GeneratorConfig | None = None,
    tab_distribution: dict[int, float] | None = None,
) -> Dataset:
    """Synthesize a labeled multi-tab dataset, deterministic under seed.

    In open-world mode the last class id is reserved as "unmonitored":
    every session includes exactly one unmonitored page with a
    freshly-drawn profile, and sessions have at least two tabs.
    """
    if class_count < 2:
        raise ValueError("need at least 2 classes")
    if n_samples < 1:
        raise ValueError("need at least 1 sample")
    if seed < 0:
        raise ValueError("seed must be >= 0")
    cfg = cfg or GeneratorConfig()
    weights = dict(tab_distribution or EMPIRICAL_TAB_WEIGHTS)
    if any(t not in (1, 2, 3, 4, 5) or w < 0 for t, w in weights.items()):
        raise ValueError("tab distribution keys must be 1..5 with non-negative weights")
    tab_values = sorted(weights)
    probs = np.array([weights[t] for t in tab_values], dtype=np.float64)
    probs /= probs.sum()

    monitored = class_count - 1 if cfg.open_world else class_count
    if monitored < 1:
        raise ValueError("open-world mode needs at least one monitored class")
    profiles = [make_page_profile(c, seed, cfg) for c in range(monitored)]

    rng = np.random.default_rng((seed, 3))
    samples: list[Sample] = []
    provenance: list[dict] = []
    for index in range(n_samples):
        tabs = int(rng.choice(tab_values, p=probs))
        if cfg.open_world:
            tabs = max(tabs, 2)
            picked = [profiles[c] for c in rng.choice(monitored, size=tabs - 1, replace=False)]
            slot = int(rng.integers(0, tabs))
            picked.insert(slot, _fresh_profile(monitored, rng, cfg))
        else:
            picked = [profiles[c] for c in rng.choice(monitored, size=tabs, replace=False)]
        spec = SessionSpec(tab_count=tabs, seed=int(rng.integers(0, 2**31)))
        sample, prov = compose_session(
            picked, spec, rng,
            trace_length=cfg.trace_length,
            class_count=class_count,
            gap_fraction_range=cfg.gap_fraction_range,
            sample_id=f"synth-{seed}-{index:06d}",
        )
        samples.append(sample)
        if cfg.keep_provenance:
            provenance.append({
                "tab_classes": [p.class_id for p in picked],
                "runs": _provenance_runs(prov),
                "session_cells": int(prov.size),
            })

    class_names = [
        f"site{c // cfg.site_size:02d}/page{c % cfg.site_size:02d}" for c in range(monitored)
    ]
    if cfg.open_world:
        class_names.append("unmonitored")
    meta = {
        "generator": {
            "seed": seed,
            "class_count": class_count,
            "n_samples": n_samples,
            "config": asdict(cfg),
            "tab_distribution": {str(t): weights[t] for t in tab_values},
        }
    }
    if cfg.keep_provenance:
        meta["generator"]["provenance"] = provenance
    meta = json.loads(json.dumps(meta))  # keep meta JSON-native so files round-trip
    return Dataset(samples=samples, class_names=class_names, meta=meta)
