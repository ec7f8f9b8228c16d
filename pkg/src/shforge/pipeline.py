"""Dataset generation: plan clips, sample scenes, render and write in parallel."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .body_model import BodyModelDef
from .camera import CameraIntrinsics, intrinsics_from_physical
from .dataset_io import ClipRecord, DatasetManifest, SplitAssignment, write_clip, write_manifest
from .errors import SplitError
from .motion import CLIP_LEN, OVERLAPS, Clip, MotionSequence, chunk_clips
from .renderer import ClipRenderer
from .scene_sampler import AssetBanks, AssetPolicy, SceneConfig, sample_scene
from .splitter import TEST_FRACTION, asset_policy, assign_split_records

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PlannedClip:
    scene_index: int  # position in the full plan; seeds the clip's scene
    sequence_index: int
    subject_id: str
    sequence_id: str
    overlap_variant: float
    clip_index: int
    start_frame: int
    frame_count: int
    action: str | None


def plan_clips(motions: Sequence[MotionSequence], overlaps: Sequence[float] = OVERLAPS,
               clip_len: int = CLIP_LEN) -> list[PlannedClip]:
    """Every clip of every sequence, ordered by (subject, sequence, overlap, clip)."""
    order = sorted(range(len(motions)), key=lambda i: (motions[i].subject_id, motions[i].sequence_id))
    plan = []
    for si in order:
        seq = motions[si]
        for ov in sorted(overlaps):
            for c in chunk_clips(seq, clip_len, ov):
                plan.append(PlannedClip(len(plan), si, seq.subject_id, seq.sequence_id, ov,
                                        c.clip_index, c.start_frame, c.length, seq.action))
    return plan


def _select(plan: list[PlannedClip], max_clips: int | None) -> list[PlannedClip]:
    return plan if max_clips is None else plan[:max_clips]


@dataclass
class _WorkerState:
    model: BodyModelDef
    motions: Sequence[MotionSequence]
    banks: AssetBanks
    intr: CameraIntrinsics
    out_dir: str
    overwrite: bool


_STATE: _WorkerState | None = None


def _init_worker(state: _WorkerState) -> None:
    global _STATE
    _STATE = state


def render_clip(state: _WorkerState, item: PlannedClip, scene: SceneConfig) -> ClipRecord:
    seq = state.motions[item.sequence_index]
    clip = Clip(seq, item.start_frame, item.frame_count, item.overlap_variant, item.clip_index)
    renderer = ClipRenderer(state.model, clip, scene, state.banks, state.intr)
    frames = list(renderer)
    record = ClipRecord(
        subject_id=item.subject_id, sequence_id=item.sequence_id, overlap_variant=item.overlap_variant,
        clip_index=item.clip_index, start_frame=item.start_frame, frame_count=item.frame_count,
        scene=scene, action=item.action, intrinsics=state.intr, camera=renderer.camera,
    )
    write_clip(record, frames, state.out_dir, overwrite=state.overwrite)
    return record


def _run_job(job: tuple[PlannedClip, SceneConfig]) -> ClipRecord:
    return render_clip(_STATE, *job)


def texture_subset_policy(policy: AssetPolicy, max_clothing: int) -> AssetPolicy:
    """Restrict textures to the first ``max_clothing`` ids, overriding any hold-out."""
    return AssetPolicy(tuple(range(max_clothing)), policy.background_ids, policy.shape_ids)


def plan_jobs(motions: Sequence[MotionSequence], banks: AssetBanks, seed: int = 0,
              overlaps: Sequence[float] = OVERLAPS, max_clips: int | None = None,
              max_clothing: int | None = None, test_fraction: float | None = TEST_FRACTION,
              ) -> tuple[list[tuple[PlannedClip, SceneConfig]], SplitAssignment | None]:
    """The (clip, scene) pairs a run would render, plus the split it would record.

    Scenes depend only on (seed, position in the full clip plan), so worker
    count and subsetting flags never change what a given clip looks like
    beyond the asset pool they restrict.
    """
    plan = plan_clips(motions, overlaps)
    split: SplitAssignment | None = None
    if test_fraction is not None:
        try:
            split = assign_split_records(plan, banks, test_fraction, seed)
        except SplitError as exc:
            log.info("no train/test split: %s", exc)
    if max_clothing is not None:
        if not 1 <= max_clothing <= len(banks.textures):
            raise ValueError(f"--max-clothing must be in 1..{len(banks.textures)}")
        if split is not None:
            split.test_texture_ids = []

    jobs = []
    for item in _select(plan, max_clips):
        policy = asset_policy(split, item.subject_id, banks)
        if max_clothing is not None:
            policy = texture_subset_policy(policy, max_clothing)
        jobs.append((item, sample_scene(seed, item.scene_index, banks, policy)))
    return jobs, split


def generate_dataset(model: BodyModelDef, motions: Sequence[MotionSequence], banks: AssetBanks,
                     out_dir: str | Path, seed: int = 0, overlaps: Sequence[float] = OVERLAPS,
                     intr: CameraIntrinsics | None = None, workers: int = 1,
                     max_clips: int | None = None, max_clothing: int | None = None,
                     overwrite: bool = False, test_fraction: float | None = TEST_FRACTION) -> DatasetManifest:
    """Render a dataset to ``out_dir`` and write its manifest."""
    intr = intr or intrinsics_from_physical()
    out_dir = Path(out_dir)
    jobs, split = plan_jobs(motions, banks, seed, overlaps, max_clips, max_clothing, test_fraction)
    log.info("rendering %d clips (%d frames) with %d worker(s)", len(jobs),
             sum(j[0].frame_count for j in jobs), workers)

    state = _WorkerState(model, motions, banks, intr, str(out_dir), overwrite)
    out_dir.mkdir(parents=True, exist_ok=True)
    if workers <= 1 or len(jobs) <= 1:
        records = [render_clip(state, *job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(state,)) as pool:
            records = list(pool.map(_run_job, jobs))

    manifest = DatasetManifest(clips=records, master_seed=seed, split=split)
    write_manifest(manifest, out_dir)
    return manifest
