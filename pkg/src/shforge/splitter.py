"""Subject-disjoint train/test assignment with held-out appearance assets."""

from __future__ import annotations

import logging
from collections import defaultdict

import numpy as np

from .dataset_io import DatasetManifest, SplitAssignment
from .errors import SplitError
from .scene_sampler import TEXTURE_SETS, AssetBanks, AssetPolicy

log = logging.getLogger(__name__)

TEST_FRACTION = 0.2
TOLERANCE = 0.03
ASSET_HOLDOUT = 0.2
MIN_ACTION_SEQUENCES = 5
MAX_ATTEMPTS = 64


def split_subjects(subject_frames: dict[str, int], target: float = TEST_FRACTION, seed: int = 0,
                   tol: float = TOLERANCE) -> list[str]:
    """Greedy seeded pick of test subjects.

    Subjects are visited in a seeded random order and taken whenever the test
    frame fraction stays within target + tol; selection stops once it reaches
    target - tol. At least one subject always stays on each side.
    """
    if len(subject_frames) < 2:
        raise SplitError("cannot split by subject: need at least two subjects")
    subjects = sorted(subject_frames)
    total = sum(subject_frames.values())
    if total <= 0:
        raise SplitError("manifest has no frames")
    order = [subjects[i] for i in np.random.default_rng(seed).permutation(len(subjects))]
    test: list[str] = []
    frames = 0
    for s in order:
        if frames / total >= target - tol or len(test) == len(subjects) - 1:
            break
        if (frames + subject_frames[s]) / total <= target + tol:
            test.append(s)
            frames += subject_frames[s]
    if not test:
        test.append(min(subjects, key=lambda s: (subject_frames[s], s)))
    return sorted(test)


def _actions_covered(test: set[str], subject_actions: dict[str, list[str]]) -> bool:
    count: dict[str, int] = defaultdict(int)
    sides: dict[str, set[bool]] = defaultdict(set)
    for subject, actions in subject_actions.items():
        for a in actions:
            count[a] += 1
            sides[a].add(subject in test)
    return all(len(sides[a]) == 2 for a, n in count.items() if n >= MIN_ACTION_SEQUENCES)


def hold_out_ids(ids: list[int], rng: np.random.Generator, frac: float = ASSET_HOLDOUT) -> list[int]:
    """Seeded ``frac`` share of ``ids`` (at least one, never all); empty when fewer than two ids."""
    if len(ids) < 2:
        return []
    k = min(max(1, int(round(frac * len(ids)))), len(ids) - 1)
    return sorted(int(ids[i]) for i in rng.choice(len(ids), size=k, replace=False))


def assign_split(manifest: DatasetManifest, banks: AssetBanks | None = None,
                 target_test_frac: float = TEST_FRACTION, seed: int = 0,
                 tol: float = TOLERANCE) -> SplitAssignment:
    """Subject-disjoint split of a manifest, plus held-out asset ids when banks are given."""
    return assign_split_records(manifest.clips, banks, target_test_frac, seed, tol)


def assign_split_records(records, banks: AssetBanks | None = None,
                         target_test_frac: float = TEST_FRACTION, seed: int = 0,
                         tol: float = TOLERANCE) -> SplitAssignment:
    """Same as `assign_split` for any records exposing subject_id, sequence_id, frame_count, action."""
    if not records:
        raise SplitError("cannot split an empty manifest")
    subject_frames: dict[str, int] = defaultdict(int)
    subject_actions: dict[str, list[str]] = defaultdict(list)
    seen_sequences = set()
    for c in records:
        subject_frames[c.subject_id] += c.frame_count
        key = (c.subject_id, c.sequence_id)
        if c.action and key not in seen_sequences:
            subject_actions[c.subject_id].append(c.action)
        seen_sequences.add(key)

    total = sum(subject_frames.values())

    def score(candidate: list[str]) -> tuple:
        frac = sum(subject_frames[s] for s in candidate) / total
        covered = not subject_actions or _actions_covered(set(candidate), subject_actions)
        return covered, abs(frac - target_test_frac) <= tol, -abs(frac - target_test_frac)

    # a single greedy pass can get stuck short of the band; retry with other orders
    best, best_score = None, None
    for attempt in range(MAX_ATTEMPTS):
        candidate = split_subjects(subject_frames, target_test_frac, seed + attempt * 7919, tol)
        sc = score(candidate)
        if best_score is None or sc > best_score:
            best, best_score = candidate, sc
        if sc[0] and sc[1]:
            break
    test = best
    if not best_score[0]:
        log.warning("no split within %d attempts covers every common action on both sides", MAX_ATTEMPTS)
    fraction = sum(subject_frames[s] for s in test) / total
    assignment = SplitAssignment(
        subjects={s: ("test" if s in test else "train") for s in subject_frames},
        test_fraction=fraction,
    )
    if banks is not None:
        rng = np.random.default_rng([seed, 1])
        for tex_set in TEXTURE_SETS:
            assignment.test_texture_ids += hold_out_ids(banks.texture_ids(tex_set), rng)
        assignment.test_background_ids = hold_out_ids(list(range(len(banks.backgrounds))), rng)
        if banks.shape_bank:
            assignment.test_shape_ids = hold_out_ids(list(range(len(banks.shape_bank))), rng)
        if len(banks.backgrounds) < 2 or len(banks.textures) < 2:
            log.warning("asset bank too small to hold out test-only assets")
    return assignment


def asset_policy(assignment: SplitAssignment | None, subject_id: str, banks: AssetBanks) -> AssetPolicy:
    """Assets a clip of ``subject_id`` may use: held-out ids for test, the rest for train."""
    if assignment is None or subject_id not in assignment.subjects:
        return AssetPolicy()
    is_test = assignment.subjects[subject_id] == "test"

    def pick(n: int, held: list[int]) -> tuple[int, ...] | None:
        if not held:
            return None
        held_set = set(held)
        return tuple(i for i in range(n) if (i in held_set) == is_test)

    return AssetPolicy(
        texture_ids=pick(len(banks.textures), assignment.test_texture_ids),
        background_ids=pick(len(banks.backgrounds), assignment.test_background_ids),
        shape_ids=pick(len(banks.shape_bank), assignment.test_shape_ids),
    )
