"""Synthetic articulated-motion data: skeletons, rendering, datasets."""

from .dataset import (
    DatasetFormatError,
    DatasetManifest,
    SequenceRecord,
    SequenceSample,
    build_dataset,
    load_manifest,
    load_png,
    load_sequence,
    make_sequence,
    save_png,
    save_sequence,
)
from .render import (
    draw_skeleton_on_image,
    render_person,
    render_skeleton_image,
    visible_part_masks,
)
from .skeleton import (
    ACTIONS,
    BODY_PARTS,
    BONES,
    JOINT_NAMES,
    Action,
    AppearanceSpec,
    MotionParams,
    Skeleton,
    canonical_pose,
    random_appearance,
    random_motion,
    synth_skeleton_sequence,
)
