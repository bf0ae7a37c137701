"""Shared fixtures. Heavy trained-model fixtures are session-scoped so the
expensive runs happen once for the whole suite."""

import numpy as np
import pytest

from crossmodal import networks as nets


def make_tiny_spec() -> nets.NetworkSpec:
    """A micro network with the real topology but toy extents, for fast tests."""
    return nets.NetworkSpec(
        vision_input=(2, 8, 8),
        sound_input=(5, 20),
        text_input=(6, 16),
        vision_layers=(
            nets.Conv2dSpec(3, 4),
            nets.Pool2dSpec(2, 2),
            nets.FlattenSpec(),
            nets.DenseSpec(24),
        ),
        sound_layers=(
            nets.Conv1dSpec(3, 4),
            nets.Pool1dSpec(5),
            nets.FlattenSpec(),
            nets.DenseSpec(24),
        ),
        text_layers=(
            nets.Conv1dSpec(3, 4),
            nets.Pool1dSpec(2),
            nets.FlattenSpec(),
            nets.DenseSpec(24),
        ),
        shared_widths=(12, 10),
        output_dim=6,
        bottleneck_dim=24,
    )


@pytest.fixture
def tiny_spec_params():
    spec = make_tiny_spec()
    params = nets.init_params(spec, seed=0, sigma=0.05)
    return spec, params


def tiny_batch(spec, modality, batch_size, seed):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(batch_size, *spec.input_shape(modality)))


def make_tiny_handles(spec, n: int, seed: int, concepts: int = 3):
    """Synthetic correlated pairs shaped for the micro spec: per concept, one
    prototype per modality plus noise, and smoothed one-hot teacher rows."""
    from crossmodal.data import DatasetHandles, Sample, TeacherTargets

    rng = np.random.default_rng(seed)
    protos = {m: rng.normal(size=(concepts, *spec.input_shape(m)))
              for m in nets.MODALITIES}
    image_sound, image_text = [], []
    teacher_rows = {}
    for i in range(n):
        c = i % concepts
        img = Sample("image", protos["image"][c] + 0.1 * rng.normal(size=spec.vision_input),
                     f"img-{i:04d}")
        snd = Sample("sound", protos["sound"][c] + 0.1 * rng.normal(size=spec.sound_input),
                     f"snd-{i:04d}")
        txt = Sample("text", protos["text"][c] + 0.1 * rng.normal(size=spec.text_input),
                     f"txt-{i:04d}")
        image_sound.append((img, snd))
        image_text.append((img, txt))
        row = np.full(spec.output_dim, 0.01 / spec.output_dim)
        row[c] += 0.99
        teacher_rows[img.id] = row
    return DatasetHandles(image_sound, image_text, TeacherTargets(teacher_rows))
