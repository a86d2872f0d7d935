import math
import os

import numpy as np
import pytest

from frifb.dataset import (NWPU_CLASSES, SyntheticSpec, generate_synthetic_dataset, parse_annotation_line,
                           parse_nwpu_annotations, render_instance, rotated_footprint, shape_corpus,
                           synthesize_image)
from frifb.image import save_image


def write_set(tmp_path, files):
    gt = tmp_path / "ground_truth"
    im = tmp_path / "images"
    gt.mkdir()
    im.mkdir()
    for stem, text in files.items():
        (gt / f"{stem}.txt").write_text(text)
        save_image(im / f"{stem}.png", np.full((100, 100), 0.5))
    return gt, im


# --- annotation parsing ---------------------------------------------------

def test_line_maps_fields():
    assert parse_annotation_line("(10,20),(60,80),1") == (10, 20, 60, 80, 1)
    assert parse_annotation_line(" ( 10 , 20 ) , ( 60 , 80 ) , 3 \n") == (10, 20, 60, 80, 3)
    assert parse_annotation_line("garbage") is None


def test_manifest_filters_class_and_counts_bad_lines(tmp_path):
    gt, im = write_set(tmp_path, {"001": "(10,20),(60,80),1\n(5,5),(30,30),3\ngarbage\n", "002": ""})
    m = parse_nwpu_annotations(str(gt), str(im), "airplane")
    assert [e.image_id for e in m.entries] == ["001", "002"]
    (box,) = m.entries[0].boxes
    assert box.xyxy == (10, 20, 60, 80) and box.label == "airplane"
    assert len(m.warnings) == 1 and "garbage" in m.warnings[0]
    assert [e.image_id for e in m.negatives] == ["002"]


def test_manifest_images_found_next_to_ground_truth(tmp_path):
    gt, _ = write_set(tmp_path, {"001": "(10,20),(60,80),1\n"})
    m = parse_nwpu_annotations(str(gt))
    assert m.entries[0].load().shape == (100, 100)


def test_baseball_diamond_index_and_override(tmp_path):
    gt, im = write_set(tmp_path, {"001": "(10,20),(60,80),4\n(1,1),(9,9),3\n"})
    m = parse_nwpu_annotations(str(gt), str(im), "baseball diamond")
    assert [b.xyxy for b in m.ground_truth()] == [(10, 20, 60, 80)]
    cmap = dict(NWPU_CLASSES, **{"baseball diamond": 3})
    m = parse_nwpu_annotations(str(gt), str(im), "baseball diamond", cmap)
    assert [b.xyxy for b in m.ground_truth()] == [(1, 1, 9, 9)]


def test_negative_dir_joins_without_boxes(tmp_path):
    gt, im = write_set(tmp_path, {"001": "(10,20),(60,80),1\n"})
    neg = tmp_path / "neg"
    neg.mkdir()
    save_image(neg / "n1.png", np.zeros((50, 50)))
    m = parse_nwpu_annotations(str(gt), str(im), negative_dir=str(neg))
    assert [e.image_id for e in m.negatives] == ["neg_n1"]


def test_manifest_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        parse_nwpu_annotations(str(tmp_path / "missing"))
    (tmp_path / "empty").mkdir()
    with pytest.raises(ValueError):
        parse_nwpu_annotations(str(tmp_path / "empty"))
    gt, im = write_set(tmp_path, {"001": ""})
    with pytest.raises(ValueError):
        parse_nwpu_annotations(str(gt), str(im), "spaceship")


# --- synthetic generator --------------------------------------------------

def test_rotated_footprint_swaps_at_quarter_turn():
    w, h = rotated_footprint(40, 32, math.pi / 2)
    assert (w, h) == pytest.approx((32, 40))
    assert rotated_footprint(40, 32, 0.0, 1.25) == pytest.approx((50, 40))


def test_single_unrotated_instance_box_is_template_footprint(tmp_path):
    spec = SyntheticSpec(image_size=(96, 96), instances=(1, 1), rotation=(0.0, 0.0), scale=(1.0, 1.0))
    m = generate_synthetic_dataset(1, 3, spec, str(tmp_path))
    (box,) = m.ground_truth()
    # integer hull of a 40 x 32 footprint at a random sub-pixel offset
    assert box.x2 - box.x1 in (40, 41)
    assert box.y2 - box.y1 in (32, 33)


def test_quarter_turn_instance_box_is_swapped(tmp_path):
    spec = SyntheticSpec(image_size=(96, 96), instances=(1, 1), rotation=(math.pi / 2, math.pi / 2),
                         scale=(1.0, 1.0))
    (box,) = generate_synthetic_dataset(1, 3, spec, str(tmp_path)).ground_truth()
    assert box.x2 - box.x1 in (32, 33)
    assert box.y2 - box.y1 in (40, 41)


def test_generation_is_byte_identical_for_a_seed(tmp_path):
    spec = SyntheticSpec(image_size=(96, 96), negative_images=1, distractors=(0, 2))
    generate_synthetic_dataset(3, 11, spec, str(tmp_path / "a"))
    generate_synthetic_dataset(3, 11, spec, str(tmp_path / "b"))
    for sub in ("images", "ground_truth"):
        names = sorted(os.listdir(tmp_path / "a" / sub))
        assert names == sorted(os.listdir(tmp_path / "b" / sub))
        for n in names:
            assert (tmp_path / "a" / sub / n).read_bytes() == (tmp_path / "b" / sub / n).read_bytes()
    other = generate_synthetic_dataset(3, 12, spec, str(tmp_path / "c"))
    assert [b.xyxy for b in other.ground_truth()] != \
        [b.xyxy for b in parse_nwpu_annotations(str(tmp_path / "a" / "ground_truth")).ground_truth()]


def test_generated_set_layout(tmp_path):
    spec = SyntheticSpec(image_size=(128, 128), negative_images=2)
    m = generate_synthetic_dataset(4, 0, spec, str(tmp_path))
    assert len(m.positives) == 4 and len(m.negatives) == 2
    for b in m.ground_truth():
        assert 0 <= b.x1 < b.x2 <= 127 and 0 <= b.y1 < b.y2 <= 127
        assert b.label == "airplane"
    for line in (tmp_path / "ground_truth" / "0001.txt").read_text().splitlines():
        assert parse_annotation_line(line)[4] == NWPU_CLASSES["airplane"]


def test_instance_counts_and_rotation_range():
    rng = np.random.default_rng(0)
    spec = SyntheticSpec()
    angles = []
    for _ in range(30):
        img, objs = synthesize_image(rng, spec)
        assert 1 <= len(objs) <= 3
        assert img.min() >= 0 and img.max() <= 1
        angles += [o[3] for o in objs]
    assert min(angles) >= 0 and max(angles) < 2 * math.pi
    assert np.ptp(angles) > math.pi  # spread over the full turn, not a narrow band


def test_gt_box_holds_most_instance_energy():
    rng = np.random.default_rng(5)
    spec = SyntheticSpec()
    for _ in range(40):
        angle = rng.uniform(0, 2 * math.pi)
        scale = rng.uniform(*spec.scale)
        cx, cy = rng.uniform(60, 130, size=2)
        cover = render_instance(spec.image_size, cx, cy, angle, scale, spec)
        fw, fh = rotated_footprint(*spec.template_size, angle, scale)
        x1, x2 = int(math.floor(cx - fw / 2)), int(math.ceil(cx + fw / 2))
        y1, y2 = int(math.floor(cy - fh / 2)), int(math.ceil(cy + fh / 2))
        assert cover[y1:y2 + 1, x1:x2 + 1].sum() >= 0.9 * cover.sum()


def test_template_is_not_rotation_symmetric():
    spec = SyntheticSpec()
    a = render_instance((80, 80), 39.5, 39.5, 0.0, 1.0, spec)
    for t in (math.pi / 2, math.pi, 3 * math.pi / 2):
        b = render_instance((80, 80), 39.5, 39.5, t, 1.0, spec)
        assert np.abs(a - b).sum() > 0.1 * a.sum()


def test_overcrowded_spec_fails_cleanly():
    spec = SyntheticSpec(image_size=(40, 40), max_retries=3)
    with pytest.raises(ValueError):
        synthesize_image(np.random.default_rng(0), spec)


def test_generator_rejects_bad_arguments(tmp_path):
    with pytest.raises(ValueError):
        generate_synthetic_dataset(0, 1, None, str(tmp_path))
    with pytest.raises(ValueError):
        generate_synthetic_dataset(1, 1, None, None)


def test_shape_corpus_is_square_and_seeded():
    a = shape_corpus(3, 65, seed=2)
    b = shape_corpus(3, 65, seed=2)
    assert all(x.shape == (65, 65) for x in a)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
