"""The bundled shapes dataset generator: determinism, annotations, geometry."""

import json

import numpy as np
from PIL import Image

from reldet.synthetic import BASE_CLASS_IDS, NOVEL_CLASS_IDS, generate


def load_doc(d):
    return json.loads((d / "annotations.json").read_text())


class TestGenerate:
    def test_writes_complete_dataset(self, shapes_dir):
        doc = load_doc(shapes_dir)
        assert len(doc["images"]) == 42
        assert {c["id"] for c in doc["categories"]} == set(range(1, 8))
        assert doc["info"]["base_class_ids"] == list(BASE_CLASS_IDS)
        assert doc["info"]["novel_class_ids"] == list(NOVEL_CLASS_IDS)
        for im in doc["images"]:
            f = shapes_dir / im["file_name"]
            assert f.exists()
            with Image.open(f) as img:
                assert img.size == (im["width"], im["height"])

    def test_every_class_has_images(self, shapes_dir):
        doc = load_doc(shapes_dir)
        per_class = {c: 0 for c in range(1, 8)}
        for a in doc["annotations"]:
            per_class[a["category_id"]] += 1
        assert all(v >= 6 for v in per_class.values())

    def test_boxes_inside_image_and_positive(self, shapes_dir):
        doc = load_doc(shapes_dir)
        dims = {im["id"]: (im["width"], im["height"]) for im in doc["images"]}
        for a in doc["annotations"]:
            x, y, w, h = a["bbox"]
            iw, ih = dims[a["image_id"]]
            assert w > 0 and h > 0
            assert x >= 0 and y >= 0 and x + w <= iw and y + h <= ih
            assert abs(a["area"] - w * h) < 1e-6

    def test_deterministic_in_seed(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        generate(a, images_per_class=2, image_size=64, seed=9)
        generate(b, images_per_class=2, image_size=64, seed=9)
        assert load_doc(a) == load_doc(b)
        for im in load_doc(a)["images"]:
            pa = np.asarray(Image.open(a / im["file_name"]))
            pb = np.asarray(Image.open(b / im["file_name"]))
            np.testing.assert_array_equal(pa, pb)

    def test_seed_changes_content(self, tmp_path):
        a = tmp_path / "s1"
        b = tmp_path / "s2"
        generate(a, images_per_class=2, image_size=64, seed=1)
        generate(b, images_per_class=2, image_size=64, seed=2)
        da, db = load_doc(a), load_doc(b)
        assert da["annotations"] != db["annotations"]

    def test_boxes_are_tight_on_the_shape(self, tmp_path):
        # the drawn object must touch every edge of its box: each border
        # strip inside the box has to contrast with the strip just outside
        out = tmp_path / "tight"
        generate(out, images_per_class=3, image_size=64, seed=4)
        doc = load_doc(out)
        files = {im["id"]: im["file_name"] for im in doc["images"]}
        by_image = {}
        for a in doc["annotations"]:
            by_image.setdefault(a["image_id"], []).append(a)

        def touches_other(a, x1, y1, x2, y2):
            for other in by_image[a["image_id"]]:
                if other["id"] == a["id"]:
                    continue
                ox, oy, ow, oh = other["bbox"]
                if x1 < ox + ow and ox < x2 and y1 < oy + oh and oy < y2:
                    return True
            return False

        checked = 0
        for a in doc["annotations"]:
            img = np.asarray(Image.open(out / files[a["image_id"]]),
                             dtype=np.int32)
            hh, ww = img.shape[:2]
            x, y, w, h = (int(round(v)) for v in a["bbox"])
            edges = []
            if y > 0 and not touches_other(a, x, y - 1, x + w, y):
                edges.append(np.abs(img[y, x:x + w] - img[y - 1, x:x + w]).max())
            if y + h < hh and not touches_other(a, x, y + h, x + w, y + h + 1):
                edges.append(np.abs(img[y + h - 1, x:x + w]
                                    - img[y + h, x:x + w]).max())
            if x > 0 and not touches_other(a, x - 1, y, x, y + h):
                edges.append(np.abs(img[y:y + h, x] - img[y:y + h, x - 1]).max())
            if x + w < ww and not touches_other(a, x + w, y, x + w + 1, y + h):
                edges.append(np.abs(img[y:y + h, x + w - 1]
                                    - img[y:y + h, x + w]).max())
            for d in edges:
                assert d > 30
                checked += 1
        assert checked > 20
