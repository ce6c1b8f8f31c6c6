"""Built-in classifiers, the cross-entropy loss, and the oracle protocol."""

import struct
import sys
import textwrap

import mpmath
import numpy as np
import pytest

from advview.classifiers import (
    ExternalProcessClassifier,
    LinearPixelClassifier,
    Logits,
    TemplateBankClassifier,
    cross_entropy,
    is_misclassified,
    predict,
    preprocess,
    resize_bilinear,
)
from advview.errors import OracleProtocolError
from advview.field import build_primitive_scene
from advview.geometry import Viewpoint
from advview.rendering import ImageBuffer, RenderConfig, render


def image_of(value=0.5, h=8, w=8):
    return ImageBuffer(np.full((h, w, 3), value))


class TestTemplateBank:
    def test_exact_template_match_wins(self, rng):
        templates = rng.uniform(0, 1, size=(3, 8, 8, 3))
        clf = TemplateBankClassifier(templates)
        for j in range(3):
            logits = clf.predict(ImageBuffer(templates[j]))
            assert logits.argmax() == j
            assert logits.values[j] == pytest.approx(0.0, abs=1e-12)

    def test_two_tone_cube_front_back_classes(self):
        field = build_primitive_scene("two_tone_cube", resolution=(32, 32, 32))
        cfg = RenderConfig(samples_per_ray=24, stratified=False, width=24, height=24)
        front = render(field, Viewpoint(0, 0, 0, 0, 0, 0), cfg)
        back = render(field, Viewpoint(180, 0, 0, 0, 0, 0), cfg)
        clf = TemplateBankClassifier.from_images([front, back])
        assert clf.predict(front).argmax() == 0
        assert clf.predict(back).argmax() == 1
        assert not is_misclassified(clf, front, 0)
        assert is_misclassified(clf, back, 0)

    def test_requires_normalized_templates(self):
        with pytest.raises(ValueError):
            TemplateBankClassifier(np.full((2, 4, 4, 3), 1.5))


class TestLinearPixels:
    def test_zero_weights_give_uniform_logits_tie_to_lowest(self):
        clf = LinearPixelClassifier(np.zeros((3, 8 * 8 * 3)), np.zeros(3), (8, 8))
        logits = clf.predict(image_of())
        assert np.all(logits.values == logits.values[0])
        assert logits.argmax() == 0
        assert not is_misclassified(clf, image_of(), 0)
        assert is_misclassified(clf, image_of(), 1)

    def test_affine_map(self, rng):
        w = rng.normal(size=(2, 4 * 4 * 3))
        b = rng.normal(size=2)
        clf = LinearPixelClassifier(w, b, (4, 4))
        img = ImageBuffer(rng.uniform(0, 1, size=(4, 4, 3)))
        np.testing.assert_allclose(clf.predict(img).values, w @ img.pixels.ravel() + b)

    def test_weight_shape_checked(self):
        with pytest.raises(ValueError):
            LinearPixelClassifier(np.zeros((2, 10)), np.zeros(2), (4, 4))

    def test_predict_is_pure(self, rng):
        clf = LinearPixelClassifier(rng.normal(size=(2, 48)), rng.normal(size=2), (4, 4))
        img = ImageBuffer(rng.uniform(0, 1, size=(4, 4, 3)))
        a = predict(clf, img).values
        b = predict(clf, img).values
        np.testing.assert_array_equal(a, b)


class TestPreprocess:
    def test_identity_when_sizes_match(self, rng):
        px = rng.uniform(0, 1, size=(8, 8, 3))
        np.testing.assert_array_equal(preprocess(ImageBuffer(px), (8, 8)), px)

    def test_constant_image_stays_constant(self):
        out = preprocess(image_of(0.3, h=10, w=6), (4, 4))
        np.testing.assert_allclose(out, 0.3, atol=1e-12)
        assert out.shape == (4, 4, 3)

    def test_aspect_mismatch_center_crops(self):
        # left half red, right half blue, wide image: cover-resize to a
        # square then center crop keeps both halves
        px = np.zeros((4, 8, 3))
        px[:, :4] = (1, 0, 0)
        px[:, 4:] = (0, 0, 1)
        out = preprocess(ImageBuffer(px), (4, 4))
        assert out.shape == (4, 4, 3)
        assert out[0, 0, 0] > 0.5 and out[0, -1, 2] > 0.5

    def test_resize_bilinear_interpolates(self):
        px = np.zeros((1, 2, 3))
        px[0, 1] = 1.0
        out = resize_bilinear(px, 1, 4)
        assert np.all(np.diff(out[0, :, 0]) >= 0)  # monotone ramp
        assert out[0, 0, 0] < 0.3 and out[0, -1, 0] > 0.7


class TestCrossEntropy:
    def test_large_margin_no_overflow(self):
        assert cross_entropy(Logits(np.array([1000.0, 0.0])), 0) == pytest.approx(0.0, abs=1e-12)
        assert np.isfinite(cross_entropy(Logits(np.array([0.0, 1000.0])), 0))

    def test_uniform_logits(self):
        assert cross_entropy(Logits(np.zeros(4)), 2) == pytest.approx(np.log(4.0), abs=1e-12)

    def test_matches_arbitrary_precision_oracle(self):
        mpmath.mp.dps = 40
        z = [mpmath.mpf(2), mpmath.mpf(1), mpmath.mpf(0)]
        oracle = float(-mpmath.log(mpmath.e ** z[0] / sum(mpmath.e**x for x in z)))
        got = cross_entropy(Logits(np.array([2.0, 1.0, 0.0])), 0)
        assert got == pytest.approx(oracle, abs=1e-12)

    def test_nonnegative_and_shift_invariant(self, rng):
        for _ in range(100):
            vals = rng.normal(scale=5, size=5)
            y = int(rng.integers(0, 5))
            ce = cross_entropy(Logits(vals), y)
            assert ce >= 0
            assert cross_entropy(Logits(vals + 17.3), y) == pytest.approx(ce, abs=1e-9)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            cross_entropy(Logits(np.zeros(3)), 3)

    def test_misclassification_shift_invariant(self, rng):
        clf = LinearPixelClassifier(rng.normal(size=(3, 48)), rng.normal(size=3), (4, 4))
        img = ImageBuffer(rng.uniform(0, 1, size=(4, 4, 3)))
        base = predict(clf, img)
        assert (base.argmax() != 1) == is_misclassified(clf, img, 1)
        shifted = Logits(base.values + 5.0)
        assert shifted.argmax() == base.argmax()

    def test_tie_breaks_to_lowest_index(self):
        logits = Logits(np.array([1.0, 1.0, 0.0]))
        assert logits.argmax() == 0


ECHO_ORACLE = textwrap.dedent(
    """
    import struct, sys, zlib
    n_reply = int(sys.argv[1]) if len(sys.argv) > 1 else 2
    mode = sys.argv[2] if len(sys.argv) > 2 else "ok"
    stdin, stdout = sys.stdin.buffer, sys.stdout.buffer
    while True:
        head = stdin.read(4)
        if len(head) < 4:
            break
        (n,) = struct.unpack(">I", head)
        payload = stdin.read(n)
        if mode == "sleep":
            import time; time.sleep(5.0)
        if mode == "short":
            stdout.write(struct.pack(">I", n_reply))
            stdout.write(struct.pack("<d", 1.0))  # fewer logits than promised
            stdout.flush()
            break
        logits = [float(len(payload)), float(zlib.crc32(payload) % 1000)]
        logits += [0.0] * (n_reply - 2)
        stdout.write(struct.pack(">I", n_reply))
        stdout.write(struct.pack(f"<{n_reply}d", *logits[:n_reply]))
        stdout.flush()
    """
)


@pytest.fixture()
def oracle_script(tmp_path):
    path = tmp_path / "oracle.py"
    path.write_text(ECHO_ORACLE)
    return str(path)


class TestExternalOracle:
    def test_round_trip_logits(self, oracle_script, rng):
        img = ImageBuffer(rng.uniform(0, 1, size=(8, 8, 3)))
        with ExternalProcessClassifier(
            [sys.executable, oracle_script, "2"], class_count=2, input_size=(8, 8)
        ) as clf:
            logits = clf.predict(img)
            assert logits.class_count == 2
            # first logit echoes the PNG payload length
            assert logits.values[0] == len(ImageBuffer(img.pixels).to_png_bytes())
            again = clf.predict(img)
            np.testing.assert_array_equal(logits.values, again.values)

    def test_wrong_class_count_is_protocol_error(self, oracle_script, rng):
        img = ImageBuffer(rng.uniform(0, 1, size=(8, 8, 3)))
        with ExternalProcessClassifier(
            [sys.executable, oracle_script, "3"], class_count=2, input_size=(8, 8)
        ) as clf:
            with pytest.raises(OracleProtocolError, match="3 logits"):
                clf.predict(img)

    def test_truncated_reply_is_protocol_error(self, oracle_script, rng):
        img = ImageBuffer(rng.uniform(0, 1, size=(8, 8, 3)))
        with ExternalProcessClassifier(
            [sys.executable, oracle_script, "2", "short"], class_count=2, input_size=(8, 8)
        ) as clf:
            with pytest.raises(OracleProtocolError):
                clf.predict(img)

    def test_timeout(self, oracle_script, rng):
        img = ImageBuffer(rng.uniform(0, 1, size=(8, 8, 3)))
        with ExternalProcessClassifier(
            [sys.executable, oracle_script, "2", "sleep"],
            class_count=2,
            input_size=(8, 8),
            timeout=0.3,
        ) as clf:
            with pytest.raises(TimeoutError):
                clf.predict(img)


class TestLogits:
    def test_needs_two_finite_classes(self):
        with pytest.raises(ValueError):
            Logits(np.array([1.0]))
        with pytest.raises(ValueError):
            Logits(np.array([1.0, np.inf]))
