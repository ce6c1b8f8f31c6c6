"""Black-box target classifiers and the classification loss.

Two deterministic built-ins cover desk-scale experiments:

* ``LinearPixelClassifier`` scores ``W @ flatten(image) + bias``.
* ``TemplateBankClassifier`` scores the negative mean-squared distance to a
  per-class image template (optionally sharpened by ``logit_scale``).

``ExternalProcessClassifier`` adapts any out-of-process model speaking the
length-prefixed wire protocol below, keeping the attack strictly black-box.

Oracle wire protocol (one subprocess per oracle; calls are serialized):

* request:  4-byte big-endian payload length, then the image as PNG bytes.
* reply:    4-byte big-endian class count ``C``, then ``C`` little-endian
  float64 logits.

A reply that cannot be framed (EOF, short read, implausible count) raises
``OracleProtocolError``; replies not arriving within the timeout raise
``TimeoutError``.

Images are bilinearly resized to cover the classifier's input size and
center-cropped when the aspect ratio differs.
"""

from __future__ import annotations

import selectors
import struct
import subprocess
import threading
from dataclasses import dataclass

import numpy as np

from .errors import OracleProtocolError
from .rendering import ImageBuffer


@dataclass(frozen=True)
class Logits:
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        if vals.size < 2:
            raise ValueError("need at least 2 classes")
        if not np.all(np.isfinite(vals)):
            raise ValueError("logits must be finite")
        object.__setattr__(self, "values", vals)

    @property
    def class_count(self) -> int:
        return self.values.size

    def argmax(self) -> int:
        # ties resolve to the lowest index
        return int(np.argmax(self.values))


def resize_bilinear(pixels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of an (h, w, 3) array to (out_h, out_w, 3)."""
    in_h, in_w = pixels.shape[:2]
    ys = (np.arange(out_h) + 0.5) * in_h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * in_w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, in_h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, in_w - 1)
    y1 = np.clip(y0 + 1, 0, in_h - 1)
    x1 = np.clip(x0 + 1, 0, in_w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    fx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    top = pixels[y0][:, x0] * (1 - fx) + pixels[y0][:, x1] * fx
    bot = pixels[y1][:, x0] * (1 - fx) + pixels[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def preprocess(image: ImageBuffer, input_size: tuple[int, int]) -> np.ndarray:
    """Resize (covering) and center-crop to ``input_size`` = (width, height)."""
    want_w, want_h = input_size
    px = image.pixels
    scale = max(want_w / image.width, want_h / image.height)
    mid_w = max(want_w, int(round(image.width * scale)))
    mid_h = max(want_h, int(round(image.height * scale)))
    if (mid_h, mid_w) != (image.height, image.width):
        px = resize_bilinear(px, mid_h, mid_w)
    top = (mid_h - want_h) // 2
    left = (mid_w - want_w) // 2
    out = px[top : top + want_h, left : left + want_w]
    if out.shape[:2] != (want_h, want_w):
        raise RuntimeError(f"preprocessing produced {out.shape[:2]}, wanted {(want_h, want_w)}")
    return out


class LinearPixelClassifier:
    """Logits are an affine map of the flattened preprocessed image."""

    kind = "linear_pixels"

    def __init__(self, weights, bias, input_size: tuple[int, int]):
        self.input_size = (int(input_size[0]), int(input_size[1]))
        w, h = self.input_size
        self.weights = np.asarray(weights, dtype=float)
        self.bias = np.asarray(bias, dtype=float).reshape(-1)
        if self.weights.shape != (self.bias.size, w * h * 3):
            raise ValueError(
                f"weights must have shape (C, {w * h * 3}), got {self.weights.shape}"
            )
        if self.bias.size < 2:
            raise ValueError("need at least 2 classes")

    @property
    def class_count(self) -> int:
        return self.bias.size

    def predict(self, image: ImageBuffer) -> Logits:
        flat = preprocess(image, self.input_size).ravel()
        return Logits(self.weights @ flat + self.bias)


class TemplateBankClassifier:
    """Logits are ``-logit_scale * MSE(image, template_c)`` per class."""

    kind = "template_bank"

    def __init__(self, templates, logit_scale: float = 1.0):
        templates = np.asarray(templates, dtype=float)
        if templates.ndim != 4 or templates.shape[0] < 2 or templates.shape[-1] != 3:
            raise ValueError("templates must have shape (C >= 2, h, w, 3)")
        if np.any(templates < 0) or np.any(templates > 1):
            raise ValueError("templates must be normalized to [0, 1] channels")
        if logit_scale <= 0:
            raise ValueError("logit_scale must be positive")
        self.templates = templates
        self.logit_scale = float(logit_scale)
        self.input_size = (templates.shape[2], templates.shape[1])

    @classmethod
    def from_images(cls, images: list[ImageBuffer], logit_scale: float = 1.0):
        return cls(np.stack([im.pixels for im in images]), logit_scale=logit_scale)

    @property
    def class_count(self) -> int:
        return self.templates.shape[0]

    def predict(self, image: ImageBuffer) -> Logits:
        px = preprocess(image, self.input_size)
        mse = ((self.templates - px) ** 2).mean(axis=(1, 2, 3))
        return Logits(-self.logit_scale * mse)


class ExternalProcessClassifier:
    """Out-of-process oracle speaking the length-prefixed logits protocol.

    One instance wraps one subprocess; calls are serialized per instance,
    so run parallel batches against separate instances.
    """

    kind = "external_command"

    def __init__(self, argv: list[str], class_count: int, input_size=(64, 64), timeout: float = 10.0):
        if class_count < 2:
            raise ValueError("need at least 2 classes")
        self.argv = list(argv)
        self.class_count = int(class_count)
        self.input_size = (int(input_size[0]), int(input_size[1]))
        self.timeout = float(timeout)
        self._lock = threading.Lock()
        self._proc = subprocess.Popen(
            self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE
        )

    def _read_exact(self, n: int) -> bytes:
        out = b""
        sel = selectors.DefaultSelector()
        sel.register(self._proc.stdout, selectors.EVENT_READ)
        try:
            while len(out) < n:
                if not sel.select(timeout=self.timeout):
                    raise TimeoutError(
                        f"oracle produced no reply within {self.timeout}s"
                    )
                chunk = self._proc.stdout.read1(n - len(out))
                if not chunk:
                    raise OracleProtocolError(
                        f"oracle closed its stream after {len(out)}/{n} reply bytes"
                    )
                out += chunk
        finally:
            sel.close()
        return out

    def predict(self, image: ImageBuffer) -> Logits:
        px = preprocess(image, self.input_size)
        payload = ImageBuffer(np.clip(px, 0.0, 1.0)).to_png_bytes()
        with self._lock:
            if self._proc.poll() is not None:
                raise OracleProtocolError("oracle process has exited")
            self._proc.stdin.write(struct.pack(">I", len(payload)) + payload)
            self._proc.stdin.flush()
            (count,) = struct.unpack(">I", self._read_exact(4))
            if count != self.class_count:
                raise OracleProtocolError(
                    f"oracle replied with {count} logits, expected {self.class_count}"
                )
            raw = self._read_exact(8 * count)
        values = np.frombuffer(raw, dtype="<f8")
        if not np.all(np.isfinite(values)):
            raise OracleProtocolError("oracle replied with non-finite logits")
        return Logits(values)

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.stdin.close()
            try:
                self._proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


Classifier = LinearPixelClassifier | TemplateBankClassifier | ExternalProcessClassifier


def predict(classifier, image: ImageBuffer) -> Logits:
    return classifier.predict(image)


def cross_entropy(logits, y: int) -> float:
    """Cross-entropy ``-log softmax(logits)[y]`` with max-shift stability."""
    vals = logits.values if isinstance(logits, Logits) else np.asarray(logits, dtype=float)
    if not 0 <= y < vals.size:
        raise ValueError(f"label {y} out of range for {vals.size} classes")
    shifted = vals - vals.max()
    return float(np.log(np.exp(shifted).sum()) - shifted[y])


def is_misclassified(classifier, image: ImageBuffer, y: int) -> bool:
    """True when the predicted class (ties to the lowest index) differs
    from ``y``."""
    return predict(classifier, image).argmax() != y
