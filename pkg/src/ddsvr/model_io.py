"""Flat text persistence for trained models.

Layout (one item per line, whitespace separated)::

    ddsvr-model 1
    kernel rbf
    gamma 0.5
    C 1.0
    epsilon 0.1
    tol_kkt 0.001
    target_scale 1.0
    bias 0.25
    n 3
    d 2
    feature_means 0.1 -0.3        (or: feature_means none)
    feature_stds 1.2 0.9          (or: feature_stds none)
    <beta_1> <x_11> ... <x_1d>
    ...
    <beta_n> <x_n1> ... <x_nd>

Floats are written with ``repr`` so a load reproduces every value exactly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .core import ValidationError
from .kernels import KernelFamily, KernelSpec
from .solver import SvrConfig, SvrModel

MAGIC = "ddsvr-model"
VERSION = 1

_HEADER = ("kernel", "gamma", "C", "epsilon", "tol_kkt", "target_scale",
           "bias", "n", "d", "feature_means", "feature_stds")


def _vec(v) -> str:
    return "none" if v is None else " ".join(repr(float(a)) for a in v)


def dumps(model: SvrModel) -> str:
    cfg = model.config
    lines = [
        f"{MAGIC} {VERSION}",
        f"kernel {cfg.kernel.family.value}",
        f"gamma {float(cfg.kernel.gamma)!r}",
        f"C {float(cfg.C)!r}",
        f"epsilon {float(cfg.epsilon)!r}",
        f"tol_kkt {float(cfg.tol_kkt)!r}",
        f"target_scale {float(model.target_scale)!r}",
        f"bias {float(model.bias)!r}",
        f"n {model.n}",
        f"d {model.d}",
        f"feature_means {_vec(model.feature_means)}",
        f"feature_stds {_vec(model.feature_stds)}",
    ]
    for b, row in zip(model.beta, model.train_ref):
        lines.append(" ".join(repr(float(v)) for v in (b, *row)))
    return "\n".join(lines) + "\n"


def save_model(model: SvrModel, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(dumps(model))
    return path


def _float(text: str, lineno: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise ValidationError(f"model line {lineno}: bad number {text!r}") from None


def loads(text: str) -> SvrModel:
    lines = text.splitlines()
    if not lines or lines[0].split() != [MAGIC, str(VERSION)]:
        raise ValidationError(f"not a {MAGIC} {VERSION} file")
    if len(lines) < 1 + len(_HEADER):
        raise ValidationError("model file header is truncated")
    head = {}
    for i, key in enumerate(_HEADER, start=2):
        parts = lines[i - 1].split()
        if not parts or parts[0] != key:
            raise ValidationError(f"model line {i}: expected {key!r}")
        head[key] = (i, parts[1:])

    def scalar(key):
        i, vals = head[key]
        if len(vals) != 1:
            raise ValidationError(f"model line {i}: {key} takes one value")
        return vals[0], i

    fam, _ = scalar("kernel")
    try:
        family = KernelFamily(fam)
    except ValueError:
        raise ValidationError(f"unknown kernel family {fam!r}") from None
    num = {k: _float(*scalar(k)) for k in
           ("gamma", "C", "epsilon", "tol_kkt", "target_scale", "bias")}
    n, d = int(scalar("n")[0]), int(scalar("d")[0])

    def vector(key):
        i, vals = head[key]
        if vals == ["none"]:
            return None
        if len(vals) != d:
            raise ValidationError(f"model line {i}: {key} needs {d} values")
        return np.array([_float(v, i) for v in vals])

    body = lines[1 + len(_HEADER):]
    body = [ln for ln in body if ln.strip()]
    if len(body) != n:
        raise ValidationError(f"expected {n} coefficient rows, found {len(body)}")
    rows = np.empty((n, d + 1))
    for j, ln in enumerate(body):
        lineno = 2 + len(_HEADER) + j
        parts = ln.split()
        if len(parts) != d + 1:
            raise ValidationError(f"model line {lineno}: expected {d + 1} values")
        rows[j] = [_float(p, lineno) for p in parts]
    kernel = KernelSpec(family, num["gamma"])
    cfg = SvrConfig(num["C"], num["epsilon"], kernel, num["tol_kkt"])
    return SvrModel(rows[:, 0], num["bias"], cfg, rows[:, 1:],
                    num["target_scale"], vector("feature_means"),
                    vector("feature_stds"))


def load_model(path: str | Path) -> SvrModel:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no such model file: {path}")
    return loads(path.read_text())
