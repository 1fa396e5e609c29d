"""Trains the desk-scale digit classifier and writes the model and test set.

The network is a 64-128-64-10 ReLU MLP on standardized 8x8 digit images,
magnitude-pruned to 90% sparsity per layer and fine-tuned with the pruning
mask held fixed. Parameters are rounded to bfloat16.

Usage: python3 scripts/train_desk_model.py [out_dir]
"""

import struct
import sys
from pathlib import Path

import numpy as np
from sklearn.datasets import load_digits
from sklearn.model_selection import train_test_split
from sklearn.neural_network import MLPClassifier
from sklearn.preprocessing import StandardScaler

DENSE, RELU, ARGMAX = 1, 2, 6
SPARSITY = 0.9
FINE_TUNE_EPOCHS = 100


def bf16_words(a):
    """Round-to-nearest-even float32 -> bfloat16 bit patterns."""
    bits = np.asarray(a, dtype=np.float32).view(np.uint32).astype(np.uint64)
    rounded = bits + 0x7FFF + ((bits >> 16) & 1)
    return (rounded >> 16).astype(np.uint16)


def write_model(path, coefs, intercepts):
    layers = []
    for i, (w, b) in enumerate(zip(coefs, intercepts)):
        layers.append((DENSE, w, b))
        if i + 1 < len(coefs):
            layers.append((RELU, w.shape[1], None))
    layers.append((ARGMAX, coefs[-1].shape[1], None))
    with open(path, "wb") as f:
        f.write(b"FPCM")
        f.write(struct.pack("<I", len(layers)))
        for tag, w, b in layers:
            f.write(struct.pack("<B", tag))
            if tag == DENSE:
                f.write(struct.pack("<II", *w.shape))
                f.write(bf16_words(w).astype("<u2").tobytes())
                f.write(bf16_words(b).astype("<u2").tobytes())
            else:
                f.write(struct.pack("<I", w))


def prune(clf, x, y):
    masks = [np.abs(w) >= np.quantile(np.abs(w), SPARSITY) for w in clf.coefs_]
    for _ in range(FINE_TUNE_EPOCHS):
        for w, m in zip(clf.coefs_, masks):
            w *= m
        clf.partial_fit(x, y)
    for w, m in zip(clf.coefs_, masks):
        w *= m


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "crates/experiment/data")
    out.mkdir(parents=True, exist_ok=True)
    digits = load_digits()
    x_train, x_test, y_train, y_test = train_test_split(
        digits.data, digits.target, test_size=0.2, random_state=0, stratify=digits.target
    )
    scaler = StandardScaler().fit(x_train)
    x_train, x_test = scaler.transform(x_train), scaler.transform(x_test)
    clf = MLPClassifier(hidden_layer_sizes=(128, 64), activation="relu", max_iter=600, random_state=0)
    clf.fit(x_train, y_train)
    prune(clf, x_train, y_train)
    print(f"float accuracy {clf.score(x_test, y_test):.4f}")
    write_model(out / "digits_mlp.fpcm", clf.coefs_, clf.intercepts_)
    with open(out / "digits_test.csv", "w") as f:
        for xs, label in zip(x_test, y_test):
            f.write(",".join([str(label)] + [repr(float(v)) for v in xs]) + "\n")


if __name__ == "__main__":
    main()
