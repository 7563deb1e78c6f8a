"""Exercises the Python bindings end to end on a tiny synthetic dataset.

Build and install the extension first:

    pip install maturin
    maturin develop --release -m crates/py/Cargo.toml
"""

import math
import sys
import tempfile
from pathlib import Path

import numpy as np

import fingerdiff as fd

TINY_MODEL = {
    "condition": "feat_diff",
    "clip_length": 4,
    "ccc_k": 2,
    "embed_dim": 16,
    "convstack_channels": [4, 8, 8, 8],
    "frame_size": 32,
    "head_channels": [8, 8],
    "mlp_hidden": 16,
}


def check(name, ok, detail=""):
    print(f"{'ok  ' if ok else 'FAIL'} {name} {detail}".rstrip())
    if not ok:
        check.failures += 1


check.failures = 0


def main():
    print(f"fingerdiff {fd.__version__}")

    defaults = fd.default_model_config()
    counts = fd.count_params()
    check("default config", defaults["condition"] == "feat_diff" and defaults["clip_length"] == 64)
    check("parameter budget", 450_000 <= counts["total"] <= 620_000, str(counts))

    model = fd.Model(TINY_MODEL, seed=1)
    check("model params", model.num_params == fd.count_params(TINY_MODEL)["total"], repr(model))

    rng = np.random.default_rng(0)
    clip = rng.random((4, 32, 32), dtype=np.float32)
    e = model.embed(clip)
    check("unit embedding", e.shape == (16,) and abs(float(np.linalg.norm(e)) - 1.0) < 1e-5)
    check("eval is deterministic", np.array_equal(e, model.embed(clip[:, None])))
    still = np.broadcast_to(clip[:1], clip.shape).copy()
    shifted = np.broadcast_to(clip[1:2], clip.shape).copy()
    check("static clips collapse", np.array_equal(model.embed(still), model.embed(shifted)))

    emb = rng.standard_normal((6, 8))
    loss, grad = fd.supcon_loss(emb, [0, 0, 1, 1, 2, 2], temperature=0.1)
    check("supcon finite", math.isfinite(loss) and grad.shape == emb.shape, f"{loss:.4f}")
    unit = emb / np.linalg.norm(emb, axis=1, keepdims=True)
    two, _ = fd.supcon_loss(unit[:2], [0, 0], temperature=0.1)
    check("supcon pair", abs(two) < 1e-9)
    check("auc", fd.auc([0.9, 0.4], [0.4, 0.1, 0.2]) == 11 / 12)
    check("knn", fd.cosine_knn(np.eye(3)[:, [0, 1, 0]], 1) == [[2], [0], [0]])
    check("warmup", fd.lr_at(0, {"warmup_epochs": 1, "steps_per_epoch": 4, "base_lr": 1e-3}) < 1e-3)

    try:
        fd.Model({"clip_length": 1})
        check("config error", False)
    except ValueError:
        check("config error", True)

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        synth = {
            "n_identities": 4,
            "videos_per_pair": 2,
            "frame_count_range": [8, 10],
            "frame_size": 32,
            "test_identities": 2,
        }
        digest = fd.synth_data(tmp / "data", synth)
        check("synth deterministic", digest == fd.synth_data(tmp / "again", synth), digest[:12])
        trained = fd.train(
            tmp / "data" / "manifest.jsonl",
            tmp / "run",
            model=TINY_MODEL,
            train={
                "n_identities_per_batch": 2,
                "clips_per_identity": 2,
                "epochs": 1,
                "steps_per_epoch": 2,
                "warmup_epochs": 0,
            },
        )
        check("train", len(trained["losses"]) == 2 and all(map(math.isfinite, trained["losses"])))
        restored = fd.Model.load(trained["checkpoint"])
        report = fd.evaluate(restored, tmp / "data" / "manifest.jsonl")
        check("evaluate", 0.0 <= report["mean_auc"] <= 1.0, f"mean AUC {report['mean_auc']:.3f}")
        video = sorted((tmp / "data" / "videos" / "style_a").iterdir())[0]
        check("embed video", restored.embed_video(video).shape == (16,))

    print(f"{check.failures} failures")
    return 1 if check.failures else 0


if __name__ == "__main__":
    sys.exit(main())
