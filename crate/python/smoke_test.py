"""Smoke test for the glycovae Python extension.

Builds the extension with cargo unless GLYCOVAE_PY_LIB points at an already
built shared library, then exercises every exported entry point.
"""

import math
import os
import shutil
import subprocess
import sys
import sysconfig
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def locate_library() -> Path:
    env = os.environ.get("GLYCOVAE_PY_LIB")
    if env:
        return Path(env)
    subprocess.run(
        ["cargo", "build", "--release", "-p", "glycovae-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    target = Path(os.environ.get("CARGO_TARGET_DIR", ROOT / "target"))
    for name in ("libglycovae_py.so", "libglycovae_py.dylib", "glycovae_py.dll"):
        path = target / "release" / name
        if path.exists():
            return path
    sys.exit("built library not found under " + str(target / "release"))


def load_module(tmp: Path):
    suffix = sysconfig.get_config_var("EXT_SUFFIX") or ".so"
    shutil.copy(locate_library(), tmp / ("glycovae_py" + suffix))
    sys.path.insert(0, str(tmp))
    import glycovae_py

    return glycovae_py


def main() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        g = load_module(Path(tmp))

        triple = g.synth(n_samples=240, seed=3)
        assert len(triple["ts1"]) == 240
        assert triple["gap_len"] == 60
        assert sum(not m for m in triple["mask3"]) == 60
        assert g.synth(n_samples=240, seed=3) == triple
        exact = g.synth(n_samples=120, seed=0, noise=0.0)["ts1"]
        assert all(abs(v - math.sin(2 * math.pi * t / 12)) < 1e-12 for t, v in enumerate(exact))

        assert g.rmse([100.0, 200.0], [110.0, 190.0]) == 10.0
        assert abs(g.mape([100.0, 200.0], [110.0, 190.0]) - 7.5) < 1e-12
        assert abs(g.nmape([100.0, 200.0], [110.0, 190.0]) - 100 * 20 / 300) < 1e-12
        zones = [g.clarke_zone(r, p) for r, p in [(100, 100), (165, 130), (100, 215), (250, 100), (200, 60)]]
        assert zones == ["A", "B", "C", "D", "E"], zones
        summary = g.clarke_summary([100, 200, 100, 250, 165], [100, 60, 215, 100, 130])
        assert all(abs(v - 20.0) < 1e-12 for v in summary.values()), summary
        assert g.kl_divergence([0.0], [0.0]) == 0.0
        assert abs(g.kl_divergence([0.0], [math.log(4)]) - (1.5 - math.log(2))) < 1e-12

        assert g.forward_fill([[1.0], [2.0], [3.0]], 2) == [[3.0], [3.0]]
        assert g.forward_fill([[1.0], [2.0]], 1, mask=[[True], [False]]) == [[1.0]]
        trend = g.linear_trend([[1.0], [2.0], [3.0]], 2)
        assert all(abs(a[0] - b) < 1e-12 for a, b in zip(trend, [4.0, 5.0]))
        assert all(abs(v - 42.0) < 1e-12 for v in g.arima([42.0] * 12, 3, p=1, d=0))
        try:
            g.rmse([1.0], [1.0, 2.0])
        except ValueError:
            pass
        else:
            raise AssertionError("length mismatch must raise ValueError")

        model = g.VaeRnn(3, cell="lstm", hidden=8, latent=2, seed=1)
        assert "lstm" in repr(model) and model.latent == 2
        window = [[math.sin(t / 3 + c) for c in range(3)] for t in range(12)]
        mu, logvar = model.encode(window)
        assert len(mu) == 2 and len(logvar) == 2
        assert len(model.forecast(window, 4)) == 4
        mask = [[(t + c) % 4 != 0 for c in range(3)] for t in range(12)]
        filled = model.impute(window, mask)
        assert all(filled[t][c] == window[t][c] for t in range(12) for c in range(3) if mask[t][c])

        series = [[math.sin(2 * math.pi * t / p) for p in (12, 6, 4)] for t in range(160)]
        history = model.fit(series, input_len=12, horizon=3, epochs=3, batch_size=16, learning_rate=5e-3)
        assert len(history) == 3 and all(math.isfinite(e[3]) for e in history)

        path = Path(tmp) / "model.ckpt"
        model.save(str(path))
        again = g.VaeRnn.load(str(path))
        assert again.forecast(window, 4) == model.forecast(window, 4)
    print("python smoke test passed")


if __name__ == "__main__":
    main()
