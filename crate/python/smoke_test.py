"""Smoke test for the stiffwatch_py extension.

Build and install first, e.g. `maturin develop -m crates/python/Cargo.toml`.
"""

import math
import pathlib
import sys
import tempfile

import stiffwatch_py as sw

ROOT = pathlib.Path(__file__).resolve().parents[1]


def check(cond, msg):
    if not cond:
        print(f"FAIL: {msg}")
        sys.exit(1)
    print(f"ok: {msg}")


def main():
    frame = sw.Structure.benchmark(tmd=False)
    tuning = frame.warburton(100.0)
    check(abs(tuning["mass_ratio"] - 0.076) < 1e-3, f"mass ratio {tuning['mass_ratio']:.4f}")
    check(abs(tuning["stiffness"] - 360.0) / 360.0 < 0.015, f"TMD stiffness {tuning['stiffness']:.1f} N/m")

    freqs = frame.modal()["frequencies"]
    check(abs(freqs[0] - 0.33) < 0.005 and abs(freqs[1] - 0.84) < 0.005, f"bare frequencies {freqs}")

    check(abs(sw.detection_threshold(2) - 72.0) < 0.1, "threshold 72 for two accelerometers")

    cfg = sw.Config.load(str(ROOT / "configs" / "study1.toml"))
    with tempfile.TemporaryDirectory() as tmp:
        events = sw.simulate(cfg, tmp)
        check(len(events) == 2, f"two damage events realized at {[round(e['time'], 2) for e in events]}")
        metrics = sw.identify(cfg, tmp + "/id", data_dir=tmp)
        check("false_positives = 0" in metrics, "no false positives")
        check("localized = true" in metrics, "event localized")
        check("estimate[N/m]" in sw.report(tmp + "/id"), "report renders")

    bad = "seed = 1\nduration = 0.0\nstructure = 'frame.toml'\n"
    try:
        sw.Config.from_toml(bad, str(ROOT / "configs"))
    except sw.ValidationError as e:
        check(True, f"validation error raised ({e})")
    else:
        check(False, "zero duration rejected")

    n = 1500
    ground = [0.5 * math.sin(2.0 * math.pi * 0.3 * k * 0.02) for k in range(n)]
    tmd = sw.Structure.benchmark(tmd=True)
    meas = [[0.0, 0.0] for _ in range(n)]
    out = sw.identify_arrays(tmd, meas, ground, 0.02, tmd.story_stiffness, adaptive=False)
    check(len(out["stiffness"]) == n, "stiffness history length")


if __name__ == "__main__":
    main()
