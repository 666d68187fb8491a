import numpy as np

from gfars.grouping import GroupingResult, MixedPartSet
from gfars.partenc import PartCloud
from gfars.plotting import plot_groups, plot_loss_curve, plot_step_sweep

PNG_MAGIC = b"\x89PNG"


def test_loss_curve(tmp_path):
    hist = [{"step": i + 1, "loss": 2.0 / (i + 1), "val_f1": 0.5 if i % 20 == 19 else None} for i in range(60)]
    path = plot_loss_curve(hist, tmp_path / "sub" / "loss.png")
    assert path.read_bytes()[:4] == PNG_MAGIC
    short = plot_loss_curve(hist[:3], tmp_path / "short.png")
    assert short.stat().st_size > 0


def test_step_sweep(tmp_path):
    rows = [{"steps": n, "single_f1": n / 1000, "overall_f1": n / 1200} for n in (300, 100, 200)]
    assert plot_step_sweep(rows, tmp_path / "s.png").read_bytes()[:4] == PNG_MAGIC


def test_group_grid_svg_is_reproducible(tmp_path):
    rng = np.random.default_rng(0)
    s = MixedPartSet("demo", [PartCloud(i, rng.normal(size=(10, 3))) for i in range(5)])
    r = GroupingResult("demo", [[0, 2], [1]], [3, 4])
    a = plot_groups(s, r, tmp_path / "a.svg").read_text()
    b = plot_groups(s, r, tmp_path / "b.svg").read_text()
    assert a == b and "residual" in a and "group 1" in a
    empty = plot_groups(MixedPartSet("e", []), GroupingResult("e"), tmp_path / "e.svg")
    assert empty.exists()
