import numpy as np

from imsat import plots

PNG = b"\x89PNG\r\n\x1a\n"


def test_figures_are_written(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(50, 3))
    a = rng.integers(0, 4, 50)
    outs = [
        plots.objective_trace([3.0, 2.0, 1.5], tmp_path / "t.png"),
        plots.assignment_scatter(x, a, tmp_path / "s.png", labels=a[::-1]),
        plots.assignment_scatter(x, a, tmp_path / "s1.png"),
        plots.cluster_sizes(a, tmp_path / "c.png", n_clusters=6),
    ]
    for p in outs:
        assert p.read_bytes()[:8] == PNG
