import numpy as np
import pytest

from cpforest import Dataset, rng_from


def make_labelled(n_benign, n_malicious, dim=3, seed=0):
    """Small labelled dataset with reproducible feature noise."""
    rng = rng_from(seed)
    n = n_benign + n_malicious
    X = rng.normal(size=(n, dim))
    y = np.concatenate([np.zeros(n_benign, dtype=int), np.ones(n_malicious, dtype=int)])
    ids = tuple(f"app{i:05d}" for i in range(n))
    return Dataset(X, y, ids, tuple(f"f{j}" for j in range(dim)))


@pytest.fixture
def labelled_dataset():
    return make_labelled


def write_recordings_csv(path, apps, schema):
    """apps: list of (app_id, label, pre_row, [run_rows]); rows follow schema order."""
    lines = ["app_id,label,phase,tick," + ",".join(schema)]
    for app_id, label, pre, runs in apps:
        lines.append(f"{app_id},{label},pre,0," + ",".join(str(v) for v in pre))
        for tick, row in enumerate(runs, start=1):
            lines.append(f"{app_id},{label},run,{tick}," + ",".join(str(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
