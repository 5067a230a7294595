import numpy as np
import pytest

from clusterkernel import Dataset, MtsRecord


def random_masked_dataset(rng, n, v, t, missing=0.2, with_labels=False,
                          n_classes=3, id_prefix="r"):
    """Random dataset with roughly the requested missing fraction.

    Series 0 is kept fully observed so every (v, t) cell has at least one
    observation and dataset-level moments are always defined.
    """
    offsets = rng.standard_normal((1, v, 1))
    x = rng.standard_normal((n, v, t)) + offsets
    m = (rng.random((n, v, t)) >= missing).astype(np.uint8)
    m[0] = 1
    records = [MtsRecord(values=np.where(m[i].astype(bool), x[i], 0.0),
                         mask=m[i], id=f"{id_prefix}{i}") for i in range(n)]
    labels = rng.integers(0, n_classes, n) if with_labels else None
    return Dataset(records=records, labels=labels)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
