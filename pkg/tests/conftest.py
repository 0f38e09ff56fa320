import numpy as np
import pytest

from headrec.data import SplitSpec, split_dataset, vocabulary
from headrec.embedding import EmbeddingTable
from headrec.synthetic import SyntheticSpec, generate_synthetic
from headrec.training import CrossDomainData, TrainConfig

TINY_SPEC = dict(n_src_users=60, n_src_items=30, n_tgt_users=50, n_tgt_items=25,
                 max_degree=15, review_len=6)


def tiny_data(seed=0, doc_len=12, dim=8, **spec_overrides):
    spec = SyntheticSpec(seed=seed, **{**TINY_SPEC, **spec_overrides})
    src, tgt = generate_synthetic(spec)
    train, valid, test = split_dataset(tgt, SplitSpec(seed=seed))
    table = EmbeddingTable.synthetic(vocabulary([src, train]), dim=dim, seed=seed)
    return CrossDomainData(src, train, valid, test, table, doc_len=doc_len)


def tiny_config(**kw):
    base = dict(batch_size=8, max_iters=5, doc_len=12, feature_dim=6, embed_dim=8,
                lr=1e-2, eval_every=5, candidates=20)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def data():
    return tiny_data()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance lines collected during the run and repeated at the end of the report
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
