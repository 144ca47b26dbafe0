import numpy as np
import pytest

from enecls.synth import make_fixture, small_taxonomy
from enecls.taxonomy import Taxonomy, load_taxonomy


@pytest.fixture(scope="session")
def taxonomy357() -> Taxonomy:
    """The 3/5/7 synthetic taxonomy (level-2/3/4 sizes)."""
    return small_taxonomy()


@pytest.fixture(scope="session")
def bilingual_fixture():
    return make_fixture(n_concepts=40, seed=3)


def random_taxonomy(rng: np.random.Generator) -> Taxonomy:
    """A random 4-level tree with at least one node per level."""
    lines = []
    for root in range(int(rng.integers(1, 4))):
        lines.append(str(root))
        for child in range(int(rng.integers(1, 4))):
            lines.append(f"{root}.{child}")
            for grand in range(int(rng.integers(0, 4))):
                lines.append(f"{root}.{child}.{grand}")
                for leaf in range(int(rng.integers(0, 4))):
                    lines.append(f"{root}.{child}.{grand}.{leaf}")
    # guarantee one full-depth chain so every level is populated
    lines.extend(["0.0.0", "0.0.0.0"])
    return load_taxonomy(sorted(set(lines)))
