from __future__ import annotations

import pytest

from synthcorpus import build_separable_corpus, tiny_corpus

from tracelab.corpus import load_project


@pytest.fixture(scope="session")
def tiny_root(tmp_path_factory):
    return tiny_corpus(tmp_path_factory.mktemp("tiny"))


@pytest.fixture(scope="session")
def tiny_project(tiny_root):
    return load_project(tiny_root)


@pytest.fixture(scope="session")
def separable_root(tmp_path_factory):
    return build_separable_corpus(tmp_path_factory.mktemp("separable"))


@pytest.fixture(scope="session")
def separable_project(separable_root):
    return load_project(separable_root)
