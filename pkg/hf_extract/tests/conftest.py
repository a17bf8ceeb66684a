import pytest

import tinyencoder


@pytest.fixture(scope="session")
def model_dir(tmp_path_factory):
    return tinyencoder.build_encoder_dir(tmp_path_factory.mktemp("encoder") / "tiny")


@pytest.fixture(scope="session")
def corpus_path(tmp_path_factory):
    return tinyencoder.write_corpus(tmp_path_factory.mktemp("corpus") / "corpus.jsonl")
