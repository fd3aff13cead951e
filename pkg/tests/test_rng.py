import zlib

import numpy as np
import pytest

from fedpoison.rng import key_int, stream


def test_streams_reproducible_and_distinct():
    a = stream(1, "train", 3, 7).random(5)
    assert np.array_equal(a, stream(1, "train", 3, 7).random(5))
    assert not np.array_equal(a, stream(1, "train", 3, 8).random(5))
    assert not np.array_equal(a, stream(2, "train", 3, 7).random(5))
    assert not np.array_equal(a, stream(1, "attack", 3, 7).random(5))


def test_string_keys_stable():
    # crc32, unlike hash(), is stable across interpreter runs
    assert key_int("select") == zlib.crc32(b"select")
    assert key_int(5) == 5


def test_negative_key_rejected():
    with pytest.raises(ValueError):
        key_int(-1)
