import numpy as np
import pytest
from numpy.testing import assert_allclose

from core.errors import DataFormatError, InvalidArgumentError
from core.targets.dataset import Standardize, load_dataset, standardize_columns


@pytest.fixture
def write_csv(tmp_path):
    def _write(text, name='data.csv'):
        path = tmp_path / name
        path.write_text(text, encoding='utf-8')
        return path
    return _write


def test_standardized_column(write_csv):
    data = load_dataset(write_csv("a,y\n1,0\n2,1\n3,0\n"), 'y')
    assert_allclose(data.features[:, 0], [-1.224745, 0.0, 1.224745], atol=1e-6)
    assert_allclose(data.feature_means, [2.0])
    assert_allclose(data.feature_scales, [np.sqrt(2.0 / 3.0)])
    # responses untouched in the default mode
    assert_allclose(data.responses, [0.0, 1.0, 0.0])


def test_no_standardization_is_bit_identical(write_csv):
    text = "a,b,y\n0.1,1e-300,3\n-2.5e7,0.30000000000000004,4\n"
    data = load_dataset(write_csv(text), 'y', standardize='none')
    assert data.features[0, 0] == 0.1
    assert data.features[0, 1] == 1e-300
    assert data.features[1, 0] == -2.5e7
    assert data.features[1, 1] == 0.30000000000000004
    assert data.responses.tolist() == [3.0, 4.0]
    assert data.feature_means is None


def test_features_keep_file_order(write_csv):
    data = load_dataset(write_csv("c,y,a,b\n1,0,5,9\n2,1,6,7\n"), 'y', standardize='none')
    assert data.feature_names == ['c', 'a', 'b']
    assert data.features[0].tolist() == [1.0, 5.0, 9.0]


def test_response_standardization(write_csv):
    data = load_dataset(write_csv("a,y\n1,10\n2,20\n3,30\n"), 'y', standardize='features_and_response')
    assert_allclose(data.responses, [-1.224745, 0.0, 1.224745], atol=1e-6)
    assert data.response_mean == 20.0
    assert data.provenance()['sd_convention'] == 'population'


def test_non_numeric_cell_is_named(write_csv):
    with pytest.raises(DataFormatError) as info:
        load_dataset(write_csv("a,b,y\n1,2,0\n3,oops,1\n"), 'y')
    assert info.value.row == 2
    assert info.value.column == 'b'
    assert "oops" in str(info.value)


def test_missing_cell_is_named(write_csv):
    with pytest.raises(DataFormatError) as info:
        load_dataset(write_csv("a,y\n1,0\n,1\n"), 'y')
    assert info.value.row == 2
    assert info.value.column == 'a'


def test_non_finite_cell(write_csv):
    with pytest.raises(DataFormatError):
        load_dataset(write_csv("a,y\ninf,0\n1,1\n"), 'y')


def test_constant_column_under_standardization(write_csv):
    with pytest.raises(DataFormatError) as info:
        load_dataset(write_csv("a,b,y\n1,4,0\n2,4,1\n"), 'y')
    assert info.value.column == 'b'


def test_constant_column_without_standardization(write_csv):
    data = load_dataset(write_csv("a,b,y\n1,4,0\n2,4,1\n"), 'y', standardize='none')
    assert data.features[:, 1].tolist() == [4.0, 4.0]


def test_unknown_response_column(write_csv):
    with pytest.raises(DataFormatError):
        load_dataset(write_csv("a,b\n1,2\n"), 'y')


def test_empty_file(write_csv):
    with pytest.raises(DataFormatError):
        load_dataset(write_csv(""), 'y')


def test_header_only(write_csv):
    with pytest.raises(DataFormatError):
        load_dataset(write_csv("a,y\n"), 'y')


def test_unknown_mode(write_csv):
    with pytest.raises(InvalidArgumentError):
        load_dataset(write_csv("a,y\n1,0\n2,1\n"), 'y', standardize='minmax')


def test_standardization_is_idempotent(rng):
    values = rng.standard_normal((50, 3)) * [1.0, 5.0, 0.1] + [3.0, -2.0, 0.0]
    once, _, _ = standardize_columns(values, ['a', 'b', 'c'])
    twice, means, scales = standardize_columns(once, ['a', 'b', 'c'])
    assert_allclose(twice, once, atol=1e-12)
    assert_allclose(means, 0.0, atol=1e-12)
    assert_allclose(scales, 1.0, atol=1e-12)


def test_mode_parsing():
    assert Standardize.parse('FEATURES') is Standardize.FEATURES
    assert Standardize.parse(Standardize.NONE) is Standardize.NONE
