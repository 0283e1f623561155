import pytest

from efoent.syntax import tokenize
from efoent.templates import (
    LISP_FORMS,
    QUERY_TYPES,
    SEEN_TYPES,
    UNSEEN_TYPES,
    get_type,
    max_template_length,
)


def test_catalogue_sizes():
    assert len(QUERY_TYPES) == 55
    assert len(SEEN_TYPES) == 23
    assert len(UNSEEN_TYPES) == 32
    assert not set(SEEN_TYPES) & set(UNSEEN_TYPES)
    assert len(LISP_FORMS) == 25


def test_type_ids_are_dense():
    assert sorted(q.type_id for q in QUERY_TYPES.values()) == list(range(55))


def test_feature_flags_agree_with_formulas():
    for q in QUERY_TYPES.values():
        ast = q.template
        assert q.neg == any(a.negated for a in ast.atoms), q.name
        assert q.depth >= 1


@pytest.mark.parametrize("name, seen", [("1p", True), ("3cm", True), ("2pi", False), ("3cnm", False)])
def test_seen_flag(name, seen):
    assert get_type(name).seen is seen


def test_unknown_type():
    with pytest.raises(KeyError, match="unknown query type"):
        get_type("9z")


def test_max_template_length_covers_unseen_types():
    lengths = {q.name: len(tokenize(q.template)) for q in QUERY_TYPES.values()}
    assert max_template_length() == max(lengths.values())
    assert max(lengths[n] for n in UNSEEN_TYPES) > max(lengths[n] for n in SEEN_TYPES)


def test_lisp_forms_only_for_listed_types():
    for q in QUERY_TYPES.values():
        assert (q.lisp is not None) == (q.name in LISP_FORMS)
