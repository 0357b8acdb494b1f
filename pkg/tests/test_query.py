import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attackgkb.query import (
    And,
    IllegalCharacter,
    Not,
    Or,
    Predicate,
    QuerySyntaxError,
    UnknownField,
    UnterminatedString,
    compile_query,
    evaluate,
    parse_query,
    tokenize,
)
from attackgkb.stix_core import serialize_bundle
from conftest import LISTING_QUERY
from oracles import evaluate_oracle, group_facts

# ----------------------------------------------------------------- tokenize


def test_tokenize_listing_query():
    tokens = tokenize(LISTING_QUERY)
    assert [(t.kind, t.text) for t in tokens[:8]] == [
        ("keyword", "SELECT"),
        ("operator", "*"),
        ("keyword", "FROM"),
        ("identifier", "GroupsKnowledgeBase"),
        ("keyword", "WHERE"),
        ("identifier", "OriginatesFrom"),
        ("operator", "=="),
        ("string_literal", "Russian Federation"),
    ]
    assert [t.text for t in tokens if t.kind == "keyword"].count("AND") == 2


def test_tokenize_empty():
    assert tokenize("") == []
    assert tokenize("   \n\t ") == []


def test_tokenize_offsets_strictly_increase():
    tokens = tokenize(LISTING_QUERY)
    offsets = [t.offset for t in tokens]
    assert offsets == sorted(set(offsets))


def test_tokenize_escapes():
    tokens = tokenize(r'Name == "The \"Dukes\""')
    assert tokens[-1].text == 'The "Dukes"'


def test_tokenize_unterminated_string():
    with pytest.raises(UnterminatedString) as exc:
        tokenize('WHERE x == "unclosed')
    assert exc.value.offset == len('WHERE x == ')


def test_tokenize_illegal_character():
    with pytest.raises(IllegalCharacter) as exc:
        tokenize('Name == "x" ; drop')
    assert exc.value.offset == 12
    with pytest.raises(IllegalCharacter):
        tokenize("Name = x")  # single '=' is not an operator


# -------------------------------------------------------------------- parse


def test_parse_listing_query_canonicalized(gazetteer):
    ast = compile_query(LISTING_QUERY, gazetteer)
    assert ast == And(
        And(
            Predicate("OriginatesFrom", "eq", "Russian Federation", "RU"),
            Predicate("TargetSector", "eq", "Government", "government"),
        ),
        Predicate("TargetCountry", "eq", "United States", "US"),
    )


def test_parse_bare_expression(gazetteer):
    assert compile_query('TargetSector == "Government"', gazetteer) == Predicate(
        "TargetSector", "eq", "Government", "government"
    )


def test_parse_precedence_and_binds_tighter(gazetteer):
    ast = compile_query(
        'Name == "x" OR TargetSector == "Government" AND TargetCountry == "US"',
        gazetteer,
    )
    assert isinstance(ast, Or)
    assert isinstance(ast.right, And)


def test_parse_not_and_parentheses(gazetteer):
    ast = compile_query(
        'NOT (Name == "x" OR Name == "y") AND TargetCountry == "US"', gazetteer
    )
    assert isinstance(ast, And)
    assert isinstance(ast.left, Not)
    assert isinstance(ast.left.expr, Or)


def test_parse_in_desugars_to_or(gazetteer):
    ast = compile_query('TargetCountry IN ("US", "Germany")', gazetteer)
    assert ast == Or(
        Predicate("TargetCountry", "eq", "US", "US"),
        Predicate("TargetCountry", "eq", "Germany", "DE"),
    )


def test_parse_where_without_expression(gazetteer):
    with pytest.raises(QuerySyntaxError) as exc:
        compile_query("SELECT * FROM GroupsKnowledgeBase WHERE", gazetteer)
    assert exc.value.found == "end of input"


def test_parse_unknown_field_offset(gazetteer):
    text = 'WHERE Sector == "Government"'
    with pytest.raises(UnknownField) as exc:
        compile_query(text, gazetteer)
    assert exc.value.name == "Sector"
    assert exc.value.offset == text.index("Sector")


def test_parse_requires_groups_table(gazetteer):
    with pytest.raises(QuerySyntaxError):
        compile_query('SELECT * FROM Techniques WHERE Name == "x"', gazetteer)


def test_parse_trailing_garbage(gazetteer):
    with pytest.raises(QuerySyntaxError):
        compile_query('Name == "x" Name == "y"', gazetteer)


def test_parse_errors_point_inside_input(gazetteer):
    bad_queries = [
        "SELECT",
        "SELECT * FROM",
        'WHERE ==',
        'Name == ',
        '(Name == "x"',
        'TargetCountry IN ()',
    ]
    for text in bad_queries:
        with pytest.raises(QuerySyntaxError) as exc:
            compile_query(text, gazetteer)
        assert 0 <= exc.value.offset <= len(text)


# ----------------------------------------------------------------- evaluate


def test_listing_query_golden_result(graph, gazetteer):
    result = evaluate(compile_query(LISTING_QUERY, gazetteer), graph)
    assert result.names == ("APT28", "APT29", "Dragonfly 2.0")
    assert result.attack_ids == ("G0007", "G0016", "G0074")
    assert result.warnings == ()
    assert len(result.ids) == len(result.names) == len(result.attack_ids)


def test_unknown_value_warns_and_matches_nothing(graph, gazetteer):
    result = evaluate(compile_query('TargetCountry == "Atlantis"', gazetteer), graph)
    assert result.ids == ()
    assert len(result.warnings) == 1
    assert result.warnings[0].value == "Atlantis"


def test_canonicalization_soundness(graph, gazetteer):
    a = evaluate(compile_query('OriginatesFrom == "Russia"', gazetteer), graph)
    b = evaluate(
        compile_query('OriginatesFrom == "Russian Federation"', gazetteer), graph
    )
    assert a == b


def test_case_insensitive_values(graph, gazetteer):
    a = evaluate(compile_query('TargetSector == "GOVERNMENT"', gazetteer), graph)
    b = evaluate(compile_query('TargetSector == "Government"', gazetteer), graph)
    assert a == b


def test_name_matches_aliases(graph, gazetteer):
    by_alias = evaluate(compile_query('Name == "Fancy Bear"', gazetteer), graph)
    assert by_alias.names == ("APT28",)


def test_uses_technique_and_software(graph, gazetteer):
    result = evaluate(compile_query('UsesTechnique == "T1566"', gazetteer), graph)
    assert set(result.attack_ids) == {"G0007", "G0016", "G0074", "G9001"}
    result = evaluate(compile_query('UsesSoftware == "S0002"', gazetteer), graph)
    assert set(result.attack_ids) == {"G0007", "G9002"}


def test_expand_regions_flag(graph, gazetteer):
    query = 'TargetCountry == "Germany"'
    strict = evaluate(compile_query(query, gazetteer), graph)
    assert strict.attack_ids == ("G9003",)
    expanded = evaluate(
        compile_query(query, gazetteer), graph,
        expand_regions=True, gazetteer=gazetteer,
    )
    # G0016 and G9002 target the europe region, which contains DE.
    assert set(expanded.attack_ids) == {"G0016", "G9002", "G9003"}


def test_not_complements_within_groups(graph, gazetteer):
    inside = evaluate(compile_query('TargetSector == "Government"', gazetteer), graph)
    outside = evaluate(
        compile_query('NOT TargetSector == "Government"', gazetteer), graph
    )
    assert set(inside.ids) | set(outside.ids) == set(graph.group_ids())
    assert set(inside.ids) & set(outside.ids) == set()


def _predicates(gazetteer):
    return [
        compile_query(text, gazetteer)
        for text in (
            'OriginatesFrom == "Russian Federation"',
            'TargetSector == "Government"',
            'TargetCountry == "United States"',
            'TargetRegion == "Europe"',
            'Motivation == "dominance"',
            'UsesTechnique == "T1566"',
        )
    ]


def _ast_strategy(preds):
    return st.recursive(
        st.sampled_from(preds),
        lambda children: st.one_of(
            st.builds(Not, children),
            st.builds(And, children, children),
            st.builds(Or, children, children),
        ),
        max_leaves=6,
    )


@settings(max_examples=300, deadline=None)
@given(data=st.data())
def test_random_asts_match_bruteforce_oracle(graph, enhanced, gazetteer, data):
    facts = group_facts(serialize_bundle(enhanced))
    ast = data.draw(_ast_strategy(_predicates(gazetteer)))
    engine = set(evaluate(ast, graph).ids)
    oracle = evaluate_oracle(ast, facts)
    assert engine == oracle


def test_algebra_laws_depth_two(graph, gazetteer):
    preds = _predicates(gazetteer)
    depth2 = list(preds)
    depth2 += [Not(p) for p in preds]
    depth2 += [And(a, b) for a in preds for b in preds]
    depth2 += [Or(a, b) for a in preds for b in preds]

    def ids(ast):
        return set(evaluate(ast, graph).ids)

    cache = {id(a): ids(a) for a in depth2}
    for a in depth2[:30]:
        for b in depth2[:30]:
            assert ids(And(a, b)) == cache[id(a)] & cache[id(b)]
            assert ids(Or(a, b)) == cache[id(a)] | cache[id(b)]
            assert ids(And(a, b)) == ids(And(b, a))
            assert ids(Or(a, b)) == ids(Or(b, a))
    for a in depth2:
        assert ids(Not(Not(a))) == cache[id(a)]


def test_monotonicity_adding_and_never_grows(graph, gazetteer):
    preds = _predicates(gazetteer)
    for a in preds:
        base = set(evaluate(a, graph).ids)
        for b in preds:
            assert set(evaluate(And(a, b), graph).ids) <= base
