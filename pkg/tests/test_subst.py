"""Substitution operations: value, monadic, continuation, handling, modal."""

import pytest

from ecmtt import syntax as S
from ecmtt.corpus import PRELUDE
from ecmtt.parser import parse_source, parse_term
from ecmtt.pretty import pretty
from ecmtt.subst import (
    OutOfFuel,
    SubstitutionError,
    eta_expand,
    eval_meta,
    handle_seq,
    handle_with,
    id_handler,
    modal_subst,
    normalize,
    subst_cont,
    subst_monadic,
    subst_values,
)
from ecmtt.syntax import EMPTY_MODAL, alpha_equal, type_equal
from ecmtt.typecheck import HandlerSig, check_handler

TABLE = parse_source(PRELUDE).table
ST = TABLE.theories["St"]
EXN = TABLE.theories["Exn"]
HANDLER_ST = TABLE.handlers["handlerSt"]
ID_ST = TABLE.handlers["idSt"]


def comp(text: str) -> S.Comp:
    term = parse_term(text, TABLE)
    assert isinstance(term, S.Comp), text
    return term


def test_value_substitution_avoids_capture():
    body = parse_term("fn x:int. x + y")
    got = subst_values(body, {"y": S.Var("x")})
    # The free x being substituted in must not be captured by the binder.
    assert alpha_equal(got, parse_term("fn w:int. w + x"))
    assert not alpha_equal(got, parse_term("fn x:int. x + x"))


def test_value_substitution_is_simultaneous():
    term = parse_term("x + y")
    got = subst_values(term, {"x": S.Var("y"), "y": S.Var("x")})
    assert alpha_equal(got, parse_term("y + x"))


def test_monadic_substitution_into_a_return():
    got = subst_monadic(comp("ret 3"), "x", comp("ret (x + 1)"))
    assert alpha_equal(got, comp("ret 4"))


def test_monadic_substitution_pushes_under_a_bind():
    got = subst_monadic(comp("w <- get(); ret w"), "y", comp("ret (y + 1)"))
    assert alpha_equal(got, comp("w <- get(); ret (w + 1)"))


def test_monadic_substitution_renames_to_avoid_capture():
    # The continuation mentions its own free `w`, which must not collide
    # with the bound w of the producer.
    got = subst_monadic(comp("w <- get(); ret w"), "y", comp("ret (y + w)"))
    assert alpha_equal(got, comp("v <- get(); ret (v + w)"))


def test_continuation_substitution_plugs_both_arguments():
    t = comp("v <- k(3; 4); ret v")
    got = subst_cont(t, "k", "x", "y", comp("ret (x + y)"))
    assert alpha_equal(got, comp("ret 7"))


def test_continuation_substitution_leaves_other_continuations():
    t = comp("v <- q(3; 4); ret v")
    got = subst_cont(t, "k", "x", "y", comp("ret (x + y)"))
    assert alpha_equal(got, t)


def test_handling_a_return_runs_the_return_clause():
    got = handle_with(comp("ret 5"), HANDLER_ST, S.IntLit(0))
    assert alpha_equal(got, comp("ret (5, 0)"))


def test_handling_an_operation_runs_its_clause():
    got = handle_with(comp("x <- get(); ret x"), HANDLER_ST, S.IntLit(0))
    assert alpha_equal(got, comp("ret (0, 0)"))


def test_handling_threads_state_through_set():
    got = handle_with(
        comp("y <- get(); w <- set(y + 1); ret y"), HANDLER_ST, S.IntLit(0)
    )
    assert alpha_equal(got, comp("ret (0, 1)"))


def test_handling_reports_a_missing_clause():
    lonely = parse_source(
        PRELUDE
        + "\ndef lonely = handler for Exn {"
        "\n  raise(x;k;z) -> ret 42,"
        "\n  return(x;z) -> ret x"
        "\n}\n"
    ).table.handlers["lonely"]
    with pytest.raises(SubstitutionError):
        handle_with(comp("x <- get(); ret x"), lonely, S.UnitLit())


def test_handling_sequence_feeds_clause_variable():
    theta = S.HSeq((S.HClause(HANDLER_ST, S.IntLit(0), "w", comp("ret (fst w)")),))
    got = handle_seq(comp("ret 5"), theta)
    assert alpha_equal(got, comp("ret 5"))


def test_empty_handling_sequence_is_identity():
    c = comp("x <- get(); ret x")
    assert alpha_equal(handle_seq(c, S.EMPTY_HSEQ), c)


def test_modal_substitution_runs_handlers_in_place():
    stmt = parse_term("x <- handle u with handlerSt init 0; ret x", TABLE)
    got = modal_subst(stmt, "u", comp("y <- get(); w <- set(y + 1); ret y"))
    assert alpha_equal(got, comp("ret (0, 1)"))


def test_modal_substitution_resolves_eval():
    t = parse_term("ret ((eval u) + 1)", TABLE)
    got = modal_subst(t, "u", comp("ret 9"))
    assert alpha_equal(got, comp("ret 10"))


def test_modal_substitution_ignores_other_modals():
    t = parse_term("x <- handle v with handlerSt init 0; ret x", TABLE)
    got = modal_subst(t, "u", comp("ret 1"))
    assert alpha_equal(got, t)


def test_eval_meta_strips_a_return():
    assert alpha_equal(eval_meta(comp("ret 5")), S.IntLit(5))


def test_eval_meta_rejects_a_bare_operation():
    with pytest.raises(SubstitutionError):
        eval_meta(comp("x <- get(); ret x"))


def test_normalize_folds_pure_arithmetic():
    assert alpha_equal(normalize(parse_term("ret ((1 + 2) * 3)")), comp("ret 9"))
    assert alpha_equal(normalize(parse_term("fst (1, 2)")), S.IntLit(1))
    assert alpha_equal(
        normalize(parse_term("if 1 < 2 then 5 else 6")), S.IntLit(5)
    )


def test_normalize_works_under_binders():
    got = normalize(parse_term("fn x:int. x + (1 + 1)"))
    assert alpha_equal(got, parse_term("fn x:int. x + 2"))


def test_id_handler_has_one_clause_per_operation():
    h = id_handler(ST)
    assert {c.op for c in h.op_clauses} == {"get", "set"}
    sig = check_handler(EMPTY_MODAL, ST, h, S.INT, S.UNIT)
    assert sig == HandlerSig(S.INT, ST, S.UNIT, S.INT)


def test_id_handler_acts_as_identity_on_computations():
    c = comp("x <- get(); ret x")
    got = handle_with(c, id_handler(ST), S.UnitLit())
    assert alpha_equal(got, c)


def test_eta_expansion_preserves_the_boxed_type():
    from ecmtt.typecheck import infer_expr

    e = parse_term("box St. get()", TABLE)
    assert isinstance(e, S.Expr)
    expanded = eta_expand(e, ST)
    assert type_equal(infer_expr(EMPTY_MODAL, expanded), S.BoxT(ST, S.INT))


def test_eta_expansion_keeps_empty_theory_behaviour():
    from ecmtt.evaluator import Value, evaluate

    e = parse_term("box {}. ret 3")
    assert isinstance(e, S.Expr)

    def observe(boxed: S.Expr) -> str:
        probe = S.LetBoxE("w", boxed, S.EvalTerm(S.EMPTY_HSEQ, "w"))
        outcome = evaluate(probe)
        assert isinstance(outcome.final, Value)
        return pretty(outcome.final.term)

    assert observe(e) == observe(eta_expand(e, S.EMPTY_THEORY)) == "3"


def test_fuel_runs_out_instead_of_spinning():
    with pytest.raises(OutOfFuel):
        handle_with(
            comp("y <- get(); w <- set(y + 1); ret y"), HANDLER_ST, S.IntLit(0), fuel=2
        )
