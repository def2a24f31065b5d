import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from online_gne import expressions as ex


def ev(src, t=0.0, X=None):
    X = np.zeros((1, 1)) if X is None else np.asarray(X, dtype=float)
    return float(ex.compile_expr(ex.parse(src))(t, X))


@pytest.mark.parametrize(
    "src, value",
    [
        ("1 + 2*3", 7.0),
        ("(1 + 2)*3", 9.0),
        ("2^3^2", 512.0),  # right associative
        ("-2^2", -4.0),  # unary minus binds looser than power
        ("2**3", 8.0),
        ("10 - 4 - 3", 3.0),
        ("+5", 5.0),
        ("1.5e1", 15.0),
        ("2^-1", 0.5),
        ("cos(0) + sin(0)", 1.0),
    ],
)
def test_arithmetic(src, value):
    assert ev(src) == pytest.approx(value)


def test_variables_and_time():
    X = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert ev("x1_1 + 10*x2_2 + t", t=0.5, X=X) == pytest.approx(41.5)
    assert ev("x1_a*x1_b", X=X) == pytest.approx(2.0)
    vs = ex.variables(ex.parse("x2_b + t*x1_1"))
    assert {(v.player, v.comp) for v in vs} == {(1, 1), (None, None), (0, 0)}


@pytest.mark.parametrize(
    "src, column",
    [
        ("1 + * 2", 5),
        ("sin(x1_1", 9),
        ("x1_1 $ 2", 6),
        ("x1_1^x1_1", 6),
        ("exp(1)", 1),
        ("y1_1", 1),
        ("", 1),
        ("x0_1", 1),
    ],
)
def test_syntax_errors_report_columns(src, column):
    with pytest.raises(ex.ExpressionSyntaxError) as err:
        ex.parse(src)
    assert err.value.column == column


def test_error_relocation():
    err = ex.ExpressionSyntaxError("bad", 3).at(line=7, column_offset=10)
    assert (err.line, err.column) == (7, 13)
    assert "line 7, column 13" in str(err)


def test_compile_broadcasts():
    f = ex.compile_expr(ex.parse("x1_1*cos(t)"))
    X = np.ones((4, 2, 1))
    assert f(np.linspace(0, 1, 4), X).shape == (4,)
    assert f(0.0, X).shape == (4,)
    const = ex.compile_expr(ex.parse("3"))
    np.testing.assert_array_equal(const(0.0, X), np.full(4, 3.0))
    assert const(np.zeros((2, 3)), np.ones((1, 1))).shape == (2, 3)


def test_compiled_code_has_no_builtins():
    f = ex.compile_expr(ex.parse("t"))
    assert "X" not in f.source and f.source == "t"


def test_diff_simple():
    tree = ex.parse("3*x1_1^2*x2_1 + sin(2*x1_1) - t")
    d = ex.compile_expr(ex.diff(tree, 0, 0))
    X = np.array([[0.7], [1.3]])
    expected = 6 * 0.7 * 1.3 + 2 * np.cos(1.4)
    assert float(d(0.0, X)) == pytest.approx(expected)
    zero = ex.diff(tree, 0, 1)
    assert isinstance(zero, ex.Num) and zero.value == 0.0


# --- random expression trees ---------------------------------------------

leaf = st.one_of(
    st.floats(-3, 3, allow_nan=False).map(lambda v: f"{v!r}"),
    st.sampled_from(["t", "x1_1", "x1_2", "x2_1"]),
)


def _node(children):
    return st.one_of(
        st.tuples(children, st.sampled_from(["+", "-", "*"]), children).map(lambda p: f"({p[0]} {p[1]} {p[2]})"),
        st.tuples(st.sampled_from(["sin", "cos"]), children).map(lambda p: f"{p[0]}({p[1]})"),
        st.tuples(children, st.integers(0, 3)).map(lambda p: f"({p[0]})^{p[1]}"),
        children.map(lambda c: f"-{c}"),
    )


exprs = st.recursive(leaf, _node, max_leaves=8)
points = st.tuples(*[st.floats(-1.5, 1.5) for _ in range(4)])


@given(exprs, points)
@settings(max_examples=200, deadline=None)
def test_derivative_matches_central_difference(src, p):
    tree = ex.parse(src)
    X = np.array([[p[0], p[1]], [p[2], 0.0]])
    t = p[3]
    f = ex.compile_expr(tree)
    for comp in (0, 1):
        d = float(ex.compile_expr(ex.diff(tree, 0, comp))(t, X))
        h = 1e-6
        Xp, Xm = X.copy(), X.copy()
        Xp[0, comp] += h
        Xm[0, comp] -= h
        fd = (float(f(t, Xp)) - float(f(t, Xm))) / (2 * h)
        assert d == pytest.approx(fd, rel=1e-4, abs=1e-4)


@given(exprs, points)
@settings(max_examples=200, deadline=None)
def test_text_round_trip(src, p):
    tree = ex.parse(src)
    again = ex.parse(ex.to_text(tree))
    X = np.array([[p[0], p[1]], [p[2], 0.0]])
    a = float(ex.compile_expr(tree)(p[3], X))
    b = float(ex.compile_expr(again)(p[3], X))
    assert a == b or (np.isnan(a) and np.isnan(b))
