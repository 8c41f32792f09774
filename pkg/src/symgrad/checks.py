"""Finite-difference and brute-force equivalence suites.

Used by the ``gradcheck`` and ``oracle`` CLI subcommands and by the
acceptance tests.  Every check returns (name, passed, detail) tuples so
callers can print one line per check and aggregate an exit status.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np

from . import tensor as T
from .config import RunConfig
from .distribution import ProgramContext, get_probs, make_distribution
from .learn import loss_nll
from .programs import (
    Coord,
    TOKEN_ALPHABET,
    equality_toy,
    hwf,
    path_closure,
    product_n,
    reference_formula_eval,
    sum_n,
)
from .provenance import Damp, DtkpAm
from .tensor import GradientTape, Tensor

__all__ = [
    "gradcheck_primitives",
    "gradcheck_pipeline",
    "run_gradcheck",
    "oracle_digit_fold",
    "oracle_hwf",
    "oracle_path",
    "oracle_toy",
    "run_oracle",
]

FD_STEP = 1e-4
FD_RTOL = 1e-3
FD_ATOL = 1e-6


def _fd(f, x, coords, step=FD_STEP):
    flat = np.asarray(x, dtype=np.float64).reshape(-1)
    out = []
    for i in coords:
        up = flat.copy()
        up[i] += step
        down = flat.copy()
        down[i] -= step
        out.append((f(up.reshape(np.shape(x))) - f(down.reshape(np.shape(x)))) / (2 * step))
    return np.array(out)


def _close(analytic, numeric):
    return np.allclose(analytic, numeric, rtol=FD_RTOL, atol=FD_ATOL)


def _max_err(analytic, numeric):
    return float(np.max(np.abs(analytic - numeric))) if len(analytic) else 0.0


def _check_leaf_gradient(name, build, x0, rng, ncoords=6):
    """Compare tape gradient of a scalar pipeline against central FD."""
    def value(x):
        tape = GradientTape()
        return build(tape.leaf(x), tape).item()

    tape = GradientTape()
    leaf = tape.leaf(x0)
    loss = build(leaf, tape)
    analytic = tape.backward(loss)[leaf].data.reshape(-1)
    coords = rng.choice(x0.size, size=min(ncoords, x0.size), replace=False)
    numeric = _fd(value, x0, coords)
    ok = _close(analytic[coords], numeric)
    return name, ok, f"max_err={_max_err(analytic[coords], numeric):.2e}"


def _sum_all(t):
    while t.ndim > 0:
        t = T.reduce_sum(t, axis=0)
    return t


def gradcheck_primitives(seed=0):
    """FD checks for every tensor primitive, away from ties/boundaries."""
    rng = np.random.default_rng(seed)
    results = []
    b = Tensor(rng.uniform(0.3, 0.9, (3, 4)))

    for kind in ("add", "sub", "mul", "div", "min"):
        x0 = rng.uniform(0.2, 1.2, (3, 4))
        results.append(
            _check_leaf_gradient(
                f"elementwise.{kind}",
                lambda x, tape, kind=kind: _sum_all(
                    T.mul(T.elementwise(kind, x, b), x)
                ),
                x0,
                rng,
            )
        )
    results.append(
        _check_leaf_gradient(
            "clamp.interior",
            lambda x, tape: _sum_all(T.mul(T.clamp(x, 0.0, 1.0), x)),
            rng.uniform(0.1, 0.9, (10,)),
            rng,
        )
    )
    # Saturated clamp: the convention is gradient exactly 1, asserted
    # directly rather than against FD (the true derivative vanishes there).
    tape = GradientTape()
    leaf = tape.leaf(np.array([1.7, -0.4, 0.5]))
    grad = tape.backward(_sum_all(T.clamp(leaf, 0.0, 1.0)))[leaf].data
    results.append(
        ("clamp.saturated_gradient_one", bool(np.all(grad == 1.0)), f"grad={grad}")
    )
    for kind in ("sum", "prod", "max"):
        x0 = rng.uniform(0.2, 1.0, (4, 5))
        results.append(
            _check_leaf_gradient(
                f"reduce.{kind}",
                lambda x, tape, kind=kind: _sum_all(T.reduce(kind, x, 1)),
                x0,
                rng,
            )
        )
    concat_tail = Tensor(rng.uniform(size=(2, 4)))
    concat_mix = Tensor(rng.uniform(size=(5, 4)))
    results.append(
        _check_leaf_gradient(
            "concat",
            lambda x, tape: _sum_all(
                T.mul(T.concat([x, concat_tail], 0), concat_mix)
            ),
            rng.uniform(0.2, 1.0, (3, 4)),
            rng,
        )
    )
    select_mix = Tensor(rng.uniform(size=(3, 3)))
    results.append(
        _check_leaf_gradient(
            "select_rows",
            lambda x, tape: _sum_all(
                T.mul(T.select_rows(x, [2, 0, 2]), select_mix)
            ),
            rng.uniform(0.2, 1.0, (4, 3)),
            rng,
        )
    )
    results.append(
        _check_leaf_gradient(
            "reshape",
            lambda x, tape: _sum_all(T.mul(T.reshape(x, (2, 6)), T.reshape(x, (2, 6)))),
            rng.uniform(0.2, 1.0, (3, 4)),
            rng,
        )
    )
    w0 = rng.normal(size=(4, 3))
    xc = Tensor(rng.normal(size=(5, 4)))
    bias = Tensor(rng.normal(size=3))
    results.append(
        _check_leaf_gradient(
            "affine.weights",
            lambda w, tape: _sum_all(T.mul(T.affine(xc, w, bias), T.affine(xc, w, bias))),
            w0,
            rng,
        )
    )
    softmax_mix = Tensor(rng.uniform(size=(3, 6)))
    results.append(
        _check_leaf_gradient(
            "softmax",
            lambda x, tape: _sum_all(T.mul(T.softmax(x, axis=1), softmax_mix)),
            rng.normal(size=(3, 6)),
            rng,
        )
    )
    relu_mix = Tensor(rng.uniform(size=8))
    results.append(
        _check_leaf_gradient(
            "relu",
            lambda x, tape: _sum_all(T.mul(T.relu(x), relu_mix)),
            rng.uniform(0.1, 1.0, 8) * rng.choice([-1.0, 1.0], 8),
            rng,
        )
    )
    results.append(
        _check_leaf_gradient(
            "log",
            lambda x, tape: _sum_all(T.log(x)),
            rng.uniform(0.2, 2.0, 7),
            rng,
        )
    )
    return results


def _digit_rows(rng, n, cols=10):
    rows = rng.uniform(0.05, 1.0, size=(n, cols))
    return rows / rows.sum(axis=1, keepdims=True)


def _near_selection_boundary(f, x, coords, step=FD_STEP):
    """Detect kinks near probe coordinates, where a discrete choice
    (top-k retention, min tie) flips within the FD window.

    Compares central differences at step and step/2: for smooth
    functions they agree to O(step^2), while a selection flip inside the
    window contaminates the two estimates by different O(1) amounts.
    """
    flat = np.asarray(x, dtype=np.float64).reshape(-1)
    shape = np.shape(x)

    def central(i, h):
        up = flat.copy()
        up[i] += h
        down = flat.copy()
        down[i] -= h
        return (f(up.reshape(shape)) - f(down.reshape(shape))) / (2 * h)

    for i in coords:
        full = central(i, step)
        half = central(i, step / 2)
        if abs(full - half) > 2e-4 * max(1.0, abs(full), abs(half)):
            return True
    return False


def gradcheck_pipeline(kind, seed=0, points=1, ncoords=4, max_draws=None):
    """End-to-end FD checks through a full program pipeline.

    ``sum3-damp`` differentiates a 3-digit sum under add-mult against the
    classifier probability leaves; ``hwf3-dtkp`` differentiates a
    length-3 formula under top-3 proofs.  Points are drawn at random and
    redrawn when they straddle a selection boundary (where the objective
    is genuinely non-differentiable); one result tuple per kept point.
    """
    rng = np.random.default_rng(seed)
    results = []
    draws_left = max_draws if max_draws is not None else points * 5
    point = 0
    while point < points and draws_left > 0:
        draws_left -= 1
        if kind == "sum3-damp":
            rows = _digit_rows(rng, 3)

            def run(flat_rows):
                arr = flat_rows.reshape(3, 10)
                ctx = ProgramContext(Damp())
                leaves = [ctx.tape.leaf(arr[i : i + 1]) for i in range(3)]
                dists = [
                    make_distribution(ctx, leaves[i], list(range(10)))
                    for i in range(3)
                ]
                out = sum_n(ctx, dists)
                probs = get_probs(out)
                loss = loss_nll(probs, [out.index_of(12)])
                return ctx, leaves, loss

        elif kind == "hwf3-dtkp":
            rows = rng.uniform(0.05, 1.0, size=(3, 14))
            rows /= rows.sum(axis=1, keepdims=True)

            def run(flat_rows):
                arr = flat_rows.reshape(3, 14)
                ctx = ProgramContext(DtkpAm(3))
                leaves = [ctx.tape.leaf(arr[i : i + 1]) for i in range(3)]
                slots = [
                    make_distribution(ctx, leaves[i], list(TOKEN_ALPHABET))
                    for i in range(3)
                ]
                out = hwf(ctx, slots, 3)
                probs = get_probs(out)
                loss = loss_nll(probs, [out.index_of(Fraction(7))])
                return ctx, leaves, loss

        else:
            raise ValueError(f"unknown pipeline {kind!r}")

        flat = rows.reshape(-1)
        ctx, leaves, loss = run(flat)
        grad_map = ctx.tape.backward(loss)
        analytic = np.concatenate(
            [grad_map[leaf].data.reshape(-1) for leaf in leaves]
        )
        coords = rng.choice(flat.size, size=min(ncoords, flat.size), replace=False)
        value = lambda x: run(x)[2].item()
        if _near_selection_boundary(value, flat, coords):
            continue
        numeric = _fd(value, flat, coords)
        ok = _close(analytic[coords], numeric)
        results.append(
            (
                f"pipeline.{kind}.point{point}",
                ok,
                f"max_err={_max_err(analytic[coords], numeric):.2e}",
            )
        )
        point += 1
    return results


def _clamp_saturated(probs_data, targets, batch_count):
    """True when a saturated clamp makes FD invalid at this point.

    Two clamps can saturate: the tag-probability ceiling (an output
    probability pinned at 1) and the loss floor (the target's normalized
    probability at or below 1e-12).  Inside those regions the
    pass-through backward deliberately reports 1 while the true local
    derivative is 0, so such points are excluded by contract.
    """
    if probs_data.size and probs_data.max() > 1.0 - 1e-9:
        return True
    rowsum = probs_data.sum(axis=1) + 1e-8
    for i in range(batch_count):
        t = targets[i]
        if t is None or probs_data[i, t] / rowsum[i] < 1e-11:
            return True
    return False


def gradcheck_perception(kind, seed=0, points=1, ncoords=3):
    """FD checks on perception parameters through the whole pipeline.

    Each point is a random parameter setting of a small MLP; the loss
    runs perception, program, and the negative-log objective.  Points on
    top-k selection boundaries or inside saturated clamp regions are
    redrawn; both are places where the objective is non-differentiable
    or the pass-through convention intentionally diverges from the true
    derivative.
    """
    from .config import parse_config
    from .tasks import build_dataset, make_task

    if kind == "sum3-damp":
        text = (
            "task = sum\nprovenance = damp\nsum.n = 3\n"
            "data.dim = 16\ndata.train_count = 4\ndata.test_count = 2\n"
        )
    elif kind == "hwf3-dtkp":
        text = (
            "task = hwf\nprovenance = dtkp\nk = 3\nhwf.length = 3\n"
            "data.dim = 16\ndata.train_count = 4\ndata.test_count = 2\n"
        )
    else:
        raise ValueError(f"unknown pipeline {kind!r}")
    cfg = parse_config(text)
    tc = cfg.train_config()
    task = make_task(cfg)
    train_set, _ = build_dataset(cfg)
    batch_size = 4
    batch = next(task.batches(train_set, batch_size))
    model = task.build_model(tc)
    keys = sorted(model.params)
    sizes = {k: model.params[k].size for k in keys}

    def set_flat(flat):
        offset = 0
        for k in keys:
            model.params[k] = flat[offset : offset + sizes[k]].reshape(
                model.params[k].shape
            )
            offset += sizes[k]

    def run(flat):
        set_flat(flat)
        ctx = ProgramContext(tc.make_provenance())
        loss, _, _ = task.run_batch(ctx, model, batch, tc)
        return ctx, loss

    def loss_at(flat):
        return run(flat)[1].item()

    def probs_and_targets(flat):
        set_flat(flat)
        ctx = ProgramContext(tc.make_provenance())
        feats = batch[0]
        if kind == "sum3-damp":
            from .distribution import make_distribution as make_d

            dists = [
                make_d(ctx, model.forward(ctx.tape, feats[i]), list(range(10)))
                for i in range(3)
            ]
            out = sum_n(ctx, dists)
            targets = [out.find(v) for v in batch[1]]
        else:
            from .distribution import make_distribution as make_d

            slots = [
                make_d(ctx, model.forward(ctx.tape, feats[i]), list(TOKEN_ALPHABET))
                for i in range(3)
            ]
            out = hwf(ctx, slots, 3)
            targets = [out.find(v) for v in batch[1]]
        return get_probs(out).data, targets

    rng = np.random.default_rng(seed)
    results = []
    draws_left = points * 10
    point = 0
    total = sum(sizes.values())
    while point < points and draws_left > 0:
        draws_left -= 1
        flat = rng.normal(0.0, 0.3, size=total)
        coords = rng.choice(total, size=ncoords, replace=False)
        probs_data, targets = probs_and_targets(flat)
        if _clamp_saturated(probs_data, targets, batch_size):
            continue
        if _near_selection_boundary(loss_at, flat, coords):
            continue
        ctx, loss = run(flat)
        grads = model.grad_arrays(ctx.tape.backward(loss))
        analytic = np.concatenate([grads[k].reshape(-1) for k in keys])
        numeric = _fd(loss_at, flat, coords)
        ok = _close(analytic[coords], numeric)
        results.append(
            (
                f"perception.{kind}.point{point}",
                ok,
                f"max_err={_max_err(analytic[coords], numeric):.2e}",
            )
        )
        point += 1
    return results


def run_gradcheck(cfg: RunConfig):
    """Primitive suite plus the pipeline matching the config's task."""
    results = gradcheck_primitives(cfg.seed)
    results += gradcheck_pipeline("sum3-damp", cfg.seed, points=2)
    results += gradcheck_pipeline("hwf3-dtkp", cfg.seed, points=2)
    results += gradcheck_perception("sum3-damp", cfg.seed, points=2)
    results += gradcheck_perception("hwf3-dtkp", cfg.seed, points=2)
    return results


def oracle_digit_fold(op, n_dists, seed=0, max_symbols=6):
    """DAMP fold vs exhaustive enumeration on a random small instance."""
    rng = np.random.default_rng(seed)
    ctx = ProgramContext(Damp())
    rows, dists = [], []
    for _ in range(n_dists):
        n = int(rng.integers(2, max_symbols + 1))
        row = rng.uniform(0.05, 1.0, size=n)
        row /= row.sum()
        rows.append(row)
        dists.append(make_distribution(ctx, row.reshape(1, -1), list(range(n))))
    fold = sum_n if op == "sum" else product_n
    out = fold(ctx, dists)
    got = dict(zip(out.symbols, out.forward_probs()[0]))

    expect = {}
    for combo in itertools.product(*(range(len(r)) for r in rows)):
        weight = 1.0
        for row, i in zip(rows, combo):
            weight *= row[i]
        if op == "sum":
            value = sum(combo)
        else:
            value = 1
            for c in combo:
                value *= c
        expect[value] = expect.get(value, 0.0) + weight
    max_err = max(abs(got[s] - p) for s, p in expect.items())
    ok = set(got) == set(expect) and max_err <= 1e-9
    return f"oracle.{op}{n_dists}", ok, f"max_err={max_err:.2e}"


def oracle_hwf(seed=0):
    rng = np.random.default_rng(seed)
    ctx = ProgramContext(Damp())
    rows = rng.uniform(0.05, 1.0, size=(3, 14))
    rows /= rows.sum(axis=1, keepdims=True)
    slots = [
        make_distribution(ctx, rows[i : i + 1], list(TOKEN_ALPHABET))
        for i in range(3)
    ]
    out = hwf(ctx, slots, 3)
    got = dict(zip(out.symbols, out.forward_probs()[0]))

    expect = {}
    digits = [str(d) for d in range(10)]
    for a, op_, b in itertools.product(digits, "+-*/", digits):
        if op_ == "/" and b == "0":
            continue
        value = reference_formula_eval([a, op_, b])
        w = (
            rows[0][TOKEN_ALPHABET.index(a)]
            * rows[1][TOKEN_ALPHABET.index(op_)]
            * rows[2][TOKEN_ALPHABET.index(b)]
        )
        expect[value] = expect.get(value, 0.0) + w
    expect = {s: min(p, 1.0) for s, p in expect.items()}
    max_err = max(abs(got[s] - p) for s, p in expect.items())
    ok = set(got) == set(expect) and max_err <= 1e-9
    return "oracle.hwf3", ok, f"max_err={max_err:.2e}"


def _scalar_closure(edge_probs):
    paths = dict(edge_probs)
    while True:
        new = {}
        for (a, b), pp in paths.items():
            for (c, d), ep in edge_probs.items():
                if b == c:
                    new[(a, d)] = new.get((a, d), 0.0) + pp * ep
        new = {key: min(1.0, p) for key, p in new.items()}
        merged = {
            key: min(1.0, paths.get(key, 0.0) + new.get(key, 0.0))
            for key in set(paths) | set(new)
        }
        if set(merged) == set(paths):
            return merged
        paths = merged


def oracle_path(seed=0, nodes=10):
    """Closure symbols vs reachability; probabilities vs scalar fixpoint."""
    rng = np.random.default_rng(seed)
    edges = []
    for a in range(nodes):
        for b in range(a + 1, nodes):
            if rng.uniform() < 0.18:
                edges.append((a, b))
    if not edges:
        edges = [(0, 1)]
    probs = rng.uniform(0.1, 1.0, size=len(edges))
    ctx = ProgramContext(Damp())
    d = make_distribution(
        ctx, probs.reshape(1, -1), [Coord(a, b) for a, b in edges]
    )
    out = path_closure(ctx, d)
    got = {(c.x, c.y): p for c, p in zip(out.symbols, out.forward_probs()[0])}

    from .datasets import reachable

    expect_pairs = reachable(nodes, edges)
    oracle = _scalar_closure(dict(zip(edges, probs)))
    symbols_ok = set(got) == expect_pairs == set(oracle)
    max_err = max(abs(got[key] - oracle[key]) for key in oracle) if symbols_ok else np.inf
    ok = symbols_ok and max_err <= 1e-6
    return f"oracle.path{nodes}", ok, f"max_err={max_err:.2e}"


def oracle_toy(seed=0, classes=5):
    rng = np.random.default_rng(seed)
    row = rng.uniform(0.05, 1.0, size=classes)
    row /= row.sum()

    ctx = ProgramContext(DtkpAm(classes))
    d = make_distribution(ctx, row.reshape(1, -1), list(range(classes)))
    out = equality_toy(ctx, d)
    dtkp_true = float(out.forward_probs()[0][out.index_of(True)])

    ctx2 = ProgramContext(Damp())
    d2 = make_distribution(ctx2, row.reshape(1, -1), list(range(classes)))
    out2 = equality_toy(ctx2, d2)
    damp_true = float(out2.forward_probs()[0][out2.index_of(True)])

    err_dtkp = abs(dtkp_true - 1.0)
    err_damp = abs(damp_true - float((row**2).sum()))
    ok = err_dtkp <= 1e-9 and err_damp <= 1e-9
    return "oracle.toy", ok, f"dtkp_err={err_dtkp:.2e} damp_err={err_damp:.2e}"


def run_oracle(cfg: RunConfig):
    """Brute-force equivalence checks for the configured task family."""
    results = []
    seeds = range(cfg.seed, cfg.seed + 3)
    if cfg.task in ("sum", "product"):
        size = cfg.sum_n if cfg.task == "sum" else cfg.product_n
        for s in seeds:
            results.append(oracle_digit_fold(cfg.task, min(size, 3), seed=s))
    elif cfg.task == "hwf":
        for s in seeds:
            results.append(oracle_hwf(seed=s))
    elif cfg.task == "path":
        for s in seeds:
            results.append(oracle_path(seed=s, nodes=min(cfg.path_nodes, 10)))
    elif cfg.task == "toy":
        for s in seeds:
            results.append(oracle_toy(seed=s, classes=cfg.toy_classes))
    return results
