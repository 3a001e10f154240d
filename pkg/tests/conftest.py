import os

import hypothesis
import numpy as np
import pytest

from rumorlab.graph import Comment, Message, Relation, User, build_graph

hypothesis.settings.register_profile("default", max_examples=50, deadline=None)
hypothesis.settings.register_profile("ci", max_examples=25, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=500, deadline=None)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "default"))

L1, L2, L3 = Relation.L1, Relation.L2, Relation.L3


def random_user_graph(rng: np.random.Generator, n: int, p: float):
    edges = [(a, b) for a in range(n) for b in range(a + 1, n) if rng.random() < p]
    g = build_graph([(i, User()) for i in range(n)], [(a, b, L3) for a, b in edges])
    return g, edges


@pytest.fixture
def two_cascades():
    """Two components.

    0: rumor (author 2, re-poster 3, comment 6)   component A
    1: non-rumor (author 4, re-poster 5)          component B
    """
    nodes = [
        (0, Message(True)),
        (1, Message(False)),
        (2, User(True)),
        (3, User(False)),
        (4, User(True)),
        (5, User(False)),
        (6, Comment()),
    ]
    edges = [(2, 0, L1), (3, 0, L1), (2, 3, L3), (0, 6, L2), (4, 1, L1), (5, 1, L1), (4, 5, L3)]
    return build_graph(nodes, edges)


def random_typed_graph(rng: np.random.Generator, n: int, p: float = 0.5):
    """Random heterogeneous graph with at least one message and one user."""
    kinds = [Message(bool(rng.integers(2))), User(bool(rng.integers(2)))]
    for _ in range(n - 2):
        r = rng.random()
        kinds.append(Message(bool(rng.integers(2))) if r < 0.4 else User(bool(rng.integers(2))) if r < 0.85 else Comment())
    order = rng.permutation(n)
    kinds = [kinds[i] for i in order]
    from rumorlab.graph import relation_for, _kind_code

    edges = []
    for a in range(n):
        for b in range(a + 1, n):
            rel = relation_for(_kind_code(kinds[a]), _kind_code(kinds[b]))
            if rel is not None and rng.random() < p:
                edges.append((a, b, rel))
    return build_graph(list(enumerate(kinds)), edges), kinds, edges


def finite_difference_check(model, ops, X, idx, y, h: float = 1e-5) -> float:
    """Largest per-array relative error ||a - n|| / (||a|| + ||n||) of analytic vs central differences."""
    from rumorlab.detector import loss_and_grads

    _, grads = loss_and_grads(model, ops, X, idx, y)
    worst = 0.0
    pairs = list(zip(model.parameters(), grads.parameters()))
    for p, gp in pairs:
        num = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            lp, _ = loss_and_grads(model, ops, X, idx, y)
            p[i] = old - h
            lm, _ = loss_and_grads(model, ops, X, idx, y)
            p[i] = old
            num[i] = (lp - lm) / (2 * h)
        denom = np.linalg.norm(gp) + np.linalg.norm(num)
        if denom > 0:
            worst = max(worst, np.linalg.norm(gp - num) / denom)
    # scalar bias
    old = model.head_b
    model.head_b = old + h
    lp, _ = loss_and_grads(model, ops, X, idx, y)
    model.head_b = old - h
    lm, _ = loss_and_grads(model, ops, X, idx, y)
    model.head_b = old
    nb = (lp - lm) / (2 * h)
    denom = abs(grads.head_b) + abs(nb)
    if denom > 0:
        worst = max(worst, abs(grads.head_b - nb) / denom)
    return worst


def cascade_graph(cascades):
    """Disjoint message cascades.

    ``cascades`` lists (is_rumor, n_reposters, n_comments); each cascade is
    a message, its author, re-posters linked to message and author, and
    comments. Returns (graph, messages, authors).
    """
    nodes, edges, messages, authors = [], [], [], []
    for is_rumor, n_rt, n_cm in cascades:
        m, a = len(nodes), len(nodes) + 1
        nodes += [(m, Message(is_rumor)), (a, User(True))]
        edges.append((a, m, L1))
        messages.append(m)
        authors.append(a)
        for _ in range(n_rt):
            r = len(nodes)
            nodes.append((r, User()))
            edges += [(r, m, L1), (a, r, L3)]
        for _ in range(n_cm):
            c = len(nodes)
            nodes.append((c, Comment()))
            edges.append((m, c, L2))
    return build_graph(nodes, edges), messages, authors


def make_env(g, ctrl_authors, ctrl_messages, targets, horizon=3, seed=0, model_seed=0, **cfg):
    from rumorlab.data import AttackSetup
    from rumorlab.detector import BlackBoxDetector, NodeEncoder, RgcnModel
    from rumorlab.env import AttackEnv, EnvConfig

    enc = NodeEncoder.fit(g)
    bb = BlackBoxDetector(RgcnModel.init(enc.dim, 8, 3, np.random.default_rng(model_seed)), enc)
    setup = AttackSetup([], [], list(ctrl_authors), list(ctrl_messages), list(targets))
    return AttackEnv(g, bb, setup, EnvConfig(horizon=horizon, **cfg), seed=seed)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        ok, detail = mod.RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
