import itertools
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from smogcast import search
from smogcast.errors import EmptyAxisError, SmogcastError, TooFewPairsError
from smogcast.models import ModelSpec, build
from smogcast.train import TrainConfig, train

import oracles
from test_train import lagged_pairs


# --- grid enumeration -----------------------------------------------------------

def test_grid_two_by_two():
    grid = search.GridSpec(hidden_layers=(4, 7), widths=(48, 64), lrs=(1e-3,), weight_decays=(0.0,))
    assert len(search.enumerate_grid(grid)) == 4 == grid.size()


def test_grid_singleton_axis_neutral():
    grid = search.GridSpec(hidden_layers=(4, 7), widths=(48, 64), lrs=(1e-3,), weight_decays=(1e-5,))
    assert grid.size() == 4


def test_grid_matches_nested_loop_oracle():
    grid = search.GridSpec(
        hidden_layers=(1, 2), widths=(8, 16, 32), lrs=(1e-4, 1e-3, 1e-2, 1e-1), weight_decays=(0.0,)
    )
    configs = search.enumerate_grid(grid)
    assert len(configs) == 24
    expected = [
        {"hidden_layers": k, "width": w, "lr": lr, "weight_decay": wd}
        for k, w, lr, wd in itertools.product((1, 2), (8, 16, 32), (1e-4, 1e-3, 1e-2, 1e-1), (0.0,))
    ]
    assert configs == expected


def test_grid_empty_axis_rejected():
    with pytest.raises(EmptyAxisError):
        search.enumerate_grid(search.GridSpec(hidden_layers=(), widths=(1,), lrs=(1e-3,), weight_decays=(0.0,)))


# --- k-fold -----------------------------------------------------------------------

def test_kfold_even_blocks():
    folds = search.kfold_splits(10, 5)
    assert all(len(f.val_idx) == 2 for f in folds)


def test_kfold_union_is_partition():
    folds = search.kfold_splits(10, 5)
    seen = sorted(i for f in folds for i in f.val_idx)
    assert seen == list(range(10))
    for f in folds:
        assert sorted(f.train_idx + f.val_idx) == list(range(10))


def test_kfold_thirteen_pairs():
    folds = search.kfold_splits(13, 5)
    sizes = [len(f.val_idx) for f in folds]
    assert sizes == [3, 3, 3, 2, 2] == oracles.balanced_blocks(13, 5)


def test_kfold_too_few():
    with pytest.raises(TooFewPairsError):
        search.kfold_splits(4, 5)


def test_kfold_shuffle_knob(rng):
    plain = search.kfold_splits(20, 4)
    shuffled = search.kfold_splits(20, 4, seed=1, shuffle=True)
    assert sorted(i for f in shuffled for i in f.val_idx) == list(range(20))
    assert [f.val_idx for f in plain] != [f.val_idx for f in shuffled]


# --- sliding-window -------------------------------------------------------------------

def test_sliding_window_published_example_geometry():
    folds = search.sliding_window_splits(100, 5, train_frac=0.6, val_frac=0.1)
    starts = [f.train_idx[0] for f in folds]
    assert starts == [0, 7, 15, 22, 30]
    assert folds[-1].val_idx[-1] == 99  # last fold ends at the last pair
    for f in folds:
        assert len(f.train_idx) == 60 and len(f.val_idx) == 10


def test_sliding_window_validation_strictly_after_training():
    for n, k in [(50, 3), (80, 5), (200, 7)]:
        for f in search.sliding_window_splits(n, k):
            assert min(f.val_idx) > max(f.train_idx)


def test_sliding_window_single_fold_holdout():
    folds = search.sliding_window_splits(40, 1, train_frac=0.7, val_frac=0.1)
    assert len(folds) == 1
    assert folds[0].train_idx == tuple(range(28))
    assert folds[0].val_idx == tuple(range(28, 32))


def test_sliding_window_too_few():
    with pytest.raises(TooFewPairsError):
        search.sliding_window_splits(5, 3, train_frac=0.1, val_frac=0.05)


@given(
    n=st.integers(10, 400),
    k=st.integers(1, 8),
    tf=st.floats(0.2, 0.8),
    vf=st.floats(0.05, 0.2),
)
def test_sliding_window_never_leaks(n, k, tf, vf):
    try:
        folds = search.sliding_window_splits(n, k, tf, vf)
    except TooFewPairsError:
        return
    for f in folds:
        assert min(f.val_idx) > max(f.train_idx)
        assert max(f.val_idx) <= n - 1


# --- the search itself ------------------------------------------------------------------

def test_singleton_grid_equals_direct_run():
    pairs = lagged_pairs(20)
    grid = search.GridSpec(hidden_layers=(1,), widths=(6,), lrs=(3e-3,), weight_decays=(0.0,))
    scheme = search.CvScheme(kind="sliding_window", k_folds=1, train_frac=0.7, val_frac=0.2)
    cfg = TrainConfig(batch_size=4, patience=4, max_epochs=6, seed=0)
    result = search.grid_search("GRU", grid, pairs, scheme, cfg,
                                spec_template=ModelSpec("GRU", 1, 6, n_features=3, horizon=4))

    fold = scheme.folds(len(pairs))[0]
    seed = search._cell_seed(cfg.seed, 0, 0)
    model = build(ModelSpec("GRU", 1, 6, n_features=3, horizon=4), seed)
    import dataclasses
    cell_cfg = dataclasses.replace(cfg, lr=3e-3, weight_decay=0.0, seed=seed)
    report = train(model, [pairs[i] for i in fold.train_idx], [pairs[i] for i in fold.val_idx], cell_cfg)
    assert result.best.mean_loss == pytest.approx(report.best_val_loss(), abs=1e-15)


def test_capacity_ranking():
    # A config with ~10x the parameters of a deliberately starved one must
    # rank first on a learnable task.
    pairs = lagged_pairs(30)
    grid = search.GridSpec(hidden_layers=(1,), widths=(1, 8), lrs=(5e-3,), weight_decays=(0.0,))
    scheme = search.CvScheme(kind="sliding_window", k_folds=2, train_frac=0.6, val_frac=0.2)
    cfg = TrainConfig(batch_size=8, patience=30, max_epochs=30, seed=1)
    template = ModelSpec("GRU", 1, 8, n_features=3, horizon=4)
    result = search.grid_search("GRU", grid, pairs, scheme, cfg, spec_template=template)
    assert result.best.config["width"] == 8
    small = next(c for c in result.configs if c.config["width"] == 1)
    assert result.best.param_count > 5 * small.param_count
    assert result.best.mean_loss < small.mean_loss


def test_journal_resume_and_replay(tmp_path):
    pairs = lagged_pairs(16)
    grid = search.GridSpec(hidden_layers=(1,), widths=(4, 6), lrs=(3e-3,), weight_decays=(0.0,))
    scheme = search.CvScheme(kind="kfold", k_folds=2)
    cfg = TrainConfig(batch_size=4, patience=3, max_epochs=4, seed=2)
    template = ModelSpec("MLP", 1, 4, n_features=3, horizon=4)
    journal = tmp_path / "search.journal"

    first = search.grid_search("MLP", grid, pairs, scheme, cfg, journal_path=journal,
                               spec_template=template)
    lines = journal.read_text().strip().splitlines()
    assert len(lines) == 1 + 4  # header + 2 configs x 2 folds

    # truncate to simulate an interrupted run, then resume
    journal.write_text("\n".join(lines[:3]) + "\n")
    resumed = search.grid_search("MLP", grid, pairs, scheme, cfg, journal_path=journal,
                                 spec_template=template)
    assert [c.fold_losses for c in resumed.configs] == [c.fold_losses for c in first.configs]
    assert resumed.ranking == first.ranking

    # full replay: nothing retrained, identical result
    replay = search.grid_search("MLP", grid, pairs, scheme, cfg, journal_path=journal,
                                spec_template=template)
    assert [c.fold_losses for c in replay.configs] == [c.fold_losses for c in first.configs]


def test_journal_detects_config_drift(tmp_path):
    pairs = lagged_pairs(12)
    grid = search.GridSpec(hidden_layers=(1,), widths=(4,), lrs=(1e-3,), weight_decays=(0.0,))
    scheme = search.CvScheme(kind="kfold", k_folds=2)
    cfg = TrainConfig(batch_size=4, patience=3, max_epochs=2, seed=3)
    template = ModelSpec("MLP", 1, 4, n_features=3, horizon=4)
    journal = tmp_path / "search.journal"
    search.grid_search("MLP", grid, pairs, scheme, cfg, journal_path=journal, spec_template=template)
    drifted = search.GridSpec(hidden_layers=(2,), widths=(4,), lrs=(1e-3,), weight_decays=(0.0,))
    with pytest.raises(SmogcastError):
        search.grid_search("MLP", drifted, pairs, scheme, cfg, journal_path=journal,
                           spec_template=template)


def test_failed_cell_recorded_not_fatal(tmp_path, monkeypatch):
    pairs = lagged_pairs(12)
    grid = search.GridSpec(hidden_layers=(1,), widths=(4, 6), lrs=(1e-3,), weight_decays=(0.0,))
    scheme = search.CvScheme(kind="kfold", k_folds=2)
    cfg = TrainConfig(batch_size=4, patience=3, max_epochs=2, seed=4)
    template = ModelSpec("MLP", 1, 4, n_features=3, horizon=4)

    from smogcast.errors import DivergedLossError
    original = search.train

    def sabotaged(model, *args, **kwargs):
        if model.spec.width == 6:
            raise DivergedLossError("boom")
        return original(model, *args, **kwargs)

    monkeypatch.setattr(search, "train", sabotaged)
    result = search.grid_search("MLP", grid, pairs, scheme, cfg, spec_template=template)
    bad = next(c for c in result.configs if c.config["width"] == 6)
    good = next(c for c in result.configs if c.config["width"] == 4)
    assert math.isinf(bad.mean_loss)
    assert math.isfinite(good.mean_loss)
    assert result.best.config["width"] == 4


def test_ranking_invariant_under_enumeration_order():
    cells = [
        ({"hidden_layers": 1, "width": 4, "lr": 1e-3, "weight_decay": 0.0}, 0.7, 300),
        ({"hidden_layers": 1, "width": 8, "lr": 1e-3, "weight_decay": 0.0}, 0.3, 900),
        ({"hidden_layers": 2, "width": 4, "lr": 1e-3, "weight_decay": 0.0}, 0.5, 500),
    ]
    def build_result(order):
        configs = [
            search.ConfigResult(cells[i][0], [cells[i][1]], cells[i][1], 0.0, cells[i][2])
            for i in order
        ]
        result = search.SearchResult("MLP", configs)
        return [configs[i].config["width"] for i in result.ranking]

    assert build_result([0, 1, 2]) == build_result([2, 0, 1]) == [8, 4, 4]


def test_ranking_tiebreak_fewer_params_then_lower_lr():
    configs = [
        search.ConfigResult({"hidden_layers": 1, "width": 8, "lr": 1e-3, "weight_decay": 0.0},
                            [0.5], 0.5, 0.0, 900),
        search.ConfigResult({"hidden_layers": 1, "width": 4, "lr": 1e-3, "weight_decay": 0.0},
                            [0.5], 0.5, 0.0, 300),
        search.ConfigResult({"hidden_layers": 1, "width": 4, "lr": 1e-4, "weight_decay": 0.0},
                            [0.5], 0.5, 0.0, 300),
    ]
    result = search.SearchResult("MLP", configs)
    assert result.ranking == [2, 1, 0]
