import math

import numpy as np
import pytest

from fairslate import (
    ArrivalSchedule,
    ParseError,
    PreferenceStore,
    ProviderCatalog,
    RunConfig,
    Slate,
    ValidationError,
    load_arrivals,
    load_catalog,
    load_scores,
    position_weight,
    position_weights,
    validate_dataset,
    write_arrivals,
    write_catalog,
    write_scores,
)

from conftest import make_store


class TestPositionWeights:
    def test_frozen_values(self):
        assert position_weight(1) == 1.0
        assert position_weight(2) == pytest.approx(0.6309297535714574, abs=1e-15)
        assert position_weight(3) == 0.5

    def test_vector_matches_scalar(self):
        w = position_weights(7)
        assert w.shape == (7,)
        for k in range(1, 8):
            assert w[k - 1] == position_weight(k)

    def test_strictly_decreasing(self):
        w = position_weights(50)
        assert np.all(np.diff(w) < 0)

    @pytest.mark.parametrize("bad", [0, -1, 2.5])
    def test_rejects_bad_rank(self, bad):
        with pytest.raises(ValueError):
            position_weight(bad)
        with pytest.raises(ValueError):
            position_weights(bad)


class TestPreferenceStore:
    def test_unknown_lookups_are_zero(self):
        store = make_store([[0.5]])
        assert store.score("nobody", "i0") == 0.0
        assert store.score("u0", "nothing") == 0.0
        assert np.all(store.scores_for("nobody") == 0.0)

    def test_last_write_wins_and_duplicates_counted(self):
        store = PreferenceStore.from_rows(
            [("u", "i", 0.2), ("u", "j", 0.5), ("u", "i", 0.9)]
        )
        assert store.score("u", "i") == 0.9
        assert store.duplicate_count == 1

    def test_rejects_out_of_range(self):
        with pytest.raises(ValidationError):
            make_store([[1.5]])
        with pytest.raises(ValidationError):
            make_store([[-0.1]])

    def test_round_trip_through_rows(self):
        store = make_store([[0.25, 0.0], [0.0, 1.0]])
        again = PreferenceStore.from_rows(store.iter_rows())
        for u in store.users:
            for i in store.items:
                assert again.score(u, i) == store.score(u, i)


class TestProviderCatalog:
    def test_merit_defaults_to_catalog_share(self):
        cat = ProviderCatalog({"a": "p1", "b": "p1", "c": "p2", "d": "p2"})
        assert cat.merit == {"p1": 0.5, "p2": 0.5}
        assert np.allclose(cat.merit_shares(), [0.5, 0.5])

    def test_merit_override_normalizes(self):
        cat = ProviderCatalog({"a": "p1", "b": "p2"}, merit={"p1": 3.0, "p2": 1.0})
        assert np.allclose(cat.merit_shares(), [0.75, 0.25])

    def test_provider_order_is_first_appearance(self):
        cat = ProviderCatalog({"a": "z", "b": "a", "c": "z"})
        assert cat.providers == ("z", "a")

    def test_conflicting_ownership_rejected(self):
        with pytest.raises(ValidationError, match="assigned to both"):
            ProviderCatalog.from_rows([("a", "p1"), ("a", "p2")])

    def test_bad_merit_rejected(self):
        owner = {"a": "p1", "b": "p2"}
        with pytest.raises(ValidationError):
            ProviderCatalog(owner, merit={"p1": -1.0, "p2": 1.0})
        with pytest.raises(ValidationError):
            ProviderCatalog(owner, merit={"p1": 0.0, "p2": 0.0})
        with pytest.raises(ValidationError):
            ProviderCatalog(owner, merit={"p1": 1.0})

    def test_owner_indices(self):
        cat = ProviderCatalog({"a": "p1", "b": "p2", "c": "p1"})
        assert list(cat.owner_indices(["c", "b", "a"])) == [0, 1, 0]
        with pytest.raises(ValidationError):
            cat.owner_indices(["missing"])


class TestArrivalSchedule:
    def test_traffic_counts_include_empty_intervals(self):
        sched = ArrivalSchedule(arrivals=((1, "u"), (3, "v")), interval_count=3)
        assert sched.traffic() == {1: 1, 2: 0, 3: 1}
        assert sched.users_by_interval() == [["u"], [], ["v"]]

    def test_rejects_unsorted(self):
        with pytest.raises(ValidationError):
            ArrivalSchedule(arrivals=((2, "u"), (1, "v")), interval_count=2)

    def test_rejects_out_of_range_interval(self):
        with pytest.raises(ValidationError):
            ArrivalSchedule(arrivals=((0, "u"),), interval_count=2)
        with pytest.raises(ValidationError):
            ArrivalSchedule(arrivals=((3, "u"),), interval_count=2)


class TestSlate:
    def test_position_is_one_based(self):
        s = Slate.of("u", ["a", "b", "c"])
        assert s.position("a") == 1
        assert s.position("c") == 3
        with pytest.raises(ValueError):
            s.position("zzz")

    def test_rejects_duplicates(self):
        with pytest.raises(ValidationError):
            Slate.of("u", ["a", "a"])

    def test_rejects_mismatched_k(self):
        with pytest.raises(ValidationError):
            Slate(user="u", entries=("a", "b"), K=3)


class TestRunConfig:
    def test_defaults(self):
        cfg = RunConfig()
        assert cfg.K == 10 and cfg.N == 8
        assert cfg.lam == 0.5 and cfg.delta == 1.0
        assert cfg.beta_min == 0.9

    def test_lambda_key_alias(self):
        cfg = RunConfig.from_mapping({"lambda": "0.25", "K": "3"})
        assert cfg.lam == 0.25 and cfg.K == 3
        assert cfg.to_mapping()["lambda"] == 0.25
        assert "lam" not in cfg.to_mapping()

    def test_unknown_key_is_parse_error(self):
        with pytest.raises(ParseError, match="unknown config key"):
            RunConfig.from_mapping({"lambada": 0.5})

    def test_unparsable_value(self):
        with pytest.raises(ParseError):
            RunConfig.from_mapping({"delta": "fast"})

    @pytest.mark.parametrize(
        "field,value",
        [
            ("K", 0),
            ("N", 0),
            ("lam", -0.1),
            ("lam", 1.1),
            ("delta", 0.0),
            ("alpha_risk", 0.0),
            ("alpha_risk", 1.5),
            ("beta_min", 1.01),
            ("eta", 0.0),
            ("k_steep", 0.0),
            ("g0", 0.0),
            ("forecast_method", "psychic"),
        ],
    )
    def test_range_validation(self, field, value):
        with pytest.raises(ValidationError):
            RunConfig(**{field: value})


class TestFileFormats:
    def test_scores_csv_round_trip(self, tmp_path):
        store = make_store([[0.123456789012345, 0.0], [1 / 3, 1.0]])
        path = tmp_path / "scores.csv"
        write_scores(store, path)
        again = load_scores(path)
        assert again == PreferenceStore.from_rows(store.iter_rows())

    def test_scores_jsonl_round_trip(self, tmp_path):
        path = tmp_path / "scores.jsonl"
        path.write_text(
            '{"user_id":"u","item_id":"i","score":0.5}\n'
            '{"user_id":"u","item_id":"j","score":0.25}\n'
        )
        store = load_scores(path)
        assert store.score("u", "i") == 0.5
        assert store.score("u", "j") == 0.25

    def test_score_out_of_range_names_line(self, tmp_path):
        path = tmp_path / "scores.csv"
        path.write_text("user_id,item_id,score\nu,i,0.5\nu,j,1.5\n")
        with pytest.raises(ValidationError, match="line 3"):
            load_scores(path)

    def test_malformed_csv_names_line(self, tmp_path):
        path = tmp_path / "scores.csv"
        path.write_text("user_id,item_id,score\nu,i\n")
        with pytest.raises(ParseError, match="line 2"):
            load_scores(path)

    def test_bad_json_names_line(self, tmp_path):
        path = tmp_path / "scores.jsonl"
        path.write_text('{"user_id":"u","item_id":"i","score":0.5}\n{oops\n')
        with pytest.raises(ParseError, match="line 2"):
            load_scores(path)

    def test_catalog_round_trip_with_merit(self, tmp_path):
        cat = ProviderCatalog({"a": "p1", "b": "p2"}, merit={"p1": 2.0, "p2": 6.0})
        path = tmp_path / "catalog.csv"
        write_catalog(cat, path)
        again = load_catalog(path)
        assert again.owner == cat.owner
        assert again.merit == cat.merit

    def test_catalog_inconsistent_merit_rejected(self, tmp_path):
        path = tmp_path / "catalog.csv"
        path.write_text("item_id,provider_id,merit\na,p1,2.0\nb,p1,3.0\n")
        with pytest.raises(ValidationError, match="conflicting merit"):
            load_catalog(path)

    def test_arrivals_round_trip(self, tmp_path):
        sched = ArrivalSchedule(arrivals=((1, "u"), (1, "v"), (3, "u")), interval_count=3)
        path = tmp_path / "arrivals.csv"
        write_arrivals(sched, path)
        assert load_arrivals(path) == sched

    def test_arrivals_interval_count_defaults_to_max(self, tmp_path):
        path = tmp_path / "arrivals.csv"
        path.write_text("interval,user_id\n1,u\n4,v\n")
        assert load_arrivals(path).interval_count == 4


class TestValidateDataset:
    def test_passes_on_consistent_inputs(self, tiny_dataset):
        report = validate_dataset(
            tiny_dataset.store, tiny_dataset.catalog, tiny_dataset.schedule
        )
        assert report.passed
        assert report.missing_users == ()
        assert report.unowned_items == ()

    def test_flags_unknown_arrival_user(self, tiny_dataset):
        sched = ArrivalSchedule(arrivals=((1, "ghost"),), interval_count=1)
        report = validate_dataset(tiny_dataset.store, tiny_dataset.catalog, sched)
        assert not report.passed
        assert "ghost" in report.missing_users

    def test_flags_unowned_scored_item(self, tiny_dataset):
        cat = ProviderCatalog({"i0": "pa"})  # drops i1..i5
        report = validate_dataset(tiny_dataset.store, cat, tiny_dataset.schedule)
        assert not report.passed
        assert "i1" in report.unowned_items
        assert "unowned" in report.summary() or "i1" in report.summary()
