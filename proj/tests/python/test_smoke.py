import math

import pytest

import pdintent


def test_forced_outcome_game():
    log = pdintent.play_game("ALLD", "ALLC", lam=10.0)
    assert log["totals"] == [0.0, 1000.0]
    assert len(log["rounds"]) == 10


def test_mutual_cooperation_ratio_is_lambda_free():
    for lam in (0.1, 1.0, 10.0):
        log = pdintent.play_game("ALLC", "ALLC", lam=lam)
        assert pdintent.normalized_penalty_ratio(log, "A") == 0.2


def test_rules():
    assert pdintent.rule_match("D" * 10, "CDCDCDCDCD") == ["ALLD"]
    labels = pdintent.rule_match("C" * 10, "C" * 10)
    assert set(labels) == {"ALLC", "TFT", "WSLS"}
    assert pdintent.resolve_priority(labels) == "ALLC"
    assert pdintent.resolve_priority([]) is None


def test_bad_input_raises_value_error():
    with pytest.raises(ValueError):
        pdintent.play_game("ALLD", "XYZ")
    with pytest.raises(ValueError):
        pdintent.chi_square_test([[1, 2], [3]])


def test_train_classify_roundtrip(tmp_path):
    corpus = tmp_path / "corpus.jsonl"
    n_train, n_test = pdintent.generate_corpus(corpus, n_per_class=100, epsilon_levels=[0.0], seed=5)
    assert (n_train, n_test) == (320, 80)

    model = pdintent.Model.train("forest", corpus, seed=5, hyperparams={"forest": {"trees": 20}})
    assert model.labels == ["ALLC", "ALLD", "TFT", "WSLS"]
    probs = model.predict_proba("D" * 10, "CDCDCDCDCD")
    assert math.isclose(sum(probs.values()), 1.0, abs_tol=1e-9)

    result = model.classify("D" * 10, "CDCDCDCDCD", tau=0.5)
    assert result["label"] == "ALLD"

    report = model.evaluate(corpus)
    assert report["macro_f1"] > 0.9

    path = tmp_path / "forest.model.json"
    model.save(path)
    again = pdintent.Model.load(path)
    assert again.predict_proba("C" * 10, "DCDCDCDCDC") == model.predict_proba("C" * 10, "DCDCDCDCDC")


def test_statistics():
    t = pdintent.chi_square_test([[20, 10], [10, 20]])
    assert abs(t["statistic"] - 20 / 3) < 1e-9
    assert abs(pdintent.chi_square_sf(3.841458820694124, 1) - 0.05) < 1e-9
    lo, hi = pdintent.bootstrap_ci([1.0, 2.0, 3.0, 4.0, 5.0], n_boot=500, seed=1)
    assert 1.0 <= lo <= 3.0 <= hi <= 5.0


def test_cli_in_process(tmp_path):
    code, _, err = pdintent.run("simulate", "--pairing", "ALLD:ALLC", "--out-dir", tmp_path)
    assert code == 0, err
    assert (tmp_path / "games.jsonl").exists()
    code, _, _ = pdintent.run("frobnicate")
    assert code == 2
