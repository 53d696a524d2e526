import json

import numpy as np
import pytest

from trialspline.dataset import (TrialData, complete_cases, from_json, load_csv, to_json,
                                 write_csv)
from trialspline.errors import (EmptyData, InvariantViolation, MissingColumn, ParseError)

from conftest import small_trial

HEADER = "id,arm,visit,target_month,month,version,y,age\n"


def write(tmp_path, body, header=HEADER):
    p = tmp_path / "d.csv"
    p.write_text(header + body)
    return p


def test_minimal_file(tmp_path):
    p = write(tmp_path, "1,0,1,0,0,A,1.5,70\n1,0,2,6,6,B,2.5,70\n1,0,3,12,12,C,3.5,70\n")
    d = load_csv(p)
    assert d.n_obs == 3 and d.n_subjects == 1
    assert d.covariate_names == ("age",)
    np.testing.assert_array_equal(d.month, [0, 6, 12])


def test_duplicate_visit_names_row(tmp_path):
    body = "7,0,1,0,0,A,1,70\n7,0,2,6,6,B,2,70\n7,0,2,6,6.5,B,2,70\n"
    with pytest.raises(InvariantViolation) as exc:
        load_csv(write(tmp_path, body))
    assert exc.value.row == 4


def test_baseline_month_must_be_zero(tmp_path):
    with pytest.raises(InvariantViolation) as exc:
        load_csv(write(tmp_path, "1,0,1,0,1.5,A,1,70\n"))
    assert exc.value.row == 2


def test_months_increase_within_subject(tmp_path):
    body = "1,0,1,0,0,A,1,70\n1,0,2,6,8,B,2,70\n1,0,3,12,7,C,2,70\n"
    with pytest.raises(InvariantViolation, match="increase"):
        load_csv(write(tmp_path, body))


def test_one_arm_per_subject(tmp_path):
    with pytest.raises(InvariantViolation, match="arm"):
        load_csv(write(tmp_path, "1,0,1,0,0,A,1,70\n1,1,2,6,6,B,2,70\n"))


@pytest.mark.parametrize("body,column", [
    ("1,2,1,0,0,A,1,70\n", "arm"),
    ("1,0,1,0,zero,A,1,70\n", "month"),
    ("1,0,1,0,0,D,1,70\n", "version"),
    ("1,0,1,0,0,A,oops,70\n", "y"),
    ("1,0,1,0,0,A,1,NA\n", "age"),
    ("1,0,1.5,0,0,A,1,70\n", "visit"),
])
def test_parse_errors_name_row_and_column(tmp_path, body, column):
    with pytest.raises(ParseError) as exc:
        load_csv(write(tmp_path, body))
    assert exc.value.row == 2 and exc.value.column == column


def test_missing_column(tmp_path):
    with pytest.raises(MissingColumn):
        load_csv(write(tmp_path, "1,0,1,0,0,A\n", header="id,arm,visit,target_month,month,version\n"))


def test_schema_maps_columns(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("subj,trt,vis,sched,mo,form,score\n1,1,1,0,0,A,3\n1,1,2,6,5.5,B,\n")
    d = load_csv(p, schema={"id": "subj", "arm": "trt", "visit": "vis", "target_month": "sched",
                            "month": "mo", "version": "form", "y": "score"})
    assert d.n_obs == 2 and d.n_missing == 1 and d.covariate_names == ()


def test_missing_outcomes_kept(tmp_path):
    d = load_csv(write(tmp_path, "1,0,1,0,0,A,1,70\n1,0,2,6,6,B,NA,70\n1,0,3,12,12,C,,70\n"))
    assert d.n_obs == 3 and d.n_missing == 2


def test_complete_cases_counts():
    rng = np.random.default_rng(0)
    d = small_trial(rng, n_subjects=4, K=3, missing=0.0)
    y = d.y.copy()
    y[[1, 4]] = np.nan
    d2 = d.with_outcome(y)
    cc = complete_cases(d2)
    assert cc.n_obs == d.n_obs - 2
    assert complete_cases(cc) is cc          # idempotent, identity when nothing is missing
    assert complete_cases(d) is d
    with pytest.raises(EmptyData):
        complete_cases(d.with_outcome(np.full(d.n_obs, np.nan)))


def test_csv_round_trip(tmp_path):
    d = small_trial(np.random.default_rng(3), n_subjects=5, missing=0.2)
    p = tmp_path / "rt.csv"
    write_csv(d, p)
    assert load_csv(p).equals(d)


def test_json_round_trip():
    d = small_trial(np.random.default_rng(4), n_subjects=3, missing=0.3)
    text = to_json(d)
    assert json.loads(text)["covariates"] == ["x"]
    assert from_json(text).equals(d)


def test_row_order_invariance():
    d = small_trial(np.random.default_rng(5), n_subjects=5)
    df = d.to_frame()
    shuffled = df.sample(frac=1.0, random_state=1)
    # first-appearance order of subjects must match to compare arrays directly
    first = shuffled.drop_duplicates("id")["id"].tolist()
    d2 = TrialData.from_frame(shuffled, ["x"])
    assert list(d2.subjects) == first
    for s in first:
        a = df[df.id == s].sort_values("visit")
        b = d2.to_frame()
        b = b[b.id == s]
        np.testing.assert_array_equal(a["y"].to_numpy(), b["y"].to_numpy())


def test_immutable():
    d = small_trial(np.random.default_rng(6))
    with pytest.raises(ValueError):
        d.y[0] = 1.0
