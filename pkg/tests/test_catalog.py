import itertools

import pytest
from hypothesis import given, strategies as st

from parley.catalog import (
    Assignment,
    BUILTIN_SCENARIOS,
    IssueSchedule,
    RoleSpec,
    ScenarioSpec,
    enumerate_frontier,
    evaluate_assignment,
    load_builtin,
    load_catalog,
    load_scenario_file,
    validate_scenario,
)
from parley.errors import (
    EvaluationError,
    NotFoundError,
    SchemaError,
    UnsupportedKindError,
)


def test_load_catalog_builtins():
    specs = load_catalog()
    assert [s.scenario_id for s in specs] == list(BUILTIN_SCENARIOS)


def test_chair_batnas(chair):
    assert chair.role("seller").batna_price == 40
    assert chair.role("buyer").batna_price == 120


def test_rental_shape(rental):
    assert rental.kind == "integrative"
    assert len(rental.issues) == 4
    rent = rental.issue("Rent Amount")
    assert [rent.points_for(label, "landlord") for label in "ABCDE"] == [
        450, 650, 850, 1050, 1250,
    ]


def test_unknown_builtin():
    with pytest.raises(NotFoundError):
        load_builtin("warehouse")


def test_file_missing_option_row(tmp_path, rental):
    import yaml
    from importlib import resources

    raw = yaml.safe_load(
        (resources.files("parley.data.scenarios") / "rental.yaml").read_text()
    )
    del raw["issues"][0]["options"][2]
    path = tmp_path / "broken.yaml"
    path.write_text(yaml.safe_dump(raw))
    with pytest.raises(SchemaError, match="options!=5"):
        load_scenario_file(path)


def test_validate_all_builtins_clean():
    for spec in load_catalog():
        assert validate_scenario(spec) == []


def test_validate_four_options(rental):
    four = IssueSchedule(
        issue_name="Rent Amount",
        options=rental.issues[0].options[:4],
    )
    spec = ScenarioSpec(
        scenario_id="bad",
        kind="integrative",
        roles=rental.roles,
        issues=(four, *rental.issues[1:]),
    )
    report = validate_scenario(spec)
    assert any("options!=5" in violation for violation in report)


def test_validate_distributive_with_impasse_points(chair):
    bad_role = RoleSpec(
        role_name="seller",
        confidential_instructions="x",
        batna_price=40,
        impasse_points=10,
    )
    spec = ScenarioSpec(
        scenario_id="bad",
        kind="distributive",
        roles=(bad_role, chair.roles[1]),
        price_frame=chair.price_frame,
    )
    report = validate_scenario(spec)
    assert any("impasse_points" in violation for violation in report)


# ---------------------------------------------------------------------------
# Payoff-table fidelity


def test_rental_rent_sums_constant(rental):
    rent = rental.issue("Rent Amount")
    for label in "ABCDE":
        assert rent.points_for(label, "landlord") + rent.points_for(label, "tenant") == 1700


@pytest.mark.parametrize("issue_name", ["Deposit", "Start Date"])
def test_rental_logroll_sums_increasing(rental, issue_name):
    issue = rental.issue(issue_name)
    sums = [
        issue.points_for(label, "landlord") + issue.points_for(label, "tenant")
        for label in "ABCDE"
    ]
    assert sums == sorted(sums)
    assert len(set(sums)) == 5
    assert sums[-1] == 1600


def test_employment_travel_sums_constant(employment):
    travel = employment.issue("Travel Expenses")
    for label in "ABCDE":
        assert (
            travel.points_for(label, "consultant") + travel.points_for(label, "coo")
            == 900
        )


def test_employment_invoice_compatible(employment):
    invoice = employment.issue("Invoice Frequency")
    for role in ("consultant", "coo"):
        best = max("ABCDE", key=lambda label: invoice.points_for(label, role))
        assert best == "A"


# ---------------------------------------------------------------------------
# Evaluation


def test_rental_ceea_assignment(rental):
    assignment = Assignment(
        chosen={
            "Rent Amount": "C",
            "Deposit": "E",
            "Start Date": "E",
            "Contract Length": "A",
        }
    )
    values, joint = evaluate_assignment(rental, assignment)
    assert values == {"landlord": 3100, "tenant": 3100}
    assert joint == 6200


def test_employment_impasse(employment):
    values, joint = evaluate_assignment(employment, Assignment.impasse_marker())
    assert values == {"consultant": 500, "coo": 500}
    assert joint == 1000


def test_rental_impasse(rental):
    values, joint = evaluate_assignment(rental, Assignment.impasse_marker())
    assert values == {"landlord": 0, "tenant": 0}
    assert joint == 0


def test_chair_deal_at_100(chair):
    values, joint = evaluate_assignment(chair, Assignment(agreed_price=100))
    assert values == {"seller": 60, "buyer": 20}
    assert joint == 80


def test_chair_impasse_zero_surplus(chair):
    values, joint = evaluate_assignment(chair, Assignment.impasse_marker())
    assert values == {"seller": 0, "buyer": 0}
    assert joint == 0


def test_unknown_option_label(rental):
    assignment = Assignment(
        chosen={
            "Rent Amount": "Z",
            "Deposit": "E",
            "Start Date": "E",
            "Contract Length": "A",
        }
    )
    with pytest.raises(EvaluationError):
        evaluate_assignment(rental, assignment)


def test_negative_price_rejected(chair):
    with pytest.raises(EvaluationError):
        evaluate_assignment(chair, Assignment(agreed_price=-5))


def test_out_of_zopa_price_legal(chair):
    values, _ = evaluate_assignment(chair, Assignment(agreed_price=150))
    assert values["buyer"] == -30  # bad deals are legal, just costly


@given(
    st.tuples(
        st.sampled_from("ABCDE"),
        st.sampled_from("ABCDE"),
        st.sampled_from("ABCDE"),
        st.sampled_from("ABCDE"),
    )
)
def test_joint_equals_sum_of_roles(labels):
    rental = load_builtin("rental")
    assignment = Assignment(
        chosen=dict(zip((i.issue_name for i in rental.issues), labels))
    )
    values, joint = evaluate_assignment(rental, assignment)
    assert joint == pytest.approx(sum(values.values()))


# ---------------------------------------------------------------------------
# Frontier


def brute_force_max_joint(spec):
    best = None
    for combo in itertools.product("ABCDE", repeat=len(spec.issues)):
        total = 0
        for issue, label in zip(spec.issues, combo):
            for role in spec.role_names:
                total += issue.points_for(label, role)
        best = total if best is None else max(best, total)
    return best


def test_frontier_rental(rental):
    max_joint, nondominated = enumerate_frontier(rental)
    assert max_joint == 6200
    assert max_joint == brute_force_max_joint(rental)
    assert all(
        sum(values.values()) <= max_joint for _, values in nondominated
    )


def test_frontier_employment(employment):
    max_joint, _ = enumerate_frontier(employment)
    assert max_joint == 4800
    assert max_joint == brute_force_max_joint(employment)


def test_frontier_distributive_unsupported(chair):
    with pytest.raises(UnsupportedKindError):
        enumerate_frontier(chair)


def test_frontier_single_compatible_issue(rental):
    # both roles prefer the same option: the frontier collapses to it
    issue = IssueSchedule(
        issue_name="Shared",
        options=tuple(
            (label, f"opt {label}", {"landlord": pts, "tenant": pts})
            for label, pts in zip("ABCDE", (10, 20, 30, 40, 50))
        ),
    )
    spec = ScenarioSpec(
        scenario_id="single",
        kind="integrative",
        roles=rental.roles,
        issues=(issue,),
    )
    max_joint, nondominated = enumerate_frontier(spec)
    assert max_joint == 100
    assert len(nondominated) == 1
    assert nondominated[0][0].chosen == {"Shared": "E"}


def test_load_catalog_from_directory(tmp_path):
    import shutil
    from importlib import resources

    base = resources.files("parley.data.scenarios")
    for name in ("chair", "rental"):
        (tmp_path / f"{name}.yaml").write_text((base / f"{name}.yaml").read_text())
    specs = load_catalog(tmp_path)
    assert sorted(s.scenario_id for s in specs) == ["chair", "rental"]


def test_load_catalog_empty_directory(tmp_path):
    with pytest.raises(NotFoundError):
        load_catalog(tmp_path)


def test_load_catalog_missing_path():
    with pytest.raises(NotFoundError):
        load_catalog("/no/such/place.yaml")
