import pytest

from parley.agents import make_scripted_agent
from parley.catalog import Assignment
from parley.errors import ConfigurationError
from parley.protocol import format_close, format_offer, moderator_suffix
from parley.scoring import extract_agreement
from parley.session import (
    Transcript,
    Utterance,
    detect_termination,
    load_svi_items,
    parse_svi_response,
    run_session,
)

def agents_for(*specs):
    return {a.agent_id: a for a in specs}


# ---------------------------------------------------------------------------
# detect_termination


def utt(i, role, text):
    return Utterance(index=i, speaker_agent_id=role, role_name=role, text=text)


def test_accept_with_price_closes(chair):
    utterances = [
        utt(0, "seller", "[OFFER price=100]"),
        utt(1, "buyer", "Fine. [ACCEPT] [TERMS price=100]"),
    ]
    assert detect_termination(utterances, chair) == "accepted"


def test_accept_missing_issue_continues(rental):
    close = "[ACCEPT] [TERMS rent_amount=C; deposit=E; start_date=E]"
    utterances = [utt(0, "landlord", "[OFFER rent_amount=C]"), utt(1, "tenant", close)]
    assert detect_termination(utterances, rental) == "continue"


def test_accept_all_issues_closes(rental):
    close = "[ACCEPT] [TERMS rent_amount=C; deposit=E; start_date=E; contract_length=A]"
    utterances = [utt(0, "landlord", "hello"), utt(1, "tenant", close)]
    assert detect_termination(utterances, rental) == "accepted"


def test_walkaway_marker(chair):
    utterances = [utt(0, "seller", "I am walking away. [WALKAWAY]")]
    assert detect_termination(utterances, chair) == "walkaway"


def test_bare_accept_does_not_close(chair):
    utterances = [utt(0, "buyer", "[ACCEPT] sounds good")]
    assert detect_termination(utterances, chair) == "continue"


# ---------------------------------------------------------------------------
# run_session


def test_concession_vs_acceptor(chair):
    seller = make_scripted_agent(
        "fixed_concession", {"ladder": [150, 130, 110]}, agent_id="fc"
    )
    buyer = make_scripted_agent("immediate_acceptor", agent_id="ia")
    transcript = run_session(
        chair, {"seller": "fc", "buyer": "ia"}, agents_for(seller, buyer), seed=3
    )
    assert transcript.termination == "accepted"
    assert len(transcript.utterances) == 2
    terms = extract_agreement(transcript, chair)
    assert terms.agreed_price == 150  # the ladder's current (first) rung


def test_stonewaller_pair_caps_at_100(chair):
    w1 = make_scripted_agent("stonewaller", agent_id="w1")
    w2 = make_scripted_agent("stonewaller", agent_id="w2")
    transcript = run_session(
        chair, {"seller": "w1", "buyer": "w2"}, agents_for(w1, w2), seed=3
    )
    assert transcript.termination == "cap_reached"
    assert len(transcript.utterances) == 100  # 50 exchanges


def test_silent_agent_terminates_with_empty_utterances(chair):
    mute = make_scripted_agent("silent", agent_id="mute")
    wall = make_scripted_agent("stonewaller", agent_id="wall")
    transcript = run_session(
        chair, {"seller": "wall", "buyer": "mute"}, agents_for(mute, wall), seed=3
    )
    assert transcript.termination == "cap_reached"
    assert any(u.text == "" for u in transcript.utterances)
    assert transcript.svi["buyer"] is None  # unparseable empty questionnaire


def test_speaker_alternation_and_contiguous_indices(rental):
    ladder = make_scripted_agent(
        "fixed_concession", {"label_ladder": ["A", "B", "C"]}, agent_id="lad"
    )
    wall = make_scripted_agent("stonewaller", agent_id="wall")
    transcript = run_session(
        rental, {"landlord": "lad", "tenant": "wall"}, agents_for(ladder, wall), seed=3
    )
    for i, utterance in enumerate(transcript.utterances):
        assert utterance.index == i
        if i:
            assert utterance.role_name != transcript.utterances[i - 1].role_name


def test_accepted_session_ends_on_accepting_agents_utterance(employment):
    ladder = make_scripted_agent(
        "fixed_concession", {"label_ladder": ["B"]}, agent_id="lad"
    )
    acceptor = make_scripted_agent("immediate_acceptor", agent_id="acc")
    transcript = run_session(
        employment,
        {"consultant": "lad", "coo": "acc"},
        agents_for(ladder, acceptor),
        seed=3,
    )
    assert transcript.termination == "accepted"
    assert transcript.utterances[-1].speaker_agent_id == "acc"
    assert len(transcript.utterances) % 2 == 0  # opener spoke first, acceptor closed


def test_replay_is_byte_identical(rental):
    ladder = make_scripted_agent(
        "fixed_concession", {"label_ladder": ["A", "C"]}, agent_id="lad"
    )
    acceptor = make_scripted_agent("immediate_acceptor", agent_id="acc")
    kwargs = dict(
        scenario=rental,
        role_map={"landlord": "lad", "tenant": "acc"},
        agents=agents_for(ladder, acceptor),
        seed=99,
    )
    import json

    first = run_session(**kwargs)
    second = run_session(**kwargs)
    assert json.dumps(first.to_record(), sort_keys=True) == json.dumps(
        second.to_record(), sort_keys=True
    )


def test_first_mover_configurable(chair):
    wall = make_scripted_agent("stonewaller", agent_id="wall")
    mute = make_scripted_agent("silent", agent_id="mute")
    agents = agents_for(wall, mute)
    role_map = {"seller": "wall", "buyer": "mute"}
    opener_default = run_session(chair, role_map, agents, seed=1).utterances[0]
    opener_buyer = run_session(
        chair, role_map, agents, seed=1, first_mover="buyer"
    ).utterances[0]
    assert opener_default.role_name == "seller"
    assert opener_buyer.role_name == "buyer"


def test_unresolvable_agent_rejected(chair):
    wall = make_scripted_agent("stonewaller", agent_id="wall")
    with pytest.raises(ConfigurationError):
        run_session(chair, {"seller": "wall", "buyer": "ghost"}, agents_for(wall), seed=1)


def test_aborted_backend_preserves_partial_transcript(chair):
    from parley.agents import AgentSpec, BackendBinding, ChatModelClient

    def dead(endpoint, payload, api_key, timeout):
        raise OSError("gone")

    client = ChatModelClient(transport=dead, max_retries=0, backoff_base=0.001)
    wall = make_scripted_agent("stonewaller", agent_id="wall")
    flaky = AgentSpec(
        agent_id="flaky",
        nickname="flaky",
        prompt_text="be brief",
        backend=BackendBinding(
            kind="chat_model", model_name="m", endpoint="https://example.invalid"
        ),
    )
    transcript = run_session(
        chair,
        {"seller": "wall", "buyer": "flaky"},
        agents_for(wall, flaky),
        seed=1,
        client=client,
    )
    assert transcript.termination == "aborted"
    assert len(transcript.utterances) == 1  # the stonewaller's opener survived
    assert transcript.svi == {}


def test_termination_consistent_with_extraction(rental):
    # accepted <=> marker extraction yields a complete assignment
    ladder = make_scripted_agent(
        "fixed_concession", {"label_ladder": ["B"]}, agent_id="lad"
    )
    acceptor = make_scripted_agent("immediate_acceptor", agent_id="acc")
    wall = make_scripted_agent("stonewaller", agent_id="wall")
    agents = agents_for(ladder, acceptor, wall)
    for pair, expect_deal in (
        (("lad", "acc"), True),
        (("lad", "wall"), False),
        (("wall", "acc"), True),
    ):
        transcript = run_session(
            rental,
            {"landlord": pair[0], "tenant": pair[1]},
            agents,
            seed=5,
        )
        terms = extract_agreement(transcript, rental)
        assert (transcript.termination == "accepted") == (not terms.impasse)


# ---------------------------------------------------------------------------
# Questionnaire


def test_svi_all_sevens():
    items = load_svi_items()
    reply = "\n".join(f"{i}: 7" for i in range(1, 17))
    response = parse_svi_response(reply, items)
    assert response.composite == 7.0
    assert all(v == 7.0 for v in response.facets.values())


def test_svi_out_of_scale_rating_rejected():
    items = load_svi_items()
    reply = "\n".join(f"{i}: {9 if i == 4 else 5}" for i in range(1, 17))
    assert parse_svi_response(reply, items) is None


def test_svi_incomplete_rejected():
    items = load_svi_items()
    reply = "\n".join(f"{i}: 4" for i in range(1, 16))
    assert parse_svi_response(reply, items) is None


def test_svi_alternating_threes_and_fives():
    items = load_svi_items()
    reply = "\n".join(f"{i}: {3 if i % 2 else 5}" for i in range(1, 17))
    response = parse_svi_response(reply, items)
    assert response.composite == 4.0


def test_svi_facet_means():
    items = load_svi_items()
    # facets are blocks of four: rate block k entirely k+1
    lines = []
    for i in range(1, 17):
        lines.append(f"{i}: {(i - 1) // 4 + 1}")
    response = parse_svi_response("\n".join(lines), items)
    assert response.facets == {
        "instrumental": 1.0,
        "self": 2.0,
        "process": 3.0,
        "relationship": 4.0,
    }
    assert response.composite == 2.5


def test_svi_recorded_for_both_seats(chair):
    a = make_scripted_agent("stonewaller", {"svi_rating": 6}, agent_id="a")
    b = make_scripted_agent("stonewaller", {"svi_rating": 2}, agent_id="b")
    transcript = run_session(
        chair, {"seller": "a", "buyer": "b"}, agents_for(a, b), seed=1
    )
    assert transcript.svi["seller"].composite == 6.0
    assert transcript.svi["buyer"].composite == 2.0


def test_self_play_records_both_seats(chair):
    solo = make_scripted_agent("stonewaller", agent_id="solo")
    transcript = run_session(
        chair, {"seller": "solo", "buyer": "solo"}, agents_for(solo), seed=1
    )
    assert set(transcript.svi) == {"seller", "buyer"}
    assert transcript.termination == "cap_reached"


# ---------------------------------------------------------------------------
# Record round trip


def test_transcript_record_round_trip(chair):
    a = make_scripted_agent("stonewaller", agent_id="a")
    b = make_scripted_agent("immediate_acceptor", agent_id="b")
    transcript = run_session(
        chair, {"seller": "a", "buyer": "b"}, agents_for(a, b), seed=8
    )
    clone = Transcript.from_record(transcript.to_record())
    assert clone.to_record() == transcript.to_record()


def test_moderator_suffix_lists_issue_keys(rental):
    suffix = moderator_suffix(rental)
    for key in ("rent_amount", "deposit", "start_date", "contract_length"):
        assert key in suffix


def test_offer_close_format_round_trip(rental):
    assignment = Assignment(
        chosen={
            "Rent Amount": "C",
            "Deposit": "E",
            "Start Date": "E",
            "Contract Length": "A",
        }
    )
    from parley.protocol import parse_block, terms_to_assignment

    closed = format_close(rental, assignment)
    parsed = terms_to_assignment(rental, parse_block(closed, "TERMS"))
    assert parsed.chosen == assignment.chosen
    offered = format_offer(rental, assignment)
    parsed_offer = terms_to_assignment(rental, parse_block(offered, "OFFER"))
    assert parsed_offer.chosen == assignment.chosen


# ---------------------------------------------------------------------------
# Chat-model backend through a full session (fake protocol-following model)


def test_chat_backed_session_end_to_end(chair):
    """Drives the production path: assembled system prompts, role mapping,
    marker-based termination, and the questionnaire request, all through a
    transport that behaves like a protocol-following model."""
    from parley.agents import AgentSpec, BackendBinding, ChatModelClient

    def fake_model(endpoint, payload, api_key, timeout):
        dialogue = payload["messages"][1:]
        last = dialogue[-1]["content"] if dialogue else ""
        if "questionnaire" in last:
            text = "\n".join(f"{i}: 5" for i in range(1, 17))
        elif "[OFFER" in last:
            text = "Deal. [ACCEPT] [TERMS price=110]"
        else:
            text = "I propose $110. [OFFER price=110]"
        return {
            "choices": [{"message": {"content": text}, "finish_reason": "stop"}],
            "usage": {"prompt_tokens": 7, "completion_tokens": 3},
        }

    client = ChatModelClient(transport=fake_model)
    binding = BackendBinding(
        kind="chat_model", model_name="fake", endpoint="https://example.invalid"
    )
    seller = AgentSpec("cs", "cs", "Sell high, stay warm.", binding)
    buyer = AgentSpec("cb", "cb", "Buy low, stay warm.", binding)
    transcript = run_session(
        chair,
        {"seller": "cs", "buyer": "cb"},
        {"cs": seller, "cb": buyer},
        seed=4,
        client=client,
    )
    assert transcript.termination == "accepted"
    assert len(transcript.utterances) == 2
    assert transcript.svi["seller"].composite == 5.0
    assert transcript.svi["buyer"].composite == 5.0
    terms = extract_agreement(transcript, chair)
    assert terms.agreed_price == 110
    # 2 turns + 2 questionnaires
    assert client.usage["requests"] == 4
