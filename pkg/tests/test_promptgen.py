import json
from pathlib import Path

import pytest

from tracelab.corpus import Artifact, Kind, Project, ProjectConfig
from tracelab.errors import PromptError
from tracelab.promptgen import (
    DEFAULT_TEMPERATURE,
    SYSTEM_INSTRUCTION,
    TRUNCATION_MARKER,
    HttpEndpointClient,
    MockClient,
    RecordingClient,
    ReplayClient,
    TransientLlmError,
    Verdict,
    build_prompt,
    bundles_from_jsonl,
    bundles_to_jsonl,
    parse_verdict,
    run_batch,
)
from tracelab.strategies import Edge, EdgeType, assemble_graph

GOLDEN = Path(__file__).parent / "golden"

REQ_TEXT = "Allow the librarian to register new members and issue loans."
CODE_TEXT = "public class LoanService { void issueLoan() { } }"


@pytest.fixture(scope="module")
def library_project():
    artifacts = (
        Artifact(id="AuditLog", kind=Kind.CODE, path="code/AuditLog.java",
                 text="public class AuditLog { }", tokens=("audit", "log")),
        Artifact(id="LoanService", kind=Kind.CODE, path="code/LoanService.java",
                 text=CODE_TEXT, tokens=("loan", "service")),
        Artifact(id="MemberService", kind=Kind.CODE, path="code/MemberService.java",
                 text="public class MemberService { }", tokens=("member", "service")),
        Artifact(id="RQ1", kind=Kind.REQUIREMENT, path="req/RQ1.txt",
                 text=REQ_TEXT, tokens=("librarian", "register", "members")),
    )
    return Project(
        name="library", artifacts=artifacts,
        ground_truth=frozenset({("RQ1", "LoanService")}),
        config=ProjectConfig(),
    )


def graph_with(project, dep_lines: int, fine: bool):
    dep = []
    if dep_lines >= 1:
        dep.append(Edge("MemberService", "LoanService", EdgeType.IMPORT))
    if dep_lines >= 2:
        dep.append(Edge("LoanService", "AuditLog", EdgeType.CALL))
    fine_edges = [Edge("RQ1", "LoanService", EdgeType.FINE_GRAINED)] if fine else []
    return assemble_graph(project, dep_edges=dep, fine_edges=fine_edges)


class TestGoldenPrompts:
    @pytest.mark.parametrize("dep", [0, 2])
    @pytest.mark.parametrize("fb", [True, False])
    @pytest.mark.parametrize("fg", [True, False])
    def test_all_signal_combinations_byte_match(self, library_project, dep, fb, fg):
        graph = graph_with(library_project, dep, fg)
        feedback = {("RQ1", "LoanService"): 1} if fb else {}
        bundle = build_prompt(("RQ1", "LoanService"), library_project, graph, feedback)
        name = f"prompt_dep{dep}_fb{'y' if fb else 'n'}_fg{'y' if fg else 'n'}.txt"
        golden = (GOLDEN / name).read_text(encoding="utf-8")
        assert bundle.user_prompt == golden
        assert bundle.system_instruction == SYSTEM_INSTRUCTION
        assert bundle.temperature == DEFAULT_TEMPERATURE

    def test_single_relation_line_multiplicity(self, library_project):
        graph = graph_with(library_project, 1, True)
        bundle = build_prompt(("RQ1", "LoanService"), library_project, graph, {})
        golden = (GOLDEN / "prompt_dep1_fbn_fgy.txt").read_text(encoding="utf-8")
        assert bundle.user_prompt == golden

    def test_system_instruction_fixed_string(self):
        assert SYSTEM_INSTRUCTION == "You are a judge in the field of software traceability."


class TestBuildPrompt:
    def test_deterministic(self, library_project):
        graph = graph_with(library_project, 2, True)
        a = build_prompt(("RQ1", "LoanService"), library_project, graph, {})
        b = build_prompt(("RQ1", "LoanService"), library_project, graph, {})
        assert a == b

    def test_negative_feedback_label_zero(self, library_project):
        graph = graph_with(library_project, 0, False)
        bundle = build_prompt(
            ("RQ1", "LoanService"), library_project, graph,
            {("RQ1", "LoanService"): 0},
        )
        assert "User feedback indicates label is 0." in bundle.user_prompt

    def test_unknown_pair_rejected(self, library_project):
        graph = graph_with(library_project, 0, False)
        with pytest.raises(PromptError, match="Ghost"):
            build_prompt(("RQ1", "Ghost"), library_project, graph, {})

    def test_code_truncation_with_marker(self, library_project):
        graph = graph_with(library_project, 0, False)
        bundle = build_prompt(
            ("RQ1", "LoanService"), library_project, graph, {}, code_token_budget=3
        )
        assert TRUNCATION_MARKER in bundle.user_prompt
        assert "issueLoan" not in bundle.user_prompt

    def test_relation_lines_sorted(self, library_project):
        graph = graph_with(library_project, 2, False)
        bundle = build_prompt(("RQ1", "LoanService"), library_project, graph, {})
        call_line = bundle.user_prompt.index("LoanService and AuditLog have a call")
        import_line = bundle.user_prompt.index("MemberService and LoanService have a import")
        assert call_line < import_line  # sorted by other-artifact id


class TestParseVerdict:
    @pytest.mark.parametrize(
        "raw,expected",
        [
            ("Yes", Verdict.YES),
            ("  no, because the code is unrelated", Verdict.NO),
            ("maybe", Verdict.UNPARSEABLE),
            ("YES.", Verdict.YES),
            ("No", Verdict.NO),
            ("", Verdict.UNPARSEABLE),
            ("42", Verdict.UNPARSEABLE),
            ("\n\tyes indeed\n", Verdict.YES),
        ],
    )
    def test_first_token_rule(self, raw, expected):
        assert parse_verdict(raw, ("R", "C")).label is expected

    @pytest.mark.parametrize("label,rendered", [(Verdict.YES, "Yes"), (Verdict.NO, "No")])
    def test_round_trip(self, label, rendered):
        assert parse_verdict(rendered, ("R", "C")).label is label


def make_bundles(library_project, n=10):
    graph = graph_with(library_project, 0, False)
    bundle = build_prompt(("RQ1", "LoanService"), library_project, graph, {})
    out = []
    for i in range(n):
        out.append(
            type(bundle)(
                system_instruction=bundle.system_instruction,
                user_prompt=bundle.user_prompt,
                pair=(f"RQ1", f"Code{i}"),
                temperature=bundle.temperature,
            )
        )
    return out


class TestRunBatch:
    def test_all_yes(self, library_project):
        bundles = make_bundles(library_project, 4)
        result = run_batch(bundles, MockClient("Yes"))
        assert [v.label for v in result.verdicts] == [Verdict.YES] * 4
        assert result.errors == () and result.remaining_pairs == ()

    def test_retry_then_success(self, library_project):
        bundles = make_bundles(library_project, 1)
        client = MockClient("Yes", fail_times=2)
        result = run_batch(bundles, client, backoff_s=0.0, sleep=lambda s: None)
        assert len(result.verdicts) == 1
        assert result.retry_counts == (2,)
        assert result.requests_sent == 3

    def test_budget_exhaustion_lists_remaining(self, library_project):
        bundles = make_bundles(library_project, 10)
        result = run_batch(bundles, MockClient("Yes"), budget=5)
        assert len(result.verdicts) == 5
        assert len(result.remaining_pairs) == 5
        assert any("budget" in e for e in result.errors)

    def test_persistent_failure_partial_results(self, library_project):
        bundles = make_bundles(library_project, 3)

        class FailSecond:
            def __init__(self):
                self.count = 0

            def send(self, bundle):
                self.count += 1
                if bundle.pair[1] == "Code1":
                    raise TransientLlmError("down")
                return "No"

        result = run_batch(bundles, FailSecond(), max_retries=1, sleep=lambda s: None)
        assert len(result.verdicts) == 1
        assert any("persistent" in e for e in result.errors)
        assert result.remaining_pairs == (("RQ1", "Code1"), ("RQ1", "Code2"))

    def test_unparseable_counted(self, library_project):
        bundles = make_bundles(library_project, 3)
        result = run_batch(bundles, MockClient("hmm, unclear"))
        assert result.unparseable_count == 3

    def test_verdicts_in_input_order(self, library_project):
        bundles = make_bundles(library_project, 5)
        responses = {b.pair: ("Yes" if i % 2 == 0 else "No") for i, b in enumerate(bundles)}
        result = run_batch(bundles, MockClient(responses))
        assert [v.pair for v in result.verdicts] == [b.pair for b in bundles]


class TestClients:
    def test_replay_and_recording_round_trip(self, library_project, tmp_path):
        bundles = make_bundles(library_project, 3)
        log = tmp_path / "recording.jsonl"
        recorded = RecordingClient(MockClient("Yes"), log)
        run_batch(bundles, recorded)
        replay = ReplayClient(log)
        result = run_batch(bundles, replay)
        assert [v.label for v in result.verdicts] == [Verdict.YES] * 3

    def test_replay_missing_pair_is_transient(self, library_project, tmp_path):
        log = tmp_path / "empty.jsonl"
        log.write_text("", encoding="utf-8")
        bundles = make_bundles(library_project, 1)
        result = run_batch(bundles, ReplayClient(log), max_retries=0, sleep=lambda s: None)
        assert result.verdicts == ()
        assert any("persistent" in e for e in result.errors)

    def test_http_client_wire_schema(self, library_project, monkeypatch):
        bundles = make_bundles(library_project, 1)
        captured = {}

        class FakeResponse:
            status_code = 200
            text = '{"text": "Yes"}'

            def json(self):
                return {"text": "Yes"}

        class FakeSession:
            def post(self, url, json=None, headers=None, timeout=None):
                captured.update(url=url, body=json, headers=headers)
                return FakeResponse()

        monkeypatch.setenv("TRACELAB_LLM_TOKEN", "secret-token")
        client = HttpEndpointClient("https://llm.example/v1", "judge-1", session=FakeSession())
        assert client.send(bundles[0]) == "Yes"
        assert captured["url"] == "https://llm.example/v1"
        assert captured["body"]["model"] == "judge-1"
        assert captured["body"]["temperature"] == DEFAULT_TEMPERATURE
        assert captured["body"]["system"] == SYSTEM_INSTRUCTION
        assert captured["headers"]["Authorization"] == "Bearer secret-token"

    @pytest.mark.parametrize("status,exc", [(429, TransientLlmError), (503, TransientLlmError)])
    def test_http_client_transient_statuses(self, library_project, status, exc):
        bundles = make_bundles(library_project, 1)

        class FakeSession:
            def post(self, *a, **k):
                return type("R", (), {"status_code": status, "text": ""})()

        client = HttpEndpointClient("https://x", "m", session=FakeSession())
        with pytest.raises(exc):
            client.send(bundles[0])

    def test_http_client_hard_error(self, library_project):
        bundles = make_bundles(library_project, 1)

        class FakeSession:
            def post(self, *a, **k):
                return type("R", (), {"status_code": 404, "text": "nope"})()

        client = HttpEndpointClient("https://x", "m", session=FakeSession())
        with pytest.raises(PromptError):
            client.send(bundles[0])


class TestBundleDump:
    def test_jsonl_round_trip(self, library_project, tmp_path):
        bundles = make_bundles(library_project, 3)
        path = tmp_path / "bundles.jsonl"
        bundles_to_jsonl(bundles, path)
        loaded = bundles_from_jsonl(path)
        assert loaded == bundles
        first = json.loads(path.read_text(encoding="utf-8").splitlines()[0])
        assert set(first) == {"req_id", "code_id", "system_instruction", "user_prompt", "temperature"}
