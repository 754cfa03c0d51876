import json
from pathlib import Path

import httpx
import numpy as np
import pytest

from virtual_eye.errors import ExternalServiceError, ParseError, SelectionFailed, UsageError
from virtual_eye.geometry import CameraRig
from virtual_eye.viewpoint.agent import ViewpointResponse, parse_response, select_view, validate
from virtual_eye.viewpoint.client import HttpChatClient, MockChatClient, make_client
from virtual_eye.viewpoint.prompt import RULES, SECTION_TITLES, build_prompt, format_response
from virtual_eye.viewpoint.som import build_som_image
from virtual_eye.world.scene import WORKSPACE, Box, Scene, make_rig, render_frames

GOLDEN = Path(__file__).parent / "golden" / "prompt_stack.txt"
TASK = "stack the red block on the blue block"


@pytest.fixture(scope="module")
def setup():
    rig = make_rig()
    scene = Scene([Box("a", [0.1, 0.1, 0.025], [0.05] * 3, (200, 30, 30)), Box("b", [-0.1, 0.0, 0.025], [0.05] * 3, (30, 30, 200))], rig)
    return rig, render_frames(scene)


def test_som_marks_and_axes(setup):
    rig, _ = setup
    som = build_som_image(rig)
    assert [m.number for m in som.marks] == [1, 2, 3, 4]
    assert som.axis_labels == ["x", "y", "z"]
    assert all(0 <= m.pixel[0] < 512 and 0 <= m.pixel[1] < 512 for m in som.marks)
    again = build_som_image(rig)
    assert again.image.tobytes() == som.image.tobytes()


def test_som_without_cameras():
    som = build_som_image(CameraRig([], WORKSPACE))
    assert som.marks == [] and som.axis_labels == ["x", "y", "z"]
    assert np.asarray(som.image).std() > 0


def test_prompt_structure(setup):
    rig, frames = setup
    b = build_prompt(TASK, rig, frames)
    assert [t for t, _ in b.sections] == list(SECTION_TITLES)
    assert len(b.images) == 5 and b.images[0][0] == "environment"
    rules = b.sections[3][1]
    assert all(text in rules for text in RULES.values())
    assert "ELEV=<number>; AZIM=<number>" in rules
    assert TASK in b.sections[1][1]
    assert b.sections[2][1].count("ELEV=") == 3
    assert all(data[:8] == b"\x89PNG\r\n\x1a\n" for _, data in b.images)


def test_prompt_is_deterministic(setup):
    rig, frames = setup
    assert build_prompt(TASK, rig, frames).to_text() == build_prompt(TASK, rig, frames).to_text()


def test_prompt_golden(setup):
    rig, frames = setup
    text = build_prompt(TASK, rig, frames).to_text()
    assert text == GOLDEN.read_text()


def test_prompt_errors(setup):
    rig, frames = setup
    with pytest.raises(UsageError):
        build_prompt("", rig, frames)
    with pytest.raises(UsageError):
        build_prompt(TASK, rig, frames[:3])


def test_messages_carry_base64_images(setup):
    rig, frames = setup
    msgs = build_prompt(TASK, rig, frames).messages()
    parts = msgs[0]["content"]
    urls = [p["image_url"]["url"] for p in parts if p["type"] == "image_url"]
    assert len(urls) == 5 and all(u.startswith("data:image/png;base64,") for u in urls)


def test_parse_examples():
    r = parse_response("ELEV=90; AZIM=0")
    assert (r.elev, r.azim) == (90.0, 0.0)
    r = parse_response("ELEV=45; AZIM=270")
    assert (r.elev, r.azim) == (45.0, -90.0)
    r = parse_response("  elev = 30 , azim=-45.5\nthe block is hidden from the side")
    assert (r.elev, r.azim) == (30.0, -45.5) and "hidden" in r.rationale
    for bad in ("the front camera looks best", "ELEV=abc; AZIM=3", "ELEV=95; AZIM=0", ""):
        with pytest.raises(ParseError):
            parse_response(bad)


def test_parse_format_identity_on_grid():
    for e in range(-90, 91):
        for a in range(-180, 180):
            r = parse_response(format_response(e, a))
            assert (r.elev, r.azim) == (e, a)


def test_validate_examples():
    top = validate(ViewpointResponse(90, 0))
    assert top.passed and top.violations == []
    low = validate(ViewpointResponse(-10, 0))
    assert not low.passed and "NOT_ABOVE_TABLE" in low.violations
    skew = validate(ViewpointResponse(45, 37))
    assert skew.passed and skew.warnings == ["NOT_AXIS_PREFERRED"]
    assert not validate(ViewpointResponse(0.0, 90)).passed
    assert not validate(ViewpointResponse(60, 0, "the wrist camera shows it")).passed


def test_select_first_try(setup):
    rig, frames = setup
    client = MockChatClient(["ELEV=90; AZIM=0"])
    sel = select_view(client, TASK, rig, frames)
    assert (sel.spec.elev, sel.spec.azim) == (90.0, 0.0)
    assert sel.calls == 1 == client.calls
    assert abs(sel.spec.distance - 1.2 * WORKSPACE.diagonal) < 1e-12


def test_select_recovers_after_garbage(setup):
    rig, frames = setup
    client = MockChatClient(["I like the view", "ELEV=45; AZIM=90"])
    sel = select_view(client, TASK, rig, frames, max_retries=1)
    assert (sel.spec.elev, sel.spec.azim) == (45.0, 90.0)
    assert len(sel.transcript) == 2 and sel.transcript[0]["violations"] == ["BAD_FORMAT"]
    # the retry carries the rule text back to the model
    follow_up = client.requests[1][-1]["content"][0]["text"]
    assert RULES["BAD_FORMAT"] in follow_up


def test_select_fails_after_retries(setup):
    rig, frames = setup
    client = MockChatClient(["ELEV=-30; AZIM=0"] * 5)
    with pytest.raises(SelectionFailed) as info:
        select_view(client, TASK, rig, frames, max_retries=2)
    assert len(info.value.transcript) == 3 == client.calls
    assert all(e["violations"] == ["NOT_ABOVE_TABLE"] for e in info.value.transcript)


def test_mock_exhaustion_and_file(tmp_path):
    c = MockChatClient(["a"])
    c.complete([])
    with pytest.raises(ExternalServiceError):
        c.complete([])
    path = tmp_path / "mock.json"
    path.write_text(json.dumps(["ELEV=90; AZIM=0"]))
    assert make_client(f"mock:{path}").complete([]) == "ELEV=90; AZIM=0"
    path.write_text("{}")
    with pytest.raises(UsageError):
        make_client(f"mock:{path}")
    with pytest.raises(UsageError):
        make_client("ftp://x")


def test_http_client_wire_format(monkeypatch):
    seen = {}

    def handler(request):
        seen["auth"] = request.headers["authorization"]
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"content": "ELEV=60; AZIM=180"}}]})

    monkeypatch.setenv("TEST_KEY", "secret")
    client = HttpChatClient("https://example.invalid/v1/chat/completions", "m1", "TEST_KEY", transport=httpx.MockTransport(handler))
    msgs = [{"role": "user", "content": [{"type": "text", "text": "hi"}]}]
    assert client.complete(msgs) == "ELEV=60; AZIM=180"
    assert seen["auth"] == "Bearer secret"
    assert seen["body"]["model"] == "m1" and seen["body"]["messages"] == msgs


def test_http_client_errors(monkeypatch):
    monkeypatch.setenv("TEST_KEY", "secret")
    for response in (httpx.Response(500, text="boom"), httpx.Response(200, json={"nope": 1}), httpx.Response(200, text="<html>")):
        client = HttpChatClient("https://example.invalid/x", "m", "TEST_KEY", transport=httpx.MockTransport(lambda r, resp=response: resp))
        with pytest.raises(ExternalServiceError):
            client.complete([])
    monkeypatch.delenv("TEST_KEY")
    with pytest.raises(UsageError):
        HttpChatClient("https://example.invalid/x", "m", "TEST_KEY").complete([])
