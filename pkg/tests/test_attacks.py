import json

import pytest

from teeplc.attacks import (
    BLOCKED,
    EXPECTED,
    NOT_APPLICABLE,
    SECURE_BOOT,
    SUCCEEDED,
    AddressUnknown,
    BitFlip,
    MatrixMismatch,
    identity,
    inject_logic,
    kill_supplicant,
    mitm_tamper,
    render_matrix,
    rogue_program,
    run_matrix,
    steal_logic_and_keys,
    tamper_io_memory,
    vector_key,
    write_matrix,
)
from teeplc.logic import bundled, parse
from teeplc.runtime import ConfigError

CYCLES = 20


def test_bitflip_helper():
    assert BitFlip(1, 0x80)(b"\x00\x00\x00") == b"\x00\x80\x00"
    assert BitFlip(9)(b"\x01") == b"\x01"


def test_mitm_enhanced_blocked():
    out = mitm_tamper("enhanced", cycles=CYCLES)
    assert out.verdict == BLOCKED
    assert out.evidence["replies_mutated"] > 0
    assert out.evidence["records_rejected"] > 0
    assert out.evidence["divergence"] is None


def test_mitm_minimal_succeeds():
    out = mitm_tamper("minimal", cycles=CYCLES)
    assert out.verdict == SUCCEEDED
    assert out.evidence["divergence"]["index"] >= 0


def test_mitm_identity_mutation_not_applicable():
    out = mitm_tamper("minimal", mutation=identity, cycles=CYCLES)
    assert out.verdict == NOT_APPLICABLE
    assert out.evidence["replies_seen"] > 0


def test_tamper_enhanced_blocked_minimal_succeeds():
    enh = tamper_io_memory("enhanced", cycles=CYCLES)
    assert enh.verdict == BLOCKED
    assert enh.evidence["tamper_targets"] == ["snapshot"]
    # the normal world sees its own forgery, the logic never does
    assert enh.evidence["scada_reads_tampered"] is True
    mini = tamper_io_memory("minimal", cycles=CYCLES)
    assert mini.verdict == SUCCEEDED
    assert mini.evidence["tamper_targets"] == ["process_image"]


def test_tamper_unused_input_not_applicable():
    out = tamper_io_memory("minimal", "%IX0.5", cycles=5)
    assert out.evidence["live_input"] is False
    assert out.verdict == NOT_APPLICABLE


@pytest.mark.parametrize("address", ["%QX0.0", "%IX0.8", "garbage", "%IX7.0"])
def test_tamper_bad_address(address):
    with pytest.raises(AddressUnknown):
        tamper_io_memory("minimal", address, cycles=2)


def test_rogue_program_inverts_outputs():
    src = rogue_program(bundled("tank"))
    assert src.splitlines()[-3:] == ["M := NOT M;", "P := NOT P;", "END_PROGRAM"]
    parse(src)


@pytest.mark.parametrize("mode", ["minimal", "enhanced"])
def test_inject_logic_blocked(mode):
    out = inject_logic(mode, cycles=CYCLES)
    assert out.verdict == BLOCKED
    results = {a["variant"]: a["result"] for a in out.evidence["attempts"]}
    assert results == {"unsigned": "BadSignature", "self_signed": "BadSignature",
                       "body_tampered": "BadSignature", "downgrade": "VersionRollback"}


def test_inject_logic_baseline_succeeds():
    out = inject_logic("baseline", cycles=CYCLES)
    assert out.verdict == SUCCEEDED
    assert out.evidence["divergence"] is not None


@pytest.mark.parametrize("mode,expected", [("baseline", SUCCEEDED), ("minimal", BLOCKED), ("enhanced", BLOCKED)])
def test_logic_theft(mode, expected):
    out = steal_logic_and_keys(mode, "c")
    assert out.verdict == expected
    if expected == SUCCEEDED:
        assert any(h["needle"] == "canary" for h in out.evidence["leaks"])


@pytest.mark.parametrize("mode,expected", [("baseline", NOT_APPLICABLE), ("minimal", NOT_APPLICABLE),
                                           ("enhanced", BLOCKED)])
def test_credential_theft(mode, expected):
    out = steal_logic_and_keys(mode, "e")
    assert out.verdict == expected
    assert out.evidence["leaks"] == []


def test_theft_rejects_other_vectors():
    with pytest.raises(ConfigError):
        steal_logic_and_keys("enhanced", "a")


def test_kill_supplicant():
    never = kill_supplicant("enhanced")
    assert never.verdict == SUCCEEDED
    assert never.evidence["failure"] == "SupplicantDown"
    assert never.evidence["cycles_completed"] == 6
    assert kill_supplicant("enhanced", restore_after=0).verdict == BLOCKED
    assert kill_supplicant("baseline").verdict == NOT_APPLICABLE


def test_vector_key():
    assert vector_key("Logic_Theft") == "c"
    assert vector_key(" d ") == "d"
    with pytest.raises(ConfigError):
        vector_key("zz")


def test_single_cell_and_unknown_vector():
    m = run_matrix(modes=["enhanced"], vectors=["a"])
    assert m.cells[("a", "enhanced")].verdict == BLOCKED
    with pytest.raises(ConfigError):
        run_matrix(vectors=["q"])
    with pytest.raises(ConfigError):
        run_matrix(modes=["turbo"], vectors=["a"])


def test_same_seed_same_evidence():
    a = tamper_io_memory("minimal", seed=4, cycles=CYCLES)
    b = tamper_io_memory("minimal", seed=4, cycles=CYCLES)
    assert a.verdict == b.verdict
    assert a.evidence_hash == b.evidence_hash


def test_mismatch_is_reported(monkeypatch):
    monkeypatch.setitem(EXPECTED, ("f", "enhanced"), BLOCKED)
    with pytest.raises(MatrixMismatch) as info:
        run_matrix(modes=["enhanced"], vectors=["f"])
    assert info.value.cells == [("f", "enhanced", SECURE_BOOT, BLOCKED)]


def test_full_matrix_render_and_write(tmp_path):
    m = run_matrix(modes=["baseline", "minimal", "enhanced"])
    assert not m.mismatches()
    for outcome in m.cells.values():
        if outcome.verdict == SUCCEEDED and outcome.vector in ("a", "b", "d"):
            assert outcome.evidence["divergence"]
        if outcome.verdict == SUCCEEDED and outcome.vector == "c":
            assert outcome.evidence["leaks"]
    text = render_matrix(m)
    lines = text.splitlines()
    assert [c.strip() for c in lines[0].split(" | ")[1:]] == ["Baseline", "Minimal", "Enhanced"]
    assert "blank = not protected" in text
    assert "Secure Boot" in text
    write_matrix(m, tmp_path / "out" / "matrix")
    data = json.loads((tmp_path / "out" / "matrix.json").read_text())
    assert data["match"] is True
    assert len(data["cells"]) == 18
    assert (tmp_path / "out" / "matrix.txt").read_text() == text
