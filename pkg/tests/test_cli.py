import json
import os
import pathlib
import queue
import re
import subprocess
import sys
import tempfile
import threading
import time

import pytest

from plbkex.cli import main

ROOT = pathlib.Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"


def test_run_honest(capsys):
    assert main(["run", str(SCENARIOS / "honest.cfg"), "--runs", "20"]) == 0
    out, err = capsys.readouterr()
    rows = [json.loads(line) for line in out.splitlines()]
    assert len(rows) == 20 and all(r["outcome_initiator"] == r["outcome_responder"] == "Accepted" for r in rows)
    assert "both accepted:            20/20" in err


def test_run_mitm_has_no_false_acceptance(capsys):
    assert main(["run", "--scenario", str(SCENARIOS / "mitm.cfg"), "--summary"]) == 0
    out, _ = capsys.readouterr()
    assert "soundness violations:     0" in out and "MultipleEvents" in out


def test_run_out_file_and_summary(tmp_path, capsys):
    out_path = tmp_path / "r.jsonl"
    assert main(["run", str(SCENARIOS / "spam.cfg"), "--runs", "7", "--out", str(out_path)]) == 0
    out, _ = capsys.readouterr()
    assert len(out_path.read_text().splitlines()) == 7
    assert "initiator:MultipleEvents" in out


def test_soundness_violation_exit_code(capsys):
    assert main(["run", str(SCENARIOS / "mitm_early_slow_user.cfg"), "--summary"]) == 3


def test_malformed_config(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[scenario]\nvariant = oob\nruns = many\n")
    assert main(["run", str(bad)]) == 2
    _, err = capsys.readouterr()
    assert re.search(r"bad\.cfg: line 3: bad value for 'runs'", err)


def test_missing_config_and_bad_flags(capsys):
    assert main(["run", "/nonexistent.cfg"]) == 2
    assert main(["run"]) == 2
    assert main(["run", str(SCENARIOS / "honest.cfg"), "--runs", "0"]) == 2


def test_output_is_byte_stable():
    cmd = [sys.executable, "-m", "plbkex.cli", "run", str(SCENARIOS / "mitm_natural.cfg"), "--seed", "42", "--runs", "25"]
    a = subprocess.run(cmd, capture_output=True, check=True)
    b = subprocess.run(cmd, capture_output=True, check=True)
    assert a.stdout == b.stdout and a.stderr == b.stderr and a.stdout


def test_selftest_passes(capsys):
    assert main(["selftest", "--seeds", "10"]) == 0
    out, _ = capsys.readouterr()
    assert out.count("PASS") == 3


def test_selftest_catches_injected_fault(capsys):
    assert main(["selftest", "--seeds", "5", "--inject-fault"]) == 1
    out, _ = capsys.readouterr()
    assert "FAIL  merkle range completeness" in out


# -- interactive pairing demo -----------------------------------------------------


class Terminal:
    def __init__(self, *args):
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "plbkex.cli", "pair", *args],
            stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True, bufsize=1,
        )
        self.lines: queue.Queue = queue.Queue()
        threading.Thread(target=self._pump, daemon=True).start()

    def _pump(self):
        for line in self.proc.stdout:
            self.lines.put(line.rstrip("\n"))

    def expect(self, pattern, timeout=20.0) -> str:
        end = time.monotonic() + timeout
        seen = []
        while time.monotonic() < end:
            try:
                line = self.lines.get(timeout=0.1)
            except queue.Empty:
                continue
            seen.append(line)
            if re.search(pattern, line):
                return line
        raise AssertionError(f"no {pattern!r} in {seen}")

    def type(self, text):
        self.proc.stdin.write(text)
        self.proc.stdin.flush()

    def finish(self, timeout=30):
        self.proc.stdin.close()
        return self.proc.wait(timeout)


@pytest.fixture
def socket_path():
    with tempfile.TemporaryDirectory() as d:
        yield os.path.join(d, "ledger.sock")


def _start_pair(path):
    alice = Terminal("initiator", "--ledger", path, "--round-ms", "50")
    alice.expect("waiting for the responder")
    bob = Terminal("responder", "--ledger", path)
    code = alice.expect("context code").split()[-1]
    assert bob.expect("context code").split()[-1] == code
    return alice, bob, code.replace("-", "")


@pytest.mark.parametrize("answer,status,final", [("y", 0, "pairing confirmed"), ("n", 1, r"ABORTED\(UserRejected\)")])
def test_pair_demo(socket_path, answer, status, final):
    alice, bob, _ = _start_pair(socket_path)
    alice.type("\n")
    bob.type("\n")
    fa = alice.expect("ACCEPTED").split("fingerprint")[1]
    fb = bob.expect("ACCEPTED").split("fingerprint")[1]
    assert fa == fb
    alice.type(answer + "\n")
    bob.type(answer + "\n")
    alice.expect(final)
    bob.expect(final)
    assert alice.finish() == status and bob.finish() == status


def test_pair_demo_spammer(socket_path):
    alice, bob, code = _start_pair(socket_path)
    spam = subprocess.run([sys.executable, "-m", "plbkex.cli", "pair", "spammer", "--ledger", socket_path,
                           "--code", code, "--count", "2"], capture_output=True, text=True, timeout=30)
    assert spam.returncode == 0
    alice.type("\n")
    bob.type("\n")
    alice.expect(r"ABORTED\(MultipleEvents\)")
    bob.expect(r"ABORTED\(MultipleEvents\)")
    assert alice.finish() == 1 and bob.finish() == 1


def test_pair_setup_errors(socket_path):
    r = subprocess.run([sys.executable, "-m", "plbkex.cli", "pair", "responder", "--ledger", socket_path],
                       capture_output=True, text=True, timeout=30)
    assert r.returncode == 2 and "cannot reach ledger" in r.stderr
    pathlib.Path(socket_path).write_text("")
    r = subprocess.run([sys.executable, "-m", "plbkex.cli", "pair", "initiator", "--ledger", socket_path],
                       capture_output=True, text=True, timeout=30)
    assert r.returncode == 2 and "already exists" in r.stderr
