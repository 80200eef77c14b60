"""Command-line behavior: line discipline, exit codes, determinism."""

import math
import sys

import numpy as np
import pytest

from abe.cli import run
from abe.model import load_scenario, save_scenario, sequence_score
from abe.testing import (
    make_agreement_scenario,
    make_chain_model,
    make_never_agreeing_pair,
)

from conftest import MARKER, scenario


@pytest.fixture
def chain_paths(tmp_path):
    m1 = make_chain_model(b" ab", [b" ab"], identity="m1")
    m2 = make_chain_model(b" ab", [b" a", b"b"], identity="m2", marker=MARKER)
    p1, p2 = tmp_path / "m1.json", tmp_path / "m2.json"
    save_scenario(m1, str(p1))
    save_scenario(m2, str(p2))
    return str(p1), str(p2)


def write_lines(path, lines):
    path.write_bytes(b"".join(line + b"\n" for line in lines))


class TestEnsembleCommand:
    def test_defaults_run_and_strip_leading_space(self, tmp_path, chain_paths):
        inp, out = tmp_path / "in.txt", tmp_path / "out.txt"
        write_lines(inp, [b"x"])
        code = run(
            [
                "ensemble",
                "--model", f"scenario:{chain_paths[0]}",
                "--model", f"scenario:{chain_paths[1]}",
                "--beam", "5",
                "--max-len", "256",
                "--input", str(inp),
                "--output", str(out),
            ]
        )
        assert code == 0
        assert out.read_bytes() == b"ab\n"

    def test_one_output_line_per_input_line(self, tmp_path, chain_paths):
        inp, out = tmp_path / "in.txt", tmp_path / "out.txt"
        write_lines(inp, [b"one", b"two", b"three"])
        code = run(
            ["ensemble", "--model", f"scenario:{chain_paths[0]}",
             "--model", f"scenario:{chain_paths[1]}",
             "--input", str(inp), "--output", str(out)]
        )
        assert code == 0
        assert out.read_bytes().count(b"\n") == 3

    def test_disjoint_pair_prints_empty_line_and_exits_zero(self, tmp_path):
        m1, m2 = make_never_agreeing_pair()
        p1, p2 = tmp_path / "d1.json", tmp_path / "d2.json"
        save_scenario(m1, str(p1))
        save_scenario(m2, str(p2))
        inp, out = tmp_path / "in.txt", tmp_path / "out.txt"
        write_lines(inp, [b"x"])
        code = run(
            ["ensemble", "--model", f"scenario:{p1}", "--model", f"scenario:{p2}",
             "--max-len", "4", "--input", str(inp), "--output", str(out)]
        )
        assert code == 0
        assert out.read_bytes() == b"\n"

    def test_runs_are_byte_identical(self, tmp_path, rng):
        sc = make_agreement_scenario(rng, n_models=2, beam=5)
        paths = []
        for i, m in enumerate(sc.models):
            p = tmp_path / f"m{i}.json"
            save_scenario(m, str(p))
            paths.append(str(p))
        inp = tmp_path / "in.txt"
        write_lines(inp, [b"a", b"b"])
        outs = []
        for trial in range(2):
            out = tmp_path / f"out{trial}.txt"
            code = run(
                ["ensemble", "--model", f"scenario:{paths[0]}",
                 "--model", f"scenario:{paths[1]}", "--max-len", "8",
                 "--pop-cap", "0",
                 "--input", str(inp), "--output", str(out)]
            )
            assert code == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_weights_are_normalized(self, tmp_path, chain_paths):
        inp, out1, out2 = tmp_path / "in.txt", tmp_path / "o1.txt", tmp_path / "o2.txt"
        write_lines(inp, [b"x"])
        args = ["ensemble", "--model", f"scenario:{chain_paths[0]}",
                "--model", f"scenario:{chain_paths[1]}", "--input", str(inp)]
        assert run(args + ["--weights", "2,2", "--output", str(out1)]) == 0
        assert run(args + ["--weights", "0.5,0.5", "--output", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()


class TestOtherDecodeCommands:
    def test_decode_single_model(self, tmp_path, chain_paths):
        inp, out = tmp_path / "in.txt", tmp_path / "out.txt"
        write_lines(inp, [b"x"])
        code = run(
            ["decode", "--model", f"scenario:{chain_paths[0]}",
             "--input", str(inp), "--output", str(out)]
        )
        assert code == 0
        assert out.read_bytes() == b"ab\n"

    def test_interpolate_same_vocab(self, tmp_path):
        m = scenario(
            ["a", "b"],
            {(): {"a": 0.6, "b": 0.4}, (0,): {"</s>": 1.0}, (1,): {"</s>": 1.0}},
            default={"</s>": 1.0},
        )
        p1, p2 = tmp_path / "i1.json", tmp_path / "i2.json"
        save_scenario(m, str(p1))
        save_scenario(m, str(p2))
        inp, out = tmp_path / "in.txt", tmp_path / "out.txt"
        write_lines(inp, [b"x"])
        code = run(
            ["interpolate", "--model", f"scenario:{p1}", "--model", f"scenario:{p2}",
             "--max-len", "4", "--input", str(inp), "--output", str(out)]
        )
        assert code == 0
        assert out.read_bytes() == b"a\n"

    def test_sample_requires_seed(self, tmp_path, chain_paths):
        inp = tmp_path / "in.txt"
        write_lines(inp, [b"x"])
        code = run(
            ["sample", "--model", f"scenario:{chain_paths[0]}",
             "--model", f"scenario:{chain_paths[1]}", "--input", str(inp)]
        )
        assert code == 1

    def test_sample_deterministic_with_seed(self, tmp_path, chain_paths):
        inp = tmp_path / "in.txt"
        write_lines(inp, [b"x"])
        outs = []
        for trial in range(2):
            out = tmp_path / f"s{trial}.txt"
            code = run(
                ["sample", "--model", f"scenario:{chain_paths[0]}",
                 "--model", f"scenario:{chain_paths[1]}", "--seed", "11",
                 "--max-len", "8", "--input", str(inp), "--output", str(out)]
            )
            assert code == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1] == b"ab\n"


class TestRankCommand:
    def test_scores_and_argmax_per_model(self, tmp_path):
        m = scenario(
            [" a", " b"],
            {
                (): {" a": 0.9, " b": 0.1},
                (0,): {"</s>": 1.0},
                (1,): {"</s>": 1.0},
            },
            default={"</s>": 1.0},
            identity="ranker",
        )
        path = tmp_path / "m.json"
        save_scenario(m, str(path))
        inp, out = tmp_path / "cands.txt", tmp_path / "rank.txt"
        # Candidates "a" and "b"; the model prefers "a" 0.9 to 0.1.
        write_lines(inp, [b"b", b"a"])
        code = run(
            ["rank", "--model", f"scenario:{path}",
             "--input", str(inp), "--output", str(out)]
        )
        assert code == 0
        line = out.read_text().strip()
        identity, scores_csv, best = line.split("\t")
        scores = [float(s) for s in scores_csv.split(",")]
        assert best == "best=1"
        # Independent recomputation through the library.
        model = load_scenario(str(path))
        expected = [
            sequence_score(model, model.vocabulary.tokenize_greedy(b" " + c) + [2])
            for c in (b"b", b"a")
        ]
        assert scores == pytest.approx(expected, abs=1e-9)
        assert int(np.argmax(expected)) == 1


class TestOracleCheckCommand:
    def test_small_run_exits_zero(self, capsys):
        assert run(["oracle-check", "--trials", "10", "--seed", "7"]) == 0
        assert "10/10 matched" in capsys.readouterr().out


class TestExitCodes:
    def test_unknown_model_spec_is_usage(self, tmp_path):
        assert run(["ensemble", "--model", "magic:beans"]) == 1

    def test_negative_weights_are_usage(self, tmp_path, chain_paths):
        inp = tmp_path / "in.txt"
        write_lines(inp, [b"x"])
        code = run(
            ["ensemble", "--model", f"scenario:{chain_paths[0]}",
             "--model", f"scenario:{chain_paths[1]}",
             "--weights", "1,-1", "--input", str(inp)]
        )
        assert code == 1

    def test_missing_scenario_file_is_model_failure(self):
        assert run(["ensemble", "--model", "scenario:/nonexistent.json"]) == 2

    def test_decode_takes_exactly_one_model(self, chain_paths, tmp_path):
        inp = tmp_path / "in.txt"
        write_lines(inp, [b"x"])
        code = run(
            ["decode", "--model", f"scenario:{chain_paths[0]}",
             "--model", f"scenario:{chain_paths[1]}", "--input", str(inp)]
        )
        assert code == 1

    def test_missing_subcommand_is_usage(self):
        assert run([]) == 1
