import json
import math
import os
import tempfile
import unittest

import pandas as pd

from src.chains import export_sequence
from src.constants import RECORDS_FILE, SEQUENCE_DIR
from src.exceptions import SchemaError
from src.markov import validate_stochastic
from src.summarization import cost_slopes, load_records, summarize, write_summary

TWO_STATE = validate_stochastic([[0.9, 0.2], [0.1, 0.8]])


def record(trial: int, sample: int, **overrides) -> dict:
    values = {
        "step": 1,
        "trial": trial,
        "sample": sample,
        "method": "uniform",
        "walk_calls": 10 * (trial + 1),
        "diffusion_calls": 4,
        "failed": False,
        "delta": 0.3,
        "n": 2,
    }
    values.update(overrides)
    return values


def write_records(directory: str, records: list[dict]) -> str:
    path = os.path.join(directory, RECORDS_FILE)
    with open(path, "w", encoding="utf-8") as handle:
        for item in records:
            handle.write(json.dumps(item) + "\n")
    return path


class TestLoadRecords(unittest.TestCase):
    """Tests for reading record files."""

    def test_no_records(self):
        """Empty inputs cannot be summarized."""
        with tempfile.TemporaryDirectory() as directory:
            empty = write_records(directory, [])
            for paths in [[], [empty], [directory]]:
                with self.subTest(paths=len(paths)), self.assertRaises(SchemaError):
                    load_records(paths)

    def test_schema_checks(self):
        """Missing keys and unknown methods are schema errors."""
        bad_records = [
            [{key: value for key, value in record(0, 0).items() if key != "walk_calls"}],
            [record(0, 0, method="teleport")],
        ]
        for records in bad_records:
            with self.subTest(records=records), tempfile.TemporaryDirectory() as directory:
                with self.assertRaises(SchemaError):
                    load_records([write_records(directory, records)])

    def test_concatenates_files(self):
        """Several record files load into one frame."""
        with tempfile.TemporaryDirectory() as first, tempfile.TemporaryDirectory() as second:
            df = load_records([write_records(first, [record(0, 0)]), write_records(second, [record(1, 1)])])
        self.assertEqual(len(df), 2)
        self.assertEqual(sorted(df["trial"]), [0, 1])


class TestSummarize(unittest.TestCase):
    """Tests for the summary document."""

    def test_summary_of_matching_samples(self):
        """Samples matching pi exactly give zero total variation."""
        with tempfile.TemporaryDirectory() as directory:
            export_sequence([TWO_STATE], [0.3], os.path.join(directory, SEQUENCE_DIR))
            write_records(directory, [record(0, 0), record(1, 0), record(2, 1, method="samples")])
            summary = summarize([directory])
        self.assertEqual((summary["records"], summary["trials"], summary["steps"]), (3, 3, 1))
        self.assertEqual(summary["method_counts"], {"uniform": 2, "samples": 1, "fallback": 0})
        self.assertEqual(summary["failure_rate"], 0.0)
        self.assertEqual(len(summary["tv"]), 1)
        self.assertAlmostEqual(summary["max_tv"], 0.0)
        self.assertTrue(summary["tv_within_threshold"])
        self.assertEqual(len(summary["costs"]), 1)
        self.assertEqual(summary["costs"][0]["median_walk_calls"], 20.0)
        self.assertGreater(summary["costs"][0]["classical_mixing_bound"], 0.0)

    def test_summary_without_manifest(self):
        """Without exported sequences the distance checks are left out."""
        with tempfile.TemporaryDirectory() as directory:
            write_records(directory, [record(0, 0, failed=True), record(1, 1)])
            summary = summarize([directory])
        self.assertEqual(summary["tv"], [])
        self.assertIsNone(summary["max_tv"])
        self.assertIsNone(summary["costs"][0]["classical_mixing_bound"])
        self.assertAlmostEqual(summary["failure_rate"], 0.5)

    def test_steps_without_sample(self):
        """A step whose forced preparation failed counts as failed but not as a sample."""
        with tempfile.TemporaryDirectory() as directory:
            export_sequence([TWO_STATE], [0.3], os.path.join(directory, SEQUENCE_DIR))
            records = [record(0, 0), record(1, 0), record(2, 1), record(3, None, method="fallback", failed=True)]
            write_records(directory, records)
            summary = summarize([directory])
        self.assertEqual(summary["records"], 4)
        self.assertAlmostEqual(summary["failure_rate"], 0.25)
        self.assertEqual(summary["method_counts"]["fallback"], 1)
        self.assertEqual(summary["tv"][0]["samples"], 3)
        self.assertAlmostEqual(summary["max_tv"], 0.0)

    def test_cost_slopes(self):
        """Costs proportional to sqrt(n) / delta give slopes 1/2 and -1."""
        rows = [
            {"n": n, "delta": delta, "median_walk_calls": math.sqrt(n) / delta}
            for n in [4, 16, 64]
            for delta in [0.01, 0.1]
        ]
        slopes = cost_slopes(pd.DataFrame(rows))
        self.assertEqual(len(slopes["vs_n"]), 2)
        self.assertEqual(len(slopes["vs_delta"]), 3)
        for fit in slopes["vs_n"]:
            self.assertAlmostEqual(fit["slope"], 0.5)
        for fit in slopes["vs_delta"]:
            self.assertAlmostEqual(fit["slope"], -1.0)

    def test_write_summary(self):
        """NaN values are written as null."""
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, "summary.json")
            write_summary({"bound": float("nan"), "count": 3}, path)
            with open(path, encoding="utf-8") as handle:
                self.assertEqual(json.load(handle), {"bound": None, "count": 3})


if __name__ == "__main__":
    unittest.main()
