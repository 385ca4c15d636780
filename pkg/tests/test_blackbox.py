import math
import sys

import numpy as np
import pytest

from gpyield.estimator import EstimatorSettings, _HfSession
from gpyield.oracle import (
    BlackboxEndpoint,
    BlackboxOracle,
    BlackboxProcessError,
    BlackboxProtocolError,
    BlackboxTimeoutError,
    EvalCounters,
    FrequencyGrid,
    WaveguideConfig,
    waveguide_s11,
)

MEAN = np.array([10.36, 4.76, 0.58, 0.64])


def python_stub(body: str) -> tuple[str, ...]:
    return (sys.executable, "-c", body)


ECHO_CONSTANT = python_stub(
    """
import json, sys
for line in sys.stdin:
    req = json.loads(line)
    n = len(req["freq_rad_s"])
    print(json.dumps({"id": req["id"], "s_real": [0.01] * n, "s_imag": [0.0] * n}), flush=True)
"""
)


@pytest.fixture(scope="module")
def grid():
    return FrequencyGrid.equidistant((2 * math.pi * 6.5e9, 2 * math.pi * 7.5e9), 11)


class TestProtocolRoundTrip:
    def test_echo_stub_constant_sweep(self, grid):
        with BlackboxOracle(BlackboxEndpoint(command=ECHO_CONSTANT)) as oracle:
            values = oracle.evaluate(MEAN, grid.points)
        np.testing.assert_allclose(values, np.full((1, 11), 0.01 + 0.0j))

    def test_self_hosted_waveguide_matches_in_process(self, grid, rng):
        command = (sys.executable, "-m", "gpyield.blackbox_worker", "--width-mm", "30", "--length-mm", "30")
        pts = MEAN + rng.uniform(-1, 1, size=(5, 4)) * np.array([2, 1.5, 0.25, 0.25])
        expected = waveguide_s11(WaveguideConfig(), pts, grid.points)
        with BlackboxOracle(BlackboxEndpoint(command=command)) as oracle:
            got = oracle.evaluate(pts, grid.points)
        assert np.max(np.abs(got - expected)) < 1e-12

    def test_sequential_ids_over_one_child(self, grid):
        with BlackboxOracle(BlackboxEndpoint(command=ECHO_CONSTANT)) as oracle:
            for _ in range(4):
                values = oracle.evaluate(MEAN, grid.points[:2])
                assert values.shape == (1, 2)


class TestProtocolErrors:
    def test_malformed_response_is_protocol_error(self, grid):
        stub = python_stub(
            """
import sys
for line in sys.stdin:
    print("this is not json", flush=True)
"""
        )
        with BlackboxOracle(BlackboxEndpoint(command=stub)) as oracle:
            with pytest.raises(BlackboxProtocolError, match="non-JSON"):
                oracle.evaluate(MEAN, grid.points)

    def test_id_mismatch_is_protocol_error(self, grid):
        stub = python_stub(
            """
import json, sys
for line in sys.stdin:
    req = json.loads(line)
    n = len(req["freq_rad_s"])
    print(json.dumps({"id": 999, "s_real": [0.0] * n, "s_imag": [0.0] * n}), flush=True)
"""
        )
        with BlackboxOracle(BlackboxEndpoint(command=stub)) as oracle:
            with pytest.raises(BlackboxProtocolError, match="id mismatch"):
                oracle.evaluate(MEAN, grid.points)

    def test_wrong_length_is_protocol_error(self, grid):
        stub = python_stub(
            """
import json, sys
for line in sys.stdin:
    req = json.loads(line)
    print(json.dumps({"id": req["id"], "s_real": [0.0], "s_imag": [0.0]}), flush=True)
"""
        )
        with BlackboxOracle(BlackboxEndpoint(command=stub)) as oracle:
            with pytest.raises(BlackboxProtocolError, match="entries"):
                oracle.evaluate(MEAN, grid.points)

    def test_dead_child_is_process_error_and_counters_untouched(self, grid):
        stub = python_stub("import sys; sys.exit(3)")
        counters = EvalCounters(batch_size=1)
        oracle = BlackboxOracle(BlackboxEndpoint(command=stub))
        session = _HfSession(oracle, grid, counters)
        with oracle:
            with pytest.raises(BlackboxProcessError):
                session.eval_point(MEAN, "online")
        assert counters.hf_total == 0

    def test_timeout_is_distinct(self, grid):
        stub = python_stub(
            """
import sys, time
for line in sys.stdin:
    time.sleep(30)
"""
        )
        with BlackboxOracle(BlackboxEndpoint(command=stub, timeout_s=0.5)) as oracle:
            with pytest.raises(BlackboxTimeoutError, match="0.5"):
                oracle.evaluate(MEAN, grid.points)

    def test_unstartable_command_is_process_error(self, grid):
        oracle = BlackboxOracle(
            BlackboxEndpoint(command=("/nonexistent/solver-binary",))
        )
        with pytest.raises(BlackboxProcessError, match="failed to start"):
            oracle.evaluate(MEAN, grid.points)

    def test_endpoint_validation(self):
        with pytest.raises(ValueError, match="command"):
            BlackboxEndpoint(command=())
        with pytest.raises(ValueError, match="timeout"):
            BlackboxEndpoint(command=("x",), timeout_s=0.0)


class TestOneShotEval:
    def test_blackbox_eval_returns_sample(self, grid):
        from gpyield.oracle import SParamSample, blackbox_eval

        sample = blackbox_eval(BlackboxEndpoint(command=ECHO_CONSTANT), MEAN, grid)
        assert isinstance(sample, SParamSample)
        np.testing.assert_allclose(sample.values, 0.01 + 0.0j)
        np.testing.assert_allclose(sample.magnitude_db(), -40.0)


class TestCallCounting:
    def test_one_call_per_point_covers_all_frequencies(self, grid):
        counters = EvalCounters(batch_size=1)
        with BlackboxOracle(BlackboxEndpoint(command=ECHO_CONSTANT)) as oracle:
            session = _HfSession(oracle, grid, counters)
            session.eval_frequency(MEAN, 0, "online")
            session.eval_frequency(MEAN, 7, "online")  # served from the cached sweep
            session.eval_point(MEAN, "online")
        assert counters.hf_online == 1

    def test_estimator_settings_reject_bad_workers(self):
        with pytest.raises(ValueError, match="workers"):
            EstimatorSettings(workers=0)
