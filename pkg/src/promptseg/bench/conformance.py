"""Protocol conformance suite for external segmenter bridges.

Exercises the full wire grammar against a running adapter and, for the
echo-thresholder reference model, verifies that probabilities and Dice
computed through the bridge match the in-process equivalents.
"""
from __future__ import annotations

import json
import shlex
import subprocess
from dataclasses import dataclass

import numpy as np

from ..core.synth import generate_synthetic_case
from ..core.types import Image2D, PromptPoint, PromptSet, SyntheticSpec
from ..errors import BridgeError
from ..metrics import dice
from ..segmenter.bridge import PROTOCOL_VERSION, BridgeClient
from ..segmenter.core import ProbabilityMap, binarize


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def echo_probs(image: Image2D) -> ProbabilityMap:
    """The reference echo-thresholder: probabilities are the image
    intensities, squeezed through float32 like the wire format."""
    return ProbabilityMap(np.clip(image.intensities.astype("<f4").astype(np.float64), 0.0, 1.0))


def contract_checks(predict_fn, image: Image2D, prompts: PromptSet) -> list[CheckResult]:
    """Backend-independent segmenter contract: determinism for fixed inputs,
    matching dimensions, probabilities within [0, 1]. The same checks run
    against the built-in backend and any bridge."""
    results = []
    first = predict_fn(image, prompts)
    second = predict_fn(image, prompts)
    results.append(CheckResult(
        "contract_deterministic", bool(np.array_equal(first.probs, second.probs))
    ))
    results.append(CheckResult(
        "contract_dimensions", first.probs.shape == image.intensities.shape,
        f"{first.probs.shape} vs image {image.intensities.shape}",
    ))
    ok_range = 0.0 <= first.probs.min() and first.probs.max() <= 1.0
    results.append(CheckResult("contract_probability_bounds", bool(ok_range)))
    return results


def _fuzz_lines(rng: np.random.Generator, count: int) -> list[str]:
    # note: no hello variants here; a bad-version hello is *supposed* to be
    # fatal and is covered by the dedicated version-mismatch check
    pool = [
        "",
        "{",
        "not json at all",
        '{"op":"predict"}',
        '{"op":"set_image","id":1,"width":-3}',
        '{"op":42}',
        '[1,2,3]',
        '{"op":"predict","image_id":"nope","prompts":"x"}',
        '{"op":"set_image","id":"z","width":4,"height":4,"encoding":"f32le","data":"!!!"}',
    ]
    lines = []
    for _ in range(count):
        if rng.random() < 0.5:
            lines.append(pool[int(rng.integers(len(pool)))])
        else:
            junk = rng.integers(32, 127, size=int(rng.integers(1, 40)))
            lines.append("".join(chr(c) for c in junk))
    return lines


def run_conformance(bridge_command: str, seed: int = 2024) -> list[CheckResult]:
    """Run every conformance check; each is isolated so a failure reports a
    detail string instead of aborting the suite."""
    results: list[CheckResult] = []
    rng = np.random.default_rng(seed)
    case = generate_synthetic_case(SyntheticSpec(width=32, height=32, diameter_mm=(12, 12),
                                                 blob_count=(1, 1), noise=0.01, seed=seed))
    image = case.image
    prompts = PromptSet((PromptPoint(16, 16),))

    client = None
    try:
        client = BridgeClient(bridge_command)
        results.append(CheckResult("handshake", True, f"peer {client.peer_name!r}"))
    except BridgeError as exc:
        results.append(CheckResult("handshake", False, str(exc)))
        return results

    try:
        # image upload + byte-accurate round trip through the echo model
        bridged = client.predict(image, PromptSet())
        expected = echo_probs(image)
        same = np.array_equal(bridged.probs.astype("<f4"), expected.probs.astype("<f4"))
        results.append(CheckResult("image_roundtrip", same,
                                   "" if same else "probs differ from echoed intensities"))

        bridged_prompted = client.predict(image, prompts)
        ok_shape = bridged_prompted.probs.shape == image.intensities.shape
        results.append(CheckResult("predict_grammar", ok_shape,
                                   "" if ok_shape else "bad probs shape"))

        a = client.predict(image, prompts, stochastic=True, member_seed=7)
        b = client.predict(image, prompts, stochastic=True, member_seed=7)
        det = np.array_equal(a.probs, b.probs)
        results.append(CheckResult("stochastic_determinism", det,
                                   "" if det else "same member_seed gave different maps"))

        reply = client.raw_request(json.dumps({
            "op": "predict", "image_id": "no-such-image", "prompts": [],
            "stochastic": False, "member_seed": 0,
        }))
        ok = reply.get("op") == "error" and "no-such-image" in str(reply.get("message", ""))
        results.append(CheckResult("unknown_image_error", ok, json.dumps(reply)))

        reply = client.raw_request('{"op":"definitely_not_an_op"}')
        ok = reply.get("op") == "error"
        results.append(CheckResult("unknown_op_error", ok, json.dumps(reply)))

        reply = client.raw_request("this is not json")
        ok = reply.get("op") == "error"
        results.append(CheckResult("malformed_line_error", ok, json.dumps(reply)))

        survived = True
        detail = ""
        for line in _fuzz_lines(rng, 50):
            reply = client.raw_request(line)
            if reply.get("op") != "error":
                survived = False
                detail = f"non-error reply to fuzz line {line!r}: {reply}"
                break
        results.append(CheckResult("fuzz_resilience", survived, detail))

        # session must still be usable after the abuse above
        after = client.predict(image, prompts)
        alive = after.probs.shape == image.intensities.shape
        results.append(CheckResult("session_survives_fuzz", alive, ""))

        d_bridge = dice(binarize(client.predict(image, prompts)), case.truth)
        d_local = dice(binarize(echo_probs(image)), case.truth)
        ok = abs(d_bridge - d_local) <= 1e-6
        results.append(CheckResult("dice_parity", ok,
                                   f"bridge {d_bridge!r} vs local {d_local!r}"))

        results.extend(contract_checks(client.predict, image, prompts))
    except BridgeError as exc:
        results.append(CheckResult("session", False, str(exc)))
    finally:
        if client is not None:
            client.close()

    results.append(_version_mismatch_check(bridge_command))
    return results


def _version_mismatch_check(bridge_command: str) -> CheckResult:
    """A wrong hello version must produce an error reply and exit code 2."""
    try:
        proc = subprocess.Popen(shlex.split(bridge_command), stdin=subprocess.PIPE,
                                stdout=subprocess.PIPE, text=True)
        out, _ = proc.communicate(
            json.dumps({"op": "hello", "version": PROTOCOL_VERSION + 1}) + "\n", timeout=30
        )
        first = out.splitlines()[0] if out.strip() else "{}"
        reply = json.loads(first)
        ok = reply.get("op") == "error" and proc.returncode == 2
        return CheckResult("version_mismatch_fatal", ok,
                           f"reply {reply}, exit {proc.returncode}")
    except (OSError, subprocess.TimeoutExpired, json.JSONDecodeError, IndexError) as exc:
        return CheckResult("version_mismatch_fatal", False, str(exc))
