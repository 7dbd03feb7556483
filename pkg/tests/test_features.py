import numpy as np
import pytest

from helpers import FIXTURES, check_golden, func, module
from inlineperf.features import (
    CALLSITE_FEATURE_NAMES,
    FUNCTION_FEATURE_NAMES,
    extract_callsite_features,
    extract_function_features,
    features_csv,
)
from inlineperf.generate import GenConfig, generate_program
from inlineperf.inline import enumerate_callsites, find_callsite
from inlineperf.ir import module_to_json


def test_function_feature_names_are_the_published_contract():
    assert FUNCTION_FEATURE_NAMES == (
        "InstructionPerBlock",
        "SuccessorPerBlock",
        "AvgNestedLoopLevel",
        "InstrPerLoop",
        "BlockWithMultipleSuccecorsPerLoop",
        "CallsNo",
        "IsLocal",
        "MaxLoopDepth",
        "MaxDomTreeLevel",
        "CallerHeight",
        "CallUsage",
        "IsRecursive",
        "NumCallsiteInLoop",
        "EntryBlockFreq",
        "MaxCallsiteBlockFreq",
        "RetCount",
        "FmulCount",
        "FdivCount",
        "FaddCount",
        "FsubCount",
    )


def test_callsite_feature_names_are_the_published_contract():
    assert CALLSITE_FEATURE_NAMES == (
        "CalleeBasicBlockCount",
        "CallSiteHeight",
        "NodeCount",
        "EdgeCount",
        "NrConstantParams",
        "CalleeUsers",
        "CallerUsers",
        "CallerBasicBlockCount",
        "CallerConditionallyExecutedBlocks",
        "CalleeConditionallyExecutedBlocks",
        "CalleeCostEstimate",
        "CallSiteBlockFreq",
        "CallSiteLoopLevel",
    )


def two_function_module():
    return module(
        func("main", [("b0", "call:leaf fadd ret", [])]),
        func("leaf", [("b0", "fadd ret", [])]),
    )


def test_caller_function_features():
    m = two_function_module()
    ff = extract_function_features(m, "main")
    assert ff.InstructionPerBlock == 3.0
    assert ff.SuccessorPerBlock == 0.0
    assert ff.AvgNestedLoopLevel == 0.0
    assert ff.InstrPerLoop == 0.0
    assert ff.BlockWithMultipleSuccecorsPerLoop == 0.0
    assert ff.CallsNo == 1.0
    assert ff.IsLocal == 0.0
    assert ff.MaxLoopDepth == 0.0
    assert ff.MaxDomTreeLevel == 1.0
    assert ff.CallerHeight == 1.0
    assert ff.CallUsage == 0.0
    assert ff.IsRecursive == 0.0
    assert ff.NumCallsiteInLoop == 0.0
    assert ff.EntryBlockFreq == 1.0
    assert ff.MaxCallsiteBlockFreq == 1.0
    assert ff.RetCount == 1.0 and ff.FaddCount == 1.0
    assert ff.FmulCount == ff.FdivCount == ff.FsubCount == 0.0


def test_leaf_function_features():
    m = two_function_module()
    ff = extract_function_features(m, "leaf")
    assert ff.InstructionPerBlock == 2.0
    assert ff.CallerHeight == 0.0
    assert ff.CallUsage == 1.0
    assert ff.CallsNo == 0.0
    assert ff.MaxCallsiteBlockFreq == 0.0  # no call sites at all


def test_trivial_callsite_features():
    m = two_function_module()
    cf = extract_callsite_features(m, find_callsite(m, 0))
    assert cf.CalleeBasicBlockCount == 1.0
    assert cf.CallSiteHeight == 1.0
    assert cf.NodeCount == 2.0
    assert cf.EdgeCount == 1.0
    assert cf.NrConstantParams == 0.0
    assert cf.CalleeUsers == 1.0
    assert cf.CallerUsers == 0.0
    assert cf.CallerBasicBlockCount == 1.0
    assert cf.CallerConditionallyExecutedBlocks == 0.0
    assert cf.CalleeConditionallyExecutedBlocks == 0.0
    assert cf.CalleeCostEstimate == 3.0
    assert cf.CallSiteBlockFreq == 1.0
    assert cf.CallSiteLoopLevel == 0.0


def test_recursive_flag_set():
    m = module(func("f", [("b0", "call:f fadd ret", [])]))
    ff = extract_function_features(m, "f")
    assert ff.IsRecursive == 1.0
    assert ff.CallUsage == 1.0


def caller_with_loop(call_in_loop):
    body_text = "fmul call:leaf" if call_in_loop else "fmul"
    entry_text = "fadd" if call_in_loop else "fadd call:leaf"
    return module(
        func(
            "main",
            [
                ("b0", entry_text, ["h"]),
                ("h", "fsub", ["body", "x"]),
                ("body", body_text, ["h"]),
                ("x", "generic ret", []),
            ],
        ),
        func("leaf", [("b0", "fadd ret", [])]),
    )


def test_moving_call_into_loop_changes_only_location_features():
    outside = caller_with_loop(call_in_loop=False)
    inside = caller_with_loop(call_in_loop=True)
    a = extract_callsite_features(outside, find_callsite(outside, 0)).to_array()
    b = extract_callsite_features(inside, find_callsite(inside, 0)).to_array()
    names = np.array(CALLSITE_FEATURE_NAMES)
    changed = names[a != b].tolist()
    assert changed == ["CallSiteBlockFreq", "CallSiteLoopLevel"]
    idx = {n: i for i, n in enumerate(CALLSITE_FEATURE_NAMES)}
    assert a[idx["CallSiteBlockFreq"]] == 1.0 and a[idx["CallSiteLoopLevel"]] == 0.0
    assert b[idx["CallSiteBlockFreq"]] == 8.0 and b[idx["CallSiteLoopLevel"]] == 1.0


def test_function_features_see_the_loop():
    m = caller_with_loop(call_in_loop=True)
    ff = extract_function_features(m, "main")
    assert ff.MaxLoopDepth == 1.0
    assert ff.AvgNestedLoopLevel == 1.0
    assert ff.NumCallsiteInLoop == 1.0
    assert ff.MaxCallsiteBlockFreq == 8.0
    assert ff.InstrPerLoop == 3.0  # h holds 1 instr, body holds 2
    assert ff.BlockWithMultipleSuccecorsPerLoop == 1.0


def test_conditionally_executed_blocks_count_diamond_arms():
    callee = func(
        "callee",
        [
            ("b0", "fadd", ["b1", "b2"]),
            ("b1", "fmul", ["b3"]),
            ("b2", "fsub", ["b3"]),
            ("b3", "fadd ret", []),
        ],
    )
    m = module(func("main", [("b0", "call:callee fadd ret", [])]), callee)
    cf = extract_callsite_features(m, find_callsite(m, 0))
    assert cf.CalleeConditionallyExecutedBlocks == 2.0
    assert cf.CalleeBasicBlockCount == 4.0


def test_features_csv_roundtrip_shape():
    m = two_function_module()
    rows = [extract_function_features(m, n).to_array() for n in m.functions]
    text = features_csv(rows, FUNCTION_FEATURE_NAMES)
    lines = text.strip().split("\n")
    assert lines[0] == ",".join(FUNCTION_FEATURE_NAMES)
    assert len(lines) == 3
    parsed = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    assert np.array_equal(parsed[0], rows[0])


def test_features_csv_rejects_bad_width():
    with pytest.raises(ValueError):
        features_csv([np.zeros(3)], FUNCTION_FEATURE_NAMES)


def test_feature_vectors_finite_on_generator_fuzz():
    # Invariant sweep over 10^4 generated modules, kept small for speed.
    checked = 0
    for seed in range(10_000):
        cfg = GenConfig(
            seed=seed,
            n_functions=1 + seed % 3,
            blocks_per_function=(1, 2),
            instrs_per_block=(1, 2),
            loop_probability=(seed % 4) * 0.25,
            callsite_density=(seed % 5) * 0.2,
            recursion_probability=0.3 if seed % 11 == 0 else 0.0,
            max_loop_depth=2,
            max_nesting=2,
        )
        m = generate_program(cfg)
        for name in m.functions:
            arr = extract_function_features(m, name).to_array()
            assert arr.shape == (20,)
            assert np.all(np.isfinite(arr)) and np.all(arr >= 0.0), (seed, name)
        for cs in enumerate_callsites(m):
            arr = extract_callsite_features(m, cs).to_array()
            assert arr.shape == (13,)
            assert np.all(np.isfinite(arr)) and np.all(arr >= 0.0), (seed, cs.id)
            checked += 1
    assert checked > 1000


def test_flag_features_are_binary_and_counts_integral():
    for seed in range(30):
        m = generate_program(GenConfig(seed=seed, n_functions=3))
        for name in m.functions:
            ff = extract_function_features(m, name)
            assert ff.IsLocal in (0.0, 1.0)
            assert ff.IsRecursive in (0.0, 1.0)
            for v in (ff.CallsNo, ff.RetCount, ff.FmulCount, ff.FdivCount,
                      ff.FaddCount, ff.FsubCount, ff.CallUsage, ff.NumCallsiteInLoop):
                assert v == int(v)


def test_function_features_golden():
    m = generate_program(GenConfig(seed=7, n_functions=5))
    rows = [extract_function_features(m, n).to_array() for n in m.functions]
    check_golden(FIXTURES / "golden_function_features.csv", features_csv(rows, FUNCTION_FEATURE_NAMES))


def test_callsite_features_golden():
    m = generate_program(GenConfig(seed=7, n_functions=5))
    rows = [extract_callsite_features(m, cs).to_array() for cs in enumerate_callsites(m)]
    check_golden(FIXTURES / "golden_callsite_features.csv", features_csv(rows, CALLSITE_FEATURE_NAMES))
