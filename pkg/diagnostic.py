#!/usr/bin/env python
"""
Self-check for the digit CNN engine.
Checks dependencies, environment settings, the layer shape chain and every
layer gradient against finite differences.
"""
import importlib
import sys

import numpy as np

PACKAGES = ["numpy", "pandas", "pydantic", "dotenv"]
GRADIENT_TOLERANCE = 1e-4


def check_packages() -> bool:
    ok = True
    for pkg in PACKAGES:
        try:
            importlib.import_module(pkg)
            print(f"✅ {pkg}")
        except ImportError as e:
            print(f"❌ {pkg}: {e}")
            ok = False
    return ok


def check_environment() -> bool:
    from config import RuntimeSettings
    from errors import InvalidConfig

    try:
        settings = RuntimeSettings.from_env()
    except InvalidConfig as e:
        print(f"❌ {e}")
        return False
    print(f"✅ threads={settings.threads} log_level={settings.log_level} seed={settings.seed}")
    print(f"   data: {settings.data_path or 'not set (DIGIT_CNN_DATA)'}")
    return True


def check_shape_chain() -> bool:
    from model import build_paper_model, format_shape

    model = build_paper_model(seed=0)
    batch = np.zeros((2, 28, 28, 1), dtype=np.float32)
    try:
        probs = model.forward(batch)
    except Exception as e:
        print(f"❌ forward pass failed: {e}")
        return False
    for name, shape in model.shape_table():
        print(f"   {name:<14}{format_shape(shape)}")
    ok = probs.shape == (2, 10) and model.parameter_count() == 257162
    print(f"{'✅' if ok else '❌'} output {probs.shape}, {model.parameter_count():,} parameters")
    return ok


def check_gradients(seed: int = 0) -> bool:
    from gradcheck import layer_gradient_errors

    ok = True
    for path, err in layer_gradient_errors(seed).items():
        passed = err <= GRADIENT_TOLERANCE
        ok = ok and passed
        print(f"{'✅' if passed else '❌'} {path:<24} relative error {err:.2e}")
    return ok


def run_diagnostics() -> bool:
    sections = [
        ("CHECKING PACKAGES", check_packages),
        ("CHECKING ENVIRONMENT", check_environment),
        ("CHECKING LAYER SHAPE CHAIN", check_shape_chain),
        ("CHECKING GRADIENTS", check_gradients),
    ]
    results = []
    for title, check in sections:
        print(title)
        print("-" * 80)
        results.append(check())
        print()
    passed = all(results)
    print("=" * 80)
    print("✅ ALL CHECKS PASSED" if passed else "❌ SOME CHECKS FAILED")
    print("=" * 80)
    return passed


if __name__ == "__main__":
    sys.exit(0 if run_diagnostics() else 1)
