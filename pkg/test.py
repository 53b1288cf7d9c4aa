#!/usr/bin/env python3
"""
Quick self-check for the stochastic CLF-CBF controller
"""

import sys
import os

# Add src to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

from diagnostics.self_check import run_all


def test_components():
    """Run the derivative, QP and relative-degree suites without any simulation."""

    print("🧪 Checking Stochastic CLF-CBF Components")
    print("=" * 50)

    results = run_all()
    for i, result in enumerate(results, 1):
        mark = "✅" if result.passed else "❌"
        print(f"{i}. {result.name}")
        print(f"   {mark} {result.detail}")

    # Dependencies used outside the self-checks
    print(f"{len(results) + 1}. Checking required dependencies...")
    try:
        import click
        import tqdm
        import yaml
        print("   ✅ All dependencies are available")
    except ImportError as e:
        print(f"   ❌ Missing dependency: {e}")
        return False

    if not all(r.passed for r in results):
        print("\n❌ Some checks failed.")
        return False

    print("\n🎉 All checks passed!")
    print("\nTo run the multi-obstacle ensemble, run:")
    print('python main.py ensemble --config configs/car2d-multi.yaml')
    return True


if __name__ == "__main__":
    success = test_components()
    sys.exit(0 if success else 1)
