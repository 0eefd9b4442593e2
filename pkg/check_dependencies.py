#!/usr/bin/env python3
"""
Check that the stemdiff dependencies are importable and report the
compute device training will use.
"""

import sys

REQUIRED = [
    ("numpy", "numpy"),
    ("torch", "torch"),
    ("librosa", "librosa"),
    ("soundfile", "soundfile"),
    ("tqdm", "tqdm"),
]
OPTIONAL = [("pytest", "pytest"), ("scipy", "scipy")]


def check_dependency(package_name, import_name):
    """Return the imported module, or None if it is missing."""
    try:
        module = __import__(import_name)
    except ImportError:
        print(f"❌ {package_name} - NOT INSTALLED")
        return None
    print(f"✅ {package_name} {getattr(module, '__version__', '')} - OK")
    return module


def report_backends(modules):
    torch = modules.get("torch")
    if torch is not None:
        device = "cuda" if torch.cuda.is_available() else "cpu"
        print(f"   torch device: {device}")
    soundfile = modules.get("soundfile")
    if soundfile is not None:
        print(f"   libsndfile: {soundfile.__libsndfile_version__}")


def main():
    print("=== stemdiff Dependency Check ===\n")
    modules = {name: check_dependency(name, imp) for name, imp in REQUIRED}
    for name, imp in OPTIONAL:
        check_dependency(name, imp)
    report_backends(modules)

    print()
    if all(modules.values()):
        print("🎉 All dependencies are installed!")
        print("You can now run: ./run_demo.sh")
        return 0
    print("❗ Missing dependencies. Install them from requirements.txt:")
    print("pip install -r requirements.txt && pip install -e .[test]")
    return 1


if __name__ == "__main__":
    sys.exit(main())
