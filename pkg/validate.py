#!/usr/bin/env python3
"""
Quick validation script for gapbridge.
Checks that the package imports, the default settings are valid and the
result store and synthetic generator work, without training anything.
"""
import importlib
import sys
import tempfile
from pathlib import Path
from typing import Callable, Iterable, Optional

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent))

PACKAGE_MODULES = (
    "config",
    "errors",
    "numcore",
    "data.ingest",
    "data.synth",
    "data.windows",
    "data.dataset",
    "core.jepa",
    "core.bridge",
    "core.decoder",
    "core.conformal",
    "core.metrics",
    "core.pipeline",
    "core.training",
    "core.ablation",
    "core.reporter",
    "database",
)

REQUIRED_FILES = (
    "config.py",
    "errors.py",
    "main.py",
    "requirements.txt",
    "pyproject.toml",
    ".env.example",
    "numcore/__init__.py",
    "data/__init__.py",
    "core/__init__.py",
    "database/__init__.py",
    "database/models.py",
)


def _probe_each(names: Iterable[str], probe: Callable[[str], Optional[str]]) -> bool:
    """Run ``probe`` on every name; it returns an error message or None."""
    ok = True
    for name in names:
        problem = probe(name)
        if problem is None:
            print(f"  ✅ {name}")
        else:
            print(f"  ❌ {name}: {problem}")
            ok = False
    return ok


def check_imports() -> bool:
    print("🔍 Checking module imports...")

    def probe(module: str) -> Optional[str]:
        try:
            importlib.import_module(module)
        except ImportError as e:
            return str(e)
        return None

    return _probe_each(PACKAGE_MODULES, probe)


def check_files(base: Optional[Path] = None) -> bool:
    print("\n📁 Checking required files...")
    base = base or Path(__file__).parent
    return _probe_each(REQUIRED_FILES, lambda rel: None if (base / rel).exists() else "NOT FOUND")


def check_config() -> bool:
    """Default run settings must pass validation."""
    print("\n⚙️  Checking default settings...")
    try:
        from config import RunConfig, validate_config

        problems = validate_config(RunConfig())
    except Exception as e:
        print(f"  ❌ Error: {e}")
        return False

    for problem in problems:
        print(f"  ❌ {problem}")
    if not problems:
        print("  ✅ Defaults are valid")
    return not problems


def check_synthetic(preset: str = "periodic-check", n_days: int = 500) -> bool:
    """A short synthetic series must generate whole days."""
    print("\n🏢 Checking synthetic generator...")
    try:
        from data.synth import get_preset, synth_generate

        records = synth_generate(get_preset(preset, n_days=n_days), seed=0)
    except Exception as e:
        print(f"  ❌ Error: {e}")
        return False

    if len(records) != n_days * 24:
        print(f"  ❌ {preset}: expected {n_days * 24} hours, got {len(records)}")
        return False
    print(f"  ✅ {preset}: {len(records)} hours")
    return True


def check_database(path: Optional[Path] = None) -> bool:
    print("\n💾 Checking result store...")
    try:
        from database import get_runs, init_database

        path = path or Path(tempfile.mkdtemp()) / "results.db"
        init_database(path)
        print(f"  ✅ {path.name} ready ({len(get_runs(path))} runs)")
        return True
    except Exception as e:
        print(f"  ❌ Database error: {e}")
        return False


def main() -> int:
    print("=" * 50)
    print("🌉 gapbridge validation")
    print("=" * 50)

    checks = (check_imports, check_files, check_config, check_synthetic, check_database)
    passed = [check() for check in checks]

    print("\n" + "=" * 50)
    if all(passed):
        print("✅ All checks passed.")
        print("\nNext steps:")
        print("1. Copy .env.example to .env and adjust paths if needed")
        print("2. python main.py train")
        print("3. python main.py evaluate --variants seasonal-naive,bridge")
        print("4. python main.py report")
    else:
        print(f"❌ {passed.count(False)} of {len(passed)} checks failed. See above.")
    print("=" * 50)
    return 0 if all(passed) else 1


if __name__ == "__main__":
    sys.exit(main())
