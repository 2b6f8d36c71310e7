#!/usr/bin/env python3
"""
Setup script for the conversational uptake toolkit.

Creates a virtual environment, installs requirements.txt into it and runs the
embedded self-test to confirm the numeric stack works.
Run with: python3 setup.py [--skip-selftest]
"""

import os
import subprocess
import sys
import venv
from pathlib import Path

VENV_DIR = Path(os.getenv("UPTAKE_VENV_DIR", "venv"))


def run_command(args, description):
    """Run a command and report failures with its stderr."""
    print(f"📦 {description}...")
    try:
        subprocess.run(args, check=True, capture_output=True, text=True)
        print(f"✅ {description} completed successfully")
        return True
    except subprocess.CalledProcessError as e:
        print(f"❌ Error during {description}:")
        print(f"   Command: {' '.join(map(str, args))}")
        print(f"   Error: {e.stderr.strip()}")
        return False


def create_venv():
    """Create the virtual environment unless it already exists."""
    if VENV_DIR.exists():
        print(f"🔄 Virtual environment {VENV_DIR} already exists, skipping creation...")
        return True
    print(f"🏗️  Creating virtual environment in {VENV_DIR}...")
    try:
        venv.create(VENV_DIR, with_pip=True)
        return True
    except Exception as e:
        print(f"❌ Error creating virtual environment: {e}")
        return False


def get_python_executable():
    """Python executable inside the virtual environment."""
    if sys.platform == "win32":
        return VENV_DIR / "Scripts" / "python"
    return VENV_DIR / "bin" / "python"


def get_activation_command():
    if sys.platform == "win32":
        return f"{VENV_DIR}\\Scripts\\activate"
    return f"source {VENV_DIR}/bin/activate"


def install_requirements():
    if not Path("requirements.txt").exists():
        print("❌ requirements.txt not found!")
        return False
    python_exe = get_python_executable()
    if not run_command([python_exe, "-m", "pip", "install", "--upgrade", "pip"], "Upgrading pip"):
        print("⚠️  Warning: Failed to upgrade pip, continuing...")
    return run_command([python_exe, "-m", "pip", "install", "-r", "requirements.txt"], "Installing requirements")


def run_selftest():
    """Run `control.py selftest` with the environment's interpreter."""
    return run_command([get_python_executable(), "control.py", "--quiet", "selftest"], "Running self-test")


def print_success_message():
    print("\n" + "=" * 60)
    print("🎉 Setup completed successfully!")
    print("=" * 60)
    print("\n📋 Next steps:")
    print("1. Activate the virtual environment:")
    print(f"   {get_activation_command()}")
    print("\n2. Try the synthetic corpus end to end:")
    print("   python3 control.py --preset quick synth --out synth.jsonl --alpha-out alpha.csv")
    print("   python3 control.py nuc-build --pairs synth.jsonl --out nuc.jsonl")
    print("   python3 control.py nuc-train --in nuc.jsonl --out params.json --holdout 0.2")
    print("\n📚 See every sub-command:")
    print("   python3 control.py --help")
    print("\n💡 Remember to activate the virtual environment whenever you work on this project!")
    print("=" * 60)


def main():
    """Main setup function."""
    print("🚀 Setting up the conversational uptake toolkit")
    print("=" * 50)

    if sys.version_info < (3, 9):
        print("❌ Python 3.9 or higher is required!")
        sys.exit(1)
    print(f"✅ Python {sys.version.split()[0]} detected")

    if not create_venv():
        sys.exit(1)
    if not install_requirements():
        print("❌ Failed to install requirements!")
        sys.exit(1)
    if "--skip-selftest" not in sys.argv[1:] and not run_selftest():
        print("❌ Self-test failed; see the table above (or rerun `python3 control.py selftest`)")
        sys.exit(1)

    print_success_message()


def _requirements():
    lines = Path(__file__).with_name("requirements.txt").read_text().splitlines()
    return [ln.strip() for ln in lines if ln.strip() and not ln.strip().startswith("#")]


if __name__ == "__main__":
    if len(sys.argv) > 1 and not sys.argv[1].startswith("--"):
        # Invoked by a build frontend (pip/setuptools): emit package metadata.
        from setuptools import setup
        setup(
            name="uptake-toolkit",
            version="1.0.0",
            py_modules=["control"],
            install_requires=_requirements(),
        )
    else:
        main()
