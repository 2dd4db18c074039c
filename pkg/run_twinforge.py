#!/usr/bin/env python3
"""
twinforge launcher
Checks the numeric stack is importable, then hands the arguments to the CLI
"""
import sys


def check_requirements():
    """Check if required dependencies are installed"""
    try:
        import networkx
        import numpy
        import pandas
        import pydantic
        import scipy
        import sklearn
        import torch
        return True
    except ImportError as e:
        print(f"Missing dependency: {e}")
        print("Please install requirements: pip install -r requirements.txt")
        return False


def main():
    if not check_requirements():
        sys.exit(1)
    from twinforge.cli import main as cli_main
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
