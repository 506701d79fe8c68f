"""Root entry point – `python main.py <command>` runs the CLI; serve the API with: uv run uvicorn sigpricer.main:app --reload"""
import sys

from sigpricer.cli import main

if __name__ == "__main__":
    sys.exit(main())
