# main.py
from __future__ import annotations
from rlab.cli import main


if __name__ == "__main__":
    raise SystemExit(main())
