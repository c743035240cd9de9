"""Make the package runnable with python -m bundlechoice."""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
