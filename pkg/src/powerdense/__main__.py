"""Module entry point: ``python -m powerdense``."""

import sys

from .cli import main

sys.exit(main())
