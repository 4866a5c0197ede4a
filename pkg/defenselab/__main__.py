"""
Entry point for the DefenseLab CLI tool.
"""

import sys

from ._cli import main

sys.exit(main(init_log=True))
