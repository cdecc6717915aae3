"""python -m kernel_selection"""

import sys

from .cli import main

sys.exit(main())
