# Copyright 2026, bilevel-gr authors. All rights reserved.

import sys

from .bench.cli import main  # type:ignore

sys.exit(main())
