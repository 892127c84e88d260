# Copyright 2026, bilevel-gr authors. All rights reserved.

__version__ = "0.1.0"
