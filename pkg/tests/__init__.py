# Copyright 2026, bilevel-gr authors. All rights reserved.
