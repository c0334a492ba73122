#!/usr/bin/env python
# -*- coding: utf-8 -*-
import sys

from lvfusion.cli import main as run


def main() -> None:
    sys.exit(run())


if __name__ == '__main__':
    main()
