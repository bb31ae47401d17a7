#!/usr/bin/env python3
"""
Main entry point for the downwash-aware allocation simulator.
This file provides a simple wrapper around the command-line interface.
"""
import logging
import sys

from app import main

logger = logging.getLogger(__name__)

if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\nSimulation interrupted by user.", file=sys.stderr)
        sys.exit(130)
    except Exception as e:
        logger.critical(f"Unhandled exception: {e}", exc_info=True)
        print(f"\nSimulator crashed: {e}", file=sys.stderr)
        sys.exit(1)
