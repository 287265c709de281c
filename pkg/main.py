#!/usr/bin/env python3
"""
Main entry point for the congestion toolkit.

This script parses the command line and runs the selected command.
"""
import logging
import sys

from src.core.application import Application


def main():
    """Main entry point for the command line."""
    try:
        app = Application()
        return app.run()
    except Exception as e:
        logging.error(f"Error running congestion: {e}", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
