import sys
import os

# Add project root to Python path (enables imports from anywhere)
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from engine.AppCli import cli


if __name__ == '__main__':
    sys.exit(cli(sys.argv[1:]))
