from ffloors.cli import main
import sys
sys.exit(main())
