import os
from dotenv import load_dotenv

load_dotenv()

# Quadrature
QUAD_ASSEMBLY = int(os.getenv("MMOC_QUAD_ASSEMBLY", 4))
QUAD_NORM = int(os.getenv("MMOC_QUAD_NORM", 5))

# Solvers
CG_TOL = float(os.getenv("MMOC_CG_TOL", 1e-12))
CG_MAXITER = int(os.getenv("MMOC_CG_MAXITER", 5000))
SADDLE_TOL = float(os.getenv("MMOC_SADDLE_TOL", 1e-9))

# Geometry
GEOM_EPS = float(os.getenv("MMOC_GEOM_EPS", 1e-10))

# Output
OUTPUT_DIR = os.getenv("MMOC_OUTPUT_DIR", "results")
JOBS = int(os.getenv("MMOC_JOBS", 1))

# App Settings
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()
DEBUG = os.getenv("DEBUG", "False").lower() == "true"  # feet outside the domain raise instead of being clamped
