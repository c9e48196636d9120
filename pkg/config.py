import os

# Root of the repository, used to locate the bundled preset files
repo_path = os.path.dirname(os.path.abspath(__file__))

# Default output directory for every subcommand
# Example: '/app/out'
out_path = os.getenv('LAGRANGIFY_OUT', os.path.join(os.getcwd(), 'out'))

# Path to store log files
log_path = os.getenv('LOG_PATH', os.path.join(os.getcwd(), 'log'))

# Logging level for the run log (DEBUG, INFO, WARNING, ERROR)
log_level = os.getenv('LOG_LEVEL', 'INFO')

# Benchmark and dictionary preset files
presets_path = os.getenv('PRESETS_PATH', os.path.join(repo_path, 'presets'))

# Seed used whenever --seed is omitted
default_seed = int(os.getenv('LAGRANGIFY_SEED', 20230101))

# Worker processes for the per-coordinate regressions (1 = run in-process)
threads = int(os.getenv('LAGRANGIFY_THREADS', 1))

# Sequential thresholded least squares
stlsq_max_iterations = int(os.getenv('STLSQ_MAX_ITER', 20))
stlsq_ridge = float(os.getenv('STLSQ_RIDGE', 1e-10))

# RMS of the Euler-Lagrange residual a reconstructed Lagrangian may leave,
# relative to the RMS of the regression target
el_tolerance = float(os.getenv('EL_TOLERANCE', 1e-2))

# Relative spread allowed between per-coordinate estimates of a shared coupling term
coupling_tolerance = float(os.getenv('COUPLING_TOLERANCE', 0.05))

# Largest power exponent a dictionary basis or a loaded Lagrangian may carry
max_power_degree = int(os.getenv('MAX_POWER_DEGREE', 8))
