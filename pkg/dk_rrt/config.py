# DK-RRT Configuration
# Defaults for operator fitting, encoder training, simulation and planning.
# Scene files and suite configs override these per run.

# Koopman fitting
PINV_TOL_REL = 1e-10
RIDGE_LAMBDA = 0.0  # 0 keeps the pure Frobenius least-squares problem
NORMALIZE_ROWS = True

# Dictionaries
RBF_CENTERS = 100
RBF_KMEANS_INIT = 4
FOURIER_HARMONICS = 4

# Encoder (visual feature extractor)
ENCODER_HIDDEN = (64, 64)
ENCODER_PROJECTOR = "mlp_tanh"

# Training loop defaults
N_EPOCH = 200
N_STEP = 10
REFIT_PERIOD = 25
LEARNING_RATE = 1e-3
BATCH = 1

# Synthetic training data: joint reference driven by the debris positions
REFERENCE_GAIN = 0.3
REFERENCE_KP = 25.0
REFERENCE_KD = 10.0
TRAINING_SUBSTEPS = 5

# Dual-data collocation
N_COLLOCATION = 2000

# Simulation
SIM_DT = 1e-3
SAMPLE_DT = 0.05
DIVERGENCE_BOUND = 1e6
OBSERVATION_GRID = (32, 32)
OBSERVATION_EXTENT = 4.0
OBSERVATION_NOISE = 0.01
LINK_RADIUS = 0.05
JOINT_VELOCITY_LIMIT = 1.0

# Planning
STEP_SIZE = 0.2
GOAL_BIAS = 0.05
GOAL_TOLERANCE = 0.05
MAX_NODES = 5000
MAX_ITERATION_FACTOR = 20  # sampling attempts per node of budget
EDGE_RESOLUTION = 10
INFLATION_C0 = 0.02
INFLATION_C1 = 0.05
HORIZON_STEPS = 160
IK_ITERATIONS = 200
IK_DAMPING = 0.05

# Execution loop
CYCLE_DT = SAMPLE_DT
EXEC_SIM_DT = 1e-2
TRACKING_KP = 1600.0
TRACKING_KD = 80.0
REFIT_EVERY = 10
REPLAN_EVERY = 10
REFIT_WINDOW = 200
WARMUP_CYCLES = 20
STATE_NOISE = 1e-3
REFIT_ERROR_THRESHOLD = 0.05  # m, one-step prediction miss that forces a refit
CLEARANCE_CAP = 100.0  # m, reported clearance when nothing is in range

# Benchmark harness
NUM_WORKERS = 1  # >1 runs (scene, method, seed) jobs on a process pool
CSV_FLOAT_FORMAT = "%.9g"
METRICS_SCHEMA_VERSION = 1
METHODS = ("dk_rrt", "frozen", "reactive")
