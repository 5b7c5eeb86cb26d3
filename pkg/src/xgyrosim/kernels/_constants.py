import numpy as np

# splitmix64 finalizer constants
GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)

# stream separators so cmat and initial-state draws never share a counter
STREAM_CMAT = np.uint64(0x636D6174)  # "cmat"
STREAM_INIT = np.uint64(0x696E6974)  # "init"

# top 53 bits of a hash -> [0, 1)
TO_UNIT = 2.0**-53

# Moment terms are rounded onto a 2**-30 grid. Sums of grid values stay exact
# while |partial sum| < 2**23, which makes the moment independent of how the
# nv range is chunked across ranks.
MOMENT_SCALE = 2.0**30
MOMENT_QUANTUM = 2.0**-30

STREAM_DAMPING = 0.1
