"""Index layout of the packed state and parameter vectors shared by both physics kernels."""

# state row
X, Z, PHI, VX, VZ, OMEGA = 0, 1, 2, 3, 4, 5
TH = 6      # 4 joint positions: hip0, knee0, hip1, knee1
DTH = 10    # 4 joint velocities
THRUST = 14  # 2 jet thrusts
STATE_DIM = 16

# parameter vector
P_MASS = 0
P_INERTIA = 1
P_G = 2
P_L1 = 3
P_L2 = 4
P_HIP = 5      # hx0, hz0, hx1, hz1
P_JET = 9      # jx0, jz0, jx1, jz1
P_KP = 13
P_KD = 17
P_TAU_LIM = 21
P_IJOINT = 22
P_JDAMP = 23
P_LO = 24
P_HI = 28
P_KN = 32
P_CN = 33
P_CT = 34
P_MU = 35
PARAM_DIM = 36

# per-foot contact output columns
C_PEN, C_NORMAL, C_TANGENT = 0, 1, 2
