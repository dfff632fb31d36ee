"""Single-vehicle red-wait cases stepped by hand."""

# 1x1 grid: source 0 enters from the east heading west (EW approach),
# source 3 enters from the south heading north (NS approach).
WESTBOUND, NORTHBOUND = 0, 3

# With p_brake=0 and a 10-cell segment, a vehicle placed on cell 0 at the end
# of second t0 moves 1, 2, 3 cells in t0+1..t0+3 (cells 1, 3, 6), is capped
# to 3 by a red stop line in t0+4 (cell 9), and has speed 0 from t0+5 on.
# EW is red while (t - offset) % 120 < 60, NS is red otherwise.
HAND_CASES = [
    # (offset, source, t0, red wait)
    (0, WESTBOUND, 0, 55),     # stops at 5, EW green at 60
    (0, WESTBOUND, 20, 35),    # stops at 25
    (30, WESTBOUND, 40, 45),   # EW red on [30, 90): stops at 45
    (0, NORTHBOUND, 100, 15),  # NS red on [60, 120): stops at 105
    (0, WESTBOUND, 54, 1),     # stops at 59, one second before green
]
