# %% [markdown]
# Arrival order matters in continuous clearing.
#
# One upward request (10 kWh at 0.30 EUR/kWh) and two offers that can each
# cover it alone. The auction picks the cheaper offer; continuous clearing
# serves whichever offer the book sees first.

# %%
from flexclear.auction import run_auction
from flexclear.bounds import permutation_oracle, sequence_bounds
from flexclear.continuous import run_continuous
from flexclear.model import Bid, Direction, Instance, Line, Network, Setpoint, Side

import numpy as np

net = Network((1, 2), (Line(1, 2, 1.0),), reference=1)
setpoint = Setpoint(np.zeros((2, 1)))
bids = (
    Bid("R", Side.REQUEST, Direction.UP, 2, 0, 10.0, 0.30, 0),
    Bid("O1", Side.OFFER, Direction.UP, 1, 0, 10.0, 0.05, 1),
    Bid("O2", Side.OFFER, Direction.UP, 1, 0, 10.0, 0.10, 2),
)
inst = Instance(net, setpoint, bids)

# %%
auction = run_auction(inst)
print(f"auction welfare {auction.social_welfare:.2f} EUR")

for order in (["R", "O1", "O2"], ["R", "O2", "O1"]):
    out = run_continuous(inst, order=order)
    served = [t.offer_id for t in out.trades]
    print(f"order {' '.join(order)}: welfare {out.social_welfare:.2f} EUR, served by {served}")

# %% [markdown]
# Every order at once: the permutation oracle replays the engine on each
# offer sequence, and the single-level program finds the extremes without
# enumerating.

# %%
oracle = permutation_oracle(inst)
report = sequence_bounds(inst)
print("oracle range", oracle.min_welfare, oracle.max_welfare)
print("worst", report.worst.value, report.worst.witness)
print("best ", report.best.value, report.best.witness)
print(f"worst case is {report.percent_of_auction(report.worst.value):.0f}% of the auction")
