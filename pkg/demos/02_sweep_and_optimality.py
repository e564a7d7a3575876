# # A small sweep and who wins where
#
# Two synthetic backends with known behaviour make the optimality map easy
# to read: `fast` has a flat 5 us latency, `steady` gets slower for each extra subscriber.

# %%
import tempfile

import numpy as np

from brokerbench import stub
from brokerbench.backend import register
from brokerbench.report import emit_reports
from brokerbench.sweep import SweepSpec, optimality, run_sweep

register(stub.descriptor(stub.constant_latency(5.0), name="fast"), replace=True)
register(stub.descriptor(lambda run, sub, seq: 2.0 + 0.5 * sub, name="steady"), replace=True)

# %%
spec = SweepSpec.from_mapping({
    "backends": ["fast", "steady"],
    "transports": ["inproc"],
    "sizes": ["1KB", "32KB", "512KB"],
    "subscribers": [1, 4, 8, 16],
    "count": 200, "delay_ms": 0, "repetitions": 2,
})
print(spec.size, "configurations")

# %%
out = tempfile.mkdtemp(prefix="sweep-")
result = run_sweep(spec, out)
len(result.rows)

# %% [markdown]
# Subscriber k of `steady` sees 2 + 0.5k us, so its average beats 5 us up to 12 subscribers.

# %%
omap = optimality(result, "latency.avg")
grid = np.array([[omap.winner("inproc", s, n) for s in spec.sizes] for n in spec.subscribers])
print(grid)

# %% [markdown]
# Re-running the same sweep into the same directory skips every finished row.

# %%
again = run_sweep(spec, out)
assert again.rows == result.rows

# %%
for path in emit_reports(result, [omap], out):
    print(path)
