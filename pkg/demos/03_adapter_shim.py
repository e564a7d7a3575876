# # Driving an external program through the adapter protocol
#
# Any executable that understands
#
#     <cmd> --role pub|sub --endpoint URL --transport ipc|tcp --count C
#           --size P --interval-us T --delay-ms D
#
# and prints one JSON report on stdout can be benchmarked. The test suite
# ships a stdlib-only one; here it is driven like any other backend.

# %%
import sys
from pathlib import Path

from brokerbench import ExperimentConfig, execute
from brokerbench.backend import adapter

shim = Path(__file__).resolve().parent.parent / "tests" / "shims" / "echo_shim.py"
echo = adapter("echo", f"{sys.executable} {shim}")
echo.to_dict()

# %%
res = execute(ExperimentConfig(echo, "tcp", count=1000, interval_us=1000, size=32 * 1024,
                               subscribers=2, delay_ms=300, repetitions=1))
m = res.metrics
print(m.received, "/", m.sent, "received;", round(m.latency.avg, 1), "us average")

# %% [markdown]
# The publisher's report is kept as-is.

# %%
res.records[0].publisher_report
