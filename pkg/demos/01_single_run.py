# # One configuration, start to finish
#
# Publish 500 messages of 1 KB once per millisecond over each transport of
# the reference bus and look at what comes back.

# %%
from brokerbench import ExperimentConfig, execute

# %%
cfg = ExperimentConfig("refbus", "inproc", count=500, interval_us=1000, size=1024,
                       delay_ms=200, repetitions=2)
res = execute(cfg)
res.metrics

# %% [markdown]
# `metrics` is already averaged: over subscribers inside each run, then over
# runs. The per-run pieces are still there.

# %%
for rec in res.records:
    print(rec.run_index, rec.metrics.latency.avg, rec.publisher_report["publish_duration_ns"] / 1e9)

# %% [markdown]
# Raw latencies are numpy arrays, one per subscriber.

# %%
lat = res.records[0].series[0]
print(lat.shape, lat.mean(), lat.std())

# %% [markdown]
# Same thing across transports. ipc and tcp run the publisher and each
# subscriber in their own process, so CPU here is a sum over those processes.

# %%
for transport in ("inproc", "ipc", "tcp"):
    m = execute(cfg.replace(transport=transport)).metrics
    print(f"{transport:<7} avg {m.latency.avg:8.1f} us  p99 {m.latency.p99:8.1f} us  "
          f"jitter {m.jitter:6.1f} us  cpu {m.cpu_median:5.1f} %")
