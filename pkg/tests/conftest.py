from hypothesis import HealthCheck, settings

# one deterministic profile for the whole suite: statistical assertions run
# at fixed seeds, property tests on a fixed corpus
settings.register_profile(
    "deterministic",
    derandomize=True,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("deterministic")
