from hypothesis import HealthCheck, settings

# Deterministic property runs: the suite doubles as an acceptance gate, so
# reruns must be byte-stable.
settings.register_profile(
    "ci",
    derandomize=True,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")
