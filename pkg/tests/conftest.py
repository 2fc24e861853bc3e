from hypothesis import HealthCheck, settings

# wall-clock deadlines make property tests flaky on loaded machines
settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")
