# Closed-loop rollout evaluation and benchmarks.
