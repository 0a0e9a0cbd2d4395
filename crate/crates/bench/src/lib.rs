//! Benchmarks for the operator layers, the full model and the simulators.
