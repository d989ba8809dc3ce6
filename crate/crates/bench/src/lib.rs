//! Fixed workloads shared by the benchmarks.

use becker_doring::{Configuration, RateKernel};

pub fn constant_kernel() -> RateKernel {
    RateKernel::constant(1.0, 1.0).expect("positive rates")
}

pub fn power_kernel() -> RateKernel {
    RateKernel::power_db(4.0).expect("finite exponent")
}

pub fn monomers(n: usize) -> Configuration {
    Configuration::from_monomers(n, 1.0).expect("n >= 1")
}
