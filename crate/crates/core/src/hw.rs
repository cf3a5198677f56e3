//! Hardware description and roofline-style analytic formulas.
//!
//! All ratio-valued quantities (arithmetic intensity, roofline threshold)
//! are computed in exact rational arithmetic and converted to floating
//! point only for reporting, so boundary comparisons are bit-stable.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum HwError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid hardware spec: {0}")]
    InvalidSpec(String),
}

/// Element storage precision. Accumulation is always FP32 in the executor;
/// this type only decides bytes-per-element and the peak multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Fp32,
    Fp16,
}

impl Precision {
    pub fn bytes_per_element(self) -> u64 {
        match self {
            Precision::Fp32 => 4,
            Precision::Fp16 => 2,
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Precision::Fp32 => write!(f, "fp32"),
            Precision::Fp16 => write!(f, "fp16"),
        }
    }
}

/// Levels of the modeled memory hierarchy, fastest to slowest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MemoryLevel {
    /// Per-DSP scalar memory.
    Sm,
    /// Per-DSP vector memory.
    Am,
    /// Per-cluster shared memory.
    Gsm,
    /// Per-cluster main memory.
    Ddr,
}

impl std::fmt::Display for MemoryLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MemoryLevel::Sm => write!(f, "SM"),
            MemoryLevel::Am => write!(f, "AM"),
            MemoryLevel::Gsm => write!(f, "GSM"),
            MemoryLevel::Ddr => write!(f, "DDR"),
        }
    }
}

/// Capacities, bandwidths, and compute peaks of one accelerator cluster.
///
/// Defaults describe the modeled platform: 24 DSPs per cluster, each with
/// 64 KB scalar memory and 768 KB vector memory, a 6 MB cluster-shared
/// memory, 20 GiB DDR at 30 GB/s, and a 4.05 TFLOPS FP32 peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HardwareSpec {
    /// Per-DSP vector memory capacity in bytes.
    pub am_bytes: u64,
    /// Per-DSP scalar memory capacity in bytes.
    pub sm_bytes: u64,
    /// Per-cluster shared memory capacity in bytes.
    pub gsm_bytes: u64,
    /// Per-cluster main memory capacity in bytes.
    pub ddr_bytes: u64,
    /// Per-cluster DDR bandwidth in bytes/s.
    pub ddr_bandwidth: f64,
    /// Per-cluster FP32 peak in FLOP/s.
    pub fp32_peak: f64,
    /// FP16 peak = fp32_peak * fp16_peak_factor.
    pub fp16_peak_factor: f64,
    pub dsps_per_cluster: u32,
    pub accel_cores_per_dsp: u32,
    /// Broadcast latency divided by DMA latency for the same bytes.
    pub broadcast_latency_factor: f64,
    /// Clusters available to a deployment.
    pub clusters_total: u32,
}

impl Default for HardwareSpec {
    fn default() -> Self {
        Self {
            am_bytes: 786_432,
            sm_bytes: 65_536,
            gsm_bytes: 6_291_456,
            ddr_bytes: 20 * (1 << 30),
            ddr_bandwidth: 30e9,
            fp32_peak: 4.05e12,
            fp16_peak_factor: 2.0,
            dsps_per_cluster: 24,
            accel_cores_per_dsp: 16,
            broadcast_latency_factor: 0.9,
            clusters_total: 4,
        }
    }
}

impl HardwareSpec {
    /// Checks the structural invariants (positive capacities and rates,
    /// broadcast factor in (0, 2], AM larger than SM).
    pub fn validate(&self) -> Result<(), HwError> {
        let positives: [(&str, f64); 7] = [
            ("am_bytes", self.am_bytes as f64),
            ("sm_bytes", self.sm_bytes as f64),
            ("gsm_bytes", self.gsm_bytes as f64),
            ("ddr_bytes", self.ddr_bytes as f64),
            ("ddr_bandwidth", self.ddr_bandwidth),
            ("fp32_peak", self.fp32_peak),
            ("fp16_peak_factor", self.fp16_peak_factor),
        ];
        for (name, v) in positives {
            if !(v > 0.0) {
                return Err(HwError::InvalidSpec(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        if self.dsps_per_cluster == 0 || self.accel_cores_per_dsp == 0 || self.clusters_total == 0
        {
            return Err(HwError::InvalidSpec(
                "dsps_per_cluster, accel_cores_per_dsp, clusters_total must be >= 1".into(),
            ));
        }
        if !(self.broadcast_latency_factor > 0.0 && self.broadcast_latency_factor <= 2.0) {
            return Err(HwError::InvalidSpec(format!(
                "broadcast_latency_factor must be in (0, 2], got {}",
                self.broadcast_latency_factor
            )));
        }
        if self.am_bytes <= self.sm_bytes {
            return Err(HwError::InvalidSpec(format!(
                "am_bytes ({}) must exceed sm_bytes ({})",
                self.am_bytes, self.sm_bytes
            )));
        }
        Ok(())
    }

    /// Compute peak for the given precision, FLOP/s.
    pub fn peak_flops(&self, precision: Precision) -> f64 {
        match precision {
            Precision::Fp32 => self.fp32_peak,
            Precision::Fp16 => self.fp32_peak * self.fp16_peak_factor,
        }
    }

    /// Capacity of one memory level in bytes.
    pub fn capacity(&self, level: MemoryLevel) -> u64 {
        match level {
            MemoryLevel::Sm => self.sm_bytes,
            MemoryLevel::Am => self.am_bytes,
            MemoryLevel::Gsm => self.gsm_bytes,
            MemoryLevel::Ddr => self.ddr_bytes,
        }
    }
}

fn exact(v: f64) -> BigRational {
    // Finite f64 values are exact binary rationals.
    BigRational::from_float(v).expect("finite value")
}

/// Arithmetic intensity of an M x K x N GEMM:
/// `M*K*N / (bytes_per_element * (M*K + K*N + M*N))`, FLOPs per byte.
pub fn arithmetic_intensity(
    m: u64,
    k: u64,
    n: u64,
    precision: Precision,
) -> Result<BigRational, HwError> {
    if m == 0 || k == 0 || n == 0 {
        return Err(HwError::InvalidArgument(format!(
            "gemm dimensions must be >= 1, got ({m}, {k}, {n})"
        )));
    }
    let (m, k, n) = (BigInt::from(m), BigInt::from(k), BigInt::from(n));
    let bytes = BigInt::from(precision.bytes_per_element());
    let flops = &m * &k * &n;
    let traffic = bytes * (&m * &k + &k * &n + &m * &n);
    Ok(BigRational::new(flops, traffic))
}

/// Roofline knee: `peak(precision) / ddr_bandwidth`, FLOPs per byte.
pub fn intensity_threshold(spec: &HardwareSpec, precision: Precision) -> BigRational {
    let peak = match precision {
        Precision::Fp32 => exact(spec.fp32_peak),
        Precision::Fp16 => exact(spec.fp32_peak) * exact(spec.fp16_peak_factor),
    };
    peak / exact(spec.ddr_bandwidth)
}

/// Roofline attainable performance: `min(peak, bandwidth * intensity)`, FLOP/s.
pub fn attainable_performance(
    intensity: &BigRational,
    spec: &HardwareSpec,
    precision: Precision,
) -> Result<BigRational, HwError> {
    if intensity < &BigRational::zero() {
        return Err(HwError::InvalidArgument(format!(
            "intensity must be nonnegative, got {intensity}"
        )));
    }
    let peak = match precision {
        Precision::Fp32 => exact(spec.fp32_peak),
        Precision::Fp16 => exact(spec.fp32_peak) * exact(spec.fp16_peak_factor),
    };
    let bw_bound = exact(spec.ddr_bandwidth) * intensity;
    Ok(bw_bound.min(peak))
}

/// Measured throughput of a linear layer in GFLOPS:
/// `(S/1024) * (input_dim/1024) * (output_dim/1024) * (1000/time_ms)`.
pub fn measured_gflops(
    s: u64,
    input_dim: u64,
    output_dim: u64,
    time_ms: f64,
) -> Result<f64, HwError> {
    if !(time_ms > 0.0) {
        return Err(HwError::InvalidArgument(format!(
            "time_ms must be positive, got {time_ms}"
        )));
    }
    Ok((s as f64 / 1024.0) * (input_dim as f64 / 1024.0) * (output_dim as f64 / 1024.0)
        * (1000.0 / time_ms))
}

/// Convenience: rational to f64 for reporting.
pub fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::One;

    fn ratio(num: i64, den: i64) -> BigRational {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }

    #[test]
    fn intensity_published_config_is_192_over_13() {
        let i = arithmetic_intensity(128, 128, 768, Precision::Fp32).unwrap();
        assert_eq!(i, ratio(192, 13));
        assert!((to_f64(&i) - 14.769).abs() < 1e-3);
    }

    #[test]
    fn intensity_smallest_case() {
        let i = arithmetic_intensity(1, 1, 1, Precision::Fp32).unwrap();
        assert_eq!(i, ratio(1, 12));
    }

    #[test]
    fn intensity_cube_64() {
        // 64^3 / (4 * 3 * 64^2) = 64/12 = 16/3
        let i = arithmetic_intensity(64, 64, 64, Precision::Fp32).unwrap();
        assert_eq!(i, ratio(16, 3));
    }

    #[test]
    fn intensity_rejects_zero_dims() {
        assert!(arithmetic_intensity(0, 1, 1, Precision::Fp32).is_err());
        assert!(arithmetic_intensity(1, 0, 1, Precision::Fp16).is_err());
    }

    #[test]
    fn intensity_symmetric_in_m_n() {
        for (m, k, n) in [(3, 7, 11), (128, 128, 768), (1, 5, 9)] {
            let a = arithmetic_intensity(m, k, n, Precision::Fp32).unwrap();
            let b = arithmetic_intensity(n, k, m, Precision::Fp32).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn threshold_default_spec() {
        let spec = HardwareSpec::default();
        assert_eq!(
            intensity_threshold(&spec, Precision::Fp32),
            ratio(135, 1)
        );
        assert_eq!(
            intensity_threshold(&spec, Precision::Fp16),
            ratio(270, 1)
        );
    }

    #[test]
    fn threshold_is_one_when_bandwidth_equals_peak() {
        let spec = HardwareSpec {
            ddr_bandwidth: 4.05e12,
            ..HardwareSpec::default()
        };
        assert_eq!(
            intensity_threshold(&spec, Precision::Fp32),
            BigRational::one()
        );
    }

    #[test]
    fn attainable_below_and_at_knee() {
        let spec = HardwareSpec::default();
        let p = attainable_performance(&ratio(192, 13), &spec, Precision::Fp32).unwrap();
        // 30e9 * 192/13
        assert_eq!(p, exact(30e9) * ratio(192, 13));
        assert!((to_f64(&p) - 4.4308e11).abs() / 4.4308e11 < 1e-4);

        let at_knee = attainable_performance(&ratio(135, 1), &spec, Precision::Fp32).unwrap();
        assert_eq!(at_knee, exact(4.05e12));

        let zero = attainable_performance(&BigRational::zero(), &spec, Precision::Fp32).unwrap();
        assert_eq!(zero, BigRational::zero());
    }

    #[test]
    fn attainable_monotone_and_bounded_by_peak() {
        let spec = HardwareSpec::default();
        let mut prev = BigRational::zero();
        for i in 0..400 {
            let intensity = ratio(i, 2); // 0, 0.5, ..., up past the knee at 135
            let p = attainable_performance(&intensity, &spec, Precision::Fp32).unwrap();
            assert!(p >= prev, "not monotone at intensity {intensity}");
            assert!(p <= exact(spec.fp32_peak));
            prev = p;
        }
        // Saturates exactly at the threshold.
        let knee = intensity_threshold(&spec, Precision::Fp32);
        let at = attainable_performance(&knee, &spec, Precision::Fp32).unwrap();
        assert_eq!(at, exact(spec.fp32_peak));
        let below = attainable_performance(&(knee.clone() - ratio(1, 1000)), &spec, Precision::Fp32)
            .unwrap();
        assert!(below < exact(spec.fp32_peak));
    }

    #[test]
    fn attainable_rejects_negative_intensity() {
        let spec = HardwareSpec::default();
        assert!(attainable_performance(&ratio(-1, 2), &spec, Precision::Fp32).is_err());
    }

    #[test]
    fn gflops_published_rows() {
        // FP32 row: S=8k, 4096x4096, 53.77 ms.
        let g = measured_gflops(8192, 4096, 4096, 53.77).unwrap();
        assert!((g - 2380.5).abs() < 0.5, "got {g}");
        // FP16 row: 24.17 ms. The formula yields ~5295.8 GFLOPS; the
        // published utilization figure implies a higher value — see README.
        let g = measured_gflops(8192, 4096, 4096, 24.17).unwrap();
        assert!((g - 5295.8).abs() < 0.5, "got {g}");
        // Unit case.
        assert_eq!(measured_gflops(1024, 1024, 1024, 1000.0).unwrap(), 1.0);
    }

    #[test]
    fn gflops_scaling() {
        let base = measured_gflops(2048, 1024, 512, 10.0).unwrap();
        assert!((measured_gflops(4096, 1024, 512, 10.0).unwrap() - 2.0 * base).abs() < 1e-9);
        assert!((measured_gflops(2048, 2048, 512, 10.0).unwrap() - 2.0 * base).abs() < 1e-9);
        assert!((measured_gflops(2048, 1024, 1024, 10.0).unwrap() - 2.0 * base).abs() < 1e-9);
        assert!((measured_gflops(2048, 1024, 512, 20.0).unwrap() - base / 2.0).abs() < 1e-9);
        assert!(measured_gflops(1, 1, 1, 0.0).is_err());
        assert!(measured_gflops(1, 1, 1, -3.0).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(HardwareSpec::default().validate().is_ok());
        let bad = HardwareSpec {
            broadcast_latency_factor: 2.5,
            ..HardwareSpec::default()
        };
        assert!(bad.validate().is_err());
        let bad = HardwareSpec {
            sm_bytes: 1 << 30,
            ..HardwareSpec::default()
        };
        assert!(bad.validate().is_err(), "AM must exceed SM");
        let bad = HardwareSpec {
            ddr_bandwidth: 0.0,
            ..HardwareSpec::default()
        };
        assert!(bad.validate().is_err());
    }
}
