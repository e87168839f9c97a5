use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use super::{CtError, Sinogram};
use crate::linops::norm2;

/// Noisy data together with the noise that produced it.
#[derive(Debug, Clone)]
pub struct NoiseRealization {
    pub noisy: Sinogram,
    /// `e = b − b̄`
    pub error: Vec<f64>,
    /// Gaussian standard deviation. For transmission noise this is the
    /// empirical RMS of `e`, the surrogate used by η-dependent rules.
    pub eta: f64,
    /// `‖e‖₂ / ‖b̄‖₂`
    pub rho: f64,
    /// Rays whose photon count came out as zero and was clamped to one.
    pub clamped: usize,
    /// Source intensity, for transmission noise.
    pub i0: Option<f64>,
}

/// `‖e‖₂ / ‖b̄‖₂`.
pub fn relative_noise_level(error: &[f64], clean: &Sinogram) -> Result<f64, CtError> {
    let denom = norm2(&clean.values);
    if denom == 0.0 {
        return Err(CtError::ZeroSinogram);
    }
    if error.len() != clean.len() {
        return Err(CtError::Layout(format!(
            "noise vector of length {} for a sinogram of length {}",
            error.len(),
            clean.len()
        )));
    }
    Ok(norm2(error) / denom)
}

fn realize(clean: &Sinogram, noisy: Vec<f64>, eta: f64, clamped: usize, i0: Option<f64>) -> Result<NoiseRealization, CtError> {
    let error: Vec<f64> = noisy.iter().zip(&clean.values).map(|(b, c)| b - c).collect();
    let rho = match relative_noise_level(&error, clean) {
        Ok(r) => r,
        // ρ is undefined for b̄ = 0
        Err(CtError::ZeroSinogram) if norm2(&error) == 0.0 => 0.0,
        Err(CtError::ZeroSinogram) => f64::INFINITY,
        Err(e) => return Err(e),
    };
    Ok(NoiseRealization {
        noisy: clean.with_values(noisy)?,
        error,
        eta,
        rho,
        clamped,
        i0,
    })
}

/// Adds i.i.d. `N(0, η²)` noise, drawn sequentially from a seeded generator.
pub fn add_white_gaussian(clean: &Sinogram, eta: f64, seed: u64) -> Result<NoiseRealization, CtError> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(CtError::InvalidNoise(format!("eta = {eta}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noisy: Vec<f64> = clean
        .values
        .iter()
        .map(|&c| {
            let z: f64 = StandardNormal.sample(&mut rng);
            c + eta * z
        })
        .collect();
    realize(clean, noisy, eta, 0, None)
}

/// White Gaussian noise with `η = ρ·‖b̄‖₂/√m`, so that `𝔼‖e‖² = ρ²‖b̄‖²`.
pub fn add_gaussian_relative(clean: &Sinogram, rho: f64, seed: u64) -> Result<NoiseRealization, CtError> {
    let norm = norm2(&clean.values);
    if norm == 0.0 {
        return Err(CtError::ZeroSinogram);
    }
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(CtError::InvalidNoise(format!("rho = {rho}")));
    }
    let eta = rho * norm / (clean.len() as f64).sqrt();
    add_white_gaussian(clean, eta, seed)
}

/// Photon-counting noise: `I_i ~ Poisson(I0·exp(−b̄_i))`, `b_i = −log(I_i/I0)`.
///
/// Zero counts are clamped to one photon and counted in `clamped`.
pub fn add_poisson_transmission(clean: &Sinogram, i0: f64, seed: u64) -> Result<NoiseRealization, CtError> {
    if !(i0 > 0.0 && i0.is_finite()) {
        return Err(CtError::InvalidNoise(format!("I0 = {i0}")));
    }
    if clean.values.iter().any(|&b| !(b >= 0.0)) {
        return Err(CtError::InvalidNoise("clean line integrals must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clamped = 0;
    let mut noisy = Vec::with_capacity(clean.len());
    for &b in &clean.values {
        let mean = i0 * (-b).exp();
        let mut count = match Poisson::new(mean) {
            Ok(dist) => dist.sample(&mut rng),
            Err(_) if mean <= 0.0 => 0.0,
            Err(e) => return Err(CtError::InvalidNoise(format!("Poisson mean {mean}: {e}"))),
        };
        if count < 1.0 {
            count = 1.0;
            clamped += 1;
        }
        noisy.push(-(count / i0).ln());
    }
    let rms = noisy
        .iter()
        .zip(&clean.values)
        .map(|(b, c)| (b - c) * (b - c))
        .sum::<f64>()
        / clean.len() as f64;
    realize(clean, noisy, rms.sqrt(), clamped, Some(i0))
}

/// Finds `I0` whose transmission noise (with `seed`) has relative level within
/// 5% of `target_rho`, by bisection on `log10(I0)`.
pub fn calibrate_i0(clean: &Sinogram, target_rho: f64, seed: u64) -> Result<f64, CtError> {
    calibrate_i0_tol(clean, target_rho, seed, 0.05)
}

pub fn calibrate_i0_tol(clean: &Sinogram, target_rho: f64, seed: u64, rel_tol: f64) -> Result<f64, CtError> {
    if !(target_rho > 0.0 && target_rho < 1.0) {
        return Err(CtError::InvalidNoise(format!("target rho = {target_rho}")));
    }
    let fail = |reason: String| CtError::Calibration { target: target_rho, reason };
    let rho_at = |log_i0: f64| -> Result<f64, CtError> {
        Ok(add_poisson_transmission(clean, 10f64.powf(log_i0), seed)?.rho)
    };

    // rho falls as I0 grows
    let (mut lo, mut hi) = (2.0, 8.0);
    let mut widened = 0;
    loop {
        let (r_lo, r_hi) = (rho_at(lo)?, rho_at(hi)?);
        if r_lo >= target_rho && r_hi <= target_rho {
            break;
        }
        if widened == 2 {
            return Err(fail(format!(
                "log10(I0) in [{lo}, {hi}] gives rho in [{r_hi}, {r_lo}]"
            )));
        }
        widened += 1;
        lo -= 2.0;
        hi += 4.0;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let r = rho_at(mid)?;
        if (r - target_rho).abs() <= rel_tol * target_rho {
            return Ok(10f64.powf(mid));
        }
        if r > target_rho {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(fail("bisection did not reach the tolerance".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(m: usize, scale: f64) -> Sinogram {
        Sinogram::uniform((0..m).map(|i| scale * (i % 97) as f64 / 96.0).collect(), m).unwrap()
    }

    #[test]
    fn zero_eta_is_noise_free() {
        let c = ramp(50, 2.0);
        let r = add_white_gaussian(&c, 0.0, 3).unwrap();
        assert_eq!(r.noisy.values, c.values);
        assert_eq!(r.rho, 0.0);
    }

    #[test]
    fn gaussian_energy_matches_m_eta_squared() {
        let m = 10_000;
        let c = ramp(m, 1.0);
        let r = add_white_gaussian(&c, 1.0, 11).unwrap();
        let energy: f64 = r.error.iter().map(|e| e * e).sum();
        assert!((energy / m as f64 - 1.0).abs() < 0.05);
        let mean = r.error.iter().sum::<f64>() / m as f64;
        assert!(mean.abs() <= 3.0 / (m as f64).sqrt());
    }

    #[test]
    fn gaussian_is_seed_reproducible() {
        let c = ramp(100, 1.0);
        let a = add_white_gaussian(&c, 0.5, 1).unwrap();
        let b = add_white_gaussian(&c, 0.5, 1).unwrap();
        let d = add_white_gaussian(&c, 0.5, 2).unwrap();
        assert_eq!(a.error, b.error);
        assert_ne!(a.error, d.error);
    }

    #[test]
    fn relative_gaussian_hits_target() {
        let c = ramp(20_000, 3.0);
        let r = add_gaussian_relative(&c, 0.01, 5).unwrap();
        assert!((r.rho - 0.01).abs() < 0.0005);
    }

    #[test]
    fn infinite_flux_limit_has_no_noise() {
        let c = ramp(5000, 5.0);
        let r = add_poisson_transmission(&c, 1e12, 2).unwrap();
        assert!(r.rho < 1e-4, "rho = {}", r.rho);
        assert_eq!(r.clamped, 0);
    }

    #[test]
    fn zero_path_keeps_full_intensity() {
        // at b̄ = 0 the count fluctuates around I0, so −log(I/I0) is centred on 0
        let c = Sinogram::uniform(vec![0.0; 20_000], 100).unwrap();
        let i0 = 1e4;
        let r = add_poisson_transmission(&c, i0, 4).unwrap();
        let counts: Vec<f64> = r.noisy.values.iter().map(|b| i0 * (-b).exp()).collect();
        let mean = counts.iter().sum::<f64>() / counts.len() as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (counts.len() - 1) as f64;
        assert!((mean - i0).abs() / i0 < 0.005);
        // Poisson: variance equals mean
        assert!((var - mean).abs() / mean < 0.05);
    }

    #[test]
    fn photon_starvation_is_clamped() {
        let c = Sinogram::uniform(vec![30.0; 10], 10).unwrap();
        let r = add_poisson_transmission(&c, 10.0, 0).unwrap();
        assert_eq!(r.clamped, 10);
        assert!(r.noisy.values.iter().all(|b| (*b - 10f64.ln()).abs() < 1e-12));
    }

    #[test]
    fn relative_level_scaling() {
        let c = ramp(40, 2.0);
        assert_eq!(relative_noise_level(&vec![0.0; 40], &c).unwrap(), 0.0);
        assert!((relative_noise_level(&c.values, &c).unwrap() - 1.0).abs() < 1e-15);
        let e: Vec<f64> = c.values.iter().map(|v| 0.01 * v).collect();
        assert!((relative_noise_level(&e, &c).unwrap() - 0.01).abs() < 1e-15);
        let zero = Sinogram::uniform(vec![0.0; 4], 4).unwrap();
        assert!(matches!(relative_noise_level(&[0.0; 4], &zero), Err(CtError::ZeroSinogram)));
    }

    #[test]
    fn calibration_is_monotone_and_accurate() {
        let c = ramp(4000, 2.0);
        let i_low = calibrate_i0(&c, 0.0025, 7).unwrap();
        let i_high = calibrate_i0(&c, 0.05, 7).unwrap();
        assert!(i_low > i_high);
        let realized = add_poisson_transmission(&c, i_high, 7).unwrap().rho;
        assert!((realized - 0.05).abs() <= 0.05 * 0.05);
    }

    #[test]
    fn calibration_rejects_bad_targets() {
        let c = ramp(100, 1.0);
        assert!(calibrate_i0(&c, 0.0, 0).is_err());
        assert!(calibrate_i0(&c, 1.5, 0).is_err());
    }
}
