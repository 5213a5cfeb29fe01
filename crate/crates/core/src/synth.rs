//! Seeded synthetic station datasets for desk-scale experiments.
//!
//! A latent AR(2) wind process per station is driven by spatially
//! correlated innovations (a distance kernel smooths i.i.d. noise across
//! stations), shifted by a per-station offset/scale and a shared diurnal
//! cycle, then clipped at zero. With zero noise, zero diurnal amplitude
//! and zero AR coefficients every station is a constant series.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{SeriesSet, StationMeta};
use crate::fmath;
use crate::graph::haversine;

#[derive(Debug, Clone, PartialEq)]
pub enum SynthError {
    BadSpec(String),
}

impl fmt::Display for SynthError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SynthError::BadSpec(msg) => write!(f, "bad synthetic spec: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SynthError {}

/// Generator configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_stations: usize,
    /// 10-minute grid length.
    pub grid_len: usize,
    /// Regional latent AR(2) coefficients.
    pub ar_coeffs: [f64; 2],
    /// Mean wind level in m/s.
    pub offset_base: f64,
    /// Per-station offset spread around the base.
    pub offset_spread: f64,
    /// Per-station multiplicative spread around scale 1.
    pub scale_spread: f64,
    /// Amplitude of the shared diurnal cycle, m/s.
    pub diurnal_amplitude: f64,
    /// Innovation standard deviation.
    pub noise_std: f64,
    /// Length scale of the spatial correlation kernel, km.
    pub spatial_corr_km: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// A desk-scale default: strongly autocorrelated, diurnal, spatially
    /// correlated and clearly beatable by a linear look-back model.
    pub fn desk_default(n_stations: usize, grid_len: usize, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_stations,
            grid_len,
            ar_coeffs: [1.35, -0.45],
            offset_base: 8.0,
            offset_spread: 1.0,
            scale_spread: 0.2,
            diurnal_amplitude: 1.5,
            noise_std: 0.8,
            spatial_corr_km: 80.0,
            seed,
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.n_stations == 0 {
            return Err(SynthError::BadSpec("need at least one station".into()));
        }
        if self.grid_len == 0 {
            return Err(SynthError::BadSpec("grid length must be positive".into()));
        }
        if self.noise_std < 0.0 {
            return Err(SynthError::BadSpec("noise std must be non-negative".into()));
        }
        Ok(())
    }
}

/// Station layout: a line through an offshore-looking box, one row per
/// station, ~40 km apart.
pub fn synthetic_stations(n: usize) -> Vec<StationMeta> {
    (0..n)
        .map(|i| {
            StationMeta::new(
                alloc::format!("SYN{i:02}"),
                58.5 + 0.30 * i as f64,
                3.0 + 0.35 * ((i % 5) as f64) + 0.1 * i as f64,
            )
            .expect("synthetic coordinates are in range")
        })
        .collect()
}

/// Generate the 10-minute series; the hourly companion is derived by
/// aggregation downstream. Deterministic in the spec seed.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SeriesSet, SynthError> {
    spec.validate()?;
    let n = spec.n_stations;
    let stations = synthetic_stations(n);
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(spec.seed);

    // per-station affine transform
    let offsets: Vec<f64> = (0..n)
        .map(|_| spec.offset_base + rng.gen_range(-1.0..1.0) * spec.offset_spread)
        .collect();
    let scales: Vec<f64> =
        (0..n).map(|_| 1.0 + rng.gen_range(-1.0..1.0) * spec.scale_spread).collect();
    let phases: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.35)).collect();

    // spatial mixing kernel, row-normalized so innovations keep unit scale
    let mut kernel = vec![0.0; n * n];
    for i in 0..n {
        let mut norm = 0.0;
        for j in 0..n {
            let w = fmath::exp(-haversine(&stations[i], &stations[j]) / spec.spatial_corr_km);
            kernel[i * n + j] = w;
            norm += w * w;
        }
        let norm = fmath::sqrt(norm);
        for j in 0..n {
            kernel[i * n + j] /= norm;
        }
    }

    let mut set = SeriesSet::new_empty(stations, 10, 0, spec.grid_len)
        .expect("synthetic ids are unique");
    let mut latent_prev = vec![0.0; n];
    let mut latent_prev2 = vec![0.0; n];
    let mut dir = vec![0.0; n];
    for (i, d) in dir.iter_mut().enumerate() {
        *d = (i as f64 * 47.0) % 360.0;
    }
    let mut pressure = vec![1010.0; n];
    let mut eta = vec![0.0; n];
    let mut eps = vec![0.0; n];
    for t in 0..spec.grid_len {
        for e in eta.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *e = z;
        }
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += kernel[i * n + j] * eta[j];
            }
            eps[i] = acc;
        }
        let minute = t as f64 * 10.0;
        let day_frac = minute / (24.0 * 60.0);
        for i in 0..n {
            let latent = spec.ar_coeffs[0] * latent_prev[i]
                + spec.ar_coeffs[1] * latent_prev2[i]
                + spec.noise_std * eps[i];
            latent_prev2[i] = latent_prev[i];
            latent_prev[i] = latent;

            let diurnal = spec.diurnal_amplitude * fmath::sin2pi(day_frac + phases[i]);
            let ws = (offsets[i] + scales[i] * latent + diurnal).max(0.0);

            let dir_step: f64 = StandardNormal.sample(&mut rng);
            dir[i] = (dir[i] + spec.noise_std * 2.0 * dir_step).rem_euclid(360.0);

            let temp_noise: f64 = StandardNormal.sample(&mut rng);
            let temp = 8.0 + 4.0 * fmath::sin2pi(day_frac - 0.25) * (spec.diurnal_amplitude / 1.5).min(1.0)
                + 0.3 * spec.noise_std * temp_noise;

            let p_noise: f64 = StandardNormal.sample(&mut rng);
            pressure[i] = 1010.0 + 0.995 * (pressure[i] - 1010.0) + 0.05 * spec.noise_std * p_noise;

            set.set(i, t, [ws, dir[i], temp, pressure[i]]);
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_by_seed() {
        let spec = SyntheticSpec::desk_default(4, 200, 99);
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        let mut other = spec.clone();
        other.seed = 100;
        assert_ne!(generate_synthetic(&other).unwrap(), a);
    }

    #[test]
    fn zeroed_spec_gives_constant_series() {
        let mut spec = SyntheticSpec::desk_default(3, 100, 7);
        spec.ar_coeffs = [0.0, 0.0];
        spec.diurnal_amplitude = 0.0;
        spec.noise_std = 0.0;
        let set = generate_synthetic(&spec).unwrap();
        for s in 0..3 {
            let first = set.raw(s, 0).unwrap();
            for t in 1..100 {
                let v = set.raw(s, t).unwrap();
                assert_eq!(v[0], first[0], "wind speed");
                assert_eq!(v[1], first[1], "direction");
            }
        }
    }

    #[test]
    fn wind_speeds_non_negative_and_masked_full() {
        let spec = SyntheticSpec::desk_default(5, 500, 3);
        let set = generate_synthetic(&spec).unwrap();
        assert_eq!(set.present_count(), set.grid_size());
        for s in 0..5 {
            for t in 0..500 {
                let v = set.raw(s, t).unwrap();
                assert!(v[0] >= 0.0);
                assert!((0.0..360.0).contains(&v[1]));
            }
        }
    }

    #[test]
    fn correlation_decays_with_distance() {
        let spec = SyntheticSpec {
            diurnal_amplitude: 0.0, // isolate the stochastic component
            ..SyntheticSpec::desk_default(6, 4000, 11)
        };
        let set = generate_synthetic(&spec).unwrap();
        let series: Vec<Vec<f64>> = (0..6)
            .map(|s| (0..4000).map(|t| set.raw(s, t).unwrap()[0]).collect())
            .collect();
        let corr = |a: &[f64], b: &[f64]| {
            let n = a.len() as f64;
            let ma = a.iter().sum::<f64>() / n;
            let mb = b.iter().sum::<f64>() / n;
            let mut num = 0.0;
            let mut va = 0.0;
            let mut vb = 0.0;
            for i in 0..a.len() {
                num += (a[i] - ma) * (b[i] - mb);
                va += (a[i] - ma) * (a[i] - ma);
                vb += (b[i] - mb) * (b[i] - mb);
            }
            num / (va.sqrt() * vb.sqrt())
        };
        let near = corr(&series[0], &series[1]);
        let far = corr(&series[0], &series[5]);
        assert!(near > far + 0.05, "near {near} vs far {far}");
        assert!(near > 0.5, "nearby stations should correlate, got {near}");
    }
}
