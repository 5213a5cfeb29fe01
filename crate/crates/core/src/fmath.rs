//! Float math shims usable with and without `std`.
//!
//! Transcendentals always go through `libm` so results are bit-identical
//! across `std` and `no_std` builds. Operations with a correctly-rounded
//! IEEE definition (sqrt, abs, floor, round) use the intrinsic when `std`
//! is available.

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

#[inline]
pub fn atan2(y: f64, x: f64) -> f64 {
    libm::atan2(y, x)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub fn powi(x: f64, n: i32) -> f64 {
    #[cfg(feature = "std")]
    {
        x.powi(n)
    }
    #[cfg(not(feature = "std"))]
    {
        libm::pow(x, n as f64)
    }
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    #[cfg(feature = "std")]
    {
        x.sqrt()
    }
    #[cfg(not(feature = "std"))]
    {
        libm::sqrt(x)
    }
}

#[inline]
pub fn abs(x: f64) -> f64 {
    f64::from_bits(x.to_bits() & !(1u64 << 63))
}

#[inline]
pub fn floor(x: f64) -> f64 {
    #[cfg(feature = "std")]
    {
        x.floor()
    }
    #[cfg(not(feature = "std"))]
    {
        libm::floor(x)
    }
}

#[inline]
pub fn round(x: f64) -> f64 {
    #[cfg(feature = "std")]
    {
        x.round()
    }
    #[cfg(not(feature = "std"))]
    {
        libm::round(x)
    }
}

/// sin(2π·t), exact at quarter-period multiples.
///
/// The argument is reduced to a quadrant before evaluation so that
/// t = 0, 1/4, 1/2, 3/4 return exactly 0, 1, 0, -1. Angle encodings rely
/// on this to keep the worked values like sin(18·2π/24) = -1 exact.
pub fn sin2pi(t: f64) -> f64 {
    let t = t - floor(t);
    let q = floor(4.0 * t);
    let r = 4.0 * t - q;
    let half_pi = core::f64::consts::FRAC_PI_2;
    match q as u32 {
        0 => {
            if r == 0.0 {
                0.0
            } else {
                libm::sin(half_pi * r)
            }
        }
        1 => {
            if r == 0.0 {
                1.0
            } else {
                libm::cos(half_pi * r)
            }
        }
        2 => {
            if r == 0.0 {
                0.0
            } else {
                -libm::sin(half_pi * r)
            }
        }
        _ => {
            if r == 0.0 {
                -1.0
            } else {
                -libm::cos(half_pi * r)
            }
        }
    }
}

/// cos(2π·t), exact at quarter-period multiples.
#[inline]
pub fn cos2pi(t: f64) -> f64 {
    sin2pi(t + 0.25)
}
