//! Solar zenith and azimuth at a landmark centre.
//!
//! Low-precision ephemeris (mean longitude/anomaly series, equation of
//! centre, nutation-corrected obliquity, equation of time). Accurate to a few
//! hundredths of a degree for 1950–2050; refraction and parallax are ignored.

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};
use rayon::prelude::*;

use crate::archive::LandmarkChip;
use crate::num::Real;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolarError {
    #[error("latitude {0} outside [-90, 90]")]
    InvalidLatitude(f64),
    #[error("timestamp {0} outside 1950-2050")]
    TimestampOutOfRange(String),
    #[error("sun position failed for {} chip(s); first: chip {}: {}", .0.len(), .0[0].0, .0[0].1)]
    Batch(Vec<(usize, Box<SolarError>)>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SunPosition<T> {
    /// Degrees from the local vertical, in [0, 180].
    pub zenith: T,
    /// Degrees clockwise from north, in [0, 360).
    pub azimuth: T,
}

impl<T: Real> SunPosition<T> {
    pub fn elevation(&self) -> T {
        T::lit(90.0) - self.zenith
    }
}

/// Julian centuries since J2000.0 (TT ~ UT at this accuracy).
fn julian_centuries(when: NaiveDateTime) -> f64 {
    let j2000 = NaiveDate::from_ymd_opt(2000, 1, 1)
        .unwrap()
        .and_hms_opt(12, 0, 0)
        .unwrap();
    let secs = (when - j2000).num_seconds() as f64 + when.nanosecond() as f64 * 1e-9;
    secs / 86_400.0 / 36_525.0
}

pub fn sun_position<T: Real>(lat: T, lon: T, when: NaiveDateTime) -> Result<SunPosition<T>, SolarError> {
    if !(lat.abs() <= T::lit(90.0)) {
        return Err(SolarError::InvalidLatitude(lat.as_f64()));
    }
    if !(1950..=2050).contains(&when.year()) {
        return Err(SolarError::TimestampOutOfRange(when.to_string()));
    }
    let d = T::lit;
    let rad = |x: T| x.to_radians();
    let jc = T::lit(julian_centuries(when));

    let mean_long = (d(280.46646) + jc * (d(36000.76983) + jc * d(0.0003032))) % d(360.0);
    let mean_anom = d(357.52911) + jc * (d(35999.05029) - d(0.0001537) * jc);
    let ecc = d(0.016708634) - jc * (d(0.000042037) + d(0.0000001267) * jc);
    let m = rad(mean_anom);
    let centre = m.sin() * (d(1.914602) - jc * (d(0.004817) + d(0.000014) * jc))
        + (d(2.0) * m).sin() * (d(0.019993) - d(0.000101) * jc)
        + (d(3.0) * m).sin() * d(0.000289);
    let omega = rad(d(125.04) - d(1934.136) * jc);
    let app_long = mean_long + centre - d(0.00569) - d(0.00478) * omega.sin();
    let mean_obliq = d(23.0)
        + (d(26.0) + (d(21.448) - jc * (d(46.815) + jc * (d(0.00059) - jc * d(0.001813)))) / d(60.0))
            / d(60.0);
    let obliq = rad(mean_obliq + d(0.00256) * omega.cos());
    let decl = (obliq.sin() * rad(app_long).sin()).asin();

    let y = (obliq / d(2.0)).tan().powi(2);
    let l0 = rad(mean_long);
    let eot_rad = y * (d(2.0) * l0).sin() - d(2.0) * ecc * m.sin()
        + d(4.0) * ecc * y * m.sin() * (d(2.0) * l0).cos()
        - d(0.5) * y * y * (d(4.0) * l0).sin()
        - d(1.25) * ecc * ecc * (d(2.0) * m).sin();
    let eot_min = d(4.0) * eot_rad.to_degrees();

    let minutes = T::lit(when.num_seconds_from_midnight() as f64 / 60.0);
    let true_solar = minutes + eot_min + d(4.0) * lon;
    let mut hour_angle = (true_solar / d(4.0) - d(180.0)) % d(360.0);
    if hour_angle < d(-180.0) {
        hour_angle += d(360.0);
    } else if hour_angle > d(180.0) {
        hour_angle -= d(360.0);
    }
    let h = rad(hour_angle);
    let phi = rad(lat);

    let cos_zen = (phi.sin() * decl.sin() + phi.cos() * decl.cos() * h.cos())
        .max(-T::one())
        .min(T::one());
    let zenith = cos_zen.acos().to_degrees();
    let az = h.sin().atan2(h.cos() * phi.sin() - decl.tan() * phi.cos()).to_degrees() + d(180.0);
    let azimuth = if az >= d(360.0) { az - d(360.0) } else { az };
    Ok(SunPosition { zenith, azimuth })
}

/// Fills `sza` on every chip from its centre coordinates and timestamp.
/// All failures are collected; chips that succeeded are still annotated.
pub fn annotate_sza(chips: &mut [LandmarkChip]) -> Result<(), SolarError> {
    let failures: Vec<(usize, Box<SolarError>)> = chips
        .par_iter_mut()
        .enumerate()
        .filter_map(|(i, c)| {
            match sun_position(c.latlon.lat, c.latlon.lon, c.time.datetime()) {
                Ok(p) => {
                    c.sza = Some(p.zenith);
                    None
                }
                Err(e) => Some((i, Box::new(e))),
            }
        })
        .collect();
    if failures.is_empty() {
        Ok(())
    } else {
        Err(SolarError::Batch(failures))
    }
}
