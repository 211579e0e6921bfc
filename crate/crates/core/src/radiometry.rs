//! Level-1.5 counts to radiance, top-of-atmosphere reflectance and
//! brightness temperature.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Zip;

use crate::archive::{LandmarkChip, N_CHANNELS};
use crate::num::Real;

pub const VIS06: u8 = 1;
pub const VIS08: u8 = 2;
pub const NIR16: u8 = 3;
pub const IR39: u8 = 4;
pub const WV62: u8 = 5;
pub const WV73: u8 = 6;
pub const IR87: u8 = 7;
pub const IR97: u8 = 8;
pub const IR108: u8 = 9;
pub const IR120: u8 = 10;
pub const IR134: u8 = 11;

/// Value written into calibrated cubes where no physical value exists
/// (reflectance with the sun below the horizon, non-positive thermal radiance).
pub const INVALID: f64 = -999.0;

pub const MAX_COUNT: u16 = 1023;

/// Built-in MSG-2 calibration (the file shipped in `data/msg2.cal`).
pub const MSG2_DEFAULT: &str = include_str!("../data/msg2.cal");

pub fn is_solar(channel: u8) -> bool {
    (VIS06..=NIR16).contains(&channel)
}

pub fn is_thermal(channel: u8) -> bool {
    (IR39..=IR134).contains(&channel)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RadiometryError {
    #[error("channel {0} has no calibration entry")]
    UnknownChannel(u8),
    #[error("count {0} outside 0..=1023")]
    CountOutOfRange(f64),
    #[error("channel {0} is not a reflective channel")]
    NonSolarChannel(u8),
    #[error("channel {0} is not a thermal channel")]
    NonThermalChannel(u8),
    #[error("sun below horizon (sza {0} >= 90)")]
    SunBelowHorizon(f64),
    #[error("non-positive radiance {0}")]
    NonPositiveRadiance(f64),
    #[error("chip is already calibrated")]
    AlreadyCalibrated,
    #[error("chip has no solar zenith angle")]
    MissingSza,
    #[error("calibration config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanckCoefficients<T> {
    /// Central wavenumber, cm^-1.
    pub nu_c: T,
    pub alpha: T,
    pub beta: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelCalibration<T> {
    pub slope: T,
    pub offset: T,
    pub esun: Option<T>,
    pub planck: Option<PlanckCoefficients<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig<T> {
    pub channels: BTreeMap<u8, ChannelCalibration<T>>,
    pub c1: T,
    pub c2: T,
}

impl<T: Real> CalibrationConfig<T> {
    pub fn msg2_default() -> Self {
        Self::parse(MSG2_DEFAULT).expect("built-in calibration parses")
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, RadiometryError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| RadiometryError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parses flat `key = value` text (`#` comments). Keys: `c1`, `c2`,
    /// `ch<N>.slope`, `ch<N>.offset`, `ch<N>.esun`, `ch<N>.nu_c`,
    /// `ch<N>.alpha`, `ch<N>.beta`.
    pub fn parse(text: &str) -> Result<Self, RadiometryError> {
        let err = |m: String| RadiometryError::Config(m);
        let mut raw: BTreeMap<u8, BTreeMap<String, f64>> = BTreeMap::new();
        let (mut c1, mut c2) = (None, None);
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| err(format!("line {}: bad number {:?}", lineno + 1, value.trim())))?;
            match key {
                "c1" => c1 = Some(value),
                "c2" => c2 = Some(value),
                _ => {
                    let (ch, field) = key
                        .strip_prefix("ch")
                        .and_then(|k| k.split_once('.'))
                        .ok_or_else(|| err(format!("line {}: unknown key {key:?}", lineno + 1)))?;
                    let ch: u8 = ch
                        .parse()
                        .map_err(|_| err(format!("line {}: bad channel in {key:?}", lineno + 1)))?;
                    if !["slope", "offset", "esun", "nu_c", "alpha", "beta"].contains(&field) {
                        return Err(err(format!("line {}: unknown field {field:?}", lineno + 1)));
                    }
                    raw.entry(ch).or_default().insert(field.to_string(), value);
                }
            }
        }
        let c1 = c1.ok_or_else(|| err("missing c1".into()))?;
        let c2 = c2.ok_or_else(|| err("missing c2".into()))?;
        if !(c1 > 0.0 && c2 > 0.0) {
            return Err(err("c1 and c2 must be positive".into()));
        }
        let mut channels = BTreeMap::new();
        for (ch, f) in raw {
            let get = |k: &str| f.get(k).copied();
            let slope = get("slope").ok_or_else(|| err(format!("ch{ch}: missing slope")))?;
            let offset = get("offset").ok_or_else(|| err(format!("ch{ch}: missing offset")))?;
            if !(slope > 0.0) {
                return Err(err(format!("ch{ch}: slope must be positive")));
            }
            let esun = match get("esun") {
                Some(e) if e > 0.0 => Some(T::lit(e)),
                Some(_) => return Err(err(format!("ch{ch}: esun must be positive"))),
                None => None,
            };
            let planck = match (get("nu_c"), get("alpha"), get("beta")) {
                (None, None, None) => None,
                (Some(nu_c), Some(alpha), Some(beta)) => {
                    if !(nu_c > 0.0 && alpha > 0.0) {
                        return Err(err(format!("ch{ch}: nu_c and alpha must be positive")));
                    }
                    Some(PlanckCoefficients { nu_c: T::lit(nu_c), alpha: T::lit(alpha), beta: T::lit(beta) })
                }
                _ => return Err(err(format!("ch{ch}: nu_c, alpha and beta must be given together"))),
            };
            if is_solar(ch) && esun.is_none() {
                return Err(err(format!("ch{ch}: reflective channel needs esun")));
            }
            if is_thermal(ch) && planck.is_none() {
                return Err(err(format!("ch{ch}: thermal channel needs nu_c/alpha/beta")));
            }
            channels.insert(
                ch,
                ChannelCalibration { slope: T::lit(slope), offset: T::lit(offset), esun, planck },
            );
        }
        Ok(CalibrationConfig { channels, c1: T::lit(c1), c2: T::lit(c2) })
    }

    pub fn channel(&self, ch: u8) -> Result<&ChannelCalibration<T>, RadiometryError> {
        self.channels.get(&ch).ok_or(RadiometryError::UnknownChannel(ch))
    }

    fn esun(&self, ch: u8) -> Result<T, RadiometryError> {
        if !is_solar(ch) {
            return Err(RadiometryError::NonSolarChannel(ch));
        }
        self.channel(ch)?.esun.ok_or(RadiometryError::NonSolarChannel(ch))
    }

    fn planck(&self, ch: u8) -> Result<PlanckCoefficients<T>, RadiometryError> {
        if !is_thermal(ch) {
            return Err(RadiometryError::NonThermalChannel(ch));
        }
        self.channel(ch)?.planck.ok_or(RadiometryError::NonThermalChannel(ch))
    }
}

/// Sun–Earth distance in astronomical units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SunEarthDistance<T>(pub T);

impl<T: Real> SunEarthDistance<T> {
    /// First-order eccentricity series in day of year.
    pub fn for_day_of_year(doy: u32) -> Self {
        let x = T::lit(2.0) * T::PI() * T::lit(doy as f64) / T::lit(365.0);
        SunEarthDistance(T::one() / (T::one() + T::lit(0.033) * x.cos()).sqrt())
    }
}

pub fn counts_to_radiance<T: Real>(
    count: u16,
    channel: u8,
    cal: &CalibrationConfig<T>,
) -> Result<T, RadiometryError> {
    if count > MAX_COUNT {
        return Err(RadiometryError::CountOutOfRange(count as f64));
    }
    let c = cal.channel(channel)?;
    Ok(c.offset + c.slope * T::lit(count as f64))
}

/// `r = pi * L * d^2 / (E_sun * cos(sza))`, unclamped.
pub fn radiance_to_reflectance<T: Real>(
    radiance: T,
    channel: u8,
    sza: T,
    day_of_year: u32,
    cal: &CalibrationConfig<T>,
) -> Result<T, RadiometryError> {
    let esun = cal.esun(channel)?;
    if !(sza < T::lit(90.0)) {
        return Err(RadiometryError::SunBelowHorizon(sza.as_f64()));
    }
    let d = SunEarthDistance::<T>::for_day_of_year(day_of_year).0;
    Ok(T::PI() * radiance * d * d / (esun * sza.to_radians().cos()))
}

/// Inverse of [`radiance_to_reflectance`].
pub fn reflectance_to_radiance<T: Real>(
    reflectance: T,
    channel: u8,
    sza: T,
    day_of_year: u32,
    cal: &CalibrationConfig<T>,
) -> Result<T, RadiometryError> {
    let esun = cal.esun(channel)?;
    if !(sza < T::lit(90.0)) {
        return Err(RadiometryError::SunBelowHorizon(sza.as_f64()));
    }
    let d = SunEarthDistance::<T>::for_day_of_year(day_of_year).0;
    Ok(reflectance * esun * sza.to_radians().cos() / (T::PI() * d * d))
}

/// `T = (C2 nu_c / ln(1 + C1 nu_c^3 / L) - beta) / alpha`.
pub fn radiance_to_bt<T: Real>(radiance: T, channel: u8, cal: &CalibrationConfig<T>) -> Result<T, RadiometryError> {
    let p = cal.planck(channel)?;
    if !(radiance > T::zero()) {
        return Err(RadiometryError::NonPositiveRadiance(radiance.as_f64()));
    }
    let x = cal.c1 * p.nu_c.powi(3) / radiance;
    Ok((cal.c2 * p.nu_c / x.ln_1p() - p.beta) / p.alpha)
}

/// Effective radiance of a blackbody at `kelvin` in a thermal channel.
pub fn bt_to_radiance<T: Real>(kelvin: T, channel: u8, cal: &CalibrationConfig<T>) -> Result<T, RadiometryError> {
    let p = cal.planck(channel)?;
    let t_eff = p.alpha * kelvin + p.beta;
    Ok(cal.c1 * p.nu_c.powi(3) / (cal.c2 * p.nu_c / t_eff).exp_m1())
}

/// Calibrates one raw count of any channel into its physical value
/// (reflectance or brightness temperature), or [`INVALID`].
fn calibrate_value(
    raw: f64,
    channel: u8,
    sza: f64,
    doy: u32,
    cal: &CalibrationConfig<f64>,
) -> Result<f64, RadiometryError> {
    if !(0.0..=MAX_COUNT as f64).contains(&raw) || raw.fract() != 0.0 {
        return Err(RadiometryError::CountOutOfRange(raw));
    }
    let l = counts_to_radiance(raw as u16, channel, cal)?;
    if is_solar(channel) {
        match radiance_to_reflectance(l, channel, sza, doy, cal) {
            Ok(r) => Ok(r),
            Err(RadiometryError::SunBelowHorizon(_)) => Ok(INVALID),
            Err(e) => Err(e),
        }
    } else {
        match radiance_to_bt(l, channel, cal) {
            Ok(t) => Ok(t),
            Err(RadiometryError::NonPositiveRadiance(_)) => Ok(INVALID),
            Err(e) => Err(e),
        }
    }
}

/// Converts a raw-count chip into reflectance (channels 1–3) and brightness
/// temperature (channels 4–11). Requires `chip.sza`.
pub fn calibrate_chip(chip: &LandmarkChip, cal: &CalibrationConfig<f64>) -> Result<LandmarkChip, RadiometryError> {
    if chip.calibrated {
        return Err(RadiometryError::AlreadyCalibrated);
    }
    let sza = chip.sza.ok_or(RadiometryError::MissingSza)?;
    let doy = chip.time.day_of_year();
    for &ch in &chip.channels {
        cal.channel(ch)?;
    }
    let mut out = chip.clone();
    for k in 0..N_CHANNELS {
        let ch = chip.channels[k];
        let mut first_err = None;
        Zip::from(out.cube.index_axis_mut(ndarray::Axis(2), k)).for_each(|v| {
            match calibrate_value(*v, ch, sza, doy, cal) {
                Ok(x) => *v = x,
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        });
        if let Some(e) = first_err {
            return Err(e);
        }
    }
    out.calibrated = true;
    Ok(out)
}
