//! Radio and link performance model: two-ray ground reflection, log-distance
//! path loss with shadowing and Nakagami multipath fading, Shannon capacity,
//! throughput scaling, and transmission delay.
//!
//! Units are fixed at the API boundary: dBm for powers, MHz for bandwidth,
//! Mbps for rates, ms for delay, meters for distance. All conversions are
//! internal.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Below this modeled throughput (Mbps) the link counts as disconnected;
/// delay evaluation reports an error instead of an absurd finite value.
pub const DISCONNECT_THROUGHPUT_MBPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("distance must be positive, got {0} m")]
    NonpositiveDistance(f64),
    #[error("distance {d_m} m is below the reference distance {d0_m} m")]
    DistanceBelowReference { d_m: f64, d0_m: f64 },
    #[error("transmission rate must be positive, got {0} Mbps")]
    NonpositiveRate(f64),
    #[error("modeled throughput is numerically zero: link disconnected")]
    ZeroThroughput,
    #[error("invalid channel parameter: {0}")]
    InvalidParam(String),
}

/// Two-ray ground-reflection parameters: transmit power (W), antenna gains,
/// antenna heights (m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoRayParams {
    pub p_t_w: f64,
    pub g_t: f64,
    pub g_r: f64,
    pub h_t_m: f64,
    pub h_r_m: f64,
}

impl TwoRayParams {
    pub fn new(p_t_w: f64, g_t: f64, g_r: f64, h_t_m: f64, h_r_m: f64) -> Result<Self, ChannelError> {
        let p = TwoRayParams { p_t_w, g_t, g_r, h_t_m, h_r_m };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        for (name, v) in [
            ("p_t_w", self.p_t_w),
            ("g_t", self.g_t),
            ("g_r", self.g_r),
            ("h_t_m", self.h_t_m),
            ("h_r_m", self.h_r_m),
        ] {
            if !(v > 0.0) {
                return Err(ChannelError::InvalidParam(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Log-distance path loss: RSS at the reference distance, the reference
/// distance itself, and the path loss exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossParams {
    pub rss_d0_dbm: f64,
    #[serde(default = "default_d0")]
    pub d0_m: f64,
    pub eta: f64,
}

fn default_d0() -> f64 {
    1.0
}

impl PathLossParams {
    pub fn new(rss_d0_dbm: f64, d0_m: f64, eta: f64) -> Result<Self, ChannelError> {
        let p = PathLossParams { rss_d0_dbm, d0_m, eta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.d0_m > 0.0) {
            return Err(ChannelError::InvalidParam(format!(
                "d0_m must be > 0, got {}",
                self.d0_m
            )));
        }
        if !self.eta.is_finite() || self.eta <= 0.0 {
            return Err(ChannelError::InvalidParam(format!(
                "eta must be a positive finite number, got {}",
                self.eta
            )));
        }
        if !(1.5..=6.0).contains(&self.eta) {
            log::warn!("path loss exponent {} outside the usual [1.5, 6] range", self.eta);
        }
        Ok(())
    }
}

/// Zero-mean Gaussian shadowing in dB, with an optional first-order
/// decorrelation distance for the simulator (absent means i.i.d. draws).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShadowingParams {
    pub sigma_db: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decorrelation_m: Option<f64>,
}

impl ShadowingParams {
    pub fn new(sigma_db: f64) -> Result<Self, ChannelError> {
        let p = ShadowingParams { sigma_db, decorrelation_m: None };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.sigma_db >= 0.0) {
            return Err(ChannelError::InvalidParam(format!(
                "sigma_db must be >= 0, got {}",
                self.sigma_db
            )));
        }
        if let Some(d) = self.decorrelation_m {
            if !(d > 0.0) {
                return Err(ChannelError::InvalidParam(format!(
                    "decorrelation_m must be > 0, got {d}"
                )));
            }
        }
        Ok(())
    }
}

/// Nakagami-m multipath fading. Instantaneous power is drawn from
/// Gamma(m, Omega/m); the dB attenuation is -10*log10(power/Omega), which puts
/// the median attenuation near 0 dB. m = 1 is Rayleigh fading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultipathParams {
    pub m_shape: f64,
    pub omega_spread: f64,
    pub enabled: bool,
}

impl MultipathParams {
    pub fn new(m_shape: f64, omega_spread: f64, enabled: bool) -> Result<Self, ChannelError> {
        let p = MultipathParams { m_shape, omega_spread, enabled };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.m_shape >= 0.5) {
            return Err(ChannelError::InvalidParam(format!(
                "m_shape must be >= 0.5, got {}",
                self.m_shape
            )));
        }
        if !(self.omega_spread > 0.0) {
            return Err(ChannelError::InvalidParam(format!(
                "omega_spread must be > 0, got {}",
                self.omega_spread
            )));
        }
        Ok(())
    }
}

/// Capacity and delay parameters: bandwidth (MHz), noise power (dBm), the
/// achieved-throughput fraction, and the probe packet length (bits).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub b_mhz: f64,
    pub pn_dbm: f64,
    pub alpha_t: f64,
    pub l_bits: u64,
}

impl LinkParams {
    pub fn new(b_mhz: f64, pn_dbm: f64, alpha_t: f64, l_bits: u64) -> Result<Self, ChannelError> {
        let p = LinkParams { b_mhz, pn_dbm, alpha_t, l_bits };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.b_mhz > 0.0) {
            return Err(ChannelError::InvalidParam(format!(
                "b_mhz must be > 0, got {}",
                self.b_mhz
            )));
        }
        if !(self.alpha_t > 0.0 && self.alpha_t <= 1.0) {
            return Err(ChannelError::InvalidParam(format!(
                "alpha_t must be in (0, 1], got {}",
                self.alpha_t
            )));
        }
        if !self.pn_dbm.is_finite() {
            return Err(ChannelError::InvalidParam(format!(
                "pn_dbm must be finite, got {}",
                self.pn_dbm
            )));
        }
        Ok(())
    }
}

/// The full radio-model constant set, loadable from a config file under the
/// `"channel"` key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub two_ray: Option<TwoRayParams>,
    pub path_loss: PathLossParams,
    pub shadowing: ShadowingParams,
    pub multipath: MultipathParams,
    pub link: LinkParams,
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if let Some(tr) = &self.two_ray {
            tr.validate()?;
        }
        self.path_loss.validate()?;
        self.shadowing.validate()?;
        self.multipath.validate()?;
        self.link.validate()
    }

    /// Loads and validates params from a JSON config object with a
    /// `"channel"` key.
    pub fn from_config_str(text: &str) -> Result<Self, ChannelError> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| ChannelError::InvalidParam(format!("config parse error: {e}")))?;
        let channel = value
            .get("channel")
            .ok_or_else(|| ChannelError::InvalidParam("config has no \"channel\" key".into()))?;
        let params: ChannelParams = serde_json::from_value(channel.clone())
            .map_err(|e| ChannelError::InvalidParam(format!("channel config: {e}")))?;
        params.validate()?;
        Ok(params)
    }
}

/// Received power (W) under the two-ray ground-reflection model:
/// `p_t * g_t * g_r * h_t^2 * h_r^2 / d^4`.
pub fn two_ray_power(p: &TwoRayParams, d_m: f64) -> Result<f64, ChannelError> {
    if !(d_m > 0.0) {
        return Err(ChannelError::NonpositiveDistance(d_m));
    }
    Ok(p.p_t_w * p.g_t * p.g_r * p.h_t_m.powi(2) * p.h_r_m.powi(2) / d_m.powi(4))
}

/// Deterministic path-loss term of the RSSI model:
/// `rss_d0 - 10 * eta * log10(d / d0)` dBm.
pub fn mean_rssi(p: &PathLossParams, d_m: f64) -> Result<f64, ChannelError> {
    if d_m < p.d0_m {
        return Err(ChannelError::DistanceBelowReference { d_m, d0_m: p.d0_m });
    }
    Ok(p.rss_d0_dbm - 10.0 * p.eta * (d_m / p.d0_m).log10())
}

/// One instantaneous Nakagami-m power draw with mean `omega_spread`.
pub fn nakagami_power_draw<R: Rng + ?Sized>(mp: &MultipathParams, rng: &mut R) -> f64 {
    // Nakagami-m amplitude <=> Gamma(m, Omega/m) power.
    let gamma = Gamma::new(mp.m_shape, mp.omega_spread / mp.m_shape)
        .expect("validated multipath params");
    gamma.sample(rng)
}

/// Multipath attenuation in dB for one power draw.
pub fn multipath_attenuation_db<R: Rng + ?Sized>(mp: &MultipathParams, rng: &mut R) -> f64 {
    let power = nakagami_power_draw(mp, rng);
    -10.0 * (power / mp.omega_spread).log10()
}

/// One stochastic RSSI draw: mean path loss minus a shadowing draw minus a
/// multipath attenuation draw. Draw order is fixed (shadowing first), so a
/// given seed reproduces the same output.
pub fn sample_rssi<R: Rng + ?Sized>(
    p: &PathLossParams,
    s: &ShadowingParams,
    mp: &MultipathParams,
    d_m: f64,
    rng: &mut R,
) -> Result<f64, ChannelError> {
    let mean = mean_rssi(p, d_m)?;
    let psi = if s.sigma_db > 0.0 {
        Normal::new(0.0, s.sigma_db)
            .expect("validated sigma")
            .sample(rng)
    } else {
        0.0
    };
    let omega = if mp.enabled {
        multipath_attenuation_db(mp, rng)
    } else {
        0.0
    };
    Ok(mean - psi - omega)
}

/// First-order correlated shadowing used by the simulator: successive draws
/// decorrelate exponentially with distance traveled. Produces unit-variance
/// values; callers scale by the effective sigma.
#[derive(Debug, Clone)]
pub struct ShadowingProcess {
    decorrelation_m: Option<f64>,
    last_unit: Option<f64>,
}

impl ShadowingProcess {
    pub fn new(decorrelation_m: Option<f64>) -> Self {
        ShadowingProcess {
            decorrelation_m,
            last_unit: None,
        }
    }

    /// Next unit-variance shadowing value after moving `delta_m` meters.
    /// Falls back to i.i.d. draws when no decorrelation distance is set.
    pub fn step<R: Rng + ?Sized>(&mut self, delta_m: f64, rng: &mut R) -> f64 {
        let fresh: f64 = Normal::new(0.0, 1.0).unwrap().sample(rng);
        let unit = match (self.decorrelation_m, self.last_unit) {
            (Some(d_c), Some(prev)) => {
                let rho = (-delta_m.max(0.0) / d_c).exp();
                rho * prev + (1.0 - rho * rho).sqrt() * fresh
            }
            _ => fresh,
        };
        self.last_unit = Some(unit);
        unit
    }
}

/// Shannon capacity in Mbps: `B * log2(1 + 10^((rssi - pn)/10))` with B in MHz.
pub fn channel_capacity(lp: &LinkParams, rssi_dbm: f64) -> f64 {
    let snr = 10f64.powf((rssi_dbm - lp.pn_dbm) / 10.0);
    lp.b_mhz * (1.0 + snr).log2()
}

/// Achieved throughput in Mbps: the `alpha_t` fraction of capacity.
pub fn model_throughput(lp: &LinkParams, rssi_dbm: f64) -> f64 {
    lp.alpha_t * channel_capacity(lp, rssi_dbm)
}

/// Time to put `l_bits` on the medium at `rate_mbps`, in ms.
pub fn transmission_delay(l_bits: u64, rate_mbps: f64) -> Result<f64, ChannelError> {
    if !(rate_mbps > 0.0) {
        return Err(ChannelError::NonpositiveRate(rate_mbps));
    }
    Ok(l_bits as f64 / (rate_mbps * 1000.0))
}

/// Modeled transmission delay in ms at the modeled throughput; reports a
/// disconnection when throughput underflows.
pub fn model_delay(lp: &LinkParams, rssi_dbm: f64) -> Result<f64, ChannelError> {
    let rate = model_throughput(lp, rssi_dbm);
    if rate < DISCONNECT_THROUGHPUT_MBPS {
        return Err(ChannelError::ZeroThroughput);
    }
    transmission_delay(lp.l_bits, rate)
}
