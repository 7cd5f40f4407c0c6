//! Static system configuration, geometry, path loss and seeded randomness.
//!
//! A [`Scenario`] is built only through [`Scenario::validate`] (or the
//! presets, which go through the same checks) so every consumer can rely on
//! its invariants. Configuration files are TOML with the flat sections
//! `system`, `powers`, `cfo`, `ma`, `pathloss`, `geometry` and `rng`.
//! Quantities given in dB (`*_db`, `*_dbm`) are converted to linear scale
//! once here; the rest of the crate works in linear units only.

use std::f64::consts::PI;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, ModelError, Violation};

/// Speed of light used to derive the wavelength from a carrier frequency.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathCounts {
    /// L_{u,a}: uplink paths from each user to each AP.
    pub uplink: usize,
    /// L_SI,a: transmit-side SI paths.
    pub si_tx: usize,
    /// L̄_SI,a: receive-side SI paths.
    pub si_rx: usize,
    pub iai_tx: usize,
    pub iai_rx: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLossModel {
    /// PL₀ in linear scale.
    pub pl0: f64,
    /// Reference distance d₀ in meters.
    pub d0: f64,
    /// Exponent for AP–user and AP–AP links.
    pub exp_comm: f64,
    /// Exponent for AP–target links.
    pub exp_sense: f64,
    /// Residual self-interference attenuation (linear) after isolation.
    pub si_loss: f64,
}

impl PathLossModel {
    /// Linear gain `PL₀ (d/d₀)^(−Ω)`.
    pub fn gain(&self, distance: f64, exponent: f64) -> Result<f64, ModelError> {
        path_loss(distance, exponent, self.pl0, self.d0)
    }
}

/// `PL(d) = PL₀ (d/d₀)^(−Ω)` with `PL₀` already linear.
pub fn path_loss(distance: f64, exponent: f64, pl0: f64, d0: f64) -> Result<f64, ModelError> {
    if !(distance > 0.0) {
        return Err(ModelError::NonPositiveDistance(distance));
    }
    Ok(pl0 * (distance / d0).powf(-exponent))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub aps: Vec<[f64; 2]>,
    pub users: Vec<[f64; 2]>,
    pub target: [f64; 2],
}

impl Geometry {
    /// APs on a circle of radius 40 m, users on a 20 m circle, target 15 m
    /// from the origin.
    pub fn ring(num_aps: usize, num_users: usize) -> Self {
        let ring = |n: usize, radius: f64, offset: f64| -> Vec<[f64; 2]> {
            (0..n)
                .map(|k| {
                    let ang = offset + 2.0 * PI * k as f64 / n as f64;
                    [radius * ang.cos(), radius * ang.sin()]
                })
                .collect()
        };
        Geometry {
            aps: ring(num_aps, 40.0, PI / 4.0),
            users: ring(num_users, 20.0, 0.0),
            target: Self::target_at(15.0),
        }
    }

    /// Target placed at `distance` from the origin along a fixed bearing.
    pub fn target_at(distance: f64) -> [f64; 2] {
        let bearing = PI / 6.0;
        [distance * bearing.cos(), distance * bearing.sin()]
    }
}

pub fn distance(p: [f64; 2], q: [f64; 2]) -> f64 {
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

/// Validated system configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub num_aps: usize,
    pub num_users: usize,
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    pub subcarriers: usize,
    pub symbol_duration: f64,
    pub wavelength: f64,
    pub beta: f64,
    pub noise_power: f64,
    pub p_max_dl: f64,
    pub p_max_ul: f64,
    pub cfo_min: f64,
    pub cfo_max: f64,
    pub tx_range: (f64, f64),
    pub rx_range: (f64, f64),
    pub min_spacing: f64,
    pub paths: PathCounts,
    pub rcs: f64,
    pub pathloss: PathLossModel,
    pub geometry: Geometry,
    /// Evaluate the objective on `log2(1 + γ)` instead of raw SINRs.
    pub log_rate: bool,
    /// Draw unit-modulus QPSK pilots instead of all-ones symbols.
    pub random_symbols: bool,
    pub seed: u64,
}

impl Default for Scenario {
    /// Full-size system: A=4, U=4, N=8, M=4.
    fn default() -> Self {
        Scenario::validate(RawConfig::default()).expect("default config is valid")
    }
}

impl Scenario {
    /// Small A=2, U=2, N=M=2, S=4 system used for quick experiments and tests.
    pub fn desk() -> Self {
        let mut raw = RawConfig::default();
        raw.system.num_aps = Some(2);
        raw.system.num_users = Some(2);
        raw.system.tx_antennas = Some(2);
        raw.system.rx_antennas = Some(2);
        raw.system.subcarriers = Some(4);
        Scenario::validate(raw).expect("desk config is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Scenario::validate(raw)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Scenario::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.to_raw()).expect("scenario serializes")
    }

    /// Number of ordered AP pairs `(a, a′)` with `a ≠ a′`.
    pub fn num_pairs(&self) -> usize {
        self.num_aps * (self.num_aps - 1)
    }

    /// Length of one AP's stacked receive vector (`M·S`).
    pub fn ap_block_len(&self) -> usize {
        self.rx_antennas * self.subcarriers
    }

    /// Length of the aggregated receive vector (`A·M·S`).
    pub fn stacked_len(&self) -> usize {
        self.num_aps * self.ap_block_len()
    }

    /// Number of free CFO phases `A(A−1)S`.
    pub fn num_free_phases(&self) -> usize {
        self.num_pairs() * self.subcarriers
    }

    /// Fixed-position λ/2 grid centred on the middle of a range.
    pub fn fpa_grid(&self, count: usize, range: (f64, f64)) -> Vec<f64> {
        let spacing = (self.wavelength / 2.0).max(self.min_spacing);
        let centre = 0.5 * (range.0 + range.1);
        let half = 0.5 * spacing * (count as f64 - 1.0);
        (0..count).map(|k| centre - half + spacing * k as f64).collect()
    }

    pub fn validate(raw: RawConfig) -> Result<Self, ConfigError> {
        let mut v = Vec::new();
        let mut fail = |field: &str, message: String| {
            v.push(Violation { field: field.to_string(), message });
        };

        let sys = &raw.system;
        let num_aps = sys.num_aps.unwrap_or(4);
        let num_users = sys.num_users.unwrap_or(4);
        let tx_antennas = sys.tx_antennas.unwrap_or(8);
        let rx_antennas = sys.rx_antennas.unwrap_or(4);
        let subcarriers = sys.subcarriers.unwrap_or(8);
        for (name, val) in [
            ("system.num_aps", num_aps),
            ("system.num_users", num_users),
            ("system.tx_antennas", tx_antennas),
            ("system.rx_antennas", rx_antennas),
            ("system.subcarriers", subcarriers),
        ] {
            if val < 1 {
                fail(name, "must be at least 1".into());
            }
        }
        let symbol_duration = sys.symbol_duration.unwrap_or(1.0 / 15e3);
        if !(symbol_duration > 0.0) {
            fail("system.symbol_duration", "must be positive".into());
        }
        let wavelength = match (sys.wavelength, sys.carrier_hz) {
            (Some(_), Some(_)) => {
                fail("system.wavelength", "give either wavelength or carrier_hz, not both".into());
                f64::NAN
            }
            (Some(w), None) => w,
            (None, Some(f)) => SPEED_OF_LIGHT / f,
            (None, None) => SPEED_OF_LIGHT / 3.5e9,
        };
        if !(wavelength > 0.0 && wavelength.is_finite()) && !wavelength.is_nan() {
            fail("system.wavelength", "must be positive".into());
        }
        let beta = sys.beta.unwrap_or(0.5);
        if !(0.0..=1.0).contains(&beta) {
            fail("system.beta", format!("must lie in [0, 1], got {beta}"));
        }
        let noise_power = pick_power(sys.noise_power, sys.noise_dbm, -120.0, "system.noise_power", &mut fail);
        let paths = PathCounts {
            uplink: sys.uplink_paths.unwrap_or(4),
            si_tx: sys.si_tx_paths.unwrap_or(4),
            si_rx: sys.si_rx_paths.unwrap_or(4),
            iai_tx: sys.iai_tx_paths.unwrap_or(4),
            iai_rx: sys.iai_rx_paths.unwrap_or(4),
        };
        for (name, val) in [
            ("system.uplink_paths", paths.uplink),
            ("system.si_tx_paths", paths.si_tx),
            ("system.si_rx_paths", paths.si_rx),
            ("system.iai_tx_paths", paths.iai_tx),
            ("system.iai_rx_paths", paths.iai_rx),
        ] {
            if val < 1 {
                fail(name, "must be at least 1".into());
            }
        }

        let pw = &raw.powers;
        let p_max_dl = pick_power(pw.p_max_dl, pw.p_max_dl_dbm, 30.0, "powers.p_max_dl", &mut fail);
        let p_max_ul = pick_power(pw.p_max_ul, pw.p_max_ul_dbm, 10.0, "powers.p_max_ul", &mut fail);

        let cfo_max = raw.cfo.cfo_max.unwrap_or(200.0);
        let cfo_min = raw.cfo.cfo_min.unwrap_or(-cfo_max);
        if cfo_min > cfo_max {
            fail("cfo", format!("cfo bounds inverted: cfo_min {cfo_min} > cfo_max {cfo_max}"));
        }

        let ma = &raw.ma;
        let mut wl = |m: Option<f64>, w: Option<f64>, default_wl: f64, name: &str| match (m, w) {
            (Some(_), Some(_)) => {
                fail(name, "give either meters or wavelengths, not both".into());
                f64::NAN
            }
            (Some(m), None) => m,
            (None, Some(w)) => w * wavelength,
            (None, None) => default_wl * wavelength,
        };
        let tx_range = (wl(ma.t_min, ma.t_min_wl, -2.0, "ma.t_min"), wl(ma.t_max, ma.t_max_wl, 2.0, "ma.t_max"));
        let rx_range = (wl(ma.r_min, ma.r_min_wl, -2.0, "ma.r_min"), wl(ma.r_max, ma.r_max_wl, 2.0, "ma.r_max"));
        let min_spacing = wl(ma.min_spacing, ma.min_spacing_wl, 0.5, "ma.min_spacing");
        if !(min_spacing > 0.0) {
            fail("ma.min_spacing", "must be positive".into());
        }
        for (name, range, count) in [("ma.t", tx_range, tx_antennas), ("ma.r", rx_range, rx_antennas)] {
            if !(range.0 < range.1) {
                fail(name, format!("range [{}, {}] is empty", range.0, range.1));
            } else if (range.1 - range.0) < (count.saturating_sub(1)) as f64 * min_spacing {
                fail(
                    name,
                    format!(
                        "infeasible layout: {} antennas need {:.6} m but range width is {:.6} m",
                        count,
                        count.saturating_sub(1) as f64 * min_spacing,
                        range.1 - range.0
                    ),
                );
            }
        }

        let pl = &raw.pathloss;
        let pl0 = match (pl.pl0, pl.pl0_db) {
            (Some(_), Some(_)) => {
                fail("pathloss.pl0", "give either pl0 or pl0_db, not both".into());
                f64::NAN
            }
            (Some(x), None) => x,
            (None, Some(db)) => db_to_linear(db),
            (None, None) => db_to_linear(-30.0),
        };
        if !(pl0 > 0.0) && !pl0.is_nan() {
            fail("pathloss.pl0", "must be positive".into());
        }
        let si_loss = match (pl.si_loss, pl.si_loss_db) {
            (Some(_), Some(_)) => {
                fail("pathloss.si_loss", "give either si_loss or si_loss_db, not both".into());
                f64::NAN
            }
            (Some(x), None) => x,
            (None, Some(db)) => db_to_linear(db),
            (None, None) => db_to_linear(-110.0),
        };
        if !(si_loss > 0.0) && !si_loss.is_nan() {
            fail("pathloss.si_loss", "must be positive".into());
        }
        let pathloss = PathLossModel {
            pl0,
            d0: pl.d0.unwrap_or(1.0),
            exp_comm: pl.exp_comm.unwrap_or(2.8),
            exp_sense: pl.exp_sense.unwrap_or(2.2),
            si_loss,
        };
        if !(pathloss.d0 > 0.0) {
            fail("pathloss.d0", "must be positive".into());
        }
        if pathloss.exp_comm < 0.0 || pathloss.exp_sense < 0.0 {
            fail("pathloss", "path loss exponents must be non-negative".into());
        }
        let rcs = pl.rcs.unwrap_or(0.5);
        if !(rcs >= 0.0) {
            fail("pathloss.rcs", "must be non-negative".into());
        }

        let default_geo = Geometry::ring(num_aps, num_users);
        let g = &raw.geometry;
        let target = match (g.target, g.target_distance) {
            (Some(_), Some(_)) => {
                fail("geometry.target", "give either target or target_distance, not both".into());
                default_geo.target
            }
            (Some(t), None) => t,
            (None, Some(d)) => Geometry::target_at(d),
            (None, None) => default_geo.target,
        };
        let geometry = Geometry {
            aps: g.aps.clone().unwrap_or(default_geo.aps),
            users: g.users.clone().unwrap_or(default_geo.users),
            target,
        };
        if geometry.aps.len() != num_aps {
            fail("geometry.aps", format!("expected {num_aps} coordinates, got {}", geometry.aps.len()));
        }
        if geometry.users.len() != num_users {
            fail("geometry.users", format!("expected {num_users} coordinates, got {}", geometry.users.len()));
        }
        for (a, ap) in geometry.aps.iter().enumerate() {
            if distance(*ap, geometry.target) <= 0.0 {
                fail("geometry.target", format!("coincides with AP {a}"));
            }
            for (u, user) in geometry.users.iter().enumerate() {
                if distance(*ap, *user) <= 0.0 {
                    fail("geometry.users", format!("user {u} coincides with AP {a}"));
                }
            }
            for (b, other) in geometry.aps.iter().enumerate().skip(a + 1) {
                if distance(*ap, *other) <= 0.0 {
                    fail("geometry.aps", format!("APs {a} and {b} coincide"));
                }
            }
        }

        let seed = raw.rng.seed.unwrap_or(2024);

        if !v.is_empty() {
            return Err(ConfigError::Invalid(v));
        }
        Ok(Scenario {
            num_aps,
            num_users,
            tx_antennas,
            rx_antennas,
            subcarriers,
            symbol_duration,
            wavelength,
            beta,
            noise_power,
            p_max_dl,
            p_max_ul,
            cfo_min,
            cfo_max,
            tx_range,
            rx_range,
            min_spacing,
            paths,
            rcs,
            pathloss,
            geometry,
            log_rate: sys.log_rate.unwrap_or(false),
            random_symbols: sys.random_symbols.unwrap_or(false),
            seed,
        })
    }

    /// Canonical raw form using linear, meter-valued keys.
    pub fn to_raw(&self) -> RawConfig {
        RawConfig {
            system: SystemSection {
                num_aps: Some(self.num_aps),
                num_users: Some(self.num_users),
                tx_antennas: Some(self.tx_antennas),
                rx_antennas: Some(self.rx_antennas),
                subcarriers: Some(self.subcarriers),
                symbol_duration: Some(self.symbol_duration),
                wavelength: Some(self.wavelength),
                carrier_hz: None,
                beta: Some(self.beta),
                noise_power: Some(self.noise_power),
                noise_dbm: None,
                log_rate: Some(self.log_rate),
                random_symbols: Some(self.random_symbols),
                uplink_paths: Some(self.paths.uplink),
                si_tx_paths: Some(self.paths.si_tx),
                si_rx_paths: Some(self.paths.si_rx),
                iai_tx_paths: Some(self.paths.iai_tx),
                iai_rx_paths: Some(self.paths.iai_rx),
            },
            powers: PowersSection {
                p_max_dl: Some(self.p_max_dl),
                p_max_dl_dbm: None,
                p_max_ul: Some(self.p_max_ul),
                p_max_ul_dbm: None,
            },
            cfo: CfoSection { cfo_min: Some(self.cfo_min), cfo_max: Some(self.cfo_max) },
            ma: MaSection {
                t_min: Some(self.tx_range.0),
                t_max: Some(self.tx_range.1),
                r_min: Some(self.rx_range.0),
                r_max: Some(self.rx_range.1),
                min_spacing: Some(self.min_spacing),
                ..MaSection::default()
            },
            pathloss: PathLossSection {
                pl0: Some(self.pathloss.pl0),
                pl0_db: None,
                d0: Some(self.pathloss.d0),
                exp_comm: Some(self.pathloss.exp_comm),
                exp_sense: Some(self.pathloss.exp_sense),
                rcs: Some(self.rcs),
                si_loss: Some(self.pathloss.si_loss),
                si_loss_db: None,
            },
            geometry: GeometrySection {
                aps: Some(self.geometry.aps.clone()),
                users: Some(self.geometry.users.clone()),
                target: Some(self.geometry.target),
                target_distance: None,
            },
            rng: RngSection { seed: Some(self.seed) },
        }
    }
}

fn pick_power(
    linear: Option<f64>,
    dbm: Option<f64>,
    default_dbm: f64,
    field: &str,
    fail: &mut impl FnMut(&str, String),
) -> f64 {
    let value = match (linear, dbm) {
        (Some(_), Some(_)) => {
            fail(field, "give either the linear value or the _dbm value, not both".into());
            return f64::NAN;
        }
        (Some(x), None) => x,
        (None, Some(d)) => dbm_to_watts(d),
        (None, None) => dbm_to_watts(default_dbm),
    };
    if !(value > 0.0 && value.is_finite()) {
        fail(field, format!("must be positive, got {value}"));
    }
    value
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default)]
    pub system: SystemSection,
    #[serde(default)]
    pub powers: PowersSection,
    #[serde(default)]
    pub cfo: CfoSection,
    #[serde(default)]
    pub ma: MaSection,
    #[serde(default)]
    pub pathloss: PathLossSection,
    #[serde(default)]
    pub geometry: GeometrySection,
    #[serde(default)]
    pub rng: RngSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub num_aps: Option<usize>,
    pub num_users: Option<usize>,
    pub tx_antennas: Option<usize>,
    pub rx_antennas: Option<usize>,
    pub subcarriers: Option<usize>,
    pub symbol_duration: Option<f64>,
    pub wavelength: Option<f64>,
    pub carrier_hz: Option<f64>,
    pub beta: Option<f64>,
    pub noise_power: Option<f64>,
    pub noise_dbm: Option<f64>,
    pub log_rate: Option<bool>,
    pub random_symbols: Option<bool>,
    pub uplink_paths: Option<usize>,
    pub si_tx_paths: Option<usize>,
    pub si_rx_paths: Option<usize>,
    pub iai_tx_paths: Option<usize>,
    pub iai_rx_paths: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PowersSection {
    pub p_max_dl: Option<f64>,
    pub p_max_dl_dbm: Option<f64>,
    pub p_max_ul: Option<f64>,
    pub p_max_ul_dbm: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CfoSection {
    pub cfo_min: Option<f64>,
    pub cfo_max: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MaSection {
    pub t_min: Option<f64>,
    pub t_max: Option<f64>,
    pub r_min: Option<f64>,
    pub r_max: Option<f64>,
    pub min_spacing: Option<f64>,
    pub t_min_wl: Option<f64>,
    pub t_max_wl: Option<f64>,
    pub r_min_wl: Option<f64>,
    pub r_max_wl: Option<f64>,
    pub min_spacing_wl: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PathLossSection {
    pub pl0: Option<f64>,
    pub pl0_db: Option<f64>,
    pub d0: Option<f64>,
    pub exp_comm: Option<f64>,
    pub exp_sense: Option<f64>,
    pub rcs: Option<f64>,
    pub si_loss: Option<f64>,
    pub si_loss_db: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub aps: Option<Vec<[f64; 2]>>,
    pub users: Option<Vec<[f64; 2]>>,
    pub target: Option<[f64; 2]>,
    pub target_distance: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RngSection {
    pub seed: Option<u64>,
}

/// Purpose label of a random stream. Each consumer draws from its own
/// stream so changes in one consumer never shift another's draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RngStream {
    PathAngles,
    ChannelGains,
    Symbols,
    Exploration,
    NetworkInit,
    Replay,
    Evaluation,
    CfoSampling,
    Custom(u32),
}

impl RngStream {
    fn code(self) -> u64 {
        match self {
            RngStream::PathAngles => 1,
            RngStream::ChannelGains => 2,
            RngStream::Symbols => 3,
            RngStream::Exploration => 4,
            RngStream::NetworkInit => 5,
            RngStream::Replay => 6,
            RngStream::Evaluation => 7,
            RngStream::CfoSampling => 8,
            RngStream::Custom(k) => 0x100 + k as u64,
        }
    }
}

/// ChaCha-backed generator identified by `(seed, stream, substream)`.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream: RngStream,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: RngStream) -> Self {
        Self::with_substream(seed, stream, 0)
    }

    /// Independent stream for parallel workers sharing one seed.
    pub fn with_substream(seed: u64, stream: RngStream, substream: u32) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream((stream.code() << 32) | substream as u64);
        SeededRng { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> RngStream {
        self.stream
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
