//! Field-response channel synthesis for movable-antenna APs.
//!
//! Every channel is a deterministic function of the antenna positions, the
//! path angles and the complex path gains. Angles and gains are drawn once
//! per environment ([`draw_environment`]); moving antennas only requires
//! [`rebuild_for_layout`].
//!
//! Pairwise channels are indexed `[rx][tx]`: `iai[a][b]` maps AP `b`'s
//! transmit array onto AP `a`'s receive array, and `sensing[a][b]` is the
//! echo path AP `b` → target → AP `a` (the diagonal is the monostatic echo).

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use rand::Rng;

use crate::error::ModelError;
use crate::linalg::{cis, complex_gaussian, CMat, CVec, C64};
use crate::scenario::{distance, RngStream, Scenario, SeededRng};

/// Antenna positions (meters along each AP's array axis).
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    /// `t_a`, length N per AP.
    pub tx: Vec<Vec<f64>>,
    /// `r_a`, length M per AP.
    pub rx: Vec<Vec<f64>>,
}

impl Layout {
    /// Fixed-position λ/2 grid on every AP.
    pub fn fpa(scenario: &Scenario) -> Self {
        Layout {
            tx: vec![scenario.fpa_grid(scenario.tx_antennas, scenario.tx_range); scenario.num_aps],
            rx: vec![scenario.fpa_grid(scenario.rx_antennas, scenario.rx_range); scenario.num_aps],
        }
    }

    pub fn check(&self, scenario: &Scenario) -> Result<(), ModelError> {
        if self.tx.len() != scenario.num_aps || self.rx.len() != scenario.num_aps {
            return Err(ModelError::Dimension("layout AP count".into()));
        }
        for (what, arrays, count, (lo, hi)) in [
            ("tx", &self.tx, scenario.tx_antennas, scenario.tx_range),
            ("rx", &self.rx, scenario.rx_antennas, scenario.rx_range),
        ] {
            for (ap, pos) in arrays.iter().enumerate() {
                if pos.len() != count {
                    return Err(ModelError::Dimension(format!("{what} positions at AP {ap}")));
                }
                if let Some(&value) = pos.iter().find(|&&x| !(x >= lo && x <= hi)) {
                    return Err(ModelError::LayoutOutOfRange { what, ap, value, min: lo, max: hi });
                }
            }
        }
        Ok(())
    }
}

/// Elevation angles per channel family, all within `[−π/2, π/2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathAngles {
    /// `[a][u][l]`
    pub uplink: Vec<Vec<Vec<f64>>>,
    /// `[a][l]`, transmit side of the SI channel.
    pub si_tx: Vec<Vec<f64>>,
    /// `[a][l]`, receive side of the SI channel.
    pub si_rx: Vec<Vec<f64>>,
    /// `[rx][tx][l]`, empty on the diagonal.
    pub iai_tx: Vec<Vec<Vec<f64>>>,
    pub iai_rx: Vec<Vec<Vec<f64>>>,
    /// `[a]`, line-of-sight angle between AP `a`'s array axis and the target.
    pub sensing: Vec<f64>,
}

impl PathAngles {
    pub fn all_valid(&self) -> bool {
        let ok = |x: &f64| (-FRAC_PI_2..=FRAC_PI_2).contains(x);
        self.uplink.iter().flatten().flatten().all(ok)
            && self.si_tx.iter().flatten().all(ok)
            && self.si_rx.iter().flatten().all(ok)
            && self.iai_tx.iter().flatten().flatten().all(ok)
            && self.iai_rx.iter().flatten().flatten().all(ok)
            && self.sensing.iter().all(ok)
    }
}

/// Complex path gains of one environment draw.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSet {
    /// `h̄_u` per `[a][u]`, length `L_{u,a}`.
    pub uplink: Vec<Vec<CVec>>,
    /// `Σ_SI,a`, `L̄_SI × L_SI`.
    pub si: Vec<CMat>,
    /// `Σ_IAI` per `[rx][tx]`, `L_IAI,rx × L_IAI,tx`; 0×0 on the diagonal.
    pub iai: Vec<Vec<CMat>>,
    /// Target reflectivity `ρ_T`.
    pub reflectivity: C64,
}

/// Field-response matrices the channels were assembled from.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldResponses {
    /// `F_up(r_a)` per `[a][u]`, `L × M`.
    pub uplink: Vec<Vec<CMat>>,
    /// `F̄(r_a)`, `L̄_SI × M`.
    pub si_rx: Vec<CMat>,
    /// `Ḡ(t_a)`, `L_SI × N`.
    pub si_tx: Vec<CMat>,
    /// `F̃(r_rx)` per `[rx][tx]`.
    pub iai_rx: Vec<Vec<CMat>>,
    /// `G̃(t_tx)` per `[rx][tx]`.
    pub iai_tx: Vec<Vec<CMat>>,
    /// `f_T(r_a)`, length M.
    pub sensing_rx: Vec<CVec>,
    /// `g_T(t_a)`, length N.
    pub sensing_tx: Vec<CVec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// `h_u(r_a)` per `[a][u]`, length M.
    pub uplink: Vec<Vec<CVec>>,
    /// `H(t_a, r_a)`, M × N.
    pub si: Vec<CMat>,
    /// `G` per `[rx][tx]`, M × N; 0×0 on the diagonal.
    pub iai: Vec<Vec<CMat>>,
    /// `H_T` per `[rx][tx]`, M × N, rank one.
    pub sensing: Vec<Vec<CMat>>,
    pub frm: FieldResponses,
}

/// The two random streams channel synthesis consumes.
#[derive(Debug, Clone)]
pub struct ChannelRngs {
    pub angles: SeededRng,
    pub gains: SeededRng,
}

impl ChannelRngs {
    pub fn new(seed: u64) -> Self {
        Self::with_substream(seed, 0)
    }

    pub fn with_substream(seed: u64, substream: u32) -> Self {
        ChannelRngs {
            angles: SeededRng::with_substream(seed, RngStream::PathAngles, substream),
            gains: SeededRng::with_substream(seed, RngStream::ChannelGains, substream),
        }
    }
}

/// Transmit/receive FRM column `[e^{j(2π/λ) x cos θ_l}]_l`.
pub fn frm_vector(position: f64, angles: &[f64], wavelength: f64) -> CVec {
    let k = 2.0 * PI / wavelength;
    CVec::from_iterator(angles.len(), angles.iter().map(|th| cis(k * position * th.cos())))
}

/// Paths × antennas matrix whose k-th column is `frm_vector(positions[k])`.
pub fn assemble_frm(positions: &[f64], angles: &[f64], wavelength: f64) -> CMat {
    let mut m = CMat::zeros(angles.len(), positions.len());
    for (k, &x) in positions.iter().enumerate() {
        m.set_column(k, &frm_vector(x, angles, wavelength));
    }
    m
}

fn line_of_sight_angle(ap: [f64; 2], point: [f64; 2]) -> f64 {
    // arrays lie along the x axis; fold to [−π/2, π/2]
    (point[1] - ap[1]).atan2((point[0] - ap[0]).abs())
}

/// Draws path angles and gains for one environment realization.
pub fn draw_environment(scenario: &Scenario, rngs: &mut ChannelRngs) -> Result<(PathAngles, GainSet), ModelError> {
    let a_n = scenario.num_aps;
    let p = scenario.paths;
    let geo = &scenario.geometry;
    let pl = scenario.pathloss;

    let mut uniform = |n: usize| -> Vec<f64> {
        (0..n).map(|_| rngs.angles.random_range(-FRAC_PI_2..=FRAC_PI_2)).collect()
    };
    let uplink_angles: Vec<Vec<Vec<f64>>> =
        (0..a_n).map(|_| (0..scenario.num_users).map(|_| uniform(p.uplink)).collect()).collect();
    let si_tx: Vec<Vec<f64>> = (0..a_n).map(|_| uniform(p.si_tx)).collect();
    let si_rx: Vec<Vec<f64>> = (0..a_n).map(|_| uniform(p.si_rx)).collect();
    let mut iai_tx = vec![vec![Vec::new(); a_n]; a_n];
    let mut iai_rx = vec![vec![Vec::new(); a_n]; a_n];
    for rx in 0..a_n {
        for tx in 0..a_n {
            if rx != tx {
                iai_tx[rx][tx] = uniform(p.iai_tx);
                iai_rx[rx][tx] = uniform(p.iai_rx);
            }
        }
    }
    let sensing: Vec<f64> = geo.aps.iter().map(|&ap| line_of_sight_angle(ap, geo.target)).collect();
    let angles = PathAngles { uplink: uplink_angles, si_tx, si_rx, iai_tx, iai_rx, sensing };

    let g = &mut rngs.gains;
    let mut uplink = Vec::with_capacity(a_n);
    for a in 0..a_n {
        let mut row = Vec::with_capacity(scenario.num_users);
        for u in 0..scenario.num_users {
            let var = pl.gain(distance(geo.aps[a], geo.users[u]), pl.exp_comm)? / p.uplink as f64;
            row.push(CVec::from_fn(p.uplink, |_, _| complex_gaussian(g, var)));
        }
        uplink.push(row);
    }
    let si_var = pl.si_loss / (p.si_rx * p.si_tx) as f64;
    let si: Vec<CMat> = (0..a_n).map(|_| CMat::from_fn(p.si_rx, p.si_tx, |_, _| complex_gaussian(g, si_var))).collect();
    let mut iai = vec![vec![CMat::zeros(0, 0); a_n]; a_n];
    for rx in 0..a_n {
        for tx in 0..a_n {
            if rx != tx {
                let d = distance(geo.aps[rx], geo.aps[tx]);
                let var = pl.gain(d, pl.exp_comm)? / (p.iai_rx * p.iai_tx) as f64;
                iai[rx][tx] = CMat::from_fn(p.iai_rx, p.iai_tx, |_, _| complex_gaussian(g, var));
            }
        }
    }
    let reflectivity = cis(g.random_range(0.0..2.0 * PI)) * scenario.rcs;
    Ok((angles, GainSet { uplink, si, iai, reflectivity }))
}

/// Rebuilds every channel for `layout` from cached angles and gains.
pub fn rebuild_for_layout(
    scenario: &Scenario,
    angles: &PathAngles,
    gains: &GainSet,
    layout: &Layout,
) -> Result<ChannelSet, ModelError> {
    layout.check(scenario)?;
    let a_n = scenario.num_aps;
    let lambda = scenario.wavelength;
    if gains.uplink.len() != a_n || angles.uplink.len() != a_n {
        return Err(ModelError::Dimension("environment AP count".into()));
    }
    let geo = &scenario.geometry;
    let pl = scenario.pathloss;

    let mut frm_up = Vec::with_capacity(a_n);
    let mut uplink = Vec::with_capacity(a_n);
    for a in 0..a_n {
        let mut frms = Vec::new();
        let mut hs = Vec::new();
        for u in 0..scenario.num_users {
            let f = assemble_frm(&layout.rx[a], &angles.uplink[a][u], lambda);
            // h = (h̄ᴴ F)ᵀ
            let h = f.transpose() * gains.uplink[a][u].map(|z| z.conj());
            frms.push(f);
            hs.push(h);
        }
        frm_up.push(frms);
        uplink.push(hs);
    }

    let si_rx: Vec<CMat> = (0..a_n).map(|a| assemble_frm(&layout.rx[a], &angles.si_rx[a], lambda)).collect();
    let si_tx: Vec<CMat> = (0..a_n).map(|a| assemble_frm(&layout.tx[a], &angles.si_tx[a], lambda)).collect();
    let si: Vec<CMat> = (0..a_n).map(|a| si_rx[a].adjoint() * &gains.si[a] * &si_tx[a]).collect();

    let empty = || vec![vec![CMat::zeros(0, 0); a_n]; a_n];
    let (mut iai_rx, mut iai_tx, mut iai) = (empty(), empty(), empty());
    for rx in 0..a_n {
        for tx in 0..a_n {
            if rx == tx {
                continue;
            }
            let f = assemble_frm(&layout.rx[rx], &angles.iai_rx[rx][tx], lambda);
            let g = assemble_frm(&layout.tx[tx], &angles.iai_tx[rx][tx], lambda);
            iai[rx][tx] = f.adjoint() * &gains.iai[rx][tx] * &g;
            iai_rx[rx][tx] = f;
            iai_tx[rx][tx] = g;
        }
    }

    let sensing_rx: Vec<CVec> = (0..a_n)
        .map(|a| assemble_frm(&layout.rx[a], &[angles.sensing[a]], lambda).row(0).transpose())
        .collect();
    let sensing_tx: Vec<CVec> = (0..a_n)
        .map(|a| assemble_frm(&layout.tx[a], &[angles.sensing[a]], lambda).row(0).transpose())
        .collect();
    let mut sensing = vec![vec![CMat::zeros(0, 0); a_n]; a_n];
    for rx in 0..a_n {
        for tx in 0..a_n {
            let amp = (pl.gain(distance(geo.aps[tx], geo.target), pl.exp_sense)?
                * pl.gain(distance(geo.target, geo.aps[rx]), pl.exp_sense)?)
            .sqrt();
            sensing[rx][tx] = (&sensing_rx[rx] * sensing_tx[tx].adjoint()) * (gains.reflectivity * amp);
        }
    }

    Ok(ChannelSet {
        uplink,
        si,
        iai,
        sensing,
        frm: FieldResponses { uplink: frm_up, si_rx, si_tx, iai_rx, iai_tx, sensing_rx, sensing_tx },
    })
}

/// Draws a fresh environment and builds its channels for `layout`.
pub fn synthesize(
    scenario: &Scenario,
    layout: &Layout,
    rngs: &mut ChannelRngs,
) -> Result<(PathAngles, GainSet, ChannelSet), ModelError> {
    layout.check(scenario)?;
    let (angles, gains) = draw_environment(scenario, rngs)?;
    let channels = rebuild_for_layout(scenario, &angles, &gains, layout)?;
    Ok((angles, gains, channels))
}

/// CSV dump, one row per complex entry:
/// `family,a,a_prime,u,row,col,re,im` (`a` receiving AP, `a_prime` transmitting AP).
pub fn write_channel_csv<W: Write>(channels: &ChannelSet, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["family", "a", "a_prime", "u", "row", "col", "re", "im"])?;
    let mut emit = |fam: &str, a: usize, b: usize, u: Option<usize>, m: &CMat| -> csv::Result<()> {
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                let z = m[(r, c)];
                w.write_record([
                    fam.to_string(),
                    a.to_string(),
                    b.to_string(),
                    u.map(|x| x.to_string()).unwrap_or_default(),
                    r.to_string(),
                    c.to_string(),
                    z.re.to_string(),
                    z.im.to_string(),
                ])?;
            }
        }
        Ok(())
    };
    let a_n = channels.si.len();
    for a in 0..a_n {
        for (u, h) in channels.uplink[a].iter().enumerate() {
            emit("uplink", a, a, Some(u), &CMat::from_column_slice(h.len(), 1, h.as_slice()))?;
        }
    }
    for a in 0..a_n {
        emit("si", a, a, None, &channels.si[a])?;
    }
    for rx in 0..a_n {
        for tx in 0..a_n {
            if rx != tx {
                emit("iai", rx, tx, None, &channels.iai[rx][tx])?;
            }
        }
    }
    for rx in 0..a_n {
        for tx in 0..a_n {
            emit("sensing", rx, tx, None, &channels.sensing[rx][tx])?;
        }
    }
    w.flush()?;
    Ok(())
}
