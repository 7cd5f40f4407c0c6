//! Received-signal stacking, SINRs and receive filters.
//!
//! Stacked vectors of length `AMS` are indexed `a·MS + s·M + m`.
//! CFO pairs are ordered receiver-major: pair `(a, a′)`, `a′ ≠ a`, has index
//! `a·(A−1) + (a′ − [a′ > a])`, and the pair phase vector `u_A` is indexed
//! `p·MS + s·M + m`.
//!
//! Length-`AM` filters act on stacked vectors through replication over the
//! subcarriers, so `f_expᴴ v = fᴴ collapse(v)` and `‖f_exp‖² = S‖f‖²`. All
//! SINRs are output SINRs of the replicated filter.

use std::f64::consts::PI;

use rand::Rng;

use crate::channel::{ChannelSet, Layout};
use crate::error::ModelError;
use crate::linalg::{cis, norm_sqr, CMat, CVec, C64, ONE};
use crate::scenario::{RngStream, Scenario, SeededRng};

/// Stacking dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub aps: usize,
    pub users: usize,
    pub rx: usize,
    pub tx: usize,
    pub subcarriers: usize,
}

impl Dims {
    pub fn of(s: &Scenario) -> Self {
        Dims { aps: s.num_aps, users: s.num_users, rx: s.rx_antennas, tx: s.tx_antennas, subcarriers: s.subcarriers }
    }
    pub fn block(&self) -> usize {
        self.rx * self.subcarriers
    }
    pub fn stacked(&self) -> usize {
        self.aps * self.block()
    }
    pub fn filter_len(&self) -> usize {
        self.aps * self.rx
    }
    pub fn pairs(&self) -> usize {
        self.aps * self.aps.saturating_sub(1)
    }
}

/// Index of the ordered pair `(rx, tx)` with `rx ≠ tx`.
pub fn pair_index(num_aps: usize, rx: usize, tx: usize) -> usize {
    debug_assert!(rx != tx && rx < num_aps && tx < num_aps);
    rx * (num_aps - 1) + if tx > rx { tx - 1 } else { tx }
}

/// Ordered pairs `(rx, tx)` in index order.
pub fn pairs(num_aps: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..num_aps).flat_map(move |a| (0..num_aps).filter(move |&b| b != a).map(move |b| (a, b)))
}

/// Inter-AP CFOs `Δf_{a,a′}` in hertz, one per ordered pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CfoOffsets {
    pub num_aps: usize,
    pub values: Vec<f64>,
}

impl CfoOffsets {
    pub fn zeros(num_aps: usize) -> Self {
        CfoOffsets { num_aps, values: vec![0.0; num_aps * num_aps.saturating_sub(1)] }
    }

    pub fn uniform<R: Rng + ?Sized>(num_aps: usize, lo: f64, hi: f64, rng: &mut R) -> Self {
        let n = num_aps * num_aps.saturating_sub(1);
        let values = (0..n).map(|_| if hi > lo { rng.random_range(lo..=hi) } else { lo }).collect();
        CfoOffsets { num_aps, values }
    }

    pub fn get(&self, rx: usize, tx: usize) -> f64 {
        self.values[pair_index(self.num_aps, rx, tx)]
    }

    pub fn set(&mut self, rx: usize, tx: usize, v: f64) {
        let i = pair_index(self.num_aps, rx, tx);
        self.values[i] = v;
    }

    pub fn clamp(&mut self, lo: f64, hi: f64) {
        for v in &mut self.values {
            *v = v.clamp(lo, hi);
        }
    }
}

/// `u_{a,a′}`: entries `e^{j2π s Δf T_sym}` for `s = 1..S`, each repeated M times.
pub fn cfo_phase_vector(delta_f: f64, scenario: &Scenario) -> CVec {
    phase_vector(delta_f, scenario.symbol_duration, scenario.subcarriers, scenario.rx_antennas)
}

pub fn phase_vector(delta_f: f64, symbol_duration: f64, subcarriers: usize, rx: usize) -> CVec {
    CVec::from_fn(subcarriers * rx, |i, _| cis(2.0 * PI * (i / rx + 1) as f64 * delta_f * symbol_duration))
}

/// `u_A`, the concatenation of all pair phase vectors.
pub fn stacked_phases(cfo: &CfoOffsets, scenario: &Scenario) -> CVec {
    let block = scenario.subcarriers * scenario.rx_antennas;
    let mut out = CVec::zeros(cfo.values.len() * block);
    for (p, &df) in cfo.values.iter().enumerate() {
        out.rows_mut(p * block, block).copy_from(&cfo_phase_vector(df, scenario));
    }
    out
}

/// Pilot symbols: `x_a[s]` per AP and subcarrier, `x_u` per user.
#[derive(Debug, Clone, PartialEq)]
pub struct Symbols {
    pub ap: Vec<Vec<C64>>,
    pub user: Vec<C64>,
}

impl Symbols {
    pub fn ones(scenario: &Scenario) -> Self {
        Symbols { ap: vec![vec![ONE; scenario.subcarriers]; scenario.num_aps], user: vec![ONE; scenario.num_users] }
    }

    /// Unit-modulus symbols with uniform phases.
    pub fn draw<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Self {
        let mut ph = || cis(rng.random_range(0.0..2.0 * PI));
        let ap = (0..scenario.num_aps).map(|_| (0..scenario.subcarriers).map(|_| ph()).collect()).collect();
        let user = (0..scenario.num_users).map(|_| ph()).collect();
        Symbols { ap, user }
    }

    /// Ones, or a draw from the symbol stream when the scenario asks for random symbols.
    pub fn for_scenario(scenario: &Scenario) -> Self {
        if scenario.random_symbols {
            Self::draw(scenario, &mut SeededRng::new(scenario.seed, RngStream::Symbols))
        } else {
            Self::ones(scenario)
        }
    }
}

/// Decision variables of one design.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceState {
    /// `w_a`, length N per AP.
    pub w: Vec<CVec>,
    /// Echo filter, length AM.
    pub z: CVec,
    /// Uplink filters `û_u`, length AM per user.
    pub u: Vec<CVec>,
    /// Uplink powers in watts.
    pub p: Vec<f64>,
    pub layout: Layout,
}

impl ResourceState {
    /// Full-power beams steered at the target, equal uplink powers,
    /// uniform per-AP-normalized filters, fixed-position arrays.
    pub fn initial(scenario: &Scenario, channels: &ChannelSet) -> Self {
        let m = scenario.rx_antennas;
        let w = channels
            .frm
            .sensing_tx
            .iter()
            .map(|g| g * C64::from((scenario.p_max_dl / norm_sqr(g)).sqrt()))
            .collect();
        let uniform = CVec::from_element(scenario.num_aps * m, C64::from(1.0 / (m as f64).sqrt()));
        ResourceState {
            w,
            z: uniform.clone(),
            u: vec![uniform; scenario.num_users],
            p: vec![scenario.p_max_ul / scenario.num_users as f64; scenario.num_users],
            layout: Layout::fpa(scenario),
        }
    }

    /// Lists every violated constraint; empty when feasible.
    pub fn violations(&self, scenario: &Scenario, tol: f64) -> Vec<String> {
        let mut out = Vec::new();
        for (a, w) in self.w.iter().enumerate() {
            if norm_sqr(w) > scenario.p_max_dl * (1.0 + tol) {
                out.push(format!("beamformer power at AP {a}"));
            }
        }
        if self.p.iter().any(|&p| p < 0.0) {
            out.push("negative uplink power".into());
        }
        if self.p.iter().sum::<f64>() > scenario.p_max_ul * (1.0 + tol) {
            out.push("uplink power budget".into());
        }
        let m = scenario.rx_antennas;
        let blocks_ok = |f: &CVec| (0..scenario.num_aps).all(|a| (norm_sqr(&f.rows(a * m, m).into_owned()) - 1.0).abs() <= tol);
        if !blocks_ok(&self.z) {
            out.push("echo filter block norm".into());
        }
        if !self.u.iter().all(blocks_ok) {
            out.push("uplink filter block norm".into());
        }
        if let Err(e) = self.layout.check(scenario) {
            out.push(e.to_string());
        }
        for (what, arrays) in [("tx", &self.layout.tx), ("rx", &self.layout.rx)] {
            for (a, pos) in arrays.iter().enumerate() {
                let mut s = pos.clone();
                s.sort_by(f64::total_cmp);
                if s.windows(2).any(|w| w[1] - w[0] < scenario.min_spacing * (1.0 - tol)) {
                    out.push(format!("{what} spacing at AP {a}"));
                }
            }
        }
        out
    }
}

/// Replicates a length-AM filter over the subcarriers.
pub fn expand_filter(f: &CVec, d: &Dims) -> CVec {
    let (m, s) = (d.rx, d.subcarriers);
    CVec::from_fn(d.stacked(), |i, _| {
        let a = i / (m * s);
        f[a * m + i % m]
    })
}

/// Sums a stacked vector over subcarriers (adjoint of [`expand_filter`]).
pub fn collapse(v: &CVec, d: &Dims) -> CVec {
    let (m, s) = (d.rx, d.subcarriers);
    let mut out = CVec::zeros(d.filter_len());
    for (i, x) in v.iter().enumerate() {
        let a = i / (m * s);
        out[a * m + i % m] += x;
    }
    out
}

/// Components of the stacked received vector
/// `y = Ξ̄ + B̄ + D̄ + D̃u_A + Ẽu_A + n`.
///
/// `echo` is the monostatic target return and `si` the self-interference.
/// The cross blocks of `D̃` and `Ẽ` are diagonal, so only their diagonals
/// are kept, one length-MS vector per ordered pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalBlocks {
    pub dims: Dims,
    /// Per-user uplink contribution `1_S ⊗ h_u √p_u x_u`.
    pub uplink: Vec<CVec>,
    pub echo: CVec,
    pub si: CVec,
    /// Diagonal of the `(a, a′)` cross-sensing block.
    pub cross_sensing: Vec<CVec>,
    /// Diagonal of the `(a, a′)` inter-AP interference block.
    pub iai: Vec<CVec>,
    /// `u_A`.
    pub phases: CVec,
    pub noise_power: f64,
}

impl SignalBlocks {
    /// `Ξ̄`.
    pub fn uplink_total(&self) -> CVec {
        let mut out = CVec::zeros(self.dims.stacked());
        for x in &self.uplink {
            out += x;
        }
        out
    }

    fn apply_cross(&self, diag: &[CVec], phases: &CVec) -> CVec {
        let b = self.dims.block();
        let mut out = CVec::zeros(self.dims.stacked());
        for (p, (a, _)) in pairs(self.dims.aps).enumerate() {
            for i in 0..b {
                out[a * b + i] += diag[p][i] * phases[p * b + i];
            }
        }
        out
    }

    /// `D̃ u` for an arbitrary phase vector.
    pub fn cross_sensing_term(&self, phases: &CVec) -> CVec {
        self.apply_cross(&self.cross_sensing, phases)
    }

    /// `Ẽ u` for an arbitrary phase vector.
    pub fn iai_term(&self, phases: &CVec) -> CVec {
        self.apply_cross(&self.iai, phases)
    }

    fn dense(&self, diag: &[CVec]) -> CMat {
        let b = self.dims.block();
        let mut m = CMat::zeros(self.dims.stacked(), self.dims.pairs() * b);
        for (p, (a, _)) in pairs(self.dims.aps).enumerate() {
            for i in 0..b {
                m[(a * b + i, p * b + i)] = diag[p][i];
            }
        }
        m
    }

    /// Dense `D̃` (AMS × A(A−1)MS).
    pub fn cross_sensing_matrix(&self) -> CMat {
        self.dense(&self.cross_sensing)
    }

    /// Dense `Ẽ`.
    pub fn iai_matrix(&self) -> CMat {
        self.dense(&self.iai)
    }

    /// Noise-free `y` at the stored phases.
    pub fn received(&self) -> CVec {
        self.uplink_total()
            + &self.echo
            + &self.si
            + self.cross_sensing_term(&self.phases)
            + self.iai_term(&self.phases)
    }

    /// Same blocks with the CFO phases replaced.
    pub fn with_phases(&self, phases: CVec) -> Self {
        SignalBlocks { phases, ..self.clone() }
    }
}

fn check_dims(channels: &ChannelSet, res: &ResourceState, cfo: &CfoOffsets, sym: &Symbols, d: &Dims) {
    assert_eq!(channels.si.len(), d.aps, "channel AP count");
    assert_eq!(res.w.len(), d.aps, "beamformer count");
    assert_eq!(res.p.len(), d.users, "power count");
    assert_eq!(cfo.values.len(), d.pairs(), "cfo pair count");
    assert_eq!(sym.ap.len(), d.aps, "symbol AP count");
    assert_eq!(sym.user.len(), d.users, "symbol user count");
    assert!(sym.ap.iter().all(|x| x.len() == d.subcarriers), "symbol subcarrier count");
}

/// Term-by-term per-AP, per-subcarrier received signal `[a][s]`.
pub fn per_subcarrier_rx(
    scenario: &Scenario,
    channels: &ChannelSet,
    res: &ResourceState,
    cfo: &CfoOffsets,
    sym: &Symbols,
    noise: Option<&[Vec<CVec>]>,
) -> Vec<Vec<CVec>> {
    let d = Dims::of(scenario);
    check_dims(channels, res, cfo, sym, &d);
    let t = scenario.symbol_duration;
    let mut out = vec![vec![CVec::zeros(d.rx); d.subcarriers]; d.aps];
    for a in 0..d.aps {
        for s0 in 0..d.subcarriers {
            let s = (s0 + 1) as f64;
            let y = &mut out[a][s0];
            for u in 0..d.users {
                *y += &channels.uplink[a][u] * (C64::from(res.p[u].sqrt()) * sym.user[u]);
            }
            let own = sym.ap[a][s0];
            *y += &channels.si[a] * &res.w[a] * own;
            *y += &channels.sensing[a][a] * &res.w[a] * own;
            for b in 0..d.aps {
                if b == a {
                    continue;
                }
                let rot = cis(2.0 * PI * s * cfo.get(a, b) * t) * sym.ap[b][s0];
                *y += &channels.sensing[a][b] * &res.w[b] * rot;
                *y += &channels.iai[a][b] * &res.w[b] * rot;
            }
            if let Some(n) = noise {
                *y += &n[a][s0];
            }
        }
    }
    out
}

/// Stacks `[a][s]` vectors in `a·MS + s·M + m` order.
pub fn stack(per: &[Vec<CVec>]) -> CVec {
    let parts: Vec<C64> = per.iter().flatten().flat_map(|v| v.iter().copied()).collect();
    CVec::from_vec(parts)
}

/// `X_a v`: repeats `v` over subcarriers scaled by `x_a[s]`.
fn modulate(v: &CVec, symbols: &[C64]) -> CVec {
    let m = v.len();
    CVec::from_fn(m * symbols.len(), |i, _| v[i % m] * symbols[i / m])
}

pub fn assemble_blocks(
    scenario: &Scenario,
    channels: &ChannelSet,
    res: &ResourceState,
    cfo: &CfoOffsets,
    sym: &Symbols,
) -> SignalBlocks {
    let d = Dims::of(scenario);
    check_dims(channels, res, cfo, sym, &d);
    let ones = vec![ONE; d.subcarriers];
    let b = d.block();
    let mut uplink = Vec::with_capacity(d.users);
    for u in 0..d.users {
        let mut v = CVec::zeros(d.stacked());
        let amp = C64::from(res.p[u].sqrt()) * sym.user[u];
        for a in 0..d.aps {
            v.rows_mut(a * b, b).copy_from(&modulate(&(&channels.uplink[a][u] * amp), &ones));
        }
        uplink.push(v);
    }
    let mut echo = CVec::zeros(d.stacked());
    let mut si = CVec::zeros(d.stacked());
    for a in 0..d.aps {
        echo.rows_mut(a * b, b).copy_from(&modulate(&(&channels.sensing[a][a] * &res.w[a]), &sym.ap[a]));
        si.rows_mut(a * b, b).copy_from(&modulate(&(&channels.si[a] * &res.w[a]), &sym.ap[a]));
    }
    let mut cross_sensing = Vec::with_capacity(d.pairs());
    let mut iai = Vec::with_capacity(d.pairs());
    for (a, a2) in pairs(d.aps) {
        cross_sensing.push(modulate(&(&channels.sensing[a][a2] * &res.w[a2]), &sym.ap[a2]));
        iai.push(modulate(&(&channels.iai[a][a2] * &res.w[a2]), &sym.ap[a2]));
    }
    SignalBlocks {
        dims: d,
        uplink,
        echo,
        si,
        cross_sensing,
        iai,
        phases: stacked_phases(cfo, scenario),
        noise_power: scenario.noise_power,
    }
}

/// Desired and interfering collapsed vectors for one filter; output SINR is
/// `|fᴴd|² / (Σ|fᴴv|² + σ²S‖f‖²)`.
struct SinrTerms {
    desired: CVec,
    interference: Vec<CVec>,
}

fn comm_terms(blocks: &SignalBlocks, user: usize) -> SinrTerms {
    let d = &blocks.dims;
    let mut interference: Vec<CVec> =
        (0..d.users).filter(|&v| v != user).map(|v| collapse(&blocks.uplink[v], d)).collect();
    interference.push(collapse(&blocks.echo, d));
    interference.push(collapse(&blocks.si, d));
    interference.push(collapse(&blocks.cross_sensing_term(&blocks.phases), d));
    interference.push(collapse(&blocks.iai_term(&blocks.phases), d));
    SinrTerms { desired: collapse(&blocks.uplink[user], d), interference }
}

fn radar_terms(blocks: &SignalBlocks) -> SinrTerms {
    let d = &blocks.dims;
    SinrTerms {
        desired: collapse(&blocks.echo, d),
        interference: vec![
            collapse(&blocks.uplink_total(), d),
            collapse(&blocks.si, d),
            collapse(&blocks.cross_sensing_term(&blocks.phases), d),
            collapse(&blocks.iai_term(&blocks.phases), d),
        ],
    }
}

fn output_sinr(terms: &SinrTerms, f: &CVec, noise: f64) -> f64 {
    let num = f.dotc(&terms.desired).norm_sqr();
    if num == 0.0 {
        return 0.0;
    }
    let den: f64 = terms.interference.iter().map(|v| f.dotc(v).norm_sqr()).sum::<f64>() + noise * norm_sqr(f);
    num / den
}

/// `γ_u^c` for the filter stored in `res`.
pub fn comm_sinr(blocks: &SignalBlocks, res: &ResourceState, user: usize) -> f64 {
    comm_sinr_with(blocks, &res.u[user], user)
}

pub fn comm_sinr_with(blocks: &SignalBlocks, filter: &CVec, user: usize) -> f64 {
    let noise = blocks.noise_power * blocks.dims.subcarriers as f64;
    output_sinr(&comm_terms(blocks, user), filter, noise)
}

/// `γ^r` for the echo filter stored in `res`.
pub fn radar_sinr(blocks: &SignalBlocks, res: &ResourceState) -> f64 {
    radar_sinr_with(blocks, &res.z)
}

pub fn radar_sinr_with(blocks: &SignalBlocks, filter: &CVec) -> f64 {
    let noise = blocks.noise_power * blocks.dims.subcarriers as f64;
    output_sinr(&radar_terms(blocks), filter, noise)
}

/// `β γ^r + (1−β) Σ γ_u^c`.
pub fn wcsr(gamma_r: f64, gamma_c: &[f64], beta: f64) -> f64 {
    beta * gamma_r + (1.0 - beta) * gamma_c.iter().sum::<f64>()
}

/// Objective with the optional `log2(1+γ)` mapping.
pub fn objective(scenario: &Scenario, gamma_r: f64, gamma_c: &[f64]) -> f64 {
    if scenario.log_rate {
        let c: Vec<f64> = gamma_c.iter().map(|g| (1.0 + g).log2()).collect();
        wcsr((1.0 + gamma_r).log2(), &c, scenario.beta)
    } else {
        wcsr(gamma_r, gamma_c, scenario.beta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WcsrReport {
    pub gamma_r: f64,
    pub gamma_c: Vec<f64>,
    pub objective: f64,
}

impl WcsrReport {
    pub fn from_blocks(scenario: &Scenario, blocks: &SignalBlocks, res: &ResourceState) -> Self {
        let gamma_r = radar_sinr(blocks, res);
        let gamma_c: Vec<f64> = (0..blocks.dims.users).map(|u| comm_sinr(blocks, res, u)).collect();
        let objective = objective(scenario, gamma_r, &gamma_c);
        WcsrReport { gamma_r, gamma_c, objective }
    }

    pub fn csv_header(users: usize) -> Vec<String> {
        let mut h = vec!["gamma_r".to_string()];
        h.extend((1..=users).map(|u| format!("gamma_c_{u}")));
        h.push("objective".into());
        h
    }

    pub fn csv_row(&self) -> Vec<String> {
        let mut r = vec![self.gamma_r.to_string()];
        r.extend(self.gamma_c.iter().map(|g| g.to_string()));
        r.push(self.objective.to_string());
        r
    }
}

/// Assembles the blocks for `cfo` and evaluates every SINR.
pub fn evaluate(
    scenario: &Scenario,
    channels: &ChannelSet,
    res: &ResourceState,
    cfo: &CfoOffsets,
    sym: &Symbols,
) -> WcsrReport {
    WcsrReport::from_blocks(scenario, &assemble_blocks(scenario, channels, res, cfo, sym), res)
}

/// Scales each length-M block to unit norm; an all-zero block becomes uniform.
pub fn normalize_blocks(f: &CVec, m: usize) -> CVec {
    let mut out = f.clone();
    for a in 0..f.len() / m {
        let mut blk = out.rows_mut(a * m, m);
        let n = blk.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
            continue;
        }
        if n > 0.0 && n.is_finite() {
            blk /= C64::from(n);
        } else {
            blk.fill(C64::from(1.0 / (m as f64).sqrt()));
        }
    }
    out
}

fn covariance(terms: &SinrTerms, noise: f64) -> CMat {
    let n = terms.desired.len();
    let mut r = CMat::from_diagonal_element(n, n, C64::from(noise));
    for v in &terms.interference {
        r += v * v.adjoint();
    }
    r
}

fn quotient(r: &CMat, d: &CVec, f: &CVec) -> f64 {
    f.dotc(d).norm_sqr() / f.dotc(&(r * f)).re
}

/// Ascent of the SINR quotient over unit-norm AP blocks.
fn refine_on_blocks(r: &CMat, d: &CVec, f0: CVec, m: usize, iters: usize) -> CVec {
    let mut f = f0;
    let mut q = quotient(r, d, &f);
    let mut step = 1.0;
    for _ in 0..iters {
        let rf = r * &f;
        let den = f.dotc(&rf).re;
        let fd = d.dotc(&f);
        if fd.norm_sqr() == 0.0 {
            break;
        }
        // gradient of log SINR w.r.t. conj(f)
        let mut g = d / fd.conj() - rf / C64::from(den);
        for a in 0..f.len() / m {
            let fa = f.rows(a * m, m).into_owned();
            let c = fa.dotc(&g.rows(a * m, m).into_owned()).re;
            let mut ga = g.rows_mut(a * m, m);
            ga -= fa * C64::from(c);
        }
        let gn = g.norm();
        if gn < 1e-12 {
            break;
        }
        let mut improved = false;
        for _ in 0..30 {
            let cand = normalize_blocks(&(&f + &g * C64::from(step / gn)), m);
            let qc = quotient(r, d, &cand);
            if qc > q {
                f = cand;
                improved = (qc - q) > 1e-13 * q;
                q = qc;
                step = (step * 2.0).min(4.0);
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    f
}

fn whitened_filter(terms: &SinrTerms, noise: f64, m: usize) -> CVec {
    let r = covariance(terms, noise);
    let d = &terms.desired;
    let mmse = r.clone().cholesky().map(|c| c.solve(d)).unwrap_or_else(|| d.clone());
    let starts = [normalize_blocks(&mmse, m), normalize_blocks(d, m)];
    starts
        .into_iter()
        .map(|f0| refine_on_blocks(&r, d, f0, m, 200))
        .map(|f| (quotient(&r, d, &f), f))
        .fold(None, |best: Option<(f64, CVec)>, (q, f)| match best {
            Some((bq, _)) if bq >= q || q.is_nan() => best,
            _ => Some((q, f)),
        })
        .map(|(_, f)| f)
        .unwrap_or_else(|| normalize_blocks(d, m))
}

/// Interference-whitened matched filters, renormalized per AP block and
/// refined by ascent on the per-block unit spheres.
pub fn optimal_receivers(blocks: &SignalBlocks) -> (CVec, Vec<CVec>) {
    let d = &blocks.dims;
    let noise = blocks.noise_power * d.subcarriers as f64;
    let z = whitened_filter(&radar_terms(blocks), noise, d.rx);
    let u = (0..d.users).map(|u| whitened_filter(&comm_terms(blocks, u), noise, d.rx)).collect();
    (z, u)
}

/// Replaces the filters in `res` by [`optimal_receivers`] for `cfo`.
pub fn refresh_receivers(
    scenario: &Scenario,
    channels: &ChannelSet,
    res: &mut ResourceState,
    cfo: &CfoOffsets,
    sym: &Symbols,
) {
    let (z, u) = optimal_receivers(&assemble_blocks(scenario, channels, res, cfo, sym));
    res.z = z;
    res.u = u;
}

/// Rejects a resource state whose vectors do not match the scenario.
pub fn check_resources(scenario: &Scenario, res: &ResourceState) -> Result<(), ModelError> {
    let am = scenario.num_aps * scenario.rx_antennas;
    if res.w.len() != scenario.num_aps || res.w.iter().any(|w| w.len() != scenario.tx_antennas) {
        return Err(ModelError::Dimension("beamformers".into()));
    }
    if res.z.len() != am || res.u.len() != scenario.num_users || res.u.iter().any(|u| u.len() != am) {
        return Err(ModelError::Dimension("receive filters".into()));
    }
    if res.p.len() != scenario.num_users {
        return Err(ModelError::Dimension("uplink powers".into()));
    }
    res.layout.check(scenario)
}

#[allow(dead_code)]
fn zero_blocks(d: Dims) -> SignalBlocks {
    SignalBlocks {
        dims: d,
        uplink: vec![CVec::zeros(d.stacked()); d.users],
        echo: CVec::zeros(d.stacked()),
        si: CVec::zeros(d.stacked()),
        cross_sensing: vec![CVec::zeros(d.block()); d.pairs()],
        iai: vec![CVec::zeros(d.block()); d.pairs()],
        phases: CVec::from_element(d.pairs() * d.block(), ONE),
        noise_power: 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{synthesize, ChannelRngs};
    use crate::linalg::{complex_gaussian, max_abs_diff, ZERO};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny(a: usize, u: usize, m: usize, n: usize, s: usize) -> Scenario {
        let mut raw = Scenario::desk().to_raw();
        raw.system.num_aps = Some(a);
        raw.system.num_users = Some(u);
        raw.system.rx_antennas = Some(m);
        raw.system.tx_antennas = Some(n);
        raw.system.subcarriers = Some(s);
        raw.system.random_symbols = Some(true);
        raw.geometry = Default::default();
        Scenario::validate(raw).unwrap()
    }

    fn random_instance(sc: &Scenario, seed: u64) -> (ChannelSet, ResourceState, CfoOffsets, Symbols) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, _, ch) = synthesize(sc, &Layout::fpa(sc), &mut ChannelRngs::new(seed)).unwrap();
        let mut res = ResourceState::initial(sc, &ch);
        for w in &mut res.w {
            *w = CVec::from_fn(sc.tx_antennas, |_, _| complex_gaussian(&mut rng, 1.0));
        }
        let am = sc.num_aps * sc.rx_antennas;
        res.z = normalize_blocks(&CVec::from_fn(am, |_, _| complex_gaussian(&mut rng, 1.0)), sc.rx_antennas);
        for f in &mut res.u {
            *f = normalize_blocks(&CVec::from_fn(am, |_, _| complex_gaussian(&mut rng, 1.0)), sc.rx_antennas);
        }
        for p in &mut res.p {
            *p = rng.random_range(0.0..1.0) * sc.p_max_ul / sc.num_users as f64;
        }
        let cfo = CfoOffsets::uniform(sc.num_aps, sc.cfo_min, sc.cfo_max, &mut rng);
        let sym = Symbols::draw(sc, &mut rng);
        (ch, res, cfo, sym)
    }

    #[test]
    fn pair_indexing_is_dense() {
        for a_n in 1..5 {
            let idx: Vec<usize> = pairs(a_n).map(|(a, b)| pair_index(a_n, a, b)).collect();
            assert_eq!(idx, (0..a_n * (a_n - 1)).collect::<Vec<_>>());
        }
    }

    #[test]
    fn cfo_phase_vector_examples() {
        let mut sc = tiny(1, 1, 1, 1, 2);
        assert!(cfo_phase_vector(0.0, &sc).iter().all(|z| *z == ONE));
        sc.symbol_duration = 1.0;
        let v = cfo_phase_vector(0.5, &sc);
        assert!((v[0] - C64::new(-1.0, 0.0)).norm() < 1e-15);
        assert!((v[1] - ONE).norm() < 1e-15);

        let sc = tiny(2, 1, 3, 2, 4);
        let df = 137.25;
        let v = cfo_phase_vector(df, &sc);
        let mut k = 0;
        for s in 1..=4 {
            let e = C64::from_polar(1.0, 2.0 * PI * s as f64 * df * sc.symbol_duration);
            for _ in 0..3 {
                assert!((v[k] - e).norm() < 1e-14);
                assert!((v[k].norm() - 1.0).abs() < 1e-15);
                k += 1;
            }
        }
    }

    #[test]
    fn zero_inputs_give_zero_signal() {
        let sc = tiny(2, 2, 2, 2, 3);
        let (ch, mut res, cfo, sym) = random_instance(&sc, 3);
        for w in &mut res.w {
            w.fill(ZERO);
        }
        res.p.fill(0.0);
        let rx = per_subcarrier_rx(&sc, &ch, &res, &cfo, &sym, None);
        assert!(rx.iter().flatten().all(|v| v.iter().all(|z| *z == ZERO)));
        let blocks = assemble_blocks(&sc, &ch, &res, &cfo, &sym);
        assert!(blocks.echo.iter().chain(blocks.si.iter()).all(|z| *z == ZERO));
        assert!(blocks.cross_sensing.iter().chain(&blocks.iai).flatten().all(|z| *z == ZERO));
        assert_eq!(radar_sinr(&blocks, &res), 0.0);
    }

    #[test]
    fn single_ap_has_no_cross_terms() {
        let sc = tiny(1, 2, 2, 2, 3);
        let (ch, res, cfo, sym) = random_instance(&sc, 4);
        let blocks = assemble_blocks(&sc, &ch, &res, &cfo, &sym);
        assert!(blocks.cross_sensing.is_empty() && blocks.iai.is_empty());
        assert_eq!(blocks.phases.len(), 0);
        let y = stack(&per_subcarrier_rx(&sc, &ch, &res, &cfo, &sym, None));
        let expect = blocks.uplink_total() + &blocks.echo + &blocks.si;
        assert!(max_abs_diff(&y, &expect) < 1e-12);
    }

    #[test]
    fn zero_cfo_reduces_to_plain_cross_sum() {
        let sc = tiny(3, 1, 2, 2, 3);
        let (ch, res, _, sym) = random_instance(&sc, 5);
        let blocks = assemble_blocks(&sc, &ch, &res, &CfoOffsets::zeros(3), &sym);
        assert!(blocks.phases.iter().all(|z| *z == ONE));
        let direct = blocks.cross_sensing_matrix() * CVec::from_element(blocks.phases.len(), ONE);
        assert!(max_abs_diff(&direct, &blocks.cross_sensing_term(&blocks.phases)) < 1e-15);
    }

    #[test]
    fn dense_cross_blocks_only_off_diagonal() {
        let sc = tiny(3, 1, 2, 2, 2);
        let (ch, res, cfo, sym) = random_instance(&sc, 6);
        let blocks = assemble_blocks(&sc, &ch, &res, &cfo, &sym);
        let dm = blocks.cross_sensing_matrix();
        let b = blocks.dims.block();
        for (p, (a, _)) in pairs(3).enumerate() {
            for r in 0..dm.nrows() {
                for c in p * b..(p + 1) * b {
                    if dm[(r, c)] != ZERO {
                        assert_eq!(r / b, a);
                        assert_eq!(r % b, c % b);
                    }
                }
            }
        }
        let via_dense = blocks.cross_sensing_matrix() * &blocks.phases + blocks.iai_matrix() * &blocks.phases;
        let via_diag = blocks.cross_sensing_term(&blocks.phases) + blocks.iai_term(&blocks.phases);
        assert!(max_abs_diff(&via_dense, &via_diag) < 1e-12);
    }

    /// Scalar-loop oracle for both SINRs, independent of the block code.
    fn oracle_sinrs(sc: &Scenario, ch: &ChannelSet, res: &ResourceState, cfo: &CfoOffsets, sym: &Symbols) -> (f64, Vec<f64>) {
        let (a_n, u_n, m, s_n) = (sc.num_aps, sc.num_users, sc.rx_antennas, sc.subcarriers);
        // filter output of a per-(a,s) field: Σ_a Σ_s Σ_m conj(f[a,m]) v[a][s][m]
        let out = |f: &CVec, field: &dyn Fn(usize, usize) -> CVec| -> C64 {
            let mut acc = ZERO;
            for a in 0..a_n {
                for s in 0..s_n {
                    let v = field(a, s);
                    for k in 0..m {
                        acc += f[a * m + k].conj() * v[k];
                    }
                }
            }
            acc
        };
        let user = |u: usize| move |a: usize, _s: usize| &ch.uplink[a][u] * (C64::from(res.p[u].sqrt()) * sym.user[u]);
        let echo = |a: usize, s: usize| &ch.sensing[a][a] * &res.w[a] * sym.ap[a][s];
        let si = |a: usize, s: usize| &ch.si[a] * &res.w[a] * sym.ap[a][s];
        let cross = |iai: bool| {
            move |a: usize, s: usize| {
                let mut v = CVec::zeros(m);
                for b in (0..a_n).filter(|&b| b != a) {
                    let h = if iai { &ch.iai[a][b] } else { &ch.sensing[a][b] };
                    let ph = C64::from_polar(1.0, 2.0 * PI * (s + 1) as f64 * cfo.get(a, b) * sc.symbol_duration);
                    v += h * &res.w[b] * (ph * sym.ap[b][s]);
                }
                v
            }
        };
        let noise = |f: &CVec| sc.noise_power * s_n as f64 * norm_sqr(f);
        let f = &res.z;
        let mut den = noise(f) + out(f, &si).norm_sqr() + out(f, &cross(false)).norm_sqr() + out(f, &cross(true)).norm_sqr();
        let xi = |a: usize, s: usize| (0..u_n).fold(CVec::zeros(m), |acc, u| acc + user(u)(a, s));
        den += out(f, &xi).norm_sqr();
        let gr = out(f, &echo).norm_sqr() / den;
        let mut gc = Vec::new();
        for u in 0..u_n {
            let f = &res.u[u];
            let mut den = noise(f)
                + out(f, &echo).norm_sqr()
                + out(f, &si).norm_sqr()
                + out(f, &cross(false)).norm_sqr()
                + out(f, &cross(true)).norm_sqr();
            for v in (0..u_n).filter(|&v| v != u) {
                den += out(f, &user(v)).norm_sqr();
            }
            gc.push(out(f, &user(u)).norm_sqr() / den);
        }
        (gr, gc)
    }

    #[test]
    fn sinrs_match_scalar_oracle() {
        for seed in 0..6 {
            let sc = tiny(2 + seed as usize % 2, 2, 2, 3, 3);
            let (ch, res, cfo, sym) = random_instance(&sc, seed);
            let rep = evaluate(&sc, &ch, &res, &cfo, &sym);
            let (gr, gc) = oracle_sinrs(&sc, &ch, &res, &cfo, &sym);
            assert!((rep.gamma_r - gr).abs() <= 1e-10 * gr.max(1e-300), "{} vs {gr}", rep.gamma_r);
            for (x, y) in rep.gamma_c.iter().zip(&gc) {
                assert!((x - y).abs() <= 1e-10 * y.max(1e-300));
            }
        }
    }

    #[test]
    fn matched_filter_comm_sinr() {
        let sc = tiny(1, 1, 3, 2, 4);
        let d = Dims::of(&sc);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = CVec::from_fn(3, |_, _| complex_gaussian(&mut rng, 1e-6));
        let p: f64 = 0.01;
        let mut blocks = zero_blocks(d);
        blocks.noise_power = sc.noise_power;
        blocks.uplink[0] = modulate(&(&h * C64::from(p.sqrt())), &[ONE; 4]);
        let f = &h / C64::from(h.norm());
        let g = comm_sinr_with(&blocks, &f, 0);
        let expect = p * 4.0 * norm_sqr(&h) / sc.noise_power;
        assert!((g - expect).abs() < 1e-10 * expect);
        blocks.uplink[0].fill(ZERO);
        assert_eq!(comm_sinr_with(&blocks, &f, 0), 0.0);
    }

    #[test]
    fn matched_filter_radar_sinr() {
        let sc = tiny(1, 1, 3, 2, 4);
        let d = Dims::of(&sc);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = CVec::from_fn(3, |_, _| complex_gaussian(&mut rng, 1e-9));
        let mut blocks = zero_blocks(d);
        blocks.noise_power = sc.noise_power;
        blocks.echo = modulate(&b, &[ONE; 4]);
        let z = &b / C64::from(b.norm());
        let g = radar_sinr_with(&blocks, &z);
        let expect = norm_sqr(&blocks.echo) / sc.noise_power;
        assert!((g - expect).abs() < 1e-10 * expect);
    }

    #[test]
    fn wcsr_examples() {
        assert_eq!(wcsr(2.0, &[1.0, 3.0], 1.0), 2.0);
        assert_eq!(wcsr(2.0, &[1.0, 3.0], 0.0), 4.0);
        assert_eq!(wcsr(2.0, &[1.0, 3.0], 0.5), 3.0);
    }

    #[test]
    fn white_noise_gives_matched_filter() {
        let sc = tiny(1, 1, 3, 2, 2);
        let d = Dims::of(&sc);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = CVec::from_fn(3, |_, _| complex_gaussian(&mut rng, 1.0));
        let mut blocks = zero_blocks(d);
        blocks.uplink[0] = modulate(&h, &[ONE; 2]);
        let (_, u) = optimal_receivers(&blocks);
        let expect = &h / C64::from(h.norm());
        assert!((u[0].dotc(&expect).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn optimal_receivers_beat_random_filters() {
        for seed in 0..4 {
            let sc = tiny(2, 2, 3, 2, 3);
            let (ch, res, cfo, sym) = random_instance(&sc, 100 + seed);
            let blocks = assemble_blocks(&sc, &ch, &res, &cfo, &sym);
            let (z, u) = optimal_receivers(&blocks);
            let gr = radar_sinr_with(&blocks, &z);
            let gc: Vec<f64> = (0..2).map(|k| comm_sinr_with(&blocks, &u[k], k)).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..100 {
                let f = normalize_blocks(&CVec::from_fn(6, |_, _| complex_gaussian(&mut rng, 1.0)), 3);
                assert!(radar_sinr_with(&blocks, &f) <= gr * (1.0 + 1e-9));
                for k in 0..2 {
                    assert!(comm_sinr_with(&blocks, &f, k) <= gc[k] * (1.0 + 1e-9));
                }
            }
        }
    }

    #[test]
    fn optimal_receivers_idempotent() {
        let sc = tiny(2, 2, 2, 2, 3);
        let (ch, mut res, cfo, sym) = random_instance(&sc, 9);
        refresh_receivers(&sc, &ch, &mut res, &cfo, &sym);
        let first = res.clone();
        refresh_receivers(&sc, &ch, &mut res, &cfo, &sym);
        assert!((first.z.dotc(&res.z).norm() - sc.num_aps as f64).abs() < 1e-10);
        for (x, y) in first.u.iter().zip(&res.u) {
            assert!((x.dotc(y).norm() - sc.num_aps as f64).abs() < 1e-10);
        }
    }

    #[test]
    fn initial_state_is_feasible() {
        let sc = Scenario::default();
        let (_, _, ch) = synthesize(&sc, &Layout::fpa(&sc), &mut ChannelRngs::new(1)).unwrap();
        let res = ResourceState::initial(&sc, &ch);
        assert!(res.violations(&sc, 1e-9).is_empty(), "{:?}", res.violations(&sc, 1e-9));
        assert!(check_resources(&sc, &res).is_ok());
    }

    #[test]
    fn report_csv_row_shape() {
        let r = WcsrReport { gamma_r: 1.5, gamma_c: vec![2.0, 3.0], objective: 3.25 };
        assert_eq!(WcsrReport::csv_header(2), ["gamma_r", "gamma_c_1", "gamma_c_2", "objective"]);
        assert_eq!(r.csv_row(), ["1.5", "2", "3", "3.25"]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn blocks_match_per_subcarrier_oracle(
            a in 1usize..=3, u in 1usize..=2, m in 1usize..=3, n in 1usize..=3, s in 1usize..=4, seed in 0u64..1000
        ) {
            let sc = tiny(a, u, m, n, s);
            let (ch, res, cfo, sym) = random_instance(&sc, seed);
            let y = stack(&per_subcarrier_rx(&sc, &ch, &res, &cfo, &sym, None));
            let blocks = assemble_blocks(&sc, &ch, &res, &cfo, &sym);
            let scale = y.iter().map(|z| z.norm()).fold(0.0, f64::max);
            prop_assert!(max_abs_diff(&y, &blocks.received()) <= 1e-10 * scale.max(1.0));
        }

        #[test]
        fn sinr_invariant_to_filter_phase(seed in 0u64..500, theta in -PI..PI) {
            let sc = tiny(2, 2, 2, 2, 2);
            let (ch, res, cfo, sym) = random_instance(&sc, seed);
            let blocks = assemble_blocks(&sc, &ch, &res, &cfo, &sym);
            let rot = cis(theta);
            let g0 = radar_sinr_with(&blocks, &res.z);
            let g1 = radar_sinr_with(&blocks, &(&res.z * rot));
            prop_assert!((g0 - g1).abs() <= 1e-12 * g0.max(1e-300));
            let c0 = comm_sinr_with(&blocks, &res.u[1], 1);
            let c1 = comm_sinr_with(&blocks, &(&res.u[1] * rot), 1);
            prop_assert!((c0 - c1).abs() <= 1e-12 * c0.max(1e-300));
        }

        #[test]
        fn comm_sinr_monotone_in_power(seed in 0u64..500, bump in 1.0f64..4.0) {
            let sc = tiny(2, 2, 2, 2, 2);
            let (ch, mut res, cfo, sym) = random_instance(&sc, seed);
            let g0 = evaluate(&sc, &ch, &res, &cfo, &sym).gamma_c[0];
            res.p[0] *= bump;
            let g1 = evaluate(&sc, &ch, &res, &cfo, &sym).gamma_c[0];
            prop_assert!(g1 >= g0 * (1.0 - 1e-12));
        }

        #[test]
        fn radar_numerator_quadratic_in_beam_scale(seed in 0u64..500, k in 0.1f64..3.0) {
            let sc = tiny(2, 1, 2, 2, 2);
            let (ch, mut res, cfo, sym) = random_instance(&sc, seed);
            let b0 = assemble_blocks(&sc, &ch, &res, &cfo, &sym);
            let n0 = collapse(&b0.echo, &b0.dims).dotc(&res.z).norm_sqr();
            for w in &mut res.w { *w *= C64::from(k); }
            let b1 = assemble_blocks(&sc, &ch, &res, &cfo, &sym);
            let n1 = collapse(&b1.echo, &b1.dims).dotc(&res.z).norm_sqr();
            prop_assert!((n1 - k * k * n0).abs() <= 1e-10 * n1.max(1e-300));
        }

        #[test]
        fn wcsr_linear(gr in 0.0f64..1e3, gc in 0.0f64..1e3, beta in 0.0f64..=1.0, t in 0.0f64..5.0) {
            let lhs = wcsr(t * gr, &[t * gc], beta);
            prop_assert!((lhs - t * wcsr(gr, &[gc], beta)).abs() <= 1e-9 * lhs.max(1.0));
        }

        #[test]
        fn expand_collapse_adjoint(seed in 0u64..500) {
            let d = Dims { aps: 2, users: 1, rx: 3, tx: 2, subcarriers: 4 };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = CVec::from_fn(6, |_, _| complex_gaussian(&mut rng, 1.0));
            let v = CVec::from_fn(24, |_, _| complex_gaussian(&mut rng, 1.0));
            let lhs = expand_filter(&f, &d).dotc(&v);
            let rhs = f.dotc(&collapse(&v, &d));
            prop_assert!((lhs - rhs).norm() < 1e-12);
            prop_assert!((norm_sqr(&expand_filter(&f, &d)) - 4.0 * norm_sqr(&f)).abs() < 1e-10);
        }
    }
}
