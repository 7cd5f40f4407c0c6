//! Worst-case inter-AP CFO search.
//!
//! The CFO enters the SINRs only through the cross-sensing and IAI terms,
//! which are linear in the free phases `φ` (one unit-modulus entry per
//! ordered AP pair and subcarrier, index `p·S + s`). Each filter therefore
//! sees a quadratic `φᴴKφ` in its denominator. The solver alternates
//! fractional-programming auxiliaries, a penalized manifold subproblem in
//! `φ`, and a closed-form box-constrained CFO fit, and keeps the candidate
//! with the lowest exact objective.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;

use crate::error::SolverError;
use crate::linalg::{cis, CMat, CVec, C64};
use crate::manifold::{metric, rcg_minimize, RcgConfig, RcgTrace};
use crate::scenario::{RngStream, Scenario, SeededRng};
use crate::signal::{
    collapse, pairs, stacked_phases, CfoOffsets, Dims, ResourceState, SignalBlocks, WcsrReport,
};

/// Ratio constants below this are treated as degenerate.
pub const DEGENERATE: f64 = 1e-30;

/// How the cross-sensing and IAI outputs enter a kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelForm {
    /// `|o_D|² + |o_E|²`, matching the exact SINR denominators.
    #[default]
    Additive,
    /// `|o_D + o_E|²`.
    Combined,
}

/// Weights on the ratio terms of the penalty cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    /// `1/c`: the reciprocal ratios themselves.
    Reciprocal,
    /// `η²`: first-order expansion of the objective at the current point.
    #[default]
    Linearized,
}

/// Phase model used to fit a CFO to the free phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CfoModel {
    /// `∠φ_s = 2π s T_sym Δf`, the inverse of the expansion.
    #[default]
    Subcarrier,
    /// `∠φ_s = −T_sym Δf` for every `s`.
    Literal,
}

/// One ratio `c / (φᴴKφ + c̄)` with `K = Σ_j conj(k_j) k_jᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioTerm {
    pub signal: f64,
    pub rest: f64,
    pub coeffs: Vec<CVec>,
}

impl RatioTerm {
    /// `φᴴKφ`.
    pub fn quad(&self, phi: &CVec) -> f64 {
        self.coeffs.iter().map(|k| k.dot(phi).norm_sqr()).sum()
    }

    /// `Kφ`.
    pub fn apply(&self, phi: &CVec) -> CVec {
        let mut out = CVec::zeros(phi.len());
        for k in &self.coeffs {
            out += k.map(|z| z.conj()) * k.dot(phi);
        }
        out
    }

    pub fn kernel(&self) -> CMat {
        let n = self.coeffs.first().map_or(0, |k| k.len());
        let mut m = CMat::zeros(n, n);
        for k in &self.coeffs {
            m += k.map(|z| z.conj()) * k.transpose();
        }
        m
    }

    pub fn denominator(&self, phi: &CVec) -> f64 {
        self.quad(phi) + self.rest
    }

    pub fn ratio(&self, phi: &CVec) -> f64 {
        self.signal / self.denominator(phi)
    }
}

/// Ratio constants and kernels for the radar and every user.
#[derive(Debug, Clone, PartialEq)]
pub struct FpState {
    pub beta: f64,
    pub radar: RatioTerm,
    pub comm: Vec<RatioTerm>,
}

impl FpState {
    /// `β γ^r + (1−β) Σ γ_u` at the free phases.
    pub fn surrogate_wcsr(&self, phi: &CVec) -> f64 {
        self.beta * self.radar.ratio(phi) + (1.0 - self.beta) * self.comm.iter().map(|t| t.ratio(phi)).sum::<f64>()
    }
}

/// Output of `f` on a cross term, as coefficients on the free phases.
fn cross_coeffs(f: &CVec, diag: &[CVec], d: &Dims) -> CVec {
    let (m, s_n) = (d.rx, d.subcarriers);
    let mut c = CVec::zeros(d.pairs() * s_n);
    for (p, (a, _)) in pairs(d.aps).enumerate() {
        for s in 0..s_n {
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..m {
                acc += f[a * m + k].conj() * diag[p][s * m + k];
            }
            c[p * s_n + s] = acc;
        }
    }
    c
}

fn ratio_term(f: &CVec, desired: &CVec, rest: &[CVec], blocks: &SignalBlocks, form: KernelForm) -> RatioTerm {
    let d = &blocks.dims;
    let noise = blocks.noise_power * d.subcarriers as f64 * f.norm_squared();
    let out = |v: &CVec| f.dotc(&collapse(v, d)).norm_sqr();
    let cd = cross_coeffs(f, &blocks.cross_sensing, d);
    let ce = cross_coeffs(f, &blocks.iai, d);
    let coeffs = match form {
        KernelForm::Additive => vec![cd, ce],
        KernelForm::Combined => vec![cd + ce],
    };
    RatioTerm { signal: out(desired), rest: rest.iter().map(out).sum::<f64>() + noise, coeffs }
}

/// Constants and kernels for the filters in `res`. The phases stored in
/// `blocks` are ignored.
pub fn build_fp_state(blocks: &SignalBlocks, res: &ResourceState, beta: f64, form: KernelForm) -> FpState {
    let radar = ratio_term(&res.z, &blocks.echo, &[blocks.uplink_total(), blocks.si.clone()], blocks, form);
    let comm = (0..blocks.dims.users)
        .map(|u| {
            let mut rest: Vec<CVec> =
                (0..blocks.dims.users).filter(|&v| v != u).map(|v| blocks.uplink[v].clone()).collect();
            rest.push(blocks.echo.clone());
            rest.push(blocks.si.clone());
            ratio_term(&res.u[u], &blocks.uplink[u], &rest, blocks, form)
        })
        .collect();
    FpState { beta, radar, comm }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Eta {
    pub radar: f64,
    pub comm: Vec<f64>,
}

/// `η* = √c / (φᴴKφ + c̄)` for every ratio.
pub fn fp_eta_update(fp: &FpState, phi: &CVec) -> Eta {
    let eta = |t: &RatioTerm| t.signal.sqrt() / t.denominator(phi);
    Eta { radar: eta(&fp.radar), comm: fp.comm.iter().map(eta).collect() }
}

/// Largest relative gap in `2η√c − η²·den = c/den` over all ratios.
pub fn fp_identity_residual(fp: &FpState, eta: &Eta, phi: &CVec) -> f64 {
    let gap = |t: &RatioTerm, e: f64| {
        let den = t.denominator(phi);
        let lhs = 2.0 * e * t.signal.sqrt() - e * e * den;
        let rhs = t.signal / den;
        (lhs - rhs).abs() / rhs.abs().max(f64::MIN_POSITIVE)
    };
    let mut worst = if fp.radar.signal > 0.0 { gap(&fp.radar, eta.radar) } else { 0.0 };
    for (t, &e) in fp.comm.iter().zip(&eta.comm) {
        if t.signal > 0.0 {
            worst = worst.max(gap(t, e));
        }
    }
    worst
}

/// Per-ratio weights in the penalty cost, `β`/`1−β` already applied.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyWeights {
    pub radar: f64,
    pub comm: Vec<f64>,
}

impl PenaltyWeights {
    pub fn new(fp: &FpState, mode: Weighting, eta: &Eta) -> Self {
        let w = |t: &RatioTerm, e: f64, what: &str| -> f64 {
            if t.signal < DEGENERATE {
                log::warn!("dropping degenerate {what} ratio (signal {:e})", t.signal);
                return 0.0;
            }
            match mode {
                Weighting::Reciprocal => 1.0 / t.signal,
                Weighting::Linearized => e * e,
            }
        };
        PenaltyWeights {
            radar: fp.beta * w(&fp.radar, eta.radar, "radar"),
            comm: fp.comm.iter().zip(&eta.comm).map(|(t, &e)| (1.0 - fp.beta) * w(t, e, "uplink")).collect(),
        }
    }

    /// `β/c₁` and `(1−β)/c₂,u`.
    pub fn reciprocal(fp: &FpState) -> Self {
        let eta = Eta { radar: 0.0, comm: vec![0.0; fp.comm.len()] };
        Self::new(fp, Weighting::Reciprocal, &eta)
    }
}

/// `−w_r(φᴴC̃φ + c̄₁) − Σ_u w_u(φᴴC̄_uφ + c̄₂,u) + λ‖u − φ‖²`.
pub fn penalty_cost(phi: &CVec, target: &CVec, fp: &FpState, w: &PenaltyWeights, lambda: f64) -> f64 {
    let mut c = -w.radar * fp.radar.denominator(phi);
    for (t, &wu) in fp.comm.iter().zip(&w.comm) {
        c -= wu * t.denominator(phi);
    }
    c + lambda * (target - phi).norm_squared()
}

/// Euclidean gradient of [`penalty_cost`] (`dL = Re Σ conj(g) dφ`).
pub fn penalty_grad(phi: &CVec, target: &CVec, fp: &FpState, w: &PenaltyWeights, lambda: f64) -> CVec {
    let mut g = fp.radar.apply(phi) * C64::from(-2.0 * w.radar);
    for (t, &wu) in fp.comm.iter().zip(&w.comm) {
        g -= t.apply(phi) * C64::from(2.0 * wu);
    }
    g + (phi - target) * C64::from(2.0 * lambda)
}

/// Free phases `e^{j2π s T Δf_p}`, index `p·S + s` with `s = 1..S`.
pub fn free_phases(cfo: &CfoOffsets, symbol_duration: f64, subcarriers: usize) -> CVec {
    let n = cfo.values.len() * subcarriers;
    CVec::from_fn(n, |i, _| {
        let (p, s) = (i / subcarriers, i % subcarriers + 1);
        cis(2.0 * PI * s as f64 * symbol_duration * cfo.values[p])
    })
}

/// Replicates free phases over the M receive antennas into `u_A`.
pub fn expand_free(phi: &CVec, rx: usize) -> CVec {
    CVec::from_fn(phi.len() * rx, |i, _| phi[i / rx])
}

/// `u_A` for a CFO map.
pub fn expand_phases(cfo: &CfoOffsets, scenario: &Scenario) -> CVec {
    stacked_phases(cfo, scenario)
}

/// Angles in `(−π, π]` made continuous along the sequence.
pub fn unwrap_angles(phases: &[C64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(phases.len());
    for z in phases {
        let a = z.arg();
        match out.last() {
            None => out.push(a),
            Some(&prev) => {
                let mut d = a - prev;
                d -= 2.0 * PI * (d / (2.0 * PI)).round();
                out.push(prev + d);
            }
        }
    }
    out
}

/// Box-constrained least-squares CFO fit per pair.
pub fn cfo_box_update(
    phi: &CVec,
    num_aps: usize,
    subcarriers: usize,
    symbol_duration: f64,
    bounds: (f64, f64),
    model: CfoModel,
) -> CfoOffsets {
    let mut cfo = CfoOffsets::zeros(num_aps);
    for p in 0..cfo.values.len() {
        let seg: Vec<C64> = phi.rows(p * subcarriers, subcarriers).iter().copied().collect();
        let raw = match model {
            CfoModel::Subcarrier => {
                let th = unwrap_angles(&seg);
                let num: f64 = th.iter().enumerate().map(|(s, t)| (s + 1) as f64 * t).sum();
                let den: f64 = (1..=subcarriers).map(|s| (s * s) as f64).sum();
                num / (2.0 * PI * symbol_duration * den)
            }
            CfoModel::Literal => {
                let mean = seg.iter().map(|z| z.arg()).sum::<f64>() / subcarriers as f64;
                -mean / symbol_duration
            }
        };
        cfo.values[p] = raw.clamp(bounds.0, bounds.1);
    }
    cfo
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustConfig {
    pub rcg: RcgConfig,
    pub max_outer: usize,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
    /// Stop once `‖u_A(Δf) − φ‖∞` falls below this (radians, small-angle).
    pub coupling_tol: f64,
    pub kernel: KernelForm,
    pub weighting: Weighting,
    pub cfo_model: CfoModel,
    /// Extra starts from random in-box CFOs besides `Δf = 0`.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for RobustConfig {
    fn default() -> Self {
        RobustConfig {
            rcg: RcgConfig::default(),
            max_outer: 30,
            penalty_init: 1.0,
            penalty_growth: 5.0,
            penalty_max: 1e6,
            coupling_tol: 1e-3,
            kernel: KernelForm::Additive,
            weighting: Weighting::Linearized,
            cfo_model: CfoModel::Subcarrier,
            restarts: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterRecord {
    pub start: usize,
    pub outer_iter: usize,
    pub eta: f64,
    pub penalty_weight: f64,
    pub coupling_residual: f64,
    pub surrogate_cost: f64,
    pub exact_wcsr: f64,
    pub fp_identity_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfoState {
    pub cfo: CfoOffsets,
    /// Free phases of the last subproblem that produced this CFO.
    pub phi: CVec,
    /// `u_A` at `cfo`.
    pub phases: CVec,
    pub penalty_weight: f64,
}

#[derive(Debug, Clone)]
pub struct WorstCase {
    pub state: CfoState,
    pub report: WcsrReport,
    pub nominal: WcsrReport,
    pub trace: Vec<OuterRecord>,
    pub rcg: Vec<RcgTrace>,
    /// Every start reached the coupling tolerance.
    pub converged: bool,
}

impl WorstCase {
    /// CSV with columns `outer_iter,eta,penalty_weight,coupling_residual,surrogate_cost,exact_wcsr`.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["start", "outer_iter", "eta", "penalty_weight", "coupling_residual", "surrogate_cost", "exact_wcsr"])?;
        for r in &self.trace {
            w.write_record([
                r.start.to_string(),
                r.outer_iter.to_string(),
                r.eta.to_string(),
                r.penalty_weight.to_string(),
                r.coupling_residual.to_string(),
                r.surrogate_cost.to_string(),
                r.exact_wcsr.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Exact report with the CFO phases replaced.
pub fn evaluate_at(scenario: &Scenario, blocks: &SignalBlocks, res: &ResourceState, cfo: &CfoOffsets) -> WcsrReport {
    WcsrReport::from_blocks(scenario, &blocks.with_phases(stacked_phases(cfo, scenario)), res)
}

/// Searches the CFO box for the assignment minimizing the exact objective
/// of `res`. `blocks` must come from the same resources; its stored phases
/// are ignored.
pub fn worst_case_cfo(
    scenario: &Scenario,
    blocks: &SignalBlocks,
    res: &ResourceState,
    cfg: &RobustConfig,
) -> Result<WorstCase, SolverError> {
    let a_n = scenario.num_aps;
    let s_n = scenario.subcarriers;
    let t = scenario.symbol_duration;
    let bounds = (scenario.cfo_min, scenario.cfo_max);
    let zero = CfoOffsets::zeros(a_n);
    let nominal = evaluate_at(scenario, blocks, res, &zero);
    let nominal_state = CfoState {
        cfo: zero.clone(),
        phi: free_phases(&zero, t, s_n),
        phases: stacked_phases(&zero, scenario),
        penalty_weight: 0.0,
    };
    let mut out = WorstCase {
        state: nominal_state,
        report: nominal.clone(),
        nominal,
        trace: Vec::new(),
        rcg: Vec::new(),
        converged: true,
    };
    if a_n < 2 {
        return Ok(out);
    }
    let fp = build_fp_state(blocks, res, scenario.beta, cfg.kernel);

    let mut starts = vec![zero];
    let mut rng = SeededRng::with_substream(cfg.seed, RngStream::CfoSampling, 1);
    for _ in 0..cfg.restarts {
        starts.push(CfoOffsets::uniform(a_n, bounds.0, bounds.1, &mut rng));
    }

    for (k, start) in starts.into_iter().enumerate() {
        let mut cfo = start;
        let mut target = free_phases(&cfo, t, s_n);
        let mut phi = target.clone();
        let mut lambda = cfg.penalty_init;
        if k > 0 {
            let rep = evaluate_at(scenario, blocks, res, &cfo);
            if rep.objective < out.report.objective {
                out.report = rep;
                out.state = CfoState { phases: stacked_phases(&cfo, scenario), cfo: cfo.clone(), phi: phi.clone(), penalty_weight: 0.0 };
            }
        }
        let mut converged = false;
        for it in 0..cfg.max_outer {
            let eta = fp_eta_update(&fp, &phi);
            let identity = fp_identity_residual(&fp, &eta, &phi);
            let w = PenaltyWeights::new(&fp, cfg.weighting, &eta);
            let (next, trace) = rcg_minimize(
                |x| penalty_cost(x, &target, &fp, &w, lambda),
                |x| penalty_grad(x, &target, &fp, &w, lambda),
                &phi,
                &cfg.rcg,
            )?;
            phi = next;
            let surrogate_cost = trace.final_cost();
            out.rcg.push(trace);
            cfo = cfo_box_update(&phi, a_n, s_n, t, bounds, cfg.cfo_model);
            target = free_phases(&cfo, t, s_n);
            let residual = (&target - &phi).iter().map(|z| z.norm()).fold(0.0, f64::max);
            let rep = evaluate_at(scenario, blocks, res, &cfo);
            out.trace.push(OuterRecord {
                start: k,
                outer_iter: it,
                eta: eta.radar,
                penalty_weight: lambda,
                coupling_residual: residual,
                surrogate_cost,
                exact_wcsr: rep.objective,
                fp_identity_residual: identity,
            });
            if rep.objective < out.report.objective {
                out.report = rep;
                out.state = CfoState {
                    phases: stacked_phases(&cfo, scenario),
                    cfo: cfo.clone(),
                    phi: phi.clone(),
                    penalty_weight: lambda,
                };
            }
            if residual <= cfg.coupling_tol {
                converged = true;
                break;
            }
            lambda = (lambda * cfg.penalty_growth).min(cfg.penalty_max);
        }
        out.converged &= converged;
    }
    Ok(out)
}

/// Exact objectives at `count` uniform in-box CFO draws.
pub fn sample_objectives<R: Rng + ?Sized>(
    scenario: &Scenario,
    blocks: &SignalBlocks,
    res: &ResourceState,
    count: usize,
    rng: &mut R,
) -> Vec<f64> {
    (0..count)
        .map(|_| {
            let cfo = CfoOffsets::uniform(scenario.num_aps, scenario.cfo_min, scenario.cfo_max, rng);
            evaluate_at(scenario, blocks, res, &cfo).objective
        })
        .collect()
}

/// Directional derivative of `f` along `d` from the Euclidean gradient.
pub fn directional(grad: &CVec, d: &CVec) -> f64 {
    metric(grad, d)
}
