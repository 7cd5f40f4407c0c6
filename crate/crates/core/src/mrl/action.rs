//! Action encoding and the feasibility projection.
//!
//! Raw actions live in a normalized real space (nominally `[−1, 1]` per
//! coordinate, but any real is accepted). Layout:
//! `[w: A·2N | t: A·N | r: A·M | p: U | Δf: A(A−1) | z: 2AM | û: 2AM·U]`,
//! where the `Δf` and filter segments exist only when enabled.
//! Complex entries are stored as interleaved `(re, im)`.

use crate::channel::Layout;
use crate::linalg::{norm_sqr, CVec, C64};
use crate::scenario::Scenario;
use crate::signal::{normalize_blocks, CfoOffsets, ResourceState};

/// Decoded design proposed by a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub w: Vec<CVec>,
    pub tx: Vec<Vec<f64>>,
    pub rx: Vec<Vec<f64>>,
    pub p: Vec<f64>,
    pub cfo: Option<CfoOffsets>,
    /// `(z, û)` when the receive filters are part of the action.
    pub filters: Option<(CVec, Vec<CVec>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ActionOptions {
    /// Append raw CFOs to the action.
    pub cfo: bool,
    /// Append receive filters to the action.
    pub filters: bool,
    /// Ignore position coordinates and keep the λ/2 grid.
    pub frozen_positions: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpace {
    pub aps: usize,
    pub users: usize,
    pub tx: usize,
    pub rx: usize,
    pub opts: ActionOptions,
    tx_grid: Vec<f64>,
    rx_grid: Vec<f64>,
}

impl ActionSpace {
    pub fn new(scenario: &Scenario, opts: ActionOptions) -> Self {
        ActionSpace {
            aps: scenario.num_aps,
            users: scenario.num_users,
            tx: scenario.tx_antennas,
            rx: scenario.rx_antennas,
            opts,
            tx_grid: scenario.fpa_grid(scenario.tx_antennas, scenario.tx_range),
            rx_grid: scenario.fpa_grid(scenario.rx_antennas, scenario.rx_range),
        }
    }

    fn segments(&self) -> [usize; 7] {
        let a = self.aps;
        let am = a * self.rx;
        [
            a * 2 * self.tx,
            a * self.tx,
            a * self.rx,
            self.users,
            if self.opts.cfo { a * a.saturating_sub(1) } else { 0 },
            if self.opts.filters { 2 * am } else { 0 },
            if self.opts.filters { 2 * am * self.users } else { 0 },
        ]
    }

    pub fn dim(&self) -> usize {
        self.segments().iter().sum()
    }

    /// Maps a raw vector to a design. Beams decode to full-power directions
    /// `√P·v/‖v‖`; positions to `grid + raw·(hi − lo)`; powers to
    /// `P_UL·(raw + 1)/2`; CFOs affinely onto the box. The result still
    /// needs [`project_action`].
    pub fn decode(&self, raw: &[f64], scenario: &Scenario) -> Action {
        assert_eq!(raw.len(), self.dim(), "raw action length");
        let seg = self.segments();
        let mut k = 0;
        let mut take = |n: usize| {
            let s = &raw[k..k + n];
            k += n;
            s
        };
        let complex = |s: &[f64]| CVec::from_fn(s.len() / 2, |i, _| C64::new(s[2 * i], s[2 * i + 1]));

        let wseg = take(seg[0]);
        let w = (0..self.aps)
            .map(|a| {
                let v = complex(&wseg[a * 2 * self.tx..(a + 1) * 2 * self.tx]);
                let n = norm_sqr(&v).sqrt();
                if n > 0.0 && n.is_finite() {
                    v * C64::from(scenario.p_max_dl.sqrt() / n)
                } else {
                    CVec::from_element(self.tx, C64::from((scenario.p_max_dl / self.tx as f64).sqrt()))
                }
            })
            .collect();
        let place = |s: &[f64], count: usize, grid: &[f64], (lo, hi): (f64, f64)| -> Vec<Vec<f64>> {
            (0..self.aps)
                .map(|a| {
                    if self.opts.frozen_positions {
                        grid.to_vec()
                    } else {
                        (0..count).map(|i| grid[i] + s[a * count + i] * (hi - lo)).collect()
                    }
                })
                .collect()
        };
        let tx = place(take(seg[1]), self.tx, &self.tx_grid, scenario.tx_range);
        let rx = place(take(seg[2]), self.rx, &self.rx_grid, scenario.rx_range);
        let p = take(seg[3]).iter().map(|&r| scenario.p_max_ul * (r + 1.0) / 2.0).collect();
        let cfo = self.opts.cfo.then(|| {
            let s = take(seg[4]);
            let (lo, hi) = (scenario.cfo_min, scenario.cfo_max);
            CfoOffsets { num_aps: self.aps, values: s.iter().map(|&r| lo + (r + 1.0) / 2.0 * (hi - lo)).collect() }
        });
        let filters = self.opts.filters.then(|| {
            let z = complex(take(seg[5]));
            let useg = take(seg[6]);
            let am = 2 * self.aps * self.rx;
            let u = (0..self.users).map(|u| complex(&useg[u * am..(u + 1) * am])).collect();
            (z, u)
        });
        Action { w, tx, rx, p, cfo, filters }
    }

    /// Inverse of [`ActionSpace::decode`] on feasible designs, clipped to
    /// `[−1, 1]`.
    pub fn encode(&self, action: &Action, scenario: &Scenario) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        let push_complex = |out: &mut Vec<f64>, v: &CVec, scale: f64| {
            for z in v.iter() {
                out.push(z.re * scale);
                out.push(z.im * scale);
            }
        };
        for w in &action.w {
            push_complex(&mut out, w, 1.0 / scenario.p_max_dl.sqrt());
        }
        for (arrays, grid, (lo, hi)) in
            [(&action.tx, &self.tx_grid, scenario.tx_range), (&action.rx, &self.rx_grid, scenario.rx_range)]
        {
            for pos in arrays {
                out.extend(pos.iter().zip(grid).map(|(x, g)| if self.opts.frozen_positions { 0.0 } else { (x - g) / (hi - lo) }));
            }
        }
        out.extend(action.p.iter().map(|p| 2.0 * p / scenario.p_max_ul - 1.0));
        if self.opts.cfo {
            let (lo, hi) = (scenario.cfo_min, scenario.cfo_max);
            let zeros = CfoOffsets::zeros(self.aps);
            let cfo = action.cfo.as_ref().unwrap_or(&zeros);
            out.extend(cfo.values.iter().map(|v| if hi > lo { 2.0 * (v - lo) / (hi - lo) - 1.0 } else { 0.0 }));
        }
        if self.opts.filters {
            let am = self.aps * self.rx;
            let uniform = CVec::from_element(am, C64::from(1.0 / (self.rx as f64).sqrt()));
            let (z, u) = action.filters.clone().unwrap_or_else(|| (uniform.clone(), vec![uniform; self.users]));
            push_complex(&mut out, &z, 1.0);
            for f in &u {
                push_complex(&mut out, f, 1.0);
            }
        }
        for x in &mut out {
            *x = if x.is_finite() { x.clamp(-1.0, 1.0) } else { 0.0 };
        }
        out
    }
}

/// Scales `w` onto the power ball when `‖w‖² > p_max`; otherwise returns it
/// unchanged. The output is an exact nonnegative multiple of the input.
pub fn project_beam(w: &CVec, p_max: f64) -> CVec {
    let n2 = norm_sqr(w);
    if !(n2 > p_max) || !n2.is_finite() {
        return w.clone();
    }
    let mut k = (p_max / n2).sqrt();
    loop {
        let out = w * C64::from(k);
        if norm_sqr(&out) <= p_max {
            return out;
        }
        k = k.next_down();
    }
}

/// Clamps powers at zero, then scales onto the budget when the sum exceeds it.
pub fn project_powers(p: &[f64], p_max: f64) -> Vec<f64> {
    let q: Vec<f64> = p.iter().map(|&x| if x > 0.0 && x.is_finite() { x } else { 0.0 }).collect();
    let s: f64 = q.iter().sum();
    if !(s > p_max) {
        return q;
    }
    let mut k = p_max / s;
    loop {
        let r: Vec<f64> = q.iter().map(|x| x * k).collect();
        if r.iter().sum::<f64>() <= p_max {
            return r;
        }
        k = k.next_down();
    }
}

/// Sorts, clamps into `[lo, hi]` and enforces gaps `≥ d`: a forward greedy
/// pass pushes crowded antennas right, a backward pass pulls the tail back
/// under `hi`. Gaps are checked on the computed differences so feasible
/// inputs are fixed points.
pub fn project_positions(x: &[f64], (lo, hi): (f64, f64), d: f64) -> Vec<f64> {
    let mut v: Vec<f64> = x.iter().map(|&p| if p.is_nan() { lo } else { p.clamp(lo, hi) }).collect();
    v.sort_by(f64::total_cmp);
    for i in 1..v.len() {
        if v[i] - v[i - 1] < d {
            let mut y = v[i - 1] + d;
            while y - v[i - 1] < d {
                y = y.next_up();
            }
            v[i] = y;
        }
    }
    if let Some(last) = v.last_mut() {
        if *last > hi {
            *last = hi;
        }
    }
    for i in (0..v.len().saturating_sub(1)).rev() {
        if v[i + 1] - v[i] < d {
            let mut y = v[i + 1] - d;
            while v[i + 1] - y < d {
                y = y.next_down();
            }
            v[i] = y;
        }
    }
    v
}

/// Restores feasibility: beam power, uplink budget, position range and
/// spacing, CFO box, and per-AP filter normalization. Idempotent.
pub fn project_action(raw: &Action, scenario: &Scenario) -> Action {
    let d = scenario.min_spacing;
    let mut cfo = raw.cfo.clone();
    if let Some(c) = cfo.as_mut() {
        for v in &mut c.values {
            *v = if v.is_nan() { 0.0 } else { v.clamp(scenario.cfo_min, scenario.cfo_max) };
        }
    }
    let m = scenario.rx_antennas;
    Action {
        w: raw.w.iter().map(|w| project_beam(w, scenario.p_max_dl)).collect(),
        tx: raw.tx.iter().map(|x| project_positions(x, scenario.tx_range, d)).collect(),
        rx: raw.rx.iter().map(|x| project_positions(x, scenario.rx_range, d)).collect(),
        p: project_powers(&raw.p, scenario.p_max_ul),
        cfo,
        filters: raw.filters.as_ref().map(|(z, u)| (normalize_blocks(z, m), u.iter().map(|f| normalize_blocks(f, m)).collect())),
    }
}

impl Action {
    /// Resource state carrying this action; filters default to uniform
    /// when absent and are expected to be refreshed.
    pub fn to_resources(&self, scenario: &Scenario) -> ResourceState {
        let am = scenario.num_aps * scenario.rx_antennas;
        let uniform = CVec::from_element(am, C64::from(1.0 / (scenario.rx_antennas as f64).sqrt()));
        let (z, u) = self.filters.clone().unwrap_or_else(|| (uniform.clone(), vec![uniform; scenario.num_users]));
        ResourceState { w: self.w.clone(), z, u, p: self.p.clone(), layout: Layout { tx: self.tx.clone(), rx: self.rx.clone() } }
    }
}
