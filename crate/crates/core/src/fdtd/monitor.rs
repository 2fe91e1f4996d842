//! Read-only observers recorded during time stepping.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::field::Component;
use super::grid::SimulationGrid;
use super::source::SourceTerm;
use crate::error::{Error, Result};

/// Observer hooked into the leapfrog loop.
///
/// `before_e` runs after the H half-step, while E still holds time n;
/// `after_e` runs once E has advanced to n+1.
pub trait Monitor: Send {
    fn name(&self) -> String;
    fn validate(&self, grid: &SimulationGrid) -> Result<()>;
    fn before_e(&mut self, _grid: &SimulationGrid, _sources: &[SourceTerm]) {}
    fn after_e(&mut self, grid: &SimulationGrid, sources: &[SourceTerm]);
    fn series(&self) -> Vec<f64>;
}

/// Time series from one monitor, sampled once per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorSeries {
    pub name: String,
    pub dt: f64,
    /// Time of the first sample.
    pub t0: f64,
    pub values: Vec<f64>,
}

impl MonitorSeries {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(move |n| self.t0 + n as f64 * self.dt)
    }

    /// Writes `t,value` CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = csv::Writer::from_path(path)?;
        out.write_record(["t", "value"])?;
        for (t, v) in self.times().zip(&self.values) {
            out.serialize((t, v))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)?;
        let header = reader.headers()?;
        if header.len() != 2 || &header[0] != "t" || &header[1] != "value" {
            return Err(Error::InvalidInput(format!(
                "expected header `t,value`, found {header:?}"
            )));
        }
        let mut ts = Vec::new();
        let mut vs = Vec::new();
        for row in reader.deserialize() {
            let (t, v): (f64, f64) = row?;
            ts.push(t);
            vs.push(v);
        }
        let dt = if ts.len() > 1 { ts[1] - ts[0] } else { 0.0 };
        Ok(Self {
            name: path.display().to_string(),
            dt,
            t0: ts.first().copied().unwrap_or(0.0),
            values: vs,
        })
    }
}

/// Records of every monitor after a run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MonitorRecords {
    pub series: Vec<MonitorSeries>,
}

impl MonitorRecords {
    pub fn get(&self, name: &str) -> Option<&MonitorSeries> {
        self.series.iter().find(|s| s.name == name)
    }
}

/// Advances `grid` by `n_steps`, feeding every monitor.
///
/// Monitors and sources are validated before the first step.
pub fn run(
    grid: &mut SimulationGrid,
    sources: &[SourceTerm],
    monitors: &mut [&mut dyn Monitor],
    n_steps: usize,
) -> Result<MonitorRecords> {
    if n_steps == 0 {
        return Err(Error::Config("n_steps must be at least 1".into()));
    }
    grid.check_sources(sources)?;
    for m in monitors.iter() {
        m.validate(grid)?;
    }
    let t0 = grid.time() + grid.dt();
    for _ in 0..n_steps {
        advance(grid, sources, monitors);
    }
    Ok(MonitorRecords {
        series: monitors
            .iter()
            .map(|m| MonitorSeries {
                name: m.name(),
                dt: grid.dt(),
                t0,
                values: m.series(),
            })
            .collect(),
    })
}

/// One step with monitor hooks; no validation.
pub fn advance(
    grid: &mut SimulationGrid,
    sources: &[SourceTerm],
    monitors: &mut [&mut dyn Monitor],
) {
    grid.update_h();
    for m in monitors.iter_mut() {
        m.before_e(grid, sources);
    }
    grid.update_e(sources);
    for m in monitors.iter_mut() {
        m.after_e(grid, sources);
    }
}

/// Samples one field component at one node after every step.
#[derive(Debug, Clone)]
pub struct PointProbe {
    pub name: String,
    pub component: Component,
    pub index: [usize; 3],
    values: Vec<f64>,
}

impl PointProbe {
    pub fn new(name: impl Into<String>, component: Component, index: [usize; 3]) -> Self {
        Self {
            name: name.into(),
            component,
            index,
            values: Vec::new(),
        }
    }

    /// Probe at the node of `component` nearest to `position`.
    pub fn at(
        name: impl Into<String>,
        grid: &SimulationGrid,
        component: Component,
        position: [f64; 3],
    ) -> Result<Self> {
        let name = name.into();
        let index =
            grid.nearest_node(component, position)
                .ok_or_else(|| Error::MonitorOutOfBounds {
                    name: name.clone(),
                    reason: format!("position {position:?} outside the grid"),
                })?;
        Ok(Self::new(name, component, index))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl Monitor for PointProbe {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn validate(&self, grid: &SimulationGrid) -> Result<()> {
        if !grid.dimensionality().has(self.component)
            || !grid.field(self.component).contains(self.index)
        {
            return Err(Error::MonitorOutOfBounds {
                name: self.name.clone(),
                reason: format!("{} node {:?} not in storage", self.component, self.index),
            });
        }
        Ok(())
    }

    fn after_e(&mut self, grid: &SimulationGrid, _sources: &[SourceTerm]) {
        let [i, j, k] = self.index;
        self.values
            .push(grid.field(self.component).get(i, j, k) as f64);
    }

    fn series(&self) -> Vec<f64> {
        self.values.clone()
    }
}

#[derive(Debug, Clone, Copy)]
struct FluxTerm {
    e: Component,
    e_idx: [usize; 3],
    h: Component,
    h_lo: [usize; 3],
    h_hi: [usize; 3],
    /// Orientation sign times quadrature weight.
    weight: f64,
}

/// Outward Poynting flux through the boundary of an axis-aligned box.
///
/// The box spans lattice nodes `lo..=hi` (cell-corner indices); in 2D the z
/// entries are ignored. Flux at step n+½ uses the time average of E(n) and
/// E(n+1) with H(n+½).
#[derive(Debug, Clone)]
pub struct FluxBox {
    pub name: String,
    pub lo: [usize; 3],
    pub hi: [usize; 3],
    terms: Vec<FluxTerm>,
    e_prev: Vec<f64>,
    power: Vec<f64>,
    energy: f64,
}

impl FluxBox {
    pub fn new(
        name: impl Into<String>,
        grid: &SimulationGrid,
        lo: [usize; 3],
        hi: [usize; 3],
    ) -> Result<Self> {
        let name = name.into();
        let ndim = grid.dimensionality().ndim();
        let dims = grid.layout().dims;
        let t = grid.pml_thickness();
        for a in 0..ndim {
            if !(lo[a] < hi[a]) {
                return Err(Error::MonitorOutOfBounds {
                    name,
                    reason: format!("empty box along axis {a}"),
                });
            }
            if lo[a] <= t || hi[a] + t >= dims[a] {
                return Err(Error::MonitorOutOfBounds {
                    name,
                    reason: format!(
                        "box [{}, {}] along axis {a} touches the absorbing layer or edge (grid {}, PML {t})",
                        lo[a], hi[a], dims[a]
                    ),
                });
            }
        }
        let (lo, hi) = if ndim == 2 {
            ([lo[0], lo[1], 0], [hi[0], hi[1], 0])
        } else {
            (lo, hi)
        };
        let dim = grid.dimensionality();
        let area = grid.dx().powi(ndim as i32 - 1);
        let mut terms = Vec::new();
        for a in 0..ndim {
            let b = (a + 1) % 3;
            let c = (a + 2) % 3;
            for (xa, sign) in [(lo[a], -1.0), (hi[a], 1.0)] {
                // S_a = E_b H_c - E_c H_b
                for (e_axis, h_axis, half_axis, whole_axis, s) in
                    [(b, c, b, c, 1.0), (c, b, c, b, -1.0)]
                {
                    let e = Component::electric(e_axis);
                    let h = [Component::Hx, Component::Hy, Component::Hz][h_axis];
                    if !dim.has(e) || !dim.has(h) {
                        continue;
                    }
                    let half_range: Vec<usize> = (lo[half_axis]..hi[half_axis]).collect();
                    let whole_range: Vec<(usize, f64)> = if whole_axis == 2 && ndim == 2 {
                        vec![(0, 1.0)]
                    } else {
                        (lo[whole_axis]..=hi[whole_axis])
                            .map(|p| {
                                let w = if p == lo[whole_axis] || p == hi[whole_axis] {
                                    0.5
                                } else {
                                    1.0
                                };
                                (p, w)
                            })
                            .collect()
                    };
                    for &m in &half_range {
                        for &(p, w) in &whole_range {
                            let mut e_idx = [0usize; 3];
                            e_idx[a] = xa;
                            e_idx[half_axis] = m;
                            e_idx[whole_axis] = p;
                            let mut h_lo = e_idx;
                            h_lo[a] = xa - 1;
                            let h_hi = e_idx;
                            terms.push(FluxTerm {
                                e,
                                e_idx,
                                h,
                                h_lo,
                                h_hi,
                                weight: sign * s * w * area,
                            });
                        }
                    }
                }
            }
        }
        Ok(Self {
            name,
            lo,
            hi,
            e_prev: vec![0.0; terms.len()],
            terms,
            power: Vec::new(),
            energy: 0.0,
        })
    }

    /// Time-integrated outward energy so far.
    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn power(&self) -> &[f64] {
        &self.power
    }

    pub fn contains_point(&self, grid: &SimulationGrid, p: [f64; 3]) -> bool {
        let l = grid.layout();
        (0..grid.dimensionality().ndim()).all(|a| {
            let x = (p[a] - l.origin[a]) / l.dx;
            x > self.lo[a] as f64 && x < self.hi[a] as f64
        })
    }
}

impl Monitor for FluxBox {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn validate(&self, _grid: &SimulationGrid) -> Result<()> {
        Ok(())
    }

    fn before_e(&mut self, grid: &SimulationGrid, _sources: &[SourceTerm]) {
        for (slot, t) in self.e_prev.iter_mut().zip(&self.terms) {
            let [i, j, k] = t.e_idx;
            *slot = grid.field(t.e).get(i, j, k) as f64;
        }
    }

    fn after_e(&mut self, grid: &SimulationGrid, _sources: &[SourceTerm]) {
        let mut p = 0.0;
        for (prev, t) in self.e_prev.iter().zip(&self.terms) {
            let [i, j, k] = t.e_idx;
            let e = 0.5 * (prev + grid.field(t.e).get(i, j, k) as f64);
            let hf = grid.field(t.h);
            let h = 0.5
                * (hf.get(t.h_lo[0], t.h_lo[1], t.h_lo[2]) as f64
                    + hf.get(t.h_hi[0], t.h_hi[1], t.h_hi[2]) as f64);
            p += t.weight * e * h;
        }
        self.energy += p * grid.dt();
        self.power.push(p);
    }

    fn series(&self) -> Vec<f64> {
        self.power.clone()
    }
}

/// Work done by the sources on the field, −∫E·J dV dt, with its spectrum.
///
/// The spectral accumulators are running DFTs of the time-centered source
/// field and current at each requested frequency.
#[derive(Debug, Clone)]
pub struct SourceWork {
    pub name: String,
    frequencies: Vec<f64>,
    e_prev: Vec<f64>,
    e_hat: Vec<Vec<Complex64>>,
    j_hat: Vec<Vec<Complex64>>,
    power: Vec<f64>,
    work: f64,
}

impl SourceWork {
    pub fn new(name: impl Into<String>, n_sources: usize, frequencies: &[f64]) -> Self {
        Self {
            name: name.into(),
            frequencies: frequencies.to_vec(),
            e_prev: vec![0.0; n_sources],
            e_hat: vec![vec![Complex64::new(0.0, 0.0); frequencies.len()]; n_sources],
            j_hat: vec![vec![Complex64::new(0.0, 0.0); frequencies.len()]; n_sources],
            power: Vec::new(),
            work: 0.0,
        }
    }

    pub fn work(&self) -> f64 {
        self.work
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    /// Spectral work density at frequency index `f`:
    /// `-(1/π)·Re Σ_s Ê_s Ĵ_s*·dV`, whose integral over ω ≥ 0 equals the work.
    pub fn spectral_density(&self, f: usize, cell_volume: f64) -> f64 {
        let mut acc = 0.0;
        for (e, j) in self.e_hat.iter().zip(&self.j_hat) {
            acc += (e[f] * j[f].conj()).re;
        }
        -acc * cell_volume / PI
    }

    /// DFT of the current of source `s` at frequency index `f`.
    pub fn current_spectrum(&self, s: usize, f: usize) -> Complex64 {
        self.j_hat[s][f]
    }
}

impl Monitor for SourceWork {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn validate(&self, _grid: &SimulationGrid) -> Result<()> {
        Ok(())
    }

    fn before_e(&mut self, grid: &SimulationGrid, sources: &[SourceTerm]) {
        for (slot, s) in self.e_prev.iter_mut().zip(sources) {
            let [i, j, k] = s.index;
            *slot = grid.field(s.component).get(i, j, k) as f64;
        }
    }

    fn after_e(&mut self, grid: &SimulationGrid, sources: &[SourceTerm]) {
        let dt = grid.dt();
        let n = grid.time_index() - 1;
        let t = (n as f64 + 0.5) * dt;
        let dv = grid.layout().cell_volume();
        let phases: Vec<Complex64> = self
            .frequencies
            .iter()
            .map(|f| Complex64::from_polar(dt, 2.0 * PI * f * t))
            .collect();
        let mut p = 0.0;
        for (si, s) in sources.iter().enumerate() {
            let [i, j, k] = s.index;
            let e = 0.5 * (self.e_prev[si] + grid.field(s.component).get(i, j, k) as f64);
            let cur = s.current(t, n, dt);
            p -= e * cur * dv;
            for (fi, ph) in phases.iter().enumerate() {
                self.e_hat[si][fi] += ph * e;
                self.j_hat[si][fi] += ph * cur;
            }
        }
        self.work += p * dt;
        self.power.push(p);
    }

    fn series(&self) -> Vec<f64> {
        self.power.clone()
    }
}

/// Running DFT of the electric field over the whole grid at fixed frequencies.
#[derive(Debug, Clone)]
pub struct FieldDft {
    pub name: String,
    frequencies: Vec<f64>,
    /// Accumulate every `stride` steps.
    stride: u64,
    /// `data[f][axis]` has the storage shape of that component.
    data: Vec<Vec<Vec<Complex64>>>,
    shapes: [[usize; 3]; 3],
    steps: usize,
    start: u64,
}

impl FieldDft {
    pub fn new(
        name: impl Into<String>,
        grid: &SimulationGrid,
        frequencies: &[f64],
        stride: u64,
    ) -> Self {
        let shapes = [0, 1, 2].map(|a| grid.field(Component::electric(a)).shape());
        let data = frequencies
            .iter()
            .map(|_| {
                (0..3)
                    .map(|a| vec![Complex64::new(0.0, 0.0); shapes[a].iter().product()])
                    .collect()
            })
            .collect();
        Self {
            name: name.into(),
            frequencies: frequencies.to_vec(),
            stride: stride.max(1),
            data,
            shapes,
            steps: 0,
            start: 0,
        }
    }

    /// Ignore time steps before `step`.
    pub fn starting_at(mut self, step: u64) -> Self {
        self.start = step;
        self
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn shape(&self, axis: usize) -> [usize; 3] {
        self.shapes[axis]
    }

    /// Complex amplitude of electric component `axis` at frequency index `f`.
    pub fn component(&self, f: usize, axis: usize) -> &[Complex64] {
        &self.data[f][axis]
    }
}

impl Monitor for FieldDft {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn validate(&self, _grid: &SimulationGrid) -> Result<()> {
        Ok(())
    }

    fn after_e(&mut self, grid: &SimulationGrid, _sources: &[SourceTerm]) {
        let n = grid.time_index();
        self.steps += 1;
        if n < self.start || !n.is_multiple_of(self.stride) {
            return;
        }
        let t = grid.time();
        let w = grid.dt() * self.stride as f64;
        for (fi, f) in self.frequencies.iter().enumerate() {
            let ph = Complex64::from_polar(w, 2.0 * PI * f * t);
            for a in 0..3 {
                let src = grid.field(Component::electric(a)).as_slice();
                for (acc, &v) in self.data[fi][a].iter_mut().zip(src) {
                    *acc += ph * v as f64;
                }
            }
        }
    }

    fn series(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// JSON sidecar describing a raw field snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub shape: [usize; 3],
    pub component: String,
    pub time_index: u64,
    pub units: String,
    pub dtype: String,
    pub byte_order: String,
    pub order: String,
}

/// Writes a component as raw little-endian f32 (x-major, z fastest) plus a
/// JSON sidecar at `<path>.json`.
pub fn write_snapshot(grid: &SimulationGrid, component: Component, path: &Path) -> Result<()> {
    let f = grid.field(component);
    write_raw_f32(path, f.as_slice())?;
    let meta = SnapshotMeta {
        shape: f.shape(),
        component: component.name().to_string(),
        time_index: grid.time_index(),
        units: "normalized (c = 1, a = 1)".into(),
        dtype: "f32".into(),
        byte_order: "little".into(),
        order: "component-major, x slowest, z fastest".into(),
    };
    let side = sidecar_path(path);
    std::fs::write(side, serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn write_raw_f32(path: &Path, data: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_raw_f32(path: &Path) -> Result<Vec<f32>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::InvalidInput(format!(
            "{}: length {} is not a multiple of 4",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}
