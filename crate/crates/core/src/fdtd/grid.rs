use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::field::{Component, Field};
use super::pml::{AxisProfile, PmlSpec};
use super::source::SourceTerm;
use crate::error::{Error, Result};

/// Spatial dimensionality of a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimensionality {
    /// In-plane E (Ex, Ey), out-of-plane H (Hz).
    #[serde(rename = "2d_te")]
    TwoDTe,
    #[serde(rename = "3d")]
    ThreeD,
}

impl Dimensionality {
    pub fn ndim(self) -> usize {
        match self {
            Dimensionality::TwoDTe => 2,
            Dimensionality::ThreeD => 3,
        }
    }

    pub fn courant_limit(self) -> f64 {
        1.0 / (self.ndim() as f64).sqrt()
    }

    pub fn components(self) -> &'static [Component] {
        match self {
            Dimensionality::TwoDTe => &[Component::Ex, Component::Ey, Component::Hz],
            Dimensionality::ThreeD => &[
                Component::Ex,
                Component::Ey,
                Component::Ez,
                Component::Hx,
                Component::Hy,
                Component::Hz,
            ],
        }
    }

    pub fn has(self, c: Component) -> bool {
        self.components().contains(&c)
    }
}

/// Placement of a cell-centered grid in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridLayout {
    /// Cell counts; `dims[2] == 1` for 2D grids.
    pub dims: [usize; 3],
    /// Cell size in units of a.
    pub dx: f64,
    /// Coordinates of the lattice corner (node 0,0,0).
    pub origin: [f64; 3],
}

impl GridLayout {
    /// Layout whose point (0,0,0) coincides with an Ex node; `half_cells` is
    /// the number of cells on each side of the center along each axis.
    ///
    /// The x count is odd and the y and z counts are even, so the grid is
    /// mirror symmetric about the origin.
    pub fn centered(dim: Dimensionality, half_cells: [usize; 3], dx: f64) -> Self {
        let nx = 2 * half_cells[0] + 1;
        let ny = 2 * half_cells[1];
        let (nz, oz) = match dim {
            Dimensionality::TwoDTe => (1, -0.5 * dx),
            Dimensionality::ThreeD => (2 * half_cells[2], -(half_cells[2] as f64) * dx),
        };
        Self {
            dims: [nx, ny, nz],
            dx,
            origin: [
                -(half_cells[0] as f64 + 0.5) * dx,
                -(half_cells[1] as f64) * dx,
                oz,
            ],
        }
    }

    pub fn n_cells(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn cell_index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn cell_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin[0] + (i as f64 + 0.5) * self.dx,
            self.origin[1] + (j as f64 + 0.5) * self.dx,
            self.origin[2] + (k as f64 + 0.5) * self.dx,
        ]
    }

    /// Position of a component node.
    pub fn node_position(&self, c: Component, idx: [usize; 3]) -> [f64; 3] {
        let off = c.offset();
        let mut p = [0.0; 3];
        for a in 0..3 {
            p[a] = self.origin[a] + (idx[a] as f64 + off[a]) * self.dx;
        }
        if self.dims[2] == 1 {
            p[2] = 0.0;
        }
        p
    }

    /// Cell containing a point, if inside the grid.
    pub fn cell_of(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let mut idx = [0usize; 3];
        let axes = if self.dims[2] == 1 { 2 } else { 3 };
        for a in 0..axes {
            let f = ((p[a] - self.origin[a]) / self.dx).floor();
            if f < 0.0 || f >= self.dims[a] as f64 {
                return None;
            }
            idx[a] = f as usize;
        }
        Some(idx)
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.dims[0] as f64 * self.dx,
            self.dims[1] as f64 * self.dx,
            self.dims[2] as f64 * self.dx,
        ]
    }

    /// Cell volume (area in 2D).
    pub fn cell_volume(&self) -> f64 {
        if self.dims[2] == 1 {
            self.dx * self.dx
        } else {
            self.dx * self.dx * self.dx
        }
    }
}

/// Storage extents of a component, following the Yee staggering.
pub fn component_shape(dim: Dimensionality, dims: [usize; 3], c: Component) -> [usize; 3] {
    let [nx, ny, nz] = dims;
    match dim {
        Dimensionality::TwoDTe => match c {
            Component::Ex => [nx, ny + 1, 1],
            Component::Ey => [nx + 1, ny, 1],
            Component::Hz => [nx, ny, 1],
            _ => [0, 0, 0],
        },
        Dimensionality::ThreeD => match c {
            Component::Ex => [nx, ny + 1, nz + 1],
            Component::Ey => [nx + 1, ny, nz + 1],
            Component::Ez => [nx + 1, ny + 1, nz],
            Component::Hx => [nx + 1, ny, nz],
            Component::Hy => [nx, ny + 1, nz],
            Component::Hz => [nx, ny, nz + 1],
        },
    }
}

/// Solver discretization knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    /// Cells per lattice constant.
    pub resolution: f64,
    pub courant: f64,
    pub pml: PmlSpec,
}

impl SolverSettings {
    pub fn default_2d() -> Self {
        Self {
            resolution: 20.0,
            courant: 0.5,
            pml: PmlSpec::default(),
        }
    }

    pub fn default_3d() -> Self {
        Self {
            resolution: 12.0,
            courant: 0.5,
            pml: PmlSpec::default(),
        }
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.resolution
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Cpml {
    pub axes: [AxisProfile; 3],
    pub psi: Vec<(Component, usize, Field)>,
}

fn psi_set(psi: &mut [(Component, usize, Field)]) -> PsiSet<'_> {
    let mut set = PsiSet::default();
    for (c, axis, f) in psi.iter_mut() {
        let slot = match (c, axis) {
            (Component::Hx, 1) => &mut set.hx_y,
            (Component::Hx, 2) => &mut set.hx_z,
            (Component::Hy, 2) => &mut set.hy_z,
            (Component::Hy, 0) => &mut set.hy_x,
            (Component::Hz, 0) => &mut set.hz_x,
            (Component::Hz, 1) => &mut set.hz_y,
            (Component::Ex, 1) => &mut set.ex_y,
            (Component::Ex, 2) => &mut set.ex_z,
            (Component::Ey, 2) => &mut set.ey_z,
            (Component::Ey, 0) => &mut set.ey_x,
            (Component::Ez, 0) => &mut set.ez_x,
            (Component::Ez, 1) => &mut set.ez_y,
            _ => unreachable!("unexpected psi slot"),
        };
        *slot = Some(f.as_mut_slice());
    }
    set
}

#[derive(Default)]
struct PsiSet<'a> {
    hx_y: Option<&'a mut [f32]>,
    hx_z: Option<&'a mut [f32]>,
    hy_z: Option<&'a mut [f32]>,
    hy_x: Option<&'a mut [f32]>,
    hz_x: Option<&'a mut [f32]>,
    hz_y: Option<&'a mut [f32]>,
    ex_y: Option<&'a mut [f32]>,
    ex_z: Option<&'a mut [f32]>,
    ey_z: Option<&'a mut [f32]>,
    ey_x: Option<&'a mut [f32]>,
    ez_x: Option<&'a mut [f32]>,
    ez_y: Option<&'a mut [f32]>,
}

/// Yee-lattice field state with permittivity map and absorbing boundaries.
///
/// Outer faces are perfect electric conductors; when a [`PmlSpec`] is given
/// the outermost cells form a convolutional PML in front of them.
#[derive(Debug, Clone)]
pub struct SimulationGrid {
    dim: Dimensionality,
    layout: GridLayout,
    courant: f64,
    dt: f64,
    time_index: u64,
    pub(crate) e: [Field; 3],
    pub(crate) h: [Field; 3],
    pub(crate) inv_eps: [Field; 3],
    eps_cells: Vec<f64>,
    pub(crate) pml: Cpml,
    pml_spec: Option<PmlSpec>,
}

impl SimulationGrid {
    /// Builds a grid from cell-centered relative permittivities.
    ///
    /// Permittivity at each electric node is the arithmetic mean of the
    /// adjacent cells.
    pub fn new(
        dim: Dimensionality,
        layout: GridLayout,
        eps_cells: Vec<f64>,
        courant: f64,
        pml: Option<PmlSpec>,
    ) -> Result<Self> {
        let limit = dim.courant_limit();
        if !(courant > 0.0) || courant > limit + 1e-12 {
            return Err(Error::Unstable { courant, limit });
        }
        if dim == Dimensionality::TwoDTe && layout.dims[2] != 1 {
            return Err(Error::Config("2D grids must have a single z cell".into()));
        }
        if layout.dims.contains(&0) {
            return Err(Error::Config("grid dimensions must be nonzero".into()));
        }
        if eps_cells.len() != layout.n_cells() {
            return Err(Error::Config(format!(
                "permittivity map has {} cells, layout needs {}",
                eps_cells.len(),
                layout.n_cells()
            )));
        }
        if let Some(bad) = eps_cells.iter().find(|e| !(e.is_finite() && **e >= 1.0)) {
            return Err(Error::Config(format!(
                "relative permittivity must be finite and >= 1, found {bad}"
            )));
        }
        let dx = layout.dx;
        let dt = courant * dx;
        let dims = layout.dims;
        let shape = |c| component_shape(dim, dims, c);
        let e = [
            shape(Component::Ex),
            shape(Component::Ey),
            shape(Component::Ez),
        ]
        .map(Field::zeros);
        let h = [
            shape(Component::Hx),
            shape(Component::Hy),
            shape(Component::Hz),
        ]
        .map(Field::zeros);

        let mut inv_eps = [Field::empty(), Field::empty(), Field::empty()];
        for axis in 0..3 {
            let c = Component::electric(axis);
            if !dim.has(c) {
                continue;
            }
            let mut f = Field::zeros(shape(c));
            let [sx, sy, sz] = f.shape();
            for i in 0..sx {
                for j in 0..sy {
                    for k in 0..sz {
                        let node = [i, j, k];
                        let mut sum = 0.0;
                        let mut count = 0usize;
                        let ranges: Vec<Vec<usize>> = (0..3)
                            .map(|a| {
                                if a == axis {
                                    vec![node[a]]
                                } else {
                                    [node[a].wrapping_sub(1), node[a]]
                                        .into_iter()
                                        .filter(|&v| v < dims[a])
                                        .collect()
                                }
                            })
                            .collect();
                        for &ci in &ranges[0] {
                            for &cj in &ranges[1] {
                                for &ck in &ranges[2] {
                                    sum += eps_cells[layout.cell_index(ci, cj, ck)];
                                    count += 1;
                                }
                            }
                        }
                        f.set(i, j, k, (count as f64 / sum) as f32);
                    }
                }
            }
            inv_eps[axis] = f;
        }

        let pml_state = match pml {
            Some(spec) => {
                spec.validate()?;
                let n_bg = boundary_index(&layout, &eps_cells);
                let active_axes = dim.ndim();
                let axes = [0, 1, 2].map(|a| {
                    if a < active_axes {
                        if 2 * spec.thickness >= dims[a] {
                            AxisProfile::none(dims[a])
                        } else {
                            AxisProfile::graded(&spec, dims[a], dx, dt, n_bg)
                        }
                    } else {
                        AxisProfile::none(dims[a])
                    }
                });
                if (0..active_axes).any(|a| 2 * spec.thickness >= dims[a]) {
                    return Err(Error::Config(format!(
                        "PML of {} cells does not fit in grid {:?}",
                        spec.thickness, dims
                    )));
                }
                let pairs: &[(Component, usize)] = match dim {
                    Dimensionality::TwoDTe => &[
                        (Component::Hz, 0),
                        (Component::Hz, 1),
                        (Component::Ex, 1),
                        (Component::Ey, 0),
                    ],
                    Dimensionality::ThreeD => &[
                        (Component::Hx, 1),
                        (Component::Hx, 2),
                        (Component::Hy, 2),
                        (Component::Hy, 0),
                        (Component::Hz, 0),
                        (Component::Hz, 1),
                        (Component::Ex, 1),
                        (Component::Ex, 2),
                        (Component::Ey, 2),
                        (Component::Ey, 0),
                        (Component::Ez, 0),
                        (Component::Ez, 1),
                    ],
                };
                let psi = pairs
                    .iter()
                    .map(|&(c, a)| (c, a, Field::zeros(shape(c))))
                    .collect();
                Cpml { axes, psi }
            }
            None => Cpml {
                axes: [0, 1, 2].map(|a| AxisProfile::none(dims[a])),
                psi: Vec::new(),
            },
        };

        Ok(Self {
            dim,
            layout,
            courant,
            dt,
            time_index: 0,
            e,
            h,
            inv_eps,
            eps_cells,
            pml: pml_state,
            pml_spec: pml,
        })
    }

    /// Homogeneous grid of relative permittivity `eps`.
    pub fn uniform(
        dim: Dimensionality,
        layout: GridLayout,
        eps: f64,
        courant: f64,
        pml: Option<PmlSpec>,
    ) -> Result<Self> {
        Self::new(dim, layout, vec![eps; layout.n_cells()], courant, pml)
    }

    pub fn dimensionality(&self) -> Dimensionality {
        self.dim
    }

    pub fn layout(&self) -> &GridLayout {
        &self.layout
    }

    pub fn dx(&self) -> f64 {
        self.layout.dx
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn courant(&self) -> f64 {
        self.courant
    }

    pub fn time_index(&self) -> u64 {
        self.time_index
    }

    /// Time of the electric field samples.
    pub fn time(&self) -> f64 {
        self.time_index as f64 * self.dt
    }

    pub fn pml_spec(&self) -> Option<&PmlSpec> {
        self.pml_spec.as_ref()
    }

    /// Thickness of the absorbing layer in cells (0 without PML).
    pub fn pml_thickness(&self) -> usize {
        self.pml_spec.map(|p| p.thickness).unwrap_or(0)
    }

    pub fn eps_cells(&self) -> &[f64] {
        &self.eps_cells
    }

    pub fn field(&self, c: Component) -> &Field {
        match c {
            Component::Ex => &self.e[0],
            Component::Ey => &self.e[1],
            Component::Ez => &self.e[2],
            Component::Hx => &self.h[0],
            Component::Hy => &self.h[1],
            Component::Hz => &self.h[2],
        }
    }

    pub fn field_mut(&mut self, c: Component) -> &mut Field {
        match c {
            Component::Ex => &mut self.e[0],
            Component::Ey => &mut self.e[1],
            Component::Ez => &mut self.e[2],
            Component::Hx => &mut self.h[0],
            Component::Hy => &mut self.h[1],
            Component::Hz => &mut self.h[2],
        }
    }

    /// Relative permittivity seen by an electric node.
    pub fn eps_at(&self, c: Component, idx: [usize; 3]) -> f64 {
        let f = &self.inv_eps[c.axis()];
        1.0 / f.get(idx[0], idx[1], idx[2]) as f64
    }

    /// Nearest node of component `c` to point `p`, if inside storage bounds.
    pub fn nearest_node(&self, c: Component, p: [f64; 3]) -> Option<[usize; 3]> {
        if !self.dim.has(c) {
            return None;
        }
        let off = c.offset();
        let shape = self.field(c).shape();
        let mut idx = [0usize; 3];
        let axes = self.dim.ndim();
        for a in 0..axes {
            let f = ((p[a] - self.layout.origin[a]) / self.layout.dx - off[a]).round();
            if f < 0.0 || f >= shape[a] as f64 {
                return None;
            }
            idx[a] = f as usize;
        }
        Some(idx)
    }

    /// Whether a node lies outside the absorbing layer.
    pub fn in_interior(&self, c: Component, idx: [usize; 3]) -> bool {
        let t = self.pml_thickness() as f64;
        let off = c.offset();
        (0..self.dim.ndim()).all(|a| {
            let x = idx[a] as f64 + off[a];
            x >= t && x <= self.layout.dims[a] as f64 - t
        })
    }

    pub fn reset_fields(&mut self) {
        for f in self.e.iter_mut().chain(self.h.iter_mut()) {
            f.fill(0.0);
        }
        for (_, _, f) in self.pml.psi.iter_mut() {
            f.fill(0.0);
        }
        self.time_index = 0;
    }

    /// Validates that source terms address existing electric nodes.
    pub fn check_sources(&self, sources: &[SourceTerm]) -> Result<()> {
        for s in sources {
            if !s.component.is_electric() || !self.dim.has(s.component) {
                return Err(Error::Config(format!(
                    "source component {} is not an electric component of this grid",
                    s.component
                )));
            }
            if !self.field(s.component).contains(s.index) {
                return Err(Error::Config(format!(
                    "source index {:?} outside {} storage {:?}",
                    s.index,
                    s.component,
                    self.field(s.component).shape()
                )));
            }
        }
        Ok(())
    }

    /// First half of the leapfrog cycle: H(n-½) → H(n+½).
    pub fn update_h(&mut self) {
        let c = (self.dt / self.layout.dx) as f32;
        let [ex, ey, ez] = &self.e;
        let [hx, hy, hz] = &mut self.h;
        let Cpml { axes, psi } = &mut self.pml;
        let axes = &*axes;
        let mut psi = psi_set(psi);
        match self.dim {
            Dimensionality::TwoDTe => update_h_2d(c, ex, ey, hz, axes, &mut psi),
            Dimensionality::ThreeD => update_h_3d(c, [ex, ey, ez], [hx, hy, hz], axes, &mut psi),
        }
    }

    /// Second half of the leapfrog cycle: E(n) → E(n+1), with source injection.
    pub fn update_e(&mut self, sources: &[SourceTerm]) {
        let c = (self.dt / self.layout.dx) as f32;
        {
            let [hx, hy, hz] = &self.h;
            let [ex, ey, ez] = &mut self.e;
            let Cpml { axes, psi } = &mut self.pml;
            let axes = &*axes;
            let mut psi = psi_set(psi);
            match self.dim {
                Dimensionality::TwoDTe => {
                    update_e_2d(c, [ex, ey], hz, &self.inv_eps, axes, &mut psi)
                }
                Dimensionality::ThreeD => {
                    update_e_3d(c, [ex, ey, ez], [hx, hy, hz], &self.inv_eps, axes, &mut psi)
                }
            }
        }
        let t = (self.time_index as f64 + 0.5) * self.dt;
        for s in sources {
            let j = s.current(t, self.time_index, self.dt);
            if j == 0.0 {
                continue;
            }
            let axis = s.component.axis();
            let inv = self.inv_eps[axis].get(s.index[0], s.index[1], s.index[2]) as f64;
            let field = &mut self.e[axis];
            let idx = field.index(s.index[0], s.index[1], s.index[2]);
            let v = field.as_slice()[idx] as f64 - self.dt * inv * j;
            field.as_mut_slice()[idx] = v as f32;
        }
        self.time_index += 1;
    }

    /// One full H-then-E leapfrog cycle.
    pub fn step(&mut self, sources: &[SourceTerm]) {
        self.update_h();
        self.update_e(sources);
    }

    /// Discrete electromagnetic energy ½Σ(εE(n)² + H(n-½)·H(n+½))·dV.
    ///
    /// This is the quantity conserved exactly by the leapfrog update in a
    /// closed lossless box.
    pub fn energy(&self) -> f64 {
        let dv = self.layout.cell_volume();
        let mut next = self.clone_h_state();
        next.update_h();
        let mut total = 0.0;
        for axis in 0..3 {
            let e = &self.e[axis];
            let inv = &self.inv_eps[axis];
            total += e
                .as_slice()
                .par_chunks(4096)
                .zip(inv.as_slice().par_chunks(4096))
                .map(|(ev, iv)| {
                    ev.iter()
                        .zip(iv)
                        .map(|(&x, &ie)| (x as f64) * (x as f64) / ie as f64)
                        .sum::<f64>()
                })
                .collect::<Vec<_>>()
                .into_iter()
                .sum::<f64>();
            let h0 = &self.h[axis];
            let h1 = &next.h[axis];
            total += h0
                .as_slice()
                .par_chunks(4096)
                .zip(h1.as_slice().par_chunks(4096))
                .map(|(a, b)| {
                    a.iter()
                        .zip(b)
                        .map(|(&x, &y)| x as f64 * y as f64)
                        .sum::<f64>()
                })
                .collect::<Vec<_>>()
                .into_iter()
                .sum::<f64>();
        }
        0.5 * total * dv
    }

    /// Simple energy ½Σ(εE² + H²)·dV over cells `lo..hi` (cell indices).
    pub fn energy_in_box(&self, lo: [usize; 3], hi: [usize; 3]) -> f64 {
        let dv = self.layout.cell_volume();
        let mut total = 0.0;
        for c in self.dim.components() {
            let f = self.field(*c);
            let [sx, sy, sz] = f.shape();
            let inv = if c.is_electric() {
                Some(&self.inv_eps[c.axis()])
            } else {
                None
            };
            for i in lo[0]..hi[0].min(sx) {
                for j in lo[1]..hi[1].min(sy) {
                    for k in lo[2]..hi[2].min(sz) {
                        let v = f.get(i, j, k) as f64;
                        let w = inv.map(|iv| 1.0 / iv.get(i, j, k) as f64).unwrap_or(1.0);
                        total += w * v * v;
                    }
                }
            }
        }
        0.5 * total * dv
    }

    /// Total simple energy over the whole grid.
    pub fn total_energy(&self) -> f64 {
        let [nx, ny, nz] = self.layout.dims;
        self.energy_in_box([0, 0, 0], [nx + 1, ny + 1, nz + 1])
    }

    fn clone_h_state(&self) -> SimulationGrid {
        self.clone()
    }
}

fn boundary_index(layout: &GridLayout, eps: &[f64]) -> f64 {
    let [nx, ny, nz] = layout.dims;
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let edge = i == 0
                    || j == 0
                    || i == nx - 1
                    || j == ny - 1
                    || (nz > 1 && (k == 0 || k == nz - 1));
                if edge {
                    sum += eps[layout.cell_index(i, j, k)].sqrt();
                    n += 1;
                }
            }
        }
    }
    if n == 0 {
        1.0
    } else {
        sum / n as f64
    }
}

#[inline(always)]
fn stretch(active: bool, b: f32, a: f32, kinv: f32, psi: &mut f32, d: f32) -> f32 {
    if active {
        *psi = b * *psi + a * d;
        kinv * d + *psi
    } else {
        d
    }
}

fn row_chunks<'a>(
    psi: &'a mut Option<&mut [f32]>,
    row: usize,
    n_rows: usize,
) -> Vec<Option<&'a mut [f32]>> {
    match psi {
        Some(p) => p.chunks_mut(row).map(Some).collect(),
        None => (0..n_rows).map(|_| None).collect(),
    }
}

fn update_h_2d(
    c: f32,
    ex: &Field,
    ey: &Field,
    hz: &mut Field,
    axes: &[AxisProfile; 3],
    psi: &mut PsiSet,
) {
    let [nx, ny, _] = hz.shape();
    let px = &axes[0];
    let py = &axes[1];
    let exs = ex.as_slice();
    let eys = ey.as_slice();
    let psi_x = row_chunks(&mut psi.hz_x, ny, nx);
    let psi_y = row_chunks(&mut psi.hz_y, ny, nx);
    hz.as_mut_slice()
        .par_chunks_mut(ny)
        .zip(psi_x.into_par_iter())
        .zip(psi_y.into_par_iter())
        .enumerate()
        .for_each(|(i, ((row, mut sx), mut sy))| {
            let ey0 = &eys[i * ny..(i + 1) * ny];
            let ey1 = &eys[(i + 1) * ny..(i + 2) * ny];
            let ex0 = &exs[i * (ny + 1)..(i + 1) * (ny + 1)];
            let xa = px.h_active[i];
            let (bx, ax, kx) = (px.h_b[i], px.h_a[i], px.h_kinv[i]);
            for j in 0..ny {
                let dey = ey1[j] - ey0[j];
                let dex = ex0[j + 1] - ex0[j];
                let tx = match sx.as_deref_mut() {
                    Some(s) if xa => stretch(true, bx, ax, kx, &mut s[j], dey),
                    _ => dey,
                };
                let ty = match sy.as_deref_mut() {
                    Some(s) if py.h_active[j] => {
                        stretch(true, py.h_b[j], py.h_a[j], py.h_kinv[j], &mut s[j], dex)
                    }
                    _ => dex,
                };
                row[j] -= c * (tx - ty);
            }
        });
}

fn update_e_2d(
    c: f32,
    e: [&mut Field; 2],
    hz: &Field,
    inv_eps: &[Field; 3],
    axes: &[AxisProfile; 3],
    psi: &mut PsiSet,
) {
    let [ex, ey] = e;
    let [nx, ny, _] = hz.shape();
    let px = &axes[0];
    let py = &axes[1];
    let hzs = hz.as_slice();

    // Ex(i, j) at (i+½, j): ∂Hz/∂y
    let inv_x = inv_eps[0].as_slice();
    let psi_y = row_chunks(&mut psi.ex_y, ny + 1, nx);
    ex.as_mut_slice()
        .par_chunks_mut(ny + 1)
        .zip(psi_y.into_par_iter())
        .enumerate()
        .for_each(|(i, (row, mut sy))| {
            let h = &hzs[i * ny..(i + 1) * ny];
            let inv = &inv_x[i * (ny + 1)..(i + 1) * (ny + 1)];
            for j in 1..ny {
                let d = h[j] - h[j - 1];
                let t = match sy.as_deref_mut() {
                    Some(s) if py.e_active[j] => {
                        stretch(true, py.e_b[j], py.e_a[j], py.e_kinv[j], &mut s[j], d)
                    }
                    _ => d,
                };
                row[j] += c * inv[j] * t;
            }
        });

    // Ey(i, j) at (i, j+½): -∂Hz/∂x
    let inv_y = inv_eps[1].as_slice();
    let psi_x = row_chunks(&mut psi.ey_x, ny, nx + 1);
    ey.as_mut_slice()
        .par_chunks_mut(ny)
        .zip(psi_x.into_par_iter())
        .enumerate()
        .for_each(|(i, (row, mut sx))| {
            if i == 0 || i == nx {
                return;
            }
            let h1 = &hzs[i * ny..(i + 1) * ny];
            let h0 = &hzs[(i - 1) * ny..i * ny];
            let inv = &inv_y[i * ny..(i + 1) * ny];
            let xa = px.e_active[i];
            let (bx, ax, kx) = (px.e_b[i], px.e_a[i], px.e_kinv[i]);
            for j in 0..ny {
                let d = h1[j] - h0[j];
                let t = match sx.as_deref_mut() {
                    Some(s) if xa => stretch(true, bx, ax, kx, &mut s[j], d),
                    _ => d,
                };
                row[j] -= c * inv[j] * t;
            }
        });
}

/// Axis profile lookup used by the 3D kernels: (active, b, a, kinv) at index.
macro_rules! prof {
    ($p:expr, e, $i:expr) => {
        ($p.e_active[$i], $p.e_b[$i], $p.e_a[$i], $p.e_kinv[$i])
    };
    ($p:expr, h, $i:expr) => {
        ($p.h_active[$i], $p.h_b[$i], $p.h_a[$i], $p.h_kinv[$i])
    };
}

#[inline(always)]
fn apply(p: (bool, f32, f32, f32), psi: Option<&mut f32>, d: f32) -> f32 {
    match psi {
        Some(s) if p.0 => stretch(true, p.1, p.2, p.3, s, d),
        _ => d,
    }
}

fn update_h_3d(
    c: f32,
    e: [&Field; 3],
    h: [&mut Field; 3],
    axes: &[AxisProfile; 3],
    psi: &mut PsiSet,
) {
    let [ex, ey, ez] = e;
    let [hx, hy, hz] = h;
    let [px, py, pz] = axes;

    // Hx(i,j,k) at (i, j+½, k+½): curl = ∂Ez/∂y - ∂Ey/∂z
    {
        let [sx, sy, sz] = hx.shape();
        let row = sy * sz;
        let ps_y = row_chunks(&mut psi.hx_y, row, sx);
        let ps_z = row_chunks(&mut psi.hx_z, row, sx);
        hx.as_mut_slice()
            .par_chunks_mut(row)
            .zip(ps_y.into_par_iter())
            .zip(ps_z.into_par_iter())
            .enumerate()
            .for_each(|(i, ((out, mut qy), mut qz))| {
                for j in 0..sy {
                    let fy = prof!(py, h, j);
                    for k in 0..sz {
                        let n = j * sz + k;
                        let dy = ez.get(i, j + 1, k) - ez.get(i, j, k);
                        let dz = ey.get(i, j, k + 1) - ey.get(i, j, k);
                        let ty = apply(fy, qy.as_deref_mut().map(|s| &mut s[n]), dy);
                        let tz = apply(prof!(pz, h, k), qz.as_deref_mut().map(|s| &mut s[n]), dz);
                        out[n] -= c * (ty - tz);
                    }
                }
            });
    }
    // Hy(i,j,k) at (i+½, j, k+½): curl = ∂Ex/∂z - ∂Ez/∂x
    {
        let [sx, sy, sz] = hy.shape();
        let row = sy * sz;
        let ps_z = row_chunks(&mut psi.hy_z, row, sx);
        let ps_x = row_chunks(&mut psi.hy_x, row, sx);
        hy.as_mut_slice()
            .par_chunks_mut(row)
            .zip(ps_z.into_par_iter())
            .zip(ps_x.into_par_iter())
            .enumerate()
            .for_each(|(i, ((out, mut qz), mut qx))| {
                let fx = prof!(px, h, i);
                for j in 0..sy {
                    for k in 0..sz {
                        let n = j * sz + k;
                        let dz = ex.get(i, j, k + 1) - ex.get(i, j, k);
                        let dx = ez.get(i + 1, j, k) - ez.get(i, j, k);
                        let tz = apply(prof!(pz, h, k), qz.as_deref_mut().map(|s| &mut s[n]), dz);
                        let tx = apply(fx, qx.as_deref_mut().map(|s| &mut s[n]), dx);
                        out[n] -= c * (tz - tx);
                    }
                }
            });
    }
    // Hz(i,j,k) at (i+½, j+½, k): curl = ∂Ey/∂x - ∂Ex/∂y
    {
        let [sx, sy, sz] = hz.shape();
        let row = sy * sz;
        let ps_x = row_chunks(&mut psi.hz_x, row, sx);
        let ps_y = row_chunks(&mut psi.hz_y, row, sx);
        hz.as_mut_slice()
            .par_chunks_mut(row)
            .zip(ps_x.into_par_iter())
            .zip(ps_y.into_par_iter())
            .enumerate()
            .for_each(|(i, ((out, mut qx), mut qy))| {
                let fx = prof!(px, h, i);
                for j in 0..sy {
                    let fy = prof!(py, h, j);
                    for k in 0..sz {
                        let n = j * sz + k;
                        let dx = ey.get(i + 1, j, k) - ey.get(i, j, k);
                        let dy = ex.get(i, j + 1, k) - ex.get(i, j, k);
                        let tx = apply(fx, qx.as_deref_mut().map(|s| &mut s[n]), dx);
                        let ty = apply(fy, qy.as_deref_mut().map(|s| &mut s[n]), dy);
                        out[n] -= c * (tx - ty);
                    }
                }
            });
    }
}

fn update_e_3d(
    c: f32,
    e: [&mut Field; 3],
    h: [&Field; 3],
    inv_eps: &[Field; 3],
    axes: &[AxisProfile; 3],
    psi: &mut PsiSet,
) {
    let [ex, ey, ez] = e;
    let [hx, hy, hz] = h;
    let [px, py, pz] = axes;

    // Ex(i,j,k) at (i+½, j, k): curl = ∂Hz/∂y - ∂Hy/∂z
    {
        let [sx, sy, sz] = ex.shape();
        let row = sy * sz;
        let inv = inv_eps[0].as_slice();
        let ps_y = row_chunks(&mut psi.ex_y, row, sx);
        let ps_z = row_chunks(&mut psi.ex_z, row, sx);
        ex.as_mut_slice()
            .par_chunks_mut(row)
            .zip(ps_y.into_par_iter())
            .zip(ps_z.into_par_iter())
            .enumerate()
            .for_each(|(i, ((out, mut qy), mut qz))| {
                let inv = &inv[i * row..(i + 1) * row];
                for j in 1..sy - 1 {
                    let fy = prof!(py, e, j);
                    for k in 1..sz - 1 {
                        let n = j * sz + k;
                        let dy = hz.get(i, j, k) - hz.get(i, j - 1, k);
                        let dz = hy.get(i, j, k) - hy.get(i, j, k - 1);
                        let ty = apply(fy, qy.as_deref_mut().map(|s| &mut s[n]), dy);
                        let tz = apply(prof!(pz, e, k), qz.as_deref_mut().map(|s| &mut s[n]), dz);
                        out[n] += c * inv[n] * (ty - tz);
                    }
                }
            });
    }
    // Ey(i,j,k) at (i, j+½, k): curl = ∂Hx/∂z - ∂Hz/∂x
    {
        let [sx, sy, sz] = ey.shape();
        let row = sy * sz;
        let inv = inv_eps[1].as_slice();
        let ps_z = row_chunks(&mut psi.ey_z, row, sx);
        let ps_x = row_chunks(&mut psi.ey_x, row, sx);
        ey.as_mut_slice()
            .par_chunks_mut(row)
            .zip(ps_z.into_par_iter())
            .zip(ps_x.into_par_iter())
            .enumerate()
            .for_each(|(i, ((out, mut qz), mut qx))| {
                if i == 0 || i == sx - 1 {
                    return;
                }
                let inv = &inv[i * row..(i + 1) * row];
                let fx = prof!(px, e, i);
                for j in 0..sy {
                    for k in 1..sz - 1 {
                        let n = j * sz + k;
                        let dz = hx.get(i, j, k) - hx.get(i, j, k - 1);
                        let dx = hz.get(i, j, k) - hz.get(i - 1, j, k);
                        let tz = apply(prof!(pz, e, k), qz.as_deref_mut().map(|s| &mut s[n]), dz);
                        let tx = apply(fx, qx.as_deref_mut().map(|s| &mut s[n]), dx);
                        out[n] += c * inv[n] * (tz - tx);
                    }
                }
            });
    }
    // Ez(i,j,k) at (i, j, k+½): curl = ∂Hy/∂x - ∂Hx/∂y
    {
        let [sx, sy, sz] = ez.shape();
        let row = sy * sz;
        let inv = inv_eps[2].as_slice();
        let ps_x = row_chunks(&mut psi.ez_x, row, sx);
        let ps_y = row_chunks(&mut psi.ez_y, row, sx);
        ez.as_mut_slice()
            .par_chunks_mut(row)
            .zip(ps_x.into_par_iter())
            .zip(ps_y.into_par_iter())
            .enumerate()
            .for_each(|(i, ((out, mut qx), mut qy))| {
                if i == 0 || i == sx - 1 {
                    return;
                }
                let inv = &inv[i * row..(i + 1) * row];
                let fx = prof!(px, e, i);
                for j in 1..sy - 1 {
                    let fy = prof!(py, e, j);
                    for k in 0..sz {
                        let n = j * sz + k;
                        let dx = hy.get(i, j, k) - hy.get(i - 1, j, k);
                        let dy = hx.get(i, j, k) - hx.get(i, j - 1, k);
                        let tx = apply(fx, qx.as_deref_mut().map(|s| &mut s[n]), dx);
                        let ty = apply(fy, qy.as_deref_mut().map(|s| &mut s[n]), dy);
                        out[n] += c * inv[n] * (tx - ty);
                    }
                }
            });
    }
}
