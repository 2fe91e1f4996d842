//! Triangular-lattice photonic-crystal slab with a single-defect cavity.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fdtd::{Dimensionality, GridLayout};

const SQRT3_2: f64 = 0.866_025_403_784_438_6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatticeKind {
    Triangular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lattice {
    pub kind: LatticeKind,
    /// Periodicity; the normalized unit of length, so it must equal 1.
    pub a: f64,
    /// Hole radius in units of a.
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Slab {
    /// Membrane index (3D runs).
    pub n: f64,
    /// Thickness in units of a (3D runs).
    pub d: f64,
    /// Effective index used by 2D-TE runs.
    pub n_eff: f64,
}

/// Per-hole modification, addressed by lattice site `(m, n)` at
/// `m·(1, 0) + n·(1/2, √3/2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoleOverride {
    pub site: [i32; 2],
    #[serde(default)]
    pub shift: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Defect {
    /// Sites whose holes are removed.
    #[serde(default)]
    pub removed: Vec<[i32; 2]>,
    #[serde(default)]
    pub overrides: Vec<HoleOverride>,
}

impl Defect {
    pub fn is_empty(&self) -> bool {
        self.removed.is_empty() && self.overrides.is_empty()
    }
}

/// Parametric description of the crystal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhotonicCrystalSpec {
    pub lattice: Lattice,
    pub slab: Slab,
    /// Number of periods along x and number of rows along y.
    pub extent: [usize; 2],
    #[serde(default)]
    pub defect: Defect,
}

impl Default for PhotonicCrystalSpec {
    fn default() -> Self {
        Self {
            lattice: Lattice {
                kind: LatticeKind::Triangular,
                a: 1.0,
                r: 0.3,
            },
            slab: Slab {
                n: 3.6,
                d: 0.65,
                n_eff: 2.65,
            },
            extent: [11, 11],
            defect: Defect::default(),
        }
    }
}

/// Circular air hole.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hole {
    pub center: [f64; 2],
    pub radius: f64,
}

impl PhotonicCrystalSpec {
    /// Checks every invariant, returning all violations.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let l = &self.lattice;
        if l.a != 1.0 {
            v.push(format!(
                "lattice.a must be 1 (normalized units), got {}",
                l.a
            ));
        }
        if !(l.r >= 0.0 && l.r < 0.5 * l.a) {
            v.push(format!("lattice.r must satisfy 0 <= r < a/2, got {}", l.r));
        }
        if !(self.slab.n > 1.0) {
            v.push(format!("slab.n must exceed 1, got {}", self.slab.n));
        }
        if !(self.slab.n_eff > 1.0) {
            v.push(format!("slab.n_eff must exceed 1, got {}", self.slab.n_eff));
        }
        if !(self.slab.d > 0.0) {
            v.push(format!("slab.d must be positive, got {}", self.slab.d));
        }
        if self.extent.contains(&0) {
            v.push(format!("extent must be nonzero, got {:?}", self.extent));
        }
        for o in &self.defect.overrides {
            if let Some(r) = o.radius {
                if !(r > 0.0 && r < 0.5 * l.a) {
                    v.push(format!(
                        "override radius at site {:?} must lie in (0, a/2), got {r}",
                        o.site
                    ));
                }
            }
            let p = site_position(o.site);
            let q = [p[0] + o.shift[0], p[1] + o.shift[1]];
            if !self.inside_extent(p) || !self.inside_extent(q) {
                v.push(format!(
                    "override at site {:?} lies outside the crystal extent",
                    o.site
                ));
            }
        }
        for s in &self.defect.removed {
            if !self.inside_extent(site_position(*s)) {
                v.push(format!(
                    "removed site {s:?} lies outside the crystal extent"
                ));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Geometry(v.join("; ")))
        }
    }

    /// Half-widths of the crystal region.
    pub fn half_extent(&self) -> [f64; 2] {
        [
            0.5 * self.extent[0] as f64 * self.lattice.a,
            0.5 * self.extent[1] as f64 * SQRT3_2 * self.lattice.a,
        ]
    }

    pub fn inside_extent(&self, p: [f64; 2]) -> bool {
        let h = self.half_extent();
        p[0].abs() <= h[0] + 1e-9 && p[1].abs() <= h[1] + 1e-9
    }

    /// Slab index used for a given dimensionality.
    pub fn index(&self, dim: Dimensionality) -> f64 {
        match dim {
            Dimensionality::TwoDTe => self.slab.n_eff,
            Dimensionality::ThreeD => self.slab.n,
        }
    }

    /// Lattice sites inside the extent, in a fixed order.
    pub fn sites(&self) -> Vec<[i32; 2]> {
        let h = self.half_extent();
        let nmax = (h[1] / SQRT3_2).floor() as i32 + 1;
        let mmax = h[0].ceil() as i32 + nmax;
        let mut out = Vec::new();
        for n in -nmax..=nmax {
            for m in -mmax..=mmax {
                if self.inside_extent(site_position([m, n])) {
                    out.push([m, n]);
                }
            }
        }
        out
    }

    /// Holes after removals and overrides.
    pub fn holes(&self) -> Vec<Hole> {
        if self.lattice.r <= 0.0 && self.defect.overrides.iter().all(|o| o.radius.is_none()) {
            return Vec::new();
        }
        self.sites()
            .into_iter()
            .filter(|s| !self.defect.removed.contains(s))
            .filter_map(|s| {
                let p = site_position(s);
                let mut hole = Hole {
                    center: p,
                    radius: self.lattice.r,
                };
                if let Some(o) = self.defect.overrides.iter().find(|o| o.site == s) {
                    hole.center = [p[0] + o.shift[0], p[1] + o.shift[1]];
                    if let Some(r) = o.radius {
                        hole.radius = r;
                    }
                }
                (hole.radius > 0.0).then_some(hole)
            })
            .collect()
    }

    /// Whether an in-plane point lies inside an air hole.
    pub fn in_hole(&self, p: [f64; 2]) -> bool {
        self.holes().iter().any(|h| {
            let dx = p[0] - h.center[0];
            let dy = p[1] - h.center[1];
            dx * dx + dy * dy <= h.radius * h.radius
        })
    }

    /// SHA-256 of the JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Position of lattice site `(m, n)` in units of a.
pub fn site_position(site: [i32; 2]) -> [f64; 2] {
    let [m, n] = site;
    [m as f64 + 0.5 * n as f64, n as f64 * SQRT3_2]
}

/// Removes the central hole and pushes the two nearest holes along x outward
/// by 0.05a.
///
/// The outward shift is a placeholder for the unpublished cavity
/// modification; pass a custom [`Defect`] to model other designs.
pub fn make_single_defect_cavity(base: &PhotonicCrystalSpec) -> Result<PhotonicCrystalSpec> {
    if !base.defect.is_empty() {
        return Err(Error::Geometry("base crystal already has a defect".into()));
    }
    let mut spec = base.clone();
    spec.defect = Defect {
        removed: vec![[0, 0]],
        overrides: vec![
            HoleOverride {
                site: [1, 0],
                shift: [0.05, 0.0],
                radius: None,
            },
            HoleOverride {
                site: [-1, 0],
                shift: [-0.05, 0.0],
                radius: None,
            },
        ],
    };
    spec.validate()?;
    Ok(spec)
}

/// Padding and absorbing layer around the crystal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    /// Unpatterned slab between crystal edge and absorbing layer, units of a.
    pub padding: f64,
    /// Air above and below the slab (3D), units of a.
    pub cladding: f64,
    pub pml_cells: usize,
}

impl Default for DomainSpec {
    fn default() -> Self {
        Self {
            padding: 1.0,
            cladding: 1.5,
            pml_cells: 10,
        }
    }
}

/// Centered layout covering the crystal, padding and absorbing layer.
pub fn domain_layout(
    spec: &PhotonicCrystalSpec,
    dim: Dimensionality,
    resolution: f64,
    domain: &DomainSpec,
) -> GridLayout {
    let h = spec.half_extent();
    let cells = |len: f64| (len * resolution).ceil() as usize + domain.pml_cells;
    let hz = match dim {
        Dimensionality::TwoDTe => 0,
        Dimensionality::ThreeD => cells(0.5 * spec.slab.d + domain.cladding),
    };
    GridLayout::centered(
        dim,
        [
            cells(h[0] + domain.padding),
            cells(h[1] + domain.padding),
            hz,
        ],
        1.0 / resolution,
    )
}

/// How the permittivity on cells crossing an interface was computed.
pub const SMOOTHING_METHOD: &str = "area-weighted mean, 16x16 supersampling on boundary cells";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub spec_hash: String,
    pub resolution: f64,
    pub smoothing: String,
}

/// Cell-centered relative permittivity on a grid layout.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialMap {
    pub dim: Dimensionality,
    pub layout: GridLayout,
    pub eps: Vec<f64>,
    pub provenance: Provenance,
}

impl MaterialMap {
    pub fn uniform(dim: Dimensionality, layout: GridLayout, eps: f64) -> Self {
        Self {
            dim,
            layout,
            eps: vec![eps; layout.n_cells()],
            provenance: Provenance {
                spec_hash: format!("uniform:{eps}"),
                resolution: 1.0 / layout.dx,
                smoothing: "none".into(),
            },
        }
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.eps[self.layout.cell_index(i, j, k)]
    }

    pub fn max_eps(&self) -> f64 {
        self.eps.iter().cloned().fold(1.0, f64::max)
    }

    /// Same layout, every cell set to the largest permittivity.
    pub fn bulk_reference(&self) -> Self {
        Self::uniform(self.dim, self.layout, self.max_eps())
    }

    /// Raw little-endian f32 values plus `<path>.json` sidecar.
    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        let data: Vec<f32> = self.eps.iter().map(|&e| e as f32).collect();
        crate::fdtd::write_raw_f32(path, &data)?;
        let meta = serde_json::json!({
            "shape": self.layout.dims,
            "component": "eps",
            "time_index": 0,
            "units": "relative permittivity",
            "dtype": "f32",
            "byte_order": "little",
            "order": "x slowest, z fastest",
            "dx": self.layout.dx,
            "origin": self.layout.origin,
            "provenance": self.provenance,
        });
        std::fs::write(
            crate::fdtd::sidecar_path(path),
            serde_json::to_string_pretty(&meta)?,
        )?;
        Ok(())
    }
}

const SUPERSAMPLE: usize = 16;

/// Air fraction of a square cell centered at `c` with side `dx` inside a disc.
fn disc_fraction(c: [f64; 2], dx: f64, hole: &Hole) -> f64 {
    let h = 0.5 * dx;
    let dxc = (c[0] - hole.center[0]).abs();
    let dyc = (c[1] - hole.center[1]).abs();
    let far = (dxc + h).powi(2) + (dyc + h).powi(2);
    let r2 = hole.radius * hole.radius;
    if far <= r2 {
        return 1.0;
    }
    let nx = (dxc - h).max(0.0);
    let ny = (dyc - h).max(0.0);
    if nx * nx + ny * ny >= r2 {
        return 0.0;
    }
    let s = SUPERSAMPLE as f64;
    let mut inside = 0usize;
    for a in 0..SUPERSAMPLE {
        let ox = ((a as f64 + 0.5) / s - 0.5) * dx;
        let px = c[0] + ox - hole.center[0];
        for b in 0..SUPERSAMPLE {
            let oy = ((b as f64 + 0.5) / s - 0.5) * dx;
            let py = c[1] + oy - hole.center[1];
            if px * px + py * py <= r2 {
                inside += 1;
            }
        }
    }
    inside as f64 / (s * s)
}

/// Rasterizes onto the default domain for `resolution` cells per a.
pub fn rasterize(
    spec: &PhotonicCrystalSpec,
    dim: Dimensionality,
    resolution: f64,
    domain: &DomainSpec,
) -> Result<MaterialMap> {
    if !(resolution >= 8.0) {
        return Err(Error::Geometry(format!(
            "resolution must be at least 8 cells per a, got {resolution}"
        )));
    }
    let layout = domain_layout(spec, dim, resolution, domain);
    rasterize_on(spec, dim, &layout)
}

/// Rasterizes onto an explicit layout with area-weighted averaging.
pub fn rasterize_on(
    spec: &PhotonicCrystalSpec,
    dim: Dimensionality,
    layout: &GridLayout,
) -> Result<MaterialMap> {
    spec.validate()?;
    let n = spec.index(dim);
    let n2 = n * n;
    let [nx, ny, nz] = layout.dims;
    let dx = layout.dx;
    let mut air = vec![0.0f64; nx * ny];
    for hole in spec.holes() {
        let reach = hole.radius + dx;
        let lo_i = (((hole.center[0] - reach - layout.origin[0]) / dx)
            .floor()
            .max(0.0)) as usize;
        let hi_i = ((((hole.center[0] + reach - layout.origin[0]) / dx).ceil()) as usize).min(nx);
        let lo_j = (((hole.center[1] - reach - layout.origin[1]) / dx)
            .floor()
            .max(0.0)) as usize;
        let hi_j = ((((hole.center[1] + reach - layout.origin[1]) / dx).ceil()) as usize).min(ny);
        for i in lo_i..hi_i {
            for j in lo_j..hi_j {
                let c = layout.cell_center(i, j, 0);
                let f = disc_fraction([c[0], c[1]], dx, &hole);
                if f > 0.0 {
                    air[i * ny + j] = (air[i * ny + j] + f).min(1.0);
                }
            }
        }
    }
    let mut eps = vec![1.0; layout.n_cells()];
    let half_d = 0.5 * spec.slab.d;
    for i in 0..nx {
        for j in 0..ny {
            let solid = 1.0 - air[i * ny + j];
            for k in 0..nz {
                let fz = match dim {
                    Dimensionality::TwoDTe => 1.0,
                    Dimensionality::ThreeD => {
                        let zc = layout.cell_center(i, j, k)[2];
                        let lo = (zc - 0.5 * dx).max(-half_d);
                        let hi = (zc + 0.5 * dx).min(half_d);
                        ((hi - lo) / dx).clamp(0.0, 1.0)
                    }
                };
                let f = solid * fz;
                eps[layout.cell_index(i, j, k)] = if f >= 1.0 {
                    n2
                } else if f <= 0.0 {
                    1.0
                } else {
                    1.0 + (n2 - 1.0) * f
                };
            }
        }
    }
    Ok(MaterialMap {
        dim,
        layout: *layout,
        eps,
        provenance: Provenance {
            spec_hash: spec.hash(),
            resolution: 1.0 / dx,
            smoothing: SMOOTHING_METHOD.into(),
        },
    })
}

/// Crystal description together with its rasterized permittivity.
#[derive(Debug, Clone)]
pub struct PhotonicStructure {
    pub spec: PhotonicCrystalSpec,
    pub map: MaterialMap,
}

impl PhotonicStructure {
    pub fn build(
        spec: PhotonicCrystalSpec,
        dim: Dimensionality,
        resolution: f64,
        domain: &DomainSpec,
    ) -> Result<Self> {
        let map = rasterize(&spec, dim, resolution, domain)?;
        Ok(Self { spec, map })
    }

    pub fn dim(&self) -> Dimensionality {
        self.map.dim
    }

    /// Permittivity of the cell containing `p`.
    pub fn eps_at(&self, p: [f64; 3]) -> Option<f64> {
        self.map
            .layout
            .cell_of(p)
            .map(|c| self.map.get(c[0], c[1], c[2]))
    }

    /// Inside the crystal region and in dielectric (ε > 1) at the snapped cell.
    pub fn can_host(&self, p: [f64; 3]) -> bool {
        self.spec.inside_extent([p[0], p[1]]) && self.eps_at(p).is_some_and(|e| e > 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defect_free() -> PhotonicCrystalSpec {
        PhotonicCrystalSpec::default()
    }

    #[test]
    fn zero_radius_gives_uniform_slab() {
        let mut spec = defect_free();
        spec.lattice.r = 0.0;
        let m = rasterize(&spec, Dimensionality::TwoDTe, 16.0, &DomainSpec::default()).unwrap();
        let n2 = 2.65f64 * 2.65;
        assert!(m.eps.iter().all(|&e| e == n2));
    }

    #[test]
    fn cell_deep_inside_hole_is_air() {
        let spec = defect_free();
        let m = rasterize(&spec, Dimensionality::TwoDTe, 20.0, &DomainSpec::default()).unwrap();
        // hole at site (1, 0) -> (1, 0)
        let c = m.layout.cell_of([1.0, 0.0, 0.0]).unwrap();
        assert_eq!(m.get(c[0], c[1], 0), 1.0);
        // between holes (0.5, 0.29) is dielectric
        let d = m.layout.cell_of([0.5, 0.0, 0.0]).unwrap();
        assert_eq!(m.get(d[0], d[1], 0), 2.65f64 * 2.65);
    }

    #[test]
    fn air_fill_fraction_matches_triangular_area_ratio() {
        let spec = PhotonicCrystalSpec {
            extent: [21, 25],
            ..defect_free()
        };
        let res = 40.0;
        let m = rasterize(&spec, Dimensionality::TwoDTe, res, &DomainSpec::default()).unwrap();
        let n2 = 2.65f64 * 2.65;
        // 10 periods in x by 10 rectangular cells (height sqrt(3)) in y, centered
        let (wx, wy) = (10.0, 10.0 * 3f64.sqrt());
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..m.layout.dims[0] {
            for j in 0..m.layout.dims[1] {
                let c = m.layout.cell_center(i, j, 0);
                if c[0] >= -0.5 * wx && c[0] < 0.5 * wx && c[1] >= -0.5 * wy && c[1] < 0.5 * wy {
                    sum += (n2 - m.get(i, j, 0)) / (n2 - 1.0);
                    count += 1;
                }
            }
        }
        let measured = sum / count as f64;
        let expected = 2.0 * std::f64::consts::PI / 3f64.sqrt() * 0.09;
        assert!((expected - 0.3265).abs() < 5e-4);
        assert!(
            (measured - expected).abs() < 0.005,
            "fill {measured} vs {expected}"
        );
    }

    #[test]
    fn single_defect_removes_exactly_one_hole() {
        let base = defect_free();
        let cav = make_single_defect_cavity(&base).unwrap();
        assert_eq!(base.holes().len(), cav.holes().len() + 1);
        assert!(!cav.in_hole([0.0, 0.0]));
        assert!(cav.holes().iter().any(|h| h.center == [1.05, 0.0]));
        assert!(make_single_defect_cavity(&cav).is_err());
    }

    #[test]
    fn invariants_are_reported_together() {
        let mut spec = defect_free();
        spec.lattice.r = 0.6;
        spec.slab.n = 0.9;
        let v = spec.violations();
        assert_eq!(v.len(), 2, "{v:?}");
        assert!(v[0].contains("r < a/2"));
        spec.lattice.r = 0.3;
        spec.slab.n = 3.6;
        spec.defect.overrides.push(HoleOverride {
            site: [40, 0],
            shift: [0.0, 0.0],
            radius: None,
        });
        assert!(spec.validate().is_err());
    }

    #[test]
    fn symmetric_spec_gives_mirror_symmetric_map() {
        let spec = make_single_defect_cavity(&defect_free()).unwrap();
        let m = rasterize(&spec, Dimensionality::TwoDTe, 20.0, &DomainSpec::default()).unwrap();
        let [nx, ny, _] = m.layout.dims;
        for i in 0..nx {
            for j in 0..ny {
                let e = m.get(i, j, 0);
                assert_eq!(e.to_bits(), m.get(nx - 1 - i, j, 0).to_bits());
                assert_eq!(e.to_bits(), m.get(i, ny - 1 - j, 0).to_bits());
            }
        }
    }

    #[test]
    fn permittivity_bounds_hold() {
        let spec = make_single_defect_cavity(&defect_free()).unwrap();
        let m = rasterize(&spec, Dimensionality::TwoDTe, 12.0, &DomainSpec::default()).unwrap();
        let n2 = 2.65f64 * 2.65;
        assert!(m.eps.iter().all(|&e| (1.0..=n2).contains(&e)));
    }

    #[test]
    fn slab_3d_has_air_cladding() {
        let spec = PhotonicCrystalSpec {
            extent: [5, 5],
            ..defect_free()
        };
        let m = rasterize(&spec, Dimensionality::ThreeD, 10.0, &DomainSpec::default()).unwrap();
        let [nx, ny, nz] = m.layout.dims;
        assert_eq!(m.get(nx / 2, ny / 2, 0), 1.0);
        let c = m.layout.cell_of([0.5, 0.0, 0.0]).unwrap();
        assert_eq!(m.get(c[0], c[1], nz / 2), 3.6f64 * 3.6);
    }
}
