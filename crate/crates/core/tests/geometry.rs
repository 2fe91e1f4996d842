use pcsim_core::fdtd::{Dimensionality, GridLayout};
use pcsim_core::geometry::*;
use proptest::prelude::*;

fn n2() -> f64 {
    2.65f64 * 2.65
}

#[test]
fn rasterization_converges_with_resolution() {
    let spec = make_single_defect_cavity(&PhotonicCrystalSpec::default()).unwrap();
    // square patch [-6, 6]^2 so that 2x2 fine cells tile each coarse cell
    let layout = |res: f64| GridLayout {
        dims: [(12.0 * res) as usize, (12.0 * res) as usize, 1],
        dx: 1.0 / res,
        origin: [-6.0, -6.0, -0.5 / res],
    };
    let (coarse_layout, fine_layout) = (layout(20.0), layout(40.0));
    let coarse = rasterize_on(&spec, Dimensionality::TwoDTe, &coarse_layout).unwrap();
    let fine = rasterize_on(&spec, Dimensionality::TwoDTe, &fine_layout).unwrap();
    let [nx, ny, _] = coarse.layout.dims;
    assert_eq!(fine.layout.dims[0], 2 * nx);
    let mut sum = 0.0;
    for i in 0..nx {
        for j in 0..ny {
            let avg = (fine.get(2 * i, 2 * j, 0)
                + fine.get(2 * i + 1, 2 * j, 0)
                + fine.get(2 * i, 2 * j + 1, 0)
                + fine.get(2 * i + 1, 2 * j + 1, 0))
                / 4.0;
            let c = coarse.get(i, j, 0);
            sum += ((avg - c) / c).powi(2);
        }
    }
    let rms = (sum / (nx * ny) as f64).sqrt();
    assert!(rms < 0.02, "rms {rms}");
}

#[test]
fn cavity_cannot_be_applied_twice() {
    let cav = make_single_defect_cavity(&PhotonicCrystalSpec::default()).unwrap();
    assert!(matches!(
        make_single_defect_cavity(&cav),
        Err(pcsim_core::Error::Geometry(_))
    ));
}

#[test]
fn default_cavity_keeps_the_center_in_dielectric() {
    let cav = make_single_defect_cavity(&PhotonicCrystalSpec::default()).unwrap();
    let s = PhotonicStructure::build(cav, Dimensionality::TwoDTe, 16.0, &DomainSpec::default())
        .unwrap();
    assert!(s.can_host([0.0; 3]));
    assert_eq!(s.eps_at([0.0; 3]), Some(n2()));
    assert!(!s.can_host([1.05, 0.0, 0.0]));
}

#[test]
fn rasterization_is_deterministic() {
    let spec = PhotonicCrystalSpec::default();
    let a = rasterize(&spec, Dimensionality::TwoDTe, 16.0, &DomainSpec::default()).unwrap();
    let b = rasterize(&spec, Dimensionality::TwoDTe, 16.0, &DomainSpec::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.provenance.spec_hash, spec.hash());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn fill_fraction_tracks_the_hole_area(r in 0.1f64..0.45) {
        let mut spec = PhotonicCrystalSpec::default();
        spec.lattice.r = r;
        spec.extent = [9, 11];
        let m = rasterize(&spec, Dimensionality::TwoDTe, 24.0, &DomainSpec::default()).unwrap();
        // 6 periods by 3 rectangular cells of height sqrt(3), centered on a lattice site
        let (wx, wy) = (6.0, 3.0 * 3f64.sqrt());
        let (mut sum, mut count) = (0.0, 0usize);
        for i in 0..m.layout.dims[0] {
            for j in 0..m.layout.dims[1] {
                let c = m.layout.cell_center(i, j, 0);
                if c[0].abs() < 0.5 * wx && c[1].abs() < 0.5 * wy {
                    sum += (n2() - m.get(i, j, 0)) / (n2() - 1.0);
                    count += 1;
                }
            }
        }
        let expected = 2.0 * std::f64::consts::PI / 3f64.sqrt() * r * r;
        prop_assert!((sum / count as f64 - expected).abs() < 0.01);
        prop_assert!(m.eps.iter().all(|&e| (1.0..=n2()).contains(&e)));
    }
}
