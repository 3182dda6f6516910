use droplab::droplet::verify_local_droplet;
use droplab::gas::{self, McmcConfig, SimBox};
use droplab::{detgas, io, obstacle, potential};
use droplab::{Grid2D, Localization, ObstacleParams, Potential, PotentialSpec, RegionMask, ScalarField};
use num_complex::Complex64;

fn quadratic() -> Potential {
    Potential::from_spec(&PotentialSpec::quadratic()).unwrap()
}

#[test]
fn dumps_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let g = Grid2D::centered((0.3, -0.2), 1.0, 0.1).unwrap();
    let f = ScalarField::from_fn(g, |z| z.re.sin() * z.im.exp());
    io::write_field(dir.path().join("f"), &f, "f").unwrap();
    let (back, name) = io::read_field(dir.path().join("f.f64")).unwrap();
    assert_eq!(name, "f");
    assert_eq!(back.grid, g);
    assert!(back.values.iter().zip(&f.values).all(|(a, b)| a.to_bits() == b.to_bits()));

    let m = RegionMask::annulus(g, Complex64::new(0.3, -0.2), 0.2, 0.7);
    io::write_mask(dir.path().join("m"), &m, "ring").unwrap();
    let (mb, _) = io::read_mask(dir.path().join("m.pgm")).unwrap();
    assert_eq!(mb, m);
}

#[test]
fn solved_droplet_verifies_and_survives_a_dump() {
    let dir = tempfile::tempdir().unwrap();
    let pot = Potential::from_spec(&PotentialSpec::anisotropic(0.3)).unwrap();
    let g = Grid2D::centered((0.0, 0.0), 3.0, 0.05).unwrap();
    let params = ObstacleParams::default();
    let (sol, d) = obstacle::solve_droplet(&pot, &g, &Localization::All, 0.5, &params).unwrap();
    assert!(sol.residual <= sol.tol_obs);

    io::write_mask(dir.path().join("droplet"), &d.mask, "droplet").unwrap();
    let (mask, _) = io::read_mask(dir.path().join("droplet.pgm")).unwrap();
    let (q, lap) = potential::sample_potential(&pot, &g).unwrap();
    let report = verify_local_droplet(&mask, &Localization::All, &q, &lap, 0.02, &params).unwrap();
    assert!(report.pass, "{:?}", report.conditions);
    assert!((report.robin - d.robin).abs() < 1e-12);

    // Q = 1.3x² + 0.7y²: an ellipse of area πt, long along y, with
    // semi-axes √t·√(0.7/1.3) and √t·√(1.3/0.7)
    let (a, b) = ((0.5f64 * 0.7 / 1.3).sqrt(), (0.5f64 * 1.3 / 0.7).sqrt());
    let ellipse = RegionMask::from_fn(g, |z| (z.re / a).powi(2) + (z.im / b).powi(2) <= 1.0);
    let haus = mask.hausdorff_to(&ellipse).unwrap();
    assert!(haus <= 2.0 * g.h, "hausdorff {haus}");
}

#[test]
fn gas_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let pot = quadratic();
    let cfg = McmcConfig {
        n: 3,
        m: 3.0,
        beta: 2.0,
        step_sigma: None,
        burn_in: 200,
        n_samples: 50,
        thinning: 2,
        seed: 5,
        sim_box: SimBox::centered(3.0),
    };
    let run = gas::mcmc_sample(&cfg, &pot).unwrap();
    let path = dir.path().join("samples.csv");
    run.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next(), Some("sample_index,particle_index,x,y"));
    assert_eq!(text.lines().count(), 1 + 50 * 3);

    let g = Grid2D::centered((0.0, 0.0), 4.5, 0.05).unwrap();
    let basis = detgas::gram_schmidt(&pot, 3, 3.0, &g, detgas::DEFAULT_TOL_GS).unwrap();
    basis.write_json(dir.path().join("basis.json")).unwrap();
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("basis.json")).unwrap()).unwrap();
    assert_eq!(v["norms"].as_array().unwrap().len(), 3);
    // h_j = π j!/3^{j+1}
    let h2 = v["norms"][2].as_f64().unwrap();
    assert!((h2 / (std::f64::consts::PI * 2.0 / 27.0) - 1.0).abs() < 1e-8);
}
