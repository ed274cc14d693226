//! Cross-module checks against values computed independently (50-digit
//! decimal arithmetic or direct linear algebra) and frozen here.

use dsct::forward::{forward_project, log_projection};
use dsct::opmt::{self, linearize, Method, OpmtConfig, Problem, ReconState};
use dsct::phantom::{generate_phantom, ingest_image_pair};
use dsct::dataset::write_tensor;
use dsct::spectra::bundled;
use dsct::{FanBeamGeometry, ImageGrid, ImagePair, ProjectionMatrix, SpectralChannel};
use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn three_bin() -> SpectralChannel {
    SpectralChannel {
        weights: vec![0.2, 0.5, 0.3],
        phi: vec![0.9, 0.5, 0.35],
        theta: vec![0.4, 0.25, 0.2],
    }
}

#[test]
fn linearize_matches_decimal_oracle() {
    let ch = three_bin();
    // (x1, x2) -> p_hat, q, phi, theta, a1, a2
    let cases = [
        (
            (1.7, 3.2),
            [
                1.63313456597294626e0,
                1.95316381499207244e-1,
                8.93870258344401838e-2,
                4.62727237110552434e-2,
                4.57652477218368857e-1,
                2.36911637190263309e-1,
            ],
        ),
        (
            (300.0, 400.0),
            [
                1.86203972804325936e2,
                1.35719453628186292e-81,
                4.75018087698652022e-82,
                2.71438907256372584e-82,
                0.35,
                0.2,
            ],
        ),
    ];
    for ((x1, x2), want) in cases {
        let lin = linearize(&ch, x1, x2).unwrap();
        let got = [lin.p_hat, lin.q, lin.phi, lin.theta, lin.a1, lin.a2];
        for (g, w) in got.iter().zip(want) {
            assert!(rel(*g, w) < 1e-12, "({x1}, {x2}): {g} vs {w}");
        }
        assert!((log_projection(&ch, x1, x2) - lin.p_hat).abs() <= 1e-15 * lin.p_hat.abs());
    }
}

#[test]
fn two_bin_uniform_phantom_central_ray() {
    let geom = FanBeamGeometry::new(4, 5, 0.2, 490.0, 390.0).unwrap();
    let grid = ImageGrid::covering_fov(&geom, 7).unwrap();
    let matrix = ProjectionMatrix::build(&geom, &grid).unwrap();
    let ch = SpectralChannel {
        weights: vec![0.6, 0.4],
        phi: vec![0.5, 0.3],
        theta: vec![0.3, 0.2],
    };
    let n = grid.n_pixels();
    let pair = ImagePair::new(grid, vec![0.5; n], vec![1.0; n]).unwrap();
    let sino = forward_project(&pair, &matrix, &ch, &ch).unwrap();
    // view 0, middle detector: horizontal ray through the full grid width
    let central = 2;
    assert!(rel(sino.p1[central], 0.26020592078717159243) < 1e-12);
    assert_eq!(sino.p1, sino.p2);
}

/// One pixel seen by one ray under two monochromatic spectra: a 2x2 linear
/// system in the bone and water densities.
fn one_pixel_errors(low: (f64, f64), high: (f64, f64), sweeps: usize) -> [f64; 2] {
    let geom = FanBeamGeometry::new(1, 1, 0.2, 490.0, 390.0).unwrap();
    let grid = ImageGrid::covering_fov(&geom, 1).unwrap();
    let matrix = ProjectionMatrix::build(&geom, &grid).unwrap();
    let chord = matrix.row(0).chord_length();
    let low_ch = SpectralChannel::monochromatic(low.0, low.1);
    let high_ch = SpectralChannel::monochromatic(high.0, high.1);
    let truth = ImagePair::new(grid, vec![0.7], vec![1.3]).unwrap();
    let sino = forward_project(&truth, &matrix, &low_ch, &high_ch).unwrap();

    let a = Matrix2::new(low.0 * chord, low.1 * chord, high.0 * chord, high.1 * chord);
    let direct = a.lu().solve(&Vector2::new(sino.p1[0], sino.p2[0])).unwrap();
    let cfg = OpmtConfig {
        n_sweeps: sweeps,
        ..OpmtConfig::default()
    };
    let err = |s: &ReconState| rel(s.f[0], direct[0]).max(rel(s.g[0], direct[1]));
    [
        err(&opmt::run(&sino, &matrix, &low_ch, &high_ch, &cfg).unwrap().state),
        err(&opmt::run_eart(&sino, &matrix, &low_ch, &high_ch, &cfg).unwrap().state),
    ]
}

#[test]
fn well_separated_two_unknown_system_matches_direct_solve() {
    let [o, e] = one_pixel_errors((1.0, 0.2), (0.1, 1.0), 10);
    assert!(o < 1e-6, "OPMT {o:e}");
    assert!(e < 1e-6, "E-ART {e:e}");
}

#[test]
fn bone_water_two_unknown_system_converges() {
    let mat = bundled::materials();
    let low = mat.interpolate(40.0).unwrap();
    let high = mat.interpolate(100.0).unwrap();
    let [o10, e10] = one_pixel_errors(low, high, 10);
    assert!(o10 < e10, "OPMT {o10:e} vs E-ART {e10:e}");
    let [o, e] = one_pixel_errors(low, high, 200);
    assert!(o < 1e-6, "OPMT {o:e}");
    assert!(e < 1e-6, "E-ART {e:e}");
}

fn disc_problem() -> (dsct::SinogramPair, ProjectionMatrix, SpectralChannel, SpectralChannel) {
    let geom = FanBeamGeometry::new(30, 48, 0.2 * 256.0 / 48.0, 490.0, 390.0).unwrap();
    let grid = ImageGrid::covering_fov(&geom, 32).unwrap();
    let matrix = ProjectionMatrix::build(&geom, &grid).unwrap();
    let mat = bundled::materials();
    let low = SpectralChannel::prepare(&bundled::low(), &mat).unwrap();
    let high = SpectralChannel::prepare(&bundled::high(), &mat).unwrap();
    let r = geom.fov_radius();
    let mut f = vec![0.0; grid.n_pixels()];
    let mut g = vec![0.0; grid.n_pixels()];
    for row in 0..grid.n_r {
        for col in 0..grid.n_r {
            let [x, y] = grid.pixel_center(row, col);
            let i = row * grid.n_r + col;
            if x.hypot(y) < 0.8 * r {
                g[i] = 1.0;
            }
            if (x - 0.3 * r).hypot(y) < 0.25 * r {
                f[i] = 1.4;
            }
        }
    }
    let truth = ImagePair::new(grid, f, g).unwrap();
    let sino = forward_project(&truth, &matrix, &low, &high).unwrap();
    (sino, matrix, low, high)
}

#[test]
fn zero_sweeps_returns_zero_state() {
    let (sino, matrix, low, high) = disc_problem();
    let cfg = OpmtConfig {
        n_sweeps: 0,
        ..OpmtConfig::default()
    };
    let r = opmt::run(&sino, &matrix, &low, &high, &cfg).unwrap();
    assert_eq!(r.state, ReconState::zeros(matrix.n_cols()));
    assert!(r.residuals.is_empty());
}

#[test]
fn residual_strictly_decreases_after_first_sweep() {
    let (sino, matrix, low, high) = disc_problem();
    let r = opmt::run(&sino, &matrix, &low, &high, &OpmtConfig::default()).unwrap();
    assert_eq!(r.residuals.len(), 10);
    for w in r.residuals.windows(2) {
        let a = w[0].residual_p1.hypot(w[0].residual_p2);
        let b = w[1].residual_p1.hypot(w[1].residual_p2);
        assert!(b < a, "sweep {}: {b} !< {a}", w[1].sweep);
    }
}

#[test]
fn single_ray_updates_agree_between_paths() {
    let (sino, matrix, low, high) = disc_problem();
    let problem = Problem::new(&sino, &matrix, &low, &high).unwrap();
    let cfg = OpmtConfig {
        lambda2: 0.0,
        ..OpmtConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut state = ReconState::zeros(matrix.n_cols());
    for v in state.f.iter_mut().chain(state.g.iter_mut()) {
        *v = rng.random_range(0.0..1.0);
    }
    for l in (0..matrix.n_rows()).step_by(37) {
        let mut a = state.clone();
        let mut b = state.clone();
        opmt::ray_update(&mut a, &problem, l, &cfg, Method::Opmt, None).unwrap();
        opmt::ray_update(&mut b, &problem, l, &cfg, Method::Eart, None).unwrap();
        assert_eq!(a, b, "ray {l}");
        state = a;
    }
}

#[test]
fn quarter_turn_rotates_the_sinogram() {
    let geom = FanBeamGeometry::new(20, 40, 0.2 * 256.0 / 40.0, 490.0, 390.0).unwrap();
    let grid = ImageGrid::covering_fov(&geom, 33).unwrap();
    let matrix = ProjectionMatrix::build(&geom, &grid).unwrap();
    let pair = generate_phantom(&grid, geom.fov_radius(), 5);
    let n = grid.n_r;
    // counter-clockwise quarter turn
    let rotate = |img: &[f64]| -> Vec<f64> {
        (0..n * n).map(|i| img[(i % n) * n + (n - 1 - i / n)]).collect()
    };
    let base = matrix.forward(&pair.f);
    let turned = matrix.forward(&rotate(&pair.f));
    let shift = 20 / 4;
    let scale = base.iter().copied().fold(0.0, f64::max).max(1.0);
    for view in 0..20 {
        for det in 0..40 {
            let a = base[view * 40 + det];
            let b = turned[((view + shift) % 20) * 40 + det];
            assert!((a - b).abs() <= 1e-9 * scale, "view {view} det {det}: {a} vs {b}");
        }
    }
}

#[test]
fn ingest_full_size_pair() {
    let dir = tempfile::tempdir().unwrap();
    let geom = FanBeamGeometry::reference();
    let grid = ImageGrid::covering_fov(&geom, 256).unwrap();
    let f: Vec<f32> = (0..256 * 256).map(|i| (i % 256) as f32 / 255.0).collect();
    let g: Vec<f32> = (0..256 * 256).map(|i| (i / 256) as f32 / 255.0).collect();
    let (fp, gp) = (dir.path().join("f.tsr"), dir.path().join("g.tsr"));
    write_tensor(&fp, &[256, 256], &f).unwrap();
    write_tensor(&gp, &[256, 256], &g).unwrap();
    let pair = ingest_image_pair(&fp, &gp, &grid, None).unwrap();
    assert_eq!(pair.grid.n_r, 256);
    assert_eq!(pair.f[255], 1.0);
    assert_eq!(pair.g[256 * 255], 1.0);

    let small = ImageGrid::covering_fov(&geom, 128).unwrap();
    assert!(ingest_image_pair(&fp, &gp, &small, None).is_err());
}

#[test]
fn one_view_rotation_shifts_the_sinogram() {
    let n_s = 24;
    let geom = FanBeamGeometry::new(n_s, 64, 0.2 * 256.0 / 64.0, 490.0, 390.0).unwrap();
    let grid = ImageGrid::covering_fov(&geom, 64).unwrap();
    let matrix = ProjectionMatrix::build(&geom, &grid).unwrap();
    let r = geom.fov_radius();
    let blob = |x: f64, y: f64| {
        let bump = |cx: f64, cy: f64, s: f64| (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * s * s)).exp();
        bump(0.3 * r, 0.1 * r, 0.15 * r) + 0.6 * bump(-0.2 * r, -0.25 * r, 0.2 * r)
    };
    let step = std::f64::consts::TAU / n_s as f64;
    let sample = |angle: f64| -> Vec<f64> {
        let (s, c) = angle.sin_cos();
        (0..grid.n_pixels())
            .map(|i| {
                let [x, y] = grid.pixel_center(i / grid.n_r, i % grid.n_r);
                // value of the rotated image at (x, y) is the original at R(-angle)(x, y)
                blob(c * x + s * y, -s * x + c * y)
            })
            .collect()
    };
    let base = matrix.forward(&sample(0.0));
    let turned = matrix.forward(&sample(step));
    let n_d = 64;
    for view in 0..n_s {
        let a = &base[view * n_d..(view + 1) * n_d];
        let next = (view + 1) % n_s;
        let b = &turned[next * n_d..(next + 1) * n_d];
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>();
        assert!((diff / norm).sqrt() < 0.02, "view {view}: {}", (diff / norm).sqrt());
    }
}
