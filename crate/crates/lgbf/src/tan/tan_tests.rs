use super::*;
use crate::grid::AxisGrid;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ramp_map() -> TerrainMap {
    // Planar ramp h = 100 + 2x + 3y on a 5x5 raster with 10 m cells.
    let heights = DMatrix::from_fn(5, 5, |ix, iy| 100.0 + 2.0 * (ix as f64 * 10.0) + 3.0 * (iy as f64 * 10.0));
    TerrainMap {
        origin: (0.0, 0.0),
        cell: 10.0,
        heights,
    }
}

#[test]
fn terrain_sample_on_nodes_and_plane() {
    let map = ramp_map();
    assert_eq!(terrain_sample(&map, (20.0, 30.0)).unwrap(), 100.0 + 40.0 + 90.0);
    // Bilinear reproduces an affine surface anywhere.
    let v = terrain_sample(&map, (17.3, 24.9)).unwrap();
    assert!((v - (100.0 + 2.0 * 17.3 + 3.0 * 24.9)).abs() < 1e-10);
    assert!(matches!(
        terrain_sample(&map, (-1.0, 0.0)),
        Err(TanError::OutOfMap(_, _))
    ));
}

#[test]
fn terrain_sample_matches_four_corner_formula() {
    let map = synth_terrain(5, 200.0, 10.0, 30.0);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..200 {
        let x = rng.gen::<f64>() * 200.0;
        let y = rng.gen::<f64>() * 200.0;
        let got = terrain_sample(&map, (x, y)).unwrap();
        // Independent four-corner formula.
        let ix = ((x / 10.0).floor() as usize).min(map.heights.nrows() - 2);
        let iy = ((y / 10.0).floor() as usize).min(map.heights.ncols() - 2);
        let tx = x / 10.0 - ix as f64;
        let ty = y / 10.0 - iy as f64;
        let top = map.heights[(ix, iy)] * (1.0 - tx) + map.heights[(ix + 1, iy)] * tx;
        let bot = map.heights[(ix, iy + 1)] * (1.0 - tx) + map.heights[(ix + 1, iy + 1)] * tx;
        let expect = top * (1.0 - ty) + bot * ty;
        assert!((got - expect).abs() < 1e-10);
    }
}

#[test]
fn synth_terrain_deterministic_and_roughness() {
    let a = synth_terrain(3, 500.0, 25.0, 40.0);
    let b = synth_terrain(3, 500.0, 25.0, 40.0);
    assert_eq!(a.heights, b.heights);

    let flat = synth_terrain(3, 500.0, 25.0, 0.0);
    let h0 = flat.heights[(0, 0)];
    assert!(flat.heights.iter().all(|&h| (h - h0).abs() < 1e-9));

    for seed in 1..=10u64 {
        let mut last = -1.0;
        for &rough in &[5.0, 20.0, 80.0] {
            let m = synth_terrain(seed, 400.0, 20.0, rough);
            let n = m.heights.len() as f64;
            let mean = m.heights.sum() / n;
            let var = m.heights.iter().map(|h| (h - mean) * (h - mean)).sum::<f64>() / n;
            assert!(var > last, "variance not monotone for seed {seed}");
            last = var;
        }
    }
}

#[test]
fn dcm_basics() {
    assert!((dcm(0.0) - Matrix2::identity()).amax() < 1e-15);
    let quarter = dcm(std::f64::consts::FRAC_PI_2);
    assert!((quarter - Matrix2::new(0.0, -1.0, 1.0, 0.0)).amax() < 1e-12);
    for &psi in &[0.3, -1.2, 2.9] {
        let c = dcm(psi);
        assert!((c * dcm(-psi) - Matrix2::identity()).amax() < 1e-12);
        assert!((c.determinant() - 1.0).abs() < 1e-12);
        assert!((c.transpose() * c - Matrix2::identity()).amax() < 1e-12);
    }
}

#[test]
fn simulate_noiseless_follows_recursion() {
    let map = synth_terrain(1, 3000.0, 30.0, 20.0);
    let model = CvModel::standard([0.0; 4]);
    let meas = MeasModel { r_diag: [0.0; 3] };
    let x0 = [500.0, 500.0, 10.0, 5.0];
    let t = simulate(&model, &meas, &map, x0, 30, 42).unwrap();
    let mut x = DVector::from_column_slice(&x0);
    for k in 0..30 {
        for j in 0..4 {
            assert!((t.states[k][j] - x[j]).abs() < 1e-12);
        }
        let alt = terrain_sample(&map, (x[0], x[1])).unwrap();
        assert!((t.measurements[k][0] - alt).abs() < 1e-12);
        let vb = dcm(x[3].atan2(x[2])) * Vector2::new(x[2], x[3]);
        assert!((t.measurements[k][1] - vb[0]).abs() < 1e-12);
        assert!((t.measurements[k][2] - vb[1]).abs() < 1e-12);
        x = &model.f * &x;
    }
}

#[test]
fn simulate_deterministic_per_seed() {
    let map = synth_terrain(1, 3000.0, 30.0, 20.0);
    let model = CvModel::standard([0.25, 0.25, 0.01, 0.01]);
    let meas = MeasModel {
        r_diag: [9.0, 0.09, 0.09],
    };
    let a = simulate(&model, &meas, &map, [500.0, 500.0, 8.0, 6.0], 50, 7).unwrap();
    let b = simulate(&model, &meas, &map, [500.0, 500.0, 8.0, 6.0], 50, 7).unwrap();
    assert_eq!(a.states, b.states);
    assert_eq!(a.measurements, b.measurements);
}

#[test]
fn simulate_process_noise_statistics() {
    // Large flat map so the walk never exits.
    let map = TerrainMap {
        origin: (-1e7, -1e7),
        cell: 1e7,
        heights: DMatrix::from_element(3, 3, 200.0),
    };
    let q = [0.5f64.powi(2), 0.5f64.powi(2), 0.1f64.powi(2), 0.1f64.powi(2)];
    let model = CvModel::standard(q);
    let meas = MeasModel { r_diag: [0.0; 3] };
    let t = simulate(&model, &meas, &map, [0.0, 0.0, 0.0, 0.0], 10_000, 11).unwrap();
    // Recover the noise draws from consecutive states.
    let mut acc = [0.0f64; 4];
    let n = t.len() - 1;
    for k in 0..n {
        let x = DVector::from_column_slice(&t.states[k]);
        let next = DVector::from_column_slice(&t.states[k + 1]);
        let w = next - &model.f * x;
        for j in 0..4 {
            acc[j] += w[j] * w[j];
        }
    }
    for j in 0..4 {
        let var = acc[j] / n as f64;
        assert!((var - q[j]).abs() < 0.1 * q[j], "dim {j}: {var} vs {}", q[j]);
    }
}

#[test]
fn simulate_map_exit_reports_step() {
    let map = synth_terrain(1, 100.0, 10.0, 5.0);
    let model = CvModel::standard([0.0; 4]);
    let meas = MeasModel { r_diag: [0.0; 3] };
    let err = simulate(&model, &meas, &map, [50.0, 50.0, 30.0, 0.0], 20, 0).unwrap_err();
    assert!(matches!(err, TanError::MapExit(2)));
}

fn pos_grid(map: &TerrainMap) -> AxisGrid {
    let (xmax, ymax) = map.extent();
    let ax = |lo: f64, hi: f64| (0..9).map(|i| lo + (hi - lo) * i as f64 / 8.0).collect::<Vec<_>>();
    AxisGrid::new(vec![
        ax(map.origin.0, xmax),
        ax(map.origin.1, ymax),
        ax(-5.0, 5.0),
        ax(-5.0, 5.0),
    ])
    .unwrap()
}

#[test]
fn position_likelihood_flat_terrain_constant() {
    let map = TerrainMap {
        origin: (0.0, 0.0),
        cell: 50.0,
        heights: DMatrix::from_element(6, 6, 300.0),
    };
    let g = pos_grid(&map);
    let m = likelihood_position_matrix(&map, 300.0, &g, 3.0);
    let v0 = m[(0, 0)];
    assert!(m.iter().all(|&v| (v - v0).abs() < 1e-15));
}

#[test]
fn position_likelihood_peaks_where_innovation_smallest() {
    let map = ramp_map();
    let g = pos_grid(&map);
    let z = terrain_sample(&map, (g.axis(0)[5], g.axis(1)[2])).unwrap();
    let m = likelihood_position_matrix(&map, z, &g, 2.0);
    let mut best = (0, 0);
    let mut best_v = -1.0;
    for i in 0..9 {
        for j in 0..9 {
            if m[(i, j)] > best_v {
                best_v = m[(i, j)];
                best = (i, j);
            }
        }
    }
    // On a strictly monotone ramp the best cell has the smallest |innovation|.
    let mut min_inn = f64::INFINITY;
    let mut min_cell = (0, 0);
    for i in 0..9 {
        for j in 0..9 {
            let inn = (z - terrain_sample(&map, (g.axis(0)[i], g.axis(1)[j])).unwrap()).abs();
            if inn < min_inn {
                min_inn = inn;
                min_cell = (i, j);
            }
        }
    }
    assert_eq!(best, min_cell);
}

#[test]
fn position_likelihood_wide_sigma_flattens() {
    let map = ramp_map();
    let g = pos_grid(&map);
    let m = likelihood_position_matrix(&map, 150.0, &g, 1e7);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for &v in m.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    assert!(hi / lo - 1.0 < 1e-6);
}

#[test]
fn velocity_likelihood_peak_and_equivariance() {
    let map = ramp_map();
    let g = pos_grid(&map);
    // psi = 0, measurement on a grid node -> peak there.
    let zv = [g.axis(2)[6], g.axis(3)[3]];
    let m = likelihood_velocity_matrix(zv, 0.0, &g, [0.09, 0.09]);
    let mut best = (0, 0);
    let mut best_v = -1.0;
    for i in 0..9 {
        for j in 0..9 {
            if m[(i, j)] > best_v {
                best_v = m[(i, j)];
                best = (i, j);
            }
        }
    }
    assert_eq!(best, (6, 3));

    // Rotating both psi and z consistently leaves the matrix unchanged
    // (isotropic noise).
    let psi = 0.7;
    let z_rot = dcm(psi) * Vector2::new(zv[0], zv[1]);
    let m_rot = likelihood_velocity_matrix([z_rot[0], z_rot[1]], psi, &g, [0.09, 0.09]);
    assert!((m - m_rot).amax() < 1e-12);
}

#[test]
fn velocity_likelihood_separable_at_zero_heading() {
    let map = ramp_map();
    let g = pos_grid(&map);
    let m = likelihood_velocity_matrix([1.0, -2.0], 0.0, &g, [0.04, 0.16]);
    let col: Vec<f64> = g.axis(2).iter().map(|&v| crate::grid::gauss_pdf(1.0 - v, 0.04)).collect();
    let row: Vec<f64> = g.axis(3).iter().map(|&v| crate::grid::gauss_pdf(-2.0 - v, 0.16)).collect();
    for i in 0..9 {
        for j in 0..9 {
            assert!((m[(i, j)] - col[i] * row[j]).abs() < 1e-12 * m[(i, j)].max(1e-300));
        }
    }
}

#[test]
fn esri_ascii_fixture_and_nodata() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fix.asc");
    std::fs::write(
        &path,
        "ncols 2\nnrows 2\nxllcorner 10\nyllcorner 20\ncellsize 5\nNODATA_value -9999\n3 4\n1 -9999\n",
    )
    .unwrap();
    let map = load_esri_ascii(&path).unwrap();
    // First file row is the north row (iy = 1).
    assert_eq!(map.heights[(0, 1)], 3.0);
    assert_eq!(map.heights[(1, 1)], 4.0);
    assert_eq!(map.heights[(0, 0)], 1.0);
    assert!(map.heights[(1, 0)].is_nan());
    assert_eq!(map.origin, (10.0, 20.0));
    assert_eq!(terrain_sample(&map, (10.0, 25.0)).unwrap(), 3.0);
    // Any interpolation touching the NODATA corner fails.
    assert!(terrain_sample(&map, (14.0, 21.0)).is_err());
}

#[test]
fn esri_ascii_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rt.asc");
    let map = synth_terrain(8, 100.0, 20.0, 25.0);
    save_esri_ascii(&map, &path).unwrap();
    let back = load_esri_ascii(&path).unwrap();
    assert_eq!(back.heights.shape(), map.heights.shape());
    for (a, b) in back.heights.iter().zip(map.heights.iter()) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn esri_ascii_rejects_malformed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.asc");
    std::fs::write(&path, "ncols 2\nnrows 2\nxllcorner 0\n").unwrap();
    assert!(load_esri_ascii(&path).is_err());
    let ragged = dir.path().join("ragged.asc");
    std::fs::write(
        &ragged,
        "ncols 3\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2 3\n4 5\n",
    )
    .unwrap();
    assert!(matches!(
        load_esri_ascii(&ragged),
        Err(TanError::RaggedRow(1, 2, 3))
    ));
}

#[test]
fn trajectory_csv_header() {
    let map = synth_terrain(1, 3000.0, 30.0, 20.0);
    let model = CvModel::standard([0.0; 4]);
    let meas = MeasModel { r_diag: [0.0; 3] };
    let t = simulate(&model, &meas, &map, [500.0, 500.0, 10.0, 5.0], 3, 0).unwrap();
    let csv = t.to_csv();
    assert!(csv.starts_with("k,px,py,vx,vy,z_alt,z_vbx,z_vby,psi\n"));
    assert_eq!(csv.lines().count(), 4);
}
