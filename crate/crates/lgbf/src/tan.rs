//! Terrain-aided navigation problem instance.
//!
//! State is horizontal position and velocity in a world frame,
//! `[p_x, p_y, v_x, v_y]`. Dynamics are nearly constant velocity with unit
//! time step; measurements are a barometric altimeter matched against a
//! terrain raster plus a body-frame odometer velocity pair rotated by the
//! known heading.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

use crate::grid::{gauss_pdf, AxisGrid};

#[derive(Debug, Error)]
pub enum TanError {
    #[error("point ({0}, {1}) is outside the terrain raster")]
    OutOfMap(f64, f64),
    #[error("trajectory left the terrain raster at step {0}")]
    MapExit(usize),
    #[error("malformed raster header: {0}")]
    BadHeader(String),
    #[error("raster row {0} has {1} columns, expected {2}")]
    RaggedRow(usize, usize, usize),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("process noise covariance must be diagonal with positive entries")]
    BadProcessNoise,
    #[error("dynamics matrix must be invertible")]
    SingularDynamics,
}

/// Regular terrain elevation raster. `heights[(ix, iy)]` is the elevation at
/// `(x0 + ix * cell, y0 + iy * cell)`; NaN marks NODATA cells.
#[derive(Debug, Clone)]
pub struct TerrainMap {
    pub origin: (f64, f64),
    pub cell: f64,
    pub heights: DMatrix<f64>,
}

impl TerrainMap {
    pub fn extent(&self) -> (f64, f64) {
        (
            self.origin.0 + (self.heights.nrows() - 1) as f64 * self.cell,
            self.origin.1 + (self.heights.ncols() - 1) as f64 * self.cell,
        )
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (xmax, ymax) = self.extent();
        x >= self.origin.0 && x <= xmax && y >= self.origin.1 && y <= ymax
    }
}

/// Bilinear interpolation of the four raster nodes surrounding `p`.
/// NODATA corners and points off the raster hull are errors; the filters
/// translate those into zero likelihood.
pub fn terrain_sample(map: &TerrainMap, p: (f64, f64)) -> Result<f64, TanError> {
    let (x, y) = p;
    if !map.contains(x, y) {
        return Err(TanError::OutOfMap(x, y));
    }
    let fx = (x - map.origin.0) / map.cell;
    let fy = (y - map.origin.1) / map.cell;
    let ix = (fx.floor() as usize).min(map.heights.nrows() - 2);
    let iy = (fy.floor() as usize).min(map.heights.ncols() - 2);
    let tx = fx - ix as f64;
    let ty = fy - iy as f64;
    let corners = [
        (map.heights[(ix, iy)], (1.0 - tx) * (1.0 - ty)),
        (map.heights[(ix + 1, iy)], tx * (1.0 - ty)),
        (map.heights[(ix, iy + 1)], (1.0 - tx) * ty),
        (map.heights[(ix + 1, iy + 1)], tx * ty),
    ];
    let mut acc = 0.0;
    for (h, w) in corners {
        // NODATA corners only poison the result when they actually
        // contribute; exact node or edge hits stay valid.
        if h.is_nan() {
            if w != 0.0 {
                return Err(TanError::OutOfMap(x, y));
            }
        } else {
            acc += h * w;
        }
    }
    Ok(acc)
}

/// Deterministic synthetic terrain: a seeded sum of Gaussian hills plus a
/// low-frequency trend, scaled so the sample standard deviation equals
/// `roughness` (metres). The raster is square with side `extent` and node
/// spacing `cell`, origin at (0, 0), mean elevation 500 m.
pub fn synth_terrain(seed: u64, extent: f64, cell: f64, roughness: f64) -> TerrainMap {
    assert!(extent > 0.0 && cell > 0.0);
    let n = (extent / cell).round() as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos = Uniform::new(0.0, extent);
    // Two hill populations: broad features carrying the long-range height
    // structure and narrow ones adding short-scale relief, so the surface
    // is informative at several spatial scales while its pointwise gradient
    // is a poor guide to the large-scale structure.
    let width_broad = Uniform::new(extent / 40.0, extent / 8.0);
    let width_narrow = Uniform::new(extent / 100.0, extent / 30.0);
    let amp = Normal::new(0.0, 1.0).unwrap();

    let mut hills: Vec<(f64, f64, f64, f64)> = (0..120)
        .map(|_| {
            (
                pos.sample(&mut rng),
                pos.sample(&mut rng),
                width_broad.sample(&mut rng),
                amp.sample(&mut rng),
            )
        })
        .collect();
    hills.extend((0..80).map(|_| {
        (
            pos.sample(&mut rng),
            pos.sample(&mut rng),
            width_narrow.sample(&mut rng),
            0.5 * amp.sample(&mut rng),
        )
    }));
    let trend = (
        amp.sample(&mut rng) * 0.5,
        amp.sample(&mut rng) * 0.5,
        Uniform::new(0.0, std::f64::consts::TAU).sample(&mut rng),
    );

    let mut field = DMatrix::zeros(n, n);
    for ix in 0..n {
        let x = ix as f64 * cell;
        for iy in 0..n {
            let y = iy as f64 * cell;
            let mut h = 0.0;
            for &(cx, cy, w, a) in &hills {
                let d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                h += a * (-0.5 * d2 / (w * w)).exp();
            }
            h += trend.0 * (std::f64::consts::TAU * x / extent + trend.2).sin()
                + trend.1 * (std::f64::consts::TAU * y / extent + trend.2).cos();
            field[(ix, iy)] = h;
        }
    }
    // Normalise the field to zero mean / unit std, then scale by roughness,
    // so terrain variance is exactly monotone in the roughness parameter.
    let mean = field.sum() / (n * n) as f64;
    let var = field.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n * n) as f64;
    let std = var.sqrt().max(1e-12);
    let heights = field.map(|v| 500.0 + roughness * (v - mean) / std);
    TerrainMap {
        origin: (0.0, 0.0),
        cell,
        heights,
    }
}

/// Direction cosine matrix rotating world-frame vectors into the body frame
/// convention used by the odometer model.
pub fn dcm(psi: f64) -> Matrix2<f64> {
    Matrix2::new(psi.cos(), -psi.sin(), psi.sin(), psi.cos())
}

/// Nearly-constant-velocity dynamics with unit time step.
#[derive(Debug, Clone)]
pub struct CvModel {
    pub f: DMatrix<f64>,
    pub q_diag: Vec<f64>,
    /// Known input per step; empty means zero input.
    pub u: Vec<DVector<f64>>,
}

impl CvModel {
    /// The standard 4-state CV model: position integrates velocity.
    pub fn standard(q_diag: [f64; 4]) -> Self {
        let f = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.0, 1.0, 0.0, //
                0.0, 1.0, 0.0, 1.0, //
                0.0, 0.0, 1.0, 0.0, //
                0.0, 0.0, 0.0, 1.0,
            ],
        );
        Self {
            f,
            q_diag: q_diag.to_vec(),
            u: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), TanError> {
        if self.q_diag.len() != self.f.nrows() || self.q_diag.iter().any(|&q| q < 0.0) {
            return Err(TanError::BadProcessNoise);
        }
        if self.f.clone().try_inverse().is_none() {
            return Err(TanError::SingularDynamics);
        }
        Ok(())
    }

    pub fn input(&self, k: usize) -> DVector<f64> {
        self.u
            .get(k)
            .cloned()
            .unwrap_or_else(|| DVector::zeros(self.f.nrows()))
    }

    pub fn q_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(self.q_diag.clone()))
    }
}

/// Measurement model: altimeter plus body-frame odometer, all noise
/// components independent.
#[derive(Debug, Clone)]
pub struct MeasModel {
    /// Diagonal of the 3x3 measurement noise covariance:
    /// altitude (m^2), body velocity x and y (m^2 s^-2).
    pub r_diag: [f64; 3],
}

impl MeasModel {
    pub fn sigma_alt(&self) -> f64 {
        self.r_diag[0].sqrt()
    }
}

/// A simulated reference trajectory with its measurement sequence.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// K x 4 reference states [p_x, p_y, v_x, v_y].
    pub states: Vec<[f64; 4]>,
    /// K x 3 measurements [altitude, v_body_x, v_body_y].
    pub measurements: Vec<[f64; 3]>,
    /// Known heading per step, from the reference velocity.
    pub headings: Vec<f64>,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// CSV export: `k,px,py,vx,vy,z_alt,z_vbx,z_vby,psi`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,px,py,vx,vy,z_alt,z_vbx,z_vby,psi\n");
        for k in 0..self.len() {
            let s = self.states[k];
            let z = self.measurements[k];
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                k, s[0], s[1], s[2], s[3], z[0], z[1], z[2], self.headings[k]
            ));
        }
        out
    }
}

/// Simulates `steps` states and measurements. State noise is drawn from
/// N(0, Q) and measurement noise from N(0, R), both seeded; the heading at
/// each step is taken from the reference velocity.
pub fn simulate(
    model: &CvModel,
    meas: &MeasModel,
    map: &TerrainMap,
    x0: [f64; 4],
    steps: usize,
    seed: u64,
) -> Result<Trajectory, TanError> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let mut states = Vec::with_capacity(steps);
    let mut measurements = Vec::with_capacity(steps);
    let mut headings = Vec::with_capacity(steps);

    let mut x = DVector::from_column_slice(&x0);
    for k in 0..steps {
        if !map.contains(x[0], x[1]) {
            return Err(TanError::MapExit(k));
        }
        let psi = x[3].atan2(x[2]);
        let alt = terrain_sample(map, (x[0], x[1])).map_err(|_| TanError::MapExit(k))?;
        let vb = dcm(psi) * Vector2::new(x[2], x[3]);
        let z = [
            alt + meas.r_diag[0].sqrt() * std_normal.sample(&mut rng),
            vb[0] + meas.r_diag[1].sqrt() * std_normal.sample(&mut rng),
            vb[1] + meas.r_diag[2].sqrt() * std_normal.sample(&mut rng),
        ];
        states.push([x[0], x[1], x[2], x[3]]);
        measurements.push(z);
        headings.push(psi);

        let mut w = DVector::zeros(4);
        for j in 0..4 {
            w[j] = model.q_diag[j].sqrt() * std_normal.sample(&mut rng);
        }
        x = &model.f * &x + model.input(k) + w;
    }
    Ok(Trajectory {
        states,
        measurements,
        headings,
        seed,
    })
}

/// Altimeter likelihood over the two position axes of `grid`: entry
/// (i1, i2) is the Gaussian density of the altitude innovation at that grid
/// position; off-map points get zero.
pub fn likelihood_position_matrix(
    map: &TerrainMap,
    z_alt: f64,
    grid: &AxisGrid,
    sigma_alt: f64,
) -> DMatrix<f64> {
    let xs = grid.axis(0);
    let ys = grid.axis(1);
    let var = sigma_alt * sigma_alt;
    DMatrix::from_fn(xs.len(), ys.len(), |i, j| {
        match terrain_sample(map, (xs[i], ys[j])) {
            Ok(h) => gauss_pdf(z_alt - h, var),
            Err(_) => 0.0,
        }
    })
}

/// Odometer likelihood over the two velocity axes of `grid` (modes 2 and 3):
/// entry (i3, i4) is the 2-D Gaussian density of `z_vel - C(psi) * v_grid`
/// with diagonal covariance `r_vel`.
pub fn likelihood_velocity_matrix(
    z_vel: [f64; 2],
    psi: f64,
    grid: &AxisGrid,
    r_vel: [f64; 2],
) -> DMatrix<f64> {
    let vxs = grid.axis(2);
    let vys = grid.axis(3);
    let c = dcm(psi);
    DMatrix::from_fn(vxs.len(), vys.len(), |i, j| {
        let vb = c * Vector2::new(vxs[i], vys[j]);
        gauss_pdf(z_vel[0] - vb[0], r_vel[0]) * gauss_pdf(z_vel[1] - vb[1], r_vel[1])
    })
}

/// Reads an ESRI ASCII grid. Header keys are case-insensitive; rows run
/// north to south, columns west to east. NODATA cells become NaN.
pub fn load_esri_ascii(path: &Path) -> Result<TerrainMap, TanError> {
    let file = std::fs::File::open(path).map_err(|source| TanError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();

    let mut header = std::collections::HashMap::new();
    let mut first_data_line: Option<String> = None;
    for _ in 0..6 {
        let line = match lines.next() {
            Some(l) => l.map_err(|source| TanError::Io {
                path: path.display().to_string(),
                source,
            })?,
            None => return Err(TanError::BadHeader("truncated file".into())),
        };
        let mut parts = line.split_whitespace();
        let key = parts
            .next()
            .ok_or_else(|| TanError::BadHeader("empty header line".into()))?
            .to_ascii_lowercase();
        if key.parse::<f64>().is_ok() {
            // Optional NODATA line absent; this is already data.
            first_data_line = Some(line);
            break;
        }
        let value: f64 = parts
            .next()
            .ok_or_else(|| TanError::BadHeader(format!("missing value for {key}")))?
            .parse()
            .map_err(|_| TanError::BadHeader(format!("bad value for {key}")))?;
        header.insert(key, value);
    }

    let need = |k: &str| {
        header
            .get(k)
            .copied()
            .ok_or_else(|| TanError::BadHeader(format!("missing key {k}")))
    };
    let ncols = need("ncols")? as usize;
    let nrows = need("nrows")? as usize;
    let xll = need("xllcorner")?;
    let yll = need("yllcorner")?;
    let cell = need("cellsize")?;
    let nodata = header.get("nodata_value").copied();
    if ncols < 2 || nrows < 2 || cell <= 0.0 {
        return Err(TanError::BadHeader("degenerate raster dimensions".into()));
    }

    // heights[(ix, iy)]: ix along x (columns of the file), iy along y.
    let mut heights = DMatrix::from_element(ncols, nrows, f64::NAN);
    let mut row = 0usize;
    let mut handle_line = |line: &str, row: usize| -> Result<(), TanError> {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| TanError::BadHeader(format!("bad data token in row {row}")))?;
        if vals.len() != ncols {
            return Err(TanError::RaggedRow(row, vals.len(), ncols));
        }
        let iy = nrows - 1 - row; // first row is the northernmost
        for (ix, &v) in vals.iter().enumerate() {
            let h = match nodata {
                Some(nd) if v == nd => f64::NAN,
                _ => v,
            };
            heights[(ix, iy)] = h;
        }
        Ok(())
    };
    if let Some(line) = first_data_line {
        handle_line(&line, row)?;
        row += 1;
    }
    for line in lines {
        let line = line.map_err(|source| TanError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        if row >= nrows {
            return Err(TanError::BadHeader("too many data rows".into()));
        }
        handle_line(&line, row)?;
        row += 1;
    }
    if row != nrows {
        return Err(TanError::BadHeader(format!(
            "expected {nrows} data rows, found {row}"
        )));
    }
    Ok(TerrainMap {
        origin: (xll, yll),
        cell,
        heights,
    })
}

/// Writes a raster in the same ESRI ASCII layout `load_esri_ascii` reads.
pub fn save_esri_ascii(map: &TerrainMap, path: &Path) -> Result<(), TanError> {
    let mut f = std::fs::File::create(path).map_err(|source| TanError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let ncols = map.heights.nrows();
    let nrows = map.heights.ncols();
    let mut out = String::new();
    out.push_str(&format!("ncols {ncols}\n"));
    out.push_str(&format!("nrows {nrows}\n"));
    out.push_str(&format!("xllcorner {}\n", map.origin.0));
    out.push_str(&format!("yllcorner {}\n", map.origin.1));
    out.push_str(&format!("cellsize {}\n", map.cell));
    out.push_str("NODATA_value -9999\n");
    for row in 0..nrows {
        let iy = nrows - 1 - row;
        let line: Vec<String> = (0..ncols)
            .map(|ix| {
                let h = map.heights[(ix, iy)];
                if h.is_nan() {
                    "-9999".to_string()
                } else {
                    format!("{h:.6}")
                }
            })
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    f.write_all(out.as_bytes()).map_err(|source| TanError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tan_tests;
