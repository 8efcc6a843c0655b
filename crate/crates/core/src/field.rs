//! Ground-truth fields on a regular node grid.
//!
//! Grid nodes include the boundary: node `(ix, iy)` sits at
//! `(xmin + ix dx, ymin + iy dy)` with `dx = width / (nx - 1)`. Values are
//! stored row-major with `y` as the row index.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::{se_kernel, BasisSet, KernelHyperparams};
use crate::error::{invalid, numerical, Result};
use crate::geometry::{Domain, Point};
use crate::linalg::{spd_factor, symmetrize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub domain: Domain,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn new(domain: Domain, nx: usize, ny: usize) -> Result<Self> {
        let spec = GridSpec { domain, nx, ny };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.ny < 2 {
            return Err(invalid(format!(
                "grid needs at least 2x2 nodes, got {}x{}",
                self.nx, self.ny
            )));
        }
        if !self.domain.is_valid() {
            return Err(invalid("grid domain is empty or not finite"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dx(&self) -> f64 {
        self.domain.width() / (self.nx - 1) as f64
    }

    pub fn dy(&self) -> f64 {
        self.domain.height() / (self.ny - 1) as f64
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn node(&self, ix: usize, iy: usize) -> Point {
        [
            self.domain.xmin + ix as f64 * self.dx(),
            self.domain.ymin + iy as f64 * self.dy(),
        ]
    }

    /// All nodes in storage order.
    pub fn nodes(&self) -> Vec<Point> {
        (0..self.ny)
            .flat_map(|iy| (0..self.nx).map(move |ix| (ix, iy)))
            .map(|(ix, iy)| self.node(ix, iy))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
    pub time: f64,
}

impl FieldGrid {
    pub fn zeros(spec: GridSpec) -> Self {
        FieldGrid {
            values: vec![0.0; spec.len()],
            spec,
            time: 0.0,
        }
    }

    pub fn from_values(spec: GridSpec, values: Vec<f64>, time: f64) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.len() {
            return Err(invalid(format!(
                "{} values for a {}x{} grid",
                values.len(),
                spec.nx,
                spec.ny
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(numerical("field contains non-finite values"));
        }
        Ok(FieldGrid { spec, values, time })
    }

    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[self.spec.index(ix, iy)]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Node holding the largest value.
    pub fn argmax(&self) -> Point {
        let (idx, _) =
            self.values
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                    if v > best.1 {
                        (i, v)
                    } else {
                        best
                    }
                });
        self.spec.node(idx % self.spec.nx, idx / self.spec.nx)
    }

    /// Bilinear interpolation; points on the boundary are inside.
    pub fn interpolate(&self, x: &Point) -> Result<f64> {
        let d = &self.spec.domain;
        if !d.contains(x) {
            return Err(invalid(format!(
                "point ({}, {}) is outside the field domain",
                x[0], x[1]
            )));
        }
        let fx = (x[0] - d.xmin) / self.spec.dx();
        let fy = (x[1] - d.ymin) / self.spec.dy();
        let ix = (fx.floor() as usize).min(self.spec.nx - 2);
        let iy = (fy.floor() as usize).min(self.spec.ny - 2);
        let tx = fx - ix as f64;
        let ty = fy - iy as f64;
        let v00 = self.get(ix, iy);
        let v10 = self.get(ix + 1, iy);
        let v01 = self.get(ix, iy + 1);
        let v11 = self.get(ix + 1, iy + 1);
        Ok((1.0 - tx) * (1.0 - ty) * v00
            + tx * (1.0 - ty) * v10
            + (1.0 - tx) * ty * v01
            + tx * ty * v11)
    }

    /// Header `nx,ny,xmin,xmax,ymin,ymax,t`, one line with those values, then
    /// `ny` rows of `nx` values.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let s = &self.spec;
        writeln!(out, "nx,ny,xmin,xmax,ymin,ymax,t")?;
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.nx, s.ny, s.domain.xmin, s.domain.xmax, s.domain.ymin, s.domain.ymax, self.time
        )?;
        for row in self.values.chunks(s.nx) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Noisy point reading: bilinear value plus `N(0, sigma_n^2)`.
pub fn measure<R: Rng + ?Sized>(
    field: &FieldGrid,
    x: &Point,
    sigma_n: f64,
    rng: &mut R,
) -> Result<f64> {
    let clean = field.interpolate(x)?;
    let noise: f64 = StandardNormal.sample(rng);
    Ok(clean + sigma_n * noise)
}

/// Draw through a basis: `f = sum_e w_e phi_e` with `w_e ~ N(0, S(lambda_e))`.
pub fn sample_gp_field_basis<R: Rng + ?Sized>(
    basis: &BasisSet,
    spec: &GridSpec,
    rng: &mut R,
) -> Result<FieldGrid> {
    spec.validate()?;
    let w = DVector::from_iterator(
        basis.len(),
        basis.spectral_densities().iter().map(|s| {
            let z: f64 = StandardNormal.sample(rng);
            s.sqrt() * z
        }),
    );
    let values = spec
        .nodes()
        .iter()
        .map(|x| Ok(basis.phi_vector(x)?.dot(&w)))
        .collect::<Result<Vec<_>>>()?;
    FieldGrid::from_values(*spec, values, 0.0)
}

/// Exact draw through a Cholesky factor of the kernel Gram matrix on the
/// nodes. Cubic in the node count.
pub fn sample_gp_field_dense<R: Rng + ?Sized>(
    hp: &KernelHyperparams,
    spec: &GridSpec,
    rng: &mut R,
) -> Result<FieldGrid> {
    spec.validate()?;
    let nodes = spec.nodes();
    let n = nodes.len();
    let jitter = 1e-8 * hp.sigma_s * hp.sigma_s;
    let mut gram = DMatrix::from_fn(n, n, |i, j| se_kernel(&nodes[i], &nodes[j], hp));
    for i in 0..n {
        gram[(i, i)] += jitter;
    }
    symmetrize(&mut gram);
    let chol = spd_factor(&gram, "field Gram matrix")?;
    let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)));
    let values = chol.l() * z;
    FieldGrid::from_values(*spec, values.iter().copied().collect(), 0.0)
}

pub fn diffusivity(x: &Point) -> f64 {
    0.005 * (x[0] * x[0] + x[1] * x[1]) + 0.01 * x[0] * x[1] + 0.02
}

pub fn velocity(x: &Point, t: f64) -> [f64; 2] {
    [2.0 * (x[0] + x[1] - t), x[1] - x[0] + t]
}

pub fn source(x: &Point, c: &Point) -> f64 {
    let dx = x[0] - c[0];
    let dy = x[1] - c[1];
    (-(dx * dx + dy * dy) / 0.007).exp()
}

/// Largest explicit step keeping every update a convex combination of
/// neighboring values (diffusion plus upwind transport), with a 0.9 margin.
pub fn stable_dt(spec: &GridSpec, t: f64) -> f64 {
    stable_dt_with(spec, t, diffusivity, velocity)
}

/// [`stable_dt`] for arbitrary coefficient fields.
pub fn stable_dt_with(
    spec: &GridSpec,
    t: f64,
    diffusivity: impl Fn(&Point) -> f64,
    velocity: impl Fn(&Point, f64) -> [f64; 2],
) -> f64 {
    let (dx, dy) = (spec.dx(), spec.dy());
    let mut d_max = 0.0f64;
    let mut vx_max = 0.0f64;
    let mut vy_max = 0.0f64;
    for x in spec.nodes() {
        d_max = d_max.max(diffusivity(&x).abs());
        let v = velocity(&x, t);
        vx_max = vx_max.max(v[0].abs());
        vy_max = vy_max.max(v[1].abs());
    }
    let rate =
        2.0 * d_max * (1.0 / (dx * dx) + 1.0 / (dy * dy)) + 2.0 * (vx_max / dx + vy_max / dy);
    if rate > 0.0 {
        0.9 / rate
    } else {
        f64::INFINITY
    }
}

/// Explicit Euler step of `df/dt = div(D grad f) + div(v f) + C` with
/// face-averaged diffusivity, conservative upwind transport along `-v`, and
/// zero values on the boundary.
pub fn convection_diffusion_step(grid: &FieldGrid, dt: f64, c: &Point) -> Result<FieldGrid> {
    transport_step(grid, dt, diffusivity, velocity, |x| source(x, c))
}

/// As [`convection_diffusion_step`] with the source multiplied by `amplitude`.
pub fn convection_diffusion_step_scaled(
    grid: &FieldGrid,
    dt: f64,
    c: &Point,
    amplitude: f64,
) -> Result<FieldGrid> {
    transport_step(grid, dt, diffusivity, velocity, |x| {
        amplitude * source(x, c)
    })
}

/// The same scheme with caller-supplied `D(x)`, `v(x, t)` and `C(x)`.
pub fn transport_step(
    grid: &FieldGrid,
    dt: f64,
    diffusivity: impl Fn(&Point) -> f64,
    velocity: impl Fn(&Point, f64) -> [f64; 2],
    src: impl Fn(&Point) -> f64,
) -> Result<FieldGrid> {
    let spec = grid.spec;
    let limit = stable_dt_with(&spec, grid.time, &diffusivity, &velocity);
    if !(dt > 0.0) || dt > limit {
        return Err(invalid(format!(
            "time step {dt} outside the stable range (0, {limit}]"
        )));
    }
    let (nx, ny) = (spec.nx, spec.ny);
    let (dx, dy) = (spec.dx(), spec.dy());
    let t = grid.time;
    let nodes = spec.nodes();
    let d: Vec<f64> = nodes.iter().map(&diffusivity).collect();
    // transport velocity u = -v
    let u: Vec<[f64; 2]> = nodes
        .iter()
        .map(|x| {
            let v = velocity(x, t);
            [-v[0], -v[1]]
        })
        .collect();
    let f = &grid.values;
    let idx = |ix: usize, iy: usize| iy * nx + ix;
    let upwind = |vel: f64, left: f64, right: f64| if vel > 0.0 { vel * left } else { vel * right };

    let mut next = vec![0.0; spec.len()];
    for iy in 1..ny - 1 {
        for ix in 1..nx - 1 {
            let i = idx(ix, iy);
            let (e, w, n, s) = (
                idx(ix + 1, iy),
                idx(ix - 1, iy),
                idx(ix, iy + 1),
                idx(ix, iy - 1),
            );
            let diff_x = (0.5 * (d[i] + d[e]) * (f[e] - f[i])
                - 0.5 * (d[i] + d[w]) * (f[i] - f[w]))
                / (dx * dx);
            let diff_y = (0.5 * (d[i] + d[n]) * (f[n] - f[i])
                - 0.5 * (d[i] + d[s]) * (f[i] - f[s]))
                / (dy * dy);
            let flux_e = upwind(0.5 * (u[i][0] + u[e][0]), f[i], f[e]);
            let flux_w = upwind(0.5 * (u[w][0] + u[i][0]), f[w], f[i]);
            let flux_n = upwind(0.5 * (u[i][1] + u[n][1]), f[i], f[n]);
            let flux_s = upwind(0.5 * (u[s][1] + u[i][1]), f[s], f[i]);
            let transport = -(flux_e - flux_w) / dx - (flux_n - flux_s) / dy;
            next[i] = f[i] + dt * (diff_x + diff_y + transport + src(&nodes[i]));
        }
    }
    if next.iter().any(|v| !v.is_finite()) {
        return Err(numerical(format!(
            "field became non-finite at t = {}",
            t + dt
        )));
    }
    Ok(FieldGrid {
        spec,
        values: next,
        time: t + dt,
    })
}

/// Steps forward to `until` using the stable step, shortened at the end.
pub fn advance(grid: &FieldGrid, until: f64, c: &Point) -> Result<FieldGrid> {
    advance_scaled(grid, until, c, 1.0)
}

pub fn advance_scaled(
    grid: &FieldGrid,
    until: f64,
    c: &Point,
    amplitude: f64,
) -> Result<FieldGrid> {
    let mut g = grid.clone();
    while g.time < until {
        let remaining = until - g.time;
        if remaining <= 1e-12 * until.abs().max(1.0) {
            g.time = until;
            break;
        }
        let dt = stable_dt(&g.spec, g.time).min(remaining);
        g = convection_diffusion_step_scaled(&g, dt, c, amplitude)?;
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_basis, SpectralForm};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(n: usize, hi: f64) -> GridSpec {
        GridSpec::new(Domain::square(0.0, hi), n, n).unwrap()
    }

    #[test]
    fn closed_forms() {
        assert_eq!(diffusivity(&[0.0, 0.0]), 0.02);
        assert_eq!(source(&[6.0, 6.0], &[6.0, 6.0]), 1.0);
        assert_eq!(velocity(&[0.0, 0.0], 0.0), [0.0, 0.0]);
        assert_eq!(velocity(&[1.0, 2.0], 0.5), [5.0, 1.5]);
    }

    #[test]
    fn interpolation() {
        let s = spec(3, 2.0);
        let g = FieldGrid::from_values(s, (0..9).map(|v| v as f64).collect(), 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(measure(&g, &[1.0, 1.0], 0.0, &mut rng).unwrap(), 4.0);
        assert_eq!(g.interpolate(&[2.0, 2.0]).unwrap(), 8.0);
        assert_eq!(
            g.interpolate(&[0.5, 0.5]).unwrap(),
            (0.0 + 1.0 + 3.0 + 4.0) / 4.0
        );
        assert!(g.interpolate(&[2.1, 0.0]).is_err());
    }

    #[test]
    fn measurement_noise_level() {
        let g = FieldGrid::zeros(spec(3, 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xs: Vec<f64> = (0..10_000)
            .map(|_| measure(&g, &[0.3, 0.3], 0.5, &mut rng).unwrap())
            .collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd =
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
        assert!((sd - 0.5).abs() < 0.025);
    }

    #[test]
    fn zero_field_without_source_stays_zero() {
        let g = FieldGrid::zeros(spec(11, 10.0));
        let dt = stable_dt(&g.spec, 0.0);
        let next = transport_step(&g, dt, diffusivity, velocity, |_| 0.0).unwrap();
        assert!(next.values.iter().all(|v| *v == 0.0));
        assert!(convection_diffusion_step(&g, 2.0 * dt, &[6.0, 6.0]).is_err());
    }

    #[test]
    fn source_peak_forms_near_center_and_moves() {
        let s = spec(51, 10.0);
        let c = [6.0, 6.0];
        let g0 = FieldGrid::zeros(s);
        let early = advance(&g0, 0.02, &c).unwrap();
        let peak = early.argmax();
        assert!((peak[0] - 6.0).abs() <= 0.5 && (peak[1] - 6.0).abs() <= 0.5);
        let later = advance(&early, 3.0, &c).unwrap();
        assert!(later.max_abs().is_finite());
        assert!(later.values.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn basis_draws_are_seeded() {
        let hp = KernelHyperparams {
            sigma_s: 1.0,
            l: 0.2,
            sigma_n: 0.1,
            l_k: 1.0,
        };
        let b = build_basis(49, 0.6, &hp, SpectralForm::Standard2d).unwrap();
        let s = GridSpec::new(Domain::square(-0.5, 0.5), 8, 8).unwrap();
        let a = sample_gp_field_basis(&b, &s, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let c = sample_gp_field_basis(&b, &s, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, c);
        let d = sample_gp_field_dense(&hp, &s, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(d.max_abs() > 0.0);
    }

    #[test]
    fn csv_layout() {
        let g = FieldGrid::zeros(spec(2, 1.0));
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "nx,ny,xmin,xmax,ymin,ymax,t");
        assert_eq!(lines[1], "2,2,0,1,0,1,0");
        assert_eq!(lines.len(), 4);
    }
}
