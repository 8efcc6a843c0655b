//! Reduced-rank Hilbert-space eigen-system of the squared-exponential kernel
//! on a 2-D box `[-L, L]^2`.
//!
//! The Laplacian with Dirichlet boundary conditions on the box has the
//! eigenfunctions `prod_m L^{-1/2} sin(pi j_m (x_m + L) / 2L)` with
//! eigenvalues `sum_m (pi j_m / 2L)^2`. Weighting each product term by the
//! kernel's spectral density at the eigenvalue gives a finite-rank surrogate
//! of the stationary kernel, exact in the limit of many functions and a box
//! much larger than the length-scale.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{Domain, Point};

/// Points within this distance outside the box are still accepted as lying
/// on its boundary.
const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelHyperparams {
    /// Signal standard deviation.
    pub sigma_s: f64,
    /// Spatial length-scale, in basis-frame units.
    pub l: f64,
    /// Measurement-noise standard deviation.
    pub sigma_n: f64,
    /// Temporal length-scale in sensing steps (dynamic fields only).
    pub l_k: f64,
}

impl KernelHyperparams {
    pub fn new(sigma_s: f64, l: f64, sigma_n: f64, l_k: f64) -> Result<Self> {
        let hp = KernelHyperparams {
            sigma_s,
            l,
            sigma_n,
            l_k,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(ok(self.sigma_s) && ok(self.l) && ok(self.sigma_n) && ok(self.l_k)) {
            return Err(invalid(format!(
                "hyperparameters must be finite and positive, got {self:?}"
            )));
        }
        Ok(())
    }
}

impl Default for KernelHyperparams {
    fn default() -> Self {
        KernelHyperparams {
            sigma_s: 4.0,
            l: 0.05,
            sigma_n: 0.5,
            l_k: 3600.0,
        }
    }
}

/// Which closed form is used for the squared-exponential spectral density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralForm {
    /// `sigma_s^2 (2 pi l)^{3/2} exp(-l^2 lambda / 2)`
    #[default]
    ThreeHalves,
    /// `sigma_s^2 (2 pi) l^2 exp(-l^2 lambda / 2)`, the 2-D Fourier transform.
    #[serde(rename = "standard_2d")]
    Standard2d,
}

/// Affine map from experiment coordinates to the centred basis frame:
/// `local = (x - center) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub center: Point,
    pub scale: f64,
}

impl Frame {
    pub const IDENTITY: Frame = Frame {
        center: [0.0, 0.0],
        scale: 1.0,
    };

    /// Centres `domain` on the origin and shrinks its longer side to unit
    /// length, so a unit square and `[0, 10]^2` land on the same box.
    pub fn for_domain(domain: &Domain) -> Self {
        Frame {
            center: domain.center(),
            scale: domain.width().max(domain.height()),
        }
    }

    pub fn to_local(&self, x: &Point) -> Point {
        [
            (x[0] - self.center[0]) / self.scale,
            (x[1] - self.center[1]) / self.scale,
        ]
    }
}

impl Default for Frame {
    fn default() -> Self {
        Frame::IDENTITY
    }
}

/// `sigma_s^2 exp(-|x - x'|^2 / (2 l^2))`.
pub fn se_kernel(x: &Point, x_prime: &Point, hp: &KernelHyperparams) -> f64 {
    let dx = x[0] - x_prime[0];
    let dy = x[1] - x_prime[1];
    hp.sigma_s * hp.sigma_s * (-(dx * dx + dy * dy) / (2.0 * hp.l * hp.l)).exp()
}

pub fn spectral_density(lambda: f64, hp: &KernelHyperparams, form: SpectralForm) -> f64 {
    let amplitude = match form {
        SpectralForm::ThreeHalves => (2.0 * std::f64::consts::PI * hp.l).powf(1.5),
        SpectralForm::Standard2d => 2.0 * std::f64::consts::PI * hp.l * hp.l,
    };
    hp.sigma_s * hp.sigma_s * amplitude * (-hp.l * hp.l * lambda / 2.0).exp()
}

/// Immutable set of `E` eigenfunctions sorted by ascending eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    half_width: f64,
    index_pairs: Vec<(u32, u32)>,
    eigenvalues: Vec<f64>,
    spectral_densities: Vec<f64>,
    hp: KernelHyperparams,
    form: SpectralForm,
    frame: Frame,
}

/// Enumerates the `count` index pairs with the smallest `j1^2 + j2^2`, ties
/// broken lexicographically.
fn smallest_index_pairs(count: usize) -> Vec<(u32, u32)> {
    // Every selected pair satisfies j1^2 + j2^2 <= 2 * ceil(sqrt(count))^2.
    let side = (count as f64).sqrt().ceil() as u32;
    let reach = ((2.0_f64).sqrt() * side as f64).ceil() as u32 + 1;
    let mut pairs: Vec<(u32, u32)> = (1..=reach)
        .flat_map(|a| (1..=reach).map(move |b| (a, b)))
        .collect();
    pairs.sort_by_key(|&(a, b)| (a as u64 * a as u64 + b as u64 * b as u64, a, b));
    pairs.truncate(count);
    pairs
}

/// Builds the basis in the identity frame, i.e. points passed to the
/// evaluation functions are already centred.
pub fn build_basis(
    count: usize,
    half_width: f64,
    hp: &KernelHyperparams,
    form: SpectralForm,
) -> Result<BasisSet> {
    BasisSet::new(count, half_width, hp, form, Frame::IDENTITY)
}

impl BasisSet {
    pub fn new(
        count: usize,
        half_width: f64,
        hp: &KernelHyperparams,
        form: SpectralForm,
        frame: Frame,
    ) -> Result<Self> {
        if count == 0 {
            return Err(invalid("basis needs at least one function"));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(invalid(format!(
                "half-width must be positive, got {half_width}"
            )));
        }
        if !(frame.scale.is_finite() && frame.scale > 0.0) {
            return Err(invalid("frame scale must be positive"));
        }
        hp.validate()?;
        let index_pairs = smallest_index_pairs(count);
        let base = std::f64::consts::PI / (2.0 * half_width);
        let eigenvalues: Vec<f64> = index_pairs
            .iter()
            .map(|&(a, b)| base * base * (a * a + b * b) as f64)
            .collect();
        let spectral_densities = eigenvalues
            .iter()
            .map(|&lam| spectral_density(lam, hp, form))
            .collect();
        Ok(BasisSet {
            half_width,
            index_pairs,
            eigenvalues,
            spectral_densities,
            hp: *hp,
            form,
            frame,
        })
    }

    /// Basis for an experiment domain: the domain is mapped through
    /// [`Frame::for_domain`] and the box half-width is `0.5 * margin`.
    pub fn for_domain(
        count: usize,
        domain: &Domain,
        margin: f64,
        hp: &KernelHyperparams,
        form: SpectralForm,
    ) -> Result<Self> {
        if !(margin >= 1.0 && margin.is_finite()) {
            return Err(invalid(format!("margin factor must be >= 1, got {margin}")));
        }
        BasisSet::new(count, 0.5 * margin, hp, form, Frame::for_domain(domain))
    }

    pub fn len(&self) -> usize {
        self.index_pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_pairs.is_empty()
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn index_pairs(&self) -> &[(u32, u32)] {
        &self.index_pairs
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn spectral_densities(&self) -> &[f64] {
        &self.spectral_densities
    }

    pub fn hyperparams(&self) -> &KernelHyperparams {
        &self.hp
    }

    pub fn spectral_form(&self) -> SpectralForm {
        self.form
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    /// Maps `x` into the basis frame and checks it lies inside the box.
    pub fn localize(&self, x: &Point) -> Result<Point> {
        let local = self.frame.to_local(x);
        let limit = self.half_width + BOUNDARY_TOL;
        if !(local[0].abs() <= limit && local[1].abs() <= limit) {
            return Err(Error::OutOfDomain {
                x: local[0],
                y: local[1],
                half_width: self.half_width,
            });
        }
        Ok(local)
    }

    fn eval_local(&self, e: usize, local: &Point) -> f64 {
        let (a, b) = self.index_pairs[e];
        let l = self.half_width;
        let w = std::f64::consts::PI / (2.0 * l);
        let s1 = (w * a as f64 * (local[0] + l)).sin();
        let s2 = (w * b as f64 * (local[1] + l)).sin();
        s1 * s2 / l
    }

    /// Eigenfunction `e` (zero-based) at `x`.
    pub fn eigenfunction(&self, e: usize, x: &Point) -> Result<f64> {
        if e >= self.len() {
            return Err(invalid(format!(
                "eigenfunction index {e} out of range 0..{}",
                self.len()
            )));
        }
        let local = self.localize(x)?;
        Ok(self.eval_local(e, &local))
    }

    /// All `E` eigenfunctions at `x`.
    pub fn phi_vector(&self, x: &Point) -> Result<DVector<f64>> {
        let local = self.localize(x)?;
        let l = self.half_width;
        let w = std::f64::consts::PI / (2.0 * l);
        // Sines are shared across pairs with the same index; cache them.
        let max_j = self
            .index_pairs
            .iter()
            .map(|&(a, b)| a.max(b))
            .max()
            .unwrap_or(0) as usize;
        let sx: Vec<f64> = (0..=max_j)
            .map(|j| (w * j as f64 * (local[0] + l)).sin())
            .collect();
        let sy: Vec<f64> = (0..=max_j)
            .map(|j| (w * j as f64 * (local[1] + l)).sin())
            .collect();
        Ok(DVector::from_iterator(
            self.len(),
            self.index_pairs
                .iter()
                .map(|&(a, b)| sx[a as usize] * sy[b as usize] / l),
        ))
    }

    /// `sum_e S(lambda_e) phi_e(x) phi_e(x')`, exactly symmetric in its arguments.
    pub fn approx_kernel(&self, x: &Point, x_prime: &Point) -> Result<f64> {
        let a = self.phi_vector(x)?;
        let b = self.phi_vector(x_prime)?;
        Ok(a.iter()
            .zip(b.iter())
            .zip(&self.spectral_densities)
            .map(|((p, q), s)| s * (p * q))
            .sum())
    }

    /// Exact kernel evaluated in the basis frame, so both kernels see the
    /// same coordinates.
    pub fn exact_kernel(&self, x: &Point, x_prime: &Point) -> f64 {
        se_kernel(
            &self.frame.to_local(x),
            &self.frame.to_local(x_prime),
            &self.hp,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn hp() -> KernelHyperparams {
        KernelHyperparams {
            sigma_s: 4.0,
            l: 0.07,
            sigma_n: 0.1,
            l_k: 10.0,
        }
    }

    #[test]
    fn se_kernel_values() {
        assert_eq!(se_kernel(&[0.3, 0.2], &[0.3, 0.2], &hp()), 16.0);
        let v = se_kernel(&[0.0, 0.0], &[0.07, 0.0], &hp());
        assert_relative_eq!(v, 16.0 * (-0.5f64).exp(), epsilon = 1e-12);
        assert_relative_eq!(v, 9.7044, epsilon = 1e-4);
        let far = se_kernel(&[0.0, 0.0], &[5.0, 0.0], &hp());
        assert!(far < 1e-100);
        let mid = se_kernel(&[0.0, 0.0], &[0.1, 0.0], &hp());
        assert!(far < mid && mid < v);
    }

    #[test]
    fn single_function_basis() {
        let b = build_basis(1, 1.0, &hp(), SpectralForm::ThreeHalves).unwrap();
        assert_eq!(b.index_pairs(), &[(1, 1)]);
        let expect = 2.0 * (std::f64::consts::PI / 2.0).powi(2);
        assert_relative_eq!(b.eigenvalues()[0], expect, epsilon = 1e-12);
    }

    #[test]
    fn four_function_basis() {
        let b = build_basis(4, 1.0, &hp(), SpectralForm::ThreeHalves).unwrap();
        assert_eq!(b.index_pairs(), &[(1, 1), (1, 2), (2, 1), (2, 2)]);
        let q = (std::f64::consts::PI / 2.0).powi(2);
        for (got, mult) in b.eigenvalues().iter().zip([2.0, 5.0, 5.0, 8.0]) {
            assert_relative_eq!(*got, q * mult, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_functions_rejected() {
        assert!(matches!(
            build_basis(0, 1.0, &hp(), SpectralForm::ThreeHalves),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn smallest_pairs_match_brute_force() {
        for count in [1, 2, 7, 25, 80, 100, 250, 325, 400] {
            let mut all: Vec<(u32, u32)> = (1..=60)
                .flat_map(|a| (1..=60).map(move |b| (a, b)))
                .collect();
            all.sort_by_key(|&(a, b)| (a * a + b * b, a, b));
            all.truncate(count);
            assert_eq!(smallest_index_pairs(count), all, "count {count}");
        }
    }

    #[test]
    fn four_hundred_smallest_pairs_are_a_quarter_disc_not_a_square_grid() {
        // (1, 21) has a smaller eigenvalue than (20, 20), so ascending
        // enumeration cannot select the 20 x 20 grid.
        let pairs = smallest_index_pairs(400);
        assert!(pairs.contains(&(1, 21)));
        assert!(!pairs.contains(&(20, 20)));
        let grid: Vec<(u32, u32)> = (1..=20)
            .flat_map(|a| (1..=20).map(move |b| (a, b)))
            .collect();
        assert_ne!(
            pairs
                .iter()
                .copied()
                .collect::<std::collections::BTreeSet<_>>(),
            grid.into_iter().collect()
        );
    }

    #[test]
    fn eigenvalues_sorted_and_positive() {
        let b = build_basis(325, 0.6, &hp(), SpectralForm::Standard2d).unwrap();
        assert!(b.eigenvalues().windows(2).all(|w| w[0] <= w[1]));
        assert!(b.eigenvalues().iter().all(|&l| l > 0.0));
        assert!(b.spectral_densities().iter().all(|&s| s > 0.0));
        let unique: std::collections::HashSet<_> = b.index_pairs().iter().collect();
        assert_eq!(unique.len(), 325);
    }

    #[test]
    fn eigenfunction_boundary_and_center() {
        let b = build_basis(4, 1.0, &hp(), SpectralForm::ThreeHalves).unwrap();
        assert_eq!(b.eigenfunction(0, &[-1.0, 0.3]).unwrap(), 0.0);
        assert!(b.eigenfunction(0, &[1.0, 1.0]).unwrap().abs() < 1e-15);
        assert_relative_eq!(
            b.eigenfunction(0, &[0.0, 0.0]).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert!(matches!(
            b.eigenfunction(0, &[1.5, 0.0]),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(b.eigenfunction(4, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn phi_vector_matches_eigenfunctions() {
        let b = build_basis(50, 0.6, &hp(), SpectralForm::ThreeHalves).unwrap();
        assert_eq!(b.phi_vector(&[-0.6, -0.6]).unwrap().norm(), 0.0);
        for x in [[0.1, -0.2], [0.55, 0.33], [-0.41, 0.0]] {
            let phi = b.phi_vector(&x).unwrap();
            for e in 0..b.len() {
                assert_relative_eq!(phi[e], b.eigenfunction(e, &x).unwrap(), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn spectral_density_forms() {
        let h = KernelHyperparams {
            sigma_s: 4.0,
            l: 0.05,
            sigma_n: 0.1,
            l_k: 1.0,
        };
        let three_halves = spectral_density(100.0, &h, SpectralForm::ThreeHalves);
        let expect = 16.0 * (0.1 * std::f64::consts::PI).powf(1.5) * (-0.125f64).exp();
        assert_relative_eq!(three_halves, expect, epsilon = 1e-12);
        assert_relative_eq!(
            spectral_density(0.0, &h, SpectralForm::ThreeHalves),
            16.0 * (0.1 * std::f64::consts::PI).powf(1.5),
            epsilon = 1e-12
        );
        let std2d = spectral_density(0.0, &h, SpectralForm::Standard2d);
        assert_relative_eq!(
            std2d,
            16.0 * 2.0 * std::f64::consts::PI * 0.0025,
            epsilon = 1e-12
        );
        assert!(spectral_density(1e7, &h, SpectralForm::ThreeHalves) < 1e-100);
    }

    #[test]
    fn frame_maps_domains_onto_the_same_box() {
        let unit = Frame::for_domain(&Domain::UNIT_SQUARE);
        let big = Frame::for_domain(&Domain::square(0.0, 10.0));
        assert_eq!(unit.to_local(&[0.25, 1.0]), [-0.25, 0.5]);
        assert_eq!(big.to_local(&[2.5, 10.0]), [-0.25, 0.5]);
        let b = BasisSet::for_domain(
            10,
            &Domain::square(0.0, 10.0),
            1.2,
            &hp(),
            SpectralForm::ThreeHalves,
        )
        .unwrap();
        assert_relative_eq!(b.half_width(), 0.6);
        assert!(b.phi_vector(&[10.0, 0.0]).is_ok());
        assert!(b.phi_vector(&[13.0, 0.0]).is_err());
    }
}
