//! Near-field multipath channel synthesis.
//!
//! Both links are sums of spherical-wavefront responses to point scatterers:
//! the RIS-BS matrix is `sum_l g_l a_bs(s_l) a_ris(s_l)^H` and the user-RIS
//! vector is `sum_l g_l a_ris(s_l)`, with `g_l ~ CN(0, 1/L)`. Every steering
//! entry has unit modulus, so `E||F||_F^2 = N M` and `E||h||^2 = M` without
//! any per-draw rescaling. Large-scale path loss is not modelled.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Point3, Vector3};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ComplexMatrix, ComplexVector};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Uniform linear array laid out along the x axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearArray {
    pub elements: usize,
    /// Inter-element spacing in wavelengths.
    pub spacing: f64,
}

/// Uniform planar array in the x-z plane. Element `r * cols + c` sits in
/// row `r` (z) and column `c` (x), so consecutive indices run along a row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarArray {
    pub rows: usize,
    pub cols: usize,
    /// Inter-element spacing in wavelengths.
    pub spacing: f64,
}

impl PlanarArray {
    pub fn elements(&self) -> usize {
        self.rows * self.cols
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArraySpec {
    Linear(LinearArray),
    Planar(PlanarArray),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub bs_position: Point3<f64>,
    pub ris_position: Point3<f64>,
    pub user_region_center: Point3<f64>,
    /// Radius of the horizontal disk users are dropped in, meters.
    pub user_region_radius: f64,
    /// Hz.
    pub carrier_frequency: f64,
    pub bs_array: LinearArray,
    pub ris_array: PlanarArray,
    /// Padding added on every side of the box spanned by a link's two
    /// endpoints when drawing scatterers, meters. The BS and RIS share
    /// x = 0, so this also sets the angular spread across RIS rows.
    pub scatter_margin: f64,
    /// Scatterers closer than this to either endpoint are redrawn, meters.
    pub guard_radius: f64,
    /// Rician K-factor of an optional line-of-sight RIS-BS component.
    /// Zero disables it.
    pub ris_bs_los_k: f64,
}

impl Geometry {
    /// Scene with `n` BS antennas and an `m`-element RIS, everything else at
    /// the benchmark defaults (15 GHz, BS at the origin, RIS at (0, 20, 10),
    /// users within 15 m of (40, 20, 0)).
    pub fn with_sizes(n: usize, m: usize) -> Geometry {
        let (rows, cols) = planar_shape(m);
        Geometry {
            bs_position: Point3::new(0.0, 0.0, 0.0),
            ris_position: Point3::new(0.0, 20.0, 10.0),
            user_region_center: Point3::new(40.0, 20.0, 0.0),
            user_region_radius: 15.0,
            carrier_frequency: 15e9,
            bs_array: LinearArray { elements: n, spacing: 0.5 },
            ris_array: PlanarArray { rows, cols, spacing: 0.5 },
            scatter_margin: 1.0,
            guard_radius: 1.0,
            ris_bs_los_k: 0.0,
        }
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if !(self.carrier_frequency > 0.0 && self.carrier_frequency.is_finite()) {
            return bad("carrier frequency must be positive");
        }
        if self.bs_array.elements == 0 || self.ris_array.rows == 0 || self.ris_array.cols == 0 {
            return bad("array element counts must be at least 1");
        }
        if !(self.bs_array.spacing > 0.0 && self.ris_array.spacing > 0.0) {
            return bad("array spacings must be positive");
        }
        if !(self.user_region_radius >= 0.0) {
            return bad("user region radius must be non-negative");
        }
        if !(self.scatter_margin >= 0.0 && self.guard_radius >= 0.0 && self.ris_bs_los_k >= 0.0) {
            return bad("scatter margin, guard radius and LoS K-factor must be non-negative");
        }
        Ok(())
    }
}

/// Most-square `rows x cols` factorization of `m` with `rows <= cols`.
pub fn planar_shape(m: usize) -> (usize, usize) {
    let mut rows = (m as f64).sqrt() as usize;
    while rows > 1 && m % rows != 0 {
        rows -= 1;
    }
    let rows = rows.max(1);
    (rows, m / rows)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScattererSet {
    pub positions: Vec<Point3<f64>>,
    pub gains: Vec<Complex64>,
}

impl ScattererSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// `F`, N x M.
    pub ris_bs: ComplexMatrix,
    /// `h`, length M.
    pub user_ris: ComplexVector,
    pub user_position: Point3<f64>,
    pub scatterers_rb: ScattererSet,
    pub scatterers_ur: ScattererSet,
}

/// Element coordinates of an array centered on `origin`.
pub fn element_positions(spec: &ArraySpec, origin: Point3<f64>, wavelength: f64) -> Vec<Point3<f64>> {
    let centered = |k: usize, count: usize, step: f64| (k as f64 - (count as f64 - 1.0) / 2.0) * step;
    match *spec {
        ArraySpec::Linear(a) => {
            let d = a.spacing * wavelength;
            (0..a.elements)
                .map(|k| origin + Vector3::new(centered(k, a.elements, d), 0.0, 0.0))
                .collect()
        }
        ArraySpec::Planar(a) => {
            let d = a.spacing * wavelength;
            let mut out = Vec::with_capacity(a.elements());
            for r in 0..a.rows {
                for c in 0..a.cols {
                    out.push(
                        origin + Vector3::new(centered(c, a.cols, d), 0.0, centered(r, a.rows, d)),
                    );
                }
            }
            out
        }
    }
}

/// Spherical-wavefront response `exp(-j 2 pi ||source - p_n|| / lambda)`.
pub fn near_field_steering(
    positions: &[Point3<f64>],
    source: Point3<f64>,
    wavelength: f64,
) -> Result<ComplexVector> {
    let k = 2.0 * PI / wavelength;
    let mut out = DVector::zeros(positions.len());
    for (i, p) in positions.iter().enumerate() {
        let d = (source - p).norm();
        if d < 1e-12 {
            return Err(Error::CoincidentSource(i));
        }
        out[i] = Complex64::from_polar(1.0, -k * d);
    }
    Ok(out)
}

/// Uniform draw from the horizontal disk around the user region center.
pub fn sample_user_position<R: Rng + ?Sized>(geometry: &Geometry, rng: &mut R) -> Point3<f64> {
    let c = geometry.user_region_center;
    let radius = geometry.user_region_radius;
    if radius <= 0.0 {
        return c;
    }
    let r = radius * rng.random::<f64>().sqrt();
    let theta = 2.0 * PI * rng.random::<f64>();
    Point3::new(c.x + r * theta.cos(), c.y + r * theta.sin(), c.z)
}

fn complex_gaussian<R: Rng + ?Sized>(variance: f64, rng: &mut R) -> Complex64 {
    let normal = Normal::new(0.0, (variance / 2.0).sqrt()).expect("finite variance");
    Complex64::new(normal.sample(rng), normal.sample(rng))
}

/// Array geometry and precomputed element positions for one scene.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    geometry: Geometry,
    wavelength: f64,
    bs_elements: Vec<Point3<f64>>,
    ris_elements: Vec<Point3<f64>>,
}

impl ChannelModel {
    pub fn new(geometry: Geometry) -> Result<ChannelModel> {
        geometry.validate()?;
        let wavelength = geometry.wavelength();
        let bs_elements = element_positions(
            &ArraySpec::Linear(geometry.bs_array),
            geometry.bs_position,
            wavelength,
        );
        let ris_elements = element_positions(
            &ArraySpec::Planar(geometry.ris_array),
            geometry.ris_position,
            wavelength,
        );
        Ok(ChannelModel { geometry, wavelength, bs_elements, ris_elements })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn bs_elements(&self) -> &[Point3<f64>] {
        &self.bs_elements
    }

    pub fn ris_elements(&self) -> &[Point3<f64>] {
        &self.ris_elements
    }

    /// Draws `count` scatterers uniformly in the padded box spanned by `a`
    /// and `b`, outside the guard radius of both.
    fn draw_scatterers<R: Rng + ?Sized>(
        &self,
        a: Point3<f64>,
        b: Point3<f64>,
        count: usize,
        rng: &mut R,
    ) -> ScattererSet {
        let margin = self.geometry.scatter_margin;
        let guard = self.geometry.guard_radius;
        let lo = a.inf(&b) - Vector3::repeat(margin);
        let hi = a.sup(&b) + Vector3::repeat(margin);
        let gain_var = 1.0 / count as f64;
        let mut positions = Vec::with_capacity(count);
        let mut gains = Vec::with_capacity(count);
        while positions.len() < count {
            let p = Point3::new(
                lo.x + (hi.x - lo.x) * rng.random::<f64>(),
                lo.y + (hi.y - lo.y) * rng.random::<f64>(),
                lo.z + (hi.z - lo.z) * rng.random::<f64>(),
            );
            if (p - a).norm() < guard || (p - b).norm() < guard {
                continue;
            }
            positions.push(p);
            gains.push(complex_gaussian(gain_var, rng));
        }
        ScattererSet { positions, gains }
    }

    fn steering_columns(&self, elements: &[Point3<f64>], scatterers: &ScattererSet) -> ComplexMatrix {
        let k = 2.0 * PI / self.wavelength;
        DMatrix::from_fn(elements.len(), scatterers.len(), |i, l| {
            Complex64::from_polar(1.0, -k * (scatterers.positions[l] - elements[i]).norm())
        })
    }

    /// RIS-BS channel `F` (N x M) and the scatterers behind it.
    pub fn gen_ris_bs_channel<R: Rng + ?Sized>(
        &self,
        l_rb: usize,
        rng: &mut R,
    ) -> Result<(ComplexMatrix, ScattererSet)> {
        if l_rb == 0 {
            return Err(Error::InvalidArgument("L_rb must be at least 1".into()));
        }
        let g = &self.geometry;
        let scatterers = self.draw_scatterers(g.bs_position, g.ris_position, l_rb, rng);
        let a_bs = self.steering_columns(&self.bs_elements, &scatterers);
        // diag(g) * a_ris^H
        let mut right = self.steering_columns(&self.ris_elements, &scatterers).adjoint();
        for (l, gain) in scatterers.gains.iter().enumerate() {
            right.row_mut(l).iter_mut().for_each(|z| *z *= gain);
        }
        let mut f = a_bs * right;
        if g.ris_bs_los_k > 0.0 {
            let k = 2.0 * PI / self.wavelength;
            let kf = g.ris_bs_los_k;
            let w_los = (kf / (kf + 1.0)).sqrt();
            let w_nlos = (1.0 / (kf + 1.0)).sqrt();
            let los = DMatrix::from_fn(self.bs_elements.len(), self.ris_elements.len(), |n, m| {
                Complex64::from_polar(1.0, -k * (self.bs_elements[n] - self.ris_elements[m]).norm())
            });
            f = los * Complex64::new(w_los, 0.0) + f * Complex64::new(w_nlos, 0.0);
        }
        Ok((f, scatterers))
    }

    /// User-RIS channel `h` (length M) for a user at `user_position`.
    pub fn gen_user_ris_channel<R: Rng + ?Sized>(
        &self,
        user_position: Point3<f64>,
        l_ur: usize,
        rng: &mut R,
    ) -> Result<(ComplexVector, ScattererSet)> {
        if l_ur == 0 {
            return Err(Error::InvalidArgument("L_ur must be at least 1".into()));
        }
        let scatterers =
            self.draw_scatterers(self.geometry.ris_position, user_position, l_ur, rng);
        let a_ris = self.steering_columns(&self.ris_elements, &scatterers);
        let gains = DVector::from_column_slice(&scatterers.gains);
        Ok((a_ris * gains, scatterers))
    }

    /// One full draw: user position, then `F`, then `h`.
    pub fn realize<R: Rng + ?Sized>(
        &self,
        l_rb: usize,
        l_ur: usize,
        rng: &mut R,
    ) -> Result<ChannelRealization> {
        let user_position = sample_user_position(&self.geometry, rng);
        let (ris_bs, scatterers_rb) = self.gen_ris_bs_channel(l_rb, rng)?;
        let (user_ris, scatterers_ur) = self.gen_user_ris_channel(user_position, l_ur, rng)?;
        Ok(ChannelRealization { ris_bs, user_ris, user_position, scatterers_rb, scatterers_ur })
    }
}
