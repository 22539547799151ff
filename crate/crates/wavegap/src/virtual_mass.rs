//! The virtual-mass tensor Q of the void.
//!
//! Q governs the dipole far field of exterior potential flow around the void:
//! the solution of the exterior Neumann problem with flux data -n . e behaves
//! like (Q e) . grad Phi at infinity, Phi = 1/(4 pi |xi|). Q is symmetric and
//! negative definite for any shape of positive volume, and Q + meas3 * I is
//! non-positive.
//!
//! The numerical route is a direct single-layer boundary-integral formulation
//! collocated at triangle centroids. The adjoint double-layer operator has the
//! equilibrium density in its kernel at the exterior-Neumann eigenvalue, so
//! the system is augmented with a zero-mean constraint on the density; the
//! compatible data used here makes the constrained system uniquely solvable.
//! Dipole coefficients are read off as first moments of the density, which
//! converge faster than pointwise far-field samples.
//!
//! For balls and ellipsoids the classical added-mass formulas (depolarization
//! factors via Carlson's elliptic integral R_D) provide an independent
//! analytic oracle.

use crate::geometry::VoidShape;
use crate::surface::TriSurface;
use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector3};
use rayon::prelude::*;

/// Mesh refinement used when none is given; the unit-ball tensor is accurate
/// to about 1% here (see the module tests).
pub const DEFAULT_MESH_LEVEL: u32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum VmassError {
    #[error("boundary-element system is ill-conditioned (residual {0:.3e})")]
    IllConditioned(f64),
    #[error("mesh too coarse: {0} panels (need at least {1})")]
    MeshTooCoarse(usize, usize),
    #[error("no analytic virtual mass for this shape kind")]
    UnsupportedShape,
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

/// The 3x3 virtual-mass tensor with its derived blocks.
#[derive(Debug, Clone)]
pub struct VirtualMassTensor {
    /// Q itself, symmetrized.
    pub q: Matrix3<f64>,
    /// Q + meas3(theta) * I, non-positive for valid shapes.
    pub q_tilde: Matrix3<f64>,
    /// 2x2 upper-left block of Q (the planar block used by the mixed problem).
    pub upper_left_block: Matrix2<f64>,
    /// meas3 of the shape.
    pub volume: f64,
    /// max |Q_jk - Q_kj| / max |Q_jk| before symmetrization; zero for analytic.
    pub asymmetry: f64,
}

impl VirtualMassTensor {
    fn from_raw(q_raw: Matrix3<f64>, volume: f64) -> Self {
        let scale = q_raw.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        let asymmetry = (q_raw - q_raw.transpose())
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            / scale;
        let q = (q_raw + q_raw.transpose()) / 2.0;
        Self::symmetric(q, volume, asymmetry)
    }

    fn symmetric(q: Matrix3<f64>, volume: f64, asymmetry: f64) -> Self {
        let q_tilde = q + Matrix3::identity() * volume;
        let upper_left_block = q.fixed_view::<2, 2>(0, 0).into_owned();
        VirtualMassTensor { q, q_tilde, upper_left_block, volume, asymmetry }
    }

    /// Eigenvalues of Q, ascending.
    pub fn q_eigenvalues(&self) -> [f64; 3] {
        let mut ev: Vec<f64> = self.q.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        [ev[0], ev[1], ev[2]]
    }

    /// Eigenvalues of Q_tilde, ascending.
    pub fn q_tilde_eigenvalues(&self) -> [f64; 3] {
        let mut ev: Vec<f64> = self.q_tilde.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        [ev[0], ev[1], ev[2]]
    }
}

/// Density and dipole vector of one exterior Neumann solve.
#[derive(Debug, Clone)]
pub struct ExteriorSolution {
    /// Piecewise-constant single-layer density per panel.
    pub density: Vec<f64>,
    /// Dipole coefficient vector: the column Q * direction.
    pub dipole: Vector3<f64>,
    /// Residual of the collocation system, a conditioning diagnostic.
    pub residual: f64,
}

struct Panel {
    vertices: [Vector3<f64>; 3],
    centroid: Vector3<f64>,
    normal: Vector3<f64>,
    area: f64,
}

fn panels_of(mesh: &TriSurface) -> Vec<Panel> {
    (0..mesh.triangles.len())
        .map(|i| {
            let t = mesh.triangles[i];
            let vs = [mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]];
            Panel {
                vertices: vs,
                centroid: mesh.triangle_centroid(i),
                normal: mesh.triangle_normal(i),
                area: mesh.triangle_area(i),
            }
        })
        .collect()
}

/// Exact integral over a flat triangle of the vector field
/// (x - y) / |x - y|^3: the signed solid angle along the panel normal plus
/// one log term per edge. Standard constant-source-panel result.
fn panel_field_integral(x: Vector3<f64>, v: [Vector3<f64>; 3]) -> Vector3<f64> {
    let nt = (v[1] - v[0]).cross(&(v[2] - v[0])).normalize();
    let r = [v[0] - x, v[1] - x, v[2] - x];
    let l = [r[0].norm(), r[1].norm(), r[2].norm()];
    let numer = r[0].dot(&r[1].cross(&r[2]));
    let denom = l[0] * l[1] * l[2]
        + r[0].dot(&r[1]) * l[2]
        + r[1].dot(&r[2]) * l[0]
        + r[2].dot(&r[0]) * l[1];
    let omega = 2.0 * numer.atan2(denom);
    let mut out = -nt * omega;
    for e in 0..3 {
        let (a, b) = (v[e], v[(e + 1) % 3]);
        let ell = (b - a).norm();
        let ehat = (b - a) / ell;
        let mhat = ehat.cross(&nt);
        let rp = (x - b).norm();
        let rm = (x - a).norm();
        // x collinear with the edge makes the log blow up, but then the
        // in-plane normal has no component along any relevant direction we
        // dot with; clamp to keep the arithmetic finite
        let den = (rp + rm - ell).max(1e-14 * ell);
        out += mhat * ((rp + rm + ell) / den).ln();
    }
    out
}

/// Integral over one panel of the adjoint double-layer kernel
/// -(x - y) . n(x) / (4 pi |x - y|^3), exact for flat panels.
fn kernel_integral(x: Vector3<f64>, nx: Vector3<f64>, v: [Vector3<f64>; 3]) -> f64 {
    -nx.dot(&panel_field_integral(x, v)) / (4.0 * std::f64::consts::PI)
}

struct BemSystem {
    panels: Vec<Panel>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    matrix: DMatrix<f64>,
}

const MIN_PANELS: usize = 24;

fn assemble_bem(mesh: &TriSurface) -> Result<BemSystem, VmassError> {
    let panels = panels_of(mesh);
    let n = panels.len();
    if n < MIN_PANELS {
        return Err(VmassError::MeshTooCoarse(n, MIN_PANELS));
    }
    // augmented system: [ -1/2 I + K'   a ; a^T  0 ], a_j = panel area,
    // enforcing the zero-mean (no monopole) normalization of the density
    let mut m = DMatrix::<f64>::zeros(n + 1, n + 1);
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; n];
            let (x, nx) = (panels[i].centroid, panels[i].normal);
            for (j, pj) in panels.iter().enumerate() {
                if i == j {
                    continue; // flat-panel principal value vanishes
                }
                row[j] = kernel_integral(x, nx, pj.vertices);
            }
            row
        })
        .collect();
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = rows[i][j];
        }
        m[(i, i)] -= 0.5;
        m[(i, n)] = panels[i].area;
        m[(n, i)] = panels[i].area;
    }
    let matrix = m.clone();
    let lu = m.lu();
    Ok(BemSystem { panels, lu, matrix })
}

impl BemSystem {
    fn solve(&self, direction: Vector3<f64>) -> Result<ExteriorSolution, VmassError> {
        let n = self.panels.len();
        let mut rhs = DVector::<f64>::zeros(n + 1);
        for (i, p) in self.panels.iter().enumerate() {
            rhs[i] = -p.normal.dot(&direction);
        }
        let sol = self
            .lu
            .solve(&rhs)
            .ok_or(VmassError::IllConditioned(f64::INFINITY))?;
        let residual = (&self.matrix * &sol - &rhs).norm() / rhs.norm().max(1e-300);
        if residual > 1e-8 {
            return Err(VmassError::IllConditioned(residual));
        }
        let density: Vec<f64> = sol.rows(0, n).iter().copied().collect();
        // dipole from first moments: (Q e)_k = -int y_k sigma ds
        let mut dipole = Vector3::zeros();
        for (p, &s) in self.panels.iter().zip(&density) {
            dipole -= p.centroid * (s * p.area);
        }
        Ok(ExteriorSolution { density, dipole, residual })
    }
}

/// Solve the exterior Neumann problem for flux data -n . direction and return
/// the single-layer density together with the dipole vector Q * direction.
pub fn solve_exterior_neumann(
    void: &VoidShape,
    direction: Vector3<f64>,
    mesh_level: u32,
) -> Result<ExteriorSolution, VmassError> {
    let mesh = void.boundary_mesh(mesh_level);
    mesh.check_closed().map_err(crate::geometry::GeometryError::from)?;
    assemble_bem(&mesh)?.solve(direction)
}

fn raw_tensor(mesh: &TriSurface) -> Result<Matrix3<f64>, VmassError> {
    let sys = assemble_bem(mesh)?;
    let cols = [Vector3::x(), Vector3::y(), Vector3::z()]
        .map(|e| sys.solve(e).map(|s| s.dipole));
    let mut q_raw = Matrix3::<f64>::zeros();
    for (k, col) in cols.into_iter().enumerate() {
        q_raw.set_column(k, &col?);
    }
    Ok(q_raw)
}

/// Assemble Q column-by-column from the three coordinate-direction solves.
/// The raw tensor is symmetrized by averaging and the asymmetry recorded as a
/// quality metric.
///
/// Piecewise-constant collocation carries a leading O(h) density error, so
/// for tessellated analytic shapes (whose refinement levels halve the edge
/// length) the tensor is extrapolated through the two-term model
/// Q(h) = Q* + a h + b h^2 over the levels {level-2, level-1, level} when
/// `mesh_level >= 3`. Explicit surface voids have no refinement family and
/// are solved at their native mesh.
pub fn compute_virtual_mass(
    void: &VoidShape,
    mesh_level: u32,
) -> Result<VirtualMassTensor, VmassError> {
    let volume = crate::geometry::void_measure(void)?;
    let single = |level: u32| -> Result<Matrix3<f64>, VmassError> {
        let mesh = void.boundary_mesh(level);
        mesh.check_closed().map_err(crate::geometry::GeometryError::from)?;
        raw_tensor(&mesh)
    };
    let extrapolate = !matches!(void, VoidShape::Surface(_)) && mesh_level >= 3;
    if !extrapolate {
        return Ok(VirtualMassTensor::from_raw(single(mesh_level)?, volume));
    }
    let q1 = single(mesh_level - 2)?;
    let q2 = single(mesh_level - 1)?;
    let q3 = single(mesh_level)?;
    // eliminate a h + b h^2 with h halving per level:
    // Q* = Q3 + (Q1 - Q2)/3 - (5/3)(Q2 - Q3)
    let q_raw = q3 + (q1 - q2) / 3.0 - (q2 - q3) * (5.0 / 3.0);
    Ok(VirtualMassTensor::from_raw(q_raw, volume))
}

/// Classical added-mass tensor for balls and ellipsoids: in the principal
/// frame Q_ii = -(1 + k_i) V with k_i = A_i / (2 - A_i) and depolarization
/// factors A_i = (2/3) a1 a2 a3 R_D(a_j^2, a_k^2, a_i^2). The ball reduces to
/// Q = -(3/2) V I = -2 pi a^3 I.
pub fn analytic_virtual_mass(void: &VoidShape) -> Result<VirtualMassTensor, VmassError> {
    let (a, volume) = match void {
        VoidShape::Ball { radius } => {
            let v = 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3);
            return Ok(VirtualMassTensor::symmetric(
                Matrix3::identity() * (-1.5 * v),
                v,
                0.0,
            ));
        }
        VoidShape::Ellipsoid { semi_axes } => (
            *semi_axes,
            4.0 / 3.0 * std::f64::consts::PI * semi_axes.x * semi_axes.y * semi_axes.z,
        ),
        _ => return Err(VmassError::UnsupportedShape),
    };
    let prod = a.x * a.y * a.z;
    let dep = [
        2.0 / 3.0 * prod * elliptic_rd(a.y * a.y, a.z * a.z, a.x * a.x),
        2.0 / 3.0 * prod * elliptic_rd(a.z * a.z, a.x * a.x, a.y * a.y),
        2.0 / 3.0 * prod * elliptic_rd(a.x * a.x, a.y * a.y, a.z * a.z),
    ];
    let mut q = Matrix3::<f64>::zeros();
    for i in 0..3 {
        let k = dep[i] / (2.0 - dep[i]);
        q[(i, i)] = -(1.0 + k) * volume;
    }
    Ok(VirtualMassTensor::symmetric(q, volume, 0.0))
}

/// Carlson's degenerate elliptic integral
/// R_D(x, y, z) = (3/2) int_0^inf dt / ((t + z) sqrt((t+x)(t+y)(t+z))),
/// by the standard duplication algorithm.
pub fn elliptic_rd(x: f64, y: f64, z: f64) -> f64 {
    const ERRTOL: f64 = 0.0015;
    let (mut xt, mut yt, mut zt) = (x, y, z);
    let mut sum = 0.0;
    let mut fac = 1.0;
    for _ in 0..200 {
        let (sx, sy, sz) = (xt.sqrt(), yt.sqrt(), zt.sqrt());
        let lam = sx * (sy + sz) + sy * sz;
        sum += fac / (sz * (zt + lam));
        fac *= 0.25;
        xt = 0.25 * (xt + lam);
        yt = 0.25 * (yt + lam);
        zt = 0.25 * (zt + lam);
        let ave = 0.2 * (xt + yt + 3.0 * zt);
        let delx = (ave - xt) / ave;
        let dely = (ave - yt) / ave;
        let delz = (ave - zt) / ave;
        if delx.abs().max(dely.abs()).max(delz.abs()) < ERRTOL {
            let ea = delx * dely;
            let eb = delz * delz;
            let ec = ea - eb;
            let ed = ea - 6.0 * eb;
            let ee = ed + ec + ec;
            let tail = 1.0
                + ed * (-3.0 / 14.0 + 9.0 / 88.0 * ed - 9.0 / 52.0 * delz * ee)
                + delz * (ee / 6.0 + delz * (-9.0 / 22.0 * ec + delz * 3.0 / 26.0 * ea));
            return 3.0 * sum + fac * tail / (ave * ave.sqrt());
        }
    }
    unreachable!("R_D duplication did not contract");
}
