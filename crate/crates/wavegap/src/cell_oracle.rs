//! Direct solves of the quasi-periodic spectral problem on the perturbed
//! periodicity cell, used to verify the asymptotic predictions.
//!
//! The cell omega x (0,1) minus the scaled void is discretized by a finite
//! volume scheme on a uniform cubic grid. The lateral wall enters through
//! exact face apertures and cell area fractions (Neumann) or through a
//! staircase wall with ghost values (Dirichlet); a ball void is removed with
//! exact cut-cell fractions so the error is smooth enough in h for Richardson
//! extrapolation, while other void kinds fall back to staircase masking.
//! Quasi-periodicity in z is imposed by carrying the Bloch phase on the wrap
//! faces, which keeps the operator Hermitian: A u = Lambda D u with D the
//! diagonal of fluid volume fractions.
//!
//! Eigenvalues come from block inverse iteration on the shifted operator
//! A + D. Inner solves use conjugate gradients preconditioned with the exact
//! inverse of the unperturbed (void-free) operator, which separates into a
//! twisted Fourier transform along z and one banded 2D factorization per
//! axial mode; away from the void the preconditioned operator is the
//! identity, so iteration counts stay small at every grid size.

use crate::geometry::{BcKind, CellGeometry, CrossSection, GeometryError, VoidShape};
use crate::numerics::{self, BandedCholesky, CsrMatrix};
use nalgebra::{Vector2, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("cell eigensolver failed: {0}")]
    SolverFailure(String),
    #[error("void under-resolved: spans {span:.2} cells, need at least {needed}")]
    GeometryUnresolved { span: f64, needed: f64 },
    #[error("clearance {clearance:.3e} below two grid cells (h = {h:.3e})")]
    ClearanceTooSmall { clearance: f64, h: f64 },
    #[error("epsilon sweep needs at least 4 values, got {0}")]
    InsufficientPoints(usize),
    #[error("bad resolution: {0}")]
    BadResolution(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Spectrum of one quasi-periodic cell solve.
#[derive(Debug, Clone)]
pub struct CellSpectrum {
    /// The perturbed geometry, or `None` for an unperturbed reference solve.
    pub geometry: Option<CellGeometry>,
    pub eta: f64,
    /// Ascending eigenvalues Lambda_k(eta).
    pub eigenvalues: Vec<f64>,
    /// Grid spacing actually used.
    pub resolution: f64,
    /// Relative eigen-residuals per value.
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

/// Band segments over an eta grid and the gaps between them.
#[derive(Debug, Clone)]
pub struct BandStructure {
    pub epsilon: f64,
    pub eta_grid: Vec<f64>,
    /// Per band n: [min over eta, max over eta] of Lambda_n.
    pub bands: Vec<(f64, f64)>,
    /// Open intervals between consecutive bands (empty when bands overlap).
    pub gaps: Vec<(f64, f64)>,
    /// Eigenvalues per eta point (row) and band (column).
    pub values: Vec<Vec<f64>>,
}

// ---------------------------------------------------------------------------
// lateral (cross-section) geometry on the grid
// ---------------------------------------------------------------------------

struct LateralGrid {
    h: f64,
    nz: usize,
    /// active-cell centers (for void masking)
    centers: Vec<Vector2<f64>>,
    /// 2D fluid area fraction per active cell
    frac: Vec<f64>,
    /// neighbors [xm, xp, ym, yp]: active id or u32::MAX
    nbr: Vec<[u32; 4]>,
    /// apertures of the +x / +y faces per active cell (0 when no neighbor)
    ap_x: Vec<f64>,
    ap_y: Vec<f64>,
    /// extra diagonal per cell for the staircase Dirichlet wall, 1/h^2 scaled
    wall_diag: Vec<f64>,
}

fn segment_fraction_inside(cs: &CrossSection, a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    match cs {
        CrossSection::Rectangle { a: w, b: hgt } => {
            // axis-aligned segment; clip each coordinate
            let (lo, hi) = if (a.x - b.x).abs() < 1e-15 {
                if a.x <= 0.0 || a.x >= *w {
                    return 0.0;
                }
                (a.y.min(b.y), a.y.max(b.y))
            } else {
                if a.y <= 0.0 || a.y >= *hgt {
                    return 0.0;
                }
                (a.x.min(b.x), a.x.max(b.x))
            };
            let bound = if (a.x - b.x).abs() < 1e-15 { *hgt } else { *w };
            let len = (hi.min(bound) - lo.max(0.0)).max(0.0);
            len / (hi - lo)
        }
        CrossSection::Disk { radius } => {
            let (fixed, lo, hi, vertical) = if (a.x - b.x).abs() < 1e-15 {
                (a.x, a.y.min(b.y), a.y.max(b.y), true)
            } else {
                (a.y, a.x.min(b.x), a.x.max(b.x), false)
            };
            let _ = vertical;
            if fixed.abs() >= *radius {
                return 0.0;
            }
            let w = (radius * radius - fixed * fixed).sqrt();
            let len = (hi.min(w) - lo.max(-w)).max(0.0);
            len / (hi - lo)
        }
        CrossSection::Polygon { vertices } => {
            // parity walk along the segment
            let d = b - a;
            let len = d.norm();
            let n = vertices.len();
            let mut ts = vec![0.0f64, 1.0];
            for i in 0..n {
                let (p, q) = (vertices[i], vertices[(i + 1) % n]);
                let e = q - p;
                let denom = d.x * e.y - d.y * e.x;
                if denom.abs() < 1e-15 {
                    continue;
                }
                let w = p - a;
                let t = (w.x * e.y - w.y * e.x) / denom;
                let s = (w.x * d.y - w.y * d.x) / -denom;
                let s = -s;
                if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&s) {
                    ts.push(t);
                }
            }
            ts.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let mut inside = 0.0;
            for w in ts.windows(2) {
                let mid = a + d * ((w[0] + w[1]) / 2.0);
                if cs.contains(mid) {
                    inside += w[1] - w[0];
                }
            }
            inside * len / len
        }
    }
}

/// Area of circle(center, r) intersected with [xa,xb] x [ya,yb], by adaptive
/// Simpson over the chord overlap.
fn circle_rect_area(c: Vector2<f64>, r: f64, xa: f64, xb: f64, ya: f64, yb: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    let ylo = ya.max(c.y - r);
    let yhi = yb.min(c.y + r);
    if ylo >= yhi {
        return 0.0;
    }
    let chord = |y: f64| -> f64 {
        let dy = y - c.y;
        let w2 = r * r - dy * dy;
        if w2 <= 0.0 {
            return 0.0;
        }
        let w = w2.sqrt();
        (xb.min(c.x + w) - xa.max(c.x - w)).max(0.0)
    };
    adaptive_simpson(&chord, ylo, yhi, 1e-10 * (xb - xa).abs() * (yb - ya).abs(), 18)
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(f, a, m, fa, flm, fm);
        let right = simpson(f, m, b, fm, frm, fb);
        if depth == 0 || (left + right - whole).abs() < 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(f, a, m.min(b), fa, fm, fb);
    recurse(f, a, b, fa, fm, fb, whole, tol, depth)
}

/// Volume of ball(center, r) intersected with a box, by adaptive Simpson over
/// the z-sections.
fn ball_box_volume(
    c: Vector3<f64>,
    r: f64,
    xa: f64,
    xb: f64,
    ya: f64,
    yb: f64,
    za: f64,
    zb: f64,
) -> f64 {
    let zlo = za.max(c.z - r);
    let zhi = zb.min(c.z + r);
    if zlo >= zhi {
        return 0.0;
    }
    let section = |z: f64| -> f64 {
        let dz = z - c.z;
        let w2 = r * r - dz * dz;
        if w2 <= 0.0 {
            return 0.0;
        }
        circle_rect_area(c.xy(), w2.sqrt(), xa, xb, ya, yb)
    };
    let cell_vol = (xb - xa).abs() * (yb - ya).abs() * (zb - za).abs();
    adaptive_simpson(&section, zlo, zhi, 1e-9 * cell_vol, 14)
}

fn cell_area_fraction(cs: &CrossSection, xa: f64, xb: f64, ya: f64, yb: f64) -> f64 {
    let h2 = (xb - xa) * (yb - ya);
    match cs {
        CrossSection::Rectangle { a, b } => {
            let ox = (xb.min(*a) - xa.max(0.0)).max(0.0);
            let oy = (yb.min(*b) - ya.max(0.0)).max(0.0);
            ox * oy / h2
        }
        CrossSection::Disk { radius } => {
            circle_rect_area(Vector2::zeros(), *radius, xa, xb, ya, yb) / h2
        }
        CrossSection::Polygon { vertices } => {
            polygon_clip_area(vertices, xa, xb, ya, yb) / h2
        }
    }
}

/// Sutherland-Hodgman clip of a polygon by an axis-aligned box, area only.
fn polygon_clip_area(vertices: &[Vector2<f64>], xa: f64, xb: f64, ya: f64, yb: f64) -> f64 {
    let mut poly: Vec<Vector2<f64>> = vertices.to_vec();
    // ensure CCW
    let signed: f64 = {
        let n = poly.len();
        (0..n)
            .map(|i| {
                let j = (i + 1) % n;
                poly[i].x * poly[j].y - poly[j].x * poly[i].y
            })
            .sum::<f64>()
    };
    if signed < 0.0 {
        poly.reverse();
    }
    let clips: [(f64, bool, bool); 4] = [
        (xa, true, true),   // x >= xa
        (xb, true, false),  // x <= xb
        (ya, false, true),  // y >= ya
        (yb, false, false), // y <= yb
    ];
    for (level, is_x, keep_greater) in clips {
        if poly.is_empty() {
            return 0.0;
        }
        let inside = |p: &Vector2<f64>| -> bool {
            let v = if is_x { p.x } else { p.y };
            if keep_greater {
                v >= level
            } else {
                v <= level
            }
        };
        let mut out = Vec::with_capacity(poly.len() + 4);
        for i in 0..poly.len() {
            let cur = poly[i];
            let prev = poly[(i + poly.len() - 1) % poly.len()];
            let (ci, pi) = (inside(&cur), inside(&prev));
            if ci != pi {
                // intersection with the clip line
                let t = if is_x {
                    (level - prev.x) / (cur.x - prev.x)
                } else {
                    (level - prev.y) / (cur.y - prev.y)
                };
                out.push(prev + (cur - prev) * t);
            }
            if ci {
                out.push(cur);
            }
        }
        poly = out;
    }
    if poly.len() < 3 {
        return 0.0;
    }
    let n = poly.len();
    ((0..n)
        .map(|i| {
            let j = (i + 1) % n;
            poly[i].x * poly[j].y - poly[j].x * poly[i].y
        })
        .sum::<f64>()
        / 2.0)
        .abs()
}

fn build_lateral(cs: &CrossSection, bc: BcKind, n: usize) -> LateralGrid {
    let h = 1.0 / n as f64;
    let (x0, y0, ncx, ncy) = match cs {
        CrossSection::Rectangle { a, b } => {
            (0.0, 0.0, (a / h).ceil() as usize, (b / h).ceil() as usize)
        }
        CrossSection::Disk { radius } => {
            let m = (2.0 * radius / h).ceil() as usize;
            (-radius, -radius, m, m)
        }
        CrossSection::Polygon { vertices } => {
            let mut lo = vertices[0];
            let mut hi = vertices[0];
            for v in vertices {
                lo.x = lo.x.min(v.x);
                lo.y = lo.y.min(v.y);
                hi.x = hi.x.max(v.x);
                hi.y = hi.y.max(v.y);
            }
            (
                lo.x,
                lo.y,
                ((hi.x - lo.x) / h).ceil() as usize,
                ((hi.y - lo.y) / h).ceil() as usize,
            )
        }
    };
    let min_frac = 1e-8;
    let mut id = vec![u32::MAX; ncx * ncy];
    let mut centers = Vec::new();
    let mut frac = Vec::new();
    let mut cell_xy = Vec::new();
    for iy in 0..ncy {
        for ix in 0..ncx {
            let (xa, ya) = (x0 + ix as f64 * h, y0 + iy as f64 * h);
            let center = Vector2::new(xa + h / 2.0, ya + h / 2.0);
            let keep = match bc {
                // cut cells for the natural condition
                BcKind::Neumann => cell_area_fraction(cs, xa, xb_of(xa, h), ya, yb_of(ya, h)),
                // staircase wall for the essential condition
                BcKind::MixedDirichletLateral => {
                    if cs.contains(center) {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            if keep > min_frac {
                id[iy * ncx + ix] = centers.len() as u32;
                centers.push(center);
                frac.push(keep);
                cell_xy.push((ix, iy));
            }
        }
    }
    let n2 = centers.len();
    let mut nbr = vec![[u32::MAX; 4]; n2];
    let mut ap_x = vec![0.0; n2];
    let mut ap_y = vec![0.0; n2];
    let mut wall_diag = vec![0.0; n2];
    for c in 0..n2 {
        let (ix, iy) = cell_xy[c];
        let (xa, ya) = (x0 + ix as f64 * h, y0 + iy as f64 * h);
        let look = |jx: i64, jy: i64| -> u32 {
            if jx < 0 || jy < 0 || jx >= ncx as i64 || jy >= ncy as i64 {
                u32::MAX
            } else {
                id[jy as usize * ncx + jx as usize]
            }
        };
        nbr[c] = [
            look(ix as i64 - 1, iy as i64),
            look(ix as i64 + 1, iy as i64),
            look(ix as i64, iy as i64 - 1),
            look(ix as i64, iy as i64 + 1),
        ];
        match bc {
            BcKind::Neumann => {
                if nbr[c][1] != u32::MAX {
                    ap_x[c] = segment_fraction_inside(
                        cs,
                        Vector2::new(xa + h, ya),
                        Vector2::new(xa + h, ya + h),
                    );
                }
                if nbr[c][3] != u32::MAX {
                    ap_y[c] = segment_fraction_inside(
                        cs,
                        Vector2::new(xa, ya + h),
                        Vector2::new(xa + h, ya + h),
                    );
                }
            }
            BcKind::MixedDirichletLateral => {
                if nbr[c][1] != u32::MAX {
                    ap_x[c] = 1.0;
                }
                if nbr[c][3] != u32::MAX {
                    ap_y[c] = 1.0;
                }
                // each missing neighbor face is a Dirichlet ghost at h/2
                let missing = nbr[c].iter().filter(|&&v| v == u32::MAX).count();
                wall_diag[c] = 2.0 * missing as f64;
            }
        }
    }
    LateralGrid { h, nz: n, centers, frac, nbr, ap_x, ap_y, wall_diag }
}

fn xb_of(xa: f64, h: f64) -> f64 {
    xa + h
}
fn yb_of(ya: f64, h: f64) -> f64 {
    ya + h
}

// ---------------------------------------------------------------------------
// the discrete Hermitian operator
// ---------------------------------------------------------------------------

struct CellOperator {
    n2: usize,
    nz: usize,
    inv_h2: f64,
    nbr: Vec<[u32; 4]>,
    /// +x/+y face apertures per (cell, iz)
    ax: Vec<f64>,
    ay: Vec<f64>,
    /// +z face apertures per (cell, iz); the iz = nz-1 face wraps
    az: Vec<f64>,
    /// fluid volume fraction per (cell, iz)
    vol: Vec<f64>,
    /// large diagonal pinning fully-voided cells out of the low spectrum
    pin: Vec<f64>,
    wall_diag: Vec<f64>,
    phase: Complex64,
}

impl CellOperator {
    fn len(&self) -> usize {
        self.n2 * self.nz
    }

    /// y = A x
    fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        let nz = self.nz;
        let ih2 = self.inv_h2;
        let ph = self.phase;
        for c in 0..self.n2 {
            let base = c * nz;
            let nb = self.nbr[c];
            for iz in 0..nz {
                let u = x[base + iz];
                let mut acc = u * (self.wall_diag[c] + self.pin[base + iz]);
                // +x
                if nb[1] != u32::MAX {
                    let a = self.ax[base + iz];
                    acc += (u - x[nb[1] as usize * nz + iz]) * a;
                }
                // -x (aperture stored on the neighbor's +x face)
                if nb[0] != u32::MAX {
                    let a = self.ax[nb[0] as usize * nz + iz];
                    acc += (u - x[nb[0] as usize * nz + iz]) * a;
                }
                // +y
                if nb[3] != u32::MAX {
                    let a = self.ay[base + iz];
                    acc += (u - x[nb[3] as usize * nz + iz]) * a;
                }
                // -y
                if nb[2] != u32::MAX {
                    let a = self.ay[nb[2] as usize * nz + iz];
                    acc += (u - x[nb[2] as usize * nz + iz]) * a;
                }
                // +z (wrap with phase)
                {
                    let a = self.az[base + iz];
                    let up = if iz + 1 < nz {
                        x[base + iz + 1]
                    } else {
                        ph * x[base]
                    };
                    acc += (u - up) * a;
                }
                // -z
                {
                    let (a, dn) = if iz > 0 {
                        (self.az[base + iz - 1], x[base + iz - 1])
                    } else {
                        (self.az[base + nz - 1], ph.conj() * x[base + nz - 1])
                    };
                    acc += (u - dn) * a;
                }
                y[base + iz] = acc * ih2;
            }
        }
    }
}

/// Ball faces/volumes are cut exactly; other void kinds are staircased.
fn build_operator(
    lat: &LateralGrid,
    eta: f64,
    void: Option<(&VoidShape, Vector3<f64>, f64)>,
) -> CellOperator {
    let n2 = lat.centers.len();
    let nz = lat.nz;
    let h = lat.h;
    let mut ax = vec![0.0; n2 * nz];
    let mut ay = vec![0.0; n2 * nz];
    let mut az = vec![0.0; n2 * nz];
    let mut vol = vec![0.0; n2 * nz];
    for c in 0..n2 {
        for iz in 0..nz {
            ax[c * nz + iz] = lat.ap_x[c];
            ay[c * nz + iz] = lat.ap_y[c];
            az[c * nz + iz] = lat.frac[c];
            vol[c * nz + iz] = lat.frac[c];
        }
    }
    if let Some((shape, center, eps)) = void {
        match shape {
            VoidShape::Ball { radius } => {
                let r = eps * radius;
                let reach = r + 2.0 * h;
                for c in 0..n2 {
                    let cc = lat.centers[c];
                    if (cc - center.xy()).norm() > reach {
                        continue;
                    }
                    let (xa, ya) = (cc.x - h / 2.0, cc.y - h / 2.0);
                    for iz in 0..nz {
                        let za = iz as f64 * h;
                        if (za + h / 2.0 - center.z).abs() > reach {
                            continue;
                        }
                        let i = c * nz + iz;
                        let solid = ball_box_volume(
                            center, r, xa, xa + h, ya, ya + h, za, za + h,
                        ) / (h * h * h);
                        vol[i] = (vol[i] - solid).max(0.0);
                        // +x face at xa + h
                        let d = (xa + h - center.x).abs();
                        if d < r {
                            let rr = (r * r - d * d).sqrt();
                            let cut = circle_rect_area(
                                Vector2::new(center.y, center.z),
                                rr,
                                ya,
                                ya + h,
                                za,
                                za + h,
                            ) / (h * h);
                            ax[i] = (ax[i] - cut).max(0.0);
                        }
                        // +y face
                        let d = (ya + h - center.y).abs();
                        if d < r {
                            let rr = (r * r - d * d).sqrt();
                            let cut = circle_rect_area(
                                Vector2::new(center.x, center.z),
                                rr,
                                xa,
                                xa + h,
                                za,
                                za + h,
                            ) / (h * h);
                            ay[i] = (ay[i] - cut).max(0.0);
                        }
                        // +z face
                        let d = (za + h - center.z).abs();
                        if d < r {
                            let rr = (r * r - d * d).sqrt();
                            let cut = circle_rect_area(
                                center.xy(),
                                rr,
                                xa,
                                xa + h,
                                ya,
                                ya + h,
                            ) / (h * h);
                            az[i] = (az[i] - cut).max(0.0);
                        }
                    }
                }
            }
            _ => {
                // staircase: a cell whose center is inside the scaled shape
                // is removed along with its faces
                let mesh = shape.boundary_mesh(2);
                let inside = |p: Vector3<f64>| -> bool {
                    let xi = (p - center) / eps;
                    match shape {
                        VoidShape::Ball { radius } => xi.norm() < *radius,
                        VoidShape::Ellipsoid { semi_axes } => {
                            (xi.x / semi_axes.x).powi(2)
                                + (xi.y / semi_axes.y).powi(2)
                                + (xi.z / semi_axes.z).powi(2)
                                < 1.0
                        }
                        VoidShape::Cuboid { half_edges } => {
                            xi.x.abs() < half_edges.x
                                && xi.y.abs() < half_edges.y
                                && xi.z.abs() < half_edges.z
                        }
                        VoidShape::Surface(_) => mesh.contains(xi),
                    }
                };
                let reach = eps * shape.planar_extent().max(shape.axial_extent()) + 2.0 * h;
                let mut solid = vec![false; n2 * nz];
                for c in 0..n2 {
                    let cc = lat.centers[c];
                    if (cc - center.xy()).norm() > reach {
                        continue;
                    }
                    for iz in 0..nz {
                        let zc = (iz as f64 + 0.5) * h;
                        if (zc - center.z).abs() > reach {
                            continue;
                        }
                        if inside(Vector3::new(cc.x, cc.y, zc)) {
                            solid[c * nz + iz] = true;
                        }
                    }
                }
                for c in 0..n2 {
                    for iz in 0..nz {
                        let i = c * nz + iz;
                        if solid[i] {
                            vol[i] = 0.0;
                            ax[i] = 0.0;
                            ay[i] = 0.0;
                            az[i] = 0.0;
                            // faces owned by neighbors
                            if lat.nbr[c][0] != u32::MAX {
                                ax[lat.nbr[c][0] as usize * nz + iz] = 0.0;
                            }
                            if lat.nbr[c][2] != u32::MAX {
                                ay[lat.nbr[c][2] as usize * nz + iz] = 0.0;
                            }
                            let below = if iz > 0 { i - 1 } else { c * nz + nz - 1 };
                            az[below] = 0.0;
                        }
                    }
                }
            }
        }
    }
    // cells swallowed by the void would otherwise have zero stiffness rows
    // and pollute the low spectrum; pin them far above the bands of interest
    let mut pin = vec![0.0; n2 * nz];
    for i in 0..n2 * nz {
        if vol[i] < 1e-9 {
            vol[i] = 1.0;
            pin[i] = 6.0;
        } else if vol[i] < 0.01 {
            // sliver cut cells: a floor on the mass keeps the inner solves
            // well conditioned; the mass added is ~1e-6 of the cell budget
            vol[i] = 0.01;
        }
    }
    CellOperator {
        n2,
        nz,
        inv_h2: 1.0 / (h * h),
        nbr: lat.nbr.clone(),
        ax,
        ay,
        az,
        vol,
        pin,
        wall_diag: lat.wall_diag.clone(),
        phase: Complex64::from_polar(1.0, eta),
    }
}

// ---------------------------------------------------------------------------
// separable preconditioner: exact inverse of the unperturbed operator + mass
// ---------------------------------------------------------------------------

struct SeparablePreconditioner {
    n2: usize,
    nz: usize,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
    ifft: std::sync::Arc<dyn rustfft::Fft<f64>>,
    twist: Vec<Complex64>,
    factors: Vec<BandedCholesky>,
}

impl SeparablePreconditioner {
    fn build(lat: &LateralGrid, eta: f64) -> Result<Self, OracleError> {
        let n2 = lat.centers.len();
        let nz = lat.nz;
        let h = lat.h;
        // base 2D stiffness (1/h^2-scaled) over active cells
        let mut base = Vec::new();
        for c in 0..n2 {
            let mut diag = lat.wall_diag[c];
            let pairs = [
                (lat.nbr[c][0], lat.nbr[c][0] != u32::MAX, 0),
                (lat.nbr[c][1], true, 1),
                (lat.nbr[c][2], lat.nbr[c][2] != u32::MAX, 2),
                (lat.nbr[c][3], true, 3),
            ];
            let _ = pairs;
            // +x / +y faces owned by this cell
            if lat.nbr[c][1] != u32::MAX {
                let a = lat.ap_x[c];
                diag += a;
                base.push((c, lat.nbr[c][1] as usize, -a));
            }
            if lat.nbr[c][3] != u32::MAX {
                let a = lat.ap_y[c];
                diag += a;
                base.push((c, lat.nbr[c][3] as usize, -a));
            }
            // faces owned by the -x / -y neighbors
            if lat.nbr[c][0] != u32::MAX {
                let a = lat.ap_x[lat.nbr[c][0] as usize];
                diag += a;
                base.push((c, lat.nbr[c][0] as usize, -a));
            }
            if lat.nbr[c][2] != u32::MAX {
                let a = lat.ap_y[lat.nbr[c][2] as usize];
                diag += a;
                base.push((c, lat.nbr[c][2] as usize, -a));
            }
            base.push((c, c, diag));
        }
        let inv_h2 = 1.0 / (h * h);
        let mut planner = rustfft::FftPlanner::new();
        let fft = planner.plan_fft_forward(nz);
        let ifft = planner.plan_fft_inverse(nz);
        let twist: Vec<Complex64> = (0..nz)
            .map(|iz| Complex64::from_polar(1.0, -eta * iz as f64 * h))
            .collect();
        // one banded factorization per axial mode
        let factors: Result<Vec<_>, _> = (0..nz)
            .into_par_iter()
            .map(|m| {
                let beta = (eta + 2.0 * PI * m as f64) * h;
                let mu = (2.0 - 2.0 * beta.cos()) / (h * h);
                let mut trip: Vec<(usize, usize, f64)> = base
                    .iter()
                    .map(|&(i, j, v)| (i, j, v * inv_h2))
                    .collect();
                for c in 0..n2 {
                    trip.push((c, c, (mu + 1.0) * lat.frac[c]));
                }
                let a2d = CsrMatrix::from_triplets(n2, &trip);
                BandedCholesky::factor(&a2d)
            })
            .collect();
        let factors = factors.map_err(|e| OracleError::SolverFailure(e.to_string()))?;
        Ok(SeparablePreconditioner { n2, nz, fft, ifft, twist, factors })
    }

    /// x = (A0 + D0)^{-1} b
    fn apply(&self, b: &[Complex64], x: &mut [Complex64]) {
        let nz = self.nz;
        x.copy_from_slice(b);
        // twist and transform along z (contiguous runs)
        for c in 0..self.n2 {
            let run = &mut x[c * nz..(c + 1) * nz];
            for (v, t) in run.iter_mut().zip(&self.twist) {
                *v *= t;
            }
            self.fft.process(run);
        }
        // per-mode banded solves with real factors, re/im separately
        let mut re = vec![0.0; self.n2];
        let mut im = vec![0.0; self.n2];
        for m in 0..nz {
            for c in 0..self.n2 {
                let v = x[c * nz + m];
                re[c] = v.re;
                im[c] = v.im;
            }
            self.factors[m].solve_in_place(&mut re);
            self.factors[m].solve_in_place(&mut im);
            for c in 0..self.n2 {
                x[c * nz + m] = Complex64::new(re[c], im[c]);
            }
        }
        // back-transform and untwist, including the 1/nz normalization
        let scale = 1.0 / nz as f64;
        for c in 0..self.n2 {
            let run = &mut x[c * nz..(c + 1) * nz];
            self.ifft.process(run);
            for (v, t) in run.iter_mut().zip(&self.twist) {
                *v *= t.conj() * scale;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// eigen-iteration
// ---------------------------------------------------------------------------

fn cdot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn d_dot(op: &CellOperator, a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter()
        .zip(b)
        .zip(&op.vol)
        .map(|((x, y), &v)| x.conj() * y * v)
        .sum()
}

/// PCG for (A + D) x = rhs with the separable preconditioner.
fn pcg_solve(
    op: &CellOperator,
    pre: &SeparablePreconditioner,
    rhs: &[Complex64],
    x: &mut [Complex64],
    tol: f64,
    max_iter: usize,
) -> usize {
    let n = rhs.len();
    let mut r = vec![Complex64::new(0.0, 0.0); n];
    let mut z = vec![Complex64::new(0.0, 0.0); n];
    let mut p = vec![Complex64::new(0.0, 0.0); n];
    let mut ap = vec![Complex64::new(0.0, 0.0); n];
    // r = rhs - (A + D) x
    op.apply(x, &mut ap);
    for i in 0..n {
        r[i] = rhs[i] - ap[i] - x[i] * op.vol[i];
    }
    let rhs_norm = rhs.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt().max(1e-300);
    pre.apply(&r, &mut z);
    p.copy_from_slice(&z);
    let mut rz = cdot(&r, &z).re;
    for it in 0..max_iter {
        let rn = r.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        if rn <= tol * rhs_norm {
            return it;
        }
        op.apply(&p, &mut ap);
        for i in 0..n {
            ap[i] += p[i] * op.vol[i];
        }
        let pap = cdot(&p, &ap).re;
        if pap <= 0.0 {
            return it; // loss of definiteness; caught by outer residuals
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += p[i] * alpha;
            r[i] -= ap[i] * alpha;
        }
        pre.apply(&r, &mut z);
        let rz_new = cdot(&r, &z).re;
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + p[i] * beta;
        }
    }
    max_iter
}

struct EigenOutput {
    values: Vec<f64>,
    vectors: Vec<Vec<Complex64>>,
    residuals: Vec<f64>,
    iterations: usize,
}

fn lowest_cell_eigenpairs(
    op: &CellOperator,
    pre: &SeparablePreconditioner,
    count: usize,
    tol: f64,
    warm: Option<&[Vec<Complex64>]>,
) -> Result<EigenOutput, OracleError> {
    let n = op.len();
    let p = (count + 3).min(n / 4);
    let mut rng = numerics::SplitMix64(0xce11_0a0c_1e50_17ad);
    let mut xs: Vec<Vec<Complex64>> = (0..p)
        .map(|k| {
            if let Some(w) = warm {
                if k < w.len() {
                    return w[k].clone();
                }
            }
            (0..n)
                .map(|_| Complex64::new(rng.next_f64(), rng.next_f64()))
                .collect()
        })
        .collect();
    let mut values = vec![0.0; p];
    let mut last = vec![f64::INFINITY; p];
    let mut residuals = vec![f64::INFINITY; p];
    let mut work = vec![Complex64::new(0.0, 0.0); n];
    // inner solves only need to outpace the current outer residual
    let mut inner_tol = 1e-4;
    for outer in 0..100 {
        // Y = (A + D)^{-1} D X by preconditioned CG, warm from X
        for xv in xs.iter_mut() {
            for i in 0..n {
                work[i] = xv[i] * op.vol[i];
            }
            pcg_solve(op, pre, &work, xv, inner_tol, 600);
        }
        // D-orthonormalize (modified Gram-Schmidt, two passes)
        for i in 0..p {
            for _pass in 0..2 {
                for j in 0..i {
                    let (head, tail) = xs.split_at_mut(i);
                    let c = d_dot(op, &head[j], &tail[0]);
                    for (v, w) in tail[0].iter_mut().zip(head[j].iter()) {
                        *v -= c * w;
                    }
                }
            }
            let nrm = d_dot(op, &xs[i], &xs[i]).re.max(0.0).sqrt();
            if nrm < 1e-300 {
                for v in xs[i].iter_mut() {
                    *v = Complex64::new(rng.next_f64(), rng.next_f64());
                }
            } else {
                for v in xs[i].iter_mut() {
                    *v /= nrm;
                }
            }
        }
        // Rayleigh-Ritz on A
        let axs: Vec<Vec<Complex64>> = xs
            .iter()
            .map(|x| {
                let mut y = vec![Complex64::new(0.0, 0.0); n];
                op.apply(x, &mut y);
                y
            })
            .collect();
        let mut t = vec![Complex64::new(0.0, 0.0); p * p];
        for i in 0..p {
            for j in i..p {
                let v = cdot(&xs[i], &axs[j]);
                t[i * p + j] = v;
                t[j * p + i] = v.conj();
            }
        }
        let (theta, srot) = numerics::hermitian_eigen(&t, p);
        let mut new_xs = vec![vec![Complex64::new(0.0, 0.0); n]; p];
        for slot in 0..p {
            for i in 0..p {
                let c = srot[i * p + slot];
                if c.norm_sqr() > 0.0 {
                    for (nv, xv) in new_xs[slot].iter_mut().zip(xs[i].iter()) {
                        *nv += c * xv;
                    }
                }
            }
            values[slot] = theta[slot];
        }
        xs = new_xs;
        // residuals of the wanted pairs
        let mut done = true;
        for k in 0..count {
            op.apply(&xs[k], &mut work);
            let mut rn = 0.0;
            let mut dn = 0.0;
            for i in 0..n {
                let dxi = xs[k][i] * op.vol[i];
                let r = work[i] - dxi * values[k];
                rn += r.norm_sqr();
                dn += dxi.norm_sqr();
            }
            residuals[k] = rn.sqrt() / ((1.0 + values[k].abs()) * dn.sqrt().max(1e-300));
            let stagnant = (values[k] - last[k]).abs() <= 1e-13 * (1.0 + values[k].abs());
            if residuals[k] > tol && !stagnant {
                done = false;
            }
        }
        last.copy_from_slice(&values);
        let worst = residuals[..count].iter().cloned().fold(0.0f64, f64::max);
        inner_tol = (0.03 * worst).clamp(1e-11, 1e-4);
        if done && outer >= 2 {
            xs.truncate(count);
            values.truncate(count);
            residuals.truncate(count);
            // clamp the tiny negative round-off of the eta = 0 zero mode
            for v in values.iter_mut() {
                if v.abs() < 1e-9 {
                    *v = v.max(0.0);
                }
            }
            return Ok(EigenOutput { values, vectors: xs, residuals, iterations: outer + 1 });
        }
    }
    Err(OracleError::SolverFailure(
        "inverse iteration did not converge in 100 outer iterations".into(),
    ))
}

// ---------------------------------------------------------------------------
// public API
// ---------------------------------------------------------------------------

fn resolve_n(h: f64) -> Result<usize, OracleError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(OracleError::BadResolution(format!("h = {h}")));
    }
    let n = (1.0 / h).round() as usize;
    if n < 4 {
        return Err(OracleError::BadResolution(format!(
            "h = {h} gives fewer than 4 cells per period"
        )));
    }
    Ok(n)
}

fn void_span_cells(void: &VoidShape, eps: f64, h: f64) -> f64 {
    // smallest axis extent of the scaled void, in cells
    let d = match void {
        VoidShape::Ball { radius } => 2.0 * radius,
        VoidShape::Ellipsoid { semi_axes } => 2.0 * semi_axes.min(),
        VoidShape::Cuboid { half_edges } => 2.0 * half_edges.min(),
        VoidShape::Surface(s) => {
            let mut lo = s.vertices[0];
            let mut hi = s.vertices[0];
            for v in &s.vertices {
                lo = lo.inf(v);
                hi = hi.sup(v);
            }
            (hi - lo).min()
        }
    };
    eps * d / h
}

/// Lowest `count` eigenvalues of the perturbed quasi-periodic cell problem.
pub fn solve_cell_problem(
    geom: &CellGeometry,
    eta: f64,
    count: usize,
    h: f64,
) -> Result<CellSpectrum, OracleError> {
    solve_cell_problem_warm(geom, eta, count, h, None).map(|(s, _)| s)
}

/// As [`solve_cell_problem`], returning the eigenvectors for warm starts.
pub fn solve_cell_problem_warm(
    geom: &CellGeometry,
    eta: f64,
    count: usize,
    h: f64,
    warm: Option<&[Vec<Complex64>]>,
) -> Result<(CellSpectrum, Vec<Vec<Complex64>>), OracleError> {
    assert!(count >= 1 && count <= 10, "count small (<= 10)");
    let n = resolve_n(h)?;
    let h = 1.0 / n as f64;
    if geom.clearance < 2.0 * h {
        return Err(OracleError::ClearanceTooSmall { clearance: geom.clearance, h });
    }
    let span = void_span_cells(&geom.void, geom.epsilon, h);
    if span < 3.0 {
        return Err(OracleError::GeometryUnresolved { span, needed: 3.0 });
    }
    let eta = crate::dispersion::wrap_eta(eta);
    let lat = build_lateral(&geom.cross_section, geom.bc_kind, n);
    let op = build_operator(&lat, eta, Some((&geom.void, geom.center, geom.epsilon)));
    let pre = SeparablePreconditioner::build(&lat, eta)?;
    let out = lowest_cell_eigenpairs(&op, &pre, count, 1e-8, warm)?;
    Ok((
        CellSpectrum {
            geometry: Some(geom.clone()),
            eta,
            eigenvalues: out.values,
            resolution: h,
            residuals: out.residuals,
            iterations: out.iterations,
        },
        out.vectors,
    ))
}

/// Lowest `count` eigenvalues of the unperturbed (void-free) cell problem on
/// the same grid family, the reference the perturbed values are compared to.
pub fn solve_empty_cell(
    cs: &CrossSection,
    bc: BcKind,
    eta: f64,
    count: usize,
    h: f64,
) -> Result<CellSpectrum, OracleError> {
    assert!(count >= 1 && count <= 10);
    let n = resolve_n(h)?;
    let h = 1.0 / n as f64;
    let eta = crate::dispersion::wrap_eta(eta);
    let lat = build_lateral(cs, bc, n);
    let op = build_operator(&lat, eta, None);
    let pre = SeparablePreconditioner::build(&lat, eta)?;
    let out = lowest_cell_eigenpairs(&op, &pre, count, 1e-8, None)?;
    Ok(CellSpectrum {
        geometry: None,
        eta,
        eigenvalues: out.values,
        resolution: h,
        residuals: out.residuals,
        iterations: out.iterations,
    })
}

/// Band segments over an eta grid: per-band min/max and the detected gaps.
pub fn compute_bands(
    geom: &CellGeometry,
    eta_grid: &[f64],
    n_bands: usize,
    h: f64,
) -> Result<BandStructure, OracleError> {
    if eta_grid.len() < 16 {
        return Err(OracleError::BadResolution(format!(
            "eta grid needs at least 16 points, got {}",
            eta_grid.len()
        )));
    }
    let values: Result<Vec<Vec<f64>>, OracleError> = eta_grid
        .par_iter()
        .map(|&eta| solve_cell_problem(geom, eta, n_bands, h).map(|s| s.eigenvalues))
        .collect();
    let values = values?;
    let mut bands = Vec::with_capacity(n_bands);
    for k in 0..n_bands {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for row in &values {
            lo = lo.min(row[k]);
            hi = hi.max(row[k]);
        }
        bands.push((lo, hi));
    }
    let mut gaps = Vec::new();
    for k in 0..n_bands - 1 {
        if bands[k].1 < bands[k + 1].0 {
            gaps.push((bands[k].1, bands[k + 1].0));
        }
    }
    Ok(BandStructure {
        epsilon: geom.epsilon,
        eta_grid: eta_grid.to_vec(),
        bands,
        gaps,
        values,
    })
}

/// Result of an epsilon-cubed slope fit.
#[derive(Debug, Clone)]
pub struct SlopeFit {
    /// Least-squares slope of the extrapolated shifts against eps^3.
    pub slope: f64,
    /// Root-mean-square fit residual.
    pub residual: f64,
    /// Per epsilon: (eps, extrapolated shift, fitted h-exponent).
    pub shifts: Vec<(f64, f64, f64)>,
    /// Grid sizes used per level (cells per period).
    pub grid_levels: [usize; 3],
}

/// Fit the eigenvalue shift of one ordered branch against eps^3.
///
/// For each epsilon the perturbed and unperturbed problems are solved on
/// three nested grids {n/2, 3n/4, n} (n = 1/h rounded to a multiple of 4) and
/// the shift Lambda_eps - Lambda_0 is Richardson-extrapolated before the
/// least-squares fit through the origin. `rank` is the 1-based position of
/// the tracked branch in the ordered spectrum at this eta (see
/// [`crate::dispersion::branch_rank`]).
pub fn fit_epsilon_cubed(
    cs: &CrossSection,
    void: &VoidShape,
    center: Vector3<f64>,
    bc: BcKind,
    eps_list: &[f64],
    eta: f64,
    rank: usize,
    h: f64,
) -> Result<SlopeFit, OracleError> {
    if eps_list.len() < 4 {
        return Err(OracleError::InsufficientPoints(eps_list.len()));
    }
    let n_f = {
        let n = resolve_n(h)?;
        ((n + 3) / 4) * 4
    };
    let levels = [n_f / 2, 3 * n_f / 4, n_f];
    let count = rank + 2;
    // reference solves, one per level
    let refs: Result<Vec<f64>, OracleError> = levels
        .par_iter()
        .map(|&n| {
            solve_empty_cell(cs, bc, eta, count, 1.0 / n as f64)
                .map(|s| s.eigenvalues[rank - 1])
        })
        .collect();
    let refs = refs?;
    // perturbed solves over the (eps, level) grid
    let jobs: Vec<(usize, usize)> = (0..eps_list.len())
        .flat_map(|ie| (0..3).map(move |il| (ie, il)))
        .collect();
    let shifts_matrix: Result<Vec<f64>, OracleError> = jobs
        .par_iter()
        .map(|&(ie, il)| {
            let geom = crate::geometry::make_cell(
                cs.clone(),
                void.clone(),
                center,
                eps_list[ie],
                bc,
            )?;
            let s = solve_cell_problem(&geom, eta, count, 1.0 / levels[il] as f64)?;
            Ok(s.eigenvalues[rank - 1] - refs[il])
        })
        .collect();
    let shifts_matrix = shifts_matrix?;
    let mut shifts = Vec::with_capacity(eps_list.len());
    for (ie, &eps) in eps_list.iter().enumerate() {
        let d = [
            shifts_matrix[ie * 3],
            shifts_matrix[ie * 3 + 1],
            shifts_matrix[ie * 3 + 2],
        ];
        let hs = [
            1.0 / levels[0] as f64,
            1.0 / levels[1] as f64,
            1.0 / levels[2] as f64,
        ];
        let (extrap, p) = numerics::richardson_extrapolate(hs, d);
        shifts.push((eps, extrap, p));
    }
    let xs: Vec<f64> = shifts.iter().map(|s| s.0.powi(3)).collect();
    let ys: Vec<f64> = shifts.iter().map(|s| s.1).collect();
    let (slope, residual) = numerics::slope_through_origin(&xs, &ys);
    Ok(SlopeFit { slope, residual, shifts, grid_levels: levels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::make_cell;

    fn rect_lattice_value(a: f64, b: f64, p: usize, q: usize, m: i64, eta: f64) -> f64 {
        let mpq = PI * PI * ((p as f64 / a).powi(2) + (q as f64 / b).powi(2));
        let beta = eta + 2.0 * PI * m as f64;
        mpq + beta * beta
    }

    #[test]
    fn empty_rect_matches_lattice_with_h2_rate() {
        // Neumann rectangle: lattice values are exact, so the discrete error
        // must contract at second order
        let cs = CrossSection::rectangle(0.75, 0.5).unwrap();
        let eta = 2.0;
        let mut exact = vec![
            rect_lattice_value(0.75, 0.5, 0, 0, 0, eta),
            rect_lattice_value(0.75, 0.5, 1, 0, 0, eta),
            rect_lattice_value(0.75, 0.5, 0, 0, -1, eta),
        ];
        exact.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let coarse = solve_empty_cell(&cs, BcKind::Neumann, eta, 3, 1.0 / 12.0).unwrap();
        let fine = solve_empty_cell(&cs, BcKind::Neumann, eta, 3, 1.0 / 24.0).unwrap();
        for k in 0..3 {
            let ec = (coarse.eigenvalues[k] - exact[k]).abs();
            let ef = (fine.eigenvalues[k] - exact[k]).abs();
            assert!(
                ef < ec / 3.0,
                "k={k}: coarse err {ec:.3e}, fine err {ef:.3e}"
            );
            assert!(ef / exact[k].max(1.0) < 0.02);
        }
    }

    #[test]
    fn empty_cell_zero_mode_at_eta_zero() {
        let cs = CrossSection::disk(0.5).unwrap();
        let s = solve_empty_cell(&cs, BcKind::Neumann, 0.0, 2, 1.0 / 12.0).unwrap();
        assert!(s.eigenvalues[0].abs() < 1e-8, "{:?}", s.eigenvalues);
        assert!(s.eigenvalues[1] > 1.0);
        // degenerate cross-modes leave the eigenvector residual a little
        // above the value tolerance; values themselves are converged
        for r in &s.residuals {
            assert!(*r < 1e-6);
        }
    }

    #[test]
    fn empty_disk_matches_ordered_spectrum() {
        // cross-check against the dispersion lattice built on FEM modes
        let cs = CrossSection::disk(0.5).unwrap();
        let ms = crate::cross_modes::solve_cross_modes(
            &cs,
            crate::cross_modes::ModeBc::Neumann,
            4,
            0.01,
        )
        .unwrap();
        let eta = 1.1;
        let expect = crate::dispersion::ordered_spectrum(&ms, eta, 3);
        let got = solve_empty_cell(&cs, BcKind::Neumann, eta, 3, 1.0 / 20.0).unwrap();
        for k in 0..3 {
            let rel = (got.eigenvalues[k] - expect[k].0).abs() / expect[k].0.max(1.0);
            assert!(rel < 0.02, "k={k}: {} vs {}", got.eigenvalues[k], expect[k].0);
        }
    }

    #[test]
    fn perturbed_splits_crossing_with_correct_signs() {
        // coarse, fast sanity check of the splitting at eta = pi
        let cs = CrossSection::disk(0.5).unwrap();
        let void = VoidShape::ball(1.0).unwrap();
        let geom = make_cell(
            cs.clone(),
            void,
            Vector3::new(0.0, 0.0, 0.5),
            0.2,
            BcKind::Neumann,
        )
        .unwrap();
        let refv = solve_empty_cell(&cs, BcKind::Neumann, PI, 2, 1.0 / 20.0).unwrap();
        let per = solve_cell_problem(&geom, PI, 2, 1.0 / 20.0).unwrap();
        // reference pair is the double crossing value
        assert!((refv.eigenvalues[0] - refv.eigenvalues[1]).abs() < 1e-6);
        let d1 = per.eigenvalues[0] - refv.eigenvalues[0];
        let d2 = per.eigenvalues[1] - refv.eigenvalues[1];
        // lower branch moves down, upper moves up
        assert!(d1 < 0.0, "d1 = {d1}");
        assert!(d2 > 0.0, "d2 = {d2}");
        // rough magnitudes against the asymptotic slopes (F0 -+ |F1|) eps^3;
        // eps = 0.2 is far out, so only the scale is checked
        let area = PI * 0.25;
        let f0 = -(2.0 / 3.0) * PI.powi(3) / area;
        let f1 = (10.0 / 3.0) * PI.powi(3) / area;
        let e3 = 0.2f64.powi(3);
        assert!((d1 / ((f0 - f1) * e3) - 1.0).abs() < 0.5, "d1 ratio {}", d1 / ((f0 - f1) * e3));
        assert!((d2 / ((f0 + f1) * e3) - 1.0).abs() < 0.5, "d2 ratio {}", d2 / ((f0 + f1) * e3));
    }

    #[test]
    fn spectrum_reflection_symmetry() {
        let cs = CrossSection::disk(0.5).unwrap();
        let void = VoidShape::ball(1.0).unwrap();
        let geom = make_cell(
            cs,
            void,
            Vector3::new(0.0, 0.0, 0.5),
            0.18,
            BcKind::Neumann,
        )
        .unwrap();
        let eta = 2.2;
        let a = solve_cell_problem(&geom, eta, 3, 1.0 / 16.0).unwrap();
        let b = solve_cell_problem(&geom, 2.0 * PI - eta, 3, 1.0 / 16.0).unwrap();
        for k in 0..3 {
            assert!(
                (a.eigenvalues[k] - b.eigenvalues[k]).abs() < 1e-6 * a.eigenvalues[k].max(1.0),
                "k={k}"
            );
        }
    }

    #[test]
    fn geometry_guards() {
        let cs = CrossSection::disk(0.5).unwrap();
        let void = VoidShape::ball(1.0).unwrap();
        let geom = make_cell(
            cs.clone(),
            void.clone(),
            Vector3::new(0.0, 0.0, 0.5),
            0.05,
            BcKind::Neumann,
        )
        .unwrap();
        // 0.05 void on a 1/16 grid spans fewer than 3 cells
        assert!(matches!(
            solve_cell_problem(&geom, PI, 2, 1.0 / 16.0),
            Err(OracleError::GeometryUnresolved { .. })
        ));
        // clearance violation: big void close to the wall
        let tight = make_cell(
            cs.clone(),
            void,
            Vector3::new(0.0, 0.0, 0.5),
            0.42,
            BcKind::Neumann,
        )
        .unwrap();
        assert!(matches!(
            solve_cell_problem(&tight, PI, 2, 1.0 / 12.0),
            Err(OracleError::ClearanceTooSmall { .. })
        ));
        // sweep needs at least 4 epsilons
        assert!(matches!(
            fit_epsilon_cubed(
                &cs,
                &VoidShape::ball(1.0).unwrap(),
                Vector3::new(0.0, 0.0, 0.5),
                BcKind::Neumann,
                &[0.1, 0.15],
                PI,
                1,
                1.0 / 16.0,
            ),
            Err(OracleError::InsufficientPoints(2))
        ));
    }

    #[test]
    fn mixed_bc_dirichlet_wall() {
        // rectangle with Dirichlet walls: lattice values use the Dirichlet
        // cross-section eigenvalue pi^2 (1/a^2 + 1/b^2)
        let (a, b) = (1.0, 1.0);
        let cs = CrossSection::rectangle(a, b).unwrap();
        let eta = 1.0;
        let m1 = PI * PI * 2.0;
        let exact = m1 + eta * eta;
        let got = solve_empty_cell(&cs, BcKind::MixedDirichletLateral, eta, 2, 1.0 / 24.0)
            .unwrap();
        let rel = (got.eigenvalues[0] - exact).abs() / exact;
        assert!(rel < 0.01, "{} vs {exact}", got.eigenvalues[0]);
    }

    #[test]
    fn circle_rect_area_quadrants() {
        // full containment and analytic quarter check
        let full = circle_rect_area(Vector2::zeros(), 0.5, -1.0, 1.0, -1.0, 1.0);
        assert!((full - PI * 0.25).abs() < 1e-8);
        let quarter = circle_rect_area(Vector2::zeros(), 0.5, 0.0, 1.0, 0.0, 1.0);
        assert!((quarter - PI * 0.0625).abs() < 1e-8);
    }

    #[test]
    fn ball_box_volume_checks() {
        let full = ball_box_volume(
            Vector3::new(0.0, 0.0, 0.0),
            0.5,
            -1.0,
            1.0,
            -1.0,
            1.0,
            -1.0,
            1.0,
        );
        assert!((full - 4.0 * PI / 3.0 * 0.125).abs() < 1e-8);
        let half = ball_box_volume(
            Vector3::new(0.0, 0.0, 0.0),
            0.5,
            -1.0,
            1.0,
            -1.0,
            1.0,
            0.0,
            1.0,
        );
        assert!((half - 2.0 * PI / 3.0 * 0.125).abs() < 1e-8);
    }
}

#[cfg(test)]
mod solver_tests {
    use super::*;

    #[test]
    fn operator_is_hermitian() {
        let cs = CrossSection::rectangle(0.75, 0.5).unwrap();
        let lat = build_lateral(&cs, BcKind::Neumann, 8);
        let op = build_operator(&lat, 2.0, None);
        let nn = op.len();
        let mut rng = numerics::SplitMix64(3);
        let x: Vec<Complex64> = (0..nn).map(|_| Complex64::new(rng.next_f64(), rng.next_f64())).collect();
        let y: Vec<Complex64> = (0..nn).map(|_| Complex64::new(rng.next_f64(), rng.next_f64())).collect();
        let mut ax = vec![Complex64::new(0.0, 0.0); nn];
        let mut ay = vec![Complex64::new(0.0, 0.0); nn];
        op.apply(&x, &mut ax);
        op.apply(&y, &mut ay);
        let lhs = cdot(&x, &ay);
        let rhs_v = cdot(&ax, &y);
        println!("<x,Ay> = {lhs}, <Ax,y> = {rhs_v}, diff = {:.3e}", (lhs - rhs_v).norm());
        assert!((lhs - rhs_v).norm() < 1e-10 * lhs.norm());
    }

    #[test]
    fn pcg_solves_shifted_system() {
        let cs = CrossSection::rectangle(0.75, 0.5).unwrap();
        let lat = build_lateral(&cs, BcKind::Neumann, 8);
        let op = build_operator(&lat, 2.0, None);
        let pre = SeparablePreconditioner::build(&lat, 2.0).unwrap();
        let nn = op.len();
        let mut rng = numerics::SplitMix64(7);
        let rhs: Vec<Complex64> = (0..nn)
            .map(|_| Complex64::new(rng.next_f64(), rng.next_f64()))
            .collect();
        let mut x = vec![Complex64::new(0.0, 0.0); nn];
        let iters = pcg_solve(&op, &pre, &rhs, &mut x, 1e-12, 100);
        let mut ax = vec![Complex64::new(0.0, 0.0); nn];
        op.apply(&x, &mut ax);
        let mut err = 0.0f64;
        let mut bn = 0.0f64;
        for i in 0..nn {
            let r = ax[i] + x[i] * op.vol[i] - rhs[i];
            err += r.norm_sqr();
            bn += rhs[i].norm_sqr();
        }
        println!("pcg iters {iters}, rel residual {:.3e}", (err / bn).sqrt());
        assert!((err / bn).sqrt() < 1e-10);
    }

    #[test]
    fn preconditioner_is_exact_inverse_when_unperturbed() {
        let cs = CrossSection::rectangle(0.75, 0.5).unwrap();
        let n = 8;
        let eta = 2.0;
        let lat = build_lateral(&cs, BcKind::Neumann, n);
        let op = build_operator(&lat, eta, None);
        let pre = SeparablePreconditioner::build(&lat, eta).unwrap();
        let nn = op.len();
        let mut rng = numerics::SplitMix64(99);
        let b: Vec<Complex64> = (0..nn)
            .map(|_| Complex64::new(rng.next_f64(), rng.next_f64()))
            .collect();
        let mut x = vec![Complex64::new(0.0, 0.0); nn];
        pre.apply(&b, &mut x);
        let mut ax = vec![Complex64::new(0.0, 0.0); nn];
        op.apply(&x, &mut ax);
        let mut err = 0.0f64;
        let mut bn = 0.0f64;
        for i in 0..nn {
            let r = ax[i] + x[i] * op.vol[i] - b[i];
            err += r.norm_sqr();
            bn += b[i].norm_sqr();
        }
        println!("relative inverse error: {:.3e}", (err / bn).sqrt());
        assert!((err / bn).sqrt() < 1e-10);
    }
}
