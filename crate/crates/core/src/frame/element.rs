//! Force-based beam-column and truss elements with corotational kinematics.
//!
//! Basic deformations are `v = [e, theta_1, theta_2]`: chord elongation and
//! end rotations measured from the chord. Basic forces `q = [N, M_1, M_2]`
//! are work-conjugate.

use std::sync::{Arc, OnceLock};

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use super::section::{initial_rigidities, section_trial, FiberSection};
use crate::error::{Error, Result};
use crate::material::{FiberState, MaterialParams};

pub const N_IP: usize = 5;
pub const MAX_ELEMENT_ITERATIONS: usize = 25;
pub const ELEMENT_TOLERANCE: f64 = 1e-8;

/// Share of the initial section rigidities added to every section tangent
/// so fully yielded sections stay invertible.
const SECTION_REGULARIZATION: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Geometry {
    #[default]
    Corotational,
    Linear,
}

/// Gauss-Lobatto points on [0, 1], their weights, and the double
/// integration matrices that map integration-point curvatures to
/// transverse deflection `w = L^2 G kappa` and slope `w' = L H kappa`,
/// measured from the chord.
pub struct Quadrature {
    pub xi: [f64; N_IP],
    pub wt: [f64; N_IP],
    pub g: [[f64; N_IP]; N_IP],
    pub h: [[f64; N_IP]; N_IP],
}

pub fn lobatto() -> &'static Quadrature {
    static Q: OnceLock<Quadrature> = OnceLock::new();
    Q.get_or_init(|| {
        let r = (3.0f64 / 7.0).sqrt();
        let xi = [0.0, (1.0 - r) / 2.0, 0.5, (1.0 + r) / 2.0, 1.0];
        let wt = [1.0 / 20.0, 49.0 / 180.0, 16.0 / 45.0, 49.0 / 180.0, 1.0 / 20.0];
        let mut g = [[0.0; N_IP]; N_IP];
        let mut h = [[0.0; N_IP]; N_IP];
        for j in 0..N_IP {
            let c = lagrange_coefficients(&xi, j);
            let tail: f64 = (0..N_IP).map(|k| c[k] / ((k + 1) * (k + 2)) as f64).sum();
            for i in 0..N_IP {
                let x = xi[i];
                let dbl: f64 = (0..N_IP)
                    .map(|k| c[k] * x.powi(k as i32 + 2) / ((k + 1) * (k + 2)) as f64)
                    .sum();
                let sgl: f64 = (0..N_IP).map(|k| c[k] * x.powi(k as i32 + 1) / (k + 1) as f64).sum();
                g[i][j] = dbl - x * tail;
                h[i][j] = sgl - tail;
            }
        }
        Quadrature { xi, wt, g, h }
    })
}

/// Monomial coefficients of the `j`-th Lagrange basis polynomial.
fn lagrange_coefficients(xi: &[f64; N_IP], j: usize) -> [f64; N_IP] {
    let mut c = [0.0; N_IP];
    c[0] = 1.0;
    let mut deg = 0;
    let mut denom = 1.0;
    for (m, &xm) in xi.iter().enumerate() {
        if m == j {
            continue;
        }
        for k in (0..=deg + 1).rev() {
            let prev = if k > 0 { c[k - 1] } else { 0.0 };
            c[k] = prev - xm * c[k];
        }
        deg += 1;
        denom *= xi[j] - xm;
    }
    c.iter_mut().for_each(|v| *v /= denom);
    c
}

/// Immutable description of a force-based beam-column.
#[derive(Debug, Clone)]
pub struct BeamColumnDef {
    pub section: Arc<FiberSection>,
    pub material: MaterialParams,
    /// Elastic shear rigidity `G A_s`; infinite disables shear flexibility.
    pub shear_rigidity: f64,
    pub length: f64,
    /// Moment releases at end I and end J.
    pub release: [bool; 2],
    /// Include the axial-force effect on the deflected member.
    pub p_delta: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Kinematic {
    d: [[f64; 2]; N_IP],
    q: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct BeamColumnState {
    pub fibers: Vec<FiberState>,
    trial: Kinematic,
    committed: Kinematic,
    v_trial: [f64; 3],
    kb: Matrix3<f64>,
    kb_committed: Matrix3<f64>,
    converged: bool,
}

type M10 = SMatrix<f64, 10, 10>;
type V10 = SVector<f64, 10>;
type M3x10 = SMatrix<f64, 3, 10>;
type M10x3 = SMatrix<f64, 10, 3>;

impl BeamColumnDef {
    pub fn layers(&self) -> usize {
        self.section.layers.len()
    }

    pub fn new_state(&self) -> BeamColumnState {
        let fibers = (0..N_IP * self.layers()).map(|_| FiberState::new(&self.material)).collect();
        let kb = self.elastic_basic_stiffness();
        let zero = Kinematic {
            d: [[0.0; 2]; N_IP],
            q: [0.0; 3],
        };
        BeamColumnState {
            fibers,
            trial: zero,
            committed: zero,
            v_trial: [0.0; 3],
            kb,
            kb_committed: kb,
            converged: true,
        }
    }

    fn shear_flexibility(&self) -> f64 {
        if self.shear_rigidity.is_finite() && self.shear_rigidity > 0.0 {
            1.0 / (self.length * self.shear_rigidity)
        } else {
            0.0
        }
    }

    fn active(&self) -> ([usize; 3], usize) {
        let mut idx = [0usize; 3];
        let mut n = 0;
        for k in 0..3 {
            if k == 0 || !self.release[k - 1] {
                idx[n] = k;
                n += 1;
            }
        }
        (idx, n)
    }

    fn invert_active(&self, f: &Matrix3<f64>) -> Result<Matrix3<f64>> {
        let (idx, n) = self.active();
        let mut out = Matrix3::zeros();
        match n {
            3 => {
                out = f.try_inverse().ok_or_else(|| Error::Singular("element flexibility".into()))?;
            }
            2 => {
                let (a, b) = (idx[0], idx[1]);
                let m = nalgebra::Matrix2::new(f[(a, a)], f[(a, b)], f[(b, a)], f[(b, b)]);
                let inv = m.try_inverse().ok_or_else(|| Error::Singular("element flexibility".into()))?;
                out[(a, a)] = inv[(0, 0)];
                out[(a, b)] = inv[(0, 1)];
                out[(b, a)] = inv[(1, 0)];
                out[(b, b)] = inv[(1, 1)];
            }
            _ => {
                let a = idx[0];
                if f[(a, a)] == 0.0 {
                    return Err(Error::Singular("element flexibility".into()));
                }
                out[(a, a)] = 1.0 / f[(a, a)];
            }
        }
        Ok(out)
    }

    fn elastic_basic_stiffness(&self) -> Matrix3<f64> {
        let (ea, ei) = initial_rigidities(&self.section, &self.material);
        let (ea, ei) = (ea * (1.0 + SECTION_REGULARIZATION), ei * (1.0 + SECTION_REGULARIZATION));
        let l = self.length;
        let fs = self.shear_flexibility();
        let f = Matrix3::new(
            l / ea,
            0.0,
            0.0,
            0.0,
            l / (3.0 * ei) + fs,
            -l / (6.0 * ei) + fs,
            0.0,
            -l / (6.0 * ei) + fs,
            l / (3.0 * ei) + fs,
        );
        self.invert_active(&f).unwrap_or_else(|_| Matrix3::zeros())
    }

    /// Force-based state determination for basic deformations `v`.
    pub fn set_trial(&self, st: &mut BeamColumnState, v: [f64; 3]) -> Result<([f64; 3], Matrix3<f64>)> {
        if st.converged && st.v_trial == v {
            return Ok((st.trial.q, st.kb));
        }
        let quad = lobatto();
        let l = self.length;
        let nl = self.layers();
        let fs = self.shear_flexibility();
        let (ea0, ei0) = initial_rigidities(&self.section, &self.material);
        let reg_a = SECTION_REGULARIZATION * ea0;
        let reg_m = SECTION_REGULARIZATION * ei0;
        let n_floor = ea0 * 1e-6;
        let m_floor = ei0 * 1e-6 / self.section.depth.max(1e-6);
        let (idx, n_active) = self.active();
        let mut active = [false; 3];
        idx[..n_active].iter().for_each(|&k| active[k] = true);

        let mut k = st.trial;
        for k_iter in 0..MAX_ELEMENT_ITERATIONS {
            let q = k.q;
            // section responses
            let mut s = [[0.0f64; 2]; N_IP];
            let mut ks = [[[0.0f64; 2]; 2]; N_IP];
            for i in 0..N_IP {
                let r = section_trial(
                    &self.section,
                    &self.material,
                    &mut st.fibers[i * nl..(i + 1) * nl],
                    k.d[i][0],
                    k.d[i][1],
                )?;
                s[i] = [r.n, r.m];
                ks[i] = r.k;
                ks[i][0][0] += reg_a;
                ks[i][1][1] += reg_m;
            }
            // deflected shape
            let mut w = [0.0; N_IP];
            let mut wp = [0.0; N_IP];
            if self.p_delta {
                for i in 0..N_IP {
                    for j in 0..N_IP {
                        w[i] += l * l * quad.g[i][j] * k.d[j][1];
                        wp[i] += l * quad.h[i][j] * k.d[j][1];
                    }
                }
            }
            // residuals
            let mut rs = V10::zeros();
            let mut n_ref = n_floor;
            let mut m_ref = m_floor;
            let mut rs_max_n = 0.0f64;
            let mut rs_max_m = 0.0f64;
            for i in 0..N_IP {
                let x = quad.xi[i];
                let dn = q[0];
                let dm = (x - 1.0) * q[1] + x * q[2] + q[0] * w[i];
                rs[2 * i] = s[i][0] - dn;
                rs[2 * i + 1] = s[i][1] - dm;
                n_ref = n_ref.max(s[i][0].abs()).max(dn.abs());
                m_ref = m_ref.max(s[i][1].abs()).max(dm.abs());
                rs_max_n = rs_max_n.max(rs[2 * i].abs());
                rs_max_m = rs_max_m.max(rs[2 * i + 1].abs());
            }
            let mut vd = [0.0; 3];
            for i in 0..N_IP {
                let x = quad.xi[i];
                let a = l * quad.wt[i];
                vd[0] += a * (k.d[i][0] - 0.5 * wp[i] * wp[i]);
                vd[1] += a * (x - 1.0) * k.d[i][1];
                vd[2] += a * x * k.d[i][1];
            }
            vd[1] += fs * (q[1] + q[2]);
            vd[2] += fs * (q[1] + q[2]);
            let mut rv = Vector3::new(v[0] - vd[0], v[1] - vd[1], v[2] - vd[2]);
            for kk in 0..3 {
                if !active[kk] {
                    rv[kk] = 0.0;
                }
            }

            // linearization
            let mut a_mat = M10::zeros();
            let mut c_mat = M3x10::zeros();
            let mut bq = M10x3::zeros();
            for i in 0..N_IP {
                let x = quad.xi[i];
                a_mat[(2 * i, 2 * i)] = ks[i][0][0];
                a_mat[(2 * i, 2 * i + 1)] = ks[i][0][1];
                a_mat[(2 * i + 1, 2 * i)] = ks[i][1][0];
                a_mat[(2 * i + 1, 2 * i + 1)] = ks[i][1][1];
                if self.p_delta {
                    for j in 0..N_IP {
                        a_mat[(2 * i + 1, 2 * j + 1)] -= q[0] * l * l * quad.g[i][j];
                    }
                }
                let a = l * quad.wt[i];
                c_mat[(0, 2 * i)] = a;
                c_mat[(1, 2 * i + 1)] = a * (x - 1.0);
                c_mat[(2, 2 * i + 1)] = a * x;
                if self.p_delta {
                    for j in 0..N_IP {
                        c_mat[(0, 2 * j + 1)] -= a * wp[i] * l * quad.h[i][j];
                    }
                }
                bq[(2 * i, 0)] = 1.0;
                bq[(2 * i + 1, 0)] = w[i];
                bq[(2 * i + 1, 1)] = x - 1.0;
                bq[(2 * i + 1, 2)] = x;
            }
            let lu = a_mat.lu();
            let a_inv_bq = lu.solve(&bq).ok_or_else(|| Error::Singular("section system".into()))?;
            let a_inv_rs = lu.solve(&rs).ok_or_else(|| Error::Singular("section system".into()))?;
            let mut f = c_mat * a_inv_bq;
            f[(1, 1)] += fs;
            f[(1, 2)] += fs;
            f[(2, 1)] += fs;
            f[(2, 2)] += fs;
            let kb = self.invert_active(&f)?;

            let v_scale = [
                v[0].abs().max(vd[0].abs()).max(1e-6 * l),
                v[1].abs().max(v[2].abs()).max(1e-6),
                v[1].abs().max(v[2].abs()).max(1e-6),
            ];
            let rv_ok = (0..3).all(|kk| rv[kk].abs() <= ELEMENT_TOLERANCE * v_scale[kk]);
            let rs_ok = rs_max_n <= ELEMENT_TOLERANCE * n_ref && rs_max_m <= ELEMENT_TOLERANCE * m_ref;
            if rv_ok && rs_ok && (k_iter > 0 || st.converged) {
                st.trial = k;
                st.v_trial = v;
                st.kb = kb;
                st.converged = true;
                return Ok((k.q, kb));
            }

            let rhs = rv + c_mat * a_inv_rs;
            let dq = kb * rhs;
            let dd = a_inv_bq * dq - a_inv_rs;
            for i in 0..N_IP {
                k.d[i][0] += dd[2 * i];
                k.d[i][1] += dd[2 * i + 1];
            }
            for kk in 0..3 {
                if active[kk] {
                    k.q[kk] += dq[kk];
                }
            }
            if !k.q.iter().all(|x| x.is_finite()) {
                break;
            }
        }
        st.trial = k;
        st.converged = false;
        Err(Error::ElementFailure {
            iterations: MAX_ELEMENT_ITERATIONS,
        })
    }

    pub fn commit(&self, st: &mut BeamColumnState) {
        for f in &mut st.fibers {
            f.commit(&self.material);
        }
        st.committed = st.trial;
        st.kb_committed = st.kb;
    }

    pub fn revert(&self, st: &mut BeamColumnState) {
        for f in &mut st.fibers {
            f.revert();
        }
        st.trial = st.committed;
        st.kb = st.kb_committed;
        st.converged = false;
    }
}

impl BeamColumnState {
    pub fn basic_forces(&self) -> [f64; 3] {
        self.committed.q
    }

    /// Section deformations `(eps0, kappa)` at the integration points.
    pub fn section_deformations(&self) -> [[f64; 2]; N_IP] {
        self.committed.d
    }
}

/// Elastic axial bar; used for the leaning column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrussDef {
    pub ea: f64,
    pub length: f64,
}

/// Global kinematics of a two-node element in the plane. Nodal dofs are
/// ordered `[ux1, uy1, rz1, ux2, uy2, rz2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub ln: f64,
    pub c: f64,
    pub s: f64,
    pub alpha: f64,
}

pub fn kinematics(x1: [f64; 2], x2: [f64; 2], u: &[f64; 6], geometry: Geometry) -> (Kinematics, [f64; 3]) {
    let dx0 = x2[0] - x1[0];
    let dy0 = x2[1] - x1[1];
    let l0 = dx0.hypot(dy0);
    let (c0, s0) = (dx0 / l0, dy0 / l0);
    match geometry {
        Geometry::Linear => {
            let du = u[3] - u[0];
            let dv = u[4] - u[1];
            let chord = (-s0 * du + c0 * dv) / l0;
            let v = [c0 * du + s0 * dv, u[2] - chord, u[5] - chord];
            (
                Kinematics {
                    ln: l0,
                    c: c0,
                    s: s0,
                    alpha: chord,
                },
                v,
            )
        }
        Geometry::Corotational => {
            let dx = dx0 + u[3] - u[0];
            let dy = dy0 + u[4] - u[1];
            let ln = dx.hypot(dy);
            let (c, s) = (dx / ln, dy / ln);
            let alpha = (c0 * s - s0 * c).atan2(c0 * c + s0 * s);
            // (ln^2 - l0^2) / (ln + l0) avoids cancellation for tiny strains
            let e = ((dx - dx0) * (dx + dx0) + (dy - dy0) * (dy + dy0)) / (ln + l0);
            (Kinematics { ln, c, s, alpha }, [e, u[2] - alpha, u[5] - alpha])
        }
    }
}

/// Maps basic forces and tangent to global end forces and stiffness.
pub fn to_global(
    kin: &Kinematics,
    q: [f64; 3],
    kb: &Matrix3<f64>,
    geometry: Geometry,
) -> ([f64; 6], SMatrix<f64, 6, 6>) {
    let (c, s, ln) = (kin.c, kin.s, kin.ln);
    let r = SVector::<f64, 6>::from([-c, -s, 0.0, c, s, 0.0]);
    let z = SVector::<f64, 6>::from([s, -c, 0.0, -s, c, 0.0]);
    let mut b = SMatrix::<f64, 3, 6>::zeros();
    for j in 0..6 {
        b[(0, j)] = r[j];
        b[(1, j)] = -z[j] / ln;
        b[(2, j)] = -z[j] / ln;
    }
    b[(1, 2)] = 1.0;
    b[(2, 5)] = 1.0;
    let qv = Vector3::from(q);
    let f = b.transpose() * qv;
    let mut k = b.transpose() * kb * b;
    if geometry == Geometry::Corotational {
        k += z * z.transpose() * (q[0] / ln);
        k += (r * z.transpose() + z * r.transpose()) * ((q[1] + q[2]) / (ln * ln));
    }
    let mut fa = [0.0; 6];
    fa.copy_from_slice(f.as_slice());
    (fa, k)
}

impl TrussDef {
    pub fn response(&self, e: f64) -> ([f64; 3], Matrix3<f64>) {
        let k = self.ea / self.length;
        let mut kb = Matrix3::zeros();
        kb[(0, 0)] = k;
        ([k * e, 0.0, 0.0], kb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::section::discretize_section;
    use crate::frame::WideFlange;

    fn elastic_def(p_delta: bool, release: [bool; 2]) -> BeamColumnDef {
        let sec = discretize_section(&WideFlange {
            d: 0.3,
            bf: 0.2,
            tf: 0.015,
            tw: 0.01,
        })
        .unwrap();
        BeamColumnDef {
            section: Arc::new(sec),
            material: MaterialParams::Elastic { e: 200e9 },
            shear_rigidity: f64::INFINITY,
            length: 4.0,
            release,
            p_delta,
        }
    }

    #[test]
    fn quadrature_integrates_constant_curvature() {
        let q = lobatto();
        for i in 0..N_IP {
            let x = q.xi[i];
            let gsum: f64 = q.g[i].iter().sum();
            let hsum: f64 = q.h[i].iter().sum();
            assert!((gsum - (x * x / 2.0 - x / 2.0)).abs() < 1e-14);
            assert!((hsum - (x - 0.5)).abs() < 1e-14);
        }
        assert!((q.wt.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_deformation_zero_force() {
        let d = elastic_def(true, [false, false]);
        let mut st = d.new_state();
        let (q, _) = d.set_trial(&mut st, [0.0; 3]).unwrap();
        assert_eq!(q, [0.0; 3]);
    }

    #[test]
    fn axial_extension_matches_truss() {
        let d = elastic_def(false, [false, false]);
        let mut st = d.new_state();
        let e = 1e-4;
        let (q, _) = d.set_trial(&mut st, [e, 0.0, 0.0]).unwrap();
        let ea: f64 = d.section.area() * 200e9;
        assert!((q[0] / (ea * e / 4.0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn elastic_basic_stiffness_matches_closed_form() {
        let d = elastic_def(false, [false, false]);
        let mut st = d.new_state();
        let th = 1e-4;
        let (q, kb) = d.set_trial(&mut st, [0.0, th, 0.0]).unwrap();
        let ei = 200e9 * d.section.inertia();
        assert!((q[1] / (4.0 * ei / 4.0 * th) - 1.0).abs() < 1e-9);
        assert!((q[2] / (2.0 * ei / 4.0 * th) - 1.0).abs() < 1e-9);
        assert!((kb[(1, 2)] / (2.0 * ei / 4.0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn released_end_carries_no_moment() {
        let d = elastic_def(false, [true, false]);
        let mut st = d.new_state();
        let (q, kb) = d.set_trial(&mut st, [0.0, 0.003, 0.001]).unwrap();
        assert_eq!(q[1], 0.0);
        let ei = 200e9 * d.section.inertia();
        assert!((q[2] / (3.0 * ei / 4.0 * 0.001) - 1.0).abs() < 1e-9);
        assert_eq!(kb[(1, 1)], 0.0);
    }

    #[test]
    fn compression_softens_flexural_stiffness() {
        let d = elastic_def(true, [false, false]);
        let mut st = d.new_state();
        let (q, kb) = d.set_trial(&mut st, [-2e-3, 1e-5, -1e-5]).unwrap();
        assert!(q[0] < 0.0);
        let lin = elastic_def(false, [false, false]);
        let mut st2 = lin.new_state();
        let (_, kb2) = lin.set_trial(&mut st2, [-2e-3, 1e-5, -1e-5]).unwrap();
        assert!(kb[(1, 1)] < kb2[(1, 1)]);
    }

    #[test]
    fn global_tangent_matches_finite_difference() {
        let d = elastic_def(true, [false, false]);
        let x1 = [0.3, -0.2];
        let x2 = [1.1, 3.7];
        let u = [0.01, -0.004, 0.02, 0.03, -0.006, -0.015];
        let eval = |u: &[f64; 6]| {
            let mut st = d.new_state();
            let (kin, v) = kinematics(x1, x2, u, Geometry::Corotational);
            let mut dd = d.clone();
            dd.length = (x2[0] - x1[0]).hypot(x2[1] - x1[1]);
            let (q, kb) = dd.set_trial(&mut st, v).unwrap();
            to_global(&kin, q, &kb, Geometry::Corotational)
        };
        let (_, k) = eval(&u);
        for j in 0..6 {
            let h = 1e-7;
            let mut up = u;
            up[j] += h;
            let mut um = u;
            um[j] -= h;
            let (fp, _) = eval(&up);
            let (fm, _) = eval(&um);
            for i in 0..6 {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                let scale = k.abs().max() * 1e-6;
                assert!((fd - k[(i, j)]).abs() < 5e-3 * k[(i, j)].abs() + scale, "({i},{j}) {fd} {}", k[(i, j)]);
            }
        }
    }

    #[test]
    fn rigid_rotation_invariance() {
        let d = elastic_def(true, [false, false]);
        let x1 = [0.0, 0.0];
        let x2 = [0.0, 4.0];
        let u = [0.001, -0.0005, 0.002, 0.012, -0.001, 0.001];
        let mut st = d.new_state();
        let (_, v) = kinematics(x1, x2, &u, Geometry::Corotational);
        let (q0, _) = d.set_trial(&mut st, v).unwrap();
        let rot = 0.7f64;
        let (c, s) = (rot.cos(), rot.sin());
        let r = |p: [f64; 2]| [c * p[0] - s * p[1], s * p[0] + c * p[1]];
        let p1 = r([x1[0] + u[0], x1[1] + u[1]]);
        let p2 = r([x2[0] + u[3], x2[1] + u[4]]);
        let ur = [p1[0] - x1[0], p1[1] - x1[1], u[2] + rot, p2[0] - x2[0], p2[1] - x2[1], u[5] + rot];
        let mut st2 = d.new_state();
        let (_, v2) = kinematics(x1, x2, &ur, Geometry::Corotational);
        let (q1, _) = d.set_trial(&mut st2, v2).unwrap();
        for k in 0..3 {
            assert!((q1[k] - q0[k]).abs() <= 1e-8 * q0[k].abs().max(1.0));
        }
    }
}
