//! Homogeneous self-dual interior-point method.
//!
//! Internally the program is written as
//!
//! ```text
//! minimize c'x   s.t.  G x + s = h,  A x = b,  s in K
//! ```
//!
//! with `h = F0`, `G x = -sum_k x_k F_k` and `K` a product of PSD cones. Its
//! dual is `maximize -h'z - b'y  s.t.  G'z + A'y + c = 0, z in K`. Both are
//! embedded in the self-dual system with homogenizing scalars `tau, kappa`;
//! directions use Nesterov-Todd scaling `W` (with scaled point `lambda`
//! diagonal) and a Mehrotra predictor-corrector.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::program::{residuals_at, ConicProgram, Residuals, Solution, SolverSettings, Status};

const STEP_FRACTION: f64 = 0.99;
const NEAR_OPTIMAL_FACTOR: f64 = 1e3;
const REFINE_STEPS: usize = 6;
/// Iterations without a better iterate after which a near-optimal run stops.
const STALL_ITERS: usize = 8;

type Blocks = Vec<DMatrix<f64>>;

/// Solves `program`; never panics on numerical trouble, which is reported
/// through the returned status and residuals.
pub fn solve(program: &ConicProgram, settings: &SolverSettings) -> Solution {
    if let Err(e) = program.validate() {
        panic!("malformed conic program: {e}");
    }
    Ipm::new(program, settings).run()
}

struct Scaling {
    r: DMatrix<f64>,
    rinv: DMatrix<f64>,
    lambda: DVector<f64>,
}

impl Scaling {
    fn from_pair(s: &DMatrix<f64>, z: &DMatrix<f64>) -> Option<Scaling> {
        let l1 = s.clone().cholesky()?.l();
        let l2 = z.clone().cholesky()?.l();
        let (u, sv, vt) = svd(&(l2.transpose() * &l1))?;
        let isq = sv.map(|x| 1.0 / x.sqrt());
        let r = l1 * vt.transpose() * DMatrix::from_diagonal(&isq);
        let rinv = DMatrix::from_diagonal(&isq) * u.transpose() * l2.transpose();
        Some(Scaling { r, rinv, lambda: sv })
    }

    /// Re-centres the scaling at the new point given in scaled coordinates.
    fn update(&mut self, s_scaled: &DMatrix<f64>, z_scaled: &DMatrix<f64>) -> Option<()> {
        let l1 = s_scaled.clone().cholesky()?.l();
        let l2 = z_scaled.clone().cholesky()?.l();
        let (u, sv, vt) = svd(&(l2.transpose() * &l1))?;
        let isq = DMatrix::from_diagonal(&sv.map(|x| 1.0 / x.sqrt()));
        self.r = &self.r * l1 * vt.transpose() * &isq;
        self.rinv = isq * u.transpose() * l2.transpose() * &self.rinv;
        self.lambda = sv;
        Some(())
    }

    /// `W u = R' u R`.
    fn apply(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        self.r.transpose() * u * &self.r
    }

    /// `W' u = R u R'`.
    fn apply_t(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        &self.r * u * self.r.transpose()
    }

    fn s(&self) -> DMatrix<f64> {
        self.apply_t(&DMatrix::from_diagonal(&self.lambda))
    }

    fn z(&self) -> DMatrix<f64> {
        self.rinv.transpose() * DMatrix::from_diagonal(&self.lambda) * &self.rinv
    }

    /// `(W'W)^{-1} = (R R')^{-1}`.
    fn wi(&self) -> DMatrix<f64> {
        self.rinv.transpose() * &self.rinv
    }
}

/// Relative reconstruction error above which an SVD is recomputed.
const SVD_CHECK: f64 = 1e-10;

/// SVD of a square nonsingular matrix. The LAPACK-free SVD occasionally
/// returns factors that do not reproduce `m`, so the result is checked and,
/// when needed, recomputed from the symmetric eigenproblem of
/// `[[0, m], [m', 0]]`, whose positive eigenpairs are `(s_i, [u_i; v_i] / sqrt 2)`.
fn svd(m: &DMatrix<f64>) -> Option<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let accept = |u: &DMatrix<f64>, sv: &DVector<f64>, vt: &DMatrix<f64>| {
        sv.iter().all(|&x| x > 0.0 && x.is_finite())
            && (u * DMatrix::from_diagonal(sv) * vt - m).norm() <= SVD_CHECK * m.norm()
    };
    if let Some(d) = m.clone().try_svd(true, true, f64::EPSILON, 0) {
        if let (Some(u), Some(vt)) = (d.u, d.v_t) {
            if accept(&u, &d.singular_values, &vt) {
                return Some((u, d.singular_values, vt));
            }
        }
    }
    svd_via_eigen(m).filter(|(u, sv, vt)| accept(u, sv, vt))
}

fn svd_via_eigen(m: &DMatrix<f64>) -> Option<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    let mut aug = DMatrix::zeros(2 * n, 2 * n);
    aug.view_mut((0, n), (n, n)).copy_from(m);
    aug.view_mut((n, 0), (n, n)).copy_from(&m.transpose());
    let eig = aug.symmetric_eigen();
    let mut order: Vec<usize> = (0..2 * n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut u = DMatrix::zeros(n, n);
    let mut vt = DMatrix::zeros(n, n);
    let mut sv = DVector::zeros(n);
    for (c, &i) in order.iter().take(n).enumerate() {
        let w = eig.eigenvectors.column(i);
        let (wu, wv) = (w.rows(0, n), w.rows(n, n));
        let (nu, nv) = (wu.norm(), wv.norm());
        if !(nu > 0.0 && nv > 0.0) {
            return None;
        }
        u.set_column(c, &(wu / nu));
        vt.set_row(c, &(wv / nv).transpose());
        sv[c] = eig.eigenvalues[i];
    }
    Some((u, sv, vt))
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// `(X Y + Y X) / 2`.
fn jordan(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    sym(x * y)
}

/// Solves `lambda o u = d` for diagonal `lambda`.
fn lyap_div(lambda: &DVector<f64>, d: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(d.nrows(), d.ncols(), |i, j| 2.0 * d[(i, j)] / (lambda[i] + lambda[j]))
}

/// Largest `alpha` with `diag(lambda) + alpha * d` PSD (infinite if unbounded).
fn max_step_block(lambda: &DVector<f64>, d: &DMatrix<f64>) -> f64 {
    let n = lambda.len();
    let isq = lambda.map(|x| 1.0 / x.sqrt());
    let m = DMatrix::from_fn(n, n, |i, j| d[(i, j)] * isq[i] * isq[j]);
    let min = if n == 1 {
        m[(0, 0)]
    } else {
        sym(m).symmetric_eigenvalues().min()
    };
    if min >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / min
    }
}

fn frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(b).sum()
}

fn blocks_dot(a: &Blocks, b: &Blocks) -> f64 {
    a.iter().zip(b).map(|(x, y)| frob(x, y)).sum()
}

fn blocks_norm(a: &Blocks) -> f64 {
    a.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt()
}

fn axpy_blocks(alpha: f64, x: &Blocks, y: &mut Blocks) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += xi * alpha;
    }
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        m[(0, 0)]
    } else {
        sym(m.clone()).symmetric_eigenvalues().min()
    }
}

struct Kkt {
    chol_h: Cholesky<f64, Dyn>,
    chol_s: Option<Cholesky<f64, Dyn>>,
    hinv_at: DMatrix<f64>,
    wi: Blocks,
    wm: Blocks,
}

struct Ipm<'a> {
    prog: &'a ConicProgram,
    settings: &'a SolverSettings,
    n: usize,
    c: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    h: Blocks,
    sizes: Vec<usize>,
    /// Block entries grouped by variable: `(k, [(row, col, coeff)])`.
    groups: Vec<Vec<(usize, Vec<(usize, usize, f64)>)>>,
}

struct Direction {
    x: DVector<f64>,
    y: DVector<f64>,
    tau: f64,
    kappa: f64,
    s_scaled: Blocks,
    z_scaled: Blocks,
}

struct Best {
    worst: f64,
    x: Vec<f64>,
    lam: Vec<f64>,
    z: Blocks,
    res: Residuals,
}

impl<'a> Ipm<'a> {
    fn new(prog: &'a ConicProgram, settings: &'a SolverSettings) -> Self {
        let n = prog.num_vars;
        let p = prog.equalities.len();
        let sign = prog.sense.sign();
        let c = DVector::from_iterator(n, prog.objective.iter().map(|v| sign * v));
        let mut a = DMatrix::zeros(p, n);
        for (r, row) in prog.equalities.iter().enumerate() {
            for &(k, v) in &row.coeffs {
                a[(r, k)] += v;
            }
        }
        let b = DVector::from_iterator(p, prog.equalities.iter().map(|r| r.rhs));
        let h = prog.blocks.iter().map(|bl| bl.constant_matrix()).collect();
        let sizes = prog.blocks.iter().map(|bl| bl.size).collect();
        let groups = prog
            .blocks
            .iter()
            .map(|bl| {
                let mut by_var: std::collections::BTreeMap<usize, Vec<(usize, usize, f64)>> = Default::default();
                for &(k, a, b, c) in &bl.terms {
                    by_var.entry(k).or_default().push((a, b, c));
                }
                by_var.into_iter().collect()
            })
            .collect();
        Ipm {
            prog,
            settings,
            n,
            c,
            a,
            b,
            h,
            sizes,
            groups,
        }
    }

    /// `G x = -sum_k x_k F_k`.
    fn g_mul(&self, x: &DVector<f64>) -> Blocks {
        self.prog
            .blocks
            .iter()
            .map(|bl| {
                let mut m = DMatrix::zeros(bl.size, bl.size);
                bl.add_linear_part(x.as_slice(), -1.0, &mut m);
                m
            })
            .collect()
    }

    /// `G' z = -F*(z)`.
    fn gt_mul(&self, z: &Blocks) -> DVector<f64> {
        let mut out = vec![0.0; self.n];
        for (bl, zj) in self.prog.blocks.iter().zip(z) {
            bl.add_adjoint(zj, -1.0, &mut out);
        }
        DVector::from_vec(out)
    }

    fn zeros_blocks(&self) -> Blocks {
        self.sizes.iter().map(|&k| DMatrix::zeros(k, k)).collect()
    }

    fn identity_blocks(&self) -> Blocks {
        self.sizes.iter().map(|&k| DMatrix::identity(k, k)).collect()
    }

    /// Builds `G' (W'W)^{-1} G` block by block. For every variable `k` the
    /// product `W F_k W` is formed once, from rank-one updates when `F_k` is
    /// sparse and by dense multiplication otherwise, and then contracted
    /// against the entries of every `F_l`.
    fn schur(&self, wi: &Blocks) -> DMatrix<f64> {
        let mut hm = DMatrix::zeros(self.n, self.n);
        for ((bl, w), groups) in self.prog.blocks.iter().zip(wi).zip(&self.groups) {
            let s = bl.size;
            let mut u = DMatrix::zeros(s, s);
            let mut f = DMatrix::zeros(s, s);
            for (k, entries) in groups {
                u.fill(0.0);
                if entries.len() < s {
                    for &(a, b, c) in entries {
                        if a == b {
                            u.ger(c, &w.column(a), &w.column(a), 1.0);
                        } else {
                            u.ger(c, &w.column(a), &w.column(b), 1.0);
                            u.ger(c, &w.column(b), &w.column(a), 1.0);
                        }
                    }
                } else {
                    f.fill(0.0);
                    for &(a, b, c) in entries {
                        f[(a, b)] += c;
                        if a != b {
                            f[(b, a)] += c;
                        }
                    }
                    u = w * &f * w;
                }
                for (l, entries_l) in groups {
                    let mut v = 0.0;
                    for &(c, d, cu) in entries_l {
                        let m = if c == d { 1.0 } else { 2.0 };
                        v += cu * m * u[(c, d)];
                    }
                    hm[(*k, *l)] += v;
                }
            }
        }
        hm
    }

    fn factor(&self, wi: Blocks, wm: Blocks) -> Option<Kkt> {
        let mut hm = self.schur(&wi);
        if self.a.nrows() > 0 {
            hm += self.a.transpose() * &self.a;
        }
        let chol_h = robust_cholesky(hm)?;
        let (chol_s, hinv_at) = if self.a.nrows() > 0 {
            let hinv_at = chol_h.solve(&self.a.transpose());
            let s = &self.a * &hinv_at;
            (Some(robust_cholesky(sym(s))?), hinv_at)
        } else {
            (None, DMatrix::zeros(self.n, 0))
        };
        Some(Kkt {
            chol_h,
            chol_s,
            hinv_at,
            wi,
            wm,
        })
    }

    /// Solves `A'dy + G'dz = bx, A dx = by, G dx - W'W dz = bz`.
    fn kkt_solve_once(
        &self,
        kkt: &Kkt,
        bx: &DVector<f64>,
        by: &DVector<f64>,
        bz: &Blocks,
    ) -> (DVector<f64>, DVector<f64>, Blocks) {
        let tmp: Blocks = bz
            .iter()
            .zip(&kkt.wi)
            .map(|(u, w)| w * u * w)
            .collect();
        let mut r1 = bx + self.gt_mul(&tmp);
        if self.a.nrows() > 0 {
            r1 += self.a.transpose() * by;
        }
        let t = kkt.chol_h.solve(&r1);
        let (dx, dy) = match &kkt.chol_s {
            Some(cs) => {
                let dy = cs.solve(&(&self.a * &t - by));
                let dx = &t - &kkt.hinv_at * &dy;
                (dx, dy)
            }
            None => (t, DVector::zeros(0)),
        };
        let gdx = self.g_mul(&dx);
        let dz = gdx
            .iter()
            .zip(bz)
            .zip(&kkt.wi)
            .map(|((g, u), w)| sym(w * (g - u) * w))
            .collect();
        (dx, dy, dz)
    }

    fn kkt_solve(
        &self,
        kkt: &Kkt,
        bx: &DVector<f64>,
        by: &DVector<f64>,
        bz: &Blocks,
    ) -> (DVector<f64>, DVector<f64>, Blocks) {
        let (mut dx, mut dy, mut dz) = self.kkt_solve_once(kkt, bx, by, bz);
        let mut last = f64::INFINITY;
        for _ in 0..REFINE_STEPS {
            let rx = bx - (self.a.transpose() * &dy + self.gt_mul(&dz));
            let ry = by - &self.a * &dx;
            let gdx = self.g_mul(&dx);
            let rz: Blocks = bz
                .iter()
                .zip(&gdx)
                .zip(dz.iter().zip(&kkt.wm))
                .map(|((b, g), (z, w))| b - (g - w * z * w))
                .collect();
            let size = rx.norm() + ry.norm() + blocks_norm(&rz);
            if !(size < 0.5 * last) {
                break;
            }
            last = size;
            let (ex, ey, ez) = self.kkt_solve_once(kkt, &rx, &ry, &rz);
            dx += ex;
            dy += ey;
            axpy_blocks(1.0, &ez, &mut dz);
        }
        (dx, dy, dz)
    }

    fn hdot(&self, z: &Blocks) -> f64 {
        blocks_dot(&self.h, z)
    }

    fn run(&self) -> Solution {
        let settings = self.settings;
        let prog = self.prog;
        let p = self.a.nrows();
        let degree = prog.cone_degree() as f64;
        let resx0 = self.c.norm().max(1.0);
        let resy0 = self.b.norm().max(1.0);
        let resz0 = blocks_norm(&self.h).max(1.0);

        // starting point from two least-squares solves with W = I
        let ident = self.identity_blocks();
        let Some(kkt0) = self.factor(ident.clone(), ident.clone()) else {
            return self.failed(0);
        };
        let (mut x, _, zp) = self.kkt_solve(&kkt0, &DVector::zeros(self.n), &self.b, &self.h);
        let mut s: Blocks = zp.iter().map(|m| -m).collect();
        let (_, mut y, mut z) = self.kkt_solve(&kkt0, &(-&self.c), &DVector::zeros(p), &self.zeros_blocks());
        shift_into_cone(&mut s);
        shift_into_cone(&mut z);
        let mut tau = 1.0;
        let mut kappa = 1.0;
        let mut scaling: Vec<Scaling> = match s
            .iter()
            .zip(&z)
            .map(|(si, zi)| Scaling::from_pair(si, zi))
            .collect::<Option<Vec<_>>>()
        {
            Some(w) => w,
            None => return self.failed(0),
        };

        let mut best: Option<Best> = None;
        let mut since_best = 0;
        let mut iters = 0;
        let mut status = Status::MaxIters;
        let mut final_point: Option<(Vec<f64>, Vec<f64>, Blocks)> = None;

        for it in 0..=settings.max_iters {
            iters = it;
            let gx = self.g_mul(&x);
            let gtz = self.gt_mul(&z);
            let hz = self.hdot(&z);
            let cx = self.c.dot(&x);
            let by = self.b.dot(&y);
            let rx = self.a.transpose() * &y + &gtz + &self.c * tau;
            let ry = &self.a * &x - &self.b * tau;
            let rz: Blocks = s
                .iter()
                .zip(&gx)
                .zip(&self.h)
                .map(|((si, gi), hi)| si + gi - hi * tau)
                .collect();
            let rt = kappa + cx + by + hz;
            let lam_sq: f64 = scaling.iter().map(|w| w.lambda.norm_squared()).sum();
            let mu = (lam_sq + tau * kappa) / (degree + 1.0);

            let xc: Vec<f64> = x.iter().map(|v| v / tau).collect();
            let lc: Vec<f64> = y.iter().map(|v| -v / tau).collect();
            let zc: Blocks = z.iter().map(|m| m / tau).collect();
            let res = residuals_at(prog, &xc, &lc, &zc);
            if settings.verbose {
                eprintln!(
                    "{it:3}  pobj {:+.9e}  dobj {:+.9e}  pres {:.2e}  dres {:.2e}  gap {:.2e}  tau {:.2e}  kappa {:.2e}",
                    cx / tau,
                    -(by + hz) / tau,
                    res.rel_primal,
                    res.rel_dual,
                    res.rel_gap,
                    tau,
                    kappa
                );
            }
            if res.rel_primal <= settings.feas_tol
                && res.rel_dual <= settings.feas_tol
                && res.rel_gap <= settings.gap_tol
            {
                status = Status::Optimal;
                final_point = Some((xc, lc, zc));
                break;
            }
            since_best += 1;
            if best.as_ref().map_or(true, |b| res.worst() < b.worst) {
                since_best = 0;
                best = Some(Best {
                    worst: res.worst(),
                    x: xc,
                    lam: lc,
                    z: zc,
                    res,
                });
            }
            let near = best.as_ref().is_some_and(|b| {
                b.res.rel_primal <= NEAR_OPTIMAL_FACTOR * settings.feas_tol
                    && b.res.rel_dual <= NEAR_OPTIMAL_FACTOR * settings.feas_tol
                    && b.res.rel_gap <= NEAR_OPTIMAL_FACTOR * settings.gap_tol
            });
            if near && since_best >= STALL_ITERS {
                break;
            }

            // infeasibility certificates
            let dual_ray = -(hz + by);
            if dual_ray > 0.0 {
                let pinfres = (&gtz + self.a.transpose() * &y).norm() / resx0 / dual_ray;
                if pinfres <= settings.feas_tol {
                    status = Status::Infeasible;
                    break;
                }
            }
            if cx < 0.0 {
                let gxs: Blocks = gx.iter().zip(&s).map(|(g, si)| g + si).collect();
                let dinfres =
                    ((&self.a * &x).norm() / resy0).max(blocks_norm(&gxs) / resz0) / (-cx);
                if dinfres <= settings.feas_tol {
                    status = Status::Unbounded;
                    break;
                }
            }
            if it == settings.max_iters {
                break;
            }

            let wi: Blocks = scaling.iter().map(Scaling::wi).collect();
            let wm: Blocks = scaling.iter().map(|w| &w.r * w.r.transpose()).collect();
            let Some(kkt) = self.factor(wi, wm) else {
                break;
            };
            let (u1x, u1y, u1z) = self.kkt_solve(&kkt, &(-&self.c), &self.b, &self.h);
            let wu1z: f64 = u1z
                .iter()
                .zip(&scaling)
                .map(|(u, w)| w.apply(u).norm_squared())
                .sum();

            let lam_mats: Blocks = scaling
                .iter()
                .map(|w| DMatrix::from_diagonal(&w.lambda))
                .collect();
            let direction = |sigma: f64, ds: &Blocks, dtau: f64| -> Direction {
                let eta = 1.0 - sigma;
                let q: Blocks = scaling
                    .iter()
                    .zip(ds)
                    .map(|(w, d)| lyap_div(&w.lambda, d))
                    .collect();
                let bz: Blocks = rz
                    .iter()
                    .zip(&q)
                    .zip(&scaling)
                    .map(|((r, qi), w)| -(r * eta) - w.apply_t(qi))
                    .collect();
                let (u2x, u2y, u2z) = self.kkt_solve(&kkt, &(-(&rx * eta)), &(-(&ry * eta)), &bz);
                let num = eta * rt + dtau / tau + self.c.dot(&u2x) + self.b.dot(&u2y) + self.hdot(&u2z);
                let dt = num / (kappa / tau + wu1z);
                let dx = u2x + &u1x * dt;
                let dy = u2y + &u1y * dt;
                let mut dz = u2z;
                axpy_blocks(dt, &u1z, &mut dz);
                let z_scaled: Blocks = dz.iter().zip(&scaling).map(|(d, w)| sym(w.apply(d))).collect();
                let s_scaled: Blocks = q.iter().zip(&z_scaled).map(|(qi, zi)| qi - zi).collect();
                let dk = (dtau - kappa * dt) / tau;
                Direction {
                    x: dx,
                    y: dy,
                    tau: dt,
                    kappa: dk,
                    s_scaled,
                    z_scaled,
                }
            };
            let max_step = |d: &Direction| -> f64 {
                let mut alpha = f64::INFINITY;
                for (w, (ds, dz)) in scaling.iter().zip(d.s_scaled.iter().zip(&d.z_scaled)) {
                    alpha = alpha.min(max_step_block(&w.lambda, ds));
                    alpha = alpha.min(max_step_block(&w.lambda, dz));
                }
                if d.tau < 0.0 {
                    alpha = alpha.min(-tau / d.tau);
                }
                if d.kappa < 0.0 {
                    alpha = alpha.min(-kappa / d.kappa);
                }
                alpha
            };

            // predictor
            let ds_aff: Blocks = lam_mats.iter().map(|l| -(l * l)).collect();
            let aff = direction(0.0, &ds_aff, -tau * kappa);
            let alpha_aff = max_step(&aff).min(1.0);
            let sigma = (1.0 - alpha_aff).powi(3);

            // corrector
            let ds: Blocks = lam_mats
                .iter()
                .zip(aff.s_scaled.iter().zip(&aff.z_scaled))
                .map(|(l, (sa, za))| {
                    let mut m = -(l * l) - jordan(sa, za);
                    for i in 0..m.nrows() {
                        m[(i, i)] += sigma * mu;
                    }
                    m
                })
                .collect();
            let dtau = -tau * kappa + sigma * mu - aff.tau * aff.kappa;
            let dir = direction(sigma, &ds, dtau);
            let alpha = (STEP_FRACTION * max_step(&dir)).min(1.0);
            if !(alpha > 1e-12) {
                break;
            }

            x += &dir.x * alpha;
            y += &dir.y * alpha;
            tau += alpha * dir.tau;
            kappa += alpha * dir.kappa;
            let mut ok = true;
            for (w, (dsi, dzi)) in scaling.iter_mut().zip(dir.s_scaled.iter().zip(&dir.z_scaled)) {
                let lam = DMatrix::from_diagonal(&w.lambda);
                let s_new = sym(&lam + dsi * alpha);
                let z_new = sym(&lam + dzi * alpha);
                if w.update(&s_new, &z_new).is_none() {
                    ok = false;
                    break;
                }
            }
            if !ok || !tau.is_finite() || tau <= 0.0 {
                break;
            }
            s = scaling.iter().map(|w| sym(w.s())).collect();
            z = scaling.iter().map(|w| sym(w.z())).collect();
        }

        let (x, lam, zb, status) = match (status, final_point, best) {
            (Status::Optimal, Some((x, l, z)), _) => (x, l, z, Status::Optimal),
            (Status::Infeasible, _, _) | (Status::Unbounded, _, _) => {
                // report the normalized certificate ray
                let scale = if status == Status::Infeasible {
                    1.0 / (-(self.hdot(&z) + self.b.dot(&y))).max(f64::MIN_POSITIVE)
                } else {
                    1.0 / (-self.c.dot(&x)).max(f64::MIN_POSITIVE)
                };
                let xr: Vec<f64> = x.iter().map(|v| v * scale).collect();
                let lr: Vec<f64> = y.iter().map(|v| -v * scale).collect();
                let zr: Blocks = z.iter().map(|m| m * scale).collect();
                (xr, lr, zr, status)
            }
            (_, _, Some(b)) => {
                let st = if b.res.rel_primal <= NEAR_OPTIMAL_FACTOR * settings.feas_tol
                    && b.res.rel_dual <= NEAR_OPTIMAL_FACTOR * settings.feas_tol
                    && b.res.rel_gap <= NEAR_OPTIMAL_FACTOR * settings.gap_tol
                {
                    Status::NearOptimal
                } else {
                    Status::MaxIters
                };
                (b.x, b.lam, b.z, st)
            }
            _ => return self.failed(iters),
        };
        let res = residuals_at(prog, &x, &lam, &zb);
        Solution {
            status,
            primal_objective: prog.objective_value(&x),
            dual_objective: crate::program::dual_objective(prog, &lam, &zb),
            x,
            eq_duals: lam,
            block_duals: zb,
            residuals: res,
            iterations: iters,
        }
    }

    fn failed(&self, iters: usize) -> Solution {
        let x = vec![0.0; self.n];
        let lam = vec![0.0; self.a.nrows()];
        let z = self.zeros_blocks();
        let res = residuals_at(self.prog, &x, &lam, &z);
        Solution {
            status: Status::MaxIters,
            primal_objective: 0.0,
            dual_objective: 0.0,
            x,
            eq_duals: lam,
            block_duals: z,
            residuals: res,
            iterations: iters,
        }
    }
}

fn shift_into_cone(v: &mut Blocks) {
    let t = v.iter().map(|m| -min_eig(m)).fold(f64::NEG_INFINITY, f64::max);
    let norm = blocks_norm(v);
    if t >= -1e-8 * norm.max(1.0) {
        for m in v.iter_mut() {
            for i in 0..m.nrows() {
                m[(i, i)] += 1.0 + t;
            }
        }
    }
}

fn robust_cholesky(m: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if let Some(c) = m.clone().cholesky() {
        return Some(c);
    }
    let diag_max = m.diagonal().iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1e-300);
    let mut delta = 1e-14 * diag_max;
    for _ in 0..8 {
        let mut reg = m.clone();
        for i in 0..reg.nrows() {
            reg[(i, i)] += delta;
        }
        if let Some(c) = reg.cholesky() {
            return Some(c);
        }
        delta *= 100.0;
    }
    None
}
