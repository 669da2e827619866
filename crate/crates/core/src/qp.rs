//! Minimum-norm QP: `minimize ‖x‖²  subject to  G·x ≥ g`.
//!
//! Solved as a least-distance program through non-negative least squares
//! (Lawson & Hanson): with `E = [Gᵀ; gᵀ]` and `f = e_{n+1}`, the NNLS residual
//! `r = E·u − f` yields `x = −r₁..ₙ / rₙ₊₁`, and a vanishing residual is a
//! Farkas certificate `Gᵀu = 0, gᵀu = 1`. The active set found by NNLS is then
//! re-solved as an equality-constrained projection to tighten the KKT residuals.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpTolerances {
    pub feas: f64,
    pub stat: f64,
    pub comp: f64,
}

impl Default for QpTolerances {
    fn default() -> Self {
        QpTolerances {
            feas: 1e-8,
            stat: 1e-8,
            comp: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QpOptions {
    pub tol: QpTolerances,
    /// Defaults to `10·(m + n)` when `None`.
    pub max_iters: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

/// Normalized KKT residuals:
/// primal `max(g − Gx)₊/(1+‖g‖∞)`, stationarity `‖2x − Gᵀλ‖∞/(1+‖x‖)`,
/// complementarity `max|λᵢ(Gx − g)ᵢ|`, dual sign `max(−λ)₊`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
    pub dual: f64,
}

impl KktResiduals {
    pub fn passes(&self, tol: &QpTolerances) -> bool {
        self.stationarity <= tol.stat
            && self.primal <= tol.feas
            && self.complementarity <= tol.comp
            && self.dual <= 0.0
    }

    fn worst(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.complementarity)
            .max(self.dual)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub status: QpStatus,
    /// Multipliers of `G·x ≥ g` for the objective `‖x‖²`.
    pub duals: DVector<f64>,
    pub kkt: KktResiduals,
    pub iterations: usize,
    /// For infeasible problems: `y ≥ 0` with `Gᵀy ≈ 0` and `gᵀy = 1`.
    pub certificate: Option<DVector<f64>>,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

/// Recomputes the KKT residuals of `(x, λ)` from scratch.
pub fn verify_kkt(g: &DMatrix<f64>, rhs: &DVector<f64>, sol: &QpSolution) -> KktResiduals {
    kkt_residuals(g, rhs, &sol.x, &sol.duals)
}

fn kkt_residuals(
    g: &DMatrix<f64>,
    rhs: &DVector<f64>,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
) -> KktResiduals {
    let slack = g * x - rhs;
    let g_inf = rhs.amax();
    let primal = slack.iter().map(|s| (-s).max(0.0)).fold(0.0, f64::max) / (1.0 + g_inf);
    let stat_vec = x * 2.0 - g.transpose() * lambda;
    let stationarity = stat_vec.amax() / (1.0 + x.norm());
    let complementarity = lambda
        .iter()
        .zip(slack.iter())
        .map(|(l, s)| (l * s).abs())
        .fold(0.0, f64::max);
    let dual = lambda.iter().map(|l| (-l).max(0.0)).fold(0.0, f64::max);
    KktResiduals {
        stationarity,
        primal,
        complementarity,
        dual,
    }
}

/// Residual of a Farkas certificate: `max(‖Gᵀy‖∞, |gᵀy − 1|, max(−y)₊)`.
pub fn farkas_residual(g: &DMatrix<f64>, rhs: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let gty = (g.transpose() * y).amax();
    let gy = (rhs.dot(y) - 1.0).abs();
    let neg = y.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max);
    gty.max(gy).max(neg)
}

pub fn solve_min_norm(
    g: &DMatrix<f64>,
    rhs: &DVector<f64>,
    opts: &QpOptions,
) -> Result<QpSolution> {
    let (m, n) = g.shape();
    if m == 0 || n == 0 {
        return Err(Error::Dimension("empty constraint matrix".into()));
    }
    if rhs.len() != m {
        return Err(Error::Dimension(format!(
            "G has {m} rows but g has {}",
            rhs.len()
        )));
    }
    if g.iter().chain(rhs.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Solver("non-finite problem data".into()));
    }
    let max_iters = opts.max_iters.unwrap_or(10 * (m + n));

    // unit-norm rows; zero rows keep scale 1
    let scales: Vec<f64> = (0..m)
        .map(|i| {
            let r = g.row(i).norm();
            if r > 0.0 {
                r
            } else {
                1.0
            }
        })
        .collect();
    let mut e = DMatrix::zeros(n + 1, m);
    for i in 0..m {
        for j in 0..n {
            e[(j, i)] = g[(i, j)] / scales[i];
        }
        e[(n, i)] = rhs[i] / scales[i];
    }
    let mut f = DVector::zeros(n + 1);
    f[n] = 1.0;

    let nn = nnls(&e, &f, max_iters);
    let u = &nn.u;
    let r = &e * u - &f;
    let rnorm2 = r.norm_squared();

    // ‖r‖² = 1/(1 + ‖x*‖²) for feasible problems
    if rnorm2 < 1e-13 {
        let mut y = DVector::from_iterator(m, (0..m).map(|i| u[i] / scales[i]));
        let gy = rhs.dot(&y);
        if gy > 0.0 {
            y /= gy;
        }
        return Ok(QpSolution {
            x: DVector::zeros(n),
            status: QpStatus::Infeasible,
            duals: DVector::zeros(m),
            kkt: KktResiduals {
                stationarity: f64::NAN,
                primal: f64::NAN,
                complementarity: f64::NAN,
                dual: f64::NAN,
            },
            iterations: nn.iterations,
            certificate: Some(y),
        });
    }

    let denom = -r[n];
    let x_raw = DVector::from_iterator(n, (0..n).map(|j| -r[j] / r[n]));
    let lam_raw = DVector::from_iterator(m, (0..m).map(|i| 2.0 * u[i] / (denom * scales[i])));
    let kkt_raw = kkt_residuals(g, rhs, &x_raw, &lam_raw);

    let active: Vec<usize> = (0..m).filter(|&i| u[i] > 0.0).collect();
    let (x, duals, kkt) = match polish(g, rhs, &active) {
        Some((xp, lp)) => {
            let kp = kkt_residuals(g, rhs, &xp, &lp);
            if kp.worst() <= kkt_raw.worst() {
                (xp, lp, kp)
            } else {
                (x_raw, lam_raw, kkt_raw)
            }
        }
        None => (x_raw, lam_raw, kkt_raw),
    };

    let status = if nn.converged && kkt.passes(&opts.tol) {
        QpStatus::Optimal
    } else {
        QpStatus::MaxIterations
    };
    Ok(QpSolution {
        x,
        status,
        duals,
        kkt,
        iterations: nn.iterations,
        certificate: None,
    })
}

/// Exact projection onto `{x : G_A x = g_A}` and the matching multipliers.
fn polish(
    g: &DMatrix<f64>,
    rhs: &DVector<f64>,
    active: &[usize],
) -> Option<(DVector<f64>, DVector<f64>)> {
    let (m, n) = g.shape();
    if active.is_empty() {
        return Some((DVector::zeros(n), DVector::zeros(m)));
    }
    let k = active.len();
    let mut ga = DMatrix::zeros(k, n);
    let mut ba = DVector::zeros(k);
    for (r, &i) in active.iter().enumerate() {
        ga.set_row(r, &g.row(i));
        ba[r] = rhs[i];
    }
    // x = G_Aᵀ μ with G_A G_Aᵀ μ = g_A, λ_A = 2μ
    let gram = &ga * ga.transpose();
    let mu = gram.clone().cholesky()?.solve(&ba);
    let x = ga.transpose() * &mu;
    let mut lambda = DVector::zeros(m);
    for (r, &i) in active.iter().enumerate() {
        lambda[i] = (2.0 * mu[r]).max(0.0);
    }
    if mu.iter().any(|v| *v < -1e-12 * (1.0 + mu.amax())) {
        return None;
    }
    Some((x, lambda))
}

struct NnlsOutput {
    u: DVector<f64>,
    iterations: usize,
    converged: bool,
}

/// Lawson-Hanson active-set NNLS: `minimize ‖E·u − f‖ subject to u ≥ 0`.
fn nnls(e: &DMatrix<f64>, f: &DVector<f64>, max_iters: usize) -> NnlsOutput {
    let m = e.ncols();
    let mut u = DVector::zeros(m);
    let mut passive = vec![false; m];
    let mut iterations = 0;
    let enorm = e.amax().max(1.0);
    let tol = 1e-14 * enorm * enorm * (e.nrows().max(m) as f64);

    loop {
        let resid = f - e * &u;
        let w = e.transpose() * resid;
        // candidates ordered by gradient; skip ones that immediately fail
        let mut order: Vec<usize> = (0..m).filter(|&j| !passive[j] && w[j] > tol).collect();
        if order.is_empty() {
            return NnlsOutput {
                u,
                iterations,
                converged: true,
            };
        }
        order.sort_by(|&a, &b| w[b].partial_cmp(&w[a]).unwrap().then(a.cmp(&b)));

        let mut entered = None;
        let mut z = DVector::zeros(m);
        for &t in &order {
            passive[t] = true;
            if let Some(zt) = ls_on_passive(e, f, &passive) {
                if zt[t] > 0.0 {
                    z = zt;
                    entered = Some(t);
                    break;
                }
            }
            passive[t] = false;
        }
        if entered.is_none() {
            return NnlsOutput {
                u,
                iterations,
                converged: true,
            };
        }

        loop {
            iterations += 1;
            if iterations > max_iters {
                return NnlsOutput {
                    u,
                    iterations,
                    converged: false,
                };
            }
            if (0..m).all(|j| !passive[j] || z[j] > 0.0) {
                u = z;
                break;
            }
            let mut alpha = f64::INFINITY;
            for j in 0..m {
                if passive[j] && z[j] <= 0.0 {
                    let a = u[j] / (u[j] - z[j]);
                    alpha = alpha.min(a);
                }
            }
            u += (&z - &u) * alpha;
            for j in 0..m {
                if passive[j] && u[j] <= 1e-15 * (1.0 + u.amax()) {
                    passive[j] = false;
                    u[j] = 0.0;
                }
            }
            // a subset of independent columns stays independent
            match ls_on_passive(e, f, &passive) {
                Some(zn) => z = zn,
                None => {
                    return NnlsOutput {
                        u,
                        iterations,
                        converged: false,
                    }
                }
            }
        }
    }
}

/// Least squares on the passive columns by Householder QR. `None` when the
/// selected columns are numerically dependent.
fn ls_on_passive(e: &DMatrix<f64>, f: &DVector<f64>, passive: &[bool]) -> Option<DVector<f64>> {
    let idx: Vec<usize> = (0..passive.len()).filter(|&j| passive[j]).collect();
    let mut z = DVector::zeros(passive.len());
    if idx.is_empty() {
        return Some(z);
    }
    if idx.len() > e.nrows() {
        return None;
    }
    let qr = e.select_columns(&idx).qr();
    let r = qr.r();
    let rmax = r.diagonal().amax();
    if !(rmax > 0.0) || r.diagonal().iter().any(|d| d.abs() <= 1e-12 * rmax) {
        return None;
    }
    let qtf = qr.q().transpose() * f;
    let sol = r.solve_upper_triangular(&qtf)?;
    for (k, &j) in idx.iter().enumerate() {
        z[j] = sol[k];
    }
    Some(z)
}
