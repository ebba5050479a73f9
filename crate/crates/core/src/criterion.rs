//! `L(τ₁, τ₂)`, the block matrices `K_r` and the positive-definiteness test.
//!
//! `K_r = [L(τᵢ, τⱼ)]` at `τᵢ = ih/r`. The system is exponentially stable iff
//! `K_r ≻ 0` for every `r ≥ 2`; a negative eigenvalue at any `r` certifies
//! instability. Only finitely many `r` can be tried, so a run that never sees
//! a negative eigenvalue ends in [`Outcome::ConsistentWithStability`], which
//! is evidence, not a proof.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functional::{build_special, QKernel};
use crate::grid::GridFunction;
use crate::kernel::KernelSpec;
use crate::lyapunov::LyapunovTable;

/// `U(0) − U(−τ₁) − U(τ₂) + U(τ₂ − τ₁)`.
pub fn l_matrix(table: &LyapunovTable, tau1: f64, tau2: f64) -> Result<DMatrix<f64>> {
    let h = table.h();
    for t in [tau1, tau2] {
        if !(t > 0.0 && t <= h * (1.0 + 1e-12)) {
            return Err(Error::OutOfRange { arg: t, lo: 0.0, hi: h });
        }
    }
    Ok(table.node(0) - table.u_eval(-tau1)? - table.u_eval(tau2)? + table.u_eval(tau2 - tau1)?)
}

#[derive(Debug, Clone)]
pub struct KrMatrix {
    pub r: usize,
    pub taus: Vec<f64>,
    /// `(M + Mᵀ)/2`
    pub matrix: DMatrix<f64>,
    /// `‖M − Mᵀ‖_F / 2`
    pub asymmetry: f64,
}

pub fn kr_matrix(table: &LyapunovTable, r: usize) -> Result<KrMatrix> {
    if r < 2 {
        return Err(Error::InvalidArgument(format!("r must be at least 2, got {r}")));
    }
    let n = table.n();
    let h = table.h();
    let taus: Vec<f64> = (1..=r).map(|i| i as f64 * h / r as f64).collect();
    let mut m = DMatrix::zeros(n * r, n * r);
    for (i, &ti) in taus.iter().enumerate() {
        for (j, &tj) in taus.iter().enumerate() {
            m.view_mut((i * n, j * n), (n, n)).copy_from(&l_matrix(table, ti, tj)?);
        }
    }
    let asymmetry = (&m - m.transpose()).norm() * 0.5;
    let matrix = (&m + m.transpose()) * 0.5;
    Ok(KrMatrix { r, taus, matrix, asymmetry })
}

/// Dead-band factors; the band at `r` is `factor · ‖K_r‖_F`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub pos: f64,
    pub neg: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { pos: 1e-7, neg: 1e-7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RRecord {
    pub r: usize,
    pub min_eigenvalue: f64,
    pub asymmetry: f64,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    ConsistentWithStability { r_max: usize },
    CertifiedUnstable { r: usize, eigenvalue: f64, witness: Vec<f64> },
    Inconclusive { reason: String },
}

impl Outcome {
    /// Short label used in tables: `stable`, `unstable`, `inconclusive`.
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::ConsistentWithStability { .. } => "stable",
            Outcome::CertifiedUnstable { .. } => "unstable",
            Outcome::Inconclusive { .. } => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityVerdict {
    pub records: Vec<RRecord>,
    pub outcome: Outcome,
}

impl StabilityVerdict {
    pub fn min_eigenvalue(&self, r: usize) -> Option<f64> {
        self.records.iter().find(|x| x.r == r).map(|x| x.min_eigenvalue)
    }
}

fn check_schedule(schedule: &[usize]) -> Result<()> {
    if schedule.is_empty() || schedule[0] < 2 || schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(format!(
            "r schedule must be nonempty, strictly increasing and start at 2 or more: {schedule:?}"
        )));
    }
    Ok(())
}

/// Runs `r` through `schedule`, stopping at the first certified negative
/// eigenvalue.
pub fn stability_test(table: &LyapunovTable, schedule: &[usize], tol: Tolerances) -> Result<StabilityVerdict> {
    check_schedule(schedule)?;
    let mut records = Vec::new();
    let mut undecided = None;
    for &r in schedule {
        let kr = kr_matrix(table, r)?;
        let norm = kr.matrix.norm();
        if !kr.matrix.iter().all(|v| v.is_finite()) {
            return Ok(StabilityVerdict {
                records,
                outcome: Outcome::Inconclusive { reason: format!("non-finite K_{r}") },
            });
        }
        let eig = SymmetricEigen::new(kr.matrix.clone());
        let (imin, &lmin) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty");
        records.push(RRecord { r, min_eigenvalue: lmin, asymmetry: kr.asymmetry, norm });
        if lmin < -tol.neg * norm {
            let v = eig.eigenvectors.column(imin);
            // fix the sign so output is reproducible
            let s = v.iter().cloned().find(|x| x.abs() > 1e-12).map_or(1.0, f64::signum);
            let witness = v.iter().map(|x| x * s).collect();
            return Ok(StabilityVerdict {
                records,
                outcome: Outcome::CertifiedUnstable { r, eigenvalue: lmin, witness },
            });
        }
        if lmin <= tol.pos * norm && undecided.is_none() {
            undecided = Some(format!("min eigenvalue {lmin:.3e} of K_{r} inside the dead band"));
        }
    }
    let outcome = match undecided {
        Some(reason) => Outcome::Inconclusive { reason },
        None => Outcome::ConsistentWithStability { r_max: *schedule.last().unwrap() },
    };
    Ok(StabilityVerdict { records, outcome })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WitnessReport {
    pub r: usize,
    pub taus: Vec<f64>,
    pub gamma: Vec<f64>,
    /// `γᵀ K_r γ`
    pub quadratic: f64,
    /// `v₁(ψ)` by quadrature
    pub quadrature: f64,
    pub relative_gap: f64,
}

/// Builds `ψ` from the witness of a certified verdict and evaluates `v₁(ψ)`
/// by quadrature. `k` is `K` with a step dividing `Δ_U`; every `τᵢ` must lie
/// on the `Δ_U` grid.
pub fn instability_witness(
    table: &LyapunovTable,
    kernel: &KernelSpec,
    k: &GridFunction,
    verdict: &StabilityVerdict,
) -> Result<WitnessReport> {
    let Outcome::CertifiedUnstable { r, witness, .. } = &verdict.outcome else {
        return Err(Error::InvalidArgument("verdict carries no witness".into()));
    };
    let q = QKernel::new(table, kernel)?;
    let kr = kr_matrix(table, *r)?;
    witness_for(table, &q, k, &kr, &DVector::from_column_slice(witness))
}

/// `γᵀ K_r γ` against `v₁(ψ)` for an arbitrary `γ`.
pub fn witness_for(
    table: &LyapunovTable,
    q: &QKernel,
    k: &GridFunction,
    kr: &KrMatrix,
    gamma: &DVector<f64>,
) -> Result<WitnessReport> {
    let n = table.n();
    if gamma.len() != n * kr.r {
        return Err(Error::InvalidArgument(format!("γ must have length {}", n * kr.r)));
    }
    let gammas = (0..kr.r).map(|i| gamma.rows(i * n, n).into_owned()).collect();
    let psi = build_special(k, table.h(), kr.taus.clone(), gammas)?.sample(table.segments())?;
    let quadrature = q.v1(&psi)?;
    let quadratic = (gamma.transpose() * &kr.matrix * gamma)[(0, 0)];
    Ok(WitnessReport {
        r: kr.r,
        taus: kr.taus.clone(),
        gamma: gamma.iter().cloned().collect(),
        quadratic,
        quadrature,
        relative_gap: (quadratic - quadrature).abs() / quadratic.abs().max(f64::MIN_POSITIVE),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lyapunov::lyapunov_collocate;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;

    fn table(c: f64, segments: usize) -> LyapunovTable {
        let kernel = KernelSpec::constant(1.0, dmatrix![c]).unwrap();
        let consts = kernel.derive_constants(&DMatrix::identity(1, 1)).unwrap();
        lyapunov_collocate(&kernel, &consts, segments).unwrap()
    }

    #[test]
    fn zero_kernel_gives_min_gram() {
        let t = table(0.0, 20);
        assert_abs_diff_eq!(l_matrix(&t, 0.3, 0.7).unwrap()[(0, 0)], 0.3, epsilon = 1e-12);
        let k2 = kr_matrix(&t, 2).unwrap();
        assert_abs_diff_eq!(k2.matrix, dmatrix![0.5, 0.5; 0.5, 1.0], epsilon = 1e-12);
        let v = stability_test(&t, &[2, 3, 4, 5, 6], Tolerances::default()).unwrap();
        assert_eq!(v.outcome, Outcome::ConsistentWithStability { r_max: 6 });
        assert_eq!(v.records.len(), 5);
    }

    #[test]
    fn l_is_transpose_symmetric() {
        let t = table(0.5, 100);
        for i in 1..=5 {
            for j in 1..=5 {
                let (a, b) = (i as f64 / 5.0, j as f64 / 5.0);
                let d = l_matrix(&t, a, b).unwrap() - l_matrix(&t, b, a).unwrap().transpose();
                assert!(d.amax() < 1e-6);
            }
        }
    }

    #[test]
    fn unstable_scalar_latches() {
        let t = table(1.5, 60);
        let v = stability_test(&t, &[2, 3, 4, 5, 6], Tolerances::default()).unwrap();
        let Outcome::CertifiedUnstable { r, eigenvalue, witness } = &v.outcome else {
            panic!("{:?}", v.outcome)
        };
        assert!(*eigenvalue < 0.0 && witness.len() == *r);
        assert_eq!(v.records.last().unwrap().r, *r);
    }

    #[test]
    fn bad_schedules_are_rejected() {
        let t = table(0.0, 10);
        for s in [&[][..], &[1, 2], &[3, 2]] {
            assert!(stability_test(&t, s, Tolerances::default()).is_err());
        }
    }
}
