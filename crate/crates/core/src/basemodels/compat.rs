use std::any::Any;

use serde::{Deserialize, Serialize};

use super::{check_job, Architecture, BaseLearner, Checkpoint, CheckpointHeader, FitJob, ZslModel};
use crate::datamodel::{ClassId, SemanticTable};
use crate::error::{Error, Result};
use crate::numeric::prob::softmax_in_place;
use crate::numeric::ridge::regularized_gram;
use crate::numeric::{dot, Cholesky, Matrix, ProbVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompatConfig {
    /// Penalty on the feature side.
    pub lambda_x: f64,
    /// Penalty on the attribute side.
    pub lambda_s: f64,
    /// Multiplier applied to compatibility scores before the softmax.
    pub score_scale: f64,
}

impl Default for CompatConfig {
    fn default() -> Self {
        Self {
            lambda_x: 1.0,
            lambda_s: 1.0,
            score_scale: 1.0,
        }
    }
}

impl CompatConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_x >= 0.0) || !(self.lambda_s >= 0.0) || !(self.score_scale > 0.0) {
            return Err(Error::Config(
                "compat: lambda_x and lambda_s must be >= 0, score_scale > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Solves `(XᵀX + λx I) V (EᵀE + λs I) = Xᵀ Y E` for the d×q map `V`.
pub fn fit_compat(
    x: &Matrix,
    labels: &[ClassId],
    semantics: &SemanticTable,
    lambda_x: f64,
    lambda_s: f64,
) -> Result<Matrix> {
    let mut classes = labels.to_vec();
    classes.sort();
    classes.dedup();
    let e = semantics.select(&classes)?;
    // Y E just picks each row's attribute vector
    let mut ye = Matrix::zeros(labels.len(), e.cols());
    for (r, c) in labels.iter().enumerate() {
        ye.row_mut(r)
            .copy_from_slice(semantics.get(*c).expect("covered"));
    }
    let rhs = x.t_matmul(&ye);
    let left = Cholesky::factor(&regularized_gram(x, lambda_x))?.solve(&rhs);
    let right = Cholesky::factor(&regularized_gram(&e, lambda_s))?;
    Ok(right.solve(&left.transpose()).transpose())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompatModel {
    pub(crate) v: Matrix,
    pub(crate) semantics: SemanticTable,
    pub(crate) score_scale: f64,
    pub(crate) seed: u64,
}

impl CompatModel {
    pub fn map(&self) -> &Matrix {
        &self.v
    }
}

impl BaseLearner for CompatConfig {
    fn arch(&self) -> Architecture {
        Architecture::Compat
    }

    fn fit(&self, job: FitJob<'_>) -> Result<Box<dyn ZslModel>> {
        self.validate()?;
        check_job(&job)?;
        let v = fit_compat(
            job.data.features(),
            job.data.labels(),
            job.semantics,
            self.lambda_x,
            self.lambda_s,
        )?;
        Ok(Box::new(CompatModel {
            v,
            semantics: job.semantics.clone(),
            score_scale: self.score_scale,
            seed: job.seed,
        }))
    }
}

impl ZslModel for CompatModel {
    fn arch(&self) -> Architecture {
        Architecture::Compat
    }

    fn predict_proba(&self, x: &Matrix, classes: &[ClassId]) -> Result<Vec<ProbVector>> {
        if x.cols() != self.v.rows() {
            return Err(Error::Shape(format!(
                "model expects {} features, got {}",
                self.v.rows(),
                x.cols()
            )));
        }
        let e = self.semantics.select(classes)?;
        let proj = x.matmul(&self.v);
        Ok(proj
            .row_iter()
            .map(|p| {
                let mut s: Vec<f64> = e.row_iter().map(|a| self.score_scale * dot(p, a)).collect();
                softmax_in_place(&mut s);
                ProbVector::from_normalized(s)
            })
            .collect())
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader {
                arch: Architecture::Compat,
                seed: self.seed,
                shapes: vec![self.v.shape(), self.semantics.matrix().shape()],
                hyperparameters: serde_json::json!({ "score_scale": self.score_scale }),
            },
            tensors: vec![self.v.clone(), self.semantics.matrix().clone()],
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dense Gaussian elimination with partial pivoting.
    fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for c in 0..n {
            let p = (c..n)
                .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
                .unwrap();
            a.swap(c, p);
            b.swap(c, p);
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        x
    }

    #[test]
    fn matches_a_kronecker_normal_equation_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (n, d, q) = (12, 4, 3);
        let x = Matrix::from_vec(
            n,
            d,
            (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let sem = SemanticTable::new(
            Matrix::from_vec(3, q, (0..9).map(|_| rng.random::<f64>()).collect()).unwrap(),
        )
        .unwrap();
        let labels: Vec<ClassId> = (0..n).map(|i| ClassId((i % 3) as u32)).collect();
        let (lx, ls) = (0.7, 0.3);
        let v = fit_compat(&x, &labels, &sem, lx, ls).unwrap();

        // vec(A V B) = (Bᵀ ⊗ A) vec(V), column-major vec
        let a = regularized_gram(&x, lx);
        let b = regularized_gram(sem.matrix(), ls);
        let mut ye = Matrix::zeros(n, q);
        for (r, c) in labels.iter().enumerate() {
            ye.row_mut(r).copy_from_slice(sem.get(*c).unwrap());
        }
        let rhs = x.t_matmul(&ye);
        let mut kron = vec![vec![0.0; d * q]; d * q];
        for j in 0..q {
            for l in 0..q {
                for i in 0..d {
                    for k in 0..d {
                        kron[j * d + i][l * d + k] = b.get(l, j) * a.get(i, k);
                    }
                }
            }
        }
        let vec_rhs: Vec<f64> = (0..q)
            .flat_map(|j| (0..d).map(move |i| (i, j)))
            .map(|(i, j)| rhs.get(i, j))
            .collect();
        let oracle = gauss_solve(kron, vec_rhs);
        for j in 0..q {
            for i in 0..d {
                assert!((v.get(i, j) - oracle[j * d + i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn separable_classes_score_highest_on_their_own_attributes() {
        let sem = SemanticTable::new(Matrix::identity(3)).unwrap();
        let x = Matrix::from_rows(&[
            vec![5.0, 0.0, 0.0],
            vec![0.0, 5.0, 0.0],
            vec![0.0, 0.0, 5.0],
        ])
        .unwrap();
        let labels = vec![ClassId(0), ClassId(1), ClassId(2)];
        let model = CompatConfig::default()
            .fit(FitJob::new(
                &LabeledDataset::seen(x.clone(), labels.clone()).unwrap(),
                &sem,
                &labels,
                0,
            ))
            .unwrap();
        let p = model.predict_proba(&x, &labels).unwrap();
        for (i, row) in p.iter().enumerate() {
            assert_eq!(row.argmax(), i);
        }
    }

    #[test]
    fn orthonormal_features_recover_one_hot_scores() {
        let sem = SemanticTable::new(Matrix::identity(4)).unwrap();
        let x = Matrix::identity(4);
        let labels: Vec<ClassId> = (0..4).map(ClassId).collect();
        let v = fit_compat(&x, &labels, &sem, 1e-9, 1e-9).unwrap();
        let scores = x.matmul(&v).matmul_t(sem.matrix());
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((scores.get(i, j) - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn huge_penalty_gives_uniform_predictions() {
        let sem = SemanticTable::new(Matrix::identity(3)).unwrap();
        let x = Matrix::identity(3);
        let labels: Vec<ClassId> = (0..3).map(ClassId).collect();
        let cfg = CompatConfig {
            lambda_x: 1e9,
            lambda_s: 1e9,
            ..Default::default()
        };
        let model = cfg
            .fit(FitJob::new(
                &LabeledDataset::seen(x.clone(), labels.clone()).unwrap(),
                &sem,
                &labels,
                0,
            ))
            .unwrap();
        assert!(
            model
                .as_any()
                .downcast_ref::<CompatModel>()
                .unwrap()
                .map()
                .max_abs()
                < 1e-12
        );
        for p in model.predict_proba(&x, &labels).unwrap() {
            for v in p.as_slice() {
                assert!((v - 1.0 / 3.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_penalty_on_rank_deficient_features_is_singular() {
        let sem = SemanticTable::new(Matrix::identity(2)).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        let labels = vec![ClassId(0), ClassId(1)];
        let err = fit_compat(&x, &labels, &sem, 0.0, 0.0).unwrap_err();
        assert!(matches!(err, Error::Singular(_)));
    }

    use crate::datamodel::LabeledDataset;
}
