//! Independent oracles shared by the integration tests. Everything here is
//! computed with nalgebra directly from the rows, never through the
//! library's solvers.

#![allow(dead_code)]

use fone_core::data::{generate_problem, DesignSpec};
use fone_core::{Dataset, GeneratedProblem, ModelFamily};
use nalgebra::{DMatrix, DVector};

pub fn design_matrix(data: &Dataset) -> DMatrix<f64> {
    DMatrix::from_fn(data.len(), data.dim(), |i, j| data.row(i)[j])
}

/// `Σ̂ = (1/n) Σ x_i x_i'`.
pub fn sample_gram(data: &Dataset) -> DMatrix<f64> {
    let x = design_matrix(data);
    x.transpose() * &x / data.len() as f64
}

/// `Σ̂⁻¹ a` by LU solve.
pub fn gram_solve(data: &Dataset, a: &[f64]) -> Vec<f64> {
    sample_gram(data)
        .lu()
        .solve(&DVector::from_column_slice(a))
        .expect("sample Gram matrix is invertible")
        .as_slice()
        .to_vec()
}

/// Least-squares fit from the normal equations `X'X θ = X'y`.
pub fn normal_equations(data: &Dataset) -> Vec<f64> {
    let x = design_matrix(data);
    let y = DVector::from_column_slice(data.responses());
    (x.transpose() * &x)
        .cholesky()
        .expect("X'X is positive definite")
        .solve(&(x.transpose() * y))
        .as_slice()
        .to_vec()
}

/// `d_t = (I − ηΣ̂) d_{t−1} − ηa` from `d_0 = 0`, every iterate kept.
pub fn richardson_path(data: &Dataset, a: &[f64], eta: f64, steps: usize) -> Vec<Vec<f64>> {
    let p = data.dim();
    let m = DMatrix::<f64>::identity(p, p) - sample_gram(data) * eta;
    let a = DVector::from_column_slice(a);
    let mut d = DVector::zeros(p);
    let mut path = Vec::with_capacity(steps);
    for _ in 0..steps {
        d = &m * &d - &a * eta;
        path.push(d.as_slice().to_vec());
    }
    path
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn l2(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn relative_error(got: &[f64], want: &[f64]) -> f64 {
    let diff: Vec<f64> = got.iter().zip(want).map(|(g, w)| g - w).collect();
    l2(&diff) / l2(want)
}

pub fn problem(family: ModelFamily, n: usize, p: usize, seed: u64) -> GeneratedProblem {
    let tau = (family == ModelFamily::Quantile).then_some(0.25);
    generate_problem(family, &DesignSpec::identity(p).unwrap(), n, tau, seed).unwrap()
}
