//! Fixtures shared by the benchmarks: the four-parameter toy space and
//! square-solved toy surrogates on the column grid.

use nalgebra::DMatrix;

use apcjust_core::runner::toy::column_grid;
use apcjust_core::{
    initial_collocation, solve_coefficients, CandidateModel, MultivariateBasis, ObservationSet, ParameterSpace,
    Prior1D, Surrogate, ToyModel,
};

pub fn toy_space() -> ParameterSpace {
    ParameterSpace::new(vec![
        ("c_a1".into(), Prior1D::uniform(1e-10, 1e-7).unwrap()),
        ("c_a2".into(), Prior1D::uniform(1e-10, 1e-6).unwrap()),
        ("rho_f".into(), Prior1D::uniform(1.0, 15.0).unwrap()),
        ("k_ub".into(), Prior1D::uniform(1e-5, 5e-4).unwrap()),
    ])
    .unwrap()
}

pub fn toy_surrogate(model: ToyModel, degree: usize) -> Surrogate {
    let space = toy_space();
    let grid = column_grid();
    let basis = MultivariateBasis::new(&space, degree).unwrap();
    let set = initial_collocation(&basis, &space, basis.len()).unwrap();
    let cols: Vec<Vec<f64>> = set
        .points()
        .iter()
        .map(|p| {
            let consumed = if model == ToyModel::InitialBiofilm {
                &p[2..]
            } else {
                &p[..]
            };
            model.evaluate(consumed, &grid).unwrap()
        })
        .collect();
    let outputs = DMatrix::from_fn(grid.len(), cols.len(), |r, c| cols[c][r]);
    solve_coefficients(&basis, &set, &outputs).unwrap()
}

/// FC at its nominal parameters with 20 % relative error.
pub fn toy_observations() -> ObservationSet {
    let grid = column_grid();
    let values = ToyModel::FullComplexity
        .evaluate(&[5e-8, 5e-7, 8.0, 2.55e-4], &grid)
        .unwrap();
    ObservationSet::with_relative_error(grid, values, 0.2).unwrap()
}

pub fn toy_candidates() -> Vec<CandidateModel> {
    let n = column_grid().len();
    [
        ("FC", ToyModel::FullComplexity),
        ("IB", ToyModel::InitialBiofilm),
        ("SC", ToyModel::SimpleChemistry),
    ]
    .into_iter()
    .map(|(id, m)| CandidateModel::new(id, toy_surrogate(m, 2), vec![1e-3; n]).unwrap())
    .collect()
}
