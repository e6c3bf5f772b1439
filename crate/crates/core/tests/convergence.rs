use vegpattern::continuation::{continue_branch, seed_point, ContinuationOptions, EventKind, Problem};
use vegpattern::discretization::{FieldState, GridSpec};
use vegpattern::model::{equilibrium, BranchTag};
use vegpattern::stability::turing_locus;
use vegpattern::Params;

/// Turing onsets on the discretized homogeneous branch, in descending `p`.
fn onsets(n: usize) -> Vec<f64> {
    let params = Params::calibrated();
    let opts = ContinuationOptions {
        monitor_stability: false,
        ..Default::default()
    };
    let grid = GridSpec::new(8.0, n).unwrap();
    let problem = Problem::new(grid, &params, opts.variable_scale);
    let u = equilibrium(2.0, BranchTag::Upper, &params).unwrap().unwrap();
    let seed = seed_point(&problem, &FieldState::homogeneous(grid, &u), 2.0, &opts).unwrap();
    let b = continue_branch(&problem, &seed, -1.0, &opts).unwrap();
    b.events
        .iter()
        .filter(|e| e.kind == EventKind::TuringOnset)
        .map(|e| e.p)
        .collect()
}

#[test]
fn turing_onsets_converge_at_second_order() {
    let params = Params::calibrated();
    let exact = [turing_locus(2, 8.0, &params).unwrap(), turing_locus(1, 8.0, &params).unwrap()];
    let runs: Vec<Vec<f64>> = [40, 80, 160].into_iter().map(onsets).collect();
    for (k, exact) in exact.iter().enumerate() {
        let err: Vec<f64> = runs.iter().map(|r| (r[k] - exact).abs()).collect();
        for w in err.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 1.8, "mode {k}: errors {err:?}, order {order}");
        }
    }
}
