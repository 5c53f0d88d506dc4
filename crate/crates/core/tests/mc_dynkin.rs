use sosexit::mc::{empirical_moments, simulate, McSettings};
use sosexit::model::{Domain, ExitProblem, InitialLaw, SdeModel, SemialgebraicPiece};
use sosexit::poly::Polynomial;
use sosexit::relaxation::{assemble, dynkin_rows, truncation_degrees};
use sosexit_sdp::Sense;

fn p(s: &str) -> Polynomial {
    Polynomial::parse(s, 1).unwrap()
}

fn scalar() -> ExitProblem {
    let sde = SdeModel::new(vec![p("1 + 2*x1")], vec![vec![p("1.4142135623730951*x1")]]).unwrap();
    let interior = SemialgebraicPiece::new("interior", vec![p("x1*(1-x1)"), p("1 - x1^2")], vec![]).unwrap();
    let ends = SemialgebraicPiece::new("ends", vec![], vec![p("x1*(1-x1)")]).unwrap();
    ExitProblem::new(sde, Domain::new(interior, vec![ends]), p("x1^2"), InitialLaw::Dirac(vec![0.5])).unwrap()
}

#[test]
fn empirical_moments_satisfy_dynkin_rows() {
    let problem = scalar();
    let r = 4;
    let relax = assemble(&problem, r, Sense::Min).unwrap();
    let rows = dynkin_rows(&problem, &relax.indexing, r).unwrap();
    let t = truncation_degrees(&problem, r).unwrap();
    let settings = McSettings {
        step: 1e-3,
        paths: 20_000,
        seed: 42,
        ..McSettings::default()
    };
    let mom = empirical_moments(&problem, &settings, t.t_mu.max(t.t_nu)).unwrap();
    for (k, row) in rows.iter().enumerate() {
        let res = mom.row_residual(row, &relax.indexing).unwrap();
        assert!(
            res.mean.abs() <= 5.0 * res.std_error + 1e-12,
            "row {k}: residual {} with standard error {}",
            res.mean,
            res.std_error
        );
    }
}

#[test]
fn moments_agree_with_plain_simulation() {
    let problem = scalar();
    let settings = McSettings {
        step: 1e-3,
        paths: 3000,
        seed: 9,
        ..McSettings::default()
    };
    let est = simulate(&problem, &settings).unwrap();
    let mom = empirical_moments(&problem, &settings, 2).unwrap();
    assert_eq!(est.mean.to_bits(), mom.estimate.mean.to_bits());
    assert_eq!(est.exit_time_mean.to_bits(), mom.estimate.exit_time_mean.to_bits());
}
