use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sosexit_sdp::sdpa::{read_sdpa, write_sdpa};
use sosexit_sdp::{residuals, solve, ConicProgram, EqualityRow, LmiBlock, Sense, SolverSettings, Status};

fn two_by_two() -> ConicProgram {
    // minimize x  s.t. [[x, 1], [1, x]] >= 0
    let mut p = ConicProgram::new(1, Sense::Min);
    p.objective = vec![1.0];
    let mut b = LmiBlock::new(2, "[[x,1],[1,x]]");
    b.add_constant(0, 1, 1.0);
    b.add_term(0, 0, 0, 1.0);
    b.add_term(0, 1, 1, 1.0);
    p.blocks.push(b);
    p
}

fn lp_bound() -> ConicProgram {
    // minimize x  s.t. x - 3 >= 0
    let mut p = ConicProgram::new(1, Sense::Min);
    p.objective = vec![1.0];
    let mut b = LmiBlock::new(1, "x >= 3");
    b.add_constant(0, 0, -3.0);
    b.add_term(0, 0, 0, 1.0);
    p.blocks.push(b);
    p
}

fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    (&a + a.transpose()) * 0.5
}

/// Builds an LMI problem around a chosen strictly complementary pair
/// `F(y*) = S*`, `Z*` with `S* Z* = 0`, so the optimum is known in advance.
fn planted(seed: u64) -> (ConicProgram, Vec<f64>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 3;
    let m = 3;
    let q = random_symmetric(&mut rng, n).symmetric_eigen().eigenvectors;
    let s_diag = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
        rng.random_range(0.5..2.0),
        rng.random_range(0.5..2.0),
        0.0,
    ]));
    let z_diag = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
        0.0,
        0.0,
        rng.random_range(0.5..2.0),
    ]));
    let s_star = &q * s_diag * q.transpose();
    let z_star = &q * z_diag * q.transpose();
    let y_star: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let fs: Vec<DMatrix<f64>> = (0..m).map(|_| random_symmetric(&mut rng, n)).collect();
    let mut f0 = s_star.clone();
    for (k, f) in fs.iter().enumerate() {
        f0 -= f * y_star[k];
    }
    let mut p = ConicProgram::new(m, Sense::Min);
    p.objective = fs.iter().map(|f| f.component_mul(&z_star).sum()).collect();
    let mut block = LmiBlock::new(n, "planted");
    for i in 0..n {
        for j in i..n {
            block.add_constant(i, j, f0[(i, j)]);
            for (k, f) in fs.iter().enumerate() {
                block.add_term(k, i, j, f[(i, j)]);
            }
        }
    }
    p.blocks.push(block);
    let opt = p.objective_value(&y_star);
    (p, y_star, opt)
}

#[test]
fn two_by_two_block() {
    let sol = solve(&two_by_two(), &SolverSettings::default());
    assert_eq!(sol.status, Status::Optimal);
    assert!((sol.x[0] - 1.0).abs() < 1e-7, "x = {}", sol.x[0]);
    assert!((sol.primal_objective - 1.0).abs() < 1e-7);
    let r = residuals(&two_by_two(), &sol);
    assert!(r.primal <= 1e-8 && r.dual <= 1e-8 && r.gap <= 1e-8, "{r:?}");
}

#[test]
fn scalar_lp() {
    let sol = solve(&lp_bound(), &SolverSettings::default());
    assert_eq!(sol.status, Status::Optimal);
    assert!((sol.x[0] - 3.0).abs() < 1e-7);
}

#[test]
fn planted_optimum_recovered() {
    for seed in 0..5 {
        let (p, y_star, opt) = planted(seed);
        let sol = solve(&p, &SolverSettings::default());
        assert_eq!(sol.status, Status::Optimal, "seed {seed}");
        assert!(
            (sol.primal_objective - opt).abs() < 1e-7,
            "seed {seed}: {} vs {opt}",
            sol.primal_objective
        );
        // the optimal point itself can be ill conditioned; feasibility is what matters
        let slack = p.blocks[0].evaluate(&sol.x).symmetric_eigenvalues().min();
        assert!(slack >= -1e-7, "seed {seed}: slack {slack}");
        assert_eq!(sol.x.len(), y_star.len());
    }
}

#[test]
fn maximization_and_equalities() {
    // maximize x1 + x2  s.t. x1 + 2 x2 = 2, [[1, x1], [x1, 1]] >= 0, x2 >= 0
    let mut p = ConicProgram::new(2, Sense::Max);
    p.objective = vec![1.0, 1.0];
    p.equalities.push(EqualityRow {
        coeffs: vec![(0, 1.0), (1, 2.0)],
        rhs: 2.0,
    });
    let mut b = LmiBlock::new(2, "disk");
    b.add_constant(0, 0, 1.0);
    b.add_constant(1, 1, 1.0);
    b.add_term(0, 0, 1, 1.0);
    p.blocks.push(b);
    let mut nn = LmiBlock::new(1, "x2 >= 0");
    nn.add_term(1, 0, 0, 1.0);
    p.blocks.push(nn);
    let sol = solve(&p, &SolverSettings::default());
    assert_eq!(sol.status, Status::Optimal);
    // |x1| <= 1, x2 = (2 - x1)/2, objective x1/2 + 1 -> optimum at x1 = 1
    assert!((sol.primal_objective - 1.5).abs() < 1e-7);
    assert!(sol.dual_objective >= sol.primal_objective - 1e-8);
}

#[test]
fn detects_infeasible_and_unbounded() {
    // x >= 3 and -x - 1 >= 0
    let mut p = lp_bound();
    let mut b = LmiBlock::new(1, "x <= -1");
    b.add_constant(0, 0, -1.0);
    b.add_term(0, 0, 0, -1.0);
    p.blocks.push(b);
    assert_eq!(solve(&p, &SolverSettings::default()).status, Status::Infeasible);

    // minimize -x s.t. x >= 3
    let mut q = lp_bound();
    q.objective = vec![-1.0];
    assert_eq!(solve(&q, &SolverSettings::default()).status, Status::Unbounded);
}

#[test]
fn weak_duality_and_dual_psd() {
    for seed in 10..15 {
        let (p, _, _) = planted(seed);
        let settings = SolverSettings::default();
        let sol = solve(&p, &settings);
        assert!(sol.primal_objective >= sol.dual_objective - 1e-10 * (1.0 + sol.primal_objective.abs()));
        for z in &sol.block_duals {
            let min = z.clone().symmetric_eigenvalues().min();
            assert!(min >= -settings.feas_tol);
        }
    }
}

#[test]
fn deterministic() {
    let (p, _, _) = planted(3);
    let a = solve(&p, &SolverSettings::default());
    let b = solve(&p, &SolverSettings::default());
    assert_eq!(a.status, b.status);
    assert_eq!(a.primal_objective.to_bits(), b.primal_objective.to_bits());
    assert_eq!(a.x, b.x);
}

#[test]
fn gap_grows_linearly_with_perturbation() {
    let p = two_by_two();
    let mut sol = solve(&p, &SolverSettings::default());
    let base = residuals(&p, &sol).gap;
    sol.x[0] += 1e-3;
    let g1 = residuals(&p, &sol).gap - base;
    sol.x[0] += 1e-3;
    let g2 = residuals(&p, &sol).gap - base;
    assert!((g2 / g1 - 2.0).abs() < 1e-3, "{g1} {g2}");
}

#[test]
fn sdpa_round_trip_resolves_to_same_value() {
    let (mut p, y_star, opt) = planted(7);
    // an equality that the planted optimum satisfies
    p.equalities.push(EqualityRow {
        coeffs: vec![(0, 1.0), (2, 0.5)],
        rhs: y_star[0] + 0.5 * y_star[2],
    });
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("planted.dat-s");
    write_sdpa(&p, std::fs::File::create(&path).unwrap()).unwrap();
    let q = read_sdpa(std::io::BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
    assert_eq!(q.equalities.len(), 1);
    let sol = solve(&q, &SolverSettings::default());
    assert!(sol.status.is_usable());
    assert!((sol.primal_objective - opt).abs() < 1e-6);
}


#[test]
fn bundled_examples_reach_known_optima() {
    for ex in sosexit_sdp::examples::all() {
        let sol = solve(&ex.program, &SolverSettings::default());
        assert_eq!(sol.status, Status::Optimal, "{}", ex.name);
        assert!((sol.primal_objective - ex.optimum).abs() <= 1e-7, "{}: {} vs {}", ex.name, sol.primal_objective, ex.optimum);
        if let Some(y) = &ex.argmin {
            assert!(sosexit_sdp::examples::min_slack_eigenvalue(&ex.program, y) > -1e-12, "{}", ex.name);
            for (a, b) in sol.x.iter().zip(y) {
                assert!((a - b).abs() < 1e-6, "{}: {a} vs {b}", ex.name);
            }
        }
    }
}
