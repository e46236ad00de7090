use std::sync::{Arc, OnceLock};

use mongeampere::grid::norm_sq;
use mongeampere::operator::ma_signed;
use mongeampere::verification::{smoothed_max, CheckReport};
use mongeampere::{
    apply_t, balayage_step, build_grid, ma_density, solve_ma_fixed_rhs, solve_mam, subsolution_check, DensityField,
    Domain, Grid, Mode, OuterConfig, Problem, ProblemSpec, RhsFunction, ScalarField, SolverConfig, SubBox,
};
use proptest::prelude::*;

const SLACK: f64 = 2e-10;

fn centered(n: usize, nodes: usize) -> Arc<Grid> {
    Arc::new(Grid::centered(n, nodes).unwrap())
}

fn bump(c: &[f64], center: &[f64], width: f64) -> f64 {
    let d: f64 = c.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d / (2.0 * width * width)).exp()
}

fn cheng_yau(nodes: usize) -> ProblemSpec {
    let g = centered(2, nodes);
    let u_star = ScalarField::from_fn(g.clone(), |c| norm_sq(c) - 1.0);
    ProblemSpec {
        boundary: u_star.clone(),
        rhs: RhsFunction::Exponential {
            kappa: 1.0,
            w: DensityField::from_fn(g.clone(), |c| 32.0 * (1.0 - norm_sq(c)).exp()).unwrap(),
        },
        mu: DensityField::constant(g, 1.0).unwrap(),
        seed: Some(u_star),
        solver: SolverConfig::default(),
        outer: OuterConfig::default(),
        mode: Mode::Theorem,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    // z*Az has complex Hessian A (up to conjugation), so the density is 32 det A exactly
    #[test]
    fn hermitian_quadratics_have_exact_density(
        p in 0.2f64..3.0,
        q in 0.2f64..3.0,
        a in -1.0f64..1.0,
        b in -1.0f64..1.0,
        res in prop::collection::vec(5usize..8, 4),
    ) {
        let lo = vec![-0.4, -0.6, -0.5, -0.3];
        let hi = vec![0.5, 0.4, 0.6, 0.7];
        let grid = Arc::new(build_grid(&Domain::Box { lo, hi }, &res).unwrap());
        let u = ScalarField::from_fn(grid, |c| {
            let (x1, y1, x2, y2) = (c[0], c[1], c[2], c[3]);
            p * (x1 * x1 + y1 * y1) + q * (x2 * x2 + y2 * y2)
                + 2.0 * (a * (x1 * x2 + y1 * y2) - b * (x1 * y2 - y1 * x2))
        });
        let expected = 32.0 * (p * q - a * a - b * b);
        for v in ma_signed(&u) {
            prop_assert!((v - expected).abs() <= 1e-9 * (1.0 + expected.abs()), "{v} vs {expected}");
        }
    }

    // the determinant is homogeneous of degree n in the Hessian
    #[test]
    fn density_scales_with_the_nth_power(
        n in 1usize..=3,
        scale in -3.0f64..3.0,
        seed in prop::collection::vec(-1.0f64..1.0, 6),
    ) {
        let nodes = if n == 3 { 5 } else { 7 };
        let g = centered(n, nodes);
        let u = ScalarField::from_fn(g.clone(), |c| {
            c.iter().zip(&seed).map(|(x, s)| (s * 3.0 * x).sin() + s * x * x).sum::<f64>() + norm_sq(c)
        });
        let cu = ScalarField::new(g.clone(), u.values().iter().map(|v| scale * v).collect()).unwrap();
        let factor = scale.powi(n as i32);
        for (a, b) in ma_signed(&cu).iter().zip(ma_signed(&u)) {
            prop_assert!((a - factor * b).abs() <= 1e-9 * (1.0 + (factor * b).abs()), "{a} vs {}", factor * b);
        }
    }

    #[test]
    fn smoothed_max_lies_between_max_and_max_plus_eps_log2(
        eps in 0.001f64..0.5,
        shift in -1.0f64..1.0,
        k in 0.5f64..3.0,
    ) {
        let g = centered(1, 9);
        let u1 = ScalarField::from_fn(g.clone(), |c| norm_sq(c) - 1.0);
        let u2 = ScalarField::from_fn(g.clone(), |c| k * norm_sq(c) + shift - 1.0);
        let m = smoothed_max(&u1, &u2, eps);
        for i in 0..g.len() {
            let top = u1.get(i).max(u2.get(i));
            prop_assert!(m.get(i) >= top - 1e-15);
            prop_assert!(m.get(i) <= top + eps * std::f64::consts::LN_2 + 1e-15);
        }
    }

    #[test]
    fn check_report_passes_iff_margin_within_tolerance(margin in -2.0f64..2.0, tol in 0.0f64..1.0) {
        let r = CheckReport::new("p", margin, None, tol);
        prop_assert_eq!(r.pass, margin >= -tol);
    }

    // ordered data with shared boundary gives reversed order of solutions
    #[test]
    fn discrete_comparison_in_the_plane(
        base in 1.0f64..20.0,
        amp in 0.0f64..30.0,
        center in prop::collection::vec(-0.4f64..0.4, 2),
        width in 0.05f64..0.4,
    ) {
        let g = centered(1, 17);
        let boundary = ScalarField::from_fn(g.clone(), |c| norm_sq(c) - 1.0 + 0.3 * c[0]);
        let g1 = DensityField::constant(g.clone(), base).unwrap();
        let g2 = DensityField::from_fn(g.clone(), |c| base + amp * bump(c, &center, width)).unwrap();
        let cfg = SolverConfig::default();
        let u1 = solve_ma_fixed_rhs(&g1, &boundary, &cfg).unwrap().u;
        let u2 = solve_ma_fixed_rhs(&g2, &boundary, &cfg).unwrap().u;
        prop_assert!(u2.excess_over(&u1) <= SLACK, "{}", u2.excess_over(&u1));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn discrete_comparison_and_residual_contract_n2(
        base in 2.0f64..40.0,
        amp in 0.0f64..30.0,
        center in prop::collection::vec(-0.3f64..0.3, 4),
        width in 0.1f64..0.4,
    ) {
        let g = centered(2, 7);
        let boundary = ScalarField::from_fn(g.clone(), |c| norm_sq(c) - 1.0);
        let g1 = DensityField::constant(g.clone(), base).unwrap();
        let g2 = DensityField::from_fn(g.clone(), |c| base + amp * bump(c, &center, width)).unwrap();
        let cfg = SolverConfig::default();
        let s1 = solve_ma_fixed_rhs(&g1, &boundary, &cfg).unwrap();
        let s2 = solve_ma_fixed_rhs(&g2, &boundary, &cfg).unwrap();
        prop_assert!(s2.u.excess_over(&s1.u) <= SLACK);
        // residual re-verified through the public operator
        for (s, target) in [(&s1, &g1), (&s2, &g2)] {
            let res = ma_signed(&s.u)
                .iter()
                .zip(target.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            prop_assert!(res < cfg.tol_inner, "residual {res:e}");
            prop_assert!(ma_density(&s.u).psh_defect <= cfg.psd_guard);
        }
    }

    // T reverses order: u <= u* gives T(u) >= T(u*) = u*
    #[test]
    fn t_is_order_reversing(
        depth in 0.0f64..0.5,
        center in prop::collection::vec(-0.3f64..0.3, 4),
        width in 0.1f64..0.4,
    ) {
        let p = Problem::prepare(cheng_yau(7)).unwrap();
        let u_star = p.spec().boundary.clone();
        let interior = ScalarField::from_fn(p.grid().clone(), |c| depth * bump(c, &center, width));
        let lower = u_star.lincomb(1.0, &interior, -1.0).with_boundary_of(&u_star);
        let t_low = apply_t(&lower, &p).unwrap();
        let t_star = apply_t(&u_star, &p).unwrap();
        prop_assert!(t_star.excess_over(&t_low) <= SLACK, "{}", t_star.excess_over(&t_low));
    }
}

struct Prepared {
    problem: Problem,
    limit: ScalarField,
}

fn prepared() -> &'static Prepared {
    static CELL: OnceLock<Prepared> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut problem = Problem::prepare(cheng_yau(13)).unwrap();
        let limit = solve_mam(&mut problem).unwrap().u;
        Prepared { problem, limit }
    })
}

fn subbox_strategy() -> impl Strategy<Value = SubBox> {
    // 13 nodes per axis: sub-box nodes within 2..=10, at least 5 wide
    prop::collection::vec((2usize..=6, 4usize..=8), 4).prop_map(|axes| {
        let (lo, hi) = axes.into_iter().map(|(lo, w)| (lo, (lo + w).min(10))).unzip();
        SubBox { lo, hi }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    // balayage never lowers a subsolution, keeps it a subsolution, and the
    // solution dominates the result together with max-combinations
    #[test]
    fn balayage_improves_and_the_solution_dominates(a in subbox_strategy(), b in subbox_strategy()) {
        let Prepared { problem, limit } = prepared();
        let phi0 = problem.phi0().unwrap();
        let first = balayage_step(phi0, &a, problem).unwrap();
        prop_assert!(phi0.excess_over(&first) <= SLACK);
        prop_assert!(subsolution_check(&first, problem, None).unwrap().pass);
        let second = balayage_step(&first, &b, problem).unwrap();
        prop_assert!(first.excess_over(&second) <= SLACK);
        let other = balayage_step(phi0, &b, problem).unwrap();
        let combined: Vec<f64> = second.values().iter().zip(other.values()).map(|(x, y)| x.max(*y)).collect();
        let combined = ScalarField::new(problem.grid().clone(), combined).unwrap();
        for family in [phi0, &first, &second, &combined] {
            prop_assert!(family.excess_over(limit) <= SLACK, "{}", family.excess_over(limit));
        }
    }
}
