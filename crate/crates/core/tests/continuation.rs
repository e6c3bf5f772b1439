use std::f64::consts::PI;
use std::sync::OnceLock;

use vegpattern::continuation::{
    continue_branch, full_diagram, seed_point, switch_branch, Branch, ContinuationOptions, Diagram, EventKind,
    Problem,
};
use vegpattern::discretization::{rhs, FieldState, GridSpec};
use vegpattern::integrate::newton_polish;
use vegpattern::model::{equilibrium, fold_point, BranchTag};
use vegpattern::stability::turing_locus;
use vegpattern::symmetry::{classify, reflect, ProfileShape, SYMMETRY_TOL};
use vegpattern::Params;

fn diagram() -> &'static Diagram {
    static D: OnceLock<Diagram> = OnceLock::new();
    D.get_or_init(|| {
        full_diagram(&Params::calibrated(), GridSpec::new(8.0, 40).unwrap(), &ContinuationOptions::default()).unwrap()
    })
}

fn homogeneous_branch(length: f64, opts: &ContinuationOptions) -> Branch {
    let params = Params::calibrated().with_length(length);
    let grid = GridSpec::new(length, 40).unwrap();
    let problem = Problem::new(grid, &params, opts.variable_scale);
    let u = equilibrium(2.0, BranchTag::Upper, &params).unwrap().unwrap();
    let seed = seed_point(&problem, &FieldState::homogeneous(grid, &u), 2.0, opts).unwrap();
    continue_branch(&problem, &seed, -1.0, opts).unwrap()
}

fn kinds(b: &Branch) -> Vec<EventKind> {
    b.events.iter().map(|e| e.kind).collect()
}

fn max_residual(state: &FieldState, p: f64) -> f64 {
    let params = Params::calibrated();
    rhs(&state.grid, &state.to_vec(), p, &params).iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

#[test]
fn bare_soil_branch_has_no_events() {
    let params = Params::calibrated();
    let opts = ContinuationOptions::default();
    let grid = GridSpec::new(8.0, 40).unwrap();
    let problem = Problem::new(grid, &params, opts.variable_scale);
    let bare = vegpattern::model::HomogeneousState::bare_soil(2.0, &params);
    let seed = seed_point(&problem, &FieldState::homogeneous(grid, &bare), 2.0, &opts).unwrap();
    let b = continue_branch(&problem, &seed, -1.0, &opts).unwrap();
    assert!(b.events.is_empty());
    assert!(b.points.iter().all(|pt| pt.n_unstable == Some(0)));
    assert!(b.points.iter().any(|pt| pt.p < 0.01));
}

#[test]
fn homogeneous_branch_meets_tb1_tb2_then_lp1() {
    let params = Params::calibrated();
    let b = homogeneous_branch(8.0, &ContinuationOptions::default());
    assert_eq!(kinds(&b), [EventKind::TuringOnset, EventKind::TuringOnset, EventKind::Fold]);
    let (pc0, _) = fold_point(&params).unwrap();
    let tb1 = turing_locus(2, 8.0, &params).unwrap();
    let tb2 = turing_locus(1, 8.0, &params).unwrap();
    assert!((b.events[0].p - tb1).abs() < 0.005, "{}", b.events[0].p);
    assert!((b.events[1].p - tb2).abs() < 0.005, "{}", b.events[1].p);
    // Homogeneous states are exact grid solutions, so the fold is analytic.
    assert!((b.events[2].p - pc0).abs() < 1e-6, "{} vs {pc0}", b.events[2].p);
    assert_eq!(b.events[0].breaks_reflection, Some(false));
    assert_eq!(b.events[1].breaks_reflection, Some(true));
    assert!(b.events[2].point.tau_fold.abs() < 1e-6);
}

#[test]
fn short_domains_lose_turing_modes() {
    let opts = ContinuationOptions::default();
    let b4 = homogeneous_branch(4.0, &opts);
    assert_eq!(kinds(&b4), [EventKind::TuringOnset, EventKind::Fold]);
    let b2 = homogeneous_branch(2.0, &opts);
    assert_eq!(kinds(&b2), [EventKind::Fold]);
    // Stable all the way down to the fold.
    let lp = b2.events[0].p;
    assert!(b2.points.iter().filter(|pt| pt.p > lp + 1e-3 && pt.tangent.last().unwrap() < &0.0).all(|pt| pt.n_unstable == Some(0)));
}

#[test]
fn l2_diagram_has_only_the_homogeneous_fold() {
    let params = Params::calibrated().with_length(2.0);
    let d = full_diagram(&params, GridSpec::new(2.0, 40).unwrap(), &ContinuationOptions::default()).unwrap();
    assert_eq!(d.events.len(), 1);
    assert_eq!(d.events[0].label.as_deref(), Some("LP1"));
    assert!(d.is_complete());
}

#[test]
fn full_diagram_has_nine_labelled_events() {
    let d = diagram();
    assert!(d.is_complete(), "{:?}", d.diagnostics);
    for label in ["LP1", "TB1", "TB2", "PF1", "PF2", "LP2", "LP3", "LP4", "LP5"] {
        assert!(d.labeled(label).is_some(), "{label} missing");
    }
    let p = |l: &str| d.labeled(l).unwrap().p;
    assert!(p("TB1") > p("TB2") && p("TB2") > p("PF1") && p("PF1") > p("PF2"));
    assert!(p("LP1") > p("LP2") && p("LP2") > p("LP4"));
    assert_eq!(d.labeled("PF1").unwrap().breaks_reflection, Some(true));
    assert_eq!(d.labeled("PF2").unwrap().breaks_reflection, Some(true));
}

#[test]
fn every_accepted_point_is_converged() {
    for b in &diagram().branches {
        for pt in &b.points {
            assert!(pt.residual < 1e-8, "branch {} p {}: {}", b.id, pt.p, pt.residual);
            assert!(max_residual(&pt.state, pt.p) < 1e-8);
        }
    }
}

#[test]
fn stability_changes_only_across_events() {
    for b in &diagram().branches {
        for w in b.points.windows(2) {
            if w[0].n_unstable == w[1].n_unstable {
                continue;
            }
            // A fold lies outside the p-range of its bracket, so match the
            // step in which the event was detected.
            let (lo, hi) = (w[0].p.min(w[1].p) - 1e-6, w[0].p.max(w[1].p) + 1e-6);
            assert!(
                b.events
                    .iter()
                    .any(|e| e.detection_interval == (w[0].p, w[1].p) || (e.p >= lo && e.p <= hi)),
                "branch {} changes stability in [{lo}, {hi}] without an event",
                b.id
            );
        }
    }
}

#[test]
fn tb1_gives_bell_and_inverted_bell() {
    let d = diagram();
    let tb1 = d.labeled("TB1").unwrap();
    let children: Vec<&Branch> = d.branches.iter().filter(|b| b.provenance.starts_with("TB1")).collect();
    let mut shapes: Vec<ProfileShape> = children.iter().map(|b| b.seed_shape).collect();
    shapes.sort_by_key(|s| s.as_str());
    assert_eq!(shapes, [ProfileShape::Bell, ProfileShape::InvertedBell]);

    // Near onset both are symmetric and mirror each other about the
    // homogeneous state.
    let params = Params::calibrated();
    let target = tb1.p - 0.01;
    let grid = d.grid;
    let at = |b: &Branch| -> Vec<f64> {
        let w = b
            .points
            .windows(2)
            .find(|w| (w[0].p - target) * (w[1].p - target) <= 0.0)
            .expect("branch crosses the target p");
        let s = (target - w[0].p) / (w[1].p - w[0].p);
        let (a, c) = (w[0].state.to_vec(), w[1].state.to_vec());
        let guess: Vec<f64> = a.iter().zip(&c).map(|(a, c)| a + s * (c - a)).collect();
        newton_polish(&grid, &guess, target, &params, 1e-11, 30).unwrap().0
    };
    let (up, down) = (at(children[0]), at(children[1]));
    for u in [&up, &down] {
        let st = FieldState::from_vec(grid, u).unwrap();
        assert!(classify(&st).defect < SYMMETRY_TOL);
    }
    let u0 = FieldState::homogeneous(grid, &equilibrium(target, BranchTag::Upper, &params).unwrap().unwrap()).to_vec();
    let (mut sum, mut dev) = (0.0, 0.0);
    for i in 0..u0.len() {
        sum += (up[i] - u0[i] + down[i] - u0[i]).powi(2);
        dev += (up[i] - u0[i]).powi(2);
    }
    assert!((sum / dev).sqrt() < 0.1, "{}", (sum / dev).sqrt());
}

#[test]
fn turing_seed_follows_the_critical_cosine() {
    let d = diagram();
    let tb1 = d.labeled("TB1").unwrap();
    let params = Params::calibrated();
    let problem = Problem::new(d.grid, &params, ContinuationOptions::default().variable_scale);
    let seeds = switch_branch(&problem, tb1, &ContinuationOptions::default()).unwrap();
    assert_eq!(seeds.len(), 2);
    let grid = d.grid;
    let base = &tb1.point.state.b;
    for s in &seeds {
        let dev: Vec<f64> = s.state.b.iter().zip(base).map(|(a, b)| a - b).collect();
        let mode: Vec<f64> = (0..grid.nodes()).map(|i| (2.0 * PI * grid.x(i) / 8.0).cos()).collect();
        let w = grid.weights();
        let ip = |a: &[f64], b: &[f64]| a.iter().zip(b).zip(&w).map(|((a, b), w)| a * b * w).sum::<f64>();
        let cos2 = ip(&dev, &mode).powi(2) / (ip(&dev, &dev) * ip(&mode, &mode));
        assert!(cos2 > 0.9, "{cos2}");
    }
}

#[test]
fn pf1_children_are_mirror_images() {
    let d = diagram();
    let kids: Vec<&Branch> = d.branches.iter().filter(|b| b.provenance.starts_with("PF1")).collect();
    assert_eq!(kids.len(), 2);
    let mut shapes = [kids[0].seed_shape, kids[1].seed_shape];
    shapes.sort_by_key(|s| s.as_str());
    assert_eq!(shapes, [ProfileShape::SkewedLeft, ProfileShape::SkewedRight]);
    let (a, b) = (kids[0], kids[1]);
    assert!(a.conjugate_of == Some(b.id) || b.conjugate_of == Some(a.id));
    // The reflected states solve the problem and lie on the conjugate branch.
    assert_eq!(a.points.len(), b.points.len());
    for (pa, pb) in a.points.iter().zip(&b.points) {
        let r = reflect(&pa.state);
        assert!(max_residual(&r, pa.p) < 1e-8);
        assert!((pa.p - pb.p).abs() < 1e-6);
        let gap = r.to_vec().iter().zip(pb.state.to_vec()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(gap < 1e-6, "{gap}");
    }
    let (l4, l5) = (d.labeled("LP4").unwrap(), d.labeled("LP5").unwrap());
    assert!(l4.point.measures.first_moment < 0.0 && l5.point.measures.first_moment > 0.0);
    assert!((l4.p - l5.p).abs() < 1e-6);
}

#[test]
fn tb2_branch_connects_to_pf2() {
    let d = diagram();
    let pf2 = d.labeled("PF2").unwrap().p;
    let tb2 = d.labeled("TB2").unwrap().p;
    let b = d.branches.iter().find(|b| b.provenance.starts_with("TB2")).expect("branch from TB2");
    let lo = b.points.iter().map(|pt| pt.p).fold(f64::INFINITY, f64::min);
    let hi = b.points.iter().map(|pt| pt.p).fold(f64::NEG_INFINITY, f64::max);
    assert!((lo - pf2).abs() < 1e-3, "{lo} vs {pf2}");
    assert!((hi - tb2).abs() < 1e-3, "{hi} vs {tb2}");
    assert!(b.events.iter().any(|e| e.kind == EventKind::BranchPoint && (e.p - pf2).abs() < 1e-3));
    assert!(b.points.iter().all(|pt| classify(&pt.state).defect > SYMMETRY_TOL || (pt.p - tb2).abs() < 1e-2 || (pt.p - pf2).abs() < 1e-2));
}

#[test]
fn multistability_windows() {
    use vegpattern::continuation::stable_shapes_at;
    let d = diagram();
    let set = |p: f64| stable_shapes_at(d, p).into_iter().collect::<Vec<_>>();
    assert_eq!(set(0.95), ["bare", "inverted_bell", "skewed_left", "skewed_right"]);
    assert_eq!(set(1.05), ["bare", "bell", "inverted_bell"]);
    assert_eq!(set(1.5), ["bare", "homogeneous"]);
}

#[test]
fn lp2_is_found_from_either_side() {
    let d = diagram();
    let lp2 = d.labeled("LP2").unwrap();
    let b = &d.branches[lp2.branch];
    let params = Params::calibrated();
    let opts = ContinuationOptions::default();
    let problem = Problem::new(d.grid, &params, opts.variable_scale);
    // Restart a few points past the fold and walk back through it.
    let k = b.points.iter().position(|pt| pt.p > lp2.p && pt.tau_fold > 0.0 && pt.p - lp2.p > 0.01).unwrap();
    let back = continue_branch(&problem, &b.points[k], -1.0, &ContinuationOptions { max_steps: 40, ..opts }).unwrap();
    let fold = back.events.iter().find(|e| e.kind == EventKind::Fold).expect("fold on the way back");
    assert!((fold.p - lp2.p).abs() < 1e-6, "{} vs {}", fold.p, lp2.p);
}

#[test]
fn seed_shapes_match_their_labels() {
    let d = diagram();
    let shape_of = |label: &str| classify(&d.labeled(label).unwrap().point.state).profile_shape;
    assert_eq!(shape_of("LP2"), ProfileShape::Bell);
    assert_eq!(shape_of("LP3"), ProfileShape::InvertedBell);
    assert_eq!(shape_of("LP4"), ProfileShape::SkewedLeft);
    assert_eq!(shape_of("LP5"), ProfileShape::SkewedRight);
    assert_eq!(shape_of("LP1"), ProfileShape::Flat);
}
