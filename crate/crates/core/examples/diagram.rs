//! Prints the labelled events of the full diagram at L = 8.

use vegpattern::continuation::{full_diagram, stable_shapes_at, ContinuationOptions};
use vegpattern::discretization::GridSpec;
use vegpattern::Params;

fn main() -> vegpattern::Result<()> {
    env_logger::init();
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let params = Params::calibrated();
    let d = full_diagram(&params, GridSpec::new(8.0, n)?, &ContinuationOptions::default())?;
    for b in &d.branches {
        println!(
            "branch {} [{}] depth {} pts {} end {:?} conj {:?} p-range {:.4}..{:.4}",
            b.id,
            b.provenance,
            b.depth,
            b.points.len(),
            b.termination,
            b.conjugate_of,
            b.points.iter().map(|p| p.p).fold(f64::INFINITY, f64::min),
            b.points.iter().map(|p| p.p).fold(f64::NEG_INFINITY, f64::max)
        );
        let mut last = None;
        for pt in &b.points {
            if pt.n_unstable != last {
                println!("    n_unstable {:?} from p = {:.4} ({})", pt.n_unstable, pt.p, vegpattern::symmetry::classify(&pt.state).profile_shape);
                last = pt.n_unstable;
            }
        }
    }
    for e in &d.events {
        println!(
            "{:>5} {:<13} p = {:.5} test {:.2e} branch {} odd {:?}",
            e.label.as_deref().unwrap_or("-"),
            e.kind.as_str(),
            e.p,
            e.test_value,
            e.branch,
            e.breaks_reflection
        );
    }
    for p in [0.95, 1.05, 1.5] {
        println!("stable at {p}: {:?}", stable_shapes_at(&d, p));
    }
    for msg in &d.diagnostics {
        println!("diagnostic: {msg}");
    }
    Ok(())
}

