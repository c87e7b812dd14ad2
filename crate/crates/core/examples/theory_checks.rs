//! Tail probabilities of a Poisson-lognormal mixture against the Poisson
//! tail, and the second-order expansion of their difference.

use corrscan::theory::{compare_tails, poisson_tail, run_checks, verify_prop2, MixtureSetup, TailMethod};

fn main() -> corrscan::Result<()> {
    let base = MixtureSetup::single(0.0, 5.0, 1.0);
    let quad = TailMethod::Quadrature { nodes: 80 };
    println!("P(Poisson(5) >= 9) = {:.6e}", poisson_tail(9, 5.0));
    println!("{:>8} {:>12} {:>12} {:>12} {:>12}", "n", "mixture", "poisson", "correction", "remainder");
    for n in [1e1, 1e2, 1e3, 1e4] {
        let c = compare_tails(9, &base, n, quad)?;
        println!("{n:8.0} {:12.6e} {:12.6e} {:12.4e} {:12.4e}", c.p2_tail, c.p1_tail, c.correction, c.remainder);
    }
    let rep = verify_prop2(9, &base, &[1e2, 1e3, 1e4], quad)?;
    println!("log-log slope of |remainder|: {:.3}", rep.slope.unwrap_or(f64::NAN));

    println!();
    print!("{}", run_checks(1)?.to_text());
    Ok(())
}
