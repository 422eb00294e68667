//! Region, critical exponent and H(gamma) for a few exponent pairs, then a coarse atlas.
use latticescale::region_atlas::{
    atlas_grid, classify, critical_gamma, exponents, normalization_law, phase_diagram, DEFAULT_TOL,
};
use std::collections::BTreeMap;

fn main() -> latticescale::Result<()> {
    for (q1, q2) in [(4.0, 4.0), (1.6, 8.0), (8.0, 1.6), (2.2, 2.2)] {
        let e = exponents(q1, q2)?;
        let r = classify(q1, q2, DEFAULT_TOL)?;
        let g0 = critical_gamma(&e, &r)?;
        let law = normalization_law(&e, &r)?;
        println!(
            "({q1}, {q2}) {:<10} gamma0 = {g0:.4}  H(gamma0/2) = {:.4}  H(2 gamma0) = {:.4}",
            r.tag.name(),
            law.h_continuous(g0 / 2.0),
            law.h_continuous(2.0 * g0)
        );
    }
    let mut counts = BTreeMap::new();
    for row in phase_diagram(&atlas_grid(40, 0.0, 1.0), DEFAULT_TOL) {
        *counts.entry(row.region.tag.name()).or_insert(0usize) += 1;
    }
    println!("40x40 atlas over (1/q1, 1/q2) in (0,1)^2: {counts:?}");
    Ok(())
}
