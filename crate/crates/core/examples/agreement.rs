//! Structured verdicts vs. the lumped PBH oracle over a synthetic corpus.
//!
//! cargo run --release --example agreement -- [count] [seed]
use netobs::synth::{corpus, SizeSpec, VERIFICATION_MIX};
use netobs::verify::{self, Outcome, Property};
use netobs::Tolerances;
use std::collections::BTreeMap;

fn main() {
    let tol = Tolerances::default();
    let mut args = std::env::args().skip(1).map(|s| s.parse::<u64>().ok());
    let n = args.next().flatten().unwrap_or(500) as usize;
    let seed = args.next().flatten().unwrap_or(7);
    let systems = corpus(seed, n, &VERIFICATION_MIX, &SizeSpec::default(), &tol);
    let mut stats: BTreeMap<String, usize> = BTreeMap::new();
    for (k, (scenario, sys)) in systems.iter().enumerate() {
        for property in [Property::Observable, Property::Controllable] {
            let s = match property {
                Property::Observable => verify::verify_observability(sys, &tol),
                _ => verify::verify_controllability(sys, &tol),
            }
            .unwrap();
            let o = verify::oracle_for(sys, property, &tol).unwrap();
            *stats.entry(format!("{property:?} {scenario:?}: {:?} / oracle {:?}", s.result, o.result)).or_default() += 1;
            if s.result != Outcome::Indeterminate && s.result != o.result {
                println!("disagreement #{k} ({property:?}): {}\n  oracle: {}", s.diagnostics, o.diagnostics);
            }
        }
    }
    for (k, c) in stats {
        println!("{c:5}  {k}");
    }
}
