//! Builds one small corpus of every generated prior kind, validates it and
//! prints the first sample of each.
//!
//!     cargo run --example prior_corpora

use era_core::priors::{build_corpus, validate_corpus, CorpusOptions, PriorKind};
use era_core::types::EnvKind;

fn main() {
    let opts = CorpusOptions::default();
    for kind in PriorKind::ALL {
        let env = if kind.low_only() { EnvKind::Low } else { EnvKind::High };
        let data = match build_corpus(kind, env, 5, 3, &opts) {
            Ok(d) => d,
            Err(e) => {
                println!("== {kind}: {e}\n");
                continue;
            }
        };
        let records: Vec<_> = data.iter().map(|s| s.record.clone()).collect();
        let report = validate_corpus(&records);
        println!("== {kind} on {env}: {} samples, {} invalid", data.len(), report.failures.len());
        let r = &data[0].record;
        println!("{}\n--\n{}\n", r.prompt, r.generation);
    }
}
