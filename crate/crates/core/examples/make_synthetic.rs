//! Writes a synthetic labelled corpus and matching toy lexicons.
//!
//! cargo run --example make_synthetic -- <dir> [docs_per_class] [seed]

use std::path::PathBuf;

use fakeflow::corpus::write_corpus;
use fakeflow::synthetic::{generate_corpus, write_lexicon_files, SyntheticSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "synthetic".into()));
    let docs_per_class = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1000);
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let spec = SyntheticSpec {
        docs_per_class,
        years: vec![2013, 2014, 2015],
        seed,
        ..SyntheticSpec::default()
    };
    std::fs::create_dir_all(&dir)?;
    write_corpus(&dir.join("corpus.jsonl"), &generate_corpus(&spec))?;
    let manifest = write_lexicon_files(&dir.join("lexicons"))?;
    println!("{}", dir.join("corpus.jsonl").display());
    println!("{}", manifest.display());
    Ok(())
}
