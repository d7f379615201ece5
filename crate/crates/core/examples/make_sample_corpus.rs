//! Writes the bundled synthetic corpus: `make_sample_corpus <dir> [seed]`.

use std::path::PathBuf;

use hadith_corpus::synthetic::{generate, SyntheticConfig};

fn main() -> std::io::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "corpus/sample".into()));
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let corpus = generate(&SyntheticConfig { seed, ..Default::default() });
    std::fs::create_dir_all(&dir)?;
    corpus.write_sample(&dir, "synthetic-sample")?;
    println!("{} books, {} narrations written to {}", corpus.books.len(), corpus.narration_count(), dir.display());
    Ok(())
}
