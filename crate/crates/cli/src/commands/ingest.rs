use std::io::BufRead;

use planrag::retrieval::ingest_corpus;
use serde::Deserialize;

use crate::{CliError, IngestArgs, Outcome};

#[derive(Debug, Deserialize)]
struct Article {
    #[serde(alias = "title", alias = "source_id")]
    id: String,
    text: String,
}

pub fn read_corpus(path: &std::path::Path) -> Result<Vec<(String, String)>, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::usage(format!("cannot open corpus {}: {e}", path.display())))?;
    let mut articles = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let a: Article = serde_json::from_str(&line)
            .map_err(|e| CliError::usage(format!("{}:{}: {e}", path.display(), i + 1)))?;
        articles.push((a.id, a.text));
    }
    Ok(articles)
}

pub fn cmd_ingest(args: &IngestArgs) -> Result<Outcome, CliError> {
    let articles = read_corpus(&args.corpus)?;
    let n_articles = articles.len();
    let (store, warnings) = ingest_corpus(articles).map_err(|e| CliError::usage(e.to_string()))?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    if args.out.join("manifest.json").exists() {
        eprintln!("warning: replacing existing store at {}", args.out.display());
    }
    store
        .save(&args.out)
        .map_err(|e| CliError::runtime(format!("cannot write store: {e}")))?;
    println!(
        "{n_articles} articles, {} sources, {} chunks -> {}",
        store.sources().len(),
        store.len(),
        args.out.display()
    );
    Ok(Outcome::Success)
}
