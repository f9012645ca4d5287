//! Plain-text vocabulary persistence: one piece per line, line number = id.

use std::path::Path;

use anyhow::{Context, Result};
use rerank_core::tokenizer::Vocab;

pub fn save_vocab(vocab: &Vocab, path: &Path) -> Result<()> {
    let mut body = String::new();
    for id in 0..vocab.size() as u32 {
        body.push_str(vocab.piece(id).expect("ids below size resolve"));
        body.push('\n');
    }
    std::fs::write(path, body).with_context(|| format!("writing vocabulary {}", path.display()))?;
    Ok(())
}

pub fn load_vocab(path: &Path) -> Result<Vocab> {
    let body = std::fs::read_to_string(path)
        .with_context(|| format!("reading vocabulary {}", path.display()))?;
    let pieces: Vec<String> = body.lines().map(str::to_string).collect();
    let vocab = Vocab::from_pieces(pieces)
        .with_context(|| format!("vocabulary {} is malformed", path.display()))?;
    Ok(vocab)
}
