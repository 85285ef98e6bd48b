//! Canonical interchange format: UTF-8 JSON lines, a header record followed
//! by one record per dialogue with keys `id`, `units`, `relations`, `cdus`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, RawDialogue, Split};
use crate::taxonomy::Taxonomy;

pub const CORPUS_FORMAT: &str = "dialparse-corpus";
pub const CORPUS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    name: String,
    split: Split,
    taxonomy: Taxonomy,
}

pub fn write_canonical(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let header = Header {
        format: CORPUS_FORMAT.to_string(),
        version: CORPUS_VERSION,
        name: corpus.name.clone(),
        split: corpus.split,
        taxonomy: corpus.taxonomy.clone(),
    };
    write_line(&mut out, &header).map_err(|e| CorpusError::io(path, e))?;
    for dialogue in &corpus.dialogues {
        write_line(&mut out, dialogue).map_err(|e| CorpusError::io(path, e))?;
    }
    out.flush().map_err(|e| CorpusError::io(path, e))
}

pub(crate) fn write_line<W: Write, T: Serialize>(out: &mut W, value: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")
}

pub fn read_canonical(path: &Path) -> Result<Corpus, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let parse_err = |line: usize, detail: String| CorpusError::Parse {
        path: path.display().to_string(),
        line,
        detail,
    };
    let mut lines = BufReader::new(file).lines().enumerate();

    let header: Header = loop {
        match lines.next() {
            None => return Err(parse_err(1, "missing header record".into())),
            Some((n, line)) => {
                let line = line.map_err(|e| CorpusError::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line)
                    .map_err(|e| parse_err(n + 1, format!("bad header: {e}")))?;
            }
        }
    };
    if header.format != CORPUS_FORMAT {
        return Err(parse_err(1, format!("not a corpus file (format {:?})", header.format)));
    }
    if header.version != CORPUS_VERSION {
        return Err(parse_err(1, format!("unsupported version {}", header.version)));
    }

    let mut corpus = Corpus::new(header.name, header.split, header.taxonomy);
    for (n, line) in lines {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let dialogue: RawDialogue = serde_json::from_str(&line).map_err(|e| {
            // Name the dialogue when the id is still recoverable.
            let id = serde_json::from_str::<serde_json::Value>(&line)
                .ok()
                .and_then(|v| v.get("id").and_then(|i| i.as_str()).map(str::to_string));
            match id {
                Some(id) => CorpusError::schema(&id, format!("line {}: {e}", n + 1)),
                None => parse_err(n + 1, e.to_string()),
            }
        })?;
        corpus.dialogues.push(dialogue);
    }
    corpus.validate()?;
    Ok(corpus)
}
