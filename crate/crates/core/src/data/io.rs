use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::conllu::{load_conllu, write_conllu, ConlluSentence};
use super::synth::{Lang, ParallelSentencePair};
use crate::{Error, Result};

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    let r = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

fn side(pairs: &[ParallelSentencePair], lang: Lang) -> Vec<ConlluSentence> {
    pairs
        .iter()
        .map(|p| ConlluSentence {
            comments: vec![
                format!("sent_id = {}", p.id),
                format!("two_way_only = {}", p.two_way_only),
            ],
            tokens: p.tokens(lang).to_vec(),
            upos: p.upos(lang).to_vec(),
            heads: p.heads(lang).to_vec(),
        })
        .collect()
}

fn format_alignment(a: &[(usize, usize)]) -> String {
    a.iter()
        .map(|(i, j)| format!("{i}-{j}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_alignment(line: &str, path: &Path, lineno: usize) -> Result<Vec<(usize, usize)>> {
    line.split_whitespace()
        .map(|tok| {
            let bad = || Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: format!("malformed alignment pair {tok:?}"),
            };
            let (i, j) = tok.split_once('-').ok_or_else(bad)?;
            Ok((i.parse().map_err(|_| bad())?, j.parse().map_err(|_| bad())?))
        })
        .collect()
}

/// Writes `<split>.l1.conllu`, `<split>.l2.conllu` and `<split>.align`.
pub fn write_pairs(dir: &Path, split: &str, pairs: &[ParallelSentencePair]) -> Result<()> {
    write_conllu(
        &dir.join(format!("{split}.l1.conllu")),
        &side(pairs, Lang::L1),
    )?;
    write_conllu(
        &dir.join(format!("{split}.l2.conllu")),
        &side(pairs, Lang::L2),
    )?;
    let mut text: String = pairs
        .iter()
        .map(|p| format_alignment(&p.alignment) + "\n")
        .collect();
    if text.is_empty() {
        text.push('\n');
    }
    fs::write(dir.join(format!("{split}.align")), text)?;
    Ok(())
}

pub fn load_pairs(dir: &Path, split: &str) -> Result<Vec<ParallelSentencePair>> {
    let s = load_conllu(&dir.join(format!("{split}.l1.conllu")))?;
    let t = load_conllu(&dir.join(format!("{split}.l2.conllu")))?;
    let apath = dir.join(format!("{split}.align"));
    if !apath.exists() {
        return Err(Error::Missing(apath));
    }
    let atext = fs::read_to_string(&apath)?;
    let aligns: Vec<Vec<(usize, usize)>> = atext
        .lines()
        .enumerate()
        .take(s.len())
        .map(|(i, l)| parse_alignment(l, &apath, i + 1))
        .collect::<Result<_>>()?;
    if s.len() != t.len() || aligns.len() != s.len() {
        return Err(Error::config(format!(
            "split {split}: {} source, {} target and {} alignment lines",
            s.len(),
            t.len(),
            aligns.len()
        )));
    }
    s.into_iter()
        .zip(t)
        .zip(aligns)
        .enumerate()
        .map(|(k, ((a, b), alignment))| {
            for &(i, j) in &alignment {
                if i >= a.tokens.len() || j >= b.tokens.len() {
                    return Err(Error::Parse {
                        path: apath.clone(),
                        line: k + 1,
                        msg: format!("alignment {i}-{j} outside the sentence"),
                    });
                }
            }
            let id = a.meta("sent_id").and_then(|v| v.parse().ok()).unwrap_or(k);
            let two_way_only = a.meta("two_way_only") == Some("true");
            Ok(ParallelSentencePair {
                id,
                tokens_s: a.tokens,
                tokens_t: b.tokens,
                upos_s: a.upos,
                upos_t: b.upos,
                heads_s: a.heads,
                heads_t: b.heads,
                alignment,
                two_way_only,
            })
        })
        .collect()
}
