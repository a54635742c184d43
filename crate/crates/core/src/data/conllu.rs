use std::fmt::Write as _;
use std::path::Path;

use super::tree::ParseTree;
use super::upos::{upos_id, upos_name};
use crate::{Error, Result};

/// The fields of a CoNLL-U sentence this crate consumes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConlluSentence {
    /// Comment lines without the leading `#` and surrounding space.
    pub comments: Vec<String>,
    pub tokens: Vec<String>,
    pub upos: Vec<usize>,
    pub heads: Vec<usize>,
}

impl ConlluSentence {
    /// Value of a `# key = value` comment.
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.comments.iter().find_map(|c| {
            let (k, v) = c.split_once('=')?;
            (k.trim() == key).then(|| v.trim())
        })
    }
}

pub fn load_conllu(path: &Path) -> Result<Vec<ConlluSentence>> {
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    parse_conllu(&std::fs::read_to_string(path)?, path)
}

pub fn parse_conllu(text: &str, path: &Path) -> Result<Vec<ConlluSentence>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut out = Vec::new();
    let mut cur = ConlluSentence::default();
    let mut start = 0;
    let mut root_line: Option<usize> = None;
    let mut token_lines: Vec<usize> = Vec::new();

    let mut finish = |cur: &mut ConlluSentence,
                      start: usize,
                      root_line: &mut Option<usize>,
                      lines: &mut Vec<usize>|
     -> Result<()> {
        let s = std::mem::take(cur);
        let lines = std::mem::take(lines);
        if s.tokens.is_empty() {
            if !s.comments.is_empty() {
                return Err(err(start, "sentence has comments but no tokens".into()));
            }
            return Ok(());
        }
        if root_line.take().is_none() {
            return Err(err(start, "sentence has no root".into()));
        }
        for (i, &h) in s.heads.iter().enumerate() {
            if h > s.tokens.len() {
                return Err(err(
                    lines[i],
                    format!("HEAD {h} beyond the sentence's {} tokens", s.tokens.len()),
                ));
            }
            if h == i + 1 {
                return Err(err(lines[i], format!("token {h} is its own head")));
            }
        }
        ParseTree::from_heads(&s.heads).map_err(|e| err(start, e.to_string()))?;
        out.push(s);
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish(&mut cur, start, &mut root_line, &mut token_lines)?;
            continue;
        }
        if cur.tokens.is_empty() && cur.comments.is_empty() {
            start = lineno;
        }
        if let Some(c) = line.strip_prefix('#') {
            cur.comments.push(c.trim().to_string());
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(err(
                lineno,
                format!("expected 10 tab-separated columns, found {}", cols.len()),
            ));
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let id: usize = id
            .parse()
            .map_err(|_| err(lineno, format!("non-integer ID {id:?}")))?;
        if id != cur.tokens.len() + 1 {
            return Err(err(
                lineno,
                format!("ID {id} out of sequence, expected {}", cur.tokens.len() + 1),
            ));
        }
        let upos = upos_id(cols[3])
            .ok_or_else(|| err(lineno, format!("unknown UPOS tag {:?}", cols[3])))?;
        let head: usize = cols[6]
            .parse()
            .map_err(|_| err(lineno, format!("non-integer HEAD {:?}", cols[6])))?;
        if head == 0 {
            if let Some(first) = root_line {
                return Err(err(
                    lineno,
                    format!("multiple roots (first on line {first})"),
                ));
            }
            root_line = Some(lineno);
        }
        token_lines.push(lineno);
        cur.tokens.push(cols[1].to_string());
        cur.upos.push(upos);
        cur.heads.push(head);
    }
    finish(&mut cur, start, &mut root_line, &mut token_lines)?;
    Ok(out)
}

pub fn format_conllu(sentences: &[ConlluSentence]) -> String {
    let mut s = String::new();
    for sent in sentences {
        for c in &sent.comments {
            writeln!(s, "# {c}").unwrap();
        }
        for (i, tok) in sent.tokens.iter().enumerate() {
            let head = sent.heads[i];
            let rel = if head == 0 { "root" } else { "dep" };
            writeln!(
                s,
                "{}\t{tok}\t_\t{}\t_\t_\t{head}\t{rel}\t_\t_",
                i + 1,
                upos_name(sent.upos[i])
            )
            .unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn write_conllu(path: &Path, sentences: &[ConlluSentence]) -> Result<()> {
    std::fs::write(path, format_conllu(sentences))?;
    Ok(())
}
