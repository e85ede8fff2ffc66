//! UTF-8 corpus files: one document per line, optionally `style_tag<TAB>body`.

use std::fs;
use std::path::Path;

use super::styles::StyledDocument;
use super::vocab::normalize_whitespace;
use crate::error::Result;

/// A corpus line. `style_tag` is `None` for untagged text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusLine {
    pub style_tag: Option<String>,
    pub body: String,
}

impl From<&StyledDocument> for CorpusLine {
    fn from(d: &StyledDocument) -> Self {
        CorpusLine {
            style_tag: Some(d.style_tag.clone()),
            body: d.body.clone(),
        }
    }
}

pub fn parse_corpus(text: &str) -> Vec<CorpusLine> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| match l.split_once('\t') {
            Some((tag, body)) => CorpusLine {
                style_tag: Some(tag.trim().to_string()),
                body: normalize_whitespace(body),
            },
            None => CorpusLine {
                style_tag: None,
                body: normalize_whitespace(l),
            },
        })
        .collect()
}

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusLine>> {
    Ok(parse_corpus(&fs::read_to_string(path)?))
}

pub fn write_corpus(path: &Path, lines: &[CorpusLine]) -> Result<()> {
    let mut out = String::new();
    for l in lines {
        if let Some(tag) = &l.style_tag {
            out.push_str(tag);
            out.push('\t');
        }
        out.push_str(&l.body);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
