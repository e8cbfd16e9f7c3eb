//! Minimal CoNLL-U reader. Only the ID, HEAD and DEPREL columns are consumed;
//! multiword-token ranges (`3-4`) and empty nodes (`5.1`) are skipped.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ConlluError {
    pub line: usize,
    pub message: String,
}

impl ConlluError {
    fn new(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

/// One syntactic word, reduced to the columns the tree builder needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub id: usize,
    pub head: usize,
    pub deprel: String,
    /// 1-based line number in the source text.
    pub line: usize,
}

pub type Sentence = Vec<Token>;

/// Splits CoNLL-U text into validated sentences.
///
/// Each sentence must number its words `1..=n` in order, reference only
/// existing heads, have exactly one word attached to `0`, and be acyclic.
pub fn parse(text: &str) -> Result<Vec<Sentence>, ConlluError> {
    let mut sentences = Vec::new();
    let mut current: Sentence = Vec::new();
    let mut start_line = 1;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            if !current.is_empty() {
                validate(&current, start_line)?;
                sentences.push(std::mem::take(&mut current));
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        if current.is_empty() {
            start_line = line_no;
        }
        if let Some(token) = parse_token(line, line_no)? {
            if token.id != current.len() + 1 {
                return Err(ConlluError::new(
                    line_no,
                    format!("expected word id {}, found {}", current.len() + 1, token.id),
                ));
            }
            current.push(token);
        }
    }
    if !current.is_empty() {
        validate(&current, start_line)?;
        sentences.push(current);
    }
    if sentences.is_empty() {
        return Err(ConlluError::new(1, "no sentences in input"));
    }
    Ok(sentences)
}

fn parse_token(line: &str, line_no: usize) -> Result<Option<Token>, ConlluError> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 10 {
        return Err(ConlluError::new(
            line_no,
            format!("expected 10 tab-separated columns, found {}", cols.len()),
        ));
    }
    let id_col = cols[0];
    if id_col.contains('-') || id_col.contains('.') {
        return Ok(None);
    }
    let id: usize = id_col
        .parse()
        .map_err(|_| ConlluError::new(line_no, format!("invalid ID {id_col:?}")))?;
    if id == 0 {
        return Err(ConlluError::new(line_no, "word ids start at 1"));
    }
    let head: usize = cols[6]
        .parse()
        .map_err(|_| ConlluError::new(line_no, format!("invalid HEAD {:?}", cols[6])))?;
    let deprel = cols[7].trim();
    if deprel.is_empty() {
        return Err(ConlluError::new(line_no, "empty DEPREL"));
    }
    Ok(Some(Token {
        id,
        head,
        deprel: deprel.to_string(),
        line: line_no,
    }))
}

fn validate(sentence: &[Token], start_line: usize) -> Result<(), ConlluError> {
    let n = sentence.len();
    let mut roots = 0;
    for tok in sentence {
        if tok.head > n {
            return Err(ConlluError::new(
                tok.line,
                format!("HEAD {} references a nonexistent word", tok.head),
            ));
        }
        if tok.head == tok.id {
            return Err(ConlluError::new(tok.line, "word is its own head"));
        }
        if tok.head == 0 {
            roots += 1;
        }
    }
    if roots != 1 {
        return Err(ConlluError::new(
            start_line,
            format!("sentence has {roots} words attached to HEAD 0, expected exactly one"),
        ));
    }

    // 0 = unvisited, 1 = on the current walk, 2 = known to reach the root.
    let mut state = vec![0u8; n + 1];
    state[0] = 2;
    let mut walk = Vec::new();
    for tok in sentence {
        let mut cur = tok.id;
        walk.clear();
        while state[cur] == 0 {
            state[cur] = 1;
            walk.push(cur);
            cur = sentence[cur - 1].head;
        }
        if state[cur] == 1 {
            return Err(ConlluError::new(
                sentence[cur - 1].line,
                format!("cycle in HEAD links through word {cur}"),
            ));
        }
        for &w in &walk {
            state[w] = 2;
        }
    }
    Ok(())
}
