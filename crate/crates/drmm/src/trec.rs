//! TREC-format I/O: corpora, topics, relevance judgments, and run files.
//!
//! Corpora and topics each accept two encodings, auto-detected by the
//! first non-blank character: a leading `<` means SGML-style TREC markup,
//! anything else is tab-separated. Qrels and runs use the standard
//! whitespace-separated column formats.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{read_file, Error, Result};
use crate::eval::Qrels;
use crate::firststage::ScoredDoc;

/// One raw corpus document: external id plus unprocessed body text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusDoc {
    pub external_id: String,
    pub text: String,
}

/// A retrieval topic. `title` is the short keyword form, `description`
/// a sentence-length restatement; at least one is non-empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topic {
    pub query_id: String,
    pub title: String,
    pub description: String,
}

/// Which topic field supplies the query text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryField {
    Title,
    Desc,
}

impl fmt::Display for QueryField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QueryField::Title => write!(f, "title"),
            QueryField::Desc => write!(f, "desc"),
        }
    }
}

impl FromStr for QueryField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "title" => Ok(QueryField::Title),
            "desc" | "description" => Ok(QueryField::Desc),
            other => Err(Error::InvalidConfig(format!(
                "unknown query field {other:?} (expected title or desc)"
            ))),
        }
    }
}

impl Topic {
    pub fn text(&self, field: QueryField) -> &str {
        match field {
            QueryField::Title => &self.title,
            QueryField::Desc => &self.description,
        }
    }
}

/// One parsed run-file line, minus the constant `Q0` and tag columns.
#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub external_id: String,
    pub rank: usize,
    pub score: f64,
}

fn invalid(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::InvalidFormat {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn looks_like_sgml(content: &str) -> bool {
    content.trim_start().starts_with('<')
}

/// Read a corpus file. `<DOC>` markup is parsed as TREC text: the id
/// comes from `<DOCNO>`, every other tag is stripped and the remaining
/// lines form the body. Otherwise each line is `external_id<TAB>text`.
pub fn read_corpus(path: &Path) -> Result<Vec<CorpusDoc>> {
    let content = read_file(path)?;
    if looks_like_sgml(&content) {
        parse_trec_corpus(path, &content)
    } else {
        parse_tsv_corpus(path, &content)
    }
}

fn parse_trec_corpus(path: &Path, content: &str) -> Result<Vec<CorpusDoc>> {
    let mut docs = Vec::new();
    let mut in_doc = false;
    let mut doc_start = 0usize;
    let mut docno: Option<String> = None;
    let mut body = String::new();
    for (i, raw) in content.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        match line {
            "<DOC>" => {
                if in_doc {
                    return Err(invalid(path, lineno, "<DOC> inside another <DOC>"));
                }
                in_doc = true;
                doc_start = lineno;
                docno = None;
                body.clear();
            }
            "</DOC>" => {
                if !in_doc {
                    return Err(invalid(path, lineno, "</DOC> without matching <DOC>"));
                }
                let id = docno
                    .take()
                    .ok_or_else(|| invalid(path, doc_start, "document has no <DOCNO>"))?;
                docs.push(CorpusDoc {
                    external_id: id,
                    text: body.trim().to_string(),
                });
                in_doc = false;
            }
            _ if !in_doc => {
                if !line.is_empty() {
                    return Err(invalid(path, lineno, "text outside <DOC>"));
                }
            }
            _ => {
                if let Some(rest) = line.strip_prefix("<DOCNO>") {
                    let value = rest
                        .strip_suffix("</DOCNO>")
                        .ok_or_else(|| invalid(path, lineno, "unterminated <DOCNO>"))?
                        .trim();
                    if value.is_empty() {
                        return Err(invalid(path, lineno, "empty <DOCNO>"));
                    }
                    if docno.replace(value.to_string()).is_some() {
                        return Err(invalid(path, lineno, "second <DOCNO> in one document"));
                    }
                } else {
                    let text = strip_tags(line);
                    if !text.is_empty() {
                        if !body.is_empty() {
                            body.push('\n');
                        }
                        body.push_str(&text);
                    }
                }
            }
        }
    }
    if in_doc {
        return Err(invalid(path, doc_start, "unterminated <DOC>"));
    }
    Ok(docs)
}

/// Remove `<...>` spans, keeping the text between them.
fn strip_tags(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut depth = 0usize;
    for c in line.chars() {
        match c {
            '<' => depth += 1,
            '>' => depth = depth.saturating_sub(1),
            _ if depth == 0 => out.push(c),
            _ => {}
        }
    }
    out.trim().to_string()
}

fn parse_tsv_corpus(path: &Path, content: &str) -> Result<Vec<CorpusDoc>> {
    let mut docs = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, text) = line
            .split_once('\t')
            .ok_or_else(|| invalid(path, i + 1, "expected `external_id<TAB>text`"))?;
        let id = id.trim();
        if id.is_empty() {
            return Err(invalid(path, i + 1, "empty document id"));
        }
        docs.push(CorpusDoc {
            external_id: id.to_string(),
            text: text.trim().to_string(),
        });
    }
    Ok(docs)
}

/// Read a topic file. SGML topics use unclosed `<num>` / `<title>` /
/// `<desc>` tags whose content runs until the next tag, with the
/// conventional `Number:` / `Topic:` / `Description:` labels tolerated;
/// `<narr>` and unknown tags are skipped. TSV topics are
/// `qid<TAB>title[<TAB>description]`. Topic ids must be unique and every
/// topic needs a title or a description.
pub fn read_topics(path: &Path) -> Result<Vec<Topic>> {
    let content = read_file(path)?;
    if looks_like_sgml(&content) {
        parse_sgml_topics(path, &content)
    } else {
        parse_tsv_topics(path, &content)
    }
}

fn append_field(buf: &mut String, text: &str) {
    let text = text.trim();
    if !text.is_empty() {
        if !buf.is_empty() {
            buf.push(' ');
        }
        buf.push_str(text);
    }
}

fn strip_label<'a>(text: &'a str, label: &str) -> &'a str {
    let t = text.trim();
    t.strip_prefix(label).map(str::trim).unwrap_or(t)
}

fn parse_sgml_topics(path: &Path, content: &str) -> Result<Vec<Topic>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Field {
        None,
        Num,
        Title,
        Desc,
        Other,
    }

    let mut topics: Vec<Topic> = Vec::new();
    let mut seen = BTreeSet::new();
    let mut in_top = false;
    let mut top_start = 0usize;
    let (mut num, mut title, mut desc) = (String::new(), String::new(), String::new());
    let mut field = Field::None;

    for (i, raw) in content.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line == "<top>" {
            if in_top {
                return Err(invalid(path, lineno, "<top> inside another <top>"));
            }
            in_top = true;
            top_start = lineno;
            num.clear();
            title.clear();
            desc.clear();
            field = Field::None;
        } else if line == "</top>" {
            if !in_top {
                return Err(invalid(path, lineno, "</top> without matching <top>"));
            }
            let query_id = num.clone();
            if query_id.is_empty() {
                return Err(invalid(path, top_start, "topic has no <num>"));
            }
            if title.is_empty() && desc.is_empty() {
                return Err(invalid(
                    path,
                    top_start,
                    format!("topic {query_id} has neither title nor description"),
                ));
            }
            if !seen.insert(query_id.clone()) {
                return Err(invalid(path, top_start, format!("duplicate topic id {query_id}")));
            }
            topics.push(Topic {
                query_id,
                title: title.clone(),
                description: desc.clone(),
            });
            in_top = false;
        } else if !in_top {
            if !line.is_empty() {
                return Err(invalid(path, lineno, "text outside <top>"));
            }
        } else if let Some(rest) = line.strip_prefix("<num>") {
            field = Field::Num;
            append_field(&mut num, strip_label(rest, "Number:"));
        } else if let Some(rest) = line.strip_prefix("<title>") {
            field = Field::Title;
            append_field(&mut title, strip_label(rest, "Topic:"));
        } else if let Some(rest) = line.strip_prefix("<desc>") {
            field = Field::Desc;
            append_field(&mut desc, strip_label(rest, "Description:"));
        } else if line.starts_with('<') {
            field = Field::Other;
        } else {
            match field {
                Field::Num => append_field(&mut num, line),
                Field::Title => append_field(&mut title, line),
                Field::Desc => append_field(&mut desc, line),
                Field::None | Field::Other => {}
            }
        }
    }
    if in_top {
        return Err(invalid(path, top_start, "unterminated <top>"));
    }
    Ok(topics)
}

fn parse_tsv_topics(path: &Path, content: &str) -> Result<Vec<Topic>> {
    let mut topics = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in content.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let qid = parts.next().unwrap().trim();
        let title = parts
            .next()
            .ok_or_else(|| invalid(path, lineno, "expected `qid<TAB>title[<TAB>description]`"))?
            .trim();
        let desc = parts.next().unwrap_or("").trim();
        if qid.is_empty() {
            return Err(invalid(path, lineno, "empty query id"));
        }
        if title.is_empty() && desc.is_empty() {
            return Err(invalid(
                path,
                lineno,
                format!("topic {qid} has neither title nor description"),
            ));
        }
        if !seen.insert(qid.to_string()) {
            return Err(invalid(path, lineno, format!("duplicate topic id {qid}")));
        }
        topics.push(Topic {
            query_id: qid.to_string(),
            title: title.to_string(),
            description: desc.to_string(),
        });
    }
    Ok(topics)
}

/// Read judgments in the four-column format `qid 0 external_id rel`
/// (whitespace-separated; the second column is ignored). Negative grades
/// clamp to zero on insert; a repeated pair keeps the last grade.
pub fn read_qrels(path: &Path) -> Result<Qrels> {
    let content = read_file(path)?;
    let mut qrels = Qrels::new();
    for (i, line) in content.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 4 {
            return Err(invalid(
                path,
                lineno,
                format!("expected 4 columns `qid 0 external_id rel`, got {}", cols.len()),
            ));
        }
        let rel: i64 = cols[3]
            .parse()
            .map_err(|_| invalid(path, lineno, format!("relevance {:?} is not an integer", cols[3])))?;
        qrels.insert(cols[0], cols[2], rel);
    }
    Ok(qrels)
}

/// Write judgments in the same four-column format, sorted by query id
/// then external id.
pub fn write_qrels(qrels: &Qrels, path: &Path) -> Result<()> {
    let mut out = String::new();
    for qid in qrels.query_ids() {
        for (doc, rel) in qrels.judged(qid).unwrap() {
            writeln!(out, "{qid} 0 {doc} {rel}").unwrap();
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Serialize a run in TREC format, `qid Q0 external_id rank score tag`,
/// queries in sorted id order and scores printed with six decimals. The
/// tag must be a single whitespace-free token.
pub fn write_run(run: &BTreeMap<String, Vec<ScoredDoc>>, tag: &str, path: &Path) -> Result<()> {
    if tag.is_empty() || tag.split_whitespace().count() != 1 {
        return Err(Error::InvalidConfig(format!(
            "run tag must be one whitespace-free token, got {tag:?}"
        )));
    }
    let mut out = String::new();
    for (qid, docs) in run {
        for d in docs {
            writeln!(out, "{qid} Q0 {} {} {:.6} {tag}", d.external_id, d.rank, d.score).unwrap();
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Parse a run file, validating six columns per line, ranks contiguous
/// from 1 within each query, non-increasing scores, and no duplicate
/// documents per query. Queries need not be grouped; entries keep file
/// order within each query.
pub fn read_run(path: &Path) -> Result<BTreeMap<String, Vec<RunEntry>>> {
    let content = read_file(path)?;
    let mut run: BTreeMap<String, Vec<RunEntry>> = BTreeMap::new();
    let mut seen: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (i, line) in content.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(invalid(
                path,
                lineno,
                format!("expected 6 columns `qid Q0 external_id rank score tag`, got {}", cols.len()),
            ));
        }
        let rank: usize = cols[3]
            .parse()
            .map_err(|_| invalid(path, lineno, format!("rank {:?} is not an integer", cols[3])))?;
        let score: f64 = cols[4]
            .parse()
            .map_err(|_| invalid(path, lineno, format!("score {:?} is not a number", cols[4])))?;
        if !score.is_finite() {
            return Err(invalid(path, lineno, format!("score {score} is not finite")));
        }
        let qid = cols[0];
        let entries = run.entry(qid.to_string()).or_default();
        if rank != entries.len() + 1 {
            return Err(invalid(
                path,
                lineno,
                format!("rank {rank} for query {qid} breaks the 1,2,... sequence (expected {})", entries.len() + 1),
            ));
        }
        if let Some(prev) = entries.last() {
            if score > prev.score {
                return Err(invalid(
                    path,
                    lineno,
                    format!("score {score} for query {qid} exceeds the preceding score {}", prev.score),
                ));
            }
        }
        if !seen.entry(qid.to_string()).or_default().insert(cols[2].to_string()) {
            return Err(invalid(
                path,
                lineno,
                format!("document {} listed twice for query {qid}", cols[2]),
            ));
        }
        entries.push(RunEntry {
            external_id: cols[2].to_string(),
            rank,
            score,
        });
    }
    Ok(run)
}

/// Reduce a parsed run to per-query document orderings.
pub fn run_rankings(run: &BTreeMap<String, Vec<RunEntry>>) -> BTreeMap<String, Vec<String>> {
    run.iter()
        .map(|(qid, entries)| {
            (qid.clone(), entries.iter().map(|e| e.external_id.clone()).collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn write_tmp(name: &str, content: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(name);
        fs::write(&path, content).unwrap();
        (dir, path)
    }

    #[test]
    fn tsv_corpus_round() {
        let (_d, path) = write_tmp("c.tsv", "d1\tthe text one\n\nd2\tsecond doc\n");
        let docs = read_corpus(&path).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0].external_id, "d1");
        assert_eq!(docs[0].text, "the text one");
        assert_eq!(docs[1].external_id, "d2");
    }

    #[test]
    fn tsv_corpus_missing_tab_reports_line() {
        let (_d, path) = write_tmp("c.tsv", "d1\tok\nbroken line\n");
        match read_corpus(&path) {
            Err(Error::InvalidFormat { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn trec_corpus_parses_docno_and_strips_tags() {
        let text = "\
<DOC>
<DOCNO> FBIS3-1 </DOCNO>
<TEXT>
Cuban exports <i>rose</i> sharply.
</TEXT>
</DOC>
<DOC>
<DOCNO>LA010189-0001</DOCNO>
Second body.
</DOC>
";
        let (_d, path) = write_tmp("c.trec", text);
        let docs = read_corpus(&path).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0].external_id, "FBIS3-1");
        assert_eq!(docs[0].text, "Cuban exports rose sharply.");
        assert_eq!(docs[1].external_id, "LA010189-0001");
        assert_eq!(docs[1].text, "Second body.");
    }

    #[test]
    fn trec_corpus_structural_errors() {
        let (_d, p1) = write_tmp("a.trec", "<DOC>\n<DOCNO>x</DOCNO>\nbody\n");
        assert!(matches!(read_corpus(&p1), Err(Error::InvalidFormat { line: 1, .. })));
        let (_d2, p2) = write_tmp("b.trec", "<DOC>\nno docno\n</DOC>\n");
        assert!(read_corpus(&p2).is_err());
        let (_d3, p3) = write_tmp("c.trec", "<DOC>\n<DOCNO>x</DOCNO>\n</DOC>\nstray\n");
        assert!(matches!(read_corpus(&p3), Err(Error::InvalidFormat { line: 4, .. })));
    }

    #[test]
    fn sgml_topics_with_labels_and_multiline_desc() {
        let text = "\
<top>
<num> Number: 301
<title> International Organized Crime
<desc> Description:
Identify organizations that participate in
international criminal activity.
<narr> Narrative:
Ignored entirely.
</top>

<top>
<num> 302
<title>
Poliomyelitis and Post-Polio
<desc> Description: Is the disease rising?
</top>
";
        let (_d, path) = write_tmp("t.sgml", text);
        let topics = read_topics(&path).unwrap();
        assert_eq!(topics.len(), 2);
        assert_eq!(topics[0].query_id, "301");
        assert_eq!(topics[0].title, "International Organized Crime");
        assert_eq!(
            topics[0].description,
            "Identify organizations that participate in international criminal activity."
        );
        assert_eq!(topics[1].query_id, "302");
        assert_eq!(topics[1].title, "Poliomyelitis and Post-Polio");
        assert_eq!(topics[1].description, "Is the disease rising?");
        assert_eq!(topics[1].text(QueryField::Desc), "Is the disease rising?");
    }

    #[test]
    fn tsv_topics_two_or_three_columns() {
        let (_d, path) = write_tmp("t.tsv", "q1\tfirst title\tfirst description\nq2\tonly title\n");
        let topics = read_topics(&path).unwrap();
        assert_eq!(topics[0].description, "first description");
        assert_eq!(topics[1].title, "only title");
        assert_eq!(topics[1].description, "");
    }

    #[test]
    fn topics_reject_duplicates_and_empty() {
        let (_d, p1) = write_tmp("t.tsv", "q1\ta\nq1\tb\n");
        assert!(matches!(read_topics(&p1), Err(Error::InvalidFormat { line: 2, .. })));
        let (_d2, p2) = write_tmp("u.tsv", "q1\t\t\n");
        assert!(read_topics(&p2).is_err());
    }

    #[test]
    fn qrels_round_trip_and_clamping() {
        let (_d, path) = write_tmp("q.txt", "q1 0 d1 2\nq1 0 d2 0\nq2 0 d1 -1\n");
        let qrels = read_qrels(&path).unwrap();
        assert_eq!(qrels.relevance("q1", "d1"), 2);
        assert_eq!(qrels.relevance("q1", "d2"), 0);
        assert_eq!(qrels.relevance("q2", "d1"), 0);
        let out = path.with_extension("out");
        write_qrels(&qrels, &out).unwrap();
        let again = read_qrels(&out).unwrap();
        assert_eq!(again.relevance("q1", "d1"), 2);
        assert_eq!(again.query_count(), 2);
    }

    #[test]
    fn qrels_format_errors() {
        let (_d, p1) = write_tmp("q.txt", "q1 0 d1\n");
        assert!(matches!(read_qrels(&p1), Err(Error::InvalidFormat { line: 1, .. })));
        let (_d2, p2) = write_tmp("r.txt", "q1 0 d1 high\n");
        assert!(read_qrels(&p2).is_err());
    }

    fn sample_run() -> BTreeMap<String, Vec<ScoredDoc>> {
        let mut run = BTreeMap::new();
        run.insert(
            "q1".to_string(),
            vec![
                ScoredDoc { doc_id: 0, external_id: "d2".into(), score: -1.25, rank: 1 },
                ScoredDoc { doc_id: 1, external_id: "d1".into(), score: -3.5, rank: 2 },
            ],
        );
        run
    }

    #[test]
    fn run_write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.txt");
        write_run(&sample_run(), "ql", &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "q1 Q0 d2 1 -1.250000 ql\nq1 Q0 d1 2 -3.500000 ql\n");
        let parsed = read_run(&path).unwrap();
        assert_eq!(parsed["q1"].len(), 2);
        assert_eq!(parsed["q1"][0].external_id, "d2");
        assert_eq!(parsed["q1"][1].rank, 2);
        assert_eq!(run_rankings(&parsed)["q1"], vec!["d2".to_string(), "d1".to_string()]);
    }

    #[test]
    fn run_validation_catches_corruption() {
        let (_d, p1) = write_tmp("a.run", "q1 Q0 d1 1 0.5 t\nq1 Q0 d2 3 0.4 t\n");
        assert!(matches!(read_run(&p1), Err(Error::InvalidFormat { line: 2, .. })));
        let (_d2, p2) = write_tmp("b.run", "q1 Q0 d1 1 0.5 t\nq1 Q0 d2 2 0.9 t\n");
        assert!(read_run(&p2).is_err());
        let (_d3, p3) = write_tmp("c.run", "q1 Q0 d1 1 0.5 t\nq1 Q0 d1 2 0.4 t\n");
        assert!(read_run(&p3).is_err());
        let (_d4, p4) = write_tmp("d.run", "q1 Q0 d1 1 0.5\n");
        assert!(read_run(&p4).is_err());
    }

    #[test]
    fn run_tag_must_be_single_token() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.txt");
        assert!(write_run(&sample_run(), "two words", &path).is_err());
        assert!(write_run(&sample_run(), "", &path).is_err());
    }

    #[test]
    fn interleaved_queries_allowed() {
        let (_d, path) = write_tmp(
            "i.run",
            "q1 Q0 d1 1 0.9 t\nq2 Q0 d9 1 0.8 t\nq1 Q0 d2 2 0.7 t\n",
        );
        let parsed = read_run(&path).unwrap();
        assert_eq!(parsed["q1"].len(), 2);
        assert_eq!(parsed["q2"].len(), 1);
    }
}
