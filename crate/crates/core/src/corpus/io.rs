//! File formats: TSV collections/queries, TREC qrels, TREC run files.
//!
//! Input must be valid UTF-8; an invalid byte sequence is a parse error, not
//! a lossy replacement. Run-file scores are serialized with six decimal
//! digits and the rank column is the authoritative ordering on load.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::{Collection, Passage, Qrels, Query, QuerySet, RankedEntry, RankedList};
use crate::error::{Error, Result};

/// Reads a file line by line, yielding (1-based line number, line without
/// terminator) and rejecting invalid UTF-8 with the offending line number.
pub(crate) fn utf8_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut lines = Vec::new();
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        if buf.last() == Some(&b'\n') {
            buf.pop();
        }
        let text = std::str::from_utf8(&buf)
            .map_err(|_| Error::parse(line_no, "invalid UTF-8 sequence"))?;
        lines.push((line_no, text.to_string()));
    }
    Ok(lines)
}

fn parse_id_text_line(line_no: usize, line: &str, what: &str) -> Result<(String, String)> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 2 {
        return Err(Error::parse(
            line_no,
            format!("expected `id<TAB>text`, found {} fields", fields.len()),
        ));
    }
    if fields[0].is_empty() {
        return Err(Error::parse(line_no, format!("empty {what} id")));
    }
    Ok((fields[0].to_string(), fields[1].to_string()))
}

/// Loads a passage collection from TSV (`id<TAB>text`, one passage per line).
pub fn load_collection(path: impl AsRef<Path>) -> Result<Collection> {
    let mut passages = Vec::new();
    for (line_no, line) in utf8_lines(path.as_ref())? {
        let (id, text) = parse_id_text_line(line_no, &line, "passage")?;
        passages.push(Passage { id, text });
    }
    Collection::new(passages)
}

/// Loads a query set from TSV (`id<TAB>text`, one query per line).
pub fn load_queries(path: impl AsRef<Path>) -> Result<QuerySet> {
    let mut queries = Vec::new();
    for (line_no, line) in utf8_lines(path.as_ref())? {
        let (id, text) = parse_id_text_line(line_no, &line, "query")?;
        queries.push(Query { id, text });
    }
    QuerySet::new(queries)
}

/// Loads TREC qrels (`qid 0 pid rel`, whitespace-separated).
///
/// Graded judgments collapse to binary: `rel >= 1` is relevant, `rel <= 0`
/// lines are ignored.
pub fn load_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (line_no, line) in utf8_lines(path.as_ref())? {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                line_no,
                format!("expected 4 fields `qid 0 pid rel`, found {}", fields.len()),
            ));
        }
        let rel: i64 = fields[3]
            .parse()
            .map_err(|_| Error::parse(line_no, format!("non-integer relevance {:?}", fields[3])))?;
        if rel >= 1 {
            qrels.insert(fields[0], fields[2]);
        }
    }
    Ok(qrels)
}

/// Writes a run in TREC format: `qid Q0 pid rank score tag`, scores with six
/// decimal digits.
pub fn write_run(run: &[RankedList], tag: &str, path: impl AsRef<Path>) -> Result<()> {
    if tag.is_empty() || tag.chars().any(char::is_whitespace) {
        return Err(Error::Argument(format!(
            "run tag must be non-empty and whitespace-free, got {tag:?}"
        )));
    }
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    for list in run {
        list.validate()?;
        if list.query_id.chars().any(char::is_whitespace) {
            return Err(Error::Integrity(format!(
                "query id {:?} contains whitespace",
                list.query_id
            )));
        }
        for e in &list.entries {
            if e.passage_id.chars().any(char::is_whitespace) {
                return Err(Error::Integrity(format!(
                    "passage id {:?} contains whitespace",
                    e.passage_id
                )));
            }
            writeln!(
                out,
                "{} Q0 {} {} {:.6} {}",
                list.query_id, e.passage_id, e.rank, e.score, tag
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Loads a TREC run file, validating ranks and score ordering.
///
/// Lines of a query may appear in any order; entries are reordered by the
/// rank column and must then form a gap-free `1..=n` with non-increasing
/// scores and distinct passage ids.
pub fn load_run(path: impl AsRef<Path>) -> Result<Vec<RankedList>> {
    // Query order of the output follows first appearance in the file.
    let mut order: Vec<String> = Vec::new();
    let mut per_query: std::collections::HashMap<String, Vec<RankedEntry>> =
        std::collections::HashMap::new();
    for (line_no, line) in utf8_lines(path.as_ref())? {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::parse(
                line_no,
                format!(
                    "expected 6 fields `qid Q0 pid rank score tag`, found {}",
                    fields.len()
                ),
            ));
        }
        let rank: u32 = fields[3]
            .parse()
            .map_err(|_| Error::parse(line_no, format!("invalid rank {:?}", fields[3])))?;
        if rank == 0 {
            return Err(Error::parse(line_no, "rank must start at 1"));
        }
        let score: f64 = fields[4]
            .parse()
            .map_err(|_| Error::parse(line_no, format!("invalid score {:?}", fields[4])))?;
        let qid = fields[0].to_string();
        if !per_query.contains_key(&qid) {
            order.push(qid.clone());
        }
        per_query.entry(qid).or_default().push(RankedEntry {
            passage_id: fields[2].to_string(),
            score,
            rank,
        });
    }

    let mut run = Vec::with_capacity(order.len());
    for qid in order {
        let mut entries = per_query.remove(&qid).unwrap();
        entries.sort_by_key(|e| e.rank);
        let list = RankedList {
            query_id: qid,
            entries,
        };
        list.validate()?;
        run.push(list);
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs::read_to_string;
    use tempfile::NamedTempFile;

    fn write_temp(contents: &str) -> NamedTempFile {
        let mut f = NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn load_collection_parses_lines() {
        let f = write_temp("1\thello world\n2\tfoo\n");
        let c = load_collection(f.path()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.get("1").unwrap().text, "hello world");
    }

    #[test]
    fn load_collection_empty_file() {
        let f = write_temp("");
        let c = load_collection(f.path()).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn load_collection_duplicate_id_names_offender() {
        let f = write_temp("1\ta\n1\tb\n");
        let err = load_collection(f.path()).unwrap_err();
        assert!(err.to_string().contains("\"1\""), "{err}");
    }

    #[test]
    fn load_collection_wrong_field_count_reports_line() {
        let f = write_temp("1\ta\n2\tb\tc\n");
        match load_collection(f.path()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn load_collection_rejects_invalid_utf8() {
        let mut f = NamedTempFile::new().unwrap();
        f.write_all(b"1\tok\n2\t\xff\xfe\n").unwrap();
        f.flush().unwrap();
        match load_collection(f.path()).unwrap_err() {
            Error::Parse { line, msg } => {
                assert_eq!(line, 2);
                assert!(msg.contains("UTF-8"));
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn load_queries_allows_empty_text() {
        let f = write_temp("q1\t\n");
        let qs = load_queries(f.path()).unwrap();
        assert_eq!(qs.get("q1").unwrap().text, "");
    }

    #[test]
    fn load_qrels_basic_and_ignores_nonrelevant() {
        let f = write_temp("q1 0 d3 1\nq1 0 d4 0\nq2 0 d5 -1\n");
        let qrels = load_qrels(f.path()).unwrap();
        assert!(qrels.is_relevant("q1", "d3"));
        assert!(!qrels.is_relevant("q1", "d4"));
        assert_eq!(qrels.num_queries(), 1);
    }

    #[test]
    fn load_qrels_graded_collapses_to_binary() {
        let f = write_temp("q1 0 d3 1\nq1 0 d7 2\n");
        let qrels = load_qrels(f.path()).unwrap();
        let rel = qrels.relevant("q1").unwrap();
        assert_eq!(rel.len(), 2);
        assert!(rel.contains("d7"));
    }

    #[test]
    fn load_qrels_rejects_non_integer_rel() {
        let f = write_temp("q1 0 d3 high\n");
        assert!(matches!(
            load_qrels(f.path()).unwrap_err(),
            Error::Parse { line: 1, .. }
        ));
    }

    #[test]
    fn load_qrels_rejects_short_lines() {
        let f = write_temp("q1 0 d3\n");
        assert!(load_qrels(f.path()).is_err());
    }

    #[test]
    fn write_run_formats_lines() {
        let run = vec![RankedList::from_scored(
            "q1",
            vec![("d2".into(), 1.5), ("d9".into(), 0.3)],
        )];
        let f = NamedTempFile::new().unwrap();
        write_run(&run, "tag", f.path()).unwrap();
        let text = read_to_string(f.path()).unwrap();
        assert_eq!(text, "q1 Q0 d2 1 1.500000 tag\nq1 Q0 d9 2 0.300000 tag\n");
    }

    #[test]
    fn write_run_empty_run_empty_file() {
        let f = NamedTempFile::new().unwrap();
        write_run(&[], "t", f.path()).unwrap();
        assert_eq!(read_to_string(f.path()).unwrap(), "");
    }

    #[test]
    fn load_run_round_trips() {
        let run = vec![
            RankedList::from_scored("q1", vec![("d2".into(), 1.5), ("d9".into(), 0.25)]),
            RankedList::from_scored("q2", vec![("d1".into(), 0.125)]),
        ];
        let f = NamedTempFile::new().unwrap();
        write_run(&run, "t", f.path()).unwrap();
        let loaded = load_run(f.path()).unwrap();
        assert_eq!(loaded, run);
    }

    #[test]
    fn load_run_rejects_rank_gap() {
        let f = write_temp("q1 Q0 d1 1 2.000000 t\nq1 Q0 d2 3 1.000000 t\n");
        assert!(matches!(
            load_run(f.path()).unwrap_err(),
            Error::Integrity(_)
        ));
    }

    #[test]
    fn load_run_rejects_score_inversion() {
        let f = write_temp("q1 Q0 d1 1 1.000000 t\nq1 Q0 d2 2 2.000000 t\n");
        assert!(matches!(
            load_run(f.path()).unwrap_err(),
            Error::Integrity(_)
        ));
    }

    #[test]
    fn load_run_reorders_by_rank_column() {
        let f = write_temp("q1 Q0 d2 2 1.000000 t\nq1 Q0 d1 1 2.000000 t\n");
        let run = load_run(f.path()).unwrap();
        assert_eq!(run[0].entries[0].passage_id, "d1");
        assert_eq!(run[0].entries[1].passage_id, "d2");
    }

    #[test]
    fn write_run_rejects_whitespace_tag() {
        let run = vec![RankedList::from_scored("q1", vec![("d1".into(), 1.0)])];
        let f = NamedTempFile::new().unwrap();
        assert!(write_run(&run, "bad tag", f.path()).is_err());
    }
}
