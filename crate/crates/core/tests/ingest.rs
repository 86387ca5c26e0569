use std::fs;

use longfilter::corpus::{ingest, pack, write_structured, InputFormat, Tokenizer};
use longfilter::oracle::{generate, MarkovSpec, SynthSpec};

#[test]
fn structured_directory_keeps_order_and_reports_bad_lines() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("sub")).unwrap();
    fs::write(
        dir.path().join("b.jsonl"),
        "{\"text\":\"second\"}\n\n{\"text\":\"\"}\nnot json\n{\"text\":\"third\",\"meta\":{\"k\":1}}\n",
    )
    .unwrap();
    fs::write(dir.path().join("a.jsonl"), "{\"text\":\"first\"}\n").unwrap();
    fs::write(dir.path().join("sub/c.jsonl"), "{\"text\":\"fourth\"}\n").unwrap();

    let got = ingest(dir.path(), InputFormat::Structured, "web").unwrap();
    let ids: Vec<&str> = got.documents.iter().map(|d| d.doc_id.as_str()).collect();
    assert_eq!(ids, ["a.jsonl:1", "b.jsonl:1", "b.jsonl:5", "sub/c.jsonl:1"]);
    assert_eq!(got.documents[2].meta["k"], "1");
    assert!(got.documents.iter().all(|d| d.source == "web"));
    let bad: Vec<usize> = got.skipped.iter().map(|s| s.line).collect();
    assert_eq!(bad, [3, 4]);
}

#[test]
fn lines_and_raw_files() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("t.txt");
    fs::write(&f, "one\r\n\ntwo\n").unwrap();
    let lines = ingest(&f, InputFormat::LinesOfText, "s").unwrap();
    let got: Vec<(&str, &[u8])> = lines.documents.iter().map(|d| (d.doc_id.as_str(), d.text.as_slice())).collect();
    assert_eq!(got, [("t.txt:1", &b"one"[..]), ("t.txt:3", &b"two"[..])]);

    let raw = ingest(dir.path(), InputFormat::RawFiles, "s").unwrap();
    assert_eq!(raw.documents.len(), 1);
    assert_eq!(raw.documents[0].text, b"one\r\n\ntwo\n");
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = ingest(&dir.path().join("nope"), InputFormat::Structured, "s").unwrap_err();
    assert!(err.to_string().contains("nope"));
}

#[test]
fn synthetic_corpus_round_trips_through_files() {
    let docs = generate(&SynthSpec::Markov(MarkovSpec { length: 1000, ..Default::default() }), 8, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    write_structured(fs::File::create(&path).unwrap(), &docs).unwrap();
    let back = ingest(&path, InputFormat::Structured, "synth").unwrap();
    assert!(back.skipped.is_empty());
    assert_eq!(back.documents.len(), 5);
    for (a, b) in docs.iter().zip(&back.documents) {
        assert_eq!(a.text, b.text);
        assert_eq!(a.meta, b.meta);
    }
    let toks: Vec<_> = back.documents.iter().map(|d| Tokenizer::Byte.tokenize(d).unwrap()).collect();
    let seqs = pack(&toks, 1024).unwrap();
    assert_eq!(seqs.len(), 4);
    assert_eq!(seqs[0].spans.len(), 2);
}
