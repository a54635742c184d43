use std::path::Path;

use s2dm::data::{format_conllu, load_conllu, parse_conllu, ConlluSentence, ParseTree};
use s2dm::Error;

fn fixture() -> Vec<ConlluSentence> {
    load_conllu(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/small.conllu")).unwrap()
}

fn line(text: &str) -> usize {
    match parse_conllu(text, Path::new("bad.conllu")) {
        Err(Error::Parse { line, .. }) => line,
        other => panic!("expected a parse error, got {other:?}"),
    }
}

fn row(id: &str, form: &str, upos: &str, head: &str) -> String {
    format!("{id}\t{form}\t_\t{upos}\t_\t_\t{head}\tdep\t_\t_\n")
}

#[test]
fn loads_hand_built_fixture() {
    let s = fixture();
    assert_eq!(s.len(), 2);
    assert_eq!(s[0].tokens, ["the", "dog", "does", "not", "bark"]);
    assert_eq!(s[0].heads, [2, 5, 5, 5, 0]);
    assert_eq!(s[0].meta("sent_id"), Some("a1"));
    assert_eq!(s[1].tokens, ["cats", "sleep", "."]);
    assert_eq!(s[1].heads, [2, 0, 2]);
    assert_eq!(
        ParseTree::from_heads(&s[0].heads).unwrap().depths(),
        &[2, 1, 1, 1, 0]
    );
}

#[test]
fn multiword_ranges_and_empty_nodes_are_skipped() {
    let s = fixture();
    assert!(s
        .iter()
        .flat_map(|x| &x.tokens)
        .all(|t| t != "doesn't" && t != "soundly"));
}

#[test]
fn round_trips_through_the_writer() {
    let s = fixture();
    let again = parse_conllu(&format_conllu(&s), Path::new("again.conllu")).unwrap();
    assert_eq!(again, s);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.conllu");
    s2dm::data::write_conllu(&path, &s).unwrap();
    assert_eq!(load_conllu(&path).unwrap(), s);
}

#[test]
fn malformed_heads_report_their_line() {
    let header = "# sent_id = x\n";
    let text = format!(
        "{header}{}{}",
        row("1", "a", "NOUN", "two"),
        row("2", "b", "VERB", "0")
    );
    assert_eq!(line(&text), 2);
    let text = format!(
        "{header}{}{}{}",
        row("1", "a", "NOUN", "2"),
        row("2", "b", "VERB", "0"),
        row("3", "c", "ADV", "7")
    );
    assert_eq!(line(&text), 4);
    let text = format!(
        "{header}{}{}",
        row("1", "a", "NOUN", "1"),
        row("2", "b", "VERB", "0")
    );
    assert_eq!(line(&text), 2);
    let text = format!(
        "{header}{}{}",
        row("1", "a", "NOUN", "0"),
        row("2", "b", "VERB", "0")
    );
    assert_eq!(line(&text), 3);
    let text = format!(
        "{header}{}{}",
        row("1", "a", "NOUN", "-1"),
        row("2", "b", "VERB", "0")
    );
    assert_eq!(line(&text), 2);
}

#[test]
fn cycles_and_rootless_sentences_are_rejected() {
    let ok = format!("{}\n", row("1", "x", "X", "0"));
    let cyc = format!(
        "{}{}{}{}",
        row("1", "a", "NOUN", "2"),
        row("2", "b", "NOUN", "1"),
        row("3", "c", "VERB", "0"),
        "\n"
    );
    assert_eq!(line(&format!("{ok}{cyc}")), 3);
    let rootless = format!(
        "{}{}",
        row("1", "a", "NOUN", "2"),
        row("2", "b", "NOUN", "1")
    );
    assert_eq!(line(&rootless), 1);
}

#[test]
fn other_malformed_columns_are_rejected() {
    assert_eq!(line("1\tonly\tthree\n"), 1);
    assert_eq!(
        line(&format!(
            "{}{}",
            row("1", "a", "NOUN", "0"),
            row("3", "b", "NOUN", "1")
        )),
        2
    );
    assert_eq!(line(&row("1", "a", "NOTATAG", "0")), 1);
}
