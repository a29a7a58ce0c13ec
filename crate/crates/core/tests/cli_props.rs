mod common;

use anx_core::cli::{canonicalize, format_command, parse_command};
use common::gen;
use proptest::prelude::*;

/// Independent reading of the quoting rule: whitespace splits outside
/// quotes; inside single quotes `\'` and `\\` are escapes and any other
/// backslash is literal. Returns `None` for an unterminated quote.
fn oracle_tokens(line: &str) -> Option<Vec<String>> {
    let chars: Vec<char> = line.chars().collect();
    let mut out = Vec::new();
    let mut cur: Option<String> = None;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '\'' {
            let tok = cur.get_or_insert_with(String::new);
            i += 1;
            loop {
                match chars.get(i) {
                    None => return None,
                    Some('\'') => break,
                    Some('\\') if matches!(chars.get(i + 1), Some('\'' | '\\')) => {
                        tok.push(chars[i + 1]);
                        i += 2;
                        continue;
                    }
                    Some(&ch) => tok.push(ch),
                }
                i += 1;
            }
        } else if c.is_whitespace() {
            if let Some(t) = cur.take() {
                out.push(t);
            }
        } else {
            cur.get_or_insert_with(String::new).push(c);
        }
        i += 1;
    }
    out.extend(cur);
    Some(out)
}

#[test]
fn oracle_agrees_on_examples() {
    let line = r#"anx c_8193 set_form '{"lastName":"Mingze","industry":"it"}'"#;
    assert_eq!(
        oracle_tokens(line).unwrap(),
        ["anx", "c_8193", "set_form", r#"{"lastName":"Mingze","industry":"it"}"#]
    );
    let cmd = parse_command(line).unwrap();
    assert_eq!(cmd.params, r#"{"lastName":"Mingze","industry":"it"}"#);
    assert_eq!(format_command(&cmd), line);

    let cmd = parse_command(r#"anx c_2 set_form '{"a":"x y"}'"#).unwrap();
    assert_eq!(cmd.params, r#"{"a":"x y"}"#);
    let cmd = parse_command("anx c_1 get_markup").unwrap();
    assert_eq!(cmd.params, "");
    assert_eq!(format_command(&cmd), "anx c_1 get_markup");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn parse_inverts_format(seed in any::<u64>()) {
        let cmd = gen::command(&mut gen::rng(seed));
        let line = format_command(&cmd);
        prop_assert_eq!(parse_command(&line).unwrap(), cmd);
    }

    #[test]
    fn formatted_lines_tokenize_per_rule(seed in any::<u64>()) {
        let cmd = gen::command(&mut gen::rng(seed));
        let toks = oracle_tokens(&format_command(&cmd)).unwrap();
        prop_assert_eq!(&toks[0], "anx");
        prop_assert_eq!(&toks[1], cmd.card_key.as_str());
        prop_assert_eq!(&toks[2], &cmd.action);
        prop_assert_eq!(toks[3..].join(" "), cmd.params);
    }

    #[test]
    fn canonicalize_is_idempotent(line in "anx [ck]_[0-9]{1,3} [a-z][a-z_]{0,5}( ('[^']{0,6}'|[a-z{}:\"]{1,4}))*") {
        if let Ok(c) = canonicalize(&line) {
            prop_assert_eq!(canonicalize(&c).unwrap(), c.clone());
            prop_assert_eq!(format_command(&parse_command(&line).unwrap()), c);
        }
    }

    #[test]
    fn parse_matches_oracle(line in "anx [ck]_[0-9]{1,3} [a-z][a-z_]{0,5}( [ a-z'\\\\{}]{0,12})?") {
        match (parse_command(&line), oracle_tokens(&line)) {
            (Ok(cmd), Some(toks)) => prop_assert_eq!(toks[3..].join(" "), cmd.params),
            (Err(_), None) => {}
            (Err(e), Some(toks)) => prop_assert!(toks.len() < 3, "{e} for {line:?}"),
            (Ok(cmd), None) => prop_assert!(false, "parsed {cmd:?} despite open quote"),
        }
    }

    #[test]
    fn parse_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..48)) {
        let _ = parse_command(&String::from_utf8_lossy(&bytes));
    }
}
