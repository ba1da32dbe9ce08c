use std::sync::OnceLock;

use regex::Regex;

use super::GatewayError;

pub const MAX_TOPIC_WORDS: usize = 3;

fn numbered_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*\d+\s*[.)]\s*(.*?)\s*$").expect("valid regex"))
}

fn clean_label(raw: &str) -> String {
    let mut s = raw.trim();
    loop {
        let next = s
            .trim_matches(|c: char| matches!(c, '*' | '"' | '\'' | '`' | '_'))
            .trim_end_matches(['.', ',', ';', ':'])
            .trim();
        if next == s {
            break;
        }
        s = next;
    }
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Extracts topic labels from a `"<k>. <text>"` list.
///
/// Labels longer than three words are truncated to their first three words;
/// at most `expected_n` labels are returned and never an empty one.
pub fn parse_numbered_topics(completion: &str, expected_n: usize) -> Result<Vec<String>, GatewayError> {
    if expected_n == 0 {
        return Err(GatewayError::Precondition("expected_n must be positive".into()));
    }
    let mut topics = Vec::new();
    for line in completion.lines() {
        let Some(caps) = numbered_line().captures(line) else {
            continue;
        };
        let label = clean_label(&caps[1]);
        if label.is_empty() {
            continue;
        }
        let words: Vec<&str> = label.split_whitespace().collect();
        let label = if words.len() > MAX_TOPIC_WORDS {
            let cut = words[..MAX_TOPIC_WORDS].join(" ");
            log::warn!("topic {label:?} exceeds {MAX_TOPIC_WORDS} words; truncated to {cut:?}");
            cut
        } else {
            label
        };
        topics.push(label);
        if topics.len() == expected_n {
            break;
        }
    }
    if topics.is_empty() {
        return Err(GatewayError::Parse {
            message: "no numbered topic lines found".into(),
            raw: completion.to_string(),
        });
    }
    Ok(topics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_template_output() {
        assert_eq!(
            parse_numbered_topics("1. Topic1\n2. Topic2", 2).unwrap(),
            ["Topic1", "Topic2"]
        );
    }

    #[test]
    fn no_list_is_parse_error_with_raw() {
        match parse_numbered_topics("no list here", 3) {
            Err(GatewayError::Parse { raw, .. }) => assert_eq!(raw, "no list here"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn long_topic_truncated() {
        assert_eq!(
            parse_numbered_topics("1. immigration policy reform debate", 1).unwrap(),
            ["immigration policy reform"]
        );
    }

    #[test]
    fn overproduction_clipped_underproduction_kept() {
        let text = "Here you go:\n1. a\n2. b\n3. c\n4. d";
        assert_eq!(parse_numbered_topics(text, 2).unwrap(), ["a", "b"]);
        assert_eq!(parse_numbered_topics(text, 9).unwrap().len(), 4);
    }

    #[test]
    fn tolerates_markup_and_blank_items() {
        let text = "1. **Press Freedom**\n2.   \n3) \"Media bias\".";
        assert_eq!(parse_numbered_topics(text, 3).unwrap(), ["Press Freedom", "Media bias"]);
    }

    proptest! {
        #[test]
        fn never_too_many_or_empty(text in "([0-9]{1,2}[.)] ?[a-z ]{0,30}\n){0,8}", n in 1usize..6) {
            if let Ok(topics) = parse_numbered_topics(&text, n) {
                prop_assert!(!topics.is_empty() && topics.len() <= n);
                for t in topics {
                    let wc = t.split_whitespace().count();
                    prop_assert!((1..=MAX_TOPIC_WORDS).contains(&wc));
                }
            }
        }
    }
}
