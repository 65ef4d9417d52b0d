//! Corpus text format.
//!
//! ```text
//! #durcorpus v1 style=<read|spont> vocab=<V> seed=<s>
//! #split <train|valid>
//! #spec <json>
//! <id>\t<token ids>\t<durations>
//! ```
//!
//! The `#split` and `#spec` lines are optional; without `#spec` the default
//! spec of the header style is assumed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::corpus::{check_sentence, DurationCorpus, Sentence, Split};
use super::spec::{CorpusSpec, Style};
use crate::encoder::PhoneSequence;
use crate::error::{Error, Result};

pub fn to_text(corpus: &DurationCorpus) -> String {
    let spec = &corpus.spec;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "#durcorpus v1 style={} vocab={} seed={}",
        spec.style,
        spec.vocab().size(),
        spec.seed
    );
    let _ = writeln!(out, "#split {}", corpus.split);
    let _ = writeln!(
        out,
        "#spec {}",
        serde_json::to_string(spec).expect("spec serialises")
    );
    for s in &corpus.sentences {
        let join = |xs: &mut dyn Iterator<Item = String>| xs.collect::<Vec<_>>().join(" ");
        let _ = writeln!(
            out,
            "{}\t{}\t{}",
            s.id,
            join(&mut s.phones.ids().iter().map(|x| x.to_string())),
            join(&mut s.durations.iter().map(|x| x.to_string()))
        );
    }
    out
}

pub fn save(corpus: &DurationCorpus, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_text(corpus))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<DurationCorpus> {
    let path = path.as_ref();
    parse(&fs::read_to_string(path)?, path)
}

pub fn parse(text: &str, path: &Path) -> Result<DurationCorpus> {
    let err = |line: usize, msg: String| Error::Parse {
        path: PathBuf::from(path),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).peekable();

    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some("#durcorpus") || fields.next() != Some("v1") {
        return Err(err(1, format!("expected `#durcorpus v1` header, found `{header}`")));
    }
    let (mut style, mut vocab, mut seed) = (None, None, None);
    for f in fields {
        let (k, v) = f
            .split_once('=')
            .ok_or_else(|| err(1, format!("malformed header field `{f}`")))?;
        match k {
            "style" => style = Some(v.parse::<Style>().map_err(|e| err(1, e.to_string()))?),
            "vocab" => vocab = Some(v.parse::<usize>().map_err(|e| err(1, format!("vocab: {e}")))?),
            "seed" => seed = Some(v.parse::<u64>().map_err(|e| err(1, format!("seed: {e}")))?),
            _ => return Err(err(1, format!("unknown header field `{k}`"))),
        }
    }
    let (style, vocab, seed) = match (style, vocab, seed) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(err(1, "header needs style, vocab and seed".into())),
    };

    let mut split = Split::Train;
    let mut spec: Option<CorpusSpec> = None;
    while let Some(&(n, line)) = lines.peek() {
        if let Some(rest) = line.strip_prefix("#split ") {
            split = Split::parse(rest.trim()).ok_or_else(|| err(n, format!("unknown split `{rest}`")))?;
        } else if let Some(rest) = line.strip_prefix("#spec ") {
            spec = Some(serde_json::from_str(rest).map_err(|e| err(n, format!("bad spec: {e}")))?);
        } else if !line.starts_with('#') {
            break;
        }
        lines.next();
    }
    let spec = spec.unwrap_or_else(|| CorpusSpec::default_for(style, seed));
    if spec.style != style || spec.vocab().size() != vocab || spec.seed != seed {
        return Err(err(
            1,
            format!(
                "header (style={style} vocab={vocab} seed={seed}) disagrees with spec (style={} vocab={} seed={})",
                spec.style,
                spec.vocab().size(),
                spec.seed
            ),
        ));
    }
    spec.validate().map_err(|e| err(1, e.to_string()))?;

    let v = spec.vocab();
    let mut sentences = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(err(n, format!("expected 3 tab-separated fields, found {}", cols.len())));
        }
        let ids: Vec<usize> = cols[1]
            .split_whitespace()
            .map(|x| x.parse().map_err(|e| err(n, format!("bad token `{x}`: {e}"))))
            .collect::<Result<_>>()?;
        let durations: Vec<u32> = cols[2]
            .split_whitespace()
            .map(|x| x.parse().map_err(|e| err(n, format!("bad duration `{x}`: {e}"))))
            .collect::<Result<_>>()?;
        if ids.len() != durations.len() {
            return Err(err(
                n,
                format!("{} tokens but {} durations", ids.len(), durations.len()),
            ));
        }
        let phones = PhoneSequence::from_interleaved(ids, &v).map_err(|e| err(n, e.to_string()))?;
        let sentence = Sentence {
            id: cols[0].to_string(),
            phones,
            durations,
        };
        check_sentence(&spec, &sentence).map_err(|e| err(n, e.to_string()))?;
        sentences.push(sentence);
    }
    Ok(DurationCorpus { spec, split, sentences })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::corpus::generate;

    #[test]
    fn round_trip() {
        let mut spec = CorpusSpec::spontaneous_default(4);
        spec.num_sentences = 30;
        let pair = generate(&spec).unwrap();
        for c in [&pair.train, &pair.validation] {
            let back = parse(&to_text(c), Path::new("mem")).unwrap();
            assert_eq!(&back, c);
        }
    }

    #[test]
    fn hand_written_fixture() {
        // read default: 20 phones, blank = 20, vocab 23
        let text = "#durcorpus v1 style=read vocab=23 seed=0\n\
                    a\t3 20 7 20\t4 0 6 1\n\
                    b\t19 20\t12 2\n";
        let c = parse(text, Path::new("fixture")).unwrap();
        assert_eq!(c.sentences.len(), 2);
        assert_eq!(c.sentences[0].id, "a");
        assert_eq!(c.sentences[0].phones.ids(), &[3, 20, 7, 20]);
        assert_eq!(c.sentences[0].durations, vec![4, 0, 6, 1]);
        assert_eq!(c.sentences[1].phones.ids(), &[19, 20]);
        assert_eq!(c.sentences[1].durations, vec![12, 2]);
        assert_eq!(c.split, Split::Train);
    }

    #[test]
    fn truncated_file_names_line() {
        let mut spec = CorpusSpec::read_default(4);
        spec.num_sentences = 3;
        let text = to_text(&generate(&spec).unwrap().train);
        // cut in the middle of the last sentence's duration field
        let cut = &text[..text.trim_end().rfind(' ').unwrap()];
        let e = parse(cut, Path::new("t.dur")).unwrap_err().to_string();
        assert!(e.starts_with("t.dur:6:"), "{e}");
    }

    #[test]
    fn malformed_records() {
        let head = "#durcorpus v1 style=read vocab=23 seed=0\n";
        for (body, line) in [
            ("a\t3 20\t4\n", 2),
            ("a\t3 20\t4 x\n", 2),
            ("a\t3 20 4 20\t4 0 0 1\n", 2),
            ("ok\t1 20\t1 1\na\t3 3\t4 1\n", 3),
            ("a\t3 20\n", 2),
        ] {
            let e = parse(&format!("{head}{body}"), Path::new("m")).unwrap_err().to_string();
            assert!(e.starts_with(&format!("m:{line}:")), "{body:?} -> {e}");
        }
        assert!(parse("#durcorpus v2\n", Path::new("m")).is_err());
        assert!(parse("#durcorpus v1 style=read vocab=99 seed=0\n", Path::new("m")).is_err());
    }
}
