//! `key=value` training configuration files. Blank lines and lines starting
//! with `#` are ignored; unknown keys are rejected.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use tabletext::train::TrainConfig;
use tabletext::{Error, Result};

pub fn load(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text)
}

fn value<T: FromStr>(key: &str, raw: &str, line: usize) -> Result<T> {
    raw.parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid value {raw:?} for {key}"),
    })
}

pub fn parse(text: &str) -> Result<TrainConfig> {
    let mut c = TrainConfig::default();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, raw) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: n,
            message: "expected key=value".into(),
        })?;
        let (key, raw) = (key.trim(), raw.trim());
        let flags = &mut c.model.flags;
        match key {
            "word_dim" => c.model.word_dim = value(key, raw, n)?,
            "attr_dim" => c.model.attr_dim = value(key, raw, n)?,
            "hidden_dim" => c.model.hidden_dim = value(key, raw, n)?,
            "init_std" => c.model.init_std = value(key, raw, n)?,
            "copy" => flags.copy = value(key, raw, n)?,
            "global" => flags.global = value(key, raw, n)?,
            "local" => flags.local = value(key, raw, n)?,
            "caption" => flags.caption = value(key, raw, n)?,
            "plusplus" => flags.plusplus = value(key, raw, n)?,
            "attention" => flags.attention = value(key, raw, n)?,
            "vocab_limit" => c.vocab_limit = value(key, raw, n)?,
            "batch_size" => c.batch_size = value(key, raw, n)?,
            "max_epochs" => c.max_epochs = value(key, raw, n)?,
            "rho" => c.rho = value(key, raw, n)?,
            "eps" => c.eps = value(key, raw, n)?,
            "clip_norm" => c.clip_norm = value(key, raw, n)?,
            "patience" => c.patience = value(key, raw, n)?,
            "beam" => c.beam = value(key, raw, n)?,
            "max_decode_len" => c.max_decode_len = value(key, raw, n)?,
            "seed" => c.seed = value(key, raw, n)?,
            _ => {
                return Err(Error::Parse {
                    line: n,
                    message: format!("unknown key {key:?}"),
                })
            }
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_override_defaults() {
        let c = parse("# dims\nword_dim = 16\ncopy=false\n\nseed=9\n").unwrap();
        assert_eq!(c.model.word_dim, 16);
        assert!(!c.model.flags.copy);
        assert_eq!(c.seed, 9);
        assert_eq!(c.max_epochs, TrainConfig::default().max_epochs);
    }

    #[test]
    fn bad_lines_name_their_line() {
        for text in ["seed=1\nnonsense", "seed=1\nwidth=3", "seed=1\nseed=abc"] {
            match parse(text) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }
}
