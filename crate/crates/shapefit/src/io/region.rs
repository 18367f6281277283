//! Region index lists: one 0-based point index per line, `#` comments and
//! blank lines allowed.

use std::collections::BTreeSet;

use super::IoError;

pub fn parse_index_list(bytes: &[u8]) -> Result<BTreeSet<usize>, IoError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| IoError::Format("index list is not valid UTF-8".to_string()))?;
    let mut indices = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let index: usize = content
            .parse()
            .map_err(|_| IoError::parse(line_no, format!("invalid index {content:?}")))?;
        indices.insert(index);
    }
    Ok(indices)
}

pub fn write_index_list(indices: &BTreeSet<usize>) -> Vec<u8> {
    let mut out = String::new();
    for i in indices {
        out.push_str(&i.to_string());
        out.push('\n');
    }
    out.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_blanks_and_duplicates() {
        let text = b"# crop region\n3\n\n1\n3 # repeated\n0\n";
        let indices = parse_index_list(text).unwrap();
        assert_eq!(indices, BTreeSet::from([0, 1, 3]));
    }

    #[test]
    fn round_trips() {
        let indices = BTreeSet::from([5usize, 9, 1000]);
        let bytes = write_index_list(&indices);
        assert_eq!(parse_index_list(&bytes).unwrap(), indices);
    }

    #[test]
    fn rejects_negative_and_junk() {
        assert!(parse_index_list(b"-3\n").is_err());
        let err = parse_index_list(b"7\nxyz\n").unwrap_err();
        assert_eq!(err.to_string(), "line 2: invalid index \"xyz\"");
    }
}
