/// Splits an identifier into lowercase word fragments.
///
/// Boundaries: any non-alphanumeric character (underscores included),
/// lowercase followed by uppercase, letter/digit transitions, and the last
/// capital of an uppercase run that is followed by lowercase
/// (`parseHTTPRequest` becomes `parse`, `http`, `request`).
pub fn split_identifier(ident: &str) -> Vec<String> {
    let chars: Vec<char> = ident.chars().collect();
    let mut out = Vec::new();
    let mut cur = String::new();
    let flush = |cur: &mut String, out: &mut Vec<String>| {
        if !cur.is_empty() {
            out.push(cur.to_lowercase());
            cur.clear();
        }
    };
    for (i, &c) in chars.iter().enumerate() {
        if !c.is_alphanumeric() {
            flush(&mut cur, &mut out);
            continue;
        }
        if let Some(&prev) = i.checked_sub(1).and_then(|j| chars.get(j)) {
            let next = chars.get(i + 1).copied();
            let boundary = (prev.is_lowercase() && c.is_uppercase())
                || (prev.is_alphabetic() && c.is_numeric())
                || (prev.is_numeric() && c.is_alphabetic())
                || (prev.is_uppercase() && c.is_uppercase() && next.is_some_and(char::is_lowercase));
            if boundary && prev.is_alphanumeric() {
                flush(&mut cur, &mut out);
            }
        }
        cur.push(c);
    }
    flush(&mut cur, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: &str) -> Vec<String> {
        split_identifier(x)
    }

    #[test]
    fn basic_forms() {
        assert_eq!(s("save_into_file"), ["save", "into", "file"]);
        assert_eq!(s("getFileName"), ["get", "file", "name"]);
        assert_eq!(s("parseHTTPRequest"), ["parse", "http", "request"]);
    }

    #[test]
    fn edge_forms() {
        assert_eq!(s("__init__"), ["init"]);
        assert_eq!(s("utf8Decode"), ["utf", "8", "decode"]);
        assert_eq!(s("HTTP"), ["http"]);
        assert_eq!(s("XMLHttpRequest2"), ["xml", "http", "request", "2"]);
        assert_eq!(s("GetX"), ["get", "x"]);
        assert_eq!(s("operator+"), ["operator"]);
        assert_eq!(s("a"), ["a"]);
        assert!(s("___").is_empty());
    }
}
