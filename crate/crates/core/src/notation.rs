//! Tiny parser for the `name(arg, arg, ...)` strings used in configuration.

pub(crate) fn parse_call(s: &str) -> Option<(&str, Vec<&str>)> {
    let s = s.trim();
    match s.find('(') {
        None => {
            if s.is_empty() || !s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                None
            } else {
                Some((s, Vec::new()))
            }
        }
        Some(open) => {
            let inner = s[open + 1..].strip_suffix(')')?;
            let name = s[..open].trim();
            let args = if inner.trim().is_empty() {
                Vec::new()
            } else {
                inner.split(',').map(str::trim).collect()
            };
            Some((name, args))
        }
    }
}

pub(crate) fn parse_f64(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}
