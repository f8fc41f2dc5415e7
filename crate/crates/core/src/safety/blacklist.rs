//! Domain blacklist with label-boundary suffix matching.

use std::collections::HashSet;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum BlacklistError {
    #[error("cannot read blacklist: {0}")]
    Io(#[from] std::io::Error),
    #[error("blacklist line {line}: {entry:?} is not a bare domain")]
    BadEntry { line: usize, entry: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DomainBlacklist {
    domains: HashSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlacklistDecision {
    Keep,
    /// The URL had no parseable host; kept and flagged.
    NoDomain,
    Drop { matched: String },
}

/// Lowercased host of `url`, without a trailing dot.
pub fn host_of(url: &str) -> Option<String> {
    let parsed = url::Url::parse(url.trim()).ok()?;
    let host = parsed.host_str()?.trim_end_matches('.').to_ascii_lowercase();
    (!host.is_empty()).then_some(host)
}

impl DomainBlacklist {
    pub fn new<I, S>(domains: I) -> Result<Self, BlacklistError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut bl = DomainBlacklist::default();
        for (i, d) in domains.into_iter().enumerate() {
            bl.insert(d.as_ref(), i + 1)?;
        }
        Ok(bl)
    }

    fn insert(&mut self, entry: &str, line: usize) -> Result<(), BlacklistError> {
        let d = entry.trim().trim_end_matches('.').to_ascii_lowercase();
        let valid = !d.is_empty()
            && !d.starts_with('.')
            && !d.contains("..")
            && d.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '.');
        if !valid {
            return Err(BlacklistError::BadEntry { line, entry: entry.to_owned() });
        }
        self.domains.insert(d);
        Ok(())
    }

    /// One domain per line; `#` starts a comment.
    pub fn parse(src: &str) -> Result<Self, BlacklistError> {
        let mut bl = DomainBlacklist::default();
        for (i, line) in src.lines().enumerate() {
            let entry = line.split('#').next().unwrap_or("").trim();
            if !entry.is_empty() {
                bl.insert(entry, i + 1)?;
            }
        }
        Ok(bl)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BlacklistError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    /// The blacklist entry that `host` equals or is a subdomain of.
    pub fn matching_entry(&self, host: &str) -> Option<&str> {
        let host = host.to_ascii_lowercase();
        let mut rest = host.as_str();
        loop {
            if let Some(d) = self.domains.get(rest) {
                return Some(d.as_str());
            }
            {
                let i = rest.find('.')?;
                rest = &rest[i + 1..]
            }
        }
    }

    pub fn check_url(&self, url: &str) -> BlacklistDecision {
        match host_of(url) {
            None => BlacklistDecision::NoDomain,
            Some(host) => match self.matching_entry(&host) {
                Some(d) => BlacklistDecision::Drop { matched: d.to_owned() },
                None => BlacklistDecision::Keep,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bl() -> DomainBlacklist {
        DomainBlacklist::parse("# harmful sites\nbad.example\n\nCasino.Test  # mixed case\n").unwrap()
    }

    #[test]
    fn exact_and_subdomain_match() {
        let b = bl();
        assert_eq!(b.check_url("https://bad.example/x"), BlacklistDecision::Drop { matched: "bad.example".into() });
        assert_eq!(b.check_url("https://sub.bad.example/x"), BlacklistDecision::Drop { matched: "bad.example".into() });
        assert_eq!(b.check_url("http://WWW.CASINO.TEST:8080/"), BlacklistDecision::Drop { matched: "casino.test".into() });
    }

    #[test]
    fn label_boundary_only() {
        let b = bl();
        assert_eq!(b.check_url("https://notbad.example/x"), BlacklistDecision::Keep);
        assert_eq!(b.check_url("https://bad.example.org/x"), BlacklistDecision::Keep);
        assert_eq!(b.check_url("https://example/x"), BlacklistDecision::Keep);
    }

    #[test]
    fn unparseable_urls_are_flagged() {
        let b = bl();
        assert_eq!(b.check_url("not a url"), BlacklistDecision::NoDomain);
        assert_eq!(b.check_url(""), BlacklistDecision::NoDomain);
    }

    #[test]
    fn entries_must_be_bare_domains() {
        assert!(matches!(DomainBlacklist::parse("ok.example\nhttps://x.example/"), Err(BlacklistError::BadEntry { line: 2, .. })));
        assert!(matches!(DomainBlacklist::parse("a.example/path"), Err(BlacklistError::BadEntry { .. })));
        assert_eq!(bl().len(), 2);
    }
}
