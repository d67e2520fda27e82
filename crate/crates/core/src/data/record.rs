use std::fmt;

use serde::{Deserialize, Serialize};

use super::activation::Scope;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Separator between the response id and the position tag in a sample id.
///
/// `resp-0042#body-7` and `resp-0042#eos` belong to the same response and are
/// always assigned to the same split.
pub const POSITION_SEPARATOR: char = '#';

/// Metadata for one activation row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub task: String,
    pub requested_option: String,
    /// 1 = Success, 0 = Failure. Ignored for null-task rows.
    pub label: u8,
    #[serde(default)]
    pub split: Option<Split>,
    /// Negative for connector slots, `0..response_length` for body tokens,
    /// `response_length` for the end-of-turn token.
    pub token_index: i64,
    pub response_length: u32,
    #[serde(default)]
    pub is_null_task: bool,
}

impl SampleRecord {
    /// The response this row belongs to: the sample id up to the first `#`.
    pub fn response_key(&self) -> &str {
        self.sample_id
            .split(POSITION_SEPARATOR)
            .next()
            .unwrap_or(&self.sample_id)
    }

    /// Checks the position fields against the scope the row was extracted at.
    pub fn check_position(&self, scope: Scope) -> Result<(), String> {
        if self.response_length == 0 {
            return Err(format!("{}: response_length must be >= 1", self.sample_id));
        }
        let len = self.response_length as i64;
        let ok = match scope {
            Scope::Connector => self.token_index < 0,
            Scope::Body => (0..len).contains(&self.token_index),
            Scope::Eos => self.token_index == len,
        };
        if ok {
            Ok(())
        } else {
            Err(format!(
                "{}: token_index {} is not a {scope} position for response_length {}",
                self.sample_id, self.token_index, self.response_length
            ))
        }
    }

    /// The scope implied by the position fields alone.
    pub fn implied_scope(&self) -> Option<Scope> {
        let len = self.response_length as i64;
        match self.token_index {
            i if i < 0 => Some(Scope::Connector),
            i if i < len => Some(Scope::Body),
            i if i == len => Some(Scope::Eos),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, idx: i64, len: u32) -> SampleRecord {
        SampleRecord {
            sample_id: id.into(),
            task: "t".into(),
            requested_option: "o".into(),
            label: 1,
            split: None,
            token_index: idx,
            response_length: len,
            is_null_task: false,
        }
    }

    #[test]
    fn response_key_strips_position() {
        assert_eq!(rec("r12#body-3", 3, 10).response_key(), "r12");
        assert_eq!(rec("r12", 3, 10).response_key(), "r12");
    }

    #[test]
    fn position_checks_per_scope() {
        assert!(rec("a", -2, 5).check_position(Scope::Connector).is_ok());
        assert!(rec("a", 0, 5).check_position(Scope::Connector).is_err());
        assert!(rec("a", 4, 5).check_position(Scope::Body).is_ok());
        assert!(rec("a", 5, 5).check_position(Scope::Body).is_err());
        assert!(rec("a", 5, 5).check_position(Scope::Eos).is_ok());
        assert!(rec("a", 6, 5).implied_scope().is_none());
    }

    #[test]
    fn split_defaults_to_unassigned() {
        let json = r#"{"sample_id":"a","task":"t","requested_option":"o","label":0,
                       "token_index":0,"response_length":1}"#;
        let r: SampleRecord = serde_json::from_str(json).unwrap();
        assert_eq!(r.split, None);
        assert!(!r.is_null_task);
    }
}
